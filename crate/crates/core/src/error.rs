use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite gradient for parameter {param} at optimizer step {step}")]
    NonFiniteGradient { param: usize, step: u64 },

    #[error("optimization diverged at iteration {iteration}: loss is {loss}")]
    Diverged {
        iteration: usize,
        loss: f64,
        last_finite: Option<Box<crate::restore::TraceRecord>>,
    },

    #[error("image format: {0}")]
    Format(String),

    #[error("trace: {0}")]
    Trace(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }
}
