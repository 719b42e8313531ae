//! 8-bit PNG images and CSV traces.

use std::path::Path;

use image::{DynamicImage, GrayImage, RgbImage};

use crate::error::{Error, Result};
use crate::restore::TraceRecord;
use crate::tensor::{Scalar, Tensor};

/// Loads an 8-bit grayscale or RGB PNG as a `1 x C x H x W` image in
/// `[0, 1]`.
pub fn load_image<T: Scalar>(path: impl AsRef<Path>) -> Result<Tensor<T>> {
    let path = path.as_ref();
    let img = image::ImageReader::open(path)?.with_guessed_format()?.decode()?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let to_unit = |v: u8| T::from_f64_lossy(v as f64 / 255.0);
    match img {
        DynamicImage::ImageLuma8(g) => Tensor::from_vec([1, 1, h, w], g.into_raw().into_iter().map(to_unit).collect()),
        DynamicImage::ImageRgb8(rgb) => {
            let raw = rgb.into_raw();
            Ok(Tensor::from_fn([1, 3, h, w], |[_, c, y, x]| to_unit(raw[(y * w + x) * 3 + c])))
        }
        other => Err(Error::Format(format!(
            "{}: expected 8-bit grayscale or RGB, found {:?}",
            path.display(),
            other.color()
        ))),
    }
}

fn quantize<T: Scalar>(v: T) -> u8 {
    // Round half up after clamping.
    (v.to_f64_lossy().clamp(0.0, 1.0) * 255.0 + 0.5).floor() as u8
}

/// Writes a 1- or 3-channel image as an 8-bit PNG.
pub fn save_image<T: Scalar>(image: &Tensor<T>, path: impl AsRef<Path>) -> Result<()> {
    let [b, c, h, w] = image.shape().dims();
    if b != 1 {
        return Err(Error::shape("save_image", format!("expected one image, got {}", image.shape())));
    }
    let (wu, hu) = (w as u32, h as u32);
    let dynamic = match c {
        1 => DynamicImage::ImageLuma8(
            GrayImage::from_raw(wu, hu, image.data().iter().map(|&v| quantize(v)).collect())
                .expect("buffer matches dimensions"),
        ),
        3 => {
            let raw = (0..h * w)
                .flat_map(|i| (0..3).map(move |ch| (ch, i)))
                .map(|(ch, i)| quantize(image.plane(0, ch)[i]))
                .collect();
            DynamicImage::ImageRgb8(RgbImage::from_raw(wu, hu, raw).expect("buffer matches dimensions"))
        }
        _ => {
            return Err(Error::shape(
                "save_image",
                format!("expected 1 or 3 channels, got {c}"),
            ))
        }
    };
    dynamic.save_with_format(path, image::ImageFormat::Png)?;
    Ok(())
}

/// Decimal rendering with 6 significant digits and no exponent.
pub fn format_sig6(v: f64) -> String {
    if v.is_nan() {
        return "NaN".into();
    }
    if v.is_infinite() {
        return if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if v == 0.0 {
        return "0".into();
    }
    let magnitude = v.abs().log10().floor() as i32;
    let decimals = (5 - magnitude).max(0) as usize;
    let s = format!("{v:.decimals$}");
    // Rounding can carry into a new digit (9.999995 -> 10.00000).
    let digits = s.chars().filter(char::is_ascii_digit).skip_while(|&c| c == '0').count();
    if digits > 6 && decimals > 0 {
        let d = decimals - 1;
        return format!("{v:.d$}");
    }
    s
}

fn header(bands: usize) -> Vec<String> {
    ["iteration", "loss", "psnr", "r_ratio"]
        .iter()
        .map(|s| s.to_string())
        .chain((1..=bands).map(|i| format!("fbc_{i}")))
        .collect()
}

/// Writes `iteration,loss,psnr,r_ratio,fbc_1..fbc_N`. Missing PSNR is an
/// empty cell, an empty band is `NaN`. Rows must have strictly increasing
/// iterations and the same band count.
pub fn write_trace_csv(records: &[TraceRecord], path: impl AsRef<Path>) -> Result<()> {
    let first = records
        .first()
        .ok_or_else(|| Error::Trace("no trace rows to write".into()))?;
    let bands = first.fbc.len();
    for pair in records.windows(2) {
        if pair[1].iteration <= pair[0].iteration {
            return Err(Error::Trace(format!(
                "iterations must increase strictly, found {} after {}",
                pair[1].iteration, pair[0].iteration
            )));
        }
    }
    if let Some(r) = records.iter().find(|r| r.fbc.len() != bands) {
        return Err(Error::Trace(format!(
            "row {} has {} bands, expected {bands}",
            r.iteration,
            r.fbc.len()
        )));
    }
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_path(path)?;
    w.write_record(header(bands))?;
    for r in records {
        let mut row = vec![
            r.iteration.to_string(),
            format_sig6(r.loss),
            r.psnr.map(format_sig6).unwrap_or_default(),
            format_sig6(r.r_ratio),
        ];
        row.extend(r.fbc.iter().map(|v| format_sig6(v.unwrap_or(f64::NAN))));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a file written by [`write_trace_csv`].
pub fn read_trace_csv(path: impl AsRef<Path>) -> Result<Vec<TraceRecord>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let head = rdr.headers()?.clone();
    let bands = head.len().saturating_sub(4);
    if head.iter().collect::<Vec<_>>() != header(bands) {
        return Err(Error::Trace(format!("unexpected header {head:?}")));
    }
    let num = |s: &str| -> Result<f64> {
        s.parse::<f64>()
            .map_err(|e| Error::Trace(format!("bad number {s:?}: {e}")))
    };
    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row?;
        let iteration = row[0]
            .parse()
            .map_err(|e| Error::Trace(format!("bad iteration {:?}: {e}", &row[0])))?;
        let psnr = if row[2].is_empty() { None } else { Some(num(&row[2])?) };
        let fbc = (4..4 + bands)
            .map(|i| num(&row[i]).map(|v| (!v.is_nan()).then_some(v)))
            .collect::<Result<_>>()?;
        out.push(TraceRecord {
            iteration,
            loss: num(&row[1])?,
            psnr,
            r_ratio: num(&row[3])?,
            fbc,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sig6_formatting() {
        assert_eq!(format_sig6(0.0), "0");
        assert_eq!(format_sig6(1.0), "1.00000");
        assert_eq!(format_sig6(31.04), "31.0400");
        assert_eq!(format_sig6(0.000123456789), "0.000123457");
        assert_eq!(format_sig6(-2.5), "-2.50000");
        assert_eq!(format_sig6(9.999996), "10.0000");
        assert_eq!(format_sig6(1234567.0), "1234567");
        assert_eq!(format_sig6(f64::NAN), "NaN");
    }

    #[test]
    fn quantization_rounds_half_up() {
        assert_eq!(quantize(0.5f64), 128);
        assert_eq!(quantize(1.2f64), 255);
        assert_eq!(quantize(-0.1f64), 0);
    }
}
