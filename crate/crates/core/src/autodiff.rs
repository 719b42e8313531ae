//! Reverse-mode differentiation over eagerly evaluated operations.
//!
//! A [`Graph`] records every operation as it is evaluated. [`Graph::backward`]
//! walks the record in reverse and applies one hand-written backward rule per
//! operation. Only the operations the generators need are supported.

use crate::error::{Error, Result};
use crate::ops::conv::{conv2d_backward, conv2d_forward, ConvGeometry};
use crate::ops::filter::{zero_insert, Kernel2d, ResamplePlan};
use crate::tensor::{Scalar, Tensor};

/// Handle to a value recorded in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op<T> {
    Leaf,
    Conv2d {
        input: Var,
        weight: Var,
        bias: Option<Var>,
        cols: Vec<T>,
        geometry: ConvGeometry,
    },
    LeakyRelu {
        input: Var,
        slope: T,
    },
    Resample {
        input: Var,
        plan: ResamplePlan,
    },
    ZeroInsert {
        input: Var,
        factor: usize,
    },
    CenterScaleBias {
        input: Var,
        bias: Var,
        scale: T,
    },
    Sigmoid {
        input: Var,
    },
    Mse {
        input: Var,
        target: Tensor<T>,
        weights: Option<Tensor<T>>,
        count: T,
    },
    Dot {
        input: Var,
        weights: Tensor<T>,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

#[derive(Default)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

/// Gradients of a scalar with respect to every recorded value that needed one.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

fn accumulate<T: Scalar>(slot: &mut Option<Tensor<T>>, g: Tensor<T>) {
    match slot {
        Some(acc) => acc
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .for_each(|(a, &b)| *a += b),
        None => *slot = Some(g),
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Records an input. Gradients are produced for it iff
    /// `tensor.requires_grad()`.
    pub fn leaf(&mut self, tensor: Tensor<T>) -> Var {
        let needs = tensor.requires_grad();
        self.push(tensor, Op::Leaf, needs)
    }

    /// Records a trainable input regardless of its `requires_grad` flag.
    pub fn param(&mut self, tensor: Tensor<T>) -> Var {
        self.push(tensor.with_requires_grad(true), Op::Leaf, true)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn conv2d(
        &mut self,
        input: Var,
        weight: Var,
        bias: Option<Var>,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        let (out, cols, geometry) = conv2d_forward(
            self.value(input),
            self.value(weight),
            bias.map(|b| self.value(b)),
            stride,
            padding,
        )?;
        let needs = self.needs(input) || self.needs(weight) || bias.is_some_and(|b| self.needs(b));
        Ok(self.push(
            out,
            Op::Conv2d {
                input,
                weight,
                bias,
                cols,
                geometry,
            },
            needs,
        ))
    }

    /// `max(x, slope * x)`; the derivative at exactly zero is `slope`.
    pub fn leaky_relu(&mut self, input: Var, slope: T) -> Var {
        let out = crate::ops::leaky_relu(self.value(input), slope);
        let needs = self.needs(input);
        self.push(out, Op::LeakyRelu { input, slope }, needs)
    }

    /// Depthwise reflect-padded correlation with a constant filter.
    pub fn fixed_filter(&mut self, input: Var, kernel: &Kernel2d, stride: usize) -> Result<Var> {
        let s = self.value(input).shape();
        let plan = ResamplePlan::new(kernel, s.height, s.width, 1, stride)?;
        self.resample(input, plan)
    }

    /// Zero insertion by `factor` followed by reflect-padded filtering, fused.
    pub fn upsample_filter(&mut self, input: Var, kernel: &Kernel2d, factor: usize) -> Result<Var> {
        let s = self.value(input).shape();
        let plan = ResamplePlan::new(kernel, s.height, s.width, factor, 1)?;
        self.resample(input, plan)
    }

    pub fn resample(&mut self, input: Var, plan: ResamplePlan) -> Result<Var> {
        let out = plan.forward(self.value(input))?;
        let needs = self.needs(input);
        Ok(self.push(out, Op::Resample { input, plan }, needs))
    }

    pub fn zero_insert(&mut self, input: Var, factor: usize) -> Result<Var> {
        let out = zero_insert(self.value(input), factor)?;
        let needs = self.needs(input);
        Ok(self.push(out, Op::ZeroInsert { input, factor }, needs))
    }

    /// `scale * x - mean_c(scale * x) + bias_c`, where the mean runs over the
    /// batch and spatial positions of channel `c`. `scale` is a constant.
    pub fn center_scale_bias(&mut self, input: Var, bias: Var, scale: T) -> Result<Var> {
        let x = self.value(input);
        let s = x.shape();
        let b = self.value(bias);
        if b.len() != s.channels {
            return Err(Error::shape(
                "center_scale_bias",
                format!("bias has {} entries for {} channels", b.len(), s.channels),
            ));
        }
        let count = T::from_usize(s.batch * s.plane()).unwrap();
        let mut out = x.scale(scale);
        for c in 0..s.channels {
            let mean = (0..s.batch).map(|n| out.plane(n, c).iter().copied().sum::<T>()).sum::<T>() / count;
            let shift = b.data()[c] - mean;
            for n in 0..s.batch {
                out.plane_mut(n, c).iter_mut().for_each(|v| *v += shift);
            }
        }
        let needs = self.needs(input) || self.needs(bias);
        Ok(self.push(out, Op::CenterScaleBias { input, bias, scale }, needs))
    }

    pub fn sigmoid(&mut self, input: Var) -> Var {
        let out = self
            .value(input)
            .map(|v| T::one() / (T::one() + (-v).exp()));
        let needs = self.needs(input);
        self.push(out, Op::Sigmoid { input }, needs)
    }

    /// Mean squared error against a constant target. With `weights`
    /// (broadcast over channels when it has one channel), only entries with
    /// non-zero weight count and the mean is taken over their weight sum.
    pub fn mse(&mut self, input: Var, target: &Tensor<T>, weights: Option<&Tensor<T>>) -> Result<Var> {
        let x = self.value(input);
        x.expect_same_shape(target, "mse")?;
        let s = x.shape();
        let weights = match weights {
            None => None,
            Some(w) => {
                let ws = w.shape();
                let full = if ws == s {
                    w.clone()
                } else if ws.batch == s.batch && ws.channels == 1 && ws.height == s.height && ws.width == s.width {
                    Tensor::from_fn(s, |[b, _, y, xx]| w.at(b, 0, y, xx))
                } else {
                    return Err(Error::shape("mse", format!("weights {ws} do not broadcast to {s}")));
                };
                Some(full)
            }
        };
        let count = match &weights {
            None => T::from_usize(x.len()).unwrap(),
            Some(w) => w.sum(),
        };
        if count <= T::zero() {
            return Err(Error::InvalidArgument(
                "loss weights select no entries".into(),
            ));
        }
        let sq: T = match &weights {
            None => x.data().iter().zip(target.data()).map(|(&a, &t)| (a - t) * (a - t)).sum(),
            Some(w) => x
                .data()
                .iter()
                .zip(target.data())
                .zip(w.data())
                .map(|((&a, &t), &m)| m * (a - t) * (a - t))
                .sum(),
        };
        let out = Tensor::full([1, 1, 1, 1], sq / count);
        let needs = self.needs(input);
        Ok(self.push(
            out,
            Op::Mse {
                input,
                target: target.clone(),
                weights,
                count,
            },
            needs,
        ))
    }

    /// Scalar `sum(weights * x)`; a random projection for gradient checks.
    pub fn dot(&mut self, input: Var, weights: &Tensor<T>) -> Result<Var> {
        let x = self.value(input);
        x.expect_same_shape(weights, "dot")?;
        let v: T = x.data().iter().zip(weights.data()).map(|(&a, &w)| a * w).sum();
        let needs = self.needs(input);
        Ok(self.push(
            Tensor::full([1, 1, 1, 1], v),
            Op::Dot {
                input,
                weights: weights.clone(),
            },
            needs,
        ))
    }

    /// Back-propagates from `root`, seeding its gradient with ones (so a
    /// non-scalar root is differentiated through its sum).
    pub fn backward(&self, root: Var) -> Result<Gradients<T>> {
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Tensor::full(self.value(root).shape(), T::one()));
        for i in (0..=root.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            match &node.op {
                Op::Leaf => {
                    grads[i] = Some(g);
                }
                Op::Conv2d {
                    input,
                    weight,
                    bias,
                    cols,
                    geometry,
                } => {
                    let cg = conv2d_backward(&g, self.value(*input), self.value(*weight), cols, geometry);
                    if self.needs(*input) {
                        accumulate(&mut grads[input.0], cg.input);
                    }
                    if self.needs(*weight) {
                        accumulate(&mut grads[weight.0], cg.weight);
                    }
                    if let Some(b) = bias {
                        if self.needs(*b) {
                            let shaped = cg.bias.reshape(self.value(*b).shape())?;
                            accumulate(&mut grads[b.0], shaped);
                        }
                    }
                }
                Op::LeakyRelu { input, slope } => {
                    let x = self.value(*input);
                    let dx = x.zip_map(&g, |v, gv| if v > T::zero() { gv } else { gv * *slope })?;
                    accumulate(&mut grads[input.0], dx);
                }
                Op::Resample { input, plan } => {
                    accumulate(&mut grads[input.0], plan.backward(&g)?);
                }
                Op::ZeroInsert { input, factor } => {
                    let s = self.value(*input).shape();
                    let dx = Tensor::from_fn(s, |[b, c, y, x]| g.at(b, c, y * factor, x * factor));
                    accumulate(&mut grads[input.0], dx);
                }
                Op::CenterScaleBias { input, bias, scale } => {
                    let s = g.shape();
                    let count = T::from_usize(s.batch * s.plane()).unwrap();
                    let mut dx = g.clone();
                    let mut db = Tensor::zeros(self.value(*bias).shape());
                    for c in 0..s.channels {
                        let total: T = (0..s.batch).map(|n| g.plane(n, c).iter().copied().sum::<T>()).sum();
                        db.data_mut()[c] = total;
                        let mean = total / count;
                        for n in 0..s.batch {
                            dx.plane_mut(n, c)
                                .iter_mut()
                                .for_each(|v| *v = (*v - mean) * *scale);
                        }
                    }
                    if self.needs(*input) {
                        accumulate(&mut grads[input.0], dx);
                    }
                    if self.needs(*bias) {
                        accumulate(&mut grads[bias.0], db);
                    }
                }
                Op::Sigmoid { input } => {
                    let y = &node.value;
                    let dx = y.zip_map(&g, |yv, gv| gv * yv * (T::one() - yv))?;
                    accumulate(&mut grads[input.0], dx);
                }
                Op::Mse {
                    input,
                    target,
                    weights,
                    count,
                } => {
                    let x = self.value(*input);
                    let two = T::from_f64_lossy(2.0) * g.data()[0] / *count;
                    let mut dx = x.zip_map(target, |a, t| two * (a - t))?;
                    if let Some(w) = weights {
                        dx.data_mut().iter_mut().zip(w.data()).for_each(|(d, &m)| *d *= m);
                    }
                    accumulate(&mut grads[input.0], dx);
                }
                Op::Dot { input, weights } => {
                    let scale = g.data()[0];
                    accumulate(&mut grads[input.0], weights.scale(scale));
                }
            }
        }
        Ok(Gradients { grads })
    }
}
