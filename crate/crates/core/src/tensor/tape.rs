use super::kernels::{self, BnForward};
use super::{s, Scalar, Tensor};
use crate::error::{shape_err, Error, Result};

pub use super::kernels::ConvSpec;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// How a batch-norm node normalizes its input.
#[derive(Clone, Debug)]
pub enum BnMode<'a, T> {
    /// Batch statistics; the tape returns them so callers can update
    /// running estimates.
    Train { eps: f64 },
    Eval {
        running_mean: &'a [T],
        running_var: &'a [T],
        eps: f64,
    },
}

/// Statistics observed by a training-mode batch-norm node.
#[derive(Clone, Debug)]
pub struct BnStats<T> {
    pub mean: Vec<T>,
    /// Unbiased variance (n/(n-1) corrected), the form kept as a running
    /// estimate.
    pub var_unbiased: Vec<T>,
}

enum Op<T> {
    Leaf,
    Constant,
    Conv2d {
        x: usize,
        w: usize,
        b: Option<usize>,
        spec: ConvSpec,
    },
    BatchNorm {
        x: usize,
        gamma: usize,
        beta: usize,
        xhat: Vec<T>,
        inv_std: Vec<T>,
        train: bool,
    },
    Relu(usize),
    Sigmoid(usize),
    Add(usize, usize),
    Mul(usize, usize),
    Scale(usize, T),
    Concat(Vec<usize>),
    Gather(usize, Vec<usize>),
    Resize(usize),
    AvgPool {
        x: usize,
        k: usize,
        stride: usize,
        pad: usize,
    },
    Sum(usize),
    Mean(usize),
    WeightedBce {
        x: usize,
        target: Tensor<T>,
        weight: Tensor<T>,
    },
    WeightedIou {
        x: usize,
        target: Tensor<T>,
        weight: Tensor<T>,
    },
    Mse {
        x: usize,
        target: Tensor<T>,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
}

/// Records a forward computation for reverse-mode differentiation.
///
/// A tape is single-owner and is rebuilt for every forward pass.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients indexed by [`Var`]; variables the loss does not reach read as
/// zeros.
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
    shapes: Vec<Vec<usize>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Tensor<T> {
        let shape = &self.shapes[v.0];
        match &self.grads[v.0] {
            Some(g) => Tensor::new(shape.clone(), g.clone()).expect("gradient shape"),
            None => Tensor::zeros(shape),
        }
    }

    pub fn reached(&self, v: Var) -> bool {
        self.grads[v.0].is_some()
    }
}

fn acc<T: Scalar>(slot: &mut Option<Vec<T>>, g: &[T]) {
    match slot {
        Some(buf) => {
            for (b, &v) in buf.iter_mut().zip(g) {
                *b = *b + v;
            }
        }
        None => *slot = Some(g.to_vec()),
    }
}

fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Numerically stable binary cross-entropy from a logit.
fn bce_logit<T: Scalar>(x: T, g: T) -> T {
    x.max(T::zero()) - x * g + (T::one() + (-x.abs()).exp()).ln()
}

/// Per-sample index ranges of a batched tensor.
fn per_sample<T: Scalar>(t: &Tensor<T>) -> (usize, usize) {
    let n = t.shape()[0].max(1);
    (n, t.len() / n)
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, name: &'static str) -> Result<Var> {
        value.ensure_finite(name)?;
        self.nodes.push(Node { value, op });
        Ok(Var(self.nodes.len() - 1))
    }

    fn check(&self, v: Var) -> Result<()> {
        if v.0 < self.nodes.len() {
            Ok(())
        } else {
            Err(Error::NotOnTape(v.0))
        }
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    /// A differentiable input (parameter or checked input).
    pub fn leaf(&mut self, t: Tensor<T>) -> Result<Var> {
        self.push(t, Op::Leaf, "leaf")
    }

    /// A value that never receives gradient.
    pub fn constant(&mut self, t: Tensor<T>) -> Result<Var> {
        self.push(t, Op::Constant, "constant")
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, spec: ConvSpec) -> Result<Var> {
        self.check(x)?;
        self.check(w)?;
        if let Some(b) = b {
            self.check(b)?;
        }
        let y = kernels::conv2d_forward(
            self.value(x),
            self.value(w),
            b.map(|b| self.value(b)),
            spec,
        )?;
        self.push(
            y,
            Op::Conv2d {
                x: x.0,
                w: w.0,
                b: b.map(|b| b.0),
                spec,
            },
            "conv2d",
        )
    }

    pub fn batchnorm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mode: BnMode<'_, T>,
    ) -> Result<(Var, Option<BnStats<T>>)> {
        self.check(x)?;
        let (train, fwd): (bool, BnForward<T>) = match mode {
            BnMode::Train { eps } => (
                true,
                kernels::batchnorm_train(self.value(x), self.value(gamma), self.value(beta), eps)?,
            ),
            BnMode::Eval {
                running_mean,
                running_var,
                eps,
            } => (
                false,
                kernels::batchnorm_eval(
                    self.value(x),
                    self.value(gamma),
                    self.value(beta),
                    running_mean,
                    running_var,
                    eps,
                )?,
            ),
        };
        let stats = if train {
            let shape = self.value(x).shape();
            let m = shape[0] * shape[2..].iter().product::<usize>();
            let corr: T = if m > 1 {
                s(m as f64 / (m - 1) as f64)
            } else {
                T::one()
            };
            Some(BnStats {
                mean: fwd.mean.clone(),
                var_unbiased: fwd.var.iter().map(|&v| v * corr).collect(),
            })
        } else {
            None
        };
        let v = self.push(
            fwd.out,
            Op::BatchNorm {
                x: x.0,
                gamma: gamma.0,
                beta: beta.0,
                xhat: fwd.xhat,
                inv_std: fwd.inv_std,
                train,
            },
            "batchnorm2d",
        )?;
        Ok((v, stats))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.check(x)?;
        let y = self.value(x).map(|v| v.max(T::zero()));
        self.push(y, Op::Relu(x.0), "relu")
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.check(x)?;
        let y = self.value(x).map(sigmoid);
        self.push(y, Op::Sigmoid(x.0), "sigmoid")
    }

    fn binary(&mut self, a: Var, b: Var, name: &'static str, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        self.check(a)?;
        self.check(b)?;
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err(name, format!("{:?} vs {:?}", ta.shape(), tb.shape())));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(ta.shape().to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = self.binary(a, b, "add", |x, y| x + y)?;
        self.push(y, Op::Add(a.0, b.0), "add")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = self.binary(a, b, "mul", |x, y| x * y)?;
        self.push(y, Op::Mul(a.0, b.0), "mul")
    }

    pub fn scale(&mut self, x: Var, c: T) -> Result<Var> {
        self.check(x)?;
        let y = self.value(x).map(|v| v * c);
        self.push(y, Op::Scale(x.0, c), "scale")
    }

    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        for &p in parts {
            self.check(p)?;
        }
        let tensors: Vec<&Tensor<T>> = parts.iter().map(|&p| self.value(p)).collect();
        let y = kernels::concat_channels(&tensors)?;
        self.push(y, Op::Concat(parts.iter().map(|p| p.0).collect()), "concat")
    }

    /// Channel selection/permutation: output channel `j` is `index[j]`.
    pub fn gather_channels(&mut self, x: Var, index: Vec<usize>) -> Result<Var> {
        self.check(x)?;
        let y = kernels::gather_channels(self.value(x), &index)?;
        self.push(y, Op::Gather(x.0, index), "gather_channels")
    }

    pub fn split(&mut self, x: Var, groups: usize) -> Result<Vec<Var>> {
        self.check(x)?;
        let c = self.value(x).dims4()?.1;
        if groups == 0 || c % groups != 0 {
            return Err(Error::Indivisible { count: c, groups });
        }
        let width = c / groups;
        (0..groups)
            .map(|g| self.gather_channels(x, (g * width..(g + 1) * width).collect()))
            .collect()
    }

    pub fn resize(&mut self, x: Var, out_h: usize, out_w: usize) -> Result<Var> {
        self.check(x)?;
        let (_, _, h, w) = self.value(x).dims4()?;
        if (h, w) == (out_h, out_w) {
            return Ok(x);
        }
        let y = kernels::resize_bilinear(self.value(x), out_h, out_w)?;
        self.push(y, Op::Resize(x.0), "resize_bilinear")
    }

    pub fn avgpool(&mut self, x: Var, k: usize, stride: usize, pad: usize) -> Result<Var> {
        self.check(x)?;
        let y = kernels::avgpool2d(self.value(x), k, stride, pad)?;
        self.push(y, Op::AvgPool { x: x.0, k, stride, pad }, "avgpool2d")
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        self.check(x)?;
        let y = Tensor::scalar(self.value(x).sum());
        self.push(y, Op::Sum(x.0), "sum")
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        self.check(x)?;
        let y = Tensor::scalar(self.value(x).mean());
        self.push(y, Op::Mean(x.0), "mean")
    }

    fn loss_operands(&self, x: Var, target: &Tensor<T>, weight: Option<&Tensor<T>>, name: &'static str) -> Result<()> {
        self.check(x)?;
        let xs = self.value(x).shape();
        if target.shape() != xs || weight.is_some_and(|w| w.shape() != xs) {
            return Err(shape_err(name, format!("logits {xs:?} vs target {:?}", target.shape())));
        }
        Ok(())
    }

    /// Per-sample `Σ w·bce / Σ w` from logits, averaged over the batch.
    pub fn weighted_bce(&mut self, logits: Var, target: &Tensor<T>, weight: &Tensor<T>) -> Result<Var> {
        self.loss_operands(logits, target, Some(weight), "weighted_bce")?;
        let x = self.value(logits);
        let (n, len) = per_sample(x);
        let mut total = T::zero();
        for b in 0..n {
            let r = b * len..(b + 1) * len;
            let (mut num, mut den) = (T::zero(), T::zero());
            for ((&xv, &g), &w) in x.data()[r.clone()].iter().zip(&target.data()[r.clone()]).zip(&weight.data()[r]) {
                num = num + w * bce_logit(xv, g);
                den = den + w;
            }
            total = total + num / den;
        }
        let y = Tensor::scalar(total / s(n as f64));
        self.push(
            y,
            Op::WeightedBce {
                x: logits.0,
                target: target.clone(),
                weight: weight.clone(),
            },
            "weighted_bce",
        )
    }

    /// Per-sample `1 − (Σw·p·g + 1) / (Σw·(p+g−p·g) + 1)` with `p = σ(logits)`,
    /// averaged over the batch.
    pub fn weighted_iou(&mut self, logits: Var, target: &Tensor<T>, weight: &Tensor<T>) -> Result<Var> {
        self.loss_operands(logits, target, Some(weight), "weighted_iou")?;
        let x = self.value(logits);
        let (n, len) = per_sample(x);
        let mut total = T::zero();
        for b in 0..n {
            let (inter, uni) = iou_sums(x, target, weight, b * len..(b + 1) * len);
            total = total + T::one() - (inter + T::one()) / (uni + T::one());
        }
        let y = Tensor::scalar(total / s(n as f64));
        self.push(
            y,
            Op::WeightedIou {
                x: logits.0,
                target: target.clone(),
                weight: weight.clone(),
            },
            "weighted_iou",
        )
    }

    /// Mean squared error against a fixed target.
    pub fn mse(&mut self, x: Var, target: &Tensor<T>) -> Result<Var> {
        self.loss_operands(x, target, None, "mse")?;
        let xv = self.value(x);
        let sq: T = xv
            .data()
            .iter()
            .zip(target.data())
            .map(|(&a, &b)| (a - b) * (a - b))
            .sum();
        let y = Tensor::scalar(sq / s(xv.len() as f64));
        self.push(
            y,
            Op::Mse {
                x: x.0,
                target: target.clone(),
            },
            "mse",
        )
    }

    /// Sign pattern of every ReLU input, used to detect finite-difference
    /// steps that cross a kink.
    pub fn relu_signature(&self) -> Vec<bool> {
        let mut sig = Vec::new();
        for node in &self.nodes {
            if let Op::Relu(x) = node.op {
                sig.extend(self.nodes[x].value.data().iter().map(|&v| v > T::zero()));
            }
        }
        sig
    }

    /// Reverse-mode sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        self.check(loss)?;
        if self.value(loss).len() != 1 {
            return Err(shape_err("backward", "loss must be a scalar"));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        for id in (0..=loss.0).rev() {
            let Some(gy) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            match &node.op {
                Op::Leaf => {
                    grads[id] = Some(gy);
                    continue;
                }
                Op::Constant => {}
                Op::Conv2d { x, w, b, spec } => {
                    let (gx, gw, gb) = kernels::conv2d_backward(
                        &self.nodes[*x].value,
                        &self.nodes[*w].value,
                        b.is_some(),
                        *spec,
                        &gy,
                    )?;
                    acc(&mut grads[*x], gx.data());
                    acc(&mut grads[*w], gw.data());
                    if let (Some(b), Some(gb)) = (b, gb) {
                        acc(&mut grads[*b], gb.data());
                    }
                }
                Op::BatchNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    inv_std,
                    train,
                } => {
                    let (gx, gg, gb) = kernels::batchnorm_backward(
                        node.value.shape(),
                        self.nodes[*gamma].value.data(),
                        xhat,
                        inv_std,
                        *train,
                        &gy,
                    );
                    acc(&mut grads[*x], &gx);
                    acc(&mut grads[*gamma], &gg);
                    acc(&mut grads[*beta], &gb);
                }
                Op::Relu(x) => {
                    let xv = self.nodes[*x].value.data();
                    let g: Vec<T> = gy
                        .iter()
                        .zip(xv)
                        .map(|(&g, &v)| if v > T::zero() { g } else { T::zero() })
                        .collect();
                    acc(&mut grads[*x], &g);
                }
                Op::Sigmoid(x) => {
                    let g: Vec<T> = gy
                        .iter()
                        .zip(node.value.data())
                        .map(|(&g, &p)| g * p * (T::one() - p))
                        .collect();
                    acc(&mut grads[*x], &g);
                }
                Op::Add(a, b) => {
                    acc(&mut grads[*a], &gy);
                    acc(&mut grads[*b], &gy);
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (self.nodes[*a].value.data(), self.nodes[*b].value.data());
                    let ga: Vec<T> = gy.iter().zip(vb).map(|(&g, &v)| g * v).collect();
                    let gb: Vec<T> = gy.iter().zip(va).map(|(&g, &v)| g * v).collect();
                    acc(&mut grads[*a], &ga);
                    acc(&mut grads[*b], &gb);
                }
                Op::Scale(x, c) => {
                    let g: Vec<T> = gy.iter().map(|&g| g * *c).collect();
                    acc(&mut grads[*x], &g);
                }
                Op::Concat(parts) => {
                    let (n, ctot, h, w) = node.value.dims4()?;
                    let hw = h * w;
                    let mut offset = 0;
                    for &p in parts {
                        let pc = self.nodes[p].value.shape()[1];
                        let mut g = Vec::with_capacity(n * pc * hw);
                        for b in 0..n {
                            g.extend_from_slice(&gy[(b * ctot + offset) * hw..][..pc * hw]);
                        }
                        acc(&mut grads[p], &g);
                        offset += pc;
                    }
                }
                Op::Gather(x, index) => {
                    let (n, c, h, w) = self.nodes[*x].value.dims4()?;
                    let hw = h * w;
                    let mut g = vec![T::zero(); n * c * hw];
                    for b in 0..n {
                        for (j, &ic) in index.iter().enumerate() {
                            let src = &gy[(b * index.len() + j) * hw..][..hw];
                            let dst = &mut g[(b * c + ic) * hw..][..hw];
                            for (d, &v) in dst.iter_mut().zip(src) {
                                *d = *d + v;
                            }
                        }
                    }
                    acc(&mut grads[*x], &g);
                }
                Op::Resize(x) => {
                    let (_, _, oh, ow) = node.value.dims4()?;
                    let g = kernels::resize_bilinear_backward(self.nodes[*x].value.shape(), oh, ow, &gy);
                    acc(&mut grads[*x], &g);
                }
                Op::AvgPool { x, k, stride, pad } => {
                    let g = kernels::avgpool2d_backward(
                        self.nodes[*x].value.shape(),
                        node.value.shape(),
                        *k,
                        *stride,
                        *pad,
                        &gy,
                    );
                    acc(&mut grads[*x], &g);
                }
                Op::Sum(x) => {
                    let g = vec![gy[0]; self.nodes[*x].value.len()];
                    acc(&mut grads[*x], &g);
                }
                Op::Mean(x) => {
                    let len = self.nodes[*x].value.len();
                    let g = vec![gy[0] / s(len as f64); len];
                    acc(&mut grads[*x], &g);
                }
                Op::WeightedBce { x, target, weight } => {
                    let xv = &self.nodes[*x].value;
                    let (n, len) = per_sample(xv);
                    let mut g = vec![T::zero(); xv.len()];
                    for b in 0..n {
                        let r = b * len..(b + 1) * len;
                        let den: T = weight.data()[r.clone()].iter().copied().sum();
                        let coef = gy[0] / (den * s(n as f64));
                        for i in r {
                            g[i] = coef * weight.data()[i] * (sigmoid(xv.data()[i]) - target.data()[i]);
                        }
                    }
                    acc(&mut grads[*x], &g);
                }
                Op::WeightedIou { x, target, weight } => {
                    let xv = &self.nodes[*x].value;
                    let (n, len) = per_sample(xv);
                    let mut g = vec![T::zero(); xv.len()];
                    for b in 0..n {
                        let r = b * len..(b + 1) * len;
                        let (inter, uni) = iou_sums(xv, target, weight, r.clone());
                        let num = inter + T::one();
                        let den = uni + T::one();
                        let coef = gy[0] / (s::<T>(n as f64) * den * den);
                        for i in r {
                            let p = sigmoid(xv.data()[i]);
                            let (gt, w) = (target.data()[i], weight.data()[i]);
                            // d num/dp = w·g, d den/dp = w·(1−g)
                            let dloss_dp = -(w * gt * den - num * w * (T::one() - gt));
                            g[i] = coef * dloss_dp * p * (T::one() - p);
                        }
                    }
                    acc(&mut grads[*x], &g);
                }
                Op::Mse { x, target } => {
                    let xv = self.nodes[*x].value.data();
                    let c = gy[0] * s(2.0 / xv.len() as f64);
                    let g: Vec<T> = xv.iter().zip(target.data()).map(|(&a, &t)| c * (a - t)).collect();
                    acc(&mut grads[*x], &g);
                }
            }
        }
        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
        })
    }
}

/// `(Σ w·p·g, Σ w·(p + g − p·g))` over `range`, with `p = σ(x)`.
fn iou_sums<T: Scalar>(x: &Tensor<T>, target: &Tensor<T>, weight: &Tensor<T>, range: std::ops::Range<usize>) -> (T, T) {
    let (mut inter, mut uni) = (T::zero(), T::zero());
    for i in range {
        let p = sigmoid(x.data()[i]);
        let (g, w) = (target.data()[i], weight.data()[i]);
        inter = inter + w * p * g;
        uni = uni + w * (p + g - p * g);
    }
    (inter, uni)
}
