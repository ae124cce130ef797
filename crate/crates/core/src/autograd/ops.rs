//! Differentiable primitives. Each `vjp` arm is written with `Var` methods so
//! that a backward pass run under `create_graph` is itself differentiable.

use std::rc::Rc;

use super::Var;
use crate::error::{Error, Result};
use crate::tensor::{self, ConvGeom, Scalar, Tensor};

#[derive(Clone)]
pub(crate) enum Op<T: Scalar> {
    Leaf,
    Add,
    Sub,
    Mul,
    Div,
    Scale(T),
    AddScalar,
    Neg,
    Abs { sign: Rc<Tensor<T>> },
    Pow(T),
    Sqrt,
    RecipSafe,
    Relu { mask: Rc<Tensor<T>> },
    Exp,
    Log,
    Reshape { from: Vec<usize> },
    Conv2d { geom: ConvGeom },
    Conv2dBackwardInput { geom: ConvGeom },
    Conv2dBackwardWeight { geom: ConvGeom },
    ScatterByIndex { index: Rc<Vec<usize>> },
    GatherByIndex { index: Rc<Vec<usize>> },
    SumChannels,
    BroadcastChannels,
    ReduceAxis1,
    BroadcastAxis1,
    SumLast,
    BroadcastLast,
    SumAll,
    ExpandScalar,
    SelectRows { labels: Rc<Vec<usize>> },
    ScatterRows { labels: Rc<Vec<usize>> },
    MatMul { trans_a: bool, trans_b: bool },
    FlipH,
    Resize,
    ResizeTranspose,
    BatchNorm { cache: Rc<BatchNormCache<T>> },
}

/// Saved statistics of a batch-norm application.
pub struct BatchNormCache<T> {
    /// Normalized input `(x - mean) * invstd`.
    pub xhat: Tensor<T>,
    pub invstd: Vec<T>,
    /// Whether the statistics came from the batch (train) or were fixed (eval).
    pub batch_stats: bool,
}

pub struct BatchNormOutput<T: Scalar> {
    pub output: Var<T>,
    /// Per-channel batch mean (empty in eval mode).
    pub mean: Vec<T>,
    /// Per-channel unbiased batch variance (empty in eval mode).
    pub var: Vec<T>,
}

impl<T: Scalar> Op<T> {
    pub(crate) fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add => "add",
            Op::Sub => "sub",
            Op::Mul => "mul",
            Op::Div => "div",
            Op::Scale(_) => "scale",
            Op::AddScalar => "add_scalar",
            Op::Neg => "neg",
            Op::Abs { .. } => "abs",
            Op::Pow(_) => "pow",
            Op::Sqrt => "sqrt",
            Op::RecipSafe => "recip_safe",
            Op::Relu { .. } => "relu",
            Op::Exp => "exp",
            Op::Log => "log",
            Op::Reshape { .. } => "reshape",
            Op::Conv2d { .. } => "conv2d",
            Op::Conv2dBackwardInput { .. } => "conv2d_backward_input",
            Op::Conv2dBackwardWeight { .. } => "conv2d_backward_weight",
            Op::ScatterByIndex { .. } => "scatter_by_index",
            Op::GatherByIndex { .. } => "gather_by_index",
            Op::SumChannels => "sum_channels",
            Op::BroadcastChannels => "broadcast_channels",
            Op::ReduceAxis1 => "reduce_axis1",
            Op::BroadcastAxis1 => "broadcast_axis1",
            Op::SumLast => "sum_last",
            Op::BroadcastLast => "broadcast_last",
            Op::SumAll => "sum_all",
            Op::ExpandScalar => "expand_scalar",
            Op::SelectRows { .. } => "select_rows",
            Op::ScatterRows { .. } => "scatter_rows",
            Op::MatMul { .. } => "matmul",
            Op::FlipH => "flip_h",
            Op::Resize => "resize_bilinear",
            Op::ResizeTranspose => "resize_bilinear_transpose",
            Op::BatchNorm { .. } => "batchnorm",
        }
    }

    /// Batch norm's behavior in a second backward pass is left undefined.
    pub(crate) fn twice_differentiable(&self) -> bool {
        !matches!(self, Op::BatchNorm { .. })
    }

    /// Vector-Jacobian products for the inputs flagged in `needs`.
    pub(crate) fn vjp(
        &self,
        inputs: &[Var<T>],
        out: &Var<T>,
        g: &Var<T>,
        needs: &[bool],
    ) -> Result<Vec<Option<Var<T>>>> {
        let want = |i: usize| needs.get(i).copied().unwrap_or(false);
        let mut grads: Vec<Option<Var<T>>> = vec![None; inputs.len()];
        match self {
            Op::Leaf => {}
            Op::Add => {
                if want(0) {
                    grads[0] = Some(unbroadcast(g, inputs[0].dims())?);
                }
                if want(1) {
                    grads[1] = Some(unbroadcast(g, inputs[1].dims())?);
                }
            }
            Op::Sub => {
                if want(0) {
                    grads[0] = Some(unbroadcast(g, inputs[0].dims())?);
                }
                if want(1) {
                    grads[1] = Some(unbroadcast(&g.neg()?, inputs[1].dims())?);
                }
            }
            Op::Mul => {
                let (a, b) = (&inputs[0], &inputs[1]);
                if want(0) {
                    grads[0] = Some(unbroadcast(&g.mul(b)?, a.dims())?);
                }
                if want(1) {
                    grads[1] = Some(unbroadcast(&g.mul(a)?, b.dims())?);
                }
            }
            Op::Div => {
                let (a, b) = (&inputs[0], &inputs[1]);
                if want(0) {
                    grads[0] = Some(unbroadcast(&g.div(b)?, a.dims())?);
                }
                if want(1) {
                    // d(a/b)/db = -(a/b)/b
                    let gb = g.mul(out)?.div(b)?.neg()?;
                    grads[1] = Some(unbroadcast(&gb, b.dims())?);
                }
            }
            Op::Scale(c) => grads[0] = Some(g.scale(*c)?),
            Op::AddScalar => grads[0] = Some(g.clone()),
            Op::Neg => grads[0] = Some(g.neg()?),
            Op::Abs { sign } => grads[0] = Some(g.mul(&Var::constant((**sign).clone()))?),
            Op::Pow(p) => {
                let x = &inputs[0];
                let p = *p;
                let d = if p == T::one() {
                    None
                } else if p == T::of(2.0) {
                    Some(x.scale(p)?)
                } else {
                    Some(x.pow(p - T::one())?.scale(p)?)
                };
                grads[0] = Some(match d {
                    Some(d) => g.mul(&d)?,
                    None => g.clone(),
                });
            }
            Op::Sqrt => grads[0] = Some(g.mul(&out.recip_safe()?.scale(T::of(0.5))?)?),
            Op::RecipSafe => grads[0] = Some(g.mul(&out.mul(out)?)?.neg()?),
            Op::Relu { mask } => grads[0] = Some(g.mul(&Var::constant((**mask).clone()))?),
            Op::Exp => grads[0] = Some(g.mul(out)?),
            Op::Log => grads[0] = Some(g.mul(&inputs[0].recip_safe()?)?),
            Op::Reshape { from } => grads[0] = Some(g.reshape(from)?),
            Op::Conv2d { geom } => {
                let (x, w) = (&inputs[0], &inputs[1]);
                if want(0) {
                    let [_, _, h, wd] = x.value().nchw("conv2d")?;
                    grads[0] = Some(g.conv2d_backward_input(w, (h, wd), *geom)?);
                }
                if want(1) {
                    let [_, _, kh, kw] = w.value().nchw("conv2d")?;
                    grads[1] = Some(x.conv2d_backward_weight(g, (kh, kw), *geom)?);
                }
                if inputs.len() > 2 && want(2) {
                    grads[2] = Some(g.reduce_axis1()?);
                }
            }
            Op::Conv2dBackwardInput { geom } => {
                // out = dx(gin, w)
                let (gin, w) = (&inputs[0], &inputs[1]);
                if want(0) {
                    grads[0] = Some(g.conv2d(w, None, *geom)?);
                }
                if want(1) {
                    let [_, _, kh, kw] = w.value().nchw("conv2d")?;
                    grads[1] = Some(g.conv2d_backward_weight(gin, (kh, kw), *geom)?);
                }
            }
            Op::Conv2dBackwardWeight { geom } => {
                // out = dw(x, gin)
                let (x, gin) = (&inputs[0], &inputs[1]);
                if want(0) {
                    let [_, _, h, wd] = x.value().nchw("conv2d")?;
                    grads[0] = Some(gin.conv2d_backward_input(g, (h, wd), *geom)?);
                }
                if want(1) {
                    grads[1] = Some(x.conv2d(g, None, *geom)?);
                }
            }
            Op::ScatterByIndex { index } => {
                grads[0] = Some(g.gather_by_index(index.clone(), inputs[0].dims())?);
            }
            Op::GatherByIndex { index } => {
                grads[0] = Some(g.scatter_by_index(index.clone(), inputs[0].dims())?);
            }
            Op::SumChannels => grads[0] = Some(g.broadcast_channels(inputs[0].dims()[1])?),
            Op::BroadcastChannels => grads[0] = Some(g.sum_channels()?),
            Op::ReduceAxis1 => grads[0] = Some(g.broadcast_axis1(inputs[0].dims())?),
            Op::BroadcastAxis1 => grads[0] = Some(g.reduce_axis1()?),
            Op::SumLast => grads[0] = Some(g.broadcast_last(inputs[0].dims())?),
            Op::BroadcastLast => grads[0] = Some(g.sum_last()?.reshape(inputs[0].dims())?),
            Op::SumAll => grads[0] = Some(g.expand_scalar(inputs[0].dims())?),
            Op::ExpandScalar => grads[0] = Some(g.sum_all()?.reshape(inputs[0].dims())?),
            Op::SelectRows { labels } => {
                grads[0] = Some(g.scatter_rows(labels.clone(), inputs[0].dims()[1])?);
            }
            Op::ScatterRows { labels } => grads[0] = Some(g.select_rows(labels.clone())?),
            Op::MatMul { trans_a, trans_b } => {
                let (a, b) = (&inputs[0], &inputs[1]);
                let (ta, tb) = (*trans_a, *trans_b);
                if want(0) {
                    grads[0] = Some(if ta {
                        b.matmul(g, tb, true)?
                    } else {
                        g.matmul(b, false, !tb)?
                    });
                }
                if want(1) {
                    grads[1] = Some(if tb {
                        g.matmul(a, true, ta)?
                    } else {
                        a.matmul(g, !ta, false)?
                    });
                }
            }
            Op::FlipH => grads[0] = Some(g.flip_h()?),
            Op::Resize => {
                let d = inputs[0].dims();
                grads[0] = Some(g.resize_bilinear_transpose(d[d.len() - 2], d[d.len() - 1])?);
            }
            Op::ResizeTranspose => {
                let d = inputs[0].dims();
                grads[0] = Some(g.resize_bilinear(d[d.len() - 2], d[d.len() - 1])?);
            }
            Op::BatchNorm { cache } => {
                let [gx, ggamma, gbeta] = batch_norm_backward(g.value(), &inputs[1], cache)?;
                grads[0] = Some(Var::constant(gx));
                grads[1] = Some(Var::constant(ggamma));
                grads[2] = Some(Var::constant(gbeta));
            }
        }
        Ok(grads)
    }
}

fn unbroadcast<T: Scalar>(g: &Var<T>, dims: &[usize]) -> Result<Var<T>> {
    if g.dims() == dims {
        Ok(g.clone())
    } else if dims.iter().product::<usize>() == 1 {
        g.sum_all()?.reshape(dims)
    } else {
        Err(Error::shape("unbroadcast", g.dims(), dims))
    }
}

fn batch_norm_backward<T: Scalar>(
    g: &Tensor<T>,
    gamma: &Var<T>,
    cache: &BatchNormCache<T>,
) -> Result<[Tensor<T>; 3]> {
    let dims = g.dims();
    let (n, c) = (dims[0], dims[1]);
    let inner: usize = dims[2..].iter().product();
    let m = T::of((n * inner) as f64);
    let xhat = cache.xhat.data();
    let mut sum_g = vec![T::zero(); c];
    let mut sum_gx = vec![T::zero(); c];
    for s in 0..n {
        for ch in 0..c {
            let base = (s * c + ch) * inner;
            for k in base..base + inner {
                sum_g[ch] = sum_g[ch] + g.data()[k];
                sum_gx[ch] = sum_gx[ch] + g.data()[k] * xhat[k];
            }
        }
    }
    let gamma = gamma.value().data();
    let mut gx = vec![T::zero(); g.numel()];
    for s in 0..n {
        for ch in 0..c {
            let base = (s * c + ch) * inner;
            let k0 = gamma[ch] * cache.invstd[ch];
            for k in base..base + inner {
                gx[k] = if cache.batch_stats {
                    k0 * (g.data()[k] - (sum_g[ch] + xhat[k] * sum_gx[ch]) / m)
                } else {
                    k0 * g.data()[k]
                };
            }
        }
    }
    Ok([
        Tensor::from_parts(dims.to_vec(), gx).ensure_finite("batchnorm backward")?,
        Tensor::from_parts(vec![c], sum_gx),
        Tensor::from_parts(vec![c], sum_g),
    ])
}

impl<T: Scalar> Var<T> {
    pub fn add(&self, other: &Var<T>) -> Result<Var<T>> {
        Var::record(Op::Add, &[self, other], tensor::add(self.value(), other.value())?)
    }

    pub fn sub(&self, other: &Var<T>) -> Result<Var<T>> {
        Var::record(Op::Sub, &[self, other], tensor::sub(self.value(), other.value())?)
    }

    pub fn mul(&self, other: &Var<T>) -> Result<Var<T>> {
        Var::record(Op::Mul, &[self, other], tensor::mul(self.value(), other.value())?)
    }

    pub fn div(&self, other: &Var<T>) -> Result<Var<T>> {
        Var::record(Op::Div, &[self, other], tensor::div(self.value(), other.value())?)
    }

    pub fn scale(&self, c: T) -> Result<Var<T>> {
        Var::record(Op::Scale(c), &[self], tensor::scale(self.value(), c)?)
    }

    pub fn add_scalar(&self, c: T) -> Result<Var<T>> {
        Var::record(Op::AddScalar, &[self], tensor::add_scalar(self.value(), c)?)
    }

    pub fn neg(&self) -> Result<Var<T>> {
        Var::record(Op::Neg, &[self], tensor::neg(self.value())?)
    }

    pub fn abs(&self) -> Result<Var<T>> {
        let sign = Rc::new(tensor::sign(self.value())?);
        Var::record(Op::Abs { sign }, &[self], tensor::abs(self.value())?)
    }

    pub fn pow(&self, p: T) -> Result<Var<T>> {
        Var::record(Op::Pow(p), &[self], tensor::pow(self.value(), p)?)
    }

    pub fn square(&self) -> Result<Var<T>> {
        self.pow(T::of(2.0))
    }

    pub fn sqrt(&self) -> Result<Var<T>> {
        Var::record(Op::Sqrt, &[self], tensor::sqrt(self.value())?)
    }

    /// `1/x` with `1/0 := 0`.
    pub fn recip_safe(&self) -> Result<Var<T>> {
        Var::record(Op::RecipSafe, &[self], tensor::recip_safe(self.value())?)
    }

    pub fn relu(&self) -> Result<Var<T>> {
        let mask = Rc::new(tensor::relu_mask(self.value()));
        Var::record(Op::Relu { mask }, &[self], tensor::relu(self.value())?)
    }

    pub fn exp(&self) -> Result<Var<T>> {
        Var::record(Op::Exp, &[self], tensor::exp(self.value())?)
    }

    pub fn log(&self) -> Result<Var<T>> {
        Var::record(Op::Log, &[self], tensor::log(self.value())?)
    }

    pub fn reshape(&self, dims: &[usize]) -> Result<Var<T>> {
        if dims == self.dims() {
            return Ok(self.clone());
        }
        let from = self.dims().to_vec();
        Var::record(Op::Reshape { from }, &[self], self.value().reshape(dims)?)
    }

    /// Flattens everything after the leading axis: `[N, ...] -> [N, M]`.
    pub fn flatten_samples(&self) -> Result<Var<T>> {
        let n = self.dims()[0];
        self.reshape(&[n, self.value().numel() / n])
    }

    pub fn conv2d(&self, weight: &Var<T>, bias: Option<&Var<T>>, geom: ConvGeom) -> Result<Var<T>> {
        let value = tensor::conv2d(self.value(), weight.value(), bias.map(|b| b.value()), geom)?;
        match bias {
            Some(b) => Var::record(Op::Conv2d { geom }, &[self, weight, b], value),
            None => Var::record(Op::Conv2d { geom }, &[self, weight], value),
        }
    }

    pub fn conv2d_backward_input(&self, weight: &Var<T>, in_hw: (usize, usize), geom: ConvGeom) -> Result<Var<T>> {
        let value = tensor::conv2d_backward_input(self.value(), weight.value(), in_hw, geom)?;
        Var::record(Op::Conv2dBackwardInput { geom }, &[self, weight], value)
    }

    pub fn conv2d_backward_weight(&self, grad_out: &Var<T>, k_hw: (usize, usize), geom: ConvGeom) -> Result<Var<T>> {
        let value = tensor::conv2d_backward_weight(self.value(), grad_out.value(), k_hw, geom)?;
        Var::record(Op::Conv2dBackwardWeight { geom }, &[self, grad_out], value)
    }

    pub fn maxpool2d(&self, k: usize, stride: usize) -> Result<Var<T>> {
        let pooled = tensor::maxpool2d(self.value(), k, stride)?;
        // Pooling is a gather at the argmax positions; its adjoint is the scatter.
        Var::record(
            Op::GatherByIndex {
                index: Rc::new(pooled.argmax),
            },
            &[self],
            pooled.output,
        )
    }

    pub(crate) fn gather_by_index(&self, index: Rc<Vec<usize>>, dims: &[usize]) -> Result<Var<T>> {
        let value = tensor::gather_by_index(self.value(), &index, dims)?;
        Var::record(Op::GatherByIndex { index }, &[self], value)
    }

    pub(crate) fn scatter_by_index(&self, index: Rc<Vec<usize>>, dims: &[usize]) -> Result<Var<T>> {
        let value = tensor::scatter_by_index(self.value(), &index, dims)?;
        Var::record(Op::ScatterByIndex { index }, &[self], value)
    }

    /// `[N,C,H,W] -> [N,C]` spatial mean.
    pub fn global_avgpool(&self) -> Result<Var<T>> {
        let [n, c, h, w] = self.value().nchw("global_avgpool")?;
        self.reshape(&[n, c, h * w])?
            .sum_last()?
            .scale(T::one() / T::of((h * w) as f64))
    }

    pub fn sum_channels(&self) -> Result<Var<T>> {
        Var::record(Op::SumChannels, &[self], tensor::sum_channels(self.value())?)
    }

    pub(crate) fn broadcast_channels(&self, c: usize) -> Result<Var<T>> {
        Var::record(Op::BroadcastChannels, &[self], tensor::broadcast_channels(self.value(), c)?)
    }

    /// `[N,C,H,W] -> [N,H,W]` channel maximum; gradient flows to the argmax channel.
    pub fn max_channels(&self) -> Result<Var<T>> {
        let (value, arg) = tensor::max_channels(self.value())?;
        Var::record(Op::GatherByIndex { index: Rc::new(arg) }, &[self], value)
    }

    pub fn reduce_axis1(&self) -> Result<Var<T>> {
        Var::record(Op::ReduceAxis1, &[self], tensor::reduce_axis1(self.value())?)
    }

    pub fn broadcast_axis1(&self, dims: &[usize]) -> Result<Var<T>> {
        Var::record(Op::BroadcastAxis1, &[self], tensor::broadcast_axis1(self.value(), dims)?)
    }

    /// Adds a per-channel bias `[C]` along axis 1.
    pub fn add_bias(&self, bias: &Var<T>) -> Result<Var<T>> {
        self.add(&bias.broadcast_axis1(self.dims())?)
    }

    pub fn sum_last(&self) -> Result<Var<T>> {
        Var::record(Op::SumLast, &[self], tensor::sum_last(self.value())?)
    }

    pub fn broadcast_last(&self, dims: &[usize]) -> Result<Var<T>> {
        Var::record(Op::BroadcastLast, &[self], tensor::broadcast_last(self.value(), dims)?)
    }

    pub fn sum_all(&self) -> Result<Var<T>> {
        Var::record(Op::SumAll, &[self], tensor::sum_all(self.value())?)
    }

    pub fn mean_all(&self) -> Result<Var<T>> {
        let n = self.value().numel();
        self.sum_all()?.scale(T::one() / T::of(n as f64))
    }

    pub(crate) fn expand_scalar(&self, dims: &[usize]) -> Result<Var<T>> {
        Var::record(Op::ExpandScalar, &[self], tensor::expand_scalar(self.value(), dims)?)
    }

    pub fn select_rows(&self, labels: Rc<Vec<usize>>) -> Result<Var<T>> {
        let value = tensor::select_rows(self.value(), &labels)?;
        Var::record(Op::SelectRows { labels }, &[self], value)
    }

    pub(crate) fn scatter_rows(&self, labels: Rc<Vec<usize>>, k: usize) -> Result<Var<T>> {
        let value = tensor::scatter_rows(self.value(), &labels, k)?;
        Var::record(Op::ScatterRows { labels }, &[self], value)
    }

    pub fn matmul(&self, other: &Var<T>, trans_a: bool, trans_b: bool) -> Result<Var<T>> {
        let value = tensor::matmul(self.value(), other.value(), trans_a, trans_b)?;
        Var::record(Op::MatMul { trans_a, trans_b }, &[self, other], value)
    }

    pub fn flip_h(&self) -> Result<Var<T>> {
        Var::record(Op::FlipH, &[self], tensor::flip_h(self.value())?)
    }

    pub fn resize_bilinear(&self, out_h: usize, out_w: usize) -> Result<Var<T>> {
        Var::record(Op::Resize, &[self], tensor::resize_bilinear(self.value(), out_h, out_w)?)
    }

    pub(crate) fn resize_bilinear_transpose(&self, h: usize, w: usize) -> Result<Var<T>> {
        let value = tensor::resize_bilinear_transpose(self.value(), h, w)?;
        Var::record(Op::ResizeTranspose, &[self], value)
    }

    /// Row-wise log-softmax of `[N,K]` logits.
    pub fn log_softmax(&self) -> Result<Var<T>> {
        let dims = self.dims().to_vec();
        if dims.len() != 2 {
            return Err(Error::invalid("log_softmax", format!("expected [N,K], got {dims:?}")));
        }
        let k = dims[1];
        // The row max is a constant shift; log-softmax is invariant to it.
        let maxes: Vec<T> = self
            .value()
            .data()
            .chunks(k)
            .map(|row| row.iter().copied().fold(T::neg_infinity(), T::max))
            .collect();
        let shift = Var::constant(tensor::broadcast_last(
            &Tensor::from_parts(vec![dims[0]], maxes),
            &dims,
        )?);
        let z = self.sub(&shift)?;
        let lse = z.exp()?.sum_last()?.log()?;
        z.sub(&lse.broadcast_last(&dims)?)
    }

    pub fn softmax(&self) -> Result<Var<T>> {
        self.log_softmax()?.exp()
    }

    /// Batch norm over axis 1 with batch statistics.
    pub fn batch_norm_train(&self, gamma: &Var<T>, beta: &Var<T>, eps: T) -> Result<BatchNormOutput<T>> {
        let dims = self.dims().to_vec();
        if dims.len() < 2 || gamma.dims() != [dims[1]] || beta.dims() != [dims[1]] {
            return Err(Error::shape("batchnorm", &dims, gamma.dims()));
        }
        let (n, c) = (dims[0], dims[1]);
        let inner: usize = dims[2..].iter().product();
        let m = n * inner;
        let x = self.value().data();
        let mut mean = vec![T::zero(); c];
        let mut var = vec![T::zero(); c];
        for s in 0..n {
            for ch in 0..c {
                let base = (s * c + ch) * inner;
                mean[ch] = mean[ch] + x[base..base + inner].iter().copied().sum::<T>();
            }
        }
        mean.iter_mut().for_each(|v| *v = *v / T::of(m as f64));
        for s in 0..n {
            for ch in 0..c {
                let base = (s * c + ch) * inner;
                for &v in &x[base..base + inner] {
                    let d = v - mean[ch];
                    var[ch] = var[ch] + d * d;
                }
            }
        }
        let biased: Vec<T> = var.iter().map(|&v| v / T::of(m as f64)).collect();
        let invstd: Vec<T> = biased.iter().map(|&v| (v + eps).sqrt().recip()).collect();
        let unbiased = var
            .iter()
            .map(|&v| v / T::of(m.saturating_sub(1).max(1) as f64))
            .collect();
        let output = self.normalize_affine(gamma, beta, &mean, invstd, true)?;
        Ok(BatchNormOutput {
            output,
            mean,
            var: unbiased,
        })
    }

    /// Batch norm with fixed (running) statistics.
    pub fn batch_norm_eval(
        &self,
        gamma: &Var<T>,
        beta: &Var<T>,
        running_mean: &[T],
        running_var: &[T],
        eps: T,
    ) -> Result<Var<T>> {
        let dims = self.dims();
        if dims.len() < 2 || gamma.dims() != [dims[1]] || running_mean.len() != dims[1] {
            return Err(Error::shape("batchnorm", dims, gamma.dims()));
        }
        let invstd = running_var.iter().map(|&v| (v + eps).sqrt().recip()).collect();
        self.normalize_affine(gamma, beta, running_mean, invstd, false)
    }

    fn normalize_affine(
        &self,
        gamma: &Var<T>,
        beta: &Var<T>,
        mean: &[T],
        invstd: Vec<T>,
        batch_stats: bool,
    ) -> Result<Var<T>> {
        let dims = self.dims().to_vec();
        let (n, c) = (dims[0], dims[1]);
        let inner: usize = dims[2..].iter().product();
        let x = self.value().data();
        let mut xhat = vec![T::zero(); x.len()];
        let mut y = vec![T::zero(); x.len()];
        for s in 0..n {
            for ch in 0..c {
                let base = (s * c + ch) * inner;
                let (gm, bt) = (gamma.value().data()[ch], beta.value().data()[ch]);
                for k in base..base + inner {
                    xhat[k] = (x[k] - mean[ch]) * invstd[ch];
                    y[k] = gm * xhat[k] + bt;
                }
            }
        }
        let cache = Rc::new(BatchNormCache {
            xhat: Tensor::from_parts(dims.clone(), xhat),
            invstd,
            batch_stats,
        });
        let value = Tensor::from_parts(dims, y).ensure_finite("batchnorm")?;
        Var::record(Op::BatchNorm { cache }, &[self, gamma, beta], value)
    }
}
