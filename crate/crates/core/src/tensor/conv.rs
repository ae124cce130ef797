//! 2D cross-correlation via im2col + GEMM, with the two adjoint kernels the
//! backward pass (and the backward of the backward) needs.

use super::{Scalar, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub stride: usize,
    pub pad: usize,
}

impl Default for ConvGeom {
    /// Stride 1, no padding.
    fn default() -> Self {
        ConvGeom { stride: 1, pad: 0 }
    }
}

pub fn conv_out_size(size: usize, k: usize, stride: usize, pad: usize) -> Result<usize> {
    if stride == 0 {
        return Err(Error::invalid("conv2d", "stride must be >= 1"));
    }
    if k == 0 || k > size + 2 * pad {
        return Err(Error::invalid(
            "conv2d",
            format!("kernel {k} does not fit input {size} with padding {pad}"),
        ));
    }
    Ok((size + 2 * pad - k) / stride + 1)
}

struct Layout {
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
    stride: usize,
    pad: usize,
}

impl Layout {
    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }

    fn rows(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn cols(&self) -> usize {
        self.oh * self.ow
    }
}

fn im2col<T: Scalar>(x: &[T], l: &Layout, col: &mut [T]) {
    let cols = l.cols();
    for c in 0..l.c {
        let plane = &x[c * l.h * l.w..(c + 1) * l.h * l.w];
        for ki in 0..l.kh {
            for kj in 0..l.kw {
                let row = (c * l.kh + ki) * l.kw + kj;
                let dst = &mut col[row * cols..(row + 1) * cols];
                for oi in 0..l.oh {
                    let ii = (oi * l.stride + ki) as isize - l.pad as isize;
                    let line = &mut dst[oi * l.ow..(oi + 1) * l.ow];
                    if ii < 0 || ii as usize >= l.h {
                        line.iter_mut().for_each(|v| *v = T::zero());
                        continue;
                    }
                    let src = &plane[ii as usize * l.w..(ii as usize + 1) * l.w];
                    for (oj, v) in line.iter_mut().enumerate() {
                        let jj = (oj * l.stride + kj) as isize - l.pad as isize;
                        *v = if jj < 0 || jj as usize >= l.w {
                            T::zero()
                        } else {
                            src[jj as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im_add<T: Scalar>(col: &[T], l: &Layout, x: &mut [T]) {
    let cols = l.cols();
    for c in 0..l.c {
        let plane = &mut x[c * l.h * l.w..(c + 1) * l.h * l.w];
        for ki in 0..l.kh {
            for kj in 0..l.kw {
                let row = (c * l.kh + ki) * l.kw + kj;
                let src = &col[row * cols..(row + 1) * cols];
                for oi in 0..l.oh {
                    let ii = (oi * l.stride + ki) as isize - l.pad as isize;
                    if ii < 0 || ii as usize >= l.h {
                        continue;
                    }
                    let dst = &mut plane[ii as usize * l.w..(ii as usize + 1) * l.w];
                    for oj in 0..l.ow {
                        let jj = (oj * l.stride + kj) as isize - l.pad as isize;
                        if jj >= 0 && (jj as usize) < l.w {
                            dst[jj as usize] = dst[jj as usize] + src[oi * l.ow + oj];
                        }
                    }
                }
            }
        }
    }
}

fn layout(input: [usize; 4], weight: [usize; 4], geom: ConvGeom) -> Result<Layout> {
    let [_, c, h, w] = input;
    let [_, wc, kh, kw] = weight;
    if wc != c {
        return Err(Error::shape("conv2d", &input, &weight));
    }
    Ok(Layout {
        c,
        h,
        w,
        kh,
        kw,
        oh: conv_out_size(h, kh, geom.stride, geom.pad)?,
        ow: conv_out_size(w, kw, geom.stride, geom.pad)?,
        stride: geom.stride,
        pad: geom.pad,
    })
}

fn weight_dims<T: Scalar>(weight: &Tensor<T>) -> Result<[usize; 4]> {
    weight.nchw("conv2d weight")
}

pub fn conv2d<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    geom: ConvGeom,
) -> Result<Tensor<T>> {
    let idims = input.nchw("conv2d")?;
    let wdims = weight_dims(weight)?;
    let l = layout(idims, wdims, geom)?;
    let (n, o) = (idims[0], wdims[0]);
    if let Some(b) = bias {
        if b.dims() != [o] {
            return Err(Error::shape("conv2d bias", b.dims(), &[o]));
        }
    }
    let (rows, cols) = (l.rows(), l.cols());
    let in_per = l.c * l.h * l.w;
    let mut out = vec![T::zero(); n * o * cols];
    let mut col = if l.is_pointwise() {
        Vec::new()
    } else {
        vec![T::zero(); rows * cols]
    };
    for s in 0..n {
        let x = &input.data()[s * in_per..(s + 1) * in_per];
        let rhs: &[T] = if l.is_pointwise() {
            x
        } else {
            im2col(x, &l, &mut col);
            &col
        };
        let y = &mut out[s * o * cols..(s + 1) * o * cols];
        T::gemm(
            o,
            rows,
            cols,
            T::one(),
            weight.data(),
            rows as isize,
            1,
            rhs,
            cols as isize,
            1,
            T::zero(),
            y,
            cols as isize,
            1,
        );
        if let Some(b) = bias {
            for (ch, plane) in y.chunks_mut(cols).enumerate() {
                let bv = b.data()[ch];
                plane.iter_mut().for_each(|v| *v = *v + bv);
            }
        }
    }
    Tensor::from_parts(vec![n, o, l.oh, l.ow], out).ensure_finite("conv2d")
}

/// Gradient of `<g, conv2d(x, w)>` with respect to `x`, for an input of
/// spatial size `in_hw`.
pub fn conv2d_backward_input<T: Scalar>(
    grad_out: &Tensor<T>,
    weight: &Tensor<T>,
    in_hw: (usize, usize),
    geom: ConvGeom,
) -> Result<Tensor<T>> {
    let [n, go, goh, gow] = grad_out.nchw("conv2d_backward_input")?;
    let wdims = weight_dims(weight)?;
    let idims = [n, wdims[1], in_hw.0, in_hw.1];
    let l = layout(idims, wdims, geom)?;
    if go != wdims[0] || goh != l.oh || gow != l.ow {
        return Err(Error::shape(
            "conv2d_backward_input",
            grad_out.dims(),
            &[n, wdims[0], l.oh, l.ow],
        ));
    }
    let (rows, cols) = (l.rows(), l.cols());
    let in_per = l.c * l.h * l.w;
    let mut out = vec![T::zero(); n * in_per];
    let mut col = vec![T::zero(); rows * cols];
    for s in 0..n {
        let g = &grad_out.data()[s * go * cols..(s + 1) * go * cols];
        let dx = &mut out[s * in_per..(s + 1) * in_per];
        let target: &mut [T] = if l.is_pointwise() { dx } else { &mut col };
        // col = W^T g
        T::gemm(
            rows,
            go,
            cols,
            T::one(),
            weight.data(),
            1,
            rows as isize,
            g,
            cols as isize,
            1,
            T::zero(),
            target,
            cols as isize,
            1,
        );
        if !l.is_pointwise() {
            col2im_add(&col, &l, dx);
        }
    }
    Tensor::from_parts(idims.to_vec(), out).ensure_finite("conv2d_backward_input")
}

/// Gradient of `<g, conv2d(x, w)>` with respect to `w`, for a kernel of size
/// `k_hw`.
pub fn conv2d_backward_weight<T: Scalar>(
    input: &Tensor<T>,
    grad_out: &Tensor<T>,
    k_hw: (usize, usize),
    geom: ConvGeom,
) -> Result<Tensor<T>> {
    let idims = input.nchw("conv2d_backward_weight")?;
    let [gn, go, goh, gow] = grad_out.nchw("conv2d_backward_weight")?;
    let wdims = [go, idims[1], k_hw.0, k_hw.1];
    let l = layout(idims, wdims, geom)?;
    if gn != idims[0] || goh != l.oh || gow != l.ow {
        return Err(Error::shape(
            "conv2d_backward_weight",
            grad_out.dims(),
            &[idims[0], go, l.oh, l.ow],
        ));
    }
    let (rows, cols) = (l.rows(), l.cols());
    let in_per = l.c * l.h * l.w;
    let mut out = vec![T::zero(); go * rows];
    let mut col = if l.is_pointwise() {
        Vec::new()
    } else {
        vec![T::zero(); rows * cols]
    };
    for s in 0..gn {
        let x = &input.data()[s * in_per..(s + 1) * in_per];
        let rhs: &[T] = if l.is_pointwise() {
            x
        } else {
            im2col(x, &l, &mut col);
            &col
        };
        let g = &grad_out.data()[s * go * cols..(s + 1) * go * cols];
        // dW += g col^T
        T::gemm(
            go,
            cols,
            rows,
            T::one(),
            g,
            cols as isize,
            1,
            rhs,
            1,
            cols as isize,
            T::one(),
            &mut out,
            rows as isize,
            1,
        );
    }
    Tensor::from_parts(wdims.to_vec(), out).ensure_finite("conv2d_backward_weight")
}
