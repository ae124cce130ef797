//! Axis reductions, their broadcasting adjoints, row selection and matmul.

use super::{Scalar, Tensor};
use crate::error::{Error, Result};

pub fn sum_all<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    Tensor::scalar(x.sum_value()).ensure_finite("sum_all")
}

/// Fills `dims` with the single value of `s`.
pub fn expand_scalar<T: Scalar>(s: &Tensor<T>, dims: &[usize]) -> Result<Tensor<T>> {
    if !s.is_scalar() {
        return Err(Error::shape("expand_scalar", s.dims(), &[1]));
    }
    Ok(Tensor::full(dims, s.item()))
}

/// `[N,C,H,W] -> [N,H,W]`, summing over channels.
pub fn sum_channels<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let [n, c, h, w] = x.nchw("sum_channels")?;
    let hw = h * w;
    let mut out = vec![T::zero(); n * hw];
    for s in 0..n {
        let dst = &mut out[s * hw..(s + 1) * hw];
        for ch in 0..c {
            let src = &x.data()[(s * c + ch) * hw..(s * c + ch + 1) * hw];
            dst.iter_mut().zip(src).for_each(|(d, &v)| *d = *d + v);
        }
    }
    Tensor::from_parts(vec![n, h, w], out).ensure_finite("sum_channels")
}

/// `[N,H,W] -> [N,C,H,W]`, repeating each map over `c` channels.
pub fn broadcast_channels<T: Scalar>(x: &Tensor<T>, c: usize) -> Result<Tensor<T>> {
    let [n, h, w] = match x.dims()[..] {
        [n, h, w] => [n, h, w],
        _ => return Err(Error::invalid("broadcast_channels", format!("expected [N,H,W], got {:?}", x.dims()))),
    };
    let hw = h * w;
    let mut out = Vec::with_capacity(n * c * hw);
    for s in 0..n {
        let src = &x.data()[s * hw..(s + 1) * hw];
        for _ in 0..c {
            out.extend_from_slice(src);
        }
    }
    Ok(Tensor::from_parts(vec![n, c, h, w], out))
}

/// `[N,C,H,W] -> [N,H,W]` channel maximum with flat argmax indices (first
/// channel wins ties).
pub fn max_channels<T: Scalar>(x: &Tensor<T>) -> Result<(Tensor<T>, Vec<usize>)> {
    let [n, c, h, w] = x.nchw("max_channels")?;
    let hw = h * w;
    let mut out = Vec::with_capacity(n * hw);
    let mut arg = Vec::with_capacity(n * hw);
    for s in 0..n {
        for p in 0..hw {
            let mut best = s * c * hw + p;
            for ch in 1..c {
                let idx = (s * c + ch) * hw + p;
                if x.data()[idx] > x.data()[best] {
                    best = idx;
                }
            }
            out.push(x.data()[best]);
            arg.push(best);
        }
    }
    Ok((Tensor::from_parts(vec![n, h, w], out), arg))
}

/// Sums over every axis except axis 1: `[N,C,...] -> [C]`.
pub fn reduce_axis1<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    if x.rank() < 2 {
        return Err(Error::invalid("reduce_axis1", format!("need rank >= 2, got {:?}", x.dims())));
    }
    let (n, c) = (x.dims()[0], x.dims()[1]);
    let inner: usize = x.dims()[2..].iter().product();
    let mut out = vec![T::zero(); c];
    for s in 0..n {
        for (ch, o) in out.iter_mut().enumerate() {
            let base = (s * c + ch) * inner;
            *o = *o + x.data()[base..base + inner].iter().copied().sum::<T>();
        }
    }
    Tensor::from_parts(vec![c], out).ensure_finite("reduce_axis1")
}

/// Broadcasts `b: [C]` along axis 1 of `dims = [N,C,...]`.
pub fn broadcast_axis1<T: Scalar>(b: &Tensor<T>, dims: &[usize]) -> Result<Tensor<T>> {
    if dims.len() < 2 || b.dims() != [dims[1]] {
        return Err(Error::shape("broadcast_axis1", b.dims(), dims));
    }
    let (n, c) = (dims[0], dims[1]);
    let inner: usize = dims[2..].iter().product();
    let mut out = Vec::with_capacity(n * c * inner);
    for _ in 0..n {
        for &v in b.data() {
            out.extend(std::iter::repeat_n(v, inner));
        }
    }
    Ok(Tensor::from_parts(dims.to_vec(), out))
}

/// Sums the last axis: `[..., M] -> [...]` (`[M] -> [1]`).
pub fn sum_last<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let m = *x.dims().last().expect("rank >= 1");
    let mut dims = x.dims()[..x.rank() - 1].to_vec();
    if dims.is_empty() {
        dims.push(1);
    }
    let data = x.data().chunks(m).map(|row| row.iter().copied().sum()).collect();
    Tensor::from_parts(dims, data).ensure_finite("sum_last")
}

/// Repeats each element of `x` along a new trailing axis so that the result
/// has dims `dims`.
pub fn broadcast_last<T: Scalar>(x: &Tensor<T>, dims: &[usize]) -> Result<Tensor<T>> {
    let m = *dims.last().ok_or_else(|| Error::invalid("broadcast_last", "empty target dims"))?;
    if x.numel() * m != dims.iter().product::<usize>() {
        return Err(Error::shape("broadcast_last", x.dims(), dims));
    }
    let mut out = Vec::with_capacity(x.numel() * m);
    for &v in x.data() {
        out.extend(std::iter::repeat_n(v, m));
    }
    Ok(Tensor::from_parts(dims.to_vec(), out))
}

/// `out[i] = x[i, labels[i]]` for `x: [N,K]`.
pub fn select_rows<T: Scalar>(x: &Tensor<T>, labels: &[usize]) -> Result<Tensor<T>> {
    let (n, k) = match x.dims() {
        &[n, k] => (n, k),
        d => return Err(Error::invalid("select_rows", format!("expected [N,K], got {d:?}"))),
    };
    if labels.len() != n {
        return Err(Error::invalid("select_rows", format!("{} labels for batch {n}", labels.len())));
    }
    let mut out = Vec::with_capacity(n);
    for (i, &l) in labels.iter().enumerate() {
        if l >= k {
            return Err(Error::invalid("select_rows", format!("label {l} out of range [0, {k})")));
        }
        out.push(x.data()[i * k + l]);
    }
    Ok(Tensor::from_parts(vec![n], out))
}

/// Adjoint of [`select_rows`]: places `g[i]` at `[i, labels[i]]` of an `[N,K]` zero tensor.
pub fn scatter_rows<T: Scalar>(g: &Tensor<T>, labels: &[usize], k: usize) -> Result<Tensor<T>> {
    let n = labels.len();
    if g.numel() != n {
        return Err(Error::invalid("scatter_rows", format!("{} values for {n} labels", g.numel())));
    }
    let mut out = Tensor::zeros(&[n, k]);
    for (i, (&l, &v)) in labels.iter().zip(g.data()).enumerate() {
        if l >= k {
            return Err(Error::invalid("scatter_rows", format!("label {l} out of range [0, {k})")));
        }
        out.data_mut()[i * k + l] = v;
    }
    Ok(out)
}

/// `op(a) · op(b)` for rank-2 operands, where `op` optionally transposes.
pub fn matmul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, trans_a: bool, trans_b: bool) -> Result<Tensor<T>> {
    let (ar, ac) = match a.dims() {
        &[r, c] => (r, c),
        d => return Err(Error::invalid("matmul", format!("lhs must be rank 2, got {d:?}"))),
    };
    let (br, bc) = match b.dims() {
        &[r, c] => (r, c),
        d => return Err(Error::invalid("matmul", format!("rhs must be rank 2, got {d:?}"))),
    };
    let (m, k, rsa, csa) = if trans_a { (ac, ar, 1, ac) } else { (ar, ac, ac, 1) };
    let (k2, n, rsb, csb) = if trans_b { (bc, br, 1, bc) } else { (br, bc, bc, 1) };
    if k != k2 {
        return Err(Error::shape("matmul", a.dims(), b.dims()));
    }
    let mut out = vec![T::zero(); m * n];
    T::gemm(
        m,
        k,
        n,
        T::one(),
        a.data(),
        rsa as isize,
        csa as isize,
        b.data(),
        rsb as isize,
        csb as isize,
        T::zero(),
        &mut out,
        n as isize,
        1,
    );
    Tensor::from_parts(vec![m, n], out).ensure_finite("matmul")
}
