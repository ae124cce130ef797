use super::{Scalar, Tensor};
use crate::error::{Error, Result};

pub struct MaxPoolOutput<T> {
    pub output: Tensor<T>,
    /// Flat input index of each output element's maximum.
    pub argmax: Vec<usize>,
}

pub fn maxpool_out_size(size: usize, k: usize, stride: usize) -> Result<usize> {
    if k == 0 || stride == 0 {
        return Err(Error::invalid("maxpool2d", "kernel and stride must be >= 1"));
    }
    if k > size {
        return Err(Error::invalid(
            "maxpool2d",
            format!("kernel {k} larger than spatial size {size}"),
        ));
    }
    Ok((size - k) / stride + 1)
}

/// Max pooling; ties resolve to the first element in row-major window order.
pub fn maxpool2d<T: Scalar>(input: &Tensor<T>, k: usize, stride: usize) -> Result<MaxPoolOutput<T>> {
    let [n, c, h, w] = input.nchw("maxpool2d")?;
    let oh = maxpool_out_size(h, k, stride)?;
    let ow = maxpool_out_size(w, k, stride)?;
    let x = input.data();
    let mut out = Vec::with_capacity(n * c * oh * ow);
    let mut argmax = Vec::with_capacity(n * c * oh * ow);
    for plane in 0..n * c {
        let base = plane * h * w;
        for oi in 0..oh {
            for oj in 0..ow {
                let mut best = base + oi * stride * w + oj * stride;
                for a in 0..k {
                    for b in 0..k {
                        let idx = base + (oi * stride + a) * w + oj * stride + b;
                        if x[idx] > x[best] {
                            best = idx;
                        }
                    }
                }
                out.push(x[best]);
                argmax.push(best);
            }
        }
    }
    Ok(MaxPoolOutput {
        output: Tensor::from_parts(vec![n, c, oh, ow], out),
        argmax,
    })
}

/// Adds `g[i]` into position `index[i]` of a zero tensor with dims `dims`.
pub fn scatter_by_index<T: Scalar>(g: &Tensor<T>, index: &[usize], dims: &[usize]) -> Result<Tensor<T>> {
    if g.numel() != index.len() {
        return Err(Error::invalid(
            "scatter_by_index",
            format!("{} values for {} indices", g.numel(), index.len()),
        ));
    }
    let mut out = Tensor::zeros(dims);
    let n = out.numel();
    for (&i, &v) in index.iter().zip(g.data()) {
        if i >= n {
            return Err(Error::invalid("scatter_by_index", format!("index {i} >= {n}")));
        }
        out.data_mut()[i] = out.data()[i] + v;
    }
    Ok(out)
}

/// `out[i] = x[index[i]]`, shaped as `dims`.
pub fn gather_by_index<T: Scalar>(x: &Tensor<T>, index: &[usize], dims: &[usize]) -> Result<Tensor<T>> {
    if dims.iter().product::<usize>() != index.len() {
        return Err(Error::invalid(
            "gather_by_index",
            format!("dims {dims:?} do not hold {} indices", index.len()),
        ));
    }
    let data = index
        .iter()
        .map(|&i| {
            x.data()
                .get(i)
                .copied()
                .ok_or_else(|| Error::invalid("gather_by_index", format!("index {i} out of range")))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Tensor::from_parts(dims.to_vec(), data))
}

pub fn global_avgpool<T: Scalar>(input: &Tensor<T>) -> Result<Tensor<T>> {
    let [n, c, h, w] = input.nchw("global_avgpool")?;
    let inv = T::one() / T::of((h * w) as f64);
    let data = input
        .data()
        .chunks(h * w)
        .map(|plane| plane.iter().copied().sum::<T>() * inv)
        .collect();
    Tensor::from_parts(vec![n, c], data).ensure_finite("global_avgpool")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn two_by_two_max() {
        let x = Tensor::<f32>::new(vec![1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let p = maxpool2d(&x, 2, 2).unwrap();
        assert_eq!(p.output.data(), &[4.0]);
        assert_eq!(p.argmax, vec![3]);
    }

    #[test]
    fn ties_route_to_first_index() {
        let x = Tensor::<f32>::full(&[1, 1, 2, 2], 5.0);
        let p = maxpool2d(&x, 2, 2).unwrap();
        assert_eq!(p.output.data(), &[5.0]);
        let g = Tensor::<f32>::ones(&[1, 1, 1, 1]);
        let back = scatter_by_index(&g, &p.argmax, x.dims()).unwrap();
        assert_eq!(back.data(), &[1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn matches_window_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = Tensor::<f64>::from_fn(&[1, 2, 4, 4], |_| rng.random_range(-1.0..1.0));
        let p = maxpool2d(&x, 2, 2).unwrap();
        assert_eq!(p.output.dims(), &[1, 2, 2, 2]);
        for c in 0..2 {
            for i in 0..2 {
                for j in 0..2 {
                    let mut m = f64::NEG_INFINITY;
                    for a in 0..2 {
                        for b in 0..2 {
                            m = m.max(x.data()[c * 16 + (2 * i + a) * 4 + 2 * j + b]);
                        }
                    }
                    assert_eq!(p.output.data()[c * 4 + i * 2 + j], m);
                }
            }
        }
    }

    #[test]
    fn kernel_larger_than_input_errors() {
        let x = Tensor::<f32>::ones(&[1, 1, 2, 2]);
        assert!(maxpool2d(&x, 3, 1).is_err());
    }

    #[test]
    fn avgpool_examples() {
        let x = Tensor::<f64>::new(vec![1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(global_avgpool(&x).unwrap().data(), &[2.5]);
        let c = Tensor::<f64>::full(&[2, 3, 3, 5], 0.7);
        for v in global_avgpool(&c).unwrap().data() {
            assert!((v - 0.7).abs() < 1e-15);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let r = Tensor::<f64>::from_fn(&[2, 3, 4, 5], |_| rng.random_range(-1.0..1.0));
        let got = global_avgpool(&r).unwrap();
        for (p, v) in got.data().iter().enumerate() {
            let mut s = 0.0;
            for k in 0..20 {
                s += r.data()[p * 20 + k];
            }
            assert!((v - s / 20.0).abs() < 1e-7);
        }
    }

    #[test]
    fn gather_inverts_scatter_positions() {
        let x = Tensor::<f32>::from_fn(&[6], |i| i as f32);
        let g = gather_by_index(&x, &[4, 1], &[2]).unwrap();
        assert_eq!(g.data(), &[4.0, 1.0]);
    }
}
