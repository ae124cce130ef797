use super::{Scalar, Tensor};
use crate::error::{Error, Result};

fn split_hw(dims: &[usize], op: &'static str) -> Result<(usize, usize, usize)> {
    if dims.len() < 2 {
        return Err(Error::invalid(op, format!("need rank >= 2, got dims {dims:?}")));
    }
    let h = dims[dims.len() - 2];
    let w = dims[dims.len() - 1];
    let planes = dims[..dims.len() - 2].iter().product();
    Ok((planes, h, w))
}

/// Reverses the last axis.
pub fn flip_h<T: Scalar>(input: &Tensor<T>) -> Result<Tensor<T>> {
    let (_, _, w) = split_hw(input.dims(), "flip_h")?;
    let mut data = input.data().to_vec();
    data.chunks_mut(w).for_each(|row| row.reverse());
    Ok(Tensor::from_parts(input.dims().to_vec(), data))
}

/// 1D corner-aligned interpolation taps: `(i0, i1, weight of i1)` per output.
fn taps(src: usize, dst: usize) -> Vec<(usize, usize, f64)> {
    (0..dst)
        .map(|i| {
            let pos = if dst > 1 {
                i as f64 * (src - 1) as f64 / (dst - 1) as f64
            } else {
                0.0
            };
            let i0 = (pos.floor() as usize).min(src - 1);
            let i1 = (i0 + 1).min(src - 1);
            (i0, i1, pos - i0 as f64)
        })
        .collect()
}

/// Bilinear resize of the last two axes with aligned corners.
pub fn resize_bilinear<T: Scalar>(input: &Tensor<T>, out_h: usize, out_w: usize) -> Result<Tensor<T>> {
    let (planes, h, w) = split_hw(input.dims(), "resize_bilinear")?;
    if out_h == 0 || out_w == 0 {
        return Err(Error::invalid("resize_bilinear", "output size must be >= 1"));
    }
    if (h, w) == (out_h, out_w) {
        return Ok(input.clone());
    }
    let ty = taps(h, out_h);
    let tx = taps(w, out_w);
    let mut out = Vec::with_capacity(planes * out_h * out_w);
    for plane in input.data().chunks(h * w) {
        for &(y0, y1, wy) in &ty {
            let (wy, uy) = (T::of(wy), T::of(1.0 - wy));
            for &(x0, x1, wx) in &tx {
                let (wx, ux) = (T::of(wx), T::of(1.0 - wx));
                let top = plane[y0 * w + x0] * ux + plane[y0 * w + x1] * wx;
                let bot = plane[y1 * w + x0] * ux + plane[y1 * w + x1] * wx;
                out.push(top * uy + bot * wy);
            }
        }
    }
    let mut dims = input.dims().to_vec();
    let r = dims.len();
    dims[r - 2] = out_h;
    dims[r - 1] = out_w;
    Tensor::from_parts(dims, out).ensure_finite("resize_bilinear")
}

/// Adjoint of [`resize_bilinear`]: maps a gradient of size `[.., out_h, out_w]`
/// back onto the `[.., h, w]` source grid.
pub fn resize_bilinear_transpose<T: Scalar>(grad: &Tensor<T>, h: usize, w: usize) -> Result<Tensor<T>> {
    let (planes, out_h, out_w) = split_hw(grad.dims(), "resize_bilinear_transpose")?;
    if h == 0 || w == 0 {
        return Err(Error::invalid("resize_bilinear_transpose", "source size must be >= 1"));
    }
    if (h, w) == (out_h, out_w) {
        return Ok(grad.clone());
    }
    let ty = taps(h, out_h);
    let tx = taps(w, out_w);
    let mut out = vec![T::zero(); planes * h * w];
    for (plane, src) in out.chunks_mut(h * w).zip(grad.data().chunks(out_h * out_w)) {
        for (i, &(y0, y1, wy)) in ty.iter().enumerate() {
            let (wy, uy) = (T::of(wy), T::of(1.0 - wy));
            for (j, &(x0, x1, wx)) in tx.iter().enumerate() {
                let (wx, ux) = (T::of(wx), T::of(1.0 - wx));
                let g = src[i * out_w + j];
                plane[y0 * w + x0] = plane[y0 * w + x0] + g * uy * ux;
                plane[y0 * w + x1] = plane[y0 * w + x1] + g * uy * wx;
                plane[y1 * w + x0] = plane[y1 * w + x0] + g * wy * ux;
                plane[y1 * w + x1] = plane[y1 * w + x1] + g * wy * wx;
            }
        }
    }
    let mut dims = grad.dims().to_vec();
    let r = dims.len();
    dims[r - 2] = h;
    dims[r - 1] = w;
    Tensor::from_parts(dims, out).ensure_finite("resize_bilinear_transpose")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn t(dims: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::new(dims.to_vec(), v.to_vec()).unwrap()
    }

    #[test]
    fn flip_examples() {
        let x = t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(flip_h(&x).unwrap().data(), &[2.0, 1.0, 4.0, 3.0]);
        let cols = t(&[2, 3], &[1.0, 1.0, 1.0, 2.0, 2.0, 2.0]);
        assert_eq!(flip_h(&cols).unwrap(), cols);
        assert!(flip_h(&t(&[3], &[1.0, 2.0, 3.0])).is_err());
    }

    #[test]
    fn flip_is_involution() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Tensor::<f64>::from_fn(&[2, 3, 4, 5], |_| rng.random_range(-1.0..1.0));
        assert_eq!(flip_h(&flip_h(&x).unwrap()).unwrap(), x);
    }

    #[test]
    fn resize_examples() {
        let x = t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(resize_bilinear(&x, 2, 2).unwrap(), x);
        let one = t(&[1, 1], &[5.0]);
        assert_eq!(resize_bilinear(&one, 2, 2).unwrap().data(), &[5.0; 4]);
        let ramp = t(&[2, 2], &[0.0, 1.0, 0.0, 1.0]);
        let r = resize_bilinear(&ramp, 2, 3).unwrap();
        assert_eq!(r.data(), &[0.0, 0.5, 1.0, 0.0, 0.5, 1.0]);
    }

    #[test]
    fn resize_preserves_constants_and_corners() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let c = Tensor::<f64>::full(&[3, 4, 7], 2.5);
        assert!(resize_bilinear(&c, 9, 2)
            .unwrap()
            .data()
            .iter()
            .all(|&v| v == 2.5));
        let x = Tensor::<f64>::from_fn(&[5, 6], |_| rng.random_range(-1.0..1.0));
        let r = resize_bilinear(&x, 3, 11).unwrap();
        let d = r.data();
        assert_eq!(d[0], x.data()[0]);
        assert_eq!(d[10], x.data()[5]);
        assert_eq!(d[22], x.data()[24]);
        assert_eq!(d[32], x.data()[29]);
    }

    #[test]
    fn transpose_is_adjoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = Tensor::<f64>::from_fn(&[2, 16, 16], |_| rng.random_range(-1.0..1.0));
        let g = Tensor::<f64>::from_fn(&[2, 8, 8], |_| rng.random_range(-1.0..1.0));
        let y = resize_bilinear(&x, 8, 8).unwrap();
        let gt = resize_bilinear_transpose(&g, 16, 16).unwrap();
        let lhs: f64 = y.data().iter().zip(g.data()).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.data().iter().zip(gt.data()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }
}
