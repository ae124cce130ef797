use super::{Scalar, Tensor};
use crate::error::{Error, Result};

fn unary<T: Scalar>(x: &Tensor<T>, op: &'static str, f: impl Fn(T) -> T) -> Result<Tensor<T>> {
    Tensor::from_parts(x.dims.clone(), x.data.iter().map(|&v| f(v)).collect()).ensure_finite(op)
}

/// Binary op over equal dims, or with one side a single-element tensor.
fn binary<T: Scalar>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    op: &'static str,
    f: impl Fn(T, T) -> T,
) -> Result<Tensor<T>> {
    let out = if a.dims == b.dims {
        let data = a.data.iter().zip(&b.data).map(|(&x, &y)| f(x, y)).collect();
        Tensor::from_parts(a.dims.clone(), data)
    } else if b.is_scalar() {
        let y = b.data[0];
        Tensor::from_parts(a.dims.clone(), a.data.iter().map(|&x| f(x, y)).collect())
    } else if a.is_scalar() {
        let x = a.data[0];
        Tensor::from_parts(b.dims.clone(), b.data.iter().map(|&y| f(x, y)).collect())
    } else {
        return Err(Error::shape(op, &a.dims, &b.dims));
    };
    out.ensure_finite(op)
}

pub fn add<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    binary(a, b, "add", |x, y| x + y)
}

pub fn sub<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    binary(a, b, "sub", |x, y| x - y)
}

pub fn mul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    binary(a, b, "mul", |x, y| x * y)
}

pub fn div<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    binary(a, b, "div", |x, y| x / y)
}

pub fn scale<T: Scalar>(x: &Tensor<T>, c: T) -> Result<Tensor<T>> {
    unary(x, "scale", |v| v * c)
}

pub fn add_scalar<T: Scalar>(x: &Tensor<T>, c: T) -> Result<Tensor<T>> {
    unary(x, "add_scalar", |v| v + c)
}

pub fn neg<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    unary(x, "neg", |v| -v)
}

pub fn abs<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    unary(x, "abs", |v| v.abs())
}

/// Sign with `sign(0) = 0`.
pub fn sign<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    unary(x, "sign", |v| {
        if v > T::zero() {
            T::one()
        } else if v < T::zero() {
            -T::one()
        } else {
            T::zero()
        }
    })
}

pub fn pow<T: Scalar>(x: &Tensor<T>, p: T) -> Result<Tensor<T>> {
    unary(x, "pow", |v| v.powf(p))
}

pub fn sqrt<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    unary(x, "sqrt", |v| v.sqrt())
}

/// `1/x`, with `0` mapped to `0`.
pub fn recip_safe<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    unary(x, "recip_safe", |v| if v == T::zero() { v } else { v.recip() })
}

pub fn relu<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    unary(x, "relu", |v| if v > T::zero() { v } else { T::zero() })
}

/// 1 where `x > 0`, else 0 (the ReLU subgradient at 0 is 0).
pub fn relu_mask<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let data = x
        .data
        .iter()
        .map(|&v| if v > T::zero() { T::one() } else { T::zero() })
        .collect();
    Tensor::from_parts(x.dims.clone(), data)
}

pub fn exp<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    unary(x, "exp", |v| v.exp())
}

pub fn log<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    if let Some(v) = x.data.iter().find(|v| **v <= T::zero()) {
        return Err(Error::invalid("log", format!("non-positive input {v}")));
    }
    unary(x, "log", |v| v.ln())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(dims: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::new(dims.to_vec(), v.to_vec()).unwrap()
    }

    #[test]
    fn small_examples() {
        assert_eq!(abs(&t(&[2], &[-1.0, 2.0])).unwrap().data(), &[1.0, 2.0]);
        assert_eq!(pow(&t(&[2], &[2.0, 3.0]), 2.0).unwrap().data(), &[4.0, 9.0]);
        assert_eq!(
            relu(&t(&[3], &[-1.0, 0.0, 2.0])).unwrap().data(),
            &[0.0, 0.0, 2.0]
        );
    }

    #[test]
    fn scalar_broadcast_and_mismatch() {
        let a = t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let s = t(&[1], &[10.0]);
        assert_eq!(add(&a, &s).unwrap().data(), &[11.0, 12.0, 13.0, 14.0]);
        assert_eq!(sub(&s, &a).unwrap().data(), &[9.0, 8.0, 7.0, 6.0]);
        let err = mul(&a, &t(&[3], &[1.0, 1.0, 1.0])).unwrap_err();
        assert!(err.to_string().contains("[2, 2]") && err.to_string().contains("[3]"));
    }

    #[test]
    fn log_rejects_non_positive() {
        assert!(log(&t(&[2], &[1.0, 0.0])).is_err());
        assert!(log(&t(&[1], &[-2.0])).is_err());
    }

    #[test]
    fn non_finite_is_an_error() {
        assert!(matches!(
            exp(&t(&[1], &[1e5])),
            Err(Error::NonFinite { op: "exp" })
        ));
        assert!(div(&t(&[1], &[1.0]), &t(&[1], &[0.0])).is_err());
    }

    #[test]
    fn recip_safe_zero() {
        assert_eq!(recip_safe(&t(&[2], &[0.0, 4.0])).unwrap().data(), &[0.0, 0.25]);
    }
}
