//! Activation-based spatial attention maps.
//!
//! A mapping function reduces an activation tensor `[N,C,H,W]` over channels
//! to a non-negative map `[N,H,W]`:
//!
//! * `sum_abs_p`: `Σ_c |A_c|^p`
//! * `max_abs_p`: `max_c |A_c|^p`
//!
//! Maps are compared after flattening and per-sample normalization.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autograd::Var;
use crate::error::{Error, Result};
use crate::tensor::Scalar;
use crate::transfer::TransferSpec;

pub const NORMALIZE_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MappingKind {
    SumAbsPow,
    MaxAbsPow,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MappingFn {
    kind: MappingKind,
    p: f64,
}

impl MappingFn {
    pub fn new(kind: MappingKind, p: f64) -> Result<Self> {
        if !(p >= 1.0 && p.is_finite()) {
            return Err(Error::Config(format!("mapping exponent must be >= 1, got {p}")));
        }
        Ok(MappingFn { kind, p })
    }

    pub fn sum(p: f64) -> Result<Self> {
        Self::new(MappingKind::SumAbsPow, p)
    }

    pub fn max(p: f64) -> Result<Self> {
        Self::new(MappingKind::MaxAbsPow, p)
    }

    pub fn kind(&self) -> MappingKind {
        self.kind
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn apply<T: Scalar>(&self, activation: &Var<T>) -> Result<Var<T>> {
        let powered = abs_pow(activation, self.p)?;
        match self.kind {
            MappingKind::SumAbsPow => powered.sum_channels(),
            MappingKind::MaxAbsPow => powered.max_channels(),
        }
    }
}

impl Default for MappingFn {
    /// Sum of squares.
    fn default() -> Self {
        MappingFn {
            kind: MappingKind::SumAbsPow,
            p: 2.0,
        }
    }
}

impl fmt::Display for MappingFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match self.kind {
            MappingKind::SumAbsPow => "sum",
            MappingKind::MaxAbsPow => "max",
        };
        write!(f, "{kind}{}", self.p)
    }
}

impl FromStr for MappingFn {
    type Err = Error;

    /// Parses `sum1`, `sum2`, `sum4`, `max1`, ... (`sum<p>` / `max<p>`).
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("unknown mapping `{s}` (expected sum<p> or max<p>)"));
        let (kind, p) = if let Some(p) = s.strip_prefix("sum") {
            (MappingKind::SumAbsPow, p)
        } else if let Some(p) = s.strip_prefix("max") {
            (MappingKind::MaxAbsPow, p)
        } else {
            return Err(bad());
        };
        MappingFn::new(kind, p.parse().map_err(|_| bad())?)
    }
}

fn abs_pow<T: Scalar>(a: &Var<T>, p: f64) -> Result<Var<T>> {
    if p == 2.0 {
        // |a|^2 = a^2 keeps the gradient free of the sign kink.
        a.square()
    } else if p == 1.0 {
        a.abs()
    } else {
        a.abs()?.pow(T::of(p))
    }
}

/// A per-sample spatial map `[N,H,W]` with the tap it came from.
#[derive(Debug, Clone)]
pub struct AttentionMap<T: Scalar> {
    pub values: Var<T>,
    pub source: String,
}

impl<T: Scalar> AttentionMap<T> {
    /// `vec(F(A))` per sample: `[N, H*W]`.
    pub fn flattened(&self) -> Result<Var<T>> {
        self.values.flatten_samples()
    }
}

pub fn map_sum_abs_p<T: Scalar>(activation: &Var<T>, p: f64) -> Result<AttentionMap<T>> {
    Ok(AttentionMap {
        values: MappingFn::sum(p)?.apply(activation)?,
        source: String::new(),
    })
}

pub fn map_max_abs_p<T: Scalar>(activation: &Var<T>, p: f64) -> Result<AttentionMap<T>> {
    Ok(AttentionMap {
        values: MappingFn::max(p)?.apply(activation)?,
        source: String::new(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MapNorm {
    #[default]
    L2,
    L1,
}

impl FromStr for MapNorm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "l2" => Ok(MapNorm::L2),
            "l1" => Ok(MapNorm::L1),
            _ => Err(Error::Config(format!("unknown map norm `{s}` (expected l2 or l1)"))),
        }
    }
}

/// Row-wise `Q / (‖Q‖ + eps)` for flattened maps `[N, M]`. An all-zero row
/// stays zero.
pub fn normalize_map<T: Scalar>(q: &Var<T>, norm: MapNorm, eps: f64) -> Result<Var<T>> {
    let dims = q.dims().to_vec();
    if dims.len() != 2 {
        return Err(Error::invalid("normalize_map", format!("expected [N, M], got {dims:?}")));
    }
    let norms = match norm {
        MapNorm::L2 => q.square()?.sum_last()?.sqrt()?,
        MapNorm::L1 => q.abs()?.sum_last()?,
    };
    q.div(&norms.add_scalar(T::of(eps))?.broadcast_last(&dims)?)
}

/// A matched student/teacher map pair, flattened to `[N, M]`.
#[derive(Debug, Clone)]
pub struct MapPair<T: Scalar> {
    pub student_tap: String,
    pub teacher_tap: String,
    pub student: Var<T>,
    /// Detached: carries no gradient.
    pub teacher: Var<T>,
}

fn find<'a, T: Scalar>(taps: &'a [(String, Var<T>)], name: &str) -> Result<&'a Var<T>> {
    taps.iter()
        .find(|(n, _)| n == name)
        .map(|(_, v)| v)
        .ok_or_else(|| Error::UnknownTap {
            name: name.to_string(),
            available: taps.iter().map(|(n, _)| n.clone()).collect(),
        })
}

/// Computes both maps for every `(teacher tap, student tap)` pair in `spec`.
/// When spatial sizes differ the student map is bilinearly resized to the
/// teacher's size.
pub fn pair_maps<T: Scalar>(
    teacher_taps: &[(String, Var<T>)],
    student_taps: &[(String, Var<T>)],
    spec: &TransferSpec,
) -> Result<Vec<MapPair<T>>> {
    spec.pairs
        .iter()
        .map(|(t_name, s_name)| {
            let t_act = find(teacher_taps, t_name)?.detach();
            let s_act = find(student_taps, s_name)?;
            if t_act.dims()[0] != s_act.dims()[0] {
                return Err(Error::shape("pair_maps", t_act.dims(), s_act.dims()));
            }
            let t_map = spec.mapping.apply(&t_act)?;
            let mut s_map = spec.mapping.apply(s_act)?;
            let (th, tw) = (t_map.dims()[1], t_map.dims()[2]);
            if s_map.dims()[1..] != [th, tw] {
                s_map = s_map.resize_bilinear(th, tw)?;
            }
            Ok(MapPair {
                student_tap: s_name.clone(),
                teacher_tap: t_name.clone(),
                student: s_map.flatten_samples()?,
                teacher: t_map.flatten_samples()?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::{grad, Tape};
    use crate::tensor::Tensor;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn planes() -> Var<f64> {
        Var::constant(
            Tensor::new(vec![1, 2, 2, 2], vec![1.0, -2.0, 3.0, 0.0, -1.0, 2.0, 0.0, 4.0]).unwrap(),
        )
    }

    #[test]
    fn sum_maps_of_two_planes() {
        let m1 = map_sum_abs_p(&planes(), 1.0).unwrap();
        assert_eq!(m1.values.value().data(), &[2.0, 4.0, 3.0, 4.0]);
        assert_eq!(m1.values.dims(), &[1, 2, 2]);
        let m2 = map_sum_abs_p(&planes(), 2.0).unwrap();
        assert_eq!(m2.values.value().data(), &[2.0, 8.0, 9.0, 16.0]);
    }

    #[test]
    fn max_map_of_two_planes() {
        let m = map_max_abs_p(&planes(), 1.0).unwrap();
        assert_eq!(m.values.value().data(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn single_nonnegative_channel_is_identity() {
        let x = Tensor::<f64>::new(vec![1, 1, 2, 2], vec![0.5, 0.0, 2.0, 3.0]).unwrap();
        let m = map_sum_abs_p(&Var::constant(x.clone()), 1.0).unwrap();
        assert_eq!(m.values.value().data(), x.data());
        let mx = map_max_abs_p(&Var::constant(x.clone()), 3.0).unwrap();
        let want: Vec<f64> = x.data().iter().map(|v| v.powi(3)).collect();
        assert_eq!(mx.values.value().data(), &want[..]);
    }

    #[test]
    fn exponent_below_one_rejected() {
        assert!(MappingFn::sum(0.5).is_err());
        assert!("max0.9".parse::<MappingFn>().is_err());
        assert_eq!("sum2".parse::<MappingFn>().unwrap(), MappingFn::default());
        assert_eq!("max1".parse::<MappingFn>().unwrap().kind(), MappingKind::MaxAbsPow);
        assert!("avg2".parse::<MappingFn>().is_err());
    }

    #[test]
    fn max_map_gradient_goes_to_first_argmax() {
        let tape = Tape::new();
        let a = tape.leaf(Tensor::<f64>::new(vec![1, 3, 1, 1], vec![2.0, -2.0, 1.0]).unwrap());
        let m = map_max_abs_p(&a, 1.0).unwrap().values.sum_all().unwrap();
        let g = grad(&m, &[&a], false).unwrap();
        assert_eq!(g[0].value().data(), &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn normalize_examples() {
        let q = Var::constant(Tensor::<f64>::new(vec![1, 2], vec![3.0, 4.0]).unwrap());
        let n = normalize_map(&q, MapNorm::L2, 0.0).unwrap();
        assert!((n.value().data()[0] - 0.6).abs() < 1e-15);
        assert!((n.value().data()[1] - 0.8).abs() < 1e-15);
        let z = Var::constant(Tensor::<f64>::zeros(&[2, 3]));
        let nz = normalize_map(&z, MapNorm::L2, NORMALIZE_EPS).unwrap();
        assert!(nz.value().data().iter().all(|&v| v == 0.0));
        let l1 = normalize_map(&q, MapNorm::L1, 0.0).unwrap();
        assert!((l1.value().data()[0] - 3.0 / 7.0).abs() < 1e-15);
    }

    #[test]
    fn zero_map_gradient_is_finite() {
        let tape = Tape::new();
        let z = tape.leaf(Tensor::<f64>::zeros(&[1, 4]));
        let n = normalize_map(&z, MapNorm::L2, NORMALIZE_EPS).unwrap().sum_all().unwrap();
        let g = grad(&n, &[&z], false).unwrap();
        assert!(g[0].value().all_finite());
    }

    #[test]
    fn normalized_maps_have_unit_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..100 {
            let m = rng.random_range(1..50);
            let q = Tensor::<f64>::from_fn(&[1, m], |_| rng.random_range(0.0..10.0));
            let n = normalize_map(&Var::constant(q), MapNorm::L2, NORMALIZE_EPS).unwrap();
            let norm = n.value().data().iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() < 1e-5, "{norm}");
        }
    }

    fn taps(name: &str, dims: &[usize], seed: u64) -> Vec<(String, Var<f64>)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        vec![(
            name.to_string(),
            Var::constant(Tensor::from_fn(dims, |_| rng.random_range(-1.0..1.0))),
        )]
    }

    #[test]
    fn pairing_resizes_student_maps_only_when_needed() {
        let spec = TransferSpec::new(vec![("t".into(), "s".into())]);
        let same = pair_maps(&taps("t", &[2, 4, 8, 8], 0), &taps("s", &[2, 3, 8, 8], 1), &spec).unwrap();
        assert_eq!(same[0].student.dims(), &[2, 64]);
        assert_eq!(same[0].teacher.dims(), &[2, 64]);
        let diff = pair_maps(&taps("t", &[2, 4, 8, 8], 0), &taps("s", &[2, 3, 16, 16], 1), &spec).unwrap();
        assert_eq!(diff[0].student.dims(), &[2, 64]);
        let none = pair_maps(&taps("t", &[2, 4, 8, 8], 0), &taps("s", &[2, 3, 8, 8], 1), &TransferSpec::new(vec![])).unwrap();
        assert!(none.is_empty());
    }

    #[test]
    fn pairing_unknown_tap_lists_available() {
        let spec = TransferSpec::new(vec![("t".into(), "missing".into())]);
        match pair_maps(&taps("t", &[1, 2, 4, 4], 0), &taps("s", &[1, 2, 4, 4], 1), &spec) {
            Err(Error::UnknownTap { name, available }) => {
                assert_eq!(name, "missing");
                assert_eq!(available, vec!["s".to_string()]);
            }
            other => panic!("expected UnknownTap, got {other:?}"),
        }
    }

    #[test]
    fn teacher_maps_carry_no_gradient() {
        let tape = Tape::new();
        let t = tape.leaf(Tensor::<f64>::ones(&[1, 2, 4, 4]));
        let s = tape.leaf(Tensor::<f64>::full(&[1, 2, 4, 4], 0.5));
        let spec = TransferSpec::new(vec![("t".into(), "s".into())]);
        let pairs = pair_maps(&[("t".into(), t.clone())], &[("s".into(), s.clone())], &spec).unwrap();
        let obj = pairs[0].student.mul(&pairs[0].teacher).unwrap().sum_all().unwrap();
        let g = grad(&obj, &[&t, &s], false).unwrap();
        assert!(g[0].value().data().iter().all(|&v| v == 0.0));
        assert!(g[1].value().data().iter().any(|&v| v != 0.0));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        const MAPPINGS: [(MappingKind, f64); 5] = [
            (MappingKind::SumAbsPow, 1.0),
            (MappingKind::SumAbsPow, 2.0),
            (MappingKind::SumAbsPow, 4.0),
            (MappingKind::MaxAbsPow, 1.0),
            (MappingKind::MaxAbsPow, 2.5),
        ];

        fn activation() -> impl Strategy<Value = Tensor<f64>> {
            (1usize..4, 1usize..5, 1usize..5).prop_flat_map(|(c, h, w)| {
                prop::collection::vec(-2.0f64..2.0, c * h * w)
                    .prop_map(move |d| Tensor::new(vec![1, c, h, w], d).unwrap())
            })
        }

        fn map(kind: MappingKind, p: f64, a: &Tensor<f64>) -> Vec<f64> {
            let f = MappingFn::new(kind, p).unwrap();
            f.apply(&Var::constant(a.clone())).unwrap().value().data().to_vec()
        }

        fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
            a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol * x.abs().max(y.abs()).max(1.0))
        }

        proptest! {
            #[test]
            fn homogeneous(a in activation(), c in -3.0f64..3.0) {
                for (kind, p) in MAPPINGS {
                    let scaled = Tensor::from_fn(a.dims(), |i| c * a.data()[i]);
                    let want: Vec<f64> = map(kind, p, &a).iter().map(|v| c.abs().powf(p) * v).collect();
                    prop_assert!(close(&map(kind, p, &scaled), &want, 1e-5));
                }
            }

            #[test]
            fn channel_permutation_invariant(a in activation(), shift in 0usize..4) {
                let [_, c, h, w] = [a.dims()[0], a.dims()[1], a.dims()[2], a.dims()[3]];
                let plane = h * w;
                let rolled = Tensor::from_fn(a.dims(), |i| {
                    let (ch, rest) = (i / plane, i % plane);
                    a.data()[((ch + shift) % c) * plane + rest]
                });
                for (kind, p) in MAPPINGS {
                    prop_assert!(close(&map(kind, p, &a), &map(kind, p, &rolled), 1e-12));
                }
            }

            #[test]
            fn monotone_in_magnitude(a in activation(), loc in 0usize..64, bump in 0.0f64..2.0) {
                let k = loc % a.numel();
                let mut b = a.clone();
                let v = b.data()[k];
                b.data_mut()[k] = v + bump * if v < 0.0 { -1.0 } else { 1.0 };
                let pos = k % (a.dims()[2] * a.dims()[3]);
                for (kind, p) in MAPPINGS {
                    prop_assert!(map(kind, p, &b)[pos] >= map(kind, p, &a)[pos]);
                }
            }

            #[test]
            fn normalized_maps_scale_invariant(a in activation(), c in 0.01f64..50.0) {
                let scaled = Tensor::from_fn(a.dims(), |i| c * a.data()[i]);
                for (kind, p) in MAPPINGS {
                    let f = MappingFn::new(kind, p).unwrap();
                    let norm = |t: &Tensor<f64>| {
                        let q = f.apply(&Var::constant(t.clone())).unwrap().flatten_samples().unwrap();
                        normalize_map(&q, MapNorm::L2, 0.0).unwrap().value().data().to_vec()
                    };
                    prop_assert!(close(&norm(&a), &norm(&scaled), 1e-5));
                }
            }
        }
    }
}
