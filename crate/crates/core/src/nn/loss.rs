use std::rc::Rc;

use crate::autograd::Var;
use crate::error::{Error, Result};
use crate::tensor::Scalar;

/// Mean over the batch of `-log softmax(logits)[label]`.
pub fn softmax_cross_entropy<T: Scalar>(logits: &Var<T>, labels: &[usize]) -> Result<Var<T>> {
    let (n, k) = match logits.dims() {
        &[n, k] => (n, k),
        d => return Err(Error::invalid("softmax_cross_entropy", format!("expected [N,K] logits, got {d:?}"))),
    };
    if labels.len() != n {
        return Err(Error::invalid(
            "softmax_cross_entropy",
            format!("{} labels for batch of {n}", labels.len()),
        ));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::invalid(
            "softmax_cross_entropy",
            format!("label {bad} out of range [0, {k})"),
        ));
    }
    logits
        .log_softmax()?
        .select_rows(Rc::new(labels.to_vec()))?
        .sum_all()?
        .scale(-T::one() / T::of(n as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn uniform_logits_give_log_k() {
        let l = Var::constant(Tensor::<f64>::zeros(&[3, 4]));
        let ce = softmax_cross_entropy(&l, &[0, 1, 3]).unwrap();
        assert!((ce.value().item() - 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn confident_correct_logits_give_zero() {
        let mut t = Tensor::<f64>::zeros(&[2, 3]);
        t.data_mut()[1] = 20.0;
        t.data_mut()[5] = 20.0;
        let ce = softmax_cross_entropy(&Var::constant(t), &[1, 2]).unwrap();
        assert!(ce.value().item() < 1e-8);
    }

    #[test]
    fn matches_log_sum_exp_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let t = Tensor::<f64>::from_fn(&[5, 7], |_| rng.random_range(-5.0..5.0));
        let labels = [0, 6, 3, 2, 2];
        let got = softmax_cross_entropy(&Var::constant(t.clone()), &labels)
            .unwrap()
            .value()
            .item();
        let mut want = 0.0;
        for (i, &l) in labels.iter().enumerate() {
            let row = &t.data()[i * 7..(i + 1) * 7];
            let lse = row.iter().map(|v| v.exp()).sum::<f64>().ln();
            want += lse - row[l];
        }
        want /= 5.0;
        assert!((got - want).abs() < 1e-6);
    }

    #[test]
    fn out_of_range_label_errors() {
        let l = Var::constant(Tensor::<f32>::zeros(&[1, 3]));
        assert!(softmax_cross_entropy(&l, &[3]).is_err());
    }
}
