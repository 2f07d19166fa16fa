use crate::error::{Error, Result};
use crate::real::Real;

/// Max-subtracted softmax over the whole slice.
pub fn softmax<T: Real>(logits: &[T]) -> Vec<T> {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let mut out: Vec<T> = logits.iter().map(|&v| (v - max).exp()).collect();
    let sum: T = out.iter().copied().sum();
    out.iter_mut().for_each(|v| *v = (*v / sum).flush());
    out
}

/// Cross-entropy of a joint softmax against a one-hot label.
///
/// Returns `(−log p[label], ∂loss/∂logits)`.
pub fn softmax_ce<T: Real>(logits: &[T], label: usize) -> Result<(T, Vec<T>)> {
    if label >= logits.len() {
        return Err(Error::Label(format!("label {label} outside {} cells", logits.len())));
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::Label("non-finite logits".into()));
    }
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let sum: T = logits.iter().map(|&v| (v - max).exp()).sum();
    let log_z = max + sum.ln();
    let loss = log_z - logits[label];
    let mut grad: Vec<T> = logits.iter().map(|&v| (v - log_z).exp().flush()).collect();
    grad[label] -= T::one();
    Ok((loss, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn saturated_label_has_zero_loss() {
        let (loss, _) = softmax_ce(&[0.0f64, 800.0, -3.0], 1).unwrap();
        assert!(loss.abs() < 1e-12);
    }

    #[test]
    fn uniform_logits_give_log_m() {
        let (loss, grad) = softmax_ce(&[0.25f64; 64], 5).unwrap();
        assert!((loss - 64f64.ln()).abs() < 1e-12);
        assert!(grad.iter().sum::<f64>().abs() < 1e-12);
    }

    #[test]
    fn gradient_sums_to_zero() {
        let logits: Vec<f64> = (0..37).map(|i| ((i * 7919) % 23) as f64 * 0.37 - 4.0).collect();
        let (_, grad) = softmax_ce(&logits, 11).unwrap();
        assert!(grad.iter().sum::<f64>().abs() < 1e-12);
        let p = softmax(&logits);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn bad_labels_are_rejected() {
        assert!(matches!(softmax_ce(&[1.0f32, 2.0], 2), Err(Error::Label(_))));
        assert!(softmax_ce(&[f64::NAN, 2.0], 0).is_err());
    }
}
