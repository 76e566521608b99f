use alloc::vec;

use super::LossValue;
use crate::error::{Error, Result};
use crate::field::{LabelMap, ProbabilityField};

/// Probabilities are clamped to at least this before taking the log.
pub const PROB_CLAMP: f64 = 1e-12;

/// Pixel-averaged negative log-likelihood of the labelled class.
///
/// The gradient is with respect to `pred`. Where the clamp is active the loss
/// is flat in that coordinate, so its gradient entry is zero.
pub fn cross_entropy_loss(pred: &ProbabilityField, labels: &LabelMap) -> Result<LossValue> {
    pred.expect_matches_labels(labels, "cross-entropy")?;
    let n = pred.plane_len();
    let inv_n = 1.0 / n as f64;
    let mut gradient = vec![0.0; pred.data().len()];
    let mut total = 0.0;
    for (p, &label) in labels.data().iter().enumerate() {
        let idx = label as usize * n + p;
        let prob = pred.data()[idx];
        if prob > PROB_CLAMP {
            total -= libm::log(prob);
            gradient[idx] = -inv_n / prob;
        } else {
            total -= libm::log(PROB_CLAMP);
        }
    }
    let value = total * inv_n;
    if !value.is_finite() {
        return Err(Error::NonFinite("cross-entropy"));
    }
    Ok(LossValue::new(value, gradient))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::one_hot;

    #[test]
    fn exact_one_hot_is_zero() {
        let labels = LabelMap::new(2, 3, 3, vec![0, 1, 2, 2, 1, 0]).unwrap();
        let pred = one_hot(&labels, 3).unwrap();
        let v = cross_entropy_loss(&pred, &labels).unwrap();
        assert_eq!(v.value, 0.0);
    }

    #[test]
    fn uniform_two_class_is_ln2() {
        let labels = LabelMap::new(2, 2, 2, vec![0, 1, 1, 0]).unwrap();
        let pred = ProbabilityField::new(2, 2, 2, vec![0.5; 8]).unwrap();
        let v = cross_entropy_loss(&pred, &labels).unwrap();
        assert!((v.value - core::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn clamp_keeps_values_finite() {
        let labels = LabelMap::new(1, 2, 2, vec![0, 1]).unwrap();
        // second pixel puts all mass on the wrong class
        let pred = ProbabilityField::new(2, 1, 2, vec![1.0, 1.0, 0.0, 0.0]).unwrap();
        let v = cross_entropy_loss(&pred, &labels).unwrap();
        assert!((v.value - (-libm::log(PROB_CLAMP) / 2.0)).abs() < 1e-12);
        assert!(v.gradient.unwrap().iter().all(|g| g.is_finite()));
    }

    #[test]
    fn shape_mismatch() {
        let labels = LabelMap::new(1, 3, 2, vec![0, 1, 0]).unwrap();
        let pred = ProbabilityField::new(2, 1, 2, vec![0.5; 4]).unwrap();
        assert!(matches!(
            cross_entropy_loss(&pred, &labels),
            Err(Error::ShapeMismatch { .. })
        ));
    }
}
