use alloc::vec;

use super::LossValue;
use crate::error::{Error, Result};
use crate::field::ProbabilityField;

/// Classes with `sum(pred) + sum(gt)` below this are skipped.
const EMPTY_CLASS_EPS: f64 = 1e-12;

/// Soft dice loss, `1 - mean_c 2 sum(pred * gt) / (sum(pred) + sum(gt))`,
/// averaged over the classes that are non-empty in either input. The gradient
/// is with respect to `pred`. With every class empty the loss is zero.
pub fn dice_loss(pred: &ProbabilityField, gt: &ProbabilityField) -> Result<LossValue> {
    pred.expect_same_shape(gt, "dice loss")?;
    let n = pred.plane_len();
    let mut gradient = vec![0.0; pred.data().len()];
    let mut dice_sum = 0.0;
    let mut counted = 0usize;
    let mut per_class = vec![None; pred.classes()];

    for (c, slot) in per_class.iter_mut().enumerate() {
        let (p, g) = (pred.plane(c), gt.plane(c));
        let sp: f64 = p.iter().sum();
        let sg: f64 = g.iter().sum();
        let denom = sp + sg;
        if denom < EMPTY_CLASS_EPS {
            continue;
        }
        let inter: f64 = p.iter().zip(g).map(|(a, b)| a * b).sum();
        dice_sum += 2.0 * inter / denom;
        counted += 1;
        *slot = Some((inter, denom));
    }
    if counted == 0 {
        return Ok(LossValue::new(0.0, gradient));
    }
    let inv = 1.0 / counted as f64;
    for (c, slot) in per_class.iter().enumerate() {
        let Some((inter, denom)) = *slot else { continue };
        let g = gt.plane(c);
        let out = &mut gradient[c * n..(c + 1) * n];
        for (o, &gv) in out.iter_mut().zip(g) {
            *o = -inv * 2.0 * (gv * denom - inter) / (denom * denom);
        }
    }
    let value = 1.0 - dice_sum * inv;
    if !value.is_finite() {
        return Err(Error::NonFinite("dice loss"));
    }
    Ok(LossValue::new(value, gradient))
}
