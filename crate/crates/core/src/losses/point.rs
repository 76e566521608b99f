use alloc::vec::Vec;

use super::{LossConfig, LossValue, Norm, Reduction};
use crate::error::{Error, Result};
use crate::field::PotentialFieldSet;

/// Direction-averaged L1 or L2 error between ground-truth and predicted
/// potential fields. The gradient is taken with respect to `pred`; for L1 the
/// subgradient at `gt == pred` is zero.
pub fn point_loss(
    gt: &PotentialFieldSet,
    pred: &PotentialFieldSet,
    cfg: &LossConfig,
) -> Result<LossValue> {
    gt.expect_same_shape(pred, "point loss")?;
    let dirs = gt.directions() as f64;
    let per_dir = (gt.classes() * gt.plane_len()) as f64;
    let scale = match cfg.reduction {
        Reduction::Sum => 1.0 / dirs,
        Reduction::Mean => 1.0 / (dirs * per_dir),
    };

    let mut total = 0.0;
    let mut gradient = Vec::with_capacity(gt.data().len());
    for (&g, &p) in gt.data().iter().zip(pred.data()) {
        let delta = g - p;
        match cfg.norm {
            Norm::L1 => {
                total += libm::fabs(delta);
                let sign = if delta > 0.0 {
                    1.0
                } else if delta < 0.0 {
                    -1.0
                } else {
                    0.0
                };
                gradient.push(-sign * scale);
            }
            Norm::L2 => {
                total += delta * delta;
                gradient.push(-2.0 * delta * scale);
            }
        }
    }
    let value = total * scale;
    if !value.is_finite() {
        return Err(Error::NonFinite("point loss"));
    }
    Ok(LossValue::new(value, gradient))
}
