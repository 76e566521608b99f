use alloc::vec::Vec;

use super::{
    combine_losses, cross_entropy_loss, equipotential_line_loss, point_loss, LossConfig, LossValue,
};
use crate::error::Result;
use crate::field::{one_hot, Conversion, LabelMap, PotentialFieldSet, ProbabilityField};

/// Component values of the training objective.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LossBreakdown {
    pub ce: f64,
    pub point: f64,
    pub line: f64,
    pub total: f64,
}

/// Ground-truth potential fields of `labels` under `conversion`.
pub fn ground_truth_energy(labels: &LabelMap, conversion: &Conversion) -> Result<PotentialFieldSet> {
    let y = one_hot(labels, labels.classes())?;
    Ok(conversion.apply(&y))
}

/// `L_ce + lambda1 * L_point + lambda2 * L_line` for one prediction.
///
/// The point and line terms compare `conversion(pred)` against `gt_energy`.
/// Their gradients are pulled back to the probability field through the
/// conversion adjoint, so the returned gradient is with respect to `pred`.
/// Point and line values are always reported; their gradients are skipped
/// when the corresponding weight is zero.
pub fn training_objective(
    pred: &ProbabilityField,
    labels: &LabelMap,
    gt_energy: &PotentialFieldSet,
    conversion: &Conversion,
    cfg: &LossConfig,
) -> Result<(LossBreakdown, Vec<f64>)> {
    let ce = cross_entropy_loss(pred, labels)?;
    let pred_energy = conversion.apply(pred);
    let point = point_loss(gt_energy, &pred_energy, cfg)?;
    let line = equipotential_line_loss(gt_energy, &pred_energy, cfg, conversion.radius())?;

    let pull_back = |v: LossValue, weight: f64| -> Result<LossValue> {
        let gradient = match v.gradient {
            Some(g) if weight > 0.0 => {
                let g = PotentialFieldSet::new(
                    pred_energy.directions(),
                    pred_energy.classes(),
                    pred_energy.height(),
                    pred_energy.width(),
                    g,
                )?;
                conversion.adjoint(&g).into_data()
            }
            _ => alloc::vec![0.0; pred.data().len()],
        };
        Ok(LossValue::new(v.value, gradient))
    };
    let point = pull_back(point, cfg.lambda1)?;
    let line = pull_back(line, cfg.lambda2)?;
    let total = combine_losses(&ce, &point, &line, cfg)?;
    let breakdown = LossBreakdown {
        ce: ce.value,
        point: point.value,
        line: line.value,
        total: total.value,
    };
    Ok((breakdown, total.gradient.expect("all components carry gradients")))
}
