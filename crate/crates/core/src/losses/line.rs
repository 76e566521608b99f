//! Equipotential lines and the equipotential line loss.
//!
//! A ground-truth equipotential line at level `tau` is the set of pixels whose
//! integer energy equals `tau`, for `tau` in `1..=r`. The predicted
//! counterpart has the same number of pixels, chosen by ranking predicted
//! energies ([`build_line_regions`]).
//!
//! The loss itself evaluates the exponential activation over the whole energy
//! plane: `d = exp(-(E_gt - tau)^mu)` is a soft membership in line `tau`, and
//! likewise `d_hat` for the prediction. For each class, direction and level:
//!
//! ```text
//! IoU = sum(d * d_hat)
//! C   = sum(d) / sum(d * d)
//! EDC = 2 * C * IoU / (sum(d) + sum(d_hat))
//! ```
//!
//! and the loss accumulates `1 - EDC`, divided at the end by the number of
//! directions. On integer fields with `d_hat == d` every EDC is exactly 1.

use alloc::vec;
use alloc::vec::Vec;

use super::{validate_mu, LossConfig, LossValue};
use crate::error::{Error, Result};
use crate::field::PotentialFieldSet;

/// Numerical guard: levels whose activation mass `sum(d)` is below this are
/// skipped to avoid `0 / 0` in `C`.
pub const EMPTY_LEVEL_EPS: f64 = 1e-12;

/// Line regions for one `(class, direction)` pair.
///
/// Indices are raster positions within the plane. `levels[t - 1]` holds line
/// `t`; `pred_levels[t - 1]` its equal-count predicted counterpart.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct LineRegionSlice {
    pub exterior: Vec<usize>,
    pub levels: Vec<Vec<usize>>,
    pub interior: Vec<usize>,
    pub pred_exterior: Vec<usize>,
    pub pred_levels: Vec<Vec<usize>>,
    pub pred_interior: Vec<usize>,
}

/// Line regions for every `(class, direction)` pair of a potential field set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LineRegions {
    directions: usize,
    classes: usize,
    radius: usize,
    slices: Vec<LineRegionSlice>,
}

impl LineRegions {
    pub fn build(gt: &PotentialFieldSet, pred: &PotentialFieldSet, radius: usize) -> Result<Self> {
        gt.expect_same_shape(pred, "line regions")?;
        let mut slices = Vec::with_capacity(gt.directions() * gt.classes());
        for c in 0..gt.classes() {
            for s in 0..gt.directions() {
                slices.push(build_line_regions(gt.plane(s, c), pred.plane(s, c), radius)?);
            }
        }
        Ok(Self {
            directions: gt.directions(),
            classes: gt.classes(),
            radius,
            slices,
        })
    }

    pub fn radius(&self) -> usize {
        self.radius
    }

    pub fn get(&self, class: usize, direction: usize) -> &LineRegionSlice {
        &self.slices[class * self.directions + direction]
    }

    pub fn iter(&self) -> impl Iterator<Item = ((usize, usize), &LineRegionSlice)> {
        let dirs = self.directions;
        self.slices
            .iter()
            .enumerate()
            .map(move |(i, slice)| ((i / dirs, i % dirs), slice))
    }

    pub fn classes(&self) -> usize {
        self.classes
    }
}

fn integer_energy(index: usize, value: f64) -> Result<usize> {
    if !value.is_finite() || value < 0.0 || libm::floor(value) != value {
        return Err(Error::NonIntegerEnergy { index, value });
    }
    Ok(value as usize)
}

/// Builds the ground-truth lines of one energy plane and their equal-count
/// predicted counterparts.
///
/// Ground-truth pixels are grouped by exact energy: `0` is exterior, `1..=r`
/// are the lines, anything above `r` is interior. Predicted pixels are ranked
/// by ascending energy (ties by raster index); the first `|exterior|` are the
/// predicted exterior, the next `|l^1|` form the predicted line 1, and so on.
pub fn build_line_regions(gt: &[f64], pred: &[f64], radius: usize) -> Result<LineRegionSlice> {
    if gt.len() != pred.len() {
        return Err(Error::InvalidShape("energy planes differ in length"));
    }
    let mut slice = LineRegionSlice {
        levels: vec![Vec::new(); radius],
        pred_levels: vec![Vec::new(); radius],
        ..LineRegionSlice::default()
    };
    for (p, &e) in gt.iter().enumerate() {
        match integer_energy(p, e)? {
            0 => slice.exterior.push(p),
            t if t <= radius => slice.levels[t - 1].push(p),
            _ => slice.interior.push(p),
        }
    }

    let mut order: Vec<usize> = (0..pred.len()).collect();
    order.sort_by(|&a, &b| pred[a].total_cmp(&pred[b]).then(a.cmp(&b)));

    let mut rest = order.as_slice();
    let (head, tail) = rest.split_at(slice.exterior.len());
    slice.pred_exterior = head.to_vec();
    rest = tail;
    for t in 0..radius {
        let (head, tail) = rest.split_at(slice.levels[t].len());
        slice.pred_levels[t] = head.to_vec();
        rest = tail;
    }
    slice.pred_interior = rest.to_vec();
    Ok(slice)
}

/// `x^n` by repeated multiplication.
#[inline]
fn ipow(x: f64, n: u32) -> f64 {
    let mut acc = 1.0;
    for _ in 0..n {
        acc *= x;
    }
    acc
}

/// One `(class, direction, level)` contribution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineTerm {
    pub class: usize,
    pub direction: usize,
    pub level: usize,
    pub edc: f64,
}

struct LevelStats {
    sum_d: f64,
    sum_dd: f64,
    sum_dhat: f64,
    overlap: f64,
}

fn level_stats(gt: &[f64], pred: &[f64], level: f64, mu: u32) -> LevelStats {
    let mut stats = LevelStats {
        sum_d: 0.0,
        sum_dd: 0.0,
        sum_dhat: 0.0,
        overlap: 0.0,
    };
    for (&g, &e) in gt.iter().zip(pred) {
        let d = libm::exp(-ipow(g - level, mu));
        let dh = libm::exp(-ipow(e - level, mu));
        stats.sum_d += d;
        stats.sum_dd += d * d;
        stats.sum_dhat += dh;
        stats.overlap += d * dh;
    }
    stats
}

fn check_inputs(gt: &PotentialFieldSet, pred: &PotentialFieldSet, cfg: &LossConfig) -> Result<()> {
    validate_mu(cfg.mu_exp)?;
    gt.expect_same_shape(pred, "equipotential line loss")?;
    for (i, &v) in gt.data().iter().enumerate() {
        integer_energy(i, v)?;
    }
    Ok(())
}

/// Whether the ground-truth line at `level` has any pixel.
fn line_present(gt: &[f64], level: f64) -> bool {
    gt.contains(&level)
}

/// Per-term EDC values for every non-empty `(class, direction, level)`.
pub fn line_loss_terms(
    gt: &PotentialFieldSet,
    pred: &PotentialFieldSet,
    cfg: &LossConfig,
    radius: usize,
) -> Result<Vec<LineTerm>> {
    check_inputs(gt, pred, cfg)?;
    let mut terms = Vec::new();
    for class in 0..gt.classes() {
        for direction in 0..gt.directions() {
            let (g, e) = (gt.plane(direction, class), pred.plane(direction, class));
            for level in 1..=radius {
                let tau = level as f64;
                if !line_present(g, tau) {
                    continue;
                }
                let st = level_stats(g, e, tau, cfg.mu_exp);
                if st.sum_d < EMPTY_LEVEL_EPS {
                    continue;
                }
                let c = st.sum_d / st.sum_dd;
                let edc = 2.0 * c * st.overlap / (st.sum_d + st.sum_dhat);
                terms.push(LineTerm {
                    class,
                    direction,
                    level,
                    edc,
                });
            }
        }
    }
    Ok(terms)
}

/// Equipotential line loss with its gradient with respect to `pred`.
///
/// `radius` is the number of levels, `floor(w / 2)`. Levels with no
/// ground-truth pixel contribute nothing.
pub fn equipotential_line_loss(
    gt: &PotentialFieldSet,
    pred: &PotentialFieldSet,
    cfg: &LossConfig,
    radius: usize,
) -> Result<LossValue> {
    check_inputs(gt, pred, cfg)?;
    let mu = cfg.mu_exp;
    let inv_dirs = 1.0 / gt.directions() as f64;
    let n = gt.plane_len();
    let mut gradient = vec![0.0; gt.data().len()];
    let mut total = 0.0;

    for direction in 0..gt.directions() {
        for class in 0..gt.classes() {
            let (g, e) = (gt.plane(direction, class), pred.plane(direction, class));
            let start = (direction * gt.classes() + class) * n;
            let grad = &mut gradient[start..start + n];
            for level in 1..=radius {
                let tau = level as f64;
                if !line_present(g, tau) {
                    continue;
                }
                let st = level_stats(g, e, tau, mu);
                if st.sum_d < EMPTY_LEVEL_EPS {
                    continue;
                }
                let c = st.sum_d / st.sum_dd;
                let denom = st.sum_d + st.sum_dhat;
                let edc = 2.0 * c * st.overlap / denom;
                total += 1.0 - edc;

                // d(1 - EDC)/d(d_hat_p) = -2C (d_p * denom - overlap) / denom^2
                // d(d_hat_p)/d(e_p) = -mu (e_p - tau)^(mu - 1) d_hat_p
                let k = 2.0 * c / (denom * denom) * inv_dirs;
                for ((gp, &gv), &ev) in grad.iter_mut().zip(g).zip(e) {
                    let x = ev - tau;
                    let x_mu1 = ipow(x, mu - 1);
                    let dh = libm::exp(-x_mu1 * x);
                    if dh == 0.0 {
                        continue;
                    }
                    let d = libm::exp(-ipow(gv - tau, mu));
                    let d_edc_d_dh = k * (d * denom - st.overlap);
                    *gp += d_edc_d_dh * mu as f64 * x_mu1 * dh;
                }
            }
        }
    }
    let value = total * inv_dirs;
    if !value.is_finite() || gradient.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite("equipotential line loss"));
    }
    Ok(LossValue::new(value, gradient))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::{Norm, Reduction};

    fn cfg(mu: u32) -> LossConfig {
        LossConfig {
            mu_exp: mu,
            norm: Norm::L2,
            reduction: Reduction::Sum,
            ..LossConfig::default()
        }
    }

    fn plane(values: &[f64]) -> PotentialFieldSet {
        PotentialFieldSet::new(1, 1, 1, values.len(), values.to_vec()).unwrap()
    }

    #[test]
    fn equal_counts_from_histogram() {
        // 2 zeros, 3 ones, 1 two
        let gt = [0.0, 1.0, 1.0, 2.0, 0.0, 1.0];
        let pred = [2.5, 0.1, 1.7, 0.4, 0.9, 1.2];
        let s = build_line_regions(&gt, &pred, 2).unwrap();
        assert_eq!(s.levels[0].len(), 3);
        assert_eq!(s.levels[1].len(), 1);
        assert_eq!(s.pred_levels[0].len(), 3);
        assert_eq!(s.pred_levels[1].len(), 1);
        assert_eq!(s.pred_exterior, vec![1, 3]);
        assert_eq!(s.pred_levels[0], vec![4, 5, 2]);
        assert_eq!(s.pred_levels[1], vec![0]);
        assert!(s.pred_interior.is_empty());
    }

    #[test]
    fn identical_planes_reproduce_levels() {
        let gt = [3.0, 1.0, 0.0, 2.0, 1.0, 3.0, 2.0, 0.0];
        let s = build_line_regions(&gt, &gt, 2).unwrap();
        for t in 0..2 {
            let mut a = s.levels[t].clone();
            let mut b = s.pred_levels[t].clone();
            a.sort_unstable();
            b.sort_unstable();
            assert_eq!(a, b);
        }
        assert_eq!(s.interior, vec![0, 5]);
    }

    #[test]
    fn ties_break_by_raster_index() {
        let gt = [0.0, 1.0, 0.0, 1.0];
        let pred = [0.5; 4];
        let s = build_line_regions(&gt, &pred, 1).unwrap();
        assert_eq!(s.pred_exterior, vec![0, 1]);
        assert_eq!(s.pred_levels[0], vec![2, 3]);
    }

    #[test]
    fn all_zero_plane_is_degenerate() {
        let gt = [0.0; 6];
        let pred = [0.3, 0.0, 1.0, 2.0, 0.1, 0.2];
        let s = build_line_regions(&gt, &pred, 3).unwrap();
        assert!(s.levels.iter().all(Vec::is_empty));
        assert!(s.pred_levels.iter().all(Vec::is_empty));
        let v = equipotential_line_loss(&plane(&gt), &plane(&pred), &cfg(2), 3).unwrap();
        assert_eq!(v.value, 0.0);
        assert!(v.gradient.unwrap().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn rejects_non_integer_ground_truth() {
        assert!(matches!(
            build_line_regions(&[0.0, 1.5], &[0.0, 0.0], 2),
            Err(Error::NonIntegerEnergy { index: 1, .. })
        ));
        let gt = plane(&[0.0, 0.25]);
        assert!(matches!(
            equipotential_line_loss(&gt, &gt, &cfg(2), 2),
            Err(Error::NonIntegerEnergy { .. })
        ));
    }

    #[test]
    fn rejects_odd_exponent() {
        let gt = plane(&[0.0, 1.0]);
        assert_eq!(
            equipotential_line_loss(&gt, &gt, &cfg(3), 2),
            Err(Error::InvalidExponent(3))
        );
    }

    #[test]
    fn perfect_prediction_is_zero() {
        let gt = plane(&[0.0, 1.0, 2.0, 3.0, 3.0, 2.0, 1.0, 0.0]);
        for mu in [2, 4, 10] {
            let v = equipotential_line_loss(&gt, &gt, &cfg(mu), 2).unwrap();
            assert!(v.value.abs() < 1e-15, "mu={mu}: {}", v.value);
            for t in line_loss_terms(&gt, &gt, &cfg(mu), 2).unwrap() {
                assert!((t.edc - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn ipow_matches_repeated_product() {
        assert_eq!(ipow(-1.5, 2), 2.25);
        assert_eq!(ipow(2.0, 10), 1024.0);
        assert_eq!(ipow(-2.0, 3), -8.0);
        assert_eq!(ipow(7.0, 0), 1.0);
    }
}
