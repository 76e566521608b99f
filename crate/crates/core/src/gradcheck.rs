//! Central finite-difference verification of the analytic loss gradients.

use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::field::{one_hot, AcConfig, Conversion, FieldDims, LabelMap, ProbabilityField, SplitterKind};
use crate::image::Image;
use crate::losses::{
    cross_entropy_loss, dice_loss, equipotential_line_loss, point_loss, training_objective,
    LossConfig, Norm, Reduction,
};
use crate::model::{backward, softmax, softmax_backward, TinyNet};
use crate::rng::{stream, stream_rng};

pub const DEFAULT_STEP: f64 = 1e-4;
pub const DEFAULT_REL_TOL: f64 = 1e-4;
/// Denominator floor of the relative error, so that coordinates whose true
/// gradient is ~0 are judged on absolute error instead.
pub const ABS_FLOOR: f64 = 1e-6;
/// L1 coordinates closer than this to the kink are not sampled.
pub const L1_KINK_MARGIN: f64 = 1e-3;

type ScalarFn<'a> = alloc::boxed::Box<dyn Fn(&[f64]) -> Result<f64> + 'a>;

/// `(f(x + h e_i) - f(x - h e_i)) / 2h`.
pub fn finite_diff_gradient<F>(mut f: F, x: &[f64], coord: usize, h: f64) -> Result<f64>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    if h.is_nan() || h <= 0.0 {
        return Err(Error::InvalidConfig("finite-difference step must be positive"));
    }
    let mut probe = x.to_vec();
    probe[coord] = x[coord] + h;
    let plus = f(&probe)?;
    probe[coord] = x[coord] - h;
    let minus = f(&probe)?;
    if !plus.is_finite() || !minus.is_finite() {
        return Err(Error::NonFinite("finite-difference probe"));
    }
    Ok((plus - minus) / (2.0 * h))
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = libm::fabs(analytic).max(libm::fabs(numeric)).max(ABS_FLOOR);
    libm::fabs(analytic - numeric) / denom
}

/// Loss whose gradient is checked.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LossKind {
    Point(Norm),
    Line { mu: u32 },
    CrossEntropy,
    Dice,
    /// Cross-entropy plus weighted point and line losses, differentiated with
    /// respect to the logits through softmax and the conversion adjoint.
    Composite(LossConfig),
}

impl LossKind {
    pub fn name(&self) -> String {
        use alloc::format;
        match self {
            LossKind::Point(Norm::L1) => "point_l1".into(),
            LossKind::Point(Norm::L2) => "point_l2".into(),
            LossKind::Line { mu } => format!("line_mu{mu}"),
            LossKind::CrossEntropy => "cross_entropy".into(),
            LossKind::Dice => "dice".into(),
            LossKind::Composite(_) => "composite".into(),
        }
    }

    /// Composite objective with both potential terms at full weight.
    pub fn composite_default() -> Self {
        LossKind::Composite(LossConfig {
            norm: Norm::L2,
            reduction: Reduction::Sum,
            mu_exp: 2,
            lambda1: 1.0,
            lambda2: 1.0,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct GradReport {
    pub loss_name: String,
    pub coordinates: usize,
    pub max_rel_error: f64,
    pub fraction_passing: f64,
    pub step: f64,
    pub rel_tolerance: f64,
    pub seed: u64,
}

impl GradReport {
    /// At least `min_fraction` of the coordinates are within tolerance.
    pub fn passes(&self, min_fraction: f64) -> bool {
        self.fraction_passing >= min_fraction
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckOptions {
    pub dims: FieldDims,
    pub kernel_size: usize,
    pub splitter: SplitterKind,
    /// Reduction for the stand-alone point and line checks.
    pub reduction: Reduction,
    pub step: f64,
    pub rel_tolerance: f64,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        Self {
            dims: FieldDims {
                classes: 3,
                height: 8,
                width: 8,
            },
            kernel_size: 5,
            splitter: SplitterKind::A,
            reduction: Reduction::Mean,
            step: DEFAULT_STEP,
            rel_tolerance: DEFAULT_REL_TOL,
        }
    }
}

fn random_labels(dims: FieldDims, rng: &mut ChaCha8Rng) -> Result<LabelMap> {
    let data = (0..dims.height * dims.width)
        .map(|_| rng.random_range(0..dims.classes as u32))
        .collect();
    LabelMap::new(dims.height, dims.width, dims.classes, data)
}

fn random_logits(dims: FieldDims, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..dims.classes * dims.height * dims.width)
        .map(|_| rng.random_range(-2.0..2.0))
        .collect()
}

/// Compares analytic and finite-difference gradients of `kind` at `samples`
/// random coordinates of a random problem with default options.
pub fn run_gradcheck(kind: LossKind, dims: FieldDims, samples: usize, seed: u64) -> Result<GradReport> {
    let opts = GradcheckOptions {
        dims,
        ..GradcheckOptions::default()
    };
    run_gradcheck_with(kind, &opts, samples, seed)
}

pub fn run_gradcheck_with(
    kind: LossKind,
    opts: &GradcheckOptions,
    samples: usize,
    seed: u64,
) -> Result<GradReport> {
    if samples == 0 {
        return Err(Error::InvalidConfig("need at least one sample"));
    }
    let mut rng = stream_rng(seed, stream::GRADCHECK, 0);
    let dims = opts.dims;
    let ac = AcConfig::new(opts.kernel_size, opts.splitter)?;
    let conversion = Conversion::Anisotropic(ac);
    let radius = conversion.radius();
    let labels = random_labels(dims, &mut rng)?;
    let logits = random_logits(dims, &mut rng);
    let probs = softmax(&logits, dims.classes, dims.height, dims.width)?;
    let y = one_hot(&labels, dims.classes)?;
    let gt_energy = conversion.apply(&y);
    let pred_energy = conversion.apply(&probs);
    let field_cfg = |norm, mu| LossConfig {
        norm,
        reduction: opts.reduction,
        mu_exp: mu,
        ..LossConfig::default()
    };
    let reshape_energy = |x: &[f64]| {
        crate::field::PotentialFieldSet::new(
            gt_energy.directions(),
            dims.classes,
            dims.height,
            dims.width,
            x.to_vec(),
        )
    };
    let reshape_probs =
        |x: &[f64]| ProbabilityField::new(dims.classes, dims.height, dims.width, x.to_vec());

    // (point, analytic gradient, scalar function)
    let (x, analytic, f): (Vec<f64>, Vec<f64>, ScalarFn<'_>) =
        match kind {
            LossKind::Point(norm) => {
                let cfg = field_cfg(norm, 2);
                let g = point_loss(&gt_energy, &pred_energy, &cfg)?.gradient.unwrap_or_default();
                let gt = gt_energy.clone();
                let f = move |x: &[f64]| Ok(point_loss(&gt, &reshape_energy(x)?, &cfg)?.value);
                (pred_energy.data().to_vec(), g, alloc::boxed::Box::new(f))
            }
            LossKind::Line { mu } => {
                let cfg = field_cfg(Norm::L2, mu);
                let g = equipotential_line_loss(&gt_energy, &pred_energy, &cfg, radius)?
                    .gradient
                    .unwrap_or_default();
                let gt = gt_energy.clone();
                let f = move |x: &[f64]| {
                    Ok(equipotential_line_loss(&gt, &reshape_energy(x)?, &cfg, radius)?.value)
                };
                (pred_energy.data().to_vec(), g, alloc::boxed::Box::new(f))
            }
            LossKind::CrossEntropy => {
                let g = cross_entropy_loss(&probs, &labels)?.gradient.unwrap_or_default();
                let labels = labels.clone();
                let f = move |x: &[f64]| Ok(cross_entropy_loss(&reshape_probs(x)?, &labels)?.value);
                (probs.data().to_vec(), g, alloc::boxed::Box::new(f))
            }
            LossKind::Dice => {
                let g = dice_loss(&probs, &y)?.gradient.unwrap_or_default();
                let y = y.clone();
                let f = move |x: &[f64]| Ok(dice_loss(&reshape_probs(x)?, &y)?.value);
                (probs.data().to_vec(), g, alloc::boxed::Box::new(f))
            }
            LossKind::Composite(cfg) => {
                cfg.validate()?;
                let (_, g_probs) = training_objective(&probs, &labels, &gt_energy, &conversion, &cfg)?;
                let g = softmax_backward(&probs, &g_probs);
                let (labels, gt, conv) = (labels.clone(), gt_energy.clone(), conversion.clone());
                let f = move |x: &[f64]| {
                    let p = softmax(x, dims.classes, dims.height, dims.width)?;
                    Ok(training_objective(&p, &labels, &gt, &conv, &cfg)?.0.total)
                };
                (logits.clone(), g, alloc::boxed::Box::new(f))
            }
        };

    // L1 coordinates must sit away from the |delta| = 0 kink.
    let eligible: Vec<usize> = match kind {
        LossKind::Point(Norm::L1) => (0..x.len())
            .filter(|&i| libm::fabs(gt_energy.data()[i] - x[i]) > L1_KINK_MARGIN.max(2.0 * opts.step))
            .collect(),
        _ => (0..x.len()).collect(),
    };
    if eligible.is_empty() {
        return Err(Error::InvalidConfig("no eligible coordinates to check"));
    }

    let mut max_rel: f64 = 0.0;
    let mut passing = 0usize;
    for _ in 0..samples {
        let coord = eligible[rng.random_range(0..eligible.len())];
        let numeric = finite_diff_gradient(&f, &x, coord, opts.step)?;
        let err = relative_error(analytic[coord], numeric);
        max_rel = max_rel.max(err);
        if err < opts.rel_tolerance {
            passing += 1;
        }
    }
    Ok(GradReport {
        loss_name: kind.name(),
        coordinates: samples,
        max_rel_error: max_rel,
        fraction_passing: passing as f64 / samples as f64,
        step: opts.step,
        rel_tolerance: opts.rel_tolerance,
        seed,
    })
}

/// Checks the network parameter gradient of the full objective on a random
/// image against finite differences at `samples` random parameters.
pub fn check_network_gradient(
    conversion: &Conversion,
    cfg: &LossConfig,
    dims: FieldDims,
    samples: usize,
    seed: u64,
    rel_tolerance: f64,
) -> Result<GradReport> {
    let mut rng = stream_rng(seed, stream::GRADCHECK, 1);
    let labels = random_labels(dims, &mut rng)?;
    let pixels = (0..dims.height * dims.width)
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();
    let image = Image::new(1, dims.height, dims.width, pixels)?;
    let net = TinyNet::init(1, dims.classes, seed)?;
    let (_, analytic) = backward(&net, &image, &labels, conversion, cfg, None)?;
    let params = net.params().to_vec();
    let f = |theta: &[f64]| {
        let probe = TinyNet::from_params(1, dims.classes, theta.to_vec())?;
        Ok(backward(&probe, &image, &labels, conversion, cfg, None)?.0.total)
    };
    let mut max_rel: f64 = 0.0;
    let mut passing = 0usize;
    for _ in 0..samples {
        let coord = rng.random_range(0..params.len());
        let numeric = finite_diff_gradient(f, &params, coord, DEFAULT_STEP)?;
        let err = relative_error(analytic[coord], numeric);
        max_rel = max_rel.max(err);
        if err < rel_tolerance {
            passing += 1;
        }
    }
    Ok(GradReport {
        loss_name: "network".into(),
        coordinates: samples,
        max_rel_error: max_rel,
        fraction_passing: passing as f64 / samples as f64,
        step: DEFAULT_STEP,
        rel_tolerance,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_of_squares() {
        let f = |x: &[f64]| Ok(x.iter().map(|v| v * v).sum::<f64>());
        let d = finite_diff_gradient(f, &[3.0, -1.0], 0, 1e-4).unwrap();
        assert!((d - 6.0).abs() < 1e-6);
    }

    #[test]
    fn constant_function() {
        let f = |_: &[f64]| Ok(4.2);
        assert_eq!(finite_diff_gradient(f, &[1.0; 3], 2, 1e-4).unwrap(), 0.0);
    }

    #[test]
    fn rejects_bad_step_and_non_finite() {
        let f = |_: &[f64]| Ok(0.0);
        assert!(finite_diff_gradient(f, &[1.0], 0, 0.0).is_err());
        let g = |x: &[f64]| Ok(if x[0] > 1.0 { f64::INFINITY } else { 0.0 });
        assert_eq!(
            finite_diff_gradient(g, &[1.0], 0, 1e-4),
            Err(Error::NonFinite("finite-difference probe"))
        );
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(1.0, 1.0), 0.0);
        assert!((relative_error(2.0, 1.0) - 0.5).abs() < 1e-15);
        assert!(relative_error(1e-12, 2e-12) < 1e-5);
    }

    #[test]
    fn names() {
        assert_eq!(LossKind::Line { mu: 10 }.name(), "line_mu10");
        assert_eq!(LossKind::Point(Norm::L1).name(), "point_l1");
    }
}
