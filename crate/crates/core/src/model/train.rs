use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;

use super::{backward, TinyNet};
use crate::datagen::Sample;
use crate::error::{Error, Result};
use crate::field::{Conversion, PotentialFieldSet};
use crate::losses::{ground_truth_energy, LossBreakdown, LossConfig};
use crate::metrics::Evaluator;
use crate::rng::{stream, stream_rng};

/// Which boundary metrics are recorded after every epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MonitorConfig {
    pub trimap_width: u32,
    pub f_tolerance: u32,
}

impl Default for MonitorConfig {
    fn default() -> Self {
        Self {
            trimap_width: 3,
            f_tolerance: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub seed: u64,
    pub loss: LossConfig,
    pub conversion: Conversion,
    pub monitor: MonitorConfig,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::InvalidConfig("epochs must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch size must be positive"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig("learning rate must be positive"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidConfig("momentum must be in [0, 1)"));
        }
        self.loss.validate()
    }
}

/// Mean training losses over the epoch and metrics on the evaluation set
/// after it.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EpochRecord {
    pub epoch: usize,
    pub ce: f64,
    pub point: f64,
    pub line: f64,
    pub total: f64,
    pub miou: f64,
    pub trimap_iou: Option<f64>,
    pub fmeasure: f64,
}

pub type History = Vec<EpochRecord>;

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub net: TinyNet,
    pub history: History,
}

/// Mini-batch SGD with momentum (`v = m v + g; theta -= lr v`) on the full
/// objective, averaging per-sample gradients within a batch.
///
/// The sample order is reshuffled every epoch from the seed; initial weights
/// come from the same seed. Metrics are computed on `eval_set`, or on the
/// training set when `eval_set` is empty. `on_epoch` sees every record as it
/// is produced. A non-finite loss aborts with [`Error::Diverged`].
pub fn train(
    train_set: &[Sample],
    eval_set: &[Sample],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let first = train_set
        .first()
        .ok_or(Error::InvalidConfig("training set is empty"))?;
    let classes = first.labels.classes();
    let in_channels = first.image.channels();
    let mut net = TinyNet::init(in_channels, classes, cfg.seed)?;

    let targets: Vec<PotentialFieldSet> = train_set
        .iter()
        .map(|s| ground_truth_energy(&s.labels, &cfg.conversion))
        .collect::<Result<_>>()?;
    let eval_set = if eval_set.is_empty() { train_set } else { eval_set };

    let mut velocity = vec![0.0; net.params().len()];
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let mut rng = stream_rng(cfg.seed, stream::SHUFFLE, epoch as u64);
        order.shuffle(&mut rng);
        let mut sums = LossBreakdown::default();
        let steps = order.len().div_ceil(cfg.batch_size);
        let diverged = |e| match e {
            Error::NonFinite(_) => Error::Diverged { epoch, step: steps },
            other => other,
        };
        for (step, batch) in order.chunks(cfg.batch_size).enumerate() {
            let mut grad = vec![0.0; net.params().len()];
            for &i in batch {
                let s = &train_set[i];
                let (parts, g) = backward(
                    &net,
                    &s.image,
                    &s.labels,
                    &cfg.conversion,
                    &cfg.loss,
                    Some(&targets[i]),
                )
                .map_err(|e| match e {
                    Error::NonFinite(_) => Error::Diverged { epoch, step },
                    other => other,
                })?;
                sums.ce += parts.ce;
                sums.point += parts.point;
                sums.line += parts.line;
                sums.total += parts.total;
                for (a, b) in grad.iter_mut().zip(&g) {
                    *a += b;
                }
            }
            let scale = 1.0 / batch.len() as f64;
            for ((p, v), g) in net.params_mut().iter_mut().zip(&mut velocity).zip(&grad) {
                *v = cfg.momentum * *v + g * scale;
                *p -= cfg.learning_rate * *v;
            }
            if net.params().iter().any(|p| !p.is_finite()) {
                return Err(Error::Diverged { epoch, step });
            }
        }
        let n = train_set.len() as f64;
        let mut ev = Evaluator::new(
            classes,
            &[cfg.monitor.trimap_width],
            &[cfg.monitor.f_tolerance],
        );
        for s in eval_set {
            let probs = net.forward(&s.image).map_err(diverged)?;
            ev.add(&probs.argmax(), &s.labels)?;
        }
        let report = ev.report();
        let record = EpochRecord {
            epoch,
            ce: sums.ce / n,
            point: sums.point / n,
            line: sums.line / n,
            total: sums.total / n,
            miou: report.miou,
            trimap_iou: report.trimap_iou[&cfg.monitor.trimap_width],
            fmeasure: report.boundary_f[&cfg.monitor.f_tolerance],
        };
        on_epoch(&record);
        history.push(record);
    }
    Ok(TrainOutcome { net, history })
}
