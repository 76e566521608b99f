//! Dataset construction, training runs, evaluation and ablation sweeps.

use std::fs;
use std::path::{Path, PathBuf};

use epl_core::datagen::{generate_dataset, Sample, SceneSpec};
use epl_core::field::LabelMap;
use epl_core::metrics::{EvalReport, Evaluator};
use epl_core::model::{train, EpochRecord, TinyNet, TrainOutcome, HIDDEN};
use epl_core::rng::{derive_seed, stream};
use epl_core::SplitterKind;
use serde::{Deserialize, Serialize};

use crate::config::{ConversionKind, ExperimentConfig};
use crate::error::{Error, Result};
use crate::io;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const CONFIG_ECHO_FILE: &str = "config.json";
pub const STATUS_FILE: &str = "status.json";

/// Scene spec of the held-out evaluation set: same layout and noise as the
/// training data, drawn from an independent seed.
pub fn eval_spec(cfg: &ExperimentConfig) -> SceneSpec {
    SceneSpec {
        seed: derive_seed(cfg.dataset.seed, stream::EVAL_SET, 0),
        count: cfg.train.eval_count,
        ..cfg.dataset.clone()
    }
}

#[derive(Debug, Clone)]
pub struct Datasets {
    pub train: Vec<Sample>,
    pub eval: Vec<Sample>,
}

pub fn build_datasets(cfg: &ExperimentConfig) -> Result<Datasets> {
    Ok(Datasets {
        train: generate_dataset(&cfg.dataset)?,
        eval: generate_dataset(&eval_spec(cfg))?,
    })
}

/// Dataset manifest written by `gen`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub scene: SceneSpec,
    /// Sample directories relative to the manifest.
    pub samples: Vec<String>,
}

pub fn sample_id(index: usize) -> String {
    format!("{index:04}")
}

/// Writes `samples/NNNN/{image.eplt,labels.pgm}` and the manifest.
pub fn write_dataset(dir: &Path, spec: &SceneSpec, samples: &[Sample]) -> Result<Manifest> {
    let mut paths = Vec::with_capacity(samples.len());
    for (i, s) in samples.iter().enumerate() {
        let rel = format!("samples/{}", sample_id(i));
        io::write_sample(&dir.join(&rel), s)?;
        paths.push(rel);
    }
    let manifest = Manifest { scene: spec.clone(), samples: paths };
    write_json(&dir.join(MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::path(&path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::from(e).in_file(&path))
}

pub fn read_dataset(dir: &Path) -> Result<(Manifest, Vec<Sample>)> {
    let manifest = read_manifest(dir)?;
    let samples = manifest
        .samples
        .iter()
        .map(|rel| io::read_sample(&dir.join(rel), manifest.scene.classes))
        .collect::<Result<_>>()?;
    Ok((manifest, samples))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").map_err(|e| Error::path(path, e))
}

/// Marks an output directory as in progress, complete or failed, so that
/// partial outputs of a failed command are recognisable.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "status")]
pub enum Status {
    Running,
    Complete,
    Failed { error: String },
}

pub fn write_status(dir: &Path, status: &Status) -> Result<()> {
    write_json(&dir.join(STATUS_FILE), status)
}

/// Evaluates `net` on `samples` with the configured widths and tolerances.
pub fn evaluate(net: &TinyNet, samples: &[Sample], cfg: &ExperimentConfig) -> Result<EvalReport> {
    let mut ev = Evaluator::new(
        cfg.dataset.classes,
        &cfg.eval.trimap_widths,
        &cfg.eval.f_tolerances,
    );
    for s in samples {
        ev.add(&net.forward(&s.image)?.argmax(), &s.labels)?;
    }
    Ok(ev.report())
}

/// Final metrics of one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub seed: u64,
    pub miou: f64,
    pub trimap_iou: Option<f64>,
    pub fmeasure: f64,
    pub ce: f64,
    pub point: f64,
    pub line: f64,
    pub total: f64,
}

impl RunSummary {
    fn new(seed: u64, last: &EpochRecord) -> Self {
        Self {
            seed,
            miou: last.miou,
            trimap_iou: last.trimap_iou,
            fmeasure: last.fmeasure,
            ce: last.ce,
            point: last.point,
            line: last.line,
            total: last.total,
        }
    }

    pub fn losses_finite(&self) -> bool {
        [self.ce, self.point, self.line, self.total].iter().all(|v| v.is_finite())
    }
}

/// Trains with `cfg` and reports the last epoch's monitor metrics on the
/// evaluation set.
pub fn run(cfg: &ExperimentConfig, data: &Datasets) -> Result<(TrainOutcome, RunSummary)> {
    let tc = cfg.train_config();
    let out = train(&data.train, &data.eval, &tc, |_| {})?;
    let last = out
        .history
        .last()
        .ok_or_else(|| Error::Config("training produced no epochs".into()))?;
    let summary = RunSummary::new(cfg.train.seed, last);
    Ok((out, summary))
}

pub fn write_history(dir: &Path, history: &[EpochRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(dir.join("history.csv"))?;
    for r in history {
        w.serialize(r)?;
    }
    w.flush()?;
    write_json(&dir.join("history.json"), &history)
}

/// JSON sidecar of a `.eplt` parameter checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub architecture: String,
    pub in_channels: usize,
    pub hidden: usize,
    #[serde(rename = "K")]
    pub classes: usize,
    pub param_count: usize,
    pub config: ExperimentConfig,
}

pub const ARCHITECTURE: &str = "conv3x3-relu-conv3x3-relu-conv1x1-softmax";

pub fn save_checkpoint(dir: &Path, net: &TinyNet, cfg: &ExperimentConfig) -> Result<()> {
    io::save_tensor(
        &dir.join("checkpoint.eplt"),
        &io::Tensor::from_f64(&[net.params().len()], net.params())?,
    )?;
    let meta = CheckpointMeta {
        architecture: ARCHITECTURE.into(),
        in_channels: net.in_channels(),
        hidden: HIDDEN,
        classes: net.classes(),
        param_count: net.params().len(),
        config: cfg.clone(),
    };
    write_json(&dir.join("checkpoint.json"), &meta)
}

/// Loads a checkpoint; parameters round-trip through float32.
pub fn load_checkpoint(dir: &Path) -> Result<(TinyNet, CheckpointMeta)> {
    let path = dir.join("checkpoint.json");
    let text = fs::read_to_string(&path).map_err(|e| Error::path(&path, e))?;
    let meta: CheckpointMeta = serde_json::from_str(&text).map_err(|e| Error::from(e).in_file(&path))?;
    let t = io::load_tensor(&dir.join("checkpoint.eplt"))?;
    let net = TinyNet::from_params(meta.in_channels, meta.classes, t.to_f64())?;
    Ok((net, meta))
}

/// Writes `dir/NNNN.pgm` for every label map.
pub fn write_label_dir(dir: &Path, maps: &[LabelMap]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::path(dir, e))?;
    for (i, m) in maps.iter().enumerate() {
        io::write_labels(&dir.join(format!("{}.pgm", sample_id(i))), m)?;
    }
    Ok(())
}

/// Label files of a ground-truth directory, keyed by sample id: either a
/// dataset written by `gen` or a flat directory of `.pgm` files.
pub fn ground_truth_files(dir: &Path) -> Result<Vec<(String, PathBuf)>> {
    if dir.join(MANIFEST_FILE).exists() {
        let m = read_manifest(dir)?;
        return Ok(m
            .samples
            .iter()
            .map(|rel| {
                let id = Path::new(rel)
                    .file_name()
                    .map(|n| n.to_string_lossy().into_owned())
                    .unwrap_or_else(|| rel.clone());
                (id, dir.join(rel).join(io::LABELS_FILE))
            })
            .collect());
    }
    let mut files: Vec<(String, PathBuf)> = fs::read_dir(dir)
        .map_err(|e| Error::path(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "pgm"))
        .filter_map(|p| Some((p.file_stem()?.to_string_lossy().into_owned(), p)))
        .collect();
    files.sort();
    Ok(files)
}

/// Evaluates `pred_dir/<id>.pgm` against every ground-truth label map. All
/// missing predictions are reported together.
pub fn evaluate_dirs(pred_dir: &Path, gt_dir: &Path, cfg: &ExperimentConfig) -> Result<EvalReport> {
    let gt = ground_truth_files(gt_dir)?;
    if gt.is_empty() {
        return Err(Error::Config(format!("no ground-truth labels in {}", gt_dir.display())));
    }
    let missing: Vec<String> = gt
        .iter()
        .filter(|(id, _)| !pred_dir.join(format!("{id}.pgm")).is_file())
        .map(|(id, _)| id.clone())
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingSamples(missing));
    }
    let k = cfg.dataset.classes;
    let mut ev = Evaluator::new(k, &cfg.eval.trimap_widths, &cfg.eval.f_tolerances);
    for (id, path) in &gt {
        let g = io::read_labels(path, k)?;
        let p = io::read_labels(&pred_dir.join(format!("{id}.pgm")), k)?;
        ev.add(&p, &g).map_err(|e| Error::from(e).in_file(path))?;
    }
    Ok(ev.report())
}

/// CSV rows of an evaluation report: one per band width and per tolerance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub metric: String,
    pub parameter: Option<u32>,
    pub value: Option<f64>,
}

pub fn eval_rows(report: &EvalReport) -> Vec<EvalRow> {
    let mut rows = vec![EvalRow { metric: "miou".into(), parameter: None, value: Some(report.miou) }];
    rows.extend(report.trimap_iou.iter().map(|(&w, &v)| EvalRow {
        metric: "trimap_iou".into(),
        parameter: Some(w),
        value: v,
    }));
    rows.extend(report.boundary_f.iter().map(|(&t, &v)| EvalRow {
        metric: "boundary_f".into(),
        parameter: Some(t),
        value: Some(v),
    }));
    rows
}

pub fn write_eval_report(dir: &Path, report: &EvalReport) -> Result<()> {
    write_json(&dir.join("eval.json"), report)?;
    let mut w = csv::Writer::from_path(dir.join("eval.csv"))?;
    for row in eval_rows(report) {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sweep {
    Mu,
    Splitter,
    Kernel,
    Weight,
}

impl Sweep {
    pub fn name(self) -> &'static str {
        match self {
            Sweep::Mu => "mu",
            Sweep::Splitter => "splitter",
            Sweep::Kernel => "kernel",
            Sweep::Weight => "weight",
        }
    }
}

/// One configuration of a sweep, averaged over the shared seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub sweep: String,
    pub value: String,
    pub seeds: usize,
    pub miou: f64,
    pub trimap_iou: Option<f64>,
    pub fmeasure: f64,
    pub ce: f64,
    pub point: f64,
    pub line: f64,
    pub total: f64,
}

/// Configurations of a sweep as `(label, config)` pairs. The swept loss
/// always runs with both potential terms on and the anisotropic conversion.
pub fn sweep_configs(base: &ExperimentConfig, sweep: Sweep) -> Vec<(String, ExperimentConfig)> {
    let mut base = base.clone();
    base.train.epl = true;
    base.train.conversion = ConversionKind::Ac;
    let with = |f: &dyn Fn(&mut ExperimentConfig)| {
        let mut c = base.clone();
        f(&mut c);
        c
    };
    let a = &base.ablation;
    match sweep {
        Sweep::Mu => a.mu.iter().map(|&m| (m.to_string(), with(&|c| c.loss.mu_exp = m))).collect(),
        Sweep::Splitter => a
            .splitters
            .iter()
            .map(|&s: &SplitterKind| (s.name().to_string(), with(&|c| c.ac.splitter = s)))
            .collect(),
        Sweep::Kernel => a.kernels.iter().map(|&w| (w.to_string(), with(&|c| c.ac.w = w))).collect(),
        Sweep::Weight => a
            .weights
            .iter()
            .map(|&w| (w.to_string(), with(&|c| c.loss.lambda1 = w)))
            .collect(),
    }
}

/// Runs every configuration of `sweep` over `ablation.seeds` on the same
/// data; `on_row` sees each row as it completes.
pub fn ablate(
    base: &ExperimentConfig,
    sweep: Sweep,
    data: &Datasets,
    mut on_row: impl FnMut(&AblationRow),
) -> Result<Vec<AblationRow>> {
    let mut rows = Vec::new();
    for (label, cfg) in sweep_configs(base, sweep) {
        let mut runs = Vec::new();
        for &seed in &base.ablation.seeds {
            let mut c = cfg.clone();
            c.train.seed = seed;
            runs.push(run(&c, data)?.1);
        }
        let n = runs.len() as f64;
        let mean = |f: fn(&RunSummary) -> f64| runs.iter().map(f).sum::<f64>() / n;
        let trimap: Option<Vec<f64>> = runs.iter().map(|r| r.trimap_iou).collect();
        let row = AblationRow {
            sweep: sweep.name().into(),
            value: label,
            seeds: runs.len(),
            miou: mean(|r| r.miou),
            trimap_iou: trimap.map(|v| v.iter().sum::<f64>() / n),
            fmeasure: mean(|r| r.fmeasure),
            ce: mean(|r| r.ce),
            point: mean(|r| r.point),
            line: mean(|r| r.line),
            total: mean(|r| r.total),
        };
        on_row(&row);
        rows.push(row);
    }
    Ok(rows)
}

pub fn write_ablation_csv(path: &Path, rows: &[AblationRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
