use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use epl::config::{ConversionKind, ExperimentConfig};
use epl::experiment::{self, Status, Sweep};
use epl::io;
use epl_core::datagen::{generate_dataset, SceneKind};
use epl_core::field::{one_hot, Conversion, FieldDims, SplitterKind};
use epl_core::gradcheck::{run_gradcheck_with, GradcheckOptions, LossKind};
use epl_core::losses::{
    cross_entropy_loss, dice_loss, equipotential_line_loss, point_loss, training_objective, Norm,
    Reduction,
};
use serde::Serialize;

#[derive(Parser)]
#[command(name = "epl", version, about = "Equipotential learning experiments")]
struct Cli {
    /// JSON experiment config; flags given on the command line take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset.
    Gen(GenArgs),
    /// Convert a label map into potential fields.
    Convert(ConvertArgs),
    /// Evaluate one loss on a prediction.
    Loss(LossArgs),
    /// Check analytic loss gradients against finite differences.
    Gradcheck(GradcheckArgs),
    /// Train the segmentation network.
    Train(TrainArgs),
    /// Score predicted label maps against ground truth.
    Eval(EvalArgs),
    /// Run an ablation sweep.
    Ablate(AblateArgs),
}

#[derive(Args, Default)]
struct DatasetFlags {
    /// Dataset seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    count: Option<usize>,
    /// Number of classes including background.
    #[arg(long)]
    classes: Option<usize>,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    size: Option<usize>,
    #[arg(long, value_enum)]
    kind: Option<KindArg>,
}

#[derive(Clone, Copy, ValueEnum)]
enum KindArg {
    AdjacentRects,
    TouchingDisks,
    RandomPolygons,
    Mixed,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    data: DatasetFlags,
}

#[derive(Args)]
struct ConvertArgs {
    /// Label map (binary PGM).
    #[arg(long)]
    labels: PathBuf,
    /// Output `.eplt` potential field set.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    w: Option<usize>,
    #[arg(long)]
    splitter: Option<SplitterKind>,
    /// Number of classes; defaults to the largest label plus one.
    #[arg(long)]
    classes: Option<usize>,
    /// Use the plain box filter instead of the anisotropic convolution.
    #[arg(long)]
    standard: bool,
    /// Also render the energies as a PGM tile grid.
    #[arg(long)]
    render: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum LossArg {
    Point,
    Line,
    Ce,
    Dice,
    Total,
}

#[derive(Args)]
struct LossArgs {
    /// Probability field `[K, H, W]` as `.eplt`.
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    labels: PathBuf,
    #[arg(long, value_enum)]
    loss: LossArg,
    #[arg(long, value_enum)]
    norm: Option<NormArg>,
    #[arg(long)]
    mu: Option<u32>,
    #[arg(long)]
    w: Option<usize>,
    #[arg(long)]
    splitter: Option<SplitterKind>,
    /// Recorded in the report for provenance.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write the JSON report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum NormArg {
    L1,
    L2,
}

#[derive(Clone, Copy, ValueEnum)]
enum GradLossArg {
    PointL1,
    PointL2,
    Line,
    Ce,
    Dice,
    Composite,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, value_enum)]
    loss: GradLossArg,
    /// Exponent for the line loss.
    #[arg(long, default_value_t = 10)]
    mu: u32,
    #[arg(long, default_value_t = 256)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 3)]
    classes: usize,
    #[arg(long, default_value_t = 8)]
    size: usize,
    #[arg(long, default_value_t = 5)]
    w: usize,
    #[arg(long, default_value = "A")]
    splitter: SplitterKind,
    #[arg(long, default_value_t = 1e-4)]
    step: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum OnOff {
    On,
    Off,
}

#[derive(Clone, Copy, ValueEnum)]
enum AblateArg {
    Sc,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    out: PathBuf,
    /// Train on a dataset written by `gen` instead of generating one.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, value_enum)]
    epl: Option<OnOff>,
    /// Replace the anisotropic convolution in the losses.
    #[arg(long, value_enum)]
    ablate: Option<AblateArg>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Training seed (initialisation and shuffling).
    #[arg(long)]
    train_seed: Option<u64>,
    #[arg(long)]
    mu: Option<u32>,
    #[arg(long)]
    w: Option<usize>,
    #[arg(long)]
    splitter: Option<SplitterKind>,
    #[arg(long)]
    lambda1: Option<f64>,
    #[arg(long)]
    lambda2: Option<f64>,
    #[command(flatten)]
    data_flags: DatasetFlags,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    gt: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    classes: Option<usize>,
    /// Comma-separated trimap band widths.
    #[arg(long, value_delimiter = ',')]
    widths: Option<Vec<u32>>,
    /// Comma-separated boundary F tolerances.
    #[arg(long, value_delimiter = ',')]
    tolerances: Option<Vec<u32>>,
}

#[derive(Args)]
struct AblateArgs {
    #[arg(long, value_enum)]
    sweep: SweepArg,
    #[arg(long)]
    out: PathBuf,
    /// Comma-separated training seeds shared by every configuration.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[arg(long)]
    epochs: Option<usize>,
    #[command(flatten)]
    data_flags: DatasetFlags,
}

#[derive(Clone, Copy, ValueEnum)]
enum SweepArg {
    Mu,
    Splitter,
    Kernel,
    Weight,
}

fn load_config(path: Option<&Path>) -> anyhow::Result<ExperimentConfig> {
    Ok(match path {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    })
}

fn apply_dataset(cfg: &mut ExperimentConfig, f: &DatasetFlags) {
    let d = &mut cfg.dataset;
    if let Some(v) = f.seed {
        d.seed = v;
    }
    if let Some(v) = f.count {
        d.count = v;
    }
    if let Some(k) = f.classes {
        d.classes = k;
        if d.intensities.len() != k && k >= 2 {
            d.intensities = (0..k).map(|c| c as f64 / (k - 1) as f64).collect();
        }
    }
    if let Some(v) = f.sigma {
        d.noise_sigma = v;
    }
    if let Some(v) = f.size {
        d.height = v;
        d.width = v;
    }
    if let Some(k) = f.kind {
        d.kind = match k {
            KindArg::AdjacentRects => SceneKind::AdjacentRects,
            KindArg::TouchingDisks => SceneKind::TouchingDisks,
            KindArg::RandomPolygons => SceneKind::RandomPolygons,
            KindArg::Mixed => SceneKind::Mixed,
        };
    }
}

fn prepare_dir(dir: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

/// Config echo for a single output file: `<file>.config.json`.
fn echo_path(file: &Path) -> PathBuf {
    let mut name = file.file_name().unwrap_or_default().to_os_string();
    name.push(".config.json");
    file.with_file_name(name)
}

fn write_echo<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    experiment::write_json(path, value)?;
    Ok(())
}

/// Runs `body` with the status marker of `dir` set around it.
fn with_status(dir: &Path, body: impl FnOnce() -> anyhow::Result<()>) -> anyhow::Result<()> {
    experiment::write_status(dir, &Status::Running)?;
    match body() {
        Ok(()) => {
            experiment::write_status(dir, &Status::Complete)?;
            Ok(())
        }
        Err(e) => {
            let _ = experiment::write_status(dir, &Status::Failed { error: format!("{e:#}") });
            Err(e)
        }
    }
}

fn cmd_gen(cfg: &mut ExperimentConfig, args: &GenArgs) -> anyhow::Result<()> {
    apply_dataset(cfg, &args.data);
    cfg.validate()?;
    prepare_dir(&args.out)?;
    write_echo(&args.out.join(experiment::CONFIG_ECHO_FILE), cfg)?;
    with_status(&args.out, || {
        let samples = generate_dataset(&cfg.dataset)?;
        let m = experiment::write_dataset(&args.out, &cfg.dataset, &samples)?;
        println!("wrote {} samples to {}", m.samples.len(), args.out.display());
        Ok(())
    })
}

fn conversion_from(w: usize, splitter: SplitterKind, standard: bool) -> anyhow::Result<Conversion> {
    Ok(if standard {
        Conversion::standard(w)?
    } else {
        Conversion::Anisotropic(epl_core::field::AcConfig::new(w, splitter)?)
    })
}

#[derive(Serialize)]
struct ConvertEcho<'a> {
    labels: &'a Path,
    w: usize,
    splitter: SplitterKind,
    standard: bool,
    classes: usize,
    dims: [usize; 4],
}

fn cmd_convert(cfg: &ExperimentConfig, args: &ConvertArgs) -> anyhow::Result<()> {
    let w = args.w.unwrap_or(cfg.ac.w);
    let splitter = args.splitter.unwrap_or(cfg.ac.splitter);
    let conversion = conversion_from(w, splitter, args.standard)?;
    let g = io::read_pgm(fs::File::open(&args.labels).with_context(|| args.labels.display().to_string())?)?;
    let max = g.pixels.iter().copied().max().unwrap_or(0) as usize;
    let classes = args.classes.unwrap_or((max + 1).max(2));
    let labels = io::read_labels(&args.labels, classes)?;
    let energy = conversion.apply(&one_hot(&labels, classes)?);
    io::save_tensor(&args.out, &io::potential_tensor(&energy)?)?;
    if let Some(r) = &args.render {
        io::write_energy_pgm(r, &energy)?;
    }
    write_echo(
        &echo_path(&args.out),
        &ConvertEcho {
            labels: &args.labels,
            w,
            splitter,
            standard: args.standard,
            classes,
            dims: energy.dims(),
        },
    )?;
    println!("wrote {:?} potential fields to {}", energy.dims(), args.out.display());
    Ok(())
}

#[derive(Serialize)]
struct LossReport {
    loss_name: String,
    value: f64,
    config: LossReportConfig,
    seed: u64,
}

#[derive(Serialize)]
struct LossReportConfig {
    loss: epl_core::LossConfig,
    w: usize,
    splitter: SplitterKind,
}

fn cmd_loss(cfg: &ExperimentConfig, args: &LossArgs) -> anyhow::Result<()> {
    let mut loss_cfg = cfg.loss;
    if let Some(n) = args.norm {
        loss_cfg.norm = match n {
            NormArg::L1 => Norm::L1,
            NormArg::L2 => Norm::L2,
        };
    }
    if let Some(mu) = args.mu {
        loss_cfg.mu_exp = mu;
    }
    loss_cfg.validate()?;
    let w = args.w.unwrap_or(cfg.ac.w);
    let splitter = args.splitter.unwrap_or(cfg.ac.splitter);
    let conversion = conversion_from(w, splitter, false)?;
    let pred = io::tensor_field(&io::load_tensor(&args.pred)?)?;
    let labels = io::read_labels(&args.labels, pred.classes())?;
    let y = one_hot(&labels, pred.classes())?;
    let gt = conversion.apply(&y);
    let (name, value) = match args.loss {
        LossArg::Point => {
            let name = match loss_cfg.norm {
                Norm::L1 => "point_l1",
                Norm::L2 => "point_l2",
            };
            (name.to_string(), point_loss(&gt, &conversion.apply(&pred), &loss_cfg)?.value)
        }
        LossArg::Line => (
            format!("line_mu{}", loss_cfg.mu_exp),
            equipotential_line_loss(&gt, &conversion.apply(&pred), &loss_cfg, conversion.radius())?.value,
        ),
        LossArg::Ce => ("cross_entropy".into(), cross_entropy_loss(&pred, &labels)?.value),
        LossArg::Dice => ("dice".into(), dice_loss(&pred, &y)?.value),
        LossArg::Total => (
            "total".into(),
            training_objective(&pred, &labels, &gt, &conversion, &loss_cfg)?.0.total,
        ),
    };
    if !value.is_finite() {
        bail!("loss {name} is not finite");
    }
    let report = LossReport {
        loss_name: name,
        value,
        config: LossReportConfig { loss: loss_cfg, w, splitter },
        seed: args.seed,
    };
    emit_json(args.out.as_deref(), &report)
}

fn emit_json<T: Serialize>(out: Option<&Path>, value: &T) -> anyhow::Result<()> {
    match out {
        Some(p) => experiment::write_json(p, value)?,
        None => println!("{}", serde_json::to_string_pretty(value)?),
    }
    Ok(())
}

fn cmd_gradcheck(cfg: &ExperimentConfig, args: &GradcheckArgs) -> anyhow::Result<()> {
    let kind = match args.loss {
        GradLossArg::PointL1 => LossKind::Point(Norm::L1),
        GradLossArg::PointL2 => LossKind::Point(Norm::L2),
        GradLossArg::Line => LossKind::Line { mu: args.mu },
        GradLossArg::Ce => LossKind::CrossEntropy,
        GradLossArg::Dice => LossKind::Dice,
        GradLossArg::Composite => LossKind::Composite(cfg.loss),
    };
    let opts = GradcheckOptions {
        dims: FieldDims { classes: args.classes, height: args.size, width: args.size },
        kernel_size: args.w,
        splitter: args.splitter,
        reduction: Reduction::Mean,
        step: args.step,
        ..GradcheckOptions::default()
    };
    let report = run_gradcheck_with(kind, &opts, args.samples, args.seed)?;
    emit_json(args.out.as_deref(), &report)?;
    if !report.passes(0.95) {
        bail!(
            "{}: only {:.1}% of coordinates within tolerance",
            report.loss_name,
            100.0 * report.fraction_passing
        );
    }
    Ok(())
}

fn cmd_train(cfg: &mut ExperimentConfig, args: &TrainArgs) -> anyhow::Result<()> {
    apply_dataset(cfg, &args.data_flags);
    let t = &mut cfg.train;
    if let Some(e) = args.epl {
        t.epl = matches!(e, OnOff::On);
    }
    if args.ablate.is_some() {
        t.conversion = ConversionKind::Sc;
    }
    if let Some(v) = args.epochs {
        t.epochs = v;
    }
    if let Some(v) = args.lr {
        t.learning_rate = v;
    }
    if let Some(v) = args.batch_size {
        t.batch_size = v;
    }
    if let Some(v) = args.train_seed {
        t.seed = v;
    }
    if let Some(v) = args.mu {
        cfg.loss.mu_exp = v;
    }
    if let Some(v) = args.w {
        cfg.ac.w = v;
    }
    if let Some(v) = args.splitter {
        cfg.ac.splitter = v;
    }
    if let Some(v) = args.lambda1 {
        cfg.loss.lambda1 = v;
    }
    if let Some(v) = args.lambda2 {
        cfg.loss.lambda2 = v;
    }
    if let Some(dir) = &args.data {
        cfg.dataset = experiment::read_manifest(dir)?.scene;
    }
    cfg.validate()?;
    prepare_dir(&args.out)?;
    write_echo(&args.out.join(experiment::CONFIG_ECHO_FILE), cfg)?;
    with_status(&args.out, || {
        let mut data = experiment::build_datasets(cfg)?;
        if let Some(dir) = &args.data {
            data.train = experiment::read_dataset(dir)?.1;
        }
        let mut history = Vec::new();
        let result = epl_core::model::train(&data.train, &data.eval, &cfg.train_config(), |r| {
            println!(
                "epoch {:>3}  loss {:.4} (ce {:.4} point {:.4} line {:.4})  mIoU {:.4}  trimap {}  F {:.4}",
                r.epoch,
                r.total,
                r.ce,
                r.point,
                r.line,
                r.miou,
                r.trimap_iou.map_or("-".into(), |v| format!("{v:.4}")),
                r.fmeasure
            );
            history.push(*r);
        });
        // history up to the failure is kept either way
        experiment::write_history(&args.out, &history)?;
        let out = result?;
        experiment::save_checkpoint(&args.out, &out.net, cfg)?;
        let preds = data
            .eval
            .iter()
            .map(|s| Ok(out.net.forward(&s.image)?.argmax()))
            .collect::<epl::Result<Vec<_>>>()?;
        experiment::write_label_dir(&args.out.join("predictions"), &preds)?;
        let gts: Vec<_> = data.eval.iter().map(|s| s.labels.clone()).collect();
        experiment::write_label_dir(&args.out.join("ground_truth"), &gts)?;
        let report = experiment::evaluate(&out.net, &data.eval, cfg)?;
        experiment::write_eval_report(&args.out, &report)?;
        Ok(())
    })
}

fn cmd_eval(cfg: &mut ExperimentConfig, args: &EvalArgs) -> anyhow::Result<()> {
    if let Some(k) = args.classes {
        cfg.dataset.classes = k;
    }
    if let Some(w) = &args.widths {
        cfg.eval.trimap_widths = w.clone();
    }
    if let Some(t) = &args.tolerances {
        cfg.eval.f_tolerances = t.clone();
    }
    prepare_dir(&args.out)?;
    write_echo(&args.out.join(experiment::CONFIG_ECHO_FILE), &cfg.eval)?;
    with_status(&args.out, || {
        let report = experiment::evaluate_dirs(&args.pred, &args.gt, cfg)?;
        experiment::write_eval_report(&args.out, &report)?;
        println!("{}", serde_json::to_string_pretty(&report)?);
        Ok(())
    })
}

fn cmd_ablate(cfg: &mut ExperimentConfig, args: &AblateArgs) -> anyhow::Result<()> {
    apply_dataset(cfg, &args.data_flags);
    if let Some(s) = &args.seeds {
        cfg.ablation.seeds = s.clone();
    }
    if let Some(e) = args.epochs {
        cfg.train.epochs = e;
    }
    cfg.validate()?;
    let sweep = match args.sweep {
        SweepArg::Mu => Sweep::Mu,
        SweepArg::Splitter => Sweep::Splitter,
        SweepArg::Kernel => Sweep::Kernel,
        SweepArg::Weight => Sweep::Weight,
    };
    prepare_dir(&args.out)?;
    write_echo(&args.out.join(experiment::CONFIG_ECHO_FILE), cfg)?;
    with_status(&args.out, || {
        let data = experiment::build_datasets(cfg)?;
        let rows = experiment::ablate(cfg, sweep, &data, |r| {
            println!(
                "{}={}  mIoU {:.4}  trimap {}  F {:.4}",
                r.sweep,
                r.value,
                r.miou,
                r.trimap_iou.map_or("-".into(), |v| format!("{v:.4}")),
                r.fmeasure
            );
        })?;
        let path = args.out.join(format!("ablation_{}.csv", sweep.name()));
        experiment::write_ablation_csv(&path, &rows)?;
        Ok(())
    })
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let mut cfg = load_config(cli.config.as_deref())?;
    match &cli.command {
        Command::Gen(a) => cmd_gen(&mut cfg, a),
        Command::Convert(a) => cmd_convert(&cfg, a),
        Command::Loss(a) => cmd_loss(&cfg, a),
        Command::Gradcheck(a) => cmd_gradcheck(&cfg, a),
        Command::Train(a) => cmd_train(&mut cfg, a),
        Command::Eval(a) => cmd_eval(&mut cfg, a),
        Command::Ablate(a) => cmd_ablate(&mut cfg, a),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
