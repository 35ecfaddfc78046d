//! The `vidseg` command line.
//!
//! Exit codes: 0 success, 1 usage, 2 data error, 3 numeric failure.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::dataio::{
    load_camvid, load_dataset, load_predictions, save_dataset, save_predictions, sequence_id,
    split_by_distribution, Dataset, Split, MANIFEST_FILE,
};
use crate::error::{Error, Result};
use crate::experiment::{train_first_stage, train_second_stage, ExperimentConfig};
use crate::metrics::{density_report, ConfusionMatrix, DensityReport, MetricsReport};
use crate::nn::checkpoint;
use crate::pipeline::{
    budget_curve, calibrate, segment_sequence, CostModel, FramePath, Network, Networks,
    PrimingPeriod, ScheduleConfig,
};
use crate::report;
use crate::subn::{run_subn, DEFAULT_STRIDES};
use crate::synthgen::generate_dataset;
use crate::types::{ClassTable, LabelMap, VideoSequence};

pub const PRIMING_CKPT: &str = "priming.ckpt";
pub const APPROX_ALONE_CKPT: &str = "approx_alone.ckpt";
pub const APPROX_CKPT: &str = "approximating.ckpt";
pub const ENSEMBLE_CKPT: &str = "ensemble.ckpt";

#[derive(Parser, Debug)]
#[command(
    name = "vidseg",
    version,
    about = "Budget-aware semantic video segmentation"
)]
pub struct Cli {
    /// Seed for every random choice; overrides the config file's seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for data-parallel work (default: all cores).
    #[arg(long, global = true, value_parser = clap::value_parser!(u16).range(1..))]
    pub threads: Option<u16>,
    /// Experiment config (TOML) with schedule, training and scene settings.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write a synthetic highway dataset.
    Generate(GenerateArgs),
    /// Spatial and temporal annotation density.
    Density(DensityArgs),
    /// Sub-N oracle: ground truth subsampled at each stride and upscaled.
    Subn(SubnArgs),
    /// Train networks and write checkpoints.
    Train(TrainArgs),
    /// Segment a dataset with the keyframe schedule.
    Run(RunArgs),
    /// Relative runtime for each priming period.
    Budget(BudgetArgs),
    /// Score saved predictions against ground truth.
    Eval(EvalArgs),
}

#[derive(Args, Debug)]
pub struct DataArgs {
    /// Dataset manifest, dataset directory, or CamVid-style directory
    /// (`classes.cfg`, `frames/`, `labels/`).
    pub dataset: PathBuf,
    /// Frame rate of a CamVid-style directory, in Hz.
    #[arg(long, default_value_t = 30.0)]
    pub frame_rate: f64,
    /// Map unknown label ids or colours to the unknown class instead of failing.
    #[arg(long)]
    pub lenient: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SplitChoice {
    /// The manifest's training sequences.
    Train,
    /// The manifest's held-out sequences.
    Test,
    /// Every sequence.
    All,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Stage {
    /// Priming network and the stand-alone approximating network.
    Priming,
    /// Approximating and ensemble networks through the recurrence.
    Joint,
}

#[derive(Args, Debug)]
pub struct GenerateArgs {
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Number of sequences.
    #[arg(long, default_value_t = 15)]
    pub sequences: usize,
    /// Frames per sequence (overrides the config's scene).
    #[arg(long)]
    pub frames: Option<usize>,
    /// Frame width in pixels (overrides the config's scene).
    #[arg(long)]
    pub width: Option<usize>,
    /// Frame height in pixels (overrides the config's scene; the bonnet
    /// becomes 1/16 of it).
    #[arg(long)]
    pub height: Option<usize>,
    /// Fraction of sequences in the training split.
    #[arg(long, default_value_t = 0.67)]
    pub train_fraction: f64,
}

#[derive(Args, Debug)]
pub struct DensityArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Write the CSV here instead of standard output.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SubnArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Comma-separated strides.
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_STRIDES)]
    pub strides: Vec<usize>,
    /// Sequences to use.
    #[arg(long, value_enum, default_value_t = SplitChoice::All)]
    pub split: SplitChoice,
    /// Write the CSV here instead of standard output.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Training stage.
    #[arg(long, value_enum)]
    pub stage: Stage,
    /// Checkpoint directory; the joint stage reads the priming stage's output.
    #[arg(long)]
    pub checkpoints: PathBuf,
}

#[derive(Args, Debug)]
pub struct RunArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Directory holding priming, approximating and ensemble checkpoints.
    #[arg(long)]
    pub checkpoints: PathBuf,
    /// Priming period: a positive integer or `inf` (overrides the config).
    #[arg(long)]
    pub period: Option<PrimingPeriod>,
    /// Cost model (TOML) used for the cost trace.
    #[arg(long)]
    pub cost_model: PathBuf,
    /// Sequences to use.
    #[arg(long, value_enum, default_value_t = SplitChoice::Test)]
    pub split: SplitChoice,
    /// Output directory for predictions/, metrics.csv, cost_trace.csv and cost_model.toml.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct BudgetArgs {
    /// Cost model (TOML).
    #[arg(
        long,
        conflicts_with = "calibrate",
        required_unless_present = "calibrate"
    )]
    pub cost_model: Option<PathBuf>,
    /// Time the networks in --checkpoints instead of reading a cost model.
    #[arg(long, requires = "checkpoints")]
    pub calibrate: bool,
    /// Checkpoint directory for --calibrate.
    #[arg(long)]
    pub checkpoints: Option<PathBuf>,
    /// Frame height for --calibrate.
    #[arg(long, default_value_t = 64)]
    pub height: usize,
    /// Frame width for --calibrate.
    #[arg(long, default_value_t = 96)]
    pub width: usize,
    /// Comma-separated priming periods.
    #[arg(long, value_delimiter = ',', default_value = "1,2,5,inf")]
    pub periods: Vec<PrimingPeriod>,
    /// Sequence length the runtime is amortized over.
    #[arg(long, default_value_t = 30)]
    pub frames: usize,
    /// Also save the cost model here.
    #[arg(long)]
    pub save_cost_model: Option<PathBuf>,
    /// Write the CSV here instead of standard output.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Prediction directory laid out as `<sequence id>/label_tttt.img`.
    #[arg(long)]
    pub predictions: PathBuf,
    /// Sequences to use.
    #[arg(long, value_enum, default_value_t = SplitChoice::Test)]
    pub split: SplitChoice,
    /// Write the CSV here instead of standard output.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

/// Parse arguments, run, and return the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        set_threads(n.into())?;
    }
    let mut cfg = match &cli.config {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            toml::from_str::<ExperimentConfig>(&text)
                .map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
        }
        None => ExperimentConfig::default(),
    };
    let seed = cli.seed.unwrap_or(cfg.seed);
    cfg = cfg.with_seed(seed);
    cfg.validate()?;
    match cli.command {
        Command::Generate(a) => cmd_generate(&a, cfg),
        Command::Density(a) => cmd_density(&a),
        Command::Subn(a) => cmd_subn(&a),
        Command::Train(a) => cmd_train(&a, &cfg),
        Command::Run(a) => cmd_run(&a, &cfg),
        Command::Budget(a) => cmd_budget(&a, &cfg),
        Command::Eval(a) => cmd_eval(&a),
    }
}

fn set_threads(n: usize) -> Result<()> {
    #[cfg(feature = "parallel")]
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    Ok(())
}

fn emit(text: &str, dest: Option<&Path>) -> Result<()> {
    match dest {
        Some(p) => fs::write(p, text).map_err(|e| Error::io(p, e)),
        None => std::io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| Error::io("<stdout>", e)),
    }
}

/// Load a dataset directory or manifest, or a CamVid-style directory as a
/// single sequence named after the directory in the test split.
pub fn open_dataset(a: &DataArgs) -> Result<Dataset> {
    let p = &a.dataset;
    if p.is_dir() && !p.join(MANIFEST_FILE).exists() && p.join("frames").is_dir() {
        let (table, seq) = load_camvid(p, a.frame_rate, a.lenient)?;
        let id = p
            .file_name()
            .and_then(|n| n.to_str())
            .unwrap_or("camvid")
            .to_string();
        return Ok(Dataset {
            table,
            ids: vec![id.clone()],
            sequences: vec![seq],
            split: Split {
                train: Vec::new(),
                test: vec![id],
            },
        });
    }
    load_dataset(p, a.lenient)
}

fn select(ds: &Dataset, split: SplitChoice) -> Result<Vec<(String, &VideoSequence)>> {
    let names: Vec<&String> = match split {
        SplitChoice::All => ds.ids.iter().collect(),
        SplitChoice::Train => ds.split.train.iter().collect(),
        SplitChoice::Test => ds.split.test.iter().collect(),
    };
    let picked: Vec<_> = names
        .into_iter()
        .filter_map(|n| {
            ds.ids
                .iter()
                .position(|i| i == n)
                .map(|i| (n.clone(), &ds.sequences[i]))
        })
        .collect();
    if picked.is_empty() {
        return Err(Error::Empty(
            format!("the {split:?} split has no sequences").to_lowercase(),
        ));
    }
    Ok(picked)
}

fn cmd_generate(a: &GenerateArgs, mut cfg: ExperimentConfig) -> Result<()> {
    if let Some(f) = a.frames {
        cfg.scene.num_frames = f;
    }
    if let Some(w) = a.width {
        cfg.scene.width = w;
    }
    if let Some(h) = a.height {
        cfg.scene.height = h;
        cfg.scene.bonnet_rows = (h / 16).max(1);
    }
    let seqs = generate_dataset(&cfg.scene, a.sequences)?;
    let table = cfg.scene.table();
    let ids: Vec<String> = (0..seqs.len()).map(sequence_id).collect();
    let split = split_by_distribution(&seqs, &table, a.train_fraction, cfg.seed)?.named(&ids);
    let path = save_dataset(&seqs, &table, &split, &a.out)?;
    println!("{}", path.display());
    Ok(())
}

fn cmd_density(a: &DensityArgs) -> Result<()> {
    let ds = open_dataset(&a.data)?;
    let mut rows: Vec<(String, DensityReport)> = Vec::new();
    for (id, seq) in ds.ids.iter().zip(&ds.sequences) {
        if seq.labels().next().is_some() && seq.len() >= 2 {
            rows.push((
                id.clone(),
                density_report(std::slice::from_ref(seq), &ds.table)?,
            ));
        }
    }
    rows.push(("all".into(), density_report(&ds.sequences, &ds.table)?));
    let all = &rows[rows.len() - 1].1;
    eprintln!(
        "spatial density {} temporal density {} Hz",
        report::real(all.spatial_density),
        report::real(all.temporal_density)
    );
    emit(&report::density_csv(&rows)?, a.csv.as_deref())
}

fn cmd_subn(a: &SubnArgs) -> Result<()> {
    let ds = open_dataset(&a.data)?;
    let seqs = select(&ds, a.split)?;
    let labels: Vec<&LabelMap> = seqs.iter().flat_map(|(_, s)| s.labels()).collect();
    let reports = run_subn(&labels, &a.strides, &ds.table)?;
    emit(&report::subn_csv(&reports, &ds.table)?, a.csv.as_deref())
}

fn load_net(dir: &Path, name: &str) -> Result<Network> {
    let (spec, params) = checkpoint::load(&dir.join(name), None)?;
    Network::new(spec, params)
}

fn save_net(dir: &Path, name: &str, net: &Network) -> Result<()> {
    checkpoint::save(&dir.join(name), &net.spec, &net.params)
}

fn cmd_train(a: &TrainArgs, cfg: &ExperimentConfig) -> Result<()> {
    let ds = open_dataset(&a.data)?;
    let train: Vec<VideoSequence> = select(&ds, SplitChoice::Train)?
        .into_iter()
        .map(|(_, s)| s.clone())
        .collect();
    fs::create_dir_all(&a.checkpoints).map_err(|e| Error::io(&a.checkpoints, e))?;
    let dir = &a.checkpoints;
    match a.stage {
        Stage::Priming => {
            let first = train_first_stage(&train, cfg, &ds.table)?;
            save_net(dir, PRIMING_CKPT, &first.priming)?;
            save_net(dir, APPROX_ALONE_CKPT, &first.approximating)?;
            emit(
                &report::loss_csv(&first.priming_report.epoch_losses)?,
                Some(&dir.join("priming_loss.csv")),
            )?;
            emit(
                &report::loss_csv(&first.approximating_report.epoch_losses)?,
                Some(&dir.join("approx_alone_loss.csv")),
            )?;
        }
        Stage::Joint => {
            let priming = load_net(dir, PRIMING_CKPT)?;
            let approx = load_net(dir, APPROX_ALONE_CKPT)?;
            let (nets, rep) = train_second_stage(&train, &priming, &approx, cfg, &ds.table)?;
            save_net(dir, APPROX_CKPT, &nets.approximating)?;
            save_net(dir, ENSEMBLE_CKPT, &nets.ensemble)?;
            emit(
                &report::loss_csv(&rep.epoch_losses)?,
                Some(&dir.join("joint_loss.csv")),
            )?;
        }
    }
    eprintln!("checkpoints written to {}", dir.display());
    Ok(())
}

/// Load the three pipeline networks from a checkpoint directory.
pub fn load_networks(dir: &Path, table: &ClassTable) -> Result<Networks> {
    let nets = Networks {
        priming: load_net(dir, PRIMING_CKPT)?,
        approximating: load_net(dir, APPROX_CKPT)?,
        ensemble: load_net(dir, ENSEMBLE_CKPT)?,
    };
    nets.check(table)?;
    Ok(nets)
}

fn accumulate_labeled(
    cm: &mut ConfusionMatrix,
    seq: &VideoSequence,
    preds: &[LabelMap],
    table: &ClassTable,
) -> Result<()> {
    for (f, p) in seq.frames.iter().zip(preds) {
        if let Some(gt) = &f.label {
            cm.accumulate_allow_unknown(gt, p, table)?;
        }
    }
    Ok(())
}

fn cmd_run(a: &RunArgs, cfg: &ExperimentConfig) -> Result<()> {
    let ds = open_dataset(&a.data)?;
    let seqs = select(&ds, a.split)?;
    let nets = load_networks(&a.checkpoints, &ds.table)?;
    let costs = CostModel::load(&a.cost_model)?;
    let sched = ScheduleConfig::new(
        a.period.unwrap_or(cfg.schedule.period),
        cfg.schedule.downsample_factor,
    )?;
    let mut cm = ConfusionMatrix::for_table(&ds.table);
    let mut predictions = BTreeMap::new();
    let mut traces: Vec<(String, Vec<(FramePath, f64)>)> = Vec::new();
    let (mut total_cost, mut total_frames) = (0.0, 0usize);
    for (id, seq) in &seqs {
        let out = segment_sequence(seq, &nets, sched, &costs, &ds.table)?;
        let labels: Vec<LabelMap> = out.frames.iter().map(|f| f.labels.clone()).collect();
        accumulate_labeled(&mut cm, seq, &labels, &ds.table)?;
        total_cost += out.total_cost();
        total_frames += out.frames.len();
        traces.push((
            id.clone(),
            out.frames.iter().map(|f| (f.path, f.cost)).collect(),
        ));
        predictions.insert(id.clone(), labels);
    }
    let metrics = MetricsReport::from_confusion(&cm, &ds.table)?;
    let relative = total_cost / (total_frames as f64 * costs.cost_prime);
    fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    save_predictions(&a.out.join("predictions"), &predictions)?;
    emit(
        &report::metrics_csv(&metrics, Some(relative))?,
        Some(&a.out.join("metrics.csv")),
    )?;
    emit(
        &report::cost_trace_csv(&traces)?,
        Some(&a.out.join("cost_trace.csv")),
    )?;
    costs.save(&a.out.join("cost_model.toml"))?;
    eprintln!(
        "mIoU {} relative runtime {}",
        report::real(metrics.miou),
        report::real(relative)
    );
    Ok(())
}

fn cmd_budget(a: &BudgetArgs, cfg: &ExperimentConfig) -> Result<()> {
    let costs = match (&a.cost_model, &a.checkpoints) {
        (Some(p), _) if !a.calibrate => CostModel::load(p)?,
        (_, Some(dir)) => {
            let nets = Networks {
                priming: load_net(dir, PRIMING_CKPT)?,
                approximating: load_net(dir, APPROX_CKPT)?,
                ensemble: load_net(dir, ENSEMBLE_CKPT)?,
            };
            calibrate(
                &nets,
                cfg.schedule.downsample_factor,
                a.height,
                a.width,
                cfg.calibration_runs,
            )?
        }
        _ => {
            return Err(Error::InvalidArgument(
                "pass --cost-model or --calibrate with --checkpoints".into(),
            ))
        }
    };
    if let Some(p) = &a.save_cost_model {
        costs.save(p)?;
    }
    let rows = budget_curve(&costs, &a.periods, a.frames)?;
    emit(&report::budget_csv(&rows, &costs)?, a.csv.as_deref())
}

fn cmd_eval(a: &EvalArgs) -> Result<()> {
    let ds = open_dataset(&a.data)?;
    let seqs = select(&ds, a.split)?;
    let mut cm = ConfusionMatrix::for_table(&ds.table);
    for (id, seq) in &seqs {
        let preds = load_predictions(&a.predictions, id, seq.len(), &ds.table)?;
        accumulate_labeled(&mut cm, seq, &preds, &ds.table)?;
    }
    let metrics = MetricsReport::from_confusion(&cm, &ds.table)?;
    emit(&report::metrics_csv(&metrics, None)?, a.csv.as_deref())
}
