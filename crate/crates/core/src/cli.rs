//! Command-line front end. `run` parses arguments, merges the optional
//! key-value config file, dispatches, and maps failures to exit codes.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::parser::ValueSource;
use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::cwt::{spectrogram_stack, stack_metadata};
use crate::data::{load_dataset, Dataset, Passage};
use crate::metrics::{pick_peaks, Evaluator, MetricsReport, PeakConfig};
use crate::model::{raw_tensor, Vader, VaderConfig};
use crate::mrf::{plan_grid, plan_to_csv, summarize, GridAxes, HyperParams, InputKind, PlanThresholds};
use crate::nn::LossConfig;
use crate::splits::{dgps_split, stratified_split, SplitPlan, DEFAULT_TEST_FRACTION};
use crate::synth::{write_dataset, BridgeConfig, DatasetConfig, SignalConfig};
use crate::train::{prepare_samples, train, TrainOptions, TrainSchedule};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;

#[derive(Debug, Parser, Serialize)]
#[command(name = "vader", version, about = "Virtual axle detection on bridge accelerations")]
pub struct Cli {
    /// Flat `key = value` file; keys are long flag names of the subcommand.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Falls back to VADER_SEED, then 0.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Directory for run.json and default outputs.
    #[arg(long, global = true, default_value = ".")]
    pub out: PathBuf,
    /// Single-threaded reference execution.
    #[arg(long, global = true)]
    pub deterministic: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "snake_case", tag = "subcommand")]
pub enum Command {
    /// Classify a hyperparameter grid by the MRF rule.
    Plan(PlanArgs),
    /// Generate a synthetic dataset.
    Synth(SynthArgs),
    /// Build a stratified or DGPS split.
    Split(SplitArgs),
    /// Write spectrogram stacks for every channel.
    Transform(TransformArgs),
    /// Train one fold.
    Train(TrainArgs),
    /// Score a trained model.
    Eval(EvalArgs),
    /// Detect axles and write their times.
    Detect(DetectArgs),
    /// Time raw vs spectrogram inference and compare input sizes.
    Bench(BenchArgs),
}

fn parse_range(s: &str) -> Result<(f64, f64), String> {
    let (a, b) = s.split_once(':').ok_or("expected LO:HI")?;
    let lo: f64 = a.trim().parse().map_err(|_| "bad range start")?;
    let hi: f64 = b.trim().parse().map_err(|_| "bad range end")?;
    Ok((lo, hi))
}

/// Accepts decimals or fractions like `1/6`.
fn parse_fraction(s: &str) -> Result<f64, String> {
    match s.split_once('/') {
        Some((a, b)) => {
            let a: f64 = a.trim().parse().map_err(|_| "bad numerator")?;
            let b: f64 = b.trim().parse().map_err(|_| "bad denominator")?;
            Ok(a / b)
        }
        None => s.trim().parse().map_err(|_| "bad fraction".into()),
    }
}

fn parse_weight(item: &str) -> Result<(usize, f64), String> {
    let (n, w) = item.split_once(':').ok_or("expected AXLES:WEIGHT")?;
    Ok((
        n.trim().parse().map_err(|_| "bad axle count")?,
        w.trim().parse().map_err(|_| "bad weight")?,
    ))
}

#[derive(Debug, Args, Serialize)]
#[command(args_override_self = true)]
pub struct PlanArgs {
    #[arg(long, default_value_t = 600.0)]
    pub fs: f64,
    /// Lowest frequency that must be captured (Hz).
    #[arg(long, default_value_t = 5.0)]
    pub fl_certain: f64,
    /// Lowest frequency that can still help (Hz).
    #[arg(long, default_value_t = 1.0)]
    pub fl_useful: f64,
    #[arg(long, value_delimiter = ',', default_value = "3,5,7,9,11,13,15,17")]
    pub kernels: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "2,3,4,5")]
    pub pools: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "3,4")]
    pub steps: Vec<u32>,
}

#[derive(Debug, Args, Serialize)]
#[command(args_override_self = true)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 250)]
    pub passages: usize,
    /// Axle-count weights as `AXLES:WEIGHT,...`.
    #[arg(long, value_delimiter = ',', value_parser = parse_weight, default_value = "8:0.5,16:0.3,32:0.2")]
    pub axles: Vec<(usize, f64)>,
    /// m/s as `LO:HI`.
    #[arg(long, value_parser = parse_range, default_value = "20:60")]
    pub speed: (f64, f64),
    /// Bridge frequency in Hz as `LO:HI`.
    #[arg(long, value_parser = parse_range, default_value = "5:6.9")]
    pub freq: (f64, f64),
    /// Sensor positions in meters.
    #[arg(long, value_delimiter = ',', default_value = "4.1,8.2,12.3")]
    pub sensors: Vec<f64>,
    #[arg(long, default_value_t = 16.4)]
    pub span: f64,
    #[arg(long, default_value_t = 0.03)]
    pub damping: f64,
    #[arg(long, default_value_t = 600.0)]
    pub fs: f64,
    #[arg(long, default_value_t = 0.1)]
    pub noise: f64,
    #[arg(long, default_value_t = 0.3)]
    pub click: f64,
    /// Seconds recorded after the last crossing.
    #[arg(long, default_value_t = 1.0)]
    pub tail: f64,
    /// Output directory (default: <out>/dataset).
    #[arg(long)]
    pub dataset: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioArg {
    Stratified,
    Dgps,
}

#[derive(Debug, Args, Serialize)]
#[command(args_override_self = true)]
pub struct SplitArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long, value_enum, default_value_t = ScenarioArg::Stratified)]
    pub scenario: ScenarioArg,
    /// Test fraction for the stratified scenario, e.g. `1/6`.
    #[arg(long, value_parser = parse_fraction)]
    pub fraction: Option<f64>,
    /// Resolves ties for the most common axle count (DGPS).
    #[arg(long)]
    pub modal_axles: Option<usize>,
    /// Output file (default: <out>/split.json).
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
#[command(args_override_self = true)]
pub struct TransformArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    /// Output directory (default: <out>/spectrograms).
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum InputArg {
    Raw,
    Spectrogram,
}

#[derive(Debug, Args, Serialize)]
#[command(args_override_self = true)]
pub struct TrainArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub split: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub fold: usize,
    #[arg(long, value_enum, default_value_t = InputArg::Raw)]
    pub input: InputArg,
    #[arg(long, default_value_t = 9)]
    pub kernel: usize,
    #[arg(long, default_value_t = 2)]
    pub pool: usize,
    #[arg(long, default_value_t = 4)]
    pub steps: u32,
    #[arg(long, default_value_t = 16)]
    pub base_width: usize,
    #[arg(long, default_value_t = 256)]
    pub width_cap: usize,
    #[arg(long, default_value_t = 300)]
    pub epochs: usize,
    #[arg(long, default_value_t = 16)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 0.001)]
    pub lr: f64,
    #[arg(long, default_value_t = 2.5)]
    pub gamma: f64,
    #[arg(long, default_value_t = 0.25)]
    pub alpha: f64,
    #[arg(long)]
    pub quiet: bool,
    /// Checkpoint base path (default: <out>/model).
    #[arg(long)]
    pub model: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
#[command(args_override_self = true)]
pub struct EvalArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    /// Checkpoint base path.
    #[arg(long)]
    pub model: PathBuf,
    /// Evaluate the test ids of this split; all passages otherwise.
    #[arg(long)]
    pub split: Option<PathBuf>,
    #[arg(long, default_value_t = 0.25)]
    pub min_confidence: f64,
    #[arg(long, default_value_t = 20)]
    pub min_distance: usize,
}

#[derive(Debug, Args, Serialize)]
#[command(args_override_self = true)]
pub struct DetectArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Dataset directory to run on.
    #[arg(long, conflicts_with = "signal")]
    pub dataset: Option<PathBuf>,
    /// A single signal file, one sample per line.
    #[arg(long)]
    pub signal: Option<PathBuf>,
    /// Sample rate of `--signal`.
    #[arg(long, default_value_t = 600.0)]
    pub fs: f64,
    /// Sensor positions in meters, one per channel; enables velocity estimates.
    #[arg(long, value_delimiter = ',')]
    pub sensor_positions: Option<Vec<f64>>,
    #[arg(long, default_value_t = 0.25)]
    pub min_confidence: f64,
    #[arg(long, default_value_t = 20)]
    pub min_distance: usize,
    /// Output CSV (default: <out>/detections.csv).
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
#[command(args_override_self = true)]
pub struct BenchArgs {
    #[arg(long, default_value_t = 7200)]
    pub samples: usize,
    #[arg(long, default_value_t = 3)]
    pub repeats: usize,
    #[arg(long, default_value_t = 9)]
    pub kernel: usize,
    #[arg(long, default_value_t = 2)]
    pub pool: usize,
    #[arg(long, default_value_t = 4)]
    pub steps: u32,
    #[arg(long, default_value_t = 16)]
    pub base_width: usize,
    #[arg(long, default_value_t = 256)]
    pub width_cap: usize,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    /// Help or version text; not a failure.
    #[error("{0}")]
    Info(String),
}

impl CliError {
    fn code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Data(_) => EXIT_DATA,
            CliError::Info(_) => EXIT_OK,
        }
    }
}

fn data_err(e: impl std::fmt::Display) -> CliError {
    CliError::Data(e.to_string())
}

/// Reads `key = value` lines; `#` starts a comment.
pub fn parse_config(text: &str) -> Result<BTreeMap<String, String>, String> {
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| format!("config line {}: expected key = value", i + 1))?;
        out.insert(k.trim().replace('_', "-"), v.trim().to_string());
    }
    Ok(out)
}

fn config_path(args: &[OsString]) -> Option<PathBuf> {
    let mut it = args.iter();
    while let Some(a) = it.next() {
        let s = a.to_string_lossy();
        if s == "--config" {
            return it.next().map(PathBuf::from);
        }
        if let Some(rest) = s.strip_prefix("--config=") {
            return Some(PathBuf::from(rest));
        }
    }
    None
}

/// Re-parses with config values for every subcommand flag the command line
/// left unset.
fn merge_config(args: Vec<OsString>) -> Result<Cli, CliError> {
    let cmd = Cli::command();
    let matches = cmd.clone().try_get_matches_from(&args).map_err(clap_error)?;
    let Some(path) = config_path(&args) else {
        return Cli::from_arg_matches(&matches).map_err(clap_error);
    };
    let text = fs::read_to_string(&path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    let config = parse_config(&text).map_err(CliError::Usage)?;
    let (name, sub) = matches.subcommand().expect("subcommand is required");
    let sub_cmd = cmd.find_subcommand(name).expect("known subcommand");
    let mut extra: Vec<OsString> = Vec::new();
    let mut globals: Vec<OsString> = Vec::new();
    for (key, value) in &config {
        let Some(arg) = sub_cmd.get_arguments().find(|a| a.get_long() == Some(key.as_str())) else {
            continue;
        };
        let id = arg.get_id().as_str();
        let from_cli = sub.value_source(id) == Some(ValueSource::CommandLine);
        if from_cli {
            continue;
        }
        let flag = OsString::from(format!("--{key}"));
        let is_switch = matches!(arg.get_action(), clap::ArgAction::SetTrue);
        if arg.is_global_set() {
            if is_switch {
                if value == "true" {
                    globals.push(flag);
                }
            } else {
                globals.extend([flag, value.into()]);
            }
        } else if is_switch {
            if value == "true" {
                extra.push(flag);
            }
        } else {
            extra.extend([flag, value.into()]);
        }
    }
    // Config values go right after the subcommand so explicit flags override them.
    let pos = args
        .iter()
        .position(|a| a.to_str() == Some(name))
        .ok_or_else(|| CliError::Usage("subcommand not found".into()))?;
    let mut merged: Vec<OsString> = args[..=pos].to_vec();
    merged.extend(globals);
    merged.extend(extra);
    merged.extend(args[pos + 1..].iter().cloned());
    let matches = cmd.try_get_matches_from(merged).map_err(clap_error)?;
    Cli::from_arg_matches(&matches).map_err(clap_error)
}

fn clap_error(e: clap::Error) -> CliError {
    use clap::error::ErrorKind;
    let text = e.render().to_string();
    match e.kind() {
        ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => CliError::Info(text),
        _ => CliError::Usage(text),
    }
}

#[derive(Serialize)]
struct RunRecord<'a> {
    tool: &'static str,
    version: &'static str,
    seed: u64,
    deterministic: bool,
    out: &'a Path,
    config: &'a Option<PathBuf>,
    command: &'a Command,
}

fn resolve_seed(cli: &Cli) -> Result<u64, CliError> {
    if let Some(s) = cli.seed {
        return Ok(s);
    }
    match std::env::var("VADER_SEED") {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| CliError::Usage(format!("VADER_SEED is not an integer: {v}"))),
        Err(_) => Ok(0),
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(data_err)?;
    fs::write(path, text + "\n").map_err(|e| data_err(format!("{}: {e}", path.display())))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(data_err)?;
    }
    fs::write(path, text).map_err(|e| data_err(format!("{}: {e}", path.display())))
}

/// Entry point for the binary; returns the process exit code.
pub fn run<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString>,
{
    let args: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match merge_config(args) {
        Ok(c) => c,
        Err(CliError::Info(msg)) => {
            print!("{msg}");
            return EXIT_OK;
        }
        Err(CliError::Usage(msg)) => {
            eprint!("{msg}");
            if !msg.ends_with('\n') {
                eprintln!();
            }
            return EXIT_USAGE;
        }
        Err(e) => {
            eprintln!("error: {e}");
            return e.code();
        }
    };
    match dispatch(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.code()
        }
    }
}

fn dispatch(cli: &Cli) -> Result<(), CliError> {
    let seed = resolve_seed(cli)?;
    fs::create_dir_all(&cli.out).map_err(|e| data_err(format!("{}: {e}", cli.out.display())))?;
    write_json(
        &cli.out.join("run.json"),
        &RunRecord {
            tool: "vader",
            version: env!("CARGO_PKG_VERSION"),
            seed,
            deterministic: cli.deterministic,
            out: &cli.out,
            config: &cli.config,
            command: &cli.command,
        },
    )?;
    match &cli.command {
        Command::Plan(a) => plan(cli, a),
        Command::Synth(a) => synth(cli, a, seed),
        Command::Split(a) => split(cli, a, seed),
        Command::Transform(a) => transform(cli, a),
        Command::Train(a) => train_cmd(cli, a, seed),
        Command::Eval(a) => eval(cli, a),
        Command::Detect(a) => detect(cli, a),
        Command::Bench(a) => bench(cli, a, seed),
    }
}

fn plan(cli: &Cli, a: &PlanArgs) -> Result<(), CliError> {
    let axes = GridAxes {
        kernel_sizes: a.kernels.clone(),
        pool_sizes: a.pools.clone(),
        pool_steps: a.steps.clone(),
        ..GridAxes::default()
    };
    let th = PlanThresholds {
        sample_rate: a.fs,
        f_low_certain: a.fl_certain,
        f_low_useful: a.fl_useful,
    };
    let entries = plan_grid(&axes, &th).map_err(|e| CliError::Usage(e.to_string()))?;
    let csv = plan_to_csv(&entries);
    write_text(&cli.out.join("plan.csv"), &csv)?;
    write_json(
        &cli.out.join("plan_summary.json"),
        &summarize(&entries, &th).map_err(data_err)?,
    )?;
    print!("{csv}");
    Ok(())
}

fn synth(cli: &Cli, a: &SynthArgs, seed: u64) -> Result<(), CliError> {
    let cfg = DatasetConfig {
        n_passages: a.passages,
        axle_distribution: a.axles.clone(),
        speed_range: a.speed,
        frequency_range: a.freq,
        bridge: BridgeConfig {
            fundamental_frequency: a.freq.1,
            damping_ratio: a.damping,
            sensor_positions: a.sensors.clone(),
            span: a.span,
        },
        signal: SignalConfig {
            sample_rate: a.fs,
            noise_std: a.noise,
            click_amplitude: a.click,
            tail: a.tail,
            ..SignalConfig::default()
        },
        seed,
    };
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let root = a.dataset.clone().unwrap_or_else(|| cli.out.join("dataset"));
    let hist = write_dataset(&cfg, &root).map_err(data_err)?;
    eprintln!("wrote {} passages to {}", cfg.n_passages, root.display());
    for (axles, n) in hist {
        eprintln!("  {axles:3} axles: {n}");
    }
    Ok(())
}

fn load(path: &Path) -> Result<Dataset, CliError> {
    load_dataset(path).map_err(data_err)
}

fn split(cli: &Cli, a: &SplitArgs, seed: u64) -> Result<(), CliError> {
    let ds = load(&a.dataset)?;
    let plan = match a.scenario {
        ScenarioArg::Stratified => stratified_split(&ds, a.fraction.unwrap_or(DEFAULT_TEST_FRACTION), seed),
        ScenarioArg::Dgps => dgps_split(&ds, seed, a.modal_axles),
    }
    .map_err(data_err)?;
    let path = a.output.clone().unwrap_or_else(|| cli.out.join("split.json"));
    plan.save(&path).map_err(data_err)?;
    let pool = plan.pool().len();
    println!(
        "test {} passages, train/val {} passages in {} folds",
        plan.test.len(),
        pool,
        plan.folds.len()
    );
    Ok(())
}

fn transform(cli: &Cli, a: &TransformArgs) -> Result<(), CliError> {
    let ds = load(&a.dataset)?;
    let root = a.output.clone().unwrap_or_else(|| cli.out.join("spectrograms"));
    for p in &ds.passages {
        let dir = root.join(&p.passage_id);
        fs::create_dir_all(&dir).map_err(data_err)?;
        for ch in &p.channels {
            let stack = spectrogram_stack(&ch.samples);
            fs::write(dir.join(format!("{}.vspc", ch.sensor_id)), stack.to_bytes()).map_err(data_err)?;
        }
        write_json(&dir.join("stack_metadata.json"), &stack_metadata(p.n_samples()))?;
    }
    eprintln!("wrote stacks for {} passages to {}", ds.len(), root.display());
    Ok(())
}

fn select<'a>(ds: &'a Dataset, ids: &[String]) -> Result<Vec<&'a Passage>, CliError> {
    ids.iter()
        .map(|id| {
            ds.get(id)
                .ok_or_else(|| data_err(format!("split names unknown passage {id}")))
        })
        .collect()
}

fn train_cmd(cli: &Cli, a: &TrainArgs, seed: u64) -> Result<(), CliError> {
    let ds = load(&a.dataset)?;
    let plan = SplitPlan::load(&a.split).map_err(data_err)?;
    let (train_ids, val_ids) = plan.train_val(a.fold).map_err(|e| CliError::Usage(e.to_string()))?;
    let mut hyper = HyperParams::raw(a.kernel, a.pool, a.steps).with_base_width(a.base_width);
    hyper.input_kind = match a.input {
        InputArg::Raw => InputKind::Raw,
        InputArg::Spectrogram => InputKind::Spectrogram,
    };
    let cfg =
        VaderConfig::new(hyper, ds.passages.first().map_or(600.0, |p| p.sample_rate())).with_width_cap(a.width_cap);
    let probe = Vader::new(cfg, seed).map_err(|e| CliError::Usage(e.to_string()))?;
    let tr = prepare_samples(&probe, &select(&ds, &train_ids)?).map_err(data_err)?;
    let va = prepare_samples(&probe, &select(&ds, &val_ids)?).map_err(data_err)?;
    let schedule = TrainSchedule {
        max_epochs: a.epochs,
        batch_size: a.batch_size,
        initial_lr: a.lr,
        ..TrainSchedule::default()
    };
    let loss = LossConfig {
        gamma: a.gamma,
        alpha: a.alpha,
    };
    loss.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let opts = TrainOptions {
        seed,
        loss,
        verbose: !a.quiet,
        ..TrainOptions::default()
    };
    let (model, history) = train(&cfg, &tr, &va, &schedule, &opts).map_err(data_err)?;
    let base = a.model.clone().unwrap_or_else(|| cli.out.join("model"));
    model.save(&base).map_err(data_err)?;
    write_text(&cli.out.join("history.csv"), &history.to_csv())?;
    if let Some(best) = history.best_epoch {
        let e = &history.epochs[best];
        println!("best epoch {best}: val F1 {:.2}", e.val_f1);
    }
    Ok(())
}

fn peak_config(min_confidence: f64, min_distance: usize) -> Result<PeakConfig, CliError> {
    let cfg = PeakConfig {
        min_confidence,
        min_distance,
    };
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(cfg)
}

/// Scores every channel of the given passages.
pub fn evaluate_passages(model: &Vader, passages: &[&Passage], peaks: &PeakConfig) -> Result<MetricsReport, String> {
    let mut ev = Evaluator::new();
    for p in passages {
        for (ci, ch) in p.channels.iter().enumerate() {
            let probs = model.infer(&ch.samples).map_err(|e| e.to_string())?;
            let (idx, vel) = p.label_indices(ci).map_err(|e| e.to_string())?;
            ev.add(&ch.sensor_id, &probs, &idx, &vel, peaks)
                .map_err(|e| e.to_string())?;
        }
    }
    Ok(ev.report())
}

fn eval(cli: &Cli, a: &EvalArgs) -> Result<(), CliError> {
    let ds = load(&a.dataset)?;
    let model = Vader::load(&a.model).map_err(data_err)?;
    let peaks = peak_config(a.min_confidence, a.min_distance)?;
    let passages: Vec<&Passage> = match &a.split {
        Some(path) => select(&ds, &SplitPlan::load(path).map_err(data_err)?.test)?,
        None => ds.passages.iter().collect(),
    };
    let report = evaluate_passages(&model, &passages, &peaks).map_err(data_err)?;
    write_json(&cli.out.join("metrics.json"), &report)?;
    write_text(&cli.out.join("per_sensor.csv"), &report.per_sensor_csv())?;
    println!(
        "F1@200cm {:.2}  F1@37cm {:.2}  mean spatial error {}  MSA {}",
        report.f1_200,
        report.f1_37,
        report
            .mean_spatial_error_cm
            .map_or("n/a".into(), |v| format!("{v:.2} cm")),
        report.msa.map_or("n/a".into(), |v| format!("{v:.2}"))
    );
    Ok(())
}

/// Speed from the median crossing delay between the first and last sensor,
/// pairing the i-th detection on each when both found the same count.
fn estimate_speed(peaks: &[Vec<usize>], positions: &[f64], fs: f64) -> Option<f64> {
    let (first, last) = (peaks.first()?, peaks.last()?);
    if peaks.len() < 2 || first.len() != last.len() || first.is_empty() {
        return None;
    }
    let mut delays: Vec<f64> = first.iter().zip(last).map(|(&a, &b)| b as f64 - a as f64).collect();
    delays.sort_by(f64::total_cmp);
    let d = delays[delays.len() / 2] / fs;
    let dx = positions[positions.len() - 1] - positions[0];
    (d > 0.0 && dx > 0.0).then_some(dx / d)
}

fn detect(cli: &Cli, a: &DetectArgs) -> Result<(), CliError> {
    let model = Vader::load(&a.model).map_err(data_err)?;
    let peaks_cfg = peak_config(a.min_confidence, a.min_distance)?;
    // (passage id, [(sensor id, samples, sample rate)])
    type Channels = Vec<(String, Vec<f64>, f64)>;
    let passages: Vec<(String, Channels)> = match (&a.dataset, &a.signal) {
        (Some(dir), None) => load(dir)?
            .passages
            .into_iter()
            .map(|p| {
                let chans = p
                    .channels
                    .into_iter()
                    .map(|c| (c.sensor_id, c.samples, c.sample_rate))
                    .collect();
                (p.passage_id, chans)
            })
            .collect(),
        (None, Some(file)) => {
            let text = fs::read_to_string(file).map_err(|e| data_err(format!("{}: {e}", file.display())))?;
            let samples = text
                .lines()
                .enumerate()
                .filter(|(_, l)| !l.trim().is_empty())
                .map(|(i, l)| {
                    l.trim()
                        .parse::<f64>()
                        .ok()
                        .filter(|v| v.is_finite())
                        .ok_or_else(|| data_err(format!("{}:{}: not a finite number", file.display(), i + 1)))
                })
                .collect::<Result<Vec<_>, _>>()?;
            vec![("signal".into(), vec![("0".into(), samples, a.fs)])]
        }
        _ => return Err(CliError::Usage("pass exactly one of --dataset or --signal".into())),
    };
    let mut csv = String::from("passage,sensor,index,time_s,confidence,velocity_m_per_sample\n");
    for (pid, chans) in &passages {
        let mut all_peaks = Vec::new();
        let mut all_probs = Vec::new();
        for (_, samples, _) in chans {
            let probs = model.infer(samples).map_err(data_err)?;
            all_peaks.push(pick_peaks(&probs, &peaks_cfg));
            all_probs.push(probs);
        }
        let fs = chans.first().map_or(a.fs, |c| c.2);
        let speed = a
            .sensor_positions
            .as_ref()
            .filter(|pos| pos.len() == chans.len())
            .and_then(|pos| estimate_speed(&all_peaks, pos, fs));
        for (ci, (sid, _, fs)) in chans.iter().enumerate() {
            for &i in &all_peaks[ci] {
                let v = speed.map_or(String::new(), |s| format!("{:.6}", s / fs));
                csv.push_str(&format!(
                    "{pid},{sid},{i},{:.6},{:.4},{v}\n",
                    i as f64 / fs,
                    all_probs[ci][i]
                ));
            }
        }
    }
    let path = a.output.clone().unwrap_or_else(|| cli.out.join("detections.csv"));
    write_text(&path, &csv)?;
    eprintln!("wrote {}", path.display());
    Ok(())
}

#[derive(Debug, Serialize)]
pub struct BenchReport {
    pub samples: usize,
    pub repeats: usize,
    pub raw_inference_s: f64,
    pub transform_s: f64,
    pub spectrogram_inference_s: f64,
    pub spectrogram_total_s: f64,
    pub speedup: f64,
    pub raw_input_bytes: usize,
    pub spectrogram_input_bytes: usize,
    pub memory_ratio: f64,
}

/// Median wall time of `f` over `repeats` runs.
fn time_median(repeats: usize, mut f: impl FnMut()) -> f64 {
    let mut t: Vec<f64> = (0..repeats.max(1))
        .map(|_| {
            let s = Instant::now();
            f();
            s.elapsed().as_secs_f64()
        })
        .collect();
    t.sort_by(f64::total_cmp);
    t[t.len() / 2]
}

pub fn run_bench(
    hyper: HyperParams,
    width_cap: usize,
    samples: usize,
    repeats: usize,
    seed: u64,
) -> Result<BenchReport, String> {
    let raw = Vader::new(VaderConfig::new(hyper, 600.0).with_width_cap(width_cap), seed).map_err(|e| e.to_string())?;
    let spec_hyper = HyperParams {
        input_kind: InputKind::Spectrogram,
        ..hyper
    };
    let spec =
        Vader::new(VaderConfig::new(spec_hyper, 600.0).with_width_cap(width_cap), seed).map_err(|e| e.to_string())?;
    let signal: Vec<f64> = (0..samples)
        .map(|i| {
            let t = i as f64 / 600.0;
            (2.0 * std::f64::consts::PI * 6.0 * t).sin() + 0.1 * (2.0 * std::f64::consts::PI * 47.0 * t).sin()
        })
        .collect();
    let raw_input = raw_tensor(&signal);
    let stack = spectrogram_stack(&signal);
    let raw_inference_s = time_median(repeats, || {
        raw.infer_tensor(&raw_tensor(&signal)).expect("raw inference");
    });
    let transform_s = time_median(repeats, || {
        spectrogram_stack(&signal);
    });
    let spectrogram_inference_s = time_median(repeats, || {
        spec.infer_spectrogram(&stack).expect("spectrogram inference");
    });
    let raw_bytes = raw_input.len() * std::mem::size_of::<f32>();
    let spec_bytes = stack.size_bytes();
    let total = transform_s + spectrogram_inference_s;
    Ok(BenchReport {
        samples,
        repeats,
        raw_inference_s,
        transform_s,
        spectrogram_inference_s,
        spectrogram_total_s: total,
        speedup: total / raw_inference_s,
        raw_input_bytes: raw_bytes,
        spectrogram_input_bytes: spec_bytes,
        memory_ratio: spec_bytes as f64 / raw_bytes as f64,
    })
}

fn bench(cli: &Cli, a: &BenchArgs, seed: u64) -> Result<(), CliError> {
    let hyper = HyperParams::raw(a.kernel, a.pool, a.steps).with_base_width(a.base_width);
    let report = run_bench(hyper, a.width_cap, a.samples, a.repeats, seed).map_err(CliError::Usage)?;
    write_json(&cli.out.join("bench.json"), &report)?;
    println!(
        "raw {:.4} s | cwt {:.4} s + spectrogram {:.4} s = {:.4} s | {:.1}x | input bytes {} vs {} ({}x)",
        report.raw_inference_s,
        report.transform_s,
        report.spectrogram_inference_s,
        report.spectrogram_total_s,
        report.speedup,
        report.raw_input_bytes,
        report.spectrogram_input_bytes,
        report.memory_ratio
    );
    Ok(())
}
