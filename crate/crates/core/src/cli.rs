//! Command-line front end. Exit codes: 0 success, 1 configuration or usage
//! error, 2 data or file error, 3 numeric failure.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::data::{load_emgb, save_emgb, split_ratio, split_repetition, synth_generate, PreprocessConfig, SplitSpec, SynthConfig, WindowedDataset};
use crate::error::{Error, Result};
use crate::gradcheck::{run_suite, GradcheckConfig};
use crate::model::{self, count_flops, AblationFlags, Model, ModelConfig};
use crate::rng::RngState;
use crate::train::{self, check_compatible, fit, format_subject_table, per_subject, predict, Preset, TrainConfig};

pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

/// JSON configuration file. Every section is optional; unknown keys are
/// rejected.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CliConfigFile {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub preprocess: PreprocessConfig,
    pub ablation: AblationFlags,
}

impl CliConfigFile {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else { return Ok(Self::default()) };
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: Self = serde_json::from_str(&text)
            .map_err(|e| Error::Config(vec![format!("{}: {e}", path.display())]))?;
        cfg.train.validate()?;
        cfg.preprocess.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "tristream",
    version,
    about = "Three-stream sEMG gesture classifier: training, evaluation, ablation and FLOPs accounting",
    after_help = "Exit codes: 0 success, 1 configuration error, 2 data error, 3 numeric failure.\n\
                  TRISTREAM_THREADS caps worker threads (default: all cores)."
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model on an EMGB dataset and write a TSW1 checkpoint
    Train(TrainArgs),
    /// Evaluate a checkpoint on an EMGB dataset
    Eval(EvalArgs),
    /// Train and evaluate the five standard ablation variants
    Ablate(AblateArgs),
    /// Finite-difference check of every layer and the full model
    Gradcheck(GradcheckArgs),
    /// Generate a synthetic gesture dataset
    Synth(SynthArgs),
    /// Count FLOPs per layer for a configuration
    Flops(FlopsArgs),
    /// Split an EMGB dataset into train/val/test files
    Split(SplitArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// JSON config file (default: built-in defaults)
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Training windows (EMGB)
    #[arg(long)]
    pub data: PathBuf,
    /// Validation windows (EMGB); default: a stratified 20% of --data
    #[arg(long)]
    pub val: Option<PathBuf>,
    /// Output checkpoint (TSW1)
    #[arg(long)]
    pub out: PathBuf,
    /// Training log (JSON lines); default: <out>.log.jsonl
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// Random seed; overrides the config file
    #[arg(long)]
    pub seed: Option<u64>,
    /// Hyperparameter preset; replaces learning rate, batch size and epochs of the config file
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
    /// Number of epochs; overrides preset and config file
    #[arg(long)]
    pub epochs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Checkpoint (TSW1)
    #[arg(long)]
    pub model: PathBuf,
    /// Windows to evaluate (EMGB)
    #[arg(long)]
    pub data: PathBuf,
    /// Write the JSON metrics report here
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    /// JSON config file (default: built-in defaults)
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Windows (EMGB), split by the config's preprocess.split
    #[arg(long)]
    pub data: PathBuf,
    /// Output JSON table
    #[arg(long)]
    pub out: PathBuf,
    /// Random seed; overrides the config file
    #[arg(long)]
    pub seed: Option<u64>,
    /// Hyperparameter preset; replaces learning rate, batch size and epochs of the config file
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
    /// Number of epochs per variant; overrides preset and config file
    #[arg(long)]
    pub epochs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Seed for the random test inputs
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Maximum allowed relative error
    #[arg(long, default_value_t = 1e-4)]
    pub tol: f64,
    /// Finite-difference step
    #[arg(long, default_value_t = 1e-5)]
    pub step: f64,
    /// Print every entry, not just the summary
    #[arg(long)]
    pub verbose: bool,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Number of classes
    #[arg(long, default_value_t = 6)]
    pub classes: usize,
    /// Number of channels
    #[arg(long, default_value_t = 12)]
    pub channels: usize,
    /// Window length in samples
    #[arg(long, default_value_t = 500)]
    pub window: usize,
    /// Windows per class
    #[arg(long, default_value_t = 40)]
    pub per_class: usize,
    /// Standard deviation of the additive noise
    #[arg(long, default_value_t = 0.5)]
    pub noise: f64,
    /// Random seed
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output dataset (EMGB)
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct FlopsArgs {
    /// JSON config file (default: built-in defaults)
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Input length T; default: the config's window
    #[arg(long)]
    pub input_len: Option<usize>,
    /// Print the report as JSON
    #[arg(long)]
    pub json: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SplitMode {
    /// Stratified 6:2:2 train/val/test
    Ratio,
    /// Repetitions 1,3,4,6 train and 2,5 test; val carved from train
    Repetition,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    /// Windows to split (EMGB)
    #[arg(long)]
    pub data: PathBuf,
    /// Directory for train.emgb, val.emgb and test.emgb
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Split rule
    #[arg(long, value_enum, default_value_t = SplitMode::Ratio)]
    pub mode: SplitMode,
    /// Random seed
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::InvalidArgument { .. } | Error::Json(_) => EXIT_CONFIG,
        Error::Data(_) | Error::Format(_) | Error::Io { .. } | Error::ShapeMismatch { .. } => EXIT_DATA,
        Error::NonFinite { .. } | Error::Diverged { .. } => EXIT_NUMERIC,
    }
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    configure_threads();
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn configure_threads() {
    if let Some(n) = std::env::var("TRISTREAM_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        if n > 0 {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    }
}

fn dispatch(command: Command) -> Result<i32> {
    match command {
        Command::Train(a) => cmd_train(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::Ablate(a) => cmd_ablate(&a),
        Command::Gradcheck(a) => cmd_gradcheck(&a),
        Command::Synth(a) => cmd_synth(&a),
        Command::Flops(a) => cmd_flops(&a),
        Command::Split(a) => cmd_split(&a),
    }
}

fn train_config(file: &CliConfigFile, preset: Option<Preset>, seed: Option<u64>, epochs: Option<usize>) -> Result<TrainConfig> {
    let mut cfg = file.train.clone();
    if let Some(p) = preset {
        let p = TrainConfig::preset(p);
        cfg.learning_rate = p.learning_rate;
        cfg.batch_size = p.batch_size;
        cfg.epochs = p.epochs;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(e) = epochs {
        cfg.epochs = e;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// The model section with its input shape and class count taken from data.
fn model_config_for(file: &CliConfigFile, ds: &WindowedDataset) -> ModelConfig {
    ModelConfig { channels: ds.channels(), window: ds.window_len(), num_classes: ds.num_classes, ..file.model.clone() }
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn require_non_empty(ds: &WindowedDataset, path: &Path) -> Result<()> {
    if ds.is_empty() {
        return Err(Error::Data(format!("{}: dataset has no windows", path.display())));
    }
    Ok(())
}

fn cmd_train(a: &TrainArgs) -> Result<i32> {
    let file = CliConfigFile::load(a.config.as_deref())?;
    let cfg = train_config(&file, a.preset, a.seed, a.epochs)?;
    let data = load_emgb(&a.data)?;
    require_non_empty(&data, &a.data)?;
    let mut rng = RngState::new(cfg.seed).fork(3);
    let (train_ds, val_ds) = match &a.val {
        Some(path) => {
            let val = load_emgb(path)?;
            require_non_empty(&val, path)?;
            (data, val)
        }
        None => {
            let (tr, va, _) = split_ratio(&data, [8.0, 2.0, 0.0], &mut rng)?;
            (tr, va)
        }
    };
    let pre = &file.preprocess;
    let train_ds = crate::data::augment(&train_ds, pre.noise_variance, pre.augment_copies, &mut rng)?;
    let config = model_config_for(&file, &train_ds);
    let model = Model::new(config, &file.ablation, cfg.seed)?;
    println!(
        "training {} parameters on {} windows ({} validation), lr={} batch={} epochs={}",
        model.params.num_params(),
        train_ds.len(),
        val_ds.len(),
        cfg.learning_rate,
        cfg.batch_size,
        cfg.epochs
    );
    let out = fit(&model, &train_ds, &val_ds, &cfg)?;
    model::save(&out.best.params, &out.best.config, &a.out)?;
    let log_path = a.log.clone().unwrap_or_else(|| {
        let mut p = a.out.clone().into_os_string();
        p.push(".log.jsonl");
        PathBuf::from(p)
    });
    write_file(&log_path, out.log.to_jsonl()?)?;
    if let Some(last) = out.log.records.last() {
        println!("final epoch {}: val_accuracy={:.2}% val_loss={:.4}", last.epoch, last.val_accuracy, last.val_loss);
    }
    if let Some(best) = out.log.best_epoch {
        let r = &out.log.records[best - 1];
        println!("best epoch {best}: val_accuracy={:.2}%", r.val_accuracy);
    }
    println!("checkpoint: {}", a.out.display());
    println!("log: {}", log_path.display());
    Ok(0)
}

#[derive(Serialize)]
struct EvalReport<'a> {
    #[serde(flatten)]
    overall: &'a train::MetricsReport,
    per_subject: Vec<SubjectRow<'a>>,
}

#[derive(Serialize)]
struct SubjectRow<'a> {
    subject: u16,
    #[serde(flatten)]
    metrics: &'a train::MetricsReport,
}

fn cmd_eval(a: &EvalArgs) -> Result<i32> {
    let (params, config) = model::load(&a.model)?;
    let data = load_emgb(&a.data)?;
    require_non_empty(&data, &a.data)?;
    check_compatible(&config, &data)?;
    let model = Model { config, params };
    let logits = predict(&model, &data)?;
    let overall = train::MetricsReport::from_logits(&logits, &data.labels, data.num_classes)?;
    let subjects = per_subject(&logits, &data.labels, &data.subjects, data.num_classes)?;
    println!("{overall}");
    print!("{}", format_subject_table(&subjects));
    if let Some(path) = &a.report {
        let report = EvalReport {
            overall: &overall,
            per_subject: subjects.iter().map(|(s, m)| SubjectRow { subject: *s, metrics: m }).collect(),
        };
        write_file(path, serde_json::to_string_pretty(&report)?)?;
    }
    Ok(0)
}

fn cmd_ablate(a: &AblateArgs) -> Result<i32> {
    let file = CliConfigFile::load(a.config.as_deref())?;
    let cfg = train_config(&file, a.preset, a.seed, a.epochs)?;
    let data = load_emgb(&a.data)?;
    require_non_empty(&data, &a.data)?;
    let mut rng = RngState::new(cfg.seed).fork(3);
    let (train_ds, val_ds, test_ds) = split_by_spec(&data, &file.preprocess.split, &mut rng)?;
    let config = model_config_for(&file, &data);
    let table = train::ablate(&config, &AblationFlags::standard_rows(), &train_ds, &val_ds, &test_ds, &cfg)?;
    print!("{table}");
    write_file(&a.out, serde_json::to_string_pretty(&table)?)?;
    Ok(0)
}

fn split_by_spec(
    data: &WindowedDataset,
    spec: &SplitSpec,
    rng: &mut RngState,
) -> Result<(WindowedDataset, WindowedDataset, WindowedDataset)> {
    match spec {
        SplitSpec::Ratio { train, val, test } => split_ratio(data, [*train, *val, *test], rng),
        SplitSpec::Repetition { train_reps, test_reps } => {
            let (train, test) = split_repetition(data, train_reps, test_reps)?;
            let (train, val, _) = split_ratio(&train, [4.0, 1.0, 0.0], rng)?;
            Ok((train, val, test))
        }
    }
}

fn cmd_gradcheck(a: &GradcheckArgs) -> Result<i32> {
    let cfg = GradcheckConfig { seed: a.seed, step: a.step, tolerance: a.tol, fault: None };
    let report = run_suite(&cfg)?;
    if a.verbose {
        println!("{report}");
    } else {
        for e in report.entries.iter().filter(|e| !e.passed) {
            println!("FAIL {} max_rel_err={:.3e}", e.name, e.max_rel_err);
        }
        if report.passed() {
            println!("PASS max_rel_err={:.3e} <= {:e} ({} tensors)", report.max_rel_err(), a.tol, report.entries.len());
        } else {
            println!("FAIL failing: {}", report.failing().join(", "));
        }
    }
    Ok(if report.passed() { 0 } else { EXIT_NUMERIC })
}

fn cmd_synth(a: &SynthArgs) -> Result<i32> {
    let cfg = SynthConfig {
        classes: a.classes,
        channels: a.channels,
        window: a.window,
        per_class: a.per_class,
        noise_std: a.noise,
        ..Default::default()
    };
    let ds = synth_generate(&cfg, &mut RngState::new(a.seed))?;
    save_emgb(&ds, &a.out)?;
    println!("wrote {} windows [{}, {}] with {} classes to {}", ds.len(), a.channels, a.window, a.classes, a.out.display());
    Ok(0)
}

fn cmd_flops(a: &FlopsArgs) -> Result<i32> {
    let file = CliConfigFile::load(a.config.as_deref())?;
    file.model.validate(&file.ablation)?;
    let t = a.input_len.unwrap_or(file.model.window);
    let report = count_flops(&file.model, &file.ablation, t);
    if a.json {
        println!("{}", serde_json::to_string_pretty(&report)?);
    } else {
        println!("{report}");
    }
    Ok(0)
}

fn cmd_split(a: &SplitArgs) -> Result<i32> {
    let data = load_emgb(&a.data)?;
    require_non_empty(&data, &a.data)?;
    let spec = match a.mode {
        SplitMode::Ratio => SplitSpec::default(),
        SplitMode::Repetition => SplitSpec::repetition_default(),
    };
    let (train_ds, val_ds, test_ds) = split_by_spec(&data, &spec, &mut RngState::new(a.seed))?;
    std::fs::create_dir_all(&a.out_dir).map_err(|e| Error::io(&a.out_dir, e))?;
    for (name, ds) in [("train", &train_ds), ("val", &val_ds), ("test", &test_ds)] {
        let path = a.out_dir.join(format!("{name}.emgb"));
        save_emgb(ds, &path)?;
        println!("{name}: {} windows -> {}", ds.len(), path.display());
    }
    Ok(0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&Error::Config(vec![])), 1);
        assert_eq!(exit_code(&Error::Data(String::new())), 2);
        assert_eq!(exit_code(&Error::Format(String::new())), 2);
        assert_eq!(exit_code(&Error::Diverged { epoch: 1, batch: 0, reason: String::new() }), 3);
    }

    #[test]
    fn config_file_rejects_unknown_keys() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(&path, r#"{"model": {"channels": 4}, "trian": {}}"#).unwrap();
        let err = CliConfigFile::load(Some(&path)).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        std::fs::write(&path, r#"{"model": {"channels": 4}, "train": {"epochs": 3}}"#).unwrap();
        let cfg = CliConfigFile::load(Some(&path)).unwrap();
        assert_eq!((cfg.model.channels, cfg.train.epochs), (4, 3));
    }

    #[test]
    fn preset_then_overrides() {
        let file = CliConfigFile::default();
        let cfg = train_config(&file, Some(Preset::Db4), Some(9), Some(2)).unwrap();
        assert_eq!((cfg.learning_rate, cfg.seed, cfg.epochs), (0.0025, 9, 2));
    }
}
