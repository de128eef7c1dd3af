//! The `retinn` command line: every pipeline stage as a batch command.
//!
//! Each command writes its artifacts plus a `manifest.json` (or
//! `<file>.manifest.json` for single-file outputs) listing input and
//! output hashes. Failures exit with 2 (config or usage), 3 (data),
//! 4 (training) or 5 (inference) and print one JSON line on stderr.

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use retinn::checkpoint::{self, sha256_hex};
use retinn::dataio::{
    parse_exams, reliability_filter, split_by_patient, synth_generate, write_exams, PairedExam, SynthConfig,
    RNFL_LENGTH,
};
use retinn::ensemble::{Ensemble, EnsembleSpec};
use retinn::evalkit::{evaluate, md_histogram_csv, tradeoff_csv, Estimator, SectorMap};
use retinn::grid::LocationTable;
use retinn::models::{Architecture, PassSchedule};
use retinn::objective::LossHyper;
use retinn::tensor::AdamConfig;
use retinn::trainer::{full_grid, run_grid, train_variant, validation_metrics, Registry, TrainConfig, TrainHistory};
use retinn::{Error, ErrorCategory, Result};

pub const CONFIG_SCHEMA_VERSION: u32 = 1;
pub const WORKERS_ENV: &str = "RETINN_WORKERS";

#[derive(Debug, Parser)]
#[command(name = "retinn", version, about = "Visual-field estimation from RNFL thickness")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate synthetic paired exams.
    Synth(SynthArgs),
    /// Filter unreliable exams and split by patient.
    Split(SplitArgs),
    /// Train one loss variant.
    Train(TrainArgs),
    /// Train a grid of loss variants into a registry.
    Grid(GridArgs),
    /// Build a routed ensemble from a registry.
    Ensemble(EnsembleArgs),
    /// Evaluate a model or ensemble.
    Eval(EvalArgs),
    /// Estimate fields for RNFL profiles.
    Predict(PredictArgs),
    /// Export CSV data for plots.
    PlotData(PlotArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 1000)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Interval mix: four shares, space or comma separated.
    #[arg(long, value_delimiter = ',', num_args = 4, default_values_t = [0.7, 0.15, 0.1, 0.05])]
    pub mix: Vec<f64>,
    #[arg(long)]
    pub no_noise: bool,
    #[arg(long, default_value_t = 0.0)]
    pub unreliable_fraction: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub split_seed: u64,
    #[arg(long, value_delimiter = ',', num_args = 3, default_values_t = [0.6, 0.2, 0.2])]
    pub fractions: Vec<f64>,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ArchChoice {
    Reference,
    Compact,
    Linear,
    FullyConnected,
    VanillaConv,
}

impl ArchChoice {
    pub fn architecture(self) -> Architecture {
        match self {
            ArchChoice::Reference => Architecture::reference_retinervenet(),
            ArchChoice::Compact => Architecture::compact_retinervenet(),
            ArchChoice::Linear => Architecture::Linear,
            ArchChoice::FullyConnected => Architecture::fully_connected(),
            ArchChoice::VanillaConv => Architecture::reference_vanilla_conv(),
        }
    }
}

/// Training options from a JSON file; command-line flags override them.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub schema_version: u32,
    pub architecture: Option<ArchChoice>,
    pub max_epochs: Option<usize>,
    pub patience: Option<usize>,
    pub batch_size: Option<usize>,
    pub learning_rate: Option<f64>,
    pub seeds: Option<Vec<u64>>,
    pub gamma: Option<f64>,
    pub split_fractions: Option<[f64; 3]>,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: Self = serde_json::from_str(&text).map_err(|e| Error::config(format!("{}: {e}", path.display())))?;
        if cfg.schema_version != CONFIG_SCHEMA_VERSION {
            return Err(Error::config(format!(
                "config schema version {} is not supported (expected {CONFIG_SCHEMA_VERSION})",
                cfg.schema_version
            )));
        }
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Args)]
pub struct TrainingFlags {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub split_seed: u64,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub arch: Option<ArchChoice>,
    #[arg(long)]
    pub max_epochs: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: TrainingFlags,
    #[arg(long, default_value_t = 0.0)]
    pub alpha: f64,
    #[arg(long, default_value_t = 0.0)]
    pub beta: f64,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GridArgs {
    #[command(flatten)]
    pub common: TrainingFlags,
    /// `full` for the 5 × 5 grid, or `alpha:beta` pairs separated by commas.
    #[arg(long, default_value = "full")]
    pub grid: String,
    /// Also train the basic α = β = 0 variant.
    #[arg(long)]
    pub include_basic: bool,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long, env = WORKERS_ENV, default_value_t = 1)]
    pub workers: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EnsembleArgs {
    #[arg(long)]
    pub registry: PathBuf,
    #[arg(long)]
    pub val_data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
#[group(required = true, multiple = false)]
pub struct ModelSource {
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long, requires = "registry")]
    pub ensemble: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub source: ModelSource,
    #[arg(long)]
    pub registry: Option<PathBuf>,
    #[arg(long)]
    pub data: PathBuf,
    /// Location table JSON whose sectors define the sector map.
    #[arg(long)]
    pub sector_map: Option<PathBuf>,
    /// Output prefix; writes `<prefix>.json` and `<prefix>.csv`.
    #[arg(long)]
    pub report: PathBuf,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[command(flatten)]
    pub source: ModelSource,
    #[arg(long)]
    pub registry: Option<PathBuf>,
    /// JSON lines, each a 768-value array or an object with an `rnfl` field.
    #[arg(long)]
    pub rnfl_file: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub registry: Option<PathBuf>,
    #[arg(long, default_value_t = 1.0)]
    pub bin_width: f64,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileHash {
    pub path: String,
    pub sha256: String,
}

/// What a command read and wrote.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub config_sha256: String,
    pub seed: Option<u64>,
    pub inputs: Vec<FileHash>,
    pub artifacts: Vec<FileHash>,
    pub wall_clock_seconds: f64,
}

fn hash_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

fn hashes(paths: &[PathBuf], base: Option<&Path>) -> Result<Vec<FileHash>> {
    paths
        .iter()
        .map(|p| {
            let shown = base.and_then(|b| p.strip_prefix(b).ok()).unwrap_or(p);
            Ok(FileHash {
                path: shown.display().to_string(),
                sha256: hash_file(p)?,
            })
        })
        .collect()
}

struct Recorder {
    command: &'static str,
    started: Instant,
    config: serde_json::Value,
    seed: Option<u64>,
    inputs: Vec<PathBuf>,
}

impl Recorder {
    fn new(command: &'static str, config: serde_json::Value, seed: Option<u64>, inputs: Vec<PathBuf>) -> Self {
        Self {
            command,
            started: Instant::now(),
            config,
            seed,
            inputs,
        }
    }

    /// Writes the manifest to `path`; artifact paths are shown relative to
    /// the manifest's directory.
    fn finish(self, path: &Path, artifacts: &[PathBuf]) -> Result<()> {
        let base = path.parent().filter(|p| !p.as_os_str().is_empty());
        let manifest = RunManifest {
            command: self.command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            config_sha256: sha256_hex(serde_json::to_string(&self.config)?.as_bytes()),
            seed: self.seed,
            inputs: hashes(&self.inputs, None)?,
            artifacts: hashes(artifacts, base)?,
            wall_clock_seconds: self.started.elapsed().as_secs_f64(),
        };
        write_text(path, &(serde_json::to_string_pretty(&manifest)? + "\n"))
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn sidecar(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}

fn json_pretty<T: Serialize>(value: &T) -> Result<String> {
    Ok(serde_json::to_string_pretty(value)? + "\n")
}

pub fn cmd_synth(args: &SynthArgs) -> Result<()> {
    let mix: [f64; 4] = args
        .mix
        .clone()
        .try_into()
        .map_err(|_| Error::config("--mix needs four values"))?;
    let cfg = SynthConfig {
        n: args.n,
        seed: args.seed,
        mix,
        noise: !args.no_noise,
        unreliable_fraction: args.unreliable_fraction,
    };
    let rec = Recorder::new("synth", serde_json::to_value(cfg)?, Some(args.seed), vec![]);
    let exams = synth_generate(&cfg)?;
    write_exams(&args.out, &exams)?;
    rec.finish(&sidecar(&args.out), std::slice::from_ref(&args.out))
}

fn fractions(v: &[f64]) -> Result<[f64; 3]> {
    v.try_into().map_err(|_| Error::config("split fractions need three values"))
}

#[derive(Serialize)]
struct RejectedRecord<'a> {
    patient_id: &'a str,
    reasons: &'a [retinn::dataio::RejectReason],
}

pub fn cmd_split(args: &SplitArgs) -> Result<()> {
    let fr = fractions(&args.fractions)?;
    let rec = Recorder::new(
        "split",
        serde_json::json!({ "split_seed": args.split_seed, "fractions": fr }),
        Some(args.split_seed),
        vec![args.data.clone()],
    );
    let exams = parse_exams(&args.data)?;
    let (kept, rejected) = reliability_filter(exams);
    let split = split_by_patient(&kept, fr, args.split_seed)?;
    create_dir(&args.out_dir)?;
    let mut artifacts = Vec::new();
    for (name, part) in [("train", &split.train), ("val", &split.val), ("test", &split.test)] {
        let p = args.out_dir.join(format!("{name}.jsonl"));
        write_exams(&p, part)?;
        artifacts.push(p);
    }
    let rej: Vec<RejectedRecord> = rejected
        .iter()
        .map(|r| RejectedRecord {
            patient_id: &r.exam.patient_id,
            reasons: &r.reasons,
        })
        .collect();
    let p = args.out_dir.join("rejected.json");
    write_text(&p, &json_pretty(&rej)?)?;
    artifacts.push(p);
    let p = args.out_dir.join("split_stats.json");
    write_text(&p, &json_pretty(&split.stats)?)?;
    artifacts.push(p);
    rec.finish(&args.out_dir.join("manifest.json"), &artifacts)
}

/// Fully resolved training settings.
#[derive(Debug, Clone, Serialize)]
struct Resolved {
    architecture: ArchChoice,
    split_seed: u64,
    split_fractions: [f64; 3],
    train: TrainConfig,
}

fn resolve(flags: &TrainingFlags, hyper: (f64, f64, Option<f64>)) -> Result<Resolved> {
    let file = match &flags.config {
        Some(p) => ConfigFile::load(p)?,
        None => ConfigFile {
            schema_version: CONFIG_SCHEMA_VERSION,
            ..Default::default()
        },
    };
    let defaults = TrainConfig::default();
    let gamma = hyper.2.or(file.gamma).unwrap_or(LossHyper::default().gamma);
    let train = TrainConfig {
        hyper: LossHyper::new(hyper.0, hyper.1, gamma)?,
        max_epochs: flags.max_epochs.or(file.max_epochs).unwrap_or(defaults.max_epochs),
        patience: flags.patience.or(file.patience).unwrap_or(defaults.patience),
        batch_size: flags.batch_size.or(file.batch_size).unwrap_or(defaults.batch_size),
        seeds: flags.seeds.clone().or(file.seeds).unwrap_or(defaults.seeds),
        adam: AdamConfig {
            lr: flags.lr.or(file.learning_rate).unwrap_or(defaults.adam.lr),
            ..defaults.adam
        },
        ..defaults
    };
    train.validate()?;
    Ok(Resolved {
        architecture: flags.arch.or(file.architecture).unwrap_or(ArchChoice::Reference),
        split_seed: flags.split_seed,
        split_fractions: file.split_fractions.unwrap_or([0.6, 0.2, 0.2]),
        train,
    })
}

fn load_split(flags: &TrainingFlags, r: &Resolved) -> Result<(Vec<PairedExam>, Vec<PairedExam>)> {
    let exams = parse_exams(&flags.data)?;
    let (kept, _) = reliability_filter(exams);
    let split = split_by_patient(&kept, r.split_fractions, r.split_seed)?;
    Ok((split.train, split.val))
}

fn inputs_of(flags: &TrainingFlags) -> Vec<PathBuf> {
    let mut v = vec![flags.data.clone()];
    v.extend(flags.config.clone());
    v
}

#[derive(Serialize)]
struct HistoryFile<'a> {
    best_seed: u64,
    runs: &'a [TrainHistory],
}

pub fn cmd_train(args: &TrainArgs) -> Result<()> {
    let r = resolve(&args.common, (args.alpha, args.beta, args.gamma))?;
    let rec = Recorder::new("train", serde_json::to_value(&r)?, Some(r.split_seed), inputs_of(&args.common));
    let (train, val) = load_split(&args.common, &r)?;
    let (run, histories) = train_variant(&r.architecture.architecture(), &PassSchedule::standard(), &train, &val, &r.train)?;
    create_dir(&args.out)?;
    let ckpt = args.out.join("model.ckpt");
    checkpoint::save(&run.model, &ckpt)?;
    let hist = args.out.join("history.json");
    write_text(
        &hist,
        &json_pretty(&HistoryFile {
            best_seed: run.history.seed,
            runs: &histories,
        })?,
    )?;
    rec.finish(&args.out.join("manifest.json"), &[ckpt, hist])
}

fn parse_grid(spec: &str) -> Result<Vec<(f64, f64)>> {
    if spec == "full" {
        return Ok(full_grid());
    }
    spec.split(',')
        .map(|pair| {
            let (a, b) = pair
                .split_once(':')
                .ok_or_else(|| Error::config(format!("grid entry `{pair}` is not alpha:beta")))?;
            let parse = |s: &str| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::config(format!("grid value `{s}` is not a number")))
            };
            Ok((parse(a)?, parse(b)?))
        })
        .collect()
}

pub fn cmd_grid(args: &GridArgs) -> Result<()> {
    let mut grid = parse_grid(&args.grid)?;
    if args.include_basic && !grid.contains(&(0.0, 0.0)) {
        grid.push((0.0, 0.0));
    }
    if args.workers == 0 {
        return Err(Error::config("--workers must be at least 1"));
    }
    let r = resolve(&args.common, (0.0, 0.0, args.gamma))?;
    let config = serde_json::json!({ "resolved": &r, "grid": &grid });
    let rec = Recorder::new("grid", config, Some(r.split_seed), inputs_of(&args.common));
    let (train, val) = load_split(&args.common, &r)?;
    let mut registry = run_grid(
        &grid,
        r.train.hyper.gamma,
        &r.architecture.architecture(),
        &PassSchedule::standard(),
        &train,
        &val,
        &r.train,
        args.workers,
    )?;
    registry.save(&args.out)?;
    let mut artifacts: Vec<PathBuf> = registry.entries.iter().map(|e| args.out.join(&e.file)).collect();
    artifacts.push(args.out.join("index.json"));
    rec.finish(&args.out.join("manifest.json"), &artifacts)
}

pub fn cmd_ensemble(args: &EnsembleArgs) -> Result<()> {
    let rec = Recorder::new(
        "ensemble",
        serde_json::json!({}),
        None,
        vec![args.registry.join("index.json"), args.val_data.clone()],
    );
    let registry = Registry::load(&args.registry)?;
    let val = parse_exams(&args.val_data)?;
    let mut entries = registry.entries.clone();
    for (e, m) in entries.iter_mut().zip(&registry.models) {
        e.metrics = validation_metrics(m, &val)?;
    }
    let spec = EnsembleSpec::build(&entries)?;
    spec.save(&args.out)?;
    rec.finish(&sidecar(&args.out), std::slice::from_ref(&args.out))
}

fn load_estimator(source: &ModelSource, registry: Option<&Path>) -> Result<(Box<dyn Estimator>, Vec<PathBuf>)> {
    match (&source.model, &source.ensemble) {
        (Some(m), None) => Ok((Box::new(checkpoint::load(m)?), vec![m.clone()])),
        (None, Some(e)) => {
            let dir = registry.ok_or_else(|| Error::usage("--ensemble needs --registry"))?;
            let spec = EnsembleSpec::load(e)?;
            let reg = Registry::load(dir)?;
            Ok((Box::new(Ensemble::from_registry(spec, &reg)?), vec![e.clone(), dir.join("index.json")]))
        }
        _ => Err(Error::usage("pass exactly one of --model or --ensemble")),
    }
}

pub fn cmd_eval(args: &EvalArgs) -> Result<()> {
    let (model, mut inputs) = load_estimator(&args.source, args.registry.as_deref())?;
    inputs.push(args.data.clone());
    let map = match &args.sector_map {
        Some(p) => {
            inputs.push(p.clone());
            SectorMap::from_table(&LocationTable::load(p)?)?
        }
        None => SectorMap::standard(),
    };
    let rec = Recorder::new("eval", serde_json::json!({}), None, inputs);
    let exams = parse_exams(&args.data)?;
    let report = evaluate(model.as_ref(), &exams, &map)?;
    let json = args.report.with_extension("json");
    let csv = args.report.with_extension("csv");
    write_text(&json, &json_pretty(&report)?)?;
    write_text(&csv, &report.to_csv())?;
    rec.finish(&sidecar(&json), &[json.clone(), csv])
}

/// Reads RNFL profiles: bare arrays or objects with an `rnfl` field.
pub fn read_rnfl_file(path: &Path) -> Result<Vec<Vec<f64>>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |m: String| Error::Parse {
            line: i + 1,
            field: "rnfl".into(),
            message: m,
        };
        let v: serde_json::Value = serde_json::from_str(line).map_err(|e| bad(e.to_string()))?;
        let arr = match &v {
            serde_json::Value::Array(_) => &v,
            serde_json::Value::Object(o) => o.get("rnfl").ok_or_else(|| bad("missing".into()))?,
            _ => return Err(bad("expected an array or an object".into())),
        };
        let row: Vec<f64> = serde_json::from_value(arr.clone()).map_err(|e| bad(e.to_string()))?;
        if row.len() != RNFL_LENGTH {
            return Err(bad(format!("{} values, expected {RNFL_LENGTH}", row.len())));
        }
        if row.iter().any(|x| !x.is_finite()) {
            return Err(bad("non-finite value".into()));
        }
        out.push(row);
    }
    Ok(out)
}

#[derive(Serialize)]
struct PredictionRecord<'a> {
    index: usize,
    md: f64,
    vf: &'a [f64],
}

pub fn cmd_predict(args: &PredictArgs) -> Result<()> {
    let (model, mut inputs) = load_estimator(&args.source, args.registry.as_deref())?;
    inputs.push(args.rnfl_file.clone());
    let rec = Recorder::new("predict", serde_json::json!({}), None, inputs);
    let rows = read_rnfl_file(&args.rnfl_file)?;
    let mut text = String::new();
    for (index, row) in rows.iter().enumerate() {
        let p = model.estimate(row)?;
        text += &serde_json::to_string(&PredictionRecord {
            index,
            md: p.md,
            vf: &p.vf,
        })?;
        text.push('\n');
    }
    write_text(&args.out, &text)?;
    rec.finish(&sidecar(&args.out), std::slice::from_ref(&args.out))
}

pub fn cmd_plot_data(args: &PlotArgs) -> Result<()> {
    let mut inputs = vec![args.data.clone()];
    if let Some(r) = &args.registry {
        inputs.push(r.join("index.json"));
    }
    let rec = Recorder::new("plot-data", serde_json::json!({ "bin_width": args.bin_width }), None, inputs);
    let exams = parse_exams(&args.data)?;
    create_dir(&args.out_dir)?;
    let hist = args.out_dir.join("md_histogram.csv");
    write_text(&hist, &md_histogram_csv(&exams, args.bin_width)?)?;
    let mut artifacts = vec![hist];
    if let Some(r) = &args.registry {
        let registry = Registry::load(r)?;
        let p = args.out_dir.join("tradeoff.csv");
        write_text(&p, &tradeoff_csv(&registry.entries))?;
        artifacts.push(p);
    }
    rec.finish(&args.out_dir.join("manifest.json"), &artifacts)
}

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Split(a) => cmd_split(a),
        Command::Train(a) => cmd_train(a),
        Command::Grid(a) => cmd_grid(a),
        Command::Ensemble(a) => cmd_ensemble(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Predict(a) => cmd_predict(a),
        Command::PlotData(a) => cmd_plot_data(a),
    }
}

pub fn exit_code(category: ErrorCategory) -> i32 {
    match category {
        ErrorCategory::Config | ErrorCategory::Usage => 2,
        ErrorCategory::Data => 3,
        ErrorCategory::Training => 4,
        ErrorCategory::Inference => 5,
    }
}

/// The single stderr line for a failed command.
pub fn error_json(err: &Error) -> String {
    let category = err.category();
    serde_json::json!({
        "error": category.as_str(),
        "exit_code": exit_code(category),
        "message": err.to_string(),
    })
    .to_string()
}
