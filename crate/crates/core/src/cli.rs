//! Command-line front end: `train`, `eval`, `sweep`, `timing`.
//!
//! Exit codes: 0 success, 1 configuration error, 2 I/O error.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::data::{load_split, DataError, Dataset, Split};
use crate::engine::{evaluate, train, EngineError, RunRecord, RunSummary, TrainOptions, TrainState};
use crate::netgraph::{lenet_preset, DatasetKind, NetError, NetworkConfig};
use crate::oracle::{float_train, FloatNet};
use crate::pesim::{cycle_report, PesimError};
use crate::qnum::{parse_format_list, QFormat, QValue};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_IO: i32 = 2;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Io(_) => EXIT_IO,
        }
    }
}

impl From<NetError> for CliError {
    fn from(e: NetError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        match e {
            DataError::BatchTooLarge { .. } => CliError::Config(e.to_string()),
            _ => CliError::Io(e.to_string()),
        }
    }
}

impl From<EngineError> for CliError {
    fn from(e: EngineError) -> Self {
        match e {
            EngineError::Data(d) => d.into(),
            other => CliError::Config(other.to_string()),
        }
    }
}

impl From<PesimError> for CliError {
    fn from(e: PesimError) -> Self {
        CliError::Config(e.to_string())
    }
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))
}

fn create_dir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path).map_err(|e| CliError::Io(format!("cannot create {}: {e}", path.display())))
}

#[derive(Debug, Parser)]
#[command(name = "qtrain", version, about = "Fixed-point DNN training simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a network and write loss/accuracy series.
    Train(TrainArgs),
    /// Evaluate saved weights on the test split.
    Eval(EvalArgs),
    /// Train once per candidate format assignment.
    Sweep(SweepArgs),
    /// Print the cycle report for a network.
    Timing(TimingArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum DatasetArg {
    Mnist,
    Cifar10,
    SvhnIdx,
}

impl From<DatasetArg> for DatasetKind {
    fn from(d: DatasetArg) -> Self {
        match d {
            DatasetArg::Mnist => DatasetKind::Mnist,
            DatasetArg::Cifar10 => DatasetKind::Cifar10,
            DatasetArg::SvhnIdx => DatasetKind::SvhnIdx,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct NetArgs {
    /// Network config JSON; defaults to the LeNet preset for --dataset.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "mnist")]
    pub dataset: DatasetArg,
    /// Per-layer formats, e.g. "(2,12),(2,12),(2,12),(1,12),(3,10)".
    #[arg(long)]
    pub format: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub alpha: Option<f64>,
}

impl NetArgs {
    pub fn resolve(&self) -> Result<NetworkConfig, CliError> {
        let mut cfg = match &self.config {
            Some(p) => NetworkConfig::load(p)?,
            None => lenet_preset(self.dataset.into()),
        };
        if let Some(f) = &self.format {
            cfg.formats = parse_format_list(f).map_err(|e| CliError::Config(e.to_string()))?;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(a) = self.alpha {
            cfg.alpha = a;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    /// Directory holding the dataset files under their standard names.
    #[arg(long, default_value = "data/mnist")]
    pub data_dir: PathBuf,
    /// Use only the first N training images.
    #[arg(long)]
    pub train_limit: Option<usize>,
    /// Use only the first N test images.
    #[arg(long)]
    pub test_limit: Option<usize>,
}

impl DataArgs {
    fn load(&self, kind: DatasetKind, split: Split) -> Result<Dataset, CliError> {
        let ds = load_split(kind, &self.data_dir, split)?;
        let limit = match split {
            Split::Train => self.train_limit,
            Split::Test => self.test_limit,
        };
        Ok(match limit {
            Some(n) => ds.take(n),
            None => ds,
        })
    }
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub net: NetArgs,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value_t = 2000)]
    pub iterations: u64,
    #[arg(long, default_value_t = crate::netgraph::DEFAULT_BATCH)]
    pub batch: usize,
    /// Also record test accuracy every N iterations.
    #[arg(long)]
    pub eval_every: Option<u64>,
    /// Train in double precision instead of fixed point.
    #[arg(long)]
    pub float: bool,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub net: NetArgs,
    #[command(flatten)]
    pub data: DataArgs,
    /// weights.json written by `train`.
    #[arg(long)]
    pub weights: PathBuf,
    #[arg(long)]
    pub float: bool,
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    /// Sweep spec JSON.
    #[arg(long)]
    pub sweep: PathBuf,
    #[command(flatten)]
    pub net: NetArgs,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct TimingArgs {
    #[command(flatten)]
    pub net: NetArgs,
    /// Directory to also write timing.json into.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Saved parameters, as real values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightsFile {
    pub weights: Vec<Vec<f64>>,
    #[serde(default)]
    pub biases: Option<Vec<Vec<f64>>>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepMode {
    /// Point `k` takes the `k`-th candidate of every layer.
    #[default]
    Zip,
    /// Every combination, last layer varying fastest.
    Product,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    /// Candidate formats per weight-bearing layer.
    pub candidates: Vec<Vec<QFormat>>,
    #[serde(default)]
    pub mode: SweepMode,
    pub iterations: u64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    /// Minimum accuracy (percent) a point must reach to be marked acceptable.
    #[serde(default)]
    pub threshold: Option<f64>,
}

fn default_batch() -> usize {
    crate::netgraph::DEFAULT_BATCH
}

impl SweepSpec {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let spec: SweepSpec =
            serde_json::from_str(text).map_err(|e| CliError::Config(format!("sweep spec: {e}")))?;
        spec.points()?;
        Ok(spec)
    }

    /// Design points in output order.
    pub fn points(&self) -> Result<Vec<Vec<QFormat>>, CliError> {
        if self.candidates.is_empty() {
            return Err(CliError::Config("sweep spec has no layers".into()));
        }
        if let Some(i) = self.candidates.iter().position(|c| c.is_empty()) {
            return Err(CliError::Config(format!("sweep layer {i} has no candidate formats")));
        }
        match self.mode {
            SweepMode::Zip => {
                let n = self.candidates[0].len();
                if self.candidates.iter().any(|c| c.len() != n) {
                    return Err(CliError::Config(
                        "zip sweep needs the same number of candidates on every layer".into(),
                    ));
                }
                Ok((0..n).map(|k| self.candidates.iter().map(|c| c[k]).collect()).collect())
            }
            SweepMode::Product => {
                let mut points: Vec<Vec<QFormat>> = vec![Vec::new()];
                for layer in &self.candidates {
                    points = points
                        .iter()
                        .flat_map(|p| {
                            layer.iter().map(move |&f| {
                                let mut q = p.clone();
                                q.push(f);
                                q
                            })
                        })
                        .collect();
                }
                Ok(points)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub formats: Vec<QFormat>,
    pub final_loss: Option<f64>,
    pub accuracy: Option<f64>,
    pub meets_threshold: Option<bool>,
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut s = String::from("point,formats,final_loss,accuracy,meets_threshold\n");
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for (i, r) in rows.iter().enumerate() {
        let formats: Vec<String> = r.formats.iter().map(|f| f.to_string()).collect();
        s.push_str(&format!(
            "{i},\"{}\",{},{},{}\n",
            formats.join(";"),
            opt(r.final_loss),
            opt(r.accuracy),
            r.meets_threshold.map(|b| b.to_string()).unwrap_or_default()
        ));
    }
    s
}

/// Artifacts of one training run.
pub struct TrainArtifacts {
    pub record: RunRecord,
    pub summary: RunSummary,
    pub weights: WeightsFile,
}

pub fn run_training(
    cfg: &NetworkConfig,
    train_set: &Dataset,
    test_set: &Dataset,
    opts: &TrainOptions,
    float: bool,
) -> Result<TrainArtifacts, CliError> {
    let (record, weights) = if float {
        let (net, record) = float_train(cfg, train_set, Some(test_set), opts)?;
        (
            record,
            WeightsFile {
                weights: net.weights,
                biases: net.biases,
            },
        )
    } else {
        let out = train::<QValue>(cfg, train_set, Some(test_set), opts)?;
        (
            out.record,
            WeightsFile {
                weights: out.state.weights().iter().map(|t| t.to_reals()).collect(),
                biases: out.state.biases().map(|b| b.iter().map(|t| t.to_reals()).collect()),
            },
        )
    };
    let summary = RunSummary {
        config: cfg.clone(),
        final_accuracy: record.final_accuracy(),
        final_loss: record.final_loss(),
        iterations: opts.iterations,
        batch_size: opts.batch_size,
        seed: cfg.seed,
        mode: if float { "float" } else { "quantized" }.into(),
    };
    Ok(TrainArtifacts {
        record,
        summary,
        weights,
    })
}

pub fn cmd_train(args: &TrainArgs) -> Result<(), CliError> {
    let cfg = args.net.resolve()?;
    let kind: DatasetKind = args.net.dataset.into();
    let train_set = args.data.load(kind, Split::Train)?;
    let test_set = args.data.load(kind, Split::Test)?;
    let opts = TrainOptions {
        iterations: args.iterations,
        batch_size: args.batch,
        eval_every: args.eval_every,
    };
    let art = run_training(&cfg, &train_set, &test_set, &opts, args.float)?;
    create_dir(&args.out)?;
    write_file(&args.out.join("loss.csv"), &art.record.loss_csv())?;
    write_file(&args.out.join("accuracy.csv"), &art.record.accuracy_csv())?;
    write_file(&args.out.join("summary.json"), &art.summary.to_json())?;
    let weights = serde_json::to_string(&art.weights).expect("weights serialize");
    write_file(&args.out.join("weights.json"), &weights)?;
    println!(
        "{} run: {} iterations, final loss {}, test accuracy {:.2}%",
        art.summary.mode,
        opts.iterations,
        art.summary.final_loss.map_or("n/a".into(), |l| format!("{l:.4}")),
        art.summary.final_accuracy.unwrap_or(0.0)
    );
    Ok(())
}

pub fn cmd_eval(args: &EvalArgs) -> Result<(), CliError> {
    let cfg = args.net.resolve()?;
    let text = fs::read_to_string(&args.weights)
        .map_err(|e| CliError::Io(format!("cannot read {}: {e}", args.weights.display())))?;
    let saved: WeightsFile =
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("weights file: {e}")))?;
    let test_set = args.data.load(args.net.dataset.into(), Split::Test)?;
    let acc = if args.float {
        let mut net = FloatNet::new(&cfg, saved.weights)?;
        if let Some(b) = saved.biases {
            net.biases = Some(b);
        }
        net.accuracy(&test_set)
    } else {
        if saved.biases.is_some() {
            return Err(CliError::Config("loading saved biases is not supported in fixed point".into()));
        }
        let mut state = TrainState::<QValue>::with_weights(&cfg, &saved.weights)?;
        evaluate(&mut state, &test_set)?
    };
    println!("test accuracy {acc:.2}% on {} images", test_set.len());
    Ok(())
}

pub fn cmd_sweep(args: &SweepArgs) -> Result<(), CliError> {
    let text = fs::read_to_string(&args.sweep)
        .map_err(|e| CliError::Config(format!("cannot read sweep spec {}: {e}", args.sweep.display())))?;
    let spec = SweepSpec::from_json(&text)?;
    let points = spec.points()?;
    let base = args.net.resolve()?;
    if points[0].len() != base.weight_layer_count() {
        return Err(CliError::Config(format!(
            "sweep has {} layers, network has {} weight-bearing layers",
            points[0].len(),
            base.weight_layer_count()
        )));
    }
    let kind: DatasetKind = args.net.dataset.into();
    let train_set = args.data.load(kind, Split::Train)?;
    let test_set = args.data.load(kind, Split::Test)?;
    let opts = TrainOptions {
        iterations: spec.iterations,
        batch_size: spec.batch_size,
        eval_every: None,
    };
    let mut rows = Vec::with_capacity(points.len());
    for formats in points {
        let cfg = NetworkConfig {
            formats: formats.clone(),
            ..base.clone()
        };
        let art = run_training(&cfg, &train_set, &test_set, &opts, false)?;
        let accuracy = art.summary.final_accuracy;
        eprintln!(
            "{}: accuracy {:.2}%",
            formats.iter().map(|f| f.to_string()).collect::<Vec<_>>().join(","),
            accuracy.unwrap_or(0.0)
        );
        rows.push(SweepRow {
            formats,
            final_loss: art.summary.final_loss,
            meets_threshold: spec.threshold.zip(accuracy).map(|(t, a)| a >= t),
            accuracy,
        });
    }
    create_dir(&args.out)?;
    let csv = sweep_csv(&rows);
    write_file(&args.out.join("sweep.csv"), &csv)?;
    print!("{csv}");
    Ok(())
}

pub fn cmd_timing(args: &TimingArgs) -> Result<(), CliError> {
    let cfg = args.net.resolve()?;
    let report = cycle_report(&cfg)?;
    let json = report.to_json();
    if let Some(dir) = &args.out {
        create_dir(dir)?;
        write_file(&dir.join("timing.json"), &json)?;
    }
    println!("{json}");
    Ok(())
}

pub fn run(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Timing(a) => cmd_timing(a),
    }
}

/// Parses `args` (including the program name), runs, and returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match run(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
