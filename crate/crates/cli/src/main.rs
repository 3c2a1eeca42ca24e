//! `tgraphx`: synthesize detection-fusion data, train, evaluate, check
//! gradients and render reports.
//!
//! Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numeric
//! failure.

mod data;
mod eval;
mod fail;
mod gradcheck;
mod report;
mod synth;
mod train;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use tgraphx::config::RunConfig;

use crate::fail::Failure;

#[derive(Parser, Debug)]
#[command(name = "tgraphx", version, about = "Graph networks over spatial CNN feature maps")]
struct Cli {
    /// More log output (-v debug, -vv trace).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    /// Worker threads for the parallel kernels (default: all cores).
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,

    #[command(flatten)]
    config: ConfigArgs,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a model; writes metrics, run metadata and checkpoints.
    Train(train::TrainArgs),
    /// Evaluate a checkpoint on one data split.
    Eval(eval::EvalArgs),
    /// Finite-difference check of the model's gradients.
    Gradcheck(gradcheck::GradcheckArgs),
    /// Write a synthetic detection-fusion dataset.
    SynthData(synth::SynthArgs),
    /// Render metrics or evaluation JSONL files as tables.
    Report(report::ReportArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum PrecisionArg {
    Single,
    Double,
}

/// The run configuration: a TOML file, `--set` assignments, then the
/// dedicated flags, later sources winning.
#[derive(Args, Debug, Default)]
struct ConfigArgs {
    /// TOML run configuration.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Set any config key, e.g. `--set train.adam.lr=1e-3` (repeatable).
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// train.epochs
    #[arg(long, global = true)]
    epochs: Option<usize>,
    /// train.batch_size
    #[arg(long, global = true)]
    batch_size: Option<usize>,
    /// train.adam.lr
    #[arg(long, global = true)]
    lr: Option<f64>,
    /// train.adam.weight_decay
    #[arg(long, global = true)]
    weight_decay: Option<f64>,
    /// train.seed
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// train.stop_at_train_accuracy
    #[arg(long, global = true)]
    stop_at_train_accuracy: Option<f64>,
    /// model.seed
    #[arg(long, global = true)]
    model_seed: Option<u64>,
    /// model.precision
    #[arg(long, global = true)]
    precision: Option<PrecisionArg>,
    /// model.gnn.layers
    #[arg(long, global = true)]
    gnn_layers: Option<usize>,
    /// model.loss.gamma
    #[arg(long, global = true)]
    gamma: Option<f64>,
    /// synth.samples
    #[arg(long, global = true)]
    samples: Option<usize>,
    /// synth.image_size
    #[arg(long, global = true)]
    image_size: Option<usize>,
    /// synth.seed
    #[arg(long, global = true)]
    synth_seed: Option<u64>,
    /// data.node_size
    #[arg(long, global = true)]
    node_size: Option<usize>,
}

impl ConfigArgs {
    fn overrides(&self) -> Vec<String> {
        let mut out = self.set.clone();
        let mut put = |key: &str, v: Option<String>| {
            if let Some(v) = v {
                out.push(format!("{key}={v}"));
            }
        };
        let num = |v: Option<f64>| v.map(|x| format!("{x:?}"));
        put("train.epochs", self.epochs.map(|v| v.to_string()));
        put("train.batch_size", self.batch_size.map(|v| v.to_string()));
        put("train.adam.lr", num(self.lr));
        put("train.adam.weight_decay", num(self.weight_decay));
        put("train.seed", self.seed.map(|v| v.to_string()));
        put("train.stop_at_train_accuracy", num(self.stop_at_train_accuracy));
        put("model.seed", self.model_seed.map(|v| v.to_string()));
        put(
            "model.precision",
            self.precision.map(|p| match p {
                PrecisionArg::Single => "\"single\"".to_string(),
                PrecisionArg::Double => "\"double\"".to_string(),
            }),
        );
        put("model.gnn.layers", self.gnn_layers.map(|v| v.to_string()));
        put("model.loss.gamma", num(self.gamma));
        put("synth.samples", self.samples.map(|v| v.to_string()));
        put("synth.image_size", self.image_size.map(|v| v.to_string()));
        put("synth.seed", self.synth_seed.map(|v| v.to_string()));
        put("data.node_size", self.node_size.map(|v| v.to_string()));
        out
    }

    fn load(&self) -> Result<RunConfig, Failure> {
        Ok(RunConfig::load(self.config.as_deref(), &self.overrides())?)
    }

    /// `train.epochs` if given on the command line.
    fn explicit_epochs(&self) -> Option<usize> {
        let from_set = self.set.iter().rev().find_map(|s| {
            let (k, v) = s.split_once('=')?;
            (k.trim() == "train.epochs").then(|| v.trim().parse().ok()).flatten()
        });
        self.epochs.or(from_set)
    }
}

fn init_threads(threads: Option<usize>) -> Result<(), Failure> {
    let Some(n) = threads else { return Ok(()) };
    if n == 0 {
        return Err(Failure::Usage("--threads must be at least 1".into()));
    }
    #[cfg(feature = "parallel")]
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Failure::Usage(format!("thread pool: {e}")))?;
    #[cfg(not(feature = "parallel"))]
    log::warn!("built without the `parallel` feature; --threads {n} ignored");
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    init_threads(cli.threads)?;
    match cli.command {
        Command::Train(a) => train::run(&a, &cli.config, cli.threads),
        Command::Eval(a) => eval::run(&a, &cli.config),
        Command::Gradcheck(a) => gradcheck::run(&a, &cli.config),
        Command::SynthData(a) => synth::run(&a, &cli.config),
        Command::Report(a) => report::run(&a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let level = match cli.verbose {
        0 => "info",
        1 => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code())
        }
    }
}
