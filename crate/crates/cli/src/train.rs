use std::path::{Path, PathBuf};

use clap::Args;
use serde_json::json;
use tgraphx::config::RunConfig;
use tgraphx::model::PrecisionName;
use tgraphx::tensor::Real;
use tgraphx::train::{
    fit, load_checkpoint, read_checkpoint, FitOptions, MetricsLog, TrainConfig, TrainState,
};
use tgraphx::Model;

use crate::data::{check_compatible, dataset, load_split, node_spatial, train_val_dirs};
use crate::fail::{io, Failure};
use crate::ConfigArgs;

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Dataset directory with `train/` (and optionally `val/`) splits, or a
    /// single split directory.
    #[arg(long, value_name = "DIR")]
    data: PathBuf,
    /// Receives metrics.jsonl, run.json, config.toml and checkpoints/.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    /// Continue from a checkpoint. Its model and training settings are kept;
    /// only the epoch count may be raised.
    #[arg(long, value_name = "CKPT")]
    resume: Option<PathBuf>,
}

pub fn run(args: &TrainArgs, cfg_args: &ConfigArgs, threads: Option<usize>) -> Result<(), Failure> {
    let cfg = cfg_args.load()?;
    let precision = match &args.resume {
        Some(path) => {
            let (meta, _) = read_checkpoint(path)?;
            match meta.precision.as_str() {
                "f32" => PrecisionName::Single,
                "f64" => PrecisionName::Double,
                p => return Err(Failure::Data(format!("{}: unknown precision {p}", path.display()))),
            }
        }
        None => cfg.model.precision,
    };
    match precision {
        PrecisionName::Single => train::<f32>(args, cfg, cfg_args.explicit_epochs(), threads),
        PrecisionName::Double => train::<f64>(args, cfg, cfg_args.explicit_epochs(), threads),
    }
}

fn train<T: Real>(
    args: &TrainArgs,
    mut cfg: RunConfig,
    epochs: Option<usize>,
    threads: Option<usize>,
) -> Result<(), Failure> {
    let (model, tcfg, mut state) = match &args.resume {
        Some(path) => {
            let (model, mut tcfg, state) = load_checkpoint::<T>(path)?;
            if let Some(e) = epochs {
                tcfg.epochs = e;
            }
            log::info!("resuming {} after epoch {}", path.display(), state.epoch);
            (model, tcfg, state)
        }
        None => {
            let (model, params) = Model::new::<T>(cfg.model.clone())?;
            let state = TrainState::new(params, cfg.train.adam);
            (model, cfg.train.clone(), state)
        }
    };
    cfg.model = model.cfg.clone();
    cfg.train = tcfg.clone();

    let (train_dir, val_dir) = train_val_dirs(&args.data);
    let train_graphs = load_split::<T>(&train_dir, cfg.data.node_size)?;
    if train_graphs.is_empty() {
        return Err(Failure::Data(format!("{}: no training graphs", train_dir.display())));
    }
    check_compatible(&model.cfg, &train_graphs, "train")?;
    let val_graphs = match &val_dir {
        Some(d) => load_split::<T>(d, cfg.data.node_size)?,
        None => Vec::new(),
    };
    check_compatible(&model.cfg, &val_graphs, "val")?;
    let spatial = node_spatial(&train_graphs).expect("non-empty");
    let train_set = dataset(train_graphs)?;
    let val_set = dataset(val_graphs)?;

    std::fs::create_dir_all(&args.out).map_err(io(&args.out))?;
    let cfg_path = args.out.join("config.toml");
    std::fs::write(&cfg_path, cfg.to_toml()).map_err(io(&cfg_path))?;
    let run_path = args.out.join("run.json");
    let meta = RunMeta {
        cfg: &cfg,
        tcfg: &tcfg,
        precision: T::NAME,
        data: &args.data,
        spatial,
        samples: (train_set.len(), val_set.len()),
        threads,
        resumed_from: args.resume.as_deref(),
    };
    write_json(&run_path, &meta.to_json(None))?;

    let mut log = MetricsLog::create(&args.out.join("metrics.jsonl"), args.resume.is_some())?;
    let opts = FitOptions {
        val: (!val_set.is_empty()).then_some(&val_set),
        checkpoint_dir: Some(args.out.join("checkpoints")),
    };
    let summary = fit(&model, &tcfg, &mut state, &train_set, &opts, |r| log.write(r))?;

    let outcome = Outcome {
        epochs_completed: state.epoch,
        stopped_early: summary.stopped_early,
        best_epoch: state.best_epoch,
        best_val_accuracy: state.best_val_accuracy,
    };
    write_json(&run_path, &meta.to_json(Some(&outcome)))?;
    match summary.records.iter().rev().find(|r| r.split == "train") {
        Some(last) => println!(
            "trained {} epochs; last train loss {:.6} accuracy {:.4}",
            state.epoch, last.loss, last.accuracy
        ),
        None => println!("nothing to do: checkpoint already has {} epochs", state.epoch),
    }
    if let (Some(e), Some(a)) = (state.best_epoch, state.best_val_accuracy) {
        println!("best val accuracy {a:.4} at epoch {e}");
    }
    Ok(())
}

struct RunMeta<'a> {
    cfg: &'a RunConfig,
    tcfg: &'a TrainConfig,
    precision: &'static str,
    data: &'a Path,
    spatial: (usize, usize),
    samples: (usize, usize),
    threads: Option<usize>,
    resumed_from: Option<&'a Path>,
}

struct Outcome {
    epochs_completed: usize,
    stopped_early: bool,
    best_epoch: Option<usize>,
    best_val_accuracy: Option<f64>,
}

impl RunMeta<'_> {
    /// `run.json`: the settings a result depends on, including the ones a
    /// reader would otherwise have to assume.
    fn to_json(&self, outcome: Option<&Outcome>) -> serde_json::Value {
        let enc = &self.cfg.model.encoder;
        let (h, w) = self.spatial;
        let adam = &self.tcfg.adam;
        json!({
            "format": "tgraphx-run",
            "version": 1,
            "status": if outcome.is_some() { "finished" } else { "running" },
            "precision": self.precision,
            "data": self.data.display().to_string(),
            "train_samples": self.samples.0,
            "val_samples": self.samples.1,
            "node_spatial": [h, w],
            "assumptions": {
                "batch_size": self.tcfg.batch_size,
                "weight_decay": adam.weight_decay,
                "optimizer": "adam",
                "lr": adam.lr,
                "betas": [adam.beta1, adam.beta2],
                "adam_eps": adam.eps,
                "seed": self.tcfg.seed,
                "model_seed": self.cfg.model.seed,
                "encoder_channels": enc.channels,
                "pool_min_spatial": enc.pool_min_spatial,
                "pool_stages": enc.pool_stages(h, w),
                "embedding_spatial": enc.out_spatial(h, w),
                "gnn_layers": self.cfg.model.gnn.layers,
                "gnn_channels": self.cfg.model.gnn.channels,
                "loss": self.cfg.model.loss,
                "node_size": self.cfg.data.node_size,
            },
            "epochs_requested": self.tcfg.epochs,
            "stop_at_train_accuracy": self.tcfg.stop_at_train_accuracy,
            "threads": self.threads,
            "parallel": cfg!(feature = "parallel"),
            "resumed_from": self.resumed_from.map(|p| p.display().to_string()),
            "epochs_completed": outcome.map(|o| o.epochs_completed),
            "stopped_early": outcome.map(|o| o.stopped_early),
            "best_epoch": outcome.and_then(|o| o.best_epoch),
            "best_val_accuracy": outcome.and_then(|o| o.best_val_accuracy),
        })
    }
}

fn write_json(path: &Path, v: &serde_json::Value) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(v).expect("json value serializes");
    std::fs::write(path, text + "\n").map_err(io(path))
}
