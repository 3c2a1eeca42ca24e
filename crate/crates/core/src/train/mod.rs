//! Mini-batch training with Adam, per-epoch metrics, checkpoints and
//! evaluation.
//!
//! A run is a pure function of the model config, the training config and the
//! data: batches are shuffled by `(seed, epoch)` and dropout masks are seeded
//! by `(seed, step)`, so resuming from a checkpoint replays exactly what an
//! uninterrupted run would have done.

pub mod adam;
pub mod report;

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tgraphx_tensor::{Checkpoint, Ctx, Mode, ParamStore, Real};

use crate::dataset::GraphDataset;
use crate::error::{Context, Error, Result};
use crate::model::{Model, ModelConfig};
use crate::nn::loss::PredictionBundle;

pub use adam::{Adam, AdamConfig};
pub use report::EvalReport;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub eval_batch_size: usize,
    /// Seeds shuffling and dropout.
    pub seed: u64,
    /// Stop once an epoch's running train accuracy reaches this value.
    pub stop_at_train_accuracy: Option<f64>,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 50,
            batch_size: 8,
            eval_batch_size: 64,
            seed: 0,
            stop_at_train_accuracy: None,
            adam: AdamConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.eval_batch_size == 0 {
            return Err(Error::config("batch sizes must be positive"));
        }
        self.adam.validate()
    }
}

/// One line of the metrics log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub epoch: usize,
    pub split: String,
    pub loss: f64,
    pub accuracy: f64,
}

impl MetricsRecord {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("plain record serializes")
    }
}

#[derive(Clone, Debug)]
pub struct TrainState<T> {
    /// Completed epochs.
    pub epoch: usize,
    /// Optimizer steps taken.
    pub step: u64,
    pub params: ParamStore<T>,
    pub adam: Adam<T>,
    pub best_val_accuracy: Option<f64>,
    pub best_epoch: Option<usize>,
    pub best_params: Option<ParamStore<T>>,
}

impl<T: Real> TrainState<T> {
    pub fn new(params: ParamStore<T>, adam: AdamConfig) -> Self {
        TrainState {
            epoch: 0,
            step: 0,
            adam: Adam::new(adam, &params),
            params,
            best_val_accuracy: None,
            best_epoch: None,
            best_params: None,
        }
    }

    /// Parameters with the best validation accuracy, else the current ones.
    pub fn best_or_current(&self) -> &ParamStore<T> {
        self.best_params.as_ref().unwrap_or(&self.params)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub format: String,
    pub precision: String,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub epoch: usize,
    pub step: u64,
    pub adam_t: u64,
    pub best_val_accuracy: Option<f64>,
    pub best_epoch: Option<usize>,
}

pub const CHECKPOINT_FORMAT: &str = "tgraphx-train-state";

/// Serializes model weights (`param.*`), Adam moments (`adam.m.*`,
/// `adam.v.*`) and, when known, the best-validation weights (`best.*`).
pub fn save_checkpoint<T: Real>(path: &Path, model: &Model, train: &TrainConfig, state: &TrainState<T>) -> Result<()> {
    let meta = CheckpointMeta {
        format: CHECKPOINT_FORMAT.into(),
        precision: T::NAME.into(),
        model: model.cfg.clone(),
        train: train.clone(),
        epoch: state.epoch,
        step: state.step,
        adam_t: state.adam.t,
        best_val_accuracy: state.best_val_accuracy,
        best_epoch: state.best_epoch,
    };
    let mut ck = Checkpoint::new(serde_json::to_string(&meta)?);
    ck.push_store("param.", &state.params);
    state.adam.save(&mut ck, &state.params);
    if let Some(best) = &state.best_params {
        ck.push_store("best.", best);
    }
    ck.save(path).file(path)
}

pub fn read_checkpoint(path: &Path) -> Result<(CheckpointMeta, Checkpoint)> {
    let ck = Checkpoint::load(path).file(path)?;
    let meta: CheckpointMeta = serde_json::from_str(&ck.meta).file(path)?;
    if meta.format != CHECKPOINT_FORMAT {
        return Err(Error::data(format!("{}: not a training checkpoint", path.display())));
    }
    Ok((meta, ck))
}

/// Rebuilds model and training state from a checkpoint.
pub fn load_checkpoint<T: Real>(path: &Path) -> Result<(Model, TrainConfig, TrainState<T>)> {
    let (meta, ck) = read_checkpoint(path)?;
    let (model, mut params) = Model::new::<T>(meta.model.clone())?;
    ck.load_store("param.", &mut params).file(path)?;
    let mut adam = Adam::new(meta.train.adam, &params);
    adam.load(&ck, &params, meta.adam_t).file(path)?;
    let best_params = if meta.best_epoch.is_some() {
        let mut best = params.clone();
        ck.load_store("best.", &mut best).file(path)?;
        Some(best)
    } else {
        None
    };
    let state = TrainState {
        epoch: meta.epoch,
        step: meta.step,
        params,
        adam,
        best_val_accuracy: meta.best_val_accuracy,
        best_epoch: meta.best_epoch,
        best_params,
    };
    Ok((model, meta.train, state))
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochStats {
    pub loss: f64,
    /// Accuracy of the train-mode predictions made while stepping.
    pub accuracy: f64,
}

/// One pass over `data` in the epoch's shuffled order.
pub fn train_epoch<T: Real>(
    model: &Model,
    cfg: &TrainConfig,
    state: &mut TrainState<T>,
    data: &GraphDataset<T>,
) -> Result<EpochStats> {
    if data.is_empty() {
        return Err(Error::data("training set is empty"));
    }
    let order = data.order(cfg.seed, state.epoch as u64);
    let (mut loss_sum, mut seen, mut hits) = (0.0, 0usize, 0usize);
    for batch in data.batches(&order, cfg.batch_size) {
        let batch = batch?;
        let mut ctx = Ctx::new(&state.params, Mode::Train)
            .with_seed(cfg.seed, state.step)
            .with_conv_algo(model.cfg.conv.into());
        let (loss, out, targets) = model.loss(&mut ctx, &batch)?;
        let value = ctx.tape.value(loss).item().as_f64();
        let bundle = PredictionBundle {
            logits: ctx.tape.value(out.logits(model.cfg.target)).to_f64_vec(),
            classes: model.cfg.classes,
            targets,
            ..Default::default()
        };
        let grads = ctx.backward(loss).stage("backward")?;
        let updates = ctx.into_updates();
        state.adam.step(&mut state.params, &grads)?;
        state.params.apply_updates(updates)?;
        state.step += 1;
        loss_sum += value * bundle.len() as f64;
        hits += bundle.predictions().iter().zip(&bundle.targets).filter(|(p, t)| p == t).count();
        seen += bundle.len();
    }
    state.epoch += 1;
    Ok(EpochStats {
        loss: loss_sum / seen as f64,
        accuracy: hits as f64 / seen as f64,
    })
}

/// Eval-mode predictions over a whole dataset and the sample-weighted loss.
pub fn predict_dataset<T: Real>(
    model: &Model,
    params: &ParamStore<T>,
    data: &GraphDataset<T>,
    batch_size: usize,
) -> Result<(PredictionBundle, f64)> {
    if data.is_empty() {
        return Err(Error::data("cannot evaluate an empty dataset"));
    }
    let mut all = PredictionBundle::default();
    let mut loss_sum = 0.0;
    for batch in data.sequential_batches(batch_size)? {
        let (b, loss) = model.predict(params, &batch)?;
        loss_sum += loss * b.len() as f64;
        all.extend(b);
    }
    let loss = loss_sum / all.len() as f64;
    Ok((all, loss))
}

#[derive(Clone, Debug, Default)]
pub struct FitOptions<'a, T> {
    pub val: Option<&'a GraphDataset<T>>,
    /// Directory for `last.ckpt` (every epoch) and `best.ckpt`.
    pub checkpoint_dir: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FitSummary {
    pub records: Vec<MetricsRecord>,
    pub stopped_early: bool,
}

/// Trains until `cfg.epochs` epochs are complete (counting epochs already in
/// `state`) or the train-accuracy target is met. Each record is passed to
/// `log` as soon as it exists.
pub fn fit<T: Real>(
    model: &Model,
    cfg: &TrainConfig,
    state: &mut TrainState<T>,
    train: &GraphDataset<T>,
    opts: &FitOptions<'_, T>,
    mut log: impl FnMut(&MetricsRecord) -> Result<()>,
) -> Result<FitSummary> {
    cfg.validate()?;
    if let Some(dir) = &opts.checkpoint_dir {
        std::fs::create_dir_all(dir).file(dir)?;
    }
    let mut records = Vec::new();
    let mut emit = |r: MetricsRecord, records: &mut Vec<MetricsRecord>| -> Result<()> {
        log(&r)?;
        records.push(r);
        Ok(())
    };
    let mut stopped_early = false;
    while state.epoch < cfg.epochs {
        let stats = train_epoch(model, cfg, state, train)?;
        let epoch = state.epoch;
        log::info!("epoch {epoch}: train loss {:.6} accuracy {:.4}", stats.loss, stats.accuracy);
        emit(
            MetricsRecord {
                epoch,
                split: "train".into(),
                loss: stats.loss,
                accuracy: stats.accuracy,
            },
            &mut records,
        )?;
        let mut improved = false;
        if let Some(val) = opts.val.filter(|v| !v.is_empty()) {
            let (b, loss) = predict_dataset(model, &state.params, val, cfg.eval_batch_size)?;
            let acc = b.accuracy();
            emit(
                MetricsRecord {
                    epoch,
                    split: "val".into(),
                    loss,
                    accuracy: acc,
                },
                &mut records,
            )?;
            if state.best_val_accuracy.is_none_or(|best| acc > best) {
                state.best_val_accuracy = Some(acc);
                state.best_epoch = Some(epoch);
                state.best_params = Some(state.params.clone());
                improved = true;
            }
        }
        if let Some(dir) = &opts.checkpoint_dir {
            save_checkpoint(&dir.join("last.ckpt"), model, cfg, state)?;
            if improved {
                save_checkpoint(&dir.join("best.ckpt"), model, cfg, state)?;
            }
        }
        if cfg.stop_at_train_accuracy.is_some_and(|t| stats.accuracy >= t) {
            stopped_early = true;
            break;
        }
    }
    Ok(FitSummary { records, stopped_early })
}

/// Appends metrics records to a JSONL file.
pub struct MetricsLog {
    out: std::io::BufWriter<std::fs::File>,
    path: PathBuf,
}

impl MetricsLog {
    pub fn create(path: &Path, append: bool) -> Result<Self> {
        let f = std::fs::OpenOptions::new()
            .create(true)
            .write(true)
            .append(append)
            .truncate(!append)
            .open(path)
            .file(path)?;
        Ok(MetricsLog {
            out: std::io::BufWriter::new(f),
            path: path.to_path_buf(),
        })
    }

    pub fn write(&mut self, r: &MetricsRecord) -> Result<()> {
        writeln!(self.out, "{}", r.to_json_line()).file(&self.path)?;
        self.out.flush().file(&self.path)
    }
}
