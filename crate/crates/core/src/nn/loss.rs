use serde::{Deserialize, Serialize};
use tgraphx_tensor::{Real, Tape, Var};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    /// `CE + γ·AUC`.
    #[default]
    Composite,
    /// `α·CE + β·MSE(iou_pred, iou_gt)`.
    IouComposite,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub kind: LossKind,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            kind: LossKind::Composite,
            alpha: 1.0,
            beta: 0.0,
            gamma: 1.0,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        let coeffs = [self.alpha, self.beta, self.gamma];
        if coeffs.iter().any(|c| !c.is_finite() || *c < 0.0) {
            return Err(Error::config("loss coefficients must be finite and non-negative"));
        }
        if self.kind == LossKind::IouComposite && self.alpha == 0.0 && self.beta == 0.0 {
            return Err(Error::config("iou-composite loss needs alpha or beta positive"));
        }
        Ok(())
    }

    pub fn needs_iou(&self) -> bool {
        self.kind == LossKind::IouComposite && self.beta > 0.0
    }
}

/// `CE + γ·AUC`; with `γ = 0` the AUC term is not evaluated at all.
pub fn composite_loss<T: Real>(tape: &mut Tape<T>, logits: Var, targets: &[usize], gamma: f64) -> Result<Var> {
    let ce = tape.cross_entropy(logits, targets)?;
    if gamma == 0.0 {
        return Ok(ce);
    }
    let auc = tape.auc_ranking_loss(logits, targets)?;
    let auc = tape.scale(auc, T::of(gamma))?;
    Ok(tape.add(ce, auc)?)
}

/// `α·CE + β·MSE(iou_pred, iou_gt)`; the regression term is skipped when
/// `β = 0`.
pub fn iou_composite_loss<T: Real>(
    tape: &mut Tape<T>,
    logits: Var,
    targets: &[usize],
    iou: Option<(Var, &[T])>,
    cfg: &LossConfig,
) -> Result<Var> {
    let ce = tape.cross_entropy(logits, targets)?;
    let mut total = tape.scale(ce, T::of(cfg.alpha))?;
    if cfg.beta > 0.0 {
        let (pred, gt) = iou.ok_or_else(|| Error::data("iou-composite loss with beta > 0 needs IoU predictions and targets"))?;
        let mse = tape.mse(pred, gt)?;
        let mse = tape.scale(mse, T::of(cfg.beta))?;
        total = tape.add(total, mse)?;
    }
    Ok(total)
}

/// Loss selected by `cfg.kind`.
pub fn loss<T: Real>(
    tape: &mut Tape<T>,
    logits: Var,
    targets: &[usize],
    iou: Option<(Var, &[T])>,
    cfg: &LossConfig,
) -> Result<Var> {
    match cfg.kind {
        LossKind::Composite => composite_loss(tape, logits, targets, cfg.gamma),
        LossKind::IouComposite => iou_composite_loss(tape, logits, targets, iou, cfg),
    }
}

/// Plain-value predictions for evaluation and reporting.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PredictionBundle {
    /// Row-major `[n, C]`.
    pub logits: Vec<f64>,
    pub classes: usize,
    pub targets: Vec<usize>,
    /// Per-node IoU estimates and targets (not aligned with `targets` when
    /// the task is graph-level).
    pub iou_pred: Option<Vec<f64>>,
    pub iou_gt: Option<Vec<f64>>,
}

impl PredictionBundle {
    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    /// Argmax per row; ties go to the lower class index.
    pub fn predictions(&self) -> Vec<usize> {
        self.logits
            .chunks(self.classes)
            .map(|row| {
                row.iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |best, (k, &v)| if v > best.1 { (k, v) } else { best })
                    .0
            })
            .collect()
    }

    pub fn accuracy(&self) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        let hits = self.predictions().iter().zip(&self.targets).filter(|(p, t)| p == t).count();
        hits as f64 / self.len() as f64
    }

    pub fn extend(&mut self, other: PredictionBundle) {
        self.classes = other.classes;
        self.logits.extend(other.logits);
        self.targets.extend(other.targets);
        if let Some(b) = other.iou_pred {
            self.iou_pred.get_or_insert_with(Vec::new).extend(b);
        }
        if let Some(b) = other.iou_gt {
            self.iou_gt.get_or_insert_with(Vec::new).extend(b);
        }
    }
}
