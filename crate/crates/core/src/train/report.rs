//! Evaluation reports: accuracy, normalized confusion matrix and, for
//! detection graphs, the average-IoU table.

use serde::Serialize;
use serde_json::{json, Value};

use crate::detfusion::metrics::{confusion_matrix, confusion_table, normalize_confusion, IouReport, IouRow};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::model::Target;
use crate::nn::loss::PredictionBundle;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalReport {
    pub split: String,
    pub samples: usize,
    pub accuracy: f64,
    pub loss: f64,
    pub class_names: Vec<String>,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<usize>>,
    pub normalized: Vec<Vec<f64>>,
    pub iou: Option<IouReport>,
}

impl EvalReport {
    /// `graphs` must be the evaluated graphs in prediction order; the IoU
    /// table is produced for graph targets whose nodes carry classes and
    /// IoUs.
    pub fn new<T>(
        split: &str,
        bundle: &PredictionBundle,
        loss: f64,
        graphs: &[Graph<T>],
        target: Target,
        class_names: Vec<String>,
    ) -> Result<Self> {
        let preds = bundle.predictions();
        let confusion = confusion_matrix(&preds, &bundle.targets, bundle.classes)?;
        let has_ious = graphs.iter().all(|g| g.node_labels.is_some() && g.node_values.is_some());
        let iou = if target == Target::Graph && has_ious && graphs.len() == preds.len() {
            Some(IouReport::from_graphs(graphs, &preds)?)
        } else {
            None
        };
        Ok(EvalReport {
            split: split.to_string(),
            samples: bundle.len(),
            accuracy: bundle.accuracy(),
            loss,
            class_names,
            normalized: normalize_confusion(&confusion),
            confusion,
            iou,
        })
    }

    /// Machine-readable form, one JSON object per line.
    pub fn to_jsonl(&self) -> String {
        let mut lines = vec![json!({
            "kind": "summary",
            "split": self.split,
            "samples": self.samples,
            "accuracy": self.accuracy,
            "loss": self.loss,
        })];
        for (i, name) in self.class_names.iter().enumerate() {
            lines.push(json!({
                "kind": "confusion",
                "split": self.split,
                "true": name,
                "counts": self.confusion[i],
                "normalized": self.normalized[i],
            }));
        }
        if let Some(iou) = &self.iou {
            for r in &iou.rows {
                lines.push(json!({
                    "kind": "iou",
                    "split": self.split,
                    "index": r.index,
                    "model": r.model,
                    "avg_iou": r.avg_iou,
                    "samples": r.samples,
                }));
            }
        }
        lines.iter().map(|l| format!("{l}\n")).collect()
    }

    /// Inverse of [`EvalReport::to_jsonl`]. Lines of unknown kinds are
    /// skipped.
    pub fn from_jsonl(text: &str) -> Result<Self> {
        let mut summary: Option<Value> = None;
        let (mut class_names, mut confusion, mut normalized, mut rows) = (vec![], vec![], vec![], vec![]);
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let bad = |what: &str| Error::data(format!("report line {}: {what}", i + 1));
            let v: Value = serde_json::from_str(line)?;
            match v.get("kind").and_then(Value::as_str) {
                Some("summary") => summary = Some(v),
                Some("confusion") => {
                    class_names.push(v["true"].as_str().ok_or_else(|| bad("missing `true`"))?.to_string());
                    confusion.push(serde_json::from_value(v["counts"].clone()).map_err(|_| bad("bad `counts`"))?);
                    normalized.push(serde_json::from_value(v["normalized"].clone()).map_err(|_| bad("bad `normalized`"))?);
                }
                Some("iou") => rows.push(serde_json::from_value::<IouRow>(v).map_err(|_| bad("bad iou row"))?),
                _ => {}
            }
        }
        let s = summary.ok_or_else(|| Error::data("report has no summary line"))?;
        let field = |k: &str| s.get(k).cloned().ok_or_else(|| Error::data(format!("summary lacks `{k}`")));
        Ok(EvalReport {
            split: serde_json::from_value(field("split")?)?,
            samples: serde_json::from_value(field("samples")?)?,
            accuracy: serde_json::from_value(field("accuracy")?)?,
            loss: serde_json::from_value(field("loss")?)?,
            class_names,
            confusion,
            normalized,
            iou: (!rows.is_empty()).then_some(IouReport { rows }),
        })
    }

    pub fn table(&self) -> String {
        let names: Vec<&str> = self.class_names.iter().map(String::as_str).collect();
        let mut s = format!(
            "split {}: {} samples, accuracy {:.4}, loss {:.6}\n\n",
            self.split, self.samples, self.accuracy, self.loss
        );
        s.push_str(&confusion_table(&self.normalized, &names));
        if let Some(iou) = &self.iou {
            s.push('\n');
            s.push_str(&iou.table());
        }
        s
    }
}

/// `CLASS_NAMES` for three-class detection graphs, `class<k>` otherwise.
pub fn default_class_names(classes: usize) -> Vec<String> {
    use crate::detfusion::graph::{CLASS_NAMES, NODE_CLASSES};
    if classes == NODE_CLASSES {
        CLASS_NAMES.iter().map(|s| s.to_string()).collect()
    } else {
        (0..classes).map(|k| format!("class{k}")).collect()
    }
}
