//! Confusion matrices and average-IoU reports.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::detfusion::graph::{RETINA, YOLO};
use crate::error::{Error, Result};
use crate::graph::Graph;

/// `counts[true][predicted]`.
pub fn confusion_matrix(preds: &[usize], targets: &[usize], classes: usize) -> Result<Vec<Vec<usize>>> {
    if preds.len() != targets.len() {
        return Err(Error::data(format!("{} predictions for {} targets", preds.len(), targets.len())));
    }
    let mut m = vec![vec![0; classes]; classes];
    for (&p, &t) in preds.iter().zip(targets) {
        if p >= classes || t >= classes {
            return Err(Error::data(format!("class id out of range for {classes} classes")));
        }
        m[t][p] += 1;
    }
    Ok(m)
}

/// Divides each row by its sum; all-zero rows stay zero.
pub fn normalize_confusion(counts: &[Vec<usize>]) -> Vec<Vec<f64>> {
    counts
        .iter()
        .map(|row| {
            let total: usize = row.iter().sum();
            row.iter()
                .map(|&c| if total == 0 { 0.0 } else { c as f64 / total as f64 })
                .collect()
        })
        .collect()
}

/// Human-readable normalized confusion matrix, rows = true class.
pub fn confusion_table(norm: &[Vec<f64>], names: &[&str]) -> String {
    let mut s = String::new();
    let _ = write!(s, "{:<14}", "");
    for n in names {
        let _ = write!(s, "{:>14}", format!("Pred: {n}"));
    }
    s.push('\n');
    for (row, n) in norm.iter().zip(names) {
        let _ = write!(s, "{:<14}", format!("True: {n}"));
        for v in row {
            let _ = write!(s, "{v:>14.4}");
        }
        s.push('\n');
    }
    s
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IouRow {
    pub index: usize,
    pub model: String,
    pub avg_iou: f64,
    pub samples: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IouReport {
    pub rows: Vec<IouRow>,
}

pub const REPORT_MODELS: [&str; 3] = ["YOLOv11", "RetinaNet", "TGraphX"];

pub fn mean(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::data("cannot average an empty set"));
    }
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}

/// IoU of the node whose class is `class`, if the graph has one.
pub fn node_iou<T>(g: &Graph<T>, class: usize) -> Option<f64> {
    let labels = g.node_labels.as_ref()?;
    let values = g.node_values.as_ref()?;
    labels.iter().position(|&k| k == class).map(|i| values[i])
}

impl IouReport {
    /// Rows for the two detectors (averaged over objects each detected) and
    /// for the model's selected nodes (`selected[i]` is a node class of
    /// `graphs[i]`).
    pub fn from_graphs<T>(graphs: &[Graph<T>], selected: &[usize]) -> Result<Self> {
        if graphs.is_empty() {
            return Err(Error::data("IoU report needs at least one sample"));
        }
        if graphs.len() != selected.len() {
            return Err(Error::data("one selection per graph required"));
        }
        let per = |class: usize| -> Vec<f64> { graphs.iter().filter_map(|g| node_iou(g, class)).collect() };
        let chosen: Vec<f64> = graphs
            .iter()
            .zip(selected)
            .map(|(g, &k)| node_iou(g, k).ok_or_else(|| Error::data("selected class has no node")))
            .collect::<Result<_>>()?;
        let columns = [per(YOLO), per(RETINA), chosen];
        let rows = columns
            .iter()
            .zip(REPORT_MODELS)
            .enumerate()
            .map(|(i, (v, name))| {
                Ok(IouRow {
                    index: i + 1,
                    model: name.to_string(),
                    avg_iou: if v.is_empty() { 0.0 } else { mean(v)? },
                    samples: v.len(),
                })
            })
            .collect::<Result<_>>()?;
        Ok(IouReport { rows })
    }

    pub fn get(&self, model: &str) -> Option<f64> {
        self.rows.iter().find(|r| r.model == model).map(|r| r.avg_iou)
    }

    pub fn table(&self) -> String {
        let mut s = format!("{:<7}{:<12}{:>14}\n", "Index", "Model", "Test Avg IoU");
        for r in &self.rows {
            let _ = writeln!(s, "{:<7}{:<12}{:>14.6}", r.index, r.model, r.avg_iou);
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalization() {
        let m = confusion_matrix(&[0, 1, 2], &[0, 1, 2], 3).unwrap();
        let n = normalize_confusion(&m);
        for (i, row) in n.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                assert_eq!(*v, if i == j { 1.0 } else { 0.0 });
            }
        }
        let n = normalize_confusion(&[vec![17, 5, 0], vec![0, 0, 0]]);
        assert_eq!(format!("{:.4} {:.4} {:.4}", n[0][0], n[0][1], n[0][2]), "0.7727 0.2273 0.0000");
        assert_eq!(n[1], vec![0.0; 3]);
    }

    #[test]
    fn table_layout() {
        let r = IouReport {
            rows: vec![IouRow {
                index: 1,
                model: "YOLOv11".into(),
                avg_iou: 0.5,
                samples: 2,
            }],
        };
        let t = r.table();
        assert_eq!(t.lines().next().unwrap().split_whitespace().collect::<Vec<_>>(), ["Index", "Model", "Test", "Avg", "IoU"]);
        assert!(t.contains("1      YOLOv11"));
        assert!(confusion_table(&[vec![1.0]], &["YOLO"]).contains("True: YOLO"));
    }
}
