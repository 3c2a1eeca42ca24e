use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;

use clap::Args;
use serde_json::Value;
use tgraphx::train::{EvalReport, MetricsRecord};

use crate::fail::{io, Failure};

#[derive(Args, Debug)]
pub struct ReportArgs {
    /// metrics.jsonl files written by `train` or report.jsonl files written
    /// by `eval`.
    #[arg(required = true, value_name = "FILE")]
    files: Vec<PathBuf>,
    /// Also write the rendered tables here.
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

pub fn run(args: &ReportArgs) -> Result<(), Failure> {
    let mut text = String::new();
    for path in &args.files {
        let content = std::fs::read_to_string(path).map_err(io(path))?;
        let table = render(&content).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))?;
        let _ = writeln!(text, "== {}\n{table}", path.display());
    }
    print!("{text}");
    if let Some(out) = &args.out {
        std::fs::write(out, &text).map_err(io(out))?;
    }
    Ok(())
}

fn render(content: &str) -> Result<String, String> {
    let first = content
        .lines()
        .find(|l| !l.trim().is_empty())
        .ok_or("empty file")?;
    let v: Value = serde_json::from_str(first).map_err(|e| e.to_string())?;
    if v.get("kind").is_some() {
        Ok(EvalReport::from_jsonl(content).map_err(|e| e.to_string())?.table())
    } else {
        let records = content
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str::<MetricsRecord>)
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| e.to_string())?;
        Ok(metrics_table(&records))
    }
}

/// One row per epoch, a loss and accuracy column pair per split.
pub fn metrics_table(records: &[MetricsRecord]) -> String {
    let mut splits: Vec<&str> = Vec::new();
    let mut rows: BTreeMap<usize, BTreeMap<&str, &MetricsRecord>> = BTreeMap::new();
    for r in records {
        if !splits.contains(&r.split.as_str()) {
            splits.push(&r.split);
        }
        rows.entry(r.epoch).or_default().insert(&r.split, r);
    }
    let mut s = format!("{:>6}", "epoch");
    for sp in &splits {
        let _ = write!(s, "{:>14}{:>14}", format!("{sp} loss"), format!("{sp} acc"));
    }
    s.push('\n');
    for (epoch, by_split) in &rows {
        let _ = write!(s, "{epoch:>6}");
        for sp in &splits {
            match by_split.get(sp) {
                Some(r) => {
                    let _ = write!(s, "{:>14.6}{:>14.4}", r.loss, r.accuracy);
                }
                None => {
                    let _ = write!(s, "{:>14}{:>14}", "-", "-");
                }
            }
        }
        s.push('\n');
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(epoch: usize, split: &str, loss: f64, accuracy: f64) -> MetricsRecord {
        MetricsRecord { epoch, split: split.into(), loss, accuracy }
    }

    #[test]
    fn pivots_splits_into_columns() {
        let t = metrics_table(&[rec(1, "train", 1.0, 0.5), rec(1, "val", 0.9, 0.6), rec(2, "train", 0.5, 0.75)]);
        let lines: Vec<&str> = t.lines().collect();
        assert_eq!(lines[0].split_whitespace().collect::<Vec<_>>(), ["epoch", "train", "loss", "train", "acc", "val", "loss", "val", "acc"]);
        assert_eq!(lines[1].split_whitespace().collect::<Vec<_>>(), ["1", "1.000000", "0.5000", "0.900000", "0.6000"]);
        assert_eq!(lines[2].split_whitespace().collect::<Vec<_>>(), ["2", "0.500000", "0.7500", "-", "-"]);
    }

    #[test]
    fn rejects_garbage() {
        assert!(render("").is_err());
        assert!(render("{\"epoch\": 1}").is_err());
        assert!(render("not json").is_err());
    }
}
