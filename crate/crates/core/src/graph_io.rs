//! Line-delimited JSON graph files, one graph per line.
//!
//! ```text
//! {"version":1,"id":"img7/obj0","shape":[3,3,32,32],"encoding":"base64-f32",
//!  "features":"AAAA…","edges":[[0,2],[1,2]],"edge_dim":1,"edge_features":[0.0,1.0],
//!  "node_labels":[0,1,2],"graph_label":2,"node_values":[0.61,0.55,0.83]}
//! ```
//!
//! `shape` is `[N, C, H, W]`. `features` holds the `N·C·H·W` node values in
//! row-major order: a JSON number array when `encoding` is `"list"`, or a
//! standard base64 string of little-endian `f64`/`f32` values for
//! `"base64-f64"`/`"base64-f32"`. `edge_features` is the row-major `[E,
//! edge_dim]` matrix. All keys after `edges` are optional. Readers reject any
//! `version` other than 1.

use std::io::{BufRead, Write};
use std::path::Path;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};
use tgraphx_tensor::{Real, Shape, Tensor};

use crate::error::{Context, Error, Result};
use crate::graph::Graph;

pub const GRAPH_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Encoding {
    List,
    #[default]
    Base64F64,
    Base64F32,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum Floats {
    List(Vec<f64>),
    Packed(String),
}

#[derive(Serialize, Deserialize)]
struct Record {
    version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    id: Option<String>,
    shape: [usize; 4],
    encoding: Encoding,
    features: Floats,
    edges: Vec<[usize; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    edge_dim: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    edge_features: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    node_labels: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    graph_label: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    node_values: Option<Vec<f64>>,
}

fn encode<T: Real>(data: &[T], enc: Encoding) -> Floats {
    match enc {
        Encoding::List => Floats::List(data.iter().map(|v| v.as_f64()).collect()),
        Encoding::Base64F64 => {
            let bytes: Vec<u8> = data.iter().flat_map(|v| v.as_f64().to_le_bytes()).collect();
            Floats::Packed(STANDARD.encode(bytes))
        }
        Encoding::Base64F32 => {
            let bytes: Vec<u8> = data.iter().flat_map(|v| (v.as_f64() as f32).to_le_bytes()).collect();
            Floats::Packed(STANDARD.encode(bytes))
        }
    }
}

fn decode(f: Floats, enc: Encoding) -> Result<Vec<f64>> {
    match (f, enc) {
        (Floats::List(v), Encoding::List) => Ok(v),
        (Floats::Packed(s), Encoding::Base64F64 | Encoding::Base64F32) => {
            let bytes = STANDARD
                .decode(s)
                .map_err(|e| Error::data(format!("bad base64 features: {e}")))?;
            let width = if enc == Encoding::Base64F64 { 8 } else { 4 };
            if bytes.len() % width != 0 {
                return Err(Error::data("packed feature length is not a multiple of the value size"));
            }
            Ok(bytes
                .chunks_exact(width)
                .map(|c| match c.len() {
                    8 => f64::from_le_bytes(c.try_into().expect("8 bytes")),
                    _ => f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64,
                })
                .collect())
        }
        _ => Err(Error::data("features do not match the declared encoding")),
    }
}

pub fn to_json_line<T: Real>(g: &Graph<T>, enc: Encoding) -> Result<String> {
    let rec = Record {
        version: GRAPH_FORMAT_VERSION,
        id: g.id.clone(),
        shape: g.node_features.shape().0,
        encoding: enc,
        features: encode(g.node_features.data(), enc),
        edges: g.edges.iter().map(|&(s, d)| [s, d]).collect(),
        edge_dim: g.edge_features.as_ref().map(|e| e.shape().c()),
        edge_features: g.edge_features.as_ref().map(|e| e.to_f64_vec()),
        node_labels: g.node_labels.clone(),
        graph_label: g.graph_label,
        node_values: g.node_values.clone(),
    };
    Ok(serde_json::to_string(&rec)?)
}

pub fn from_json_line<T: Real>(line: &str) -> Result<Graph<T>> {
    let rec: Record = serde_json::from_str(line)?;
    if rec.version != GRAPH_FORMAT_VERSION {
        return Err(Error::data(format!("unsupported graph format version {}", rec.version)));
    }
    let features = decode(rec.features, rec.encoding)?;
    let node_features = Tensor::from_f64(Shape(rec.shape), &features)?;
    let edges: Vec<(usize, usize)> = rec.edges.iter().map(|&[s, d]| (s, d)).collect();
    let edge_features = match (rec.edge_dim, rec.edge_features) {
        (Some(f), Some(v)) => Some(Tensor::from_f64(Shape::matrix(edges.len(), f), &v)?),
        (None, None) => None,
        _ => return Err(Error::data("edge_dim and edge_features must appear together")),
    };
    let g = Graph {
        node_features,
        edges,
        edge_features,
        node_labels: rec.node_labels,
        graph_label: rec.graph_label,
        node_values: rec.node_values,
        id: rec.id,
    };
    g.validate()?;
    Ok(g)
}

pub fn write_graphs<T: Real>(mut w: impl Write, graphs: &[Graph<T>], enc: Encoding) -> Result<()> {
    for g in graphs {
        writeln!(w, "{}", to_json_line(g, enc)?)?;
    }
    Ok(())
}

/// Reads every non-blank line; errors name the offending line number.
pub fn read_graphs<T: Real>(r: impl BufRead) -> Result<Vec<Graph<T>>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(from_json_line(&line).map_err(|e| Error::data(format!("line {}: {e}", i + 1)))?);
    }
    Ok(out)
}

pub fn save_graphs<T: Real>(path: impl AsRef<Path>, graphs: &[Graph<T>], enc: Encoding) -> Result<()> {
    let path = path.as_ref();
    let mut w = std::io::BufWriter::new(std::fs::File::create(path).file(path)?);
    write_graphs(&mut w, graphs, enc).file(path)?;
    w.flush().file(path)
}

pub fn load_graphs<T: Real>(path: impl AsRef<Path>) -> Result<Vec<Graph<T>>> {
    let path = path.as_ref();
    let f = std::fs::File::open(path).file(path)?;
    read_graphs(std::io::BufReader::new(f)).file(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Graph<f64> {
        let mut g = Graph::new(
            Tensor::from_fn(Shape::new(3, 2, 2, 1), |[n, c, h, _]| n as f64 - 0.1 * c as f64 + 0.25 * h as f64),
            vec![(0, 2), (1, 2)],
        );
        g.edge_features = Some(Tensor::from_f64(Shape::matrix(2, 1), &[0.0, 1.0]).unwrap());
        g.node_labels = Some(vec![0, 1, 2]);
        g.graph_label = Some(1);
        g.node_values = Some(vec![0.5, 0.75, 0.25]);
        g.id = Some("a/b".into());
        g
    }

    #[test]
    fn round_trips_in_every_encoding() {
        let g = sample();
        for enc in [Encoding::List, Encoding::Base64F64, Encoding::Base64F32] {
            let line = to_json_line(&g, enc).unwrap();
            let mut expected = g.clone();
            if enc == Encoding::Base64F32 {
                expected.node_features = g.node_features.cast::<f32>().cast();
            }
            assert_eq!(from_json_line::<f64>(&line).unwrap(), expected, "{enc:?}");
        }
    }

    #[test]
    fn rejects_unknown_version() {
        let line = to_json_line(&sample(), Encoding::List).unwrap().replace("\"version\":1", "\"version\":2");
        assert!(from_json_line::<f64>(&line).is_err());
    }

    #[test]
    fn rejects_invalid_graph() {
        let line = to_json_line(&sample(), Encoding::List).unwrap().replace("[1,2]]", "[1,9]]");
        assert!(from_json_line::<f64>(&line).is_err());
    }
}
