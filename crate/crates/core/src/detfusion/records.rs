//! Detection and ground-truth files (one JSON object per line) and the
//! grouping of detections into per-object sets.
//!
//! ```text
//! detections.jsonl   {"image_id":"img00003","object_id":"0","model":"yolo","x1":10.5,"y1":4.0,"x2":40.0,"y2":30.25,"score":0.91}
//! ground_truth.jsonl {"image_id":"img00003","object_id":"0","x1":11.0,"y1":5.0,"x2":39.0,"y2":29.0}
//! ```
//!
//! A detection's `object_id` may be omitted; such detections are assigned
//! to ground-truth objects of the same image by greedy IoU matching.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::detfusion::boxes::{box_iou, BBox};
use crate::error::{Context, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Detector {
    Yolo,
    Retina,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub image_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub object_id: Option<String>,
    pub model: Detector,
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
    pub score: f64,
}

impl DetectionRecord {
    pub fn bbox(&self) -> Result<BBox> {
        BBox::new(self.x1, self.y1, self.x2, self.y2)
    }

    pub fn validate(&self) -> Result<()> {
        self.bbox()?;
        if !(0.0..=1.0).contains(&self.score) {
            return Err(Error::data(format!("score {} outside [0, 1]", self.score)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthRecord {
    pub image_id: String,
    pub object_id: String,
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl GroundTruthRecord {
    pub fn bbox(&self) -> Result<BBox> {
        BBox::new(self.x1, self.y1, self.x2, self.y2)
    }
}

/// All detections for one ground-truth object.
#[derive(Clone, Debug, PartialEq)]
pub struct ObjectGroup {
    pub image_id: String,
    pub object_id: String,
    pub gt: BBox,
    pub yolo: Option<DetectionRecord>,
    pub retina: Option<DetectionRecord>,
}

pub fn read_jsonl<R: DeserializeOwned>(r: impl BufRead) -> Result<Vec<R>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::data(format!("line {}: {e}", i + 1)))?);
    }
    Ok(out)
}

pub fn write_jsonl<R: Serialize>(mut w: impl Write, records: &[R]) -> Result<()> {
    for r in records {
        writeln!(w, "{}", serde_json::to_string(r)?)?;
    }
    Ok(())
}

pub fn load_jsonl<R: DeserializeOwned>(path: impl AsRef<Path>) -> Result<Vec<R>> {
    let path = path.as_ref();
    let f = std::fs::File::open(path).file(path)?;
    read_jsonl(std::io::BufReader::new(f)).file(path)
}

pub fn save_jsonl<R: Serialize>(path: impl AsRef<Path>, records: &[R]) -> Result<()> {
    let path = path.as_ref();
    let mut w = std::io::BufWriter::new(std::fs::File::create(path).file(path)?);
    write_jsonl(&mut w, records).file(path)?;
    w.flush().file(path)
}

/// Groups detections by object, ordered by `(image_id, object_id)`.
///
/// Detections carrying an `object_id` go to that object (at most one per
/// detector). The rest are matched per image and detector greedily: all
/// detection/object pairs with positive IoU in descending IoU order, each
/// detection and each object slot used at most once. Objects that end up
/// with no detection are dropped and counted in the second return value.
pub fn group_detections(dets: &[DetectionRecord], gts: &[GroundTruthRecord]) -> Result<(Vec<ObjectGroup>, usize)> {
    let mut groups: BTreeMap<(String, String), ObjectGroup> = BTreeMap::new();
    for g in gts {
        let key = (g.image_id.clone(), g.object_id.clone());
        let group = ObjectGroup {
            image_id: g.image_id.clone(),
            object_id: g.object_id.clone(),
            gt: g.bbox()?,
            yolo: None,
            retina: None,
        };
        if groups.insert(key, group).is_some() {
            return Err(Error::data(format!("duplicate ground truth {}/{}", g.image_id, g.object_id)));
        }
    }

    fn slot(g: &mut ObjectGroup, m: Detector) -> &mut Option<DetectionRecord> {
        match m {
            Detector::Yolo => &mut g.yolo,
            Detector::Retina => &mut g.retina,
        }
    }

    let mut unassigned: BTreeMap<(String, Detector), Vec<&DetectionRecord>> = BTreeMap::new();
    for d in dets {
        d.validate()?;
        match &d.object_id {
            Some(obj) => {
                let g = groups
                    .get_mut(&(d.image_id.clone(), obj.clone()))
                    .ok_or_else(|| Error::data(format!("detection for unknown object {}/{obj}", d.image_id)))?;
                let s = slot(g, d.model);
                if s.is_some() {
                    return Err(Error::data(format!("two {:?} detections for {}/{obj}", d.model, d.image_id)));
                }
                *s = Some(d.clone());
            }
            None => unassigned.entry((d.image_id.clone(), d.model)).or_default().push(d),
        }
    }

    for ((image, model), cands) in unassigned {
        let keys: Vec<(String, String)> = groups
            .range((image.clone(), String::new())..)
            .take_while(|(k, _)| k.0 == image)
            .filter(|(_, g)| match model {
                Detector::Yolo => g.yolo.is_none(),
                Detector::Retina => g.retina.is_none(),
            })
            .map(|(k, _)| k.clone())
            .collect();
        let mut pairs = Vec::new();
        for (di, d) in cands.iter().enumerate() {
            let b = d.bbox()?;
            for (gi, k) in keys.iter().enumerate() {
                let iou = box_iou(&b, &groups[k].gt)?;
                if iou > 0.0 {
                    pairs.push((iou, di, gi));
                }
            }
        }
        // Descending IoU; index order breaks ties so the result is deterministic.
        pairs.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        let mut det_used = vec![false; cands.len()];
        let mut gt_used = vec![false; keys.len()];
        for (_, di, gi) in pairs {
            if det_used[di] || gt_used[gi] {
                continue;
            }
            det_used[di] = true;
            gt_used[gi] = true;
            let g = groups.get_mut(&keys[gi]).expect("key from map");
            *slot(g, model) = Some(cands[di].clone());
        }
    }

    let total = groups.len();
    let kept: Vec<ObjectGroup> = groups
        .into_values()
        .filter(|g| g.yolo.is_some() || g.retina.is_some())
        .collect();
    let dropped = total - kept.len();
    Ok((kept, dropped))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn det(img: &str, obj: Option<&str>, model: Detector, b: [f64; 4]) -> DetectionRecord {
        DetectionRecord {
            image_id: img.into(),
            object_id: obj.map(Into::into),
            model,
            x1: b[0],
            y1: b[1],
            x2: b[2],
            y2: b[3],
            score: 0.9,
        }
    }

    fn gt(img: &str, obj: &str, b: [f64; 4]) -> GroundTruthRecord {
        GroundTruthRecord {
            image_id: img.into(),
            object_id: obj.into(),
            x1: b[0],
            y1: b[1],
            x2: b[2],
            y2: b[3],
        }
    }

    #[test]
    fn greedy_matching_prefers_best_overlap() {
        let gts = [gt("a", "0", [0.0, 0.0, 10.0, 10.0]), gt("a", "1", [20.0, 0.0, 30.0, 10.0])];
        let dets = [
            det("a", None, Detector::Yolo, [21.0, 0.0, 30.0, 10.0]),
            det("a", None, Detector::Yolo, [1.0, 0.0, 10.0, 10.0]),
            det("a", None, Detector::Retina, [0.0, 0.0, 9.0, 9.0]),
        ];
        let (groups, dropped) = group_detections(&dets, &gts).unwrap();
        assert_eq!(dropped, 0);
        assert_eq!(groups[0].yolo.as_ref().unwrap().x1, 1.0);
        assert!(groups[0].retina.is_some());
        assert_eq!(groups[1].yolo.as_ref().unwrap().x1, 21.0);
        assert!(groups[1].retina.is_none());
    }

    #[test]
    fn explicit_object_ids_and_drops() {
        let gts = [gt("a", "0", [0.0, 0.0, 10.0, 10.0]), gt("b", "0", [0.0, 0.0, 10.0, 10.0])];
        let dets = [det("a", Some("0"), Detector::Retina, [50.0, 50.0, 60.0, 60.0])];
        let (groups, dropped) = group_detections(&dets, &gts).unwrap();
        assert_eq!((groups.len(), dropped), (1, 1));
        let bad = [det("z", Some("0"), Detector::Yolo, [0.0, 0.0, 1.0, 1.0])];
        assert!(group_detections(&bad, &gts).is_err());
    }

    #[test]
    fn records_round_trip() {
        let d = vec![det("a", Some("0"), Detector::Retina, [1.0, 2.0, 3.0, 4.0])];
        let mut buf = Vec::new();
        write_jsonl(&mut buf, &d).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.contains("\"model\":\"retina\""));
        assert_eq!(read_jsonl::<DetectionRecord>(&buf[..]).unwrap(), d);
    }
}
