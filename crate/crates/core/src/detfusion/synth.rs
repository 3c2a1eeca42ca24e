//! Synthetic detection-fusion data: one two-tone "car" per image plus a
//! YOLO and a RetinaNet box around it, with known best-node labels.
//!
//! `Constructed` mode draws the intended winner first (union with
//! probability `union_fraction`, the detectors splitting the rest) and
//! builds boxes to match: for a union win each detector covers one side of
//! the car; for a detector win that detector is tight and the other loose.
//! `Jitter` mode perturbs each coordinate of the ground truth uniformly by
//! up to the detector's noise. In both modes the stored label is the
//! brute-force argmax IoU over the nodes.

use std::ops::Range;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use tgraphx_tensor::{derive_seed, Real, Shape, Tensor};

use crate::detfusion::boxes::{box_iou, union_box, BBox};
use crate::detfusion::graph::{best_node, build_detection_graph, DetectionSample, RETINA, UNION, YOLO};
use crate::detfusion::image::{quantize, save_image};
use crate::detfusion::records::{save_jsonl, DetectionRecord, Detector, GroundTruthRecord};
use crate::error::{Context, Error, Result};
use crate::graph_io::{save_graphs, Encoding};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SynthMode {
    #[default]
    Constructed,
    Jitter,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ImageFormat {
    #[default]
    Png,
    Ppm,
}

impl ImageFormat {
    pub fn extension(self) -> &'static str {
        match self {
            ImageFormat::Png => "png",
            ImageFormat::Ppm => "ppm",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub samples: usize,
    pub image_size: usize,
    pub seed: u64,
    pub mode: SynthMode,
    pub union_fraction: f64,
    /// Maximum per-coordinate offset in pixels (jitter mode).
    pub yolo_noise: f64,
    pub retina_noise: f64,
    pub train_fraction: f64,
    pub val_fraction: f64,
    pub image_format: ImageFormat,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            samples: 2000,
            image_size: 64,
            seed: 0,
            mode: SynthMode::Constructed,
            union_fraction: 0.6,
            yolo_noise: 4.0,
            retina_noise: 4.0,
            train_fraction: 0.8,
            val_fraction: 0.1,
            image_format: ImageFormat::Png,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.samples == 0 {
            return Err(Error::config("synth.samples must be at least 1"));
        }
        if self.image_size < 32 {
            return Err(Error::config("synth.image_size must be at least 32"));
        }
        if !(0.0..=1.0).contains(&self.union_fraction) {
            return Err(Error::config("synth.union_fraction must lie in [0, 1]"));
        }
        if !(self.yolo_noise >= 0.0 && self.retina_noise >= 0.0) {
            return Err(Error::config("synth noise levels must be non-negative"));
        }
        let (t, v) = (self.train_fraction, self.val_fraction);
        if !(t > 0.0 && v >= 0.0 && t + v <= 1.0) {
            return Err(Error::config("synth split fractions must satisfy 0 < train, 0 <= val, train + val <= 1"));
        }
        Ok(())
    }

    /// Sample index ranges of the train, val and test splits.
    pub fn splits(&self) -> [Range<usize>; 3] {
        let n = self.samples;
        let train = ((n as f64 * self.train_fraction).round() as usize).min(n);
        let val = ((n as f64 * self.val_fraction).round() as usize).min(n - train);
        [0..train, train..train + val, train + val..n]
    }
}

pub const SPLIT_NAMES: [&str; 3] = ["train", "val", "test"];

#[derive(Clone, Debug, PartialEq)]
pub struct SynthSample {
    pub image_id: String,
    /// `[1, 3, S, S]`, quantized to 8-bit levels.
    pub image: Tensor<f64>,
    pub gt: BBox,
    pub yolo: BBox,
    pub retina: BBox,
    pub yolo_score: f64,
    pub retina_score: f64,
    /// Argmax-IoU node class over (YOLO, Retina, Union).
    pub label: usize,
}

impl SynthSample {
    pub fn ious(&self) -> Result<[f64; 3]> {
        Ok([
            box_iou(&self.yolo, &self.gt)?,
            box_iou(&self.retina, &self.gt)?,
            box_iou(&union_box(&self.yolo, &self.retina), &self.gt)?,
        ])
    }
}

pub fn label_of(gt: &BBox, yolo: &BBox, retina: &BBox) -> Result<usize> {
    let ious = [box_iou(yolo, gt)?, box_iou(retina, gt)?, box_iou(&union_box(yolo, retina), gt)?];
    Ok(best_node(&[YOLO, RETINA, UNION], &ious))
}

const MAX_TRIES: usize = 1000;

/// Generates `cfg.samples` samples; sample `i` depends only on `(seed, i)`
/// and, in constructed mode, on its slot in the shuffled class plan.
pub fn generate(cfg: &SynthConfig) -> Result<Vec<SynthSample>> {
    cfg.validate()?;
    let plan = class_plan(cfg);
    (0..cfg.samples)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[cfg.seed, i as u64]));
            sample(cfg, i, plan.get(i).copied(), &mut rng)
        })
        .collect()
}

/// Exact class counts (union share rounded, detectors splitting the rest)
/// in a seeded random order; empty in jitter mode.
fn class_plan(cfg: &SynthConfig) -> Vec<usize> {
    if cfg.mode != SynthMode::Constructed {
        return Vec::new();
    }
    let n = cfg.samples;
    let unions = ((n as f64 * cfg.union_fraction).round() as usize).min(n);
    let yolos = (n - unions).div_ceil(2);
    let mut plan: Vec<usize> = std::iter::repeat_n(UNION, unions)
        .chain(std::iter::repeat_n(YOLO, yolos))
        .chain(std::iter::repeat_n(RETINA, n - unions - yolos))
        .collect();
    plan.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(&[cfg.seed, u64::MAX])));
    plan
}

fn sample(cfg: &SynthConfig, index: usize, intended: Option<usize>, rng: &mut ChaCha8Rng) -> Result<SynthSample> {
    let s = cfg.image_size as f64;
    let unit = s / 64.0;
    let margin = (11.0 * unit).ceil();
    let w = rng.random_range((0.30 * s).round()..=(0.55 * s).round());
    let h = rng.random_range((0.25 * s).round()..=(0.45 * s).round());
    let x1 = rng.random_range(margin..=s - margin - w).round();
    let y1 = rng.random_range(margin..=s - margin - h).round();
    let gt = BBox::new(x1, y1, x1 + w, y1 + h)?;
    let image = render(cfg.image_size, &gt, rng);

    let mut boxes = None;
    for _ in 0..MAX_TRIES {
        let (y, r) = match intended {
            Some(k) => constructed_boxes(k, &gt, unit, rng)?,
            None => (
                jitter(&gt, cfg.yolo_noise, s, rng)?,
                jitter(&gt, cfg.retina_noise, s, rng)?,
            ),
        };
        let label = label_of(&gt, &y, &r)?;
        if intended.is_none_or(|k| k == label) {
            boxes = Some((y, r, label));
            break;
        }
    }
    let (yolo, retina, label) =
        boxes.ok_or_else(|| Error::data(format!("sample {index}: could not realise the intended best node")))?;
    let score = |rng: &mut ChaCha8Rng| (rng.random_range(0.5..1.0f64) * 1000.0).round() / 1000.0;
    Ok(SynthSample {
        image_id: format!("img{index:05}"),
        image,
        gt,
        yolo,
        retina,
        yolo_score: score(rng),
        retina_score: score(rng),
        label,
    })
}

fn offset(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    rng.random_range(lo..=hi).round()
}

fn tight(gt: &BBox, unit: f64, rng: &mut ChaCha8Rng) -> Result<BBox> {
    let j = unit.max(1.0);
    BBox::new(
        gt.x1 + offset(rng, -j, j),
        gt.y1 + offset(rng, -j, j),
        gt.x2 + offset(rng, -j, j),
        gt.y2 + offset(rng, -j, j),
    )
}

fn loose(gt: &BBox, unit: f64, rng: &mut ChaCha8Rng) -> Result<BBox> {
    let (lo, hi) = (5.0 * unit, 10.0 * unit);
    BBox::new(
        gt.x1 - offset(rng, lo, hi),
        gt.y1 - offset(rng, lo, hi),
        gt.x2 + offset(rng, lo, hi),
        gt.y2 + offset(rng, lo, hi),
    )
}

/// `(yolo, retina)` boxes designed so that node class `k` wins.
fn constructed_boxes(k: usize, gt: &BBox, unit: f64, rng: &mut ChaCha8Rng) -> Result<(BBox, BBox)> {
    match k {
        YOLO => Ok((tight(gt, unit, rng)?, loose(gt, unit, rng)?)),
        RETINA => {
            let (r, y) = (tight(gt, unit, rng)?, loose(gt, unit, rng)?);
            Ok((y, r))
        }
        _ => {
            // Each detector sees one side (left or right) of the car.
            let hull = tight(gt, unit, rng)?;
            let w = hull.width();
            let left = BBox::new(hull.x1, hull.y1 + offset(rng, -1.0, 1.0), hull.x1 + (w * rng.random_range(0.5..0.7)).round(), hull.y2)?;
            let right = BBox::new(hull.x2 - (w * rng.random_range(0.5..0.7)).round(), hull.y1, hull.x2, hull.y2 + offset(rng, -1.0, 1.0))?;
            Ok(if rng.random_bool(0.5) { (left, right) } else { (right, left) })
        }
    }
}

fn jitter(gt: &BBox, noise: f64, size: f64, rng: &mut ChaCha8Rng) -> Result<BBox> {
    let mut d = || if noise > 0.0 { rng.random_range(-noise..=noise) } else { 0.0 };
    for _ in 0..MAX_TRIES {
        let b = [gt.x1 + d(), gt.y1 + d(), gt.x2 + d(), gt.y2 + d()].map(|v| v.clamp(0.0, size));
        if b[2] - b[0] >= 2.0 && b[3] - b[1] >= 2.0 {
            return BBox::new(b[0], b[1], b[2], b[3]);
        }
    }
    Err(Error::data(format!("noise {noise} too large for the object size")))
}

/// Dark noisy background with the car's two halves in contrasting colours.
fn render(size: usize, gt: &BBox, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let (front, back) = loop {
        let a: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.5..1.0));
        let b: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.5..1.0));
        if a.iter().zip(&b).any(|(p, q)| (p - q).abs() >= 0.3) {
            break (a, b);
        }
    };
    let mid = (gt.x1 + gt.x2) / 2.0;
    let mut noise: Vec<f64> = (0..3 * size * size).map(|_| rng.random_range(0.0..0.25)).collect();
    let img = Tensor::from_fn(Shape::new(1, 3, size, size), |[_, c, y, x]| {
        let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
        let v = &mut noise[(c * size + y) * size + x];
        if px > gt.x1 && px < gt.x2 && py > gt.y1 && py < gt.y2 {
            let tone = if px < mid { front[c] } else { back[c] };
            tone - 0.2 * *v
        } else {
            *v
        }
    });
    quantize(&img)
}

/// Graph for every sample, with id `<image_id>/0`.
pub fn to_graphs<T: Real>(samples: &[SynthSample], node_size: usize) -> Result<Vec<DetectionSample<T>>> {
    samples
        .iter()
        .map(|s| {
            let image: Tensor<T> = s.image.cast();
            let mut d = build_detection_graph(Some(&s.yolo), Some(&s.retina), &image, &s.gt, node_size)?;
            d.graph.id = Some(format!("{}/0", s.image_id));
            Ok(d)
        })
        .collect()
}

fn records(samples: &[SynthSample]) -> (Vec<DetectionRecord>, Vec<GroundTruthRecord>) {
    let mut dets = Vec::with_capacity(2 * samples.len());
    let mut gts = Vec::with_capacity(samples.len());
    for s in samples {
        for (model, b, score) in [(Detector::Yolo, s.yolo, s.yolo_score), (Detector::Retina, s.retina, s.retina_score)] {
            dets.push(DetectionRecord {
                image_id: s.image_id.clone(),
                object_id: Some("0".into()),
                model,
                x1: b.x1,
                y1: b.y1,
                x2: b.x2,
                y2: b.y2,
                score,
            });
        }
        gts.push(GroundTruthRecord {
            image_id: s.image_id.clone(),
            object_id: "0".into(),
            x1: s.gt.x1,
            y1: s.gt.y1,
            x2: s.gt.x2,
            y2: s.gt.y2,
        });
    }
    (dets, gts)
}

/// Writes `<dir>/{train,val,test}/` with `images/`, `detections.jsonl` and
/// `ground_truth.jsonl`; with `graphs_node_size`, also `graphs.jsonl`.
/// Returns the per-split sample counts.
pub fn write_dataset(
    dir: &Path,
    cfg: &SynthConfig,
    samples: &[SynthSample],
    graphs_node_size: Option<usize>,
) -> Result<[usize; 3]> {
    let mut counts = [0; 3];
    for (i, (name, range)) in SPLIT_NAMES.iter().zip(cfg.splits()).enumerate() {
        let split = &samples[range];
        counts[i] = split.len();
        let sdir = dir.join(name);
        let images = sdir.join("images");
        std::fs::create_dir_all(&images).file(&images)?;
        for s in split {
            save_image(images.join(format!("{}.{}", s.image_id, cfg.image_format.extension())), &s.image)?;
        }
        let (dets, gts) = records(split);
        save_jsonl(sdir.join("detections.jsonl"), &dets)?;
        save_jsonl(sdir.join("ground_truth.jsonl"), &gts)?;
        if let Some(node_size) = graphs_node_size {
            let graphs: Vec<_> = to_graphs::<f64>(split, node_size)?.into_iter().map(|d| d.graph).collect();
            save_graphs(sdir.join("graphs.jsonl"), &graphs, Encoding::Base64F64)?;
        }
    }
    Ok(counts)
}
