//! Per-object detection graphs: a YOLO node, a RetinaNet node and a node for
//! the union of their boxes, each carrying the resized image crop.

use std::path::Path;

use tgraphx_tensor::{Real, Shape, Tensor};

use crate::detfusion::boxes::{box_iou, union_box, BBox};
use crate::detfusion::image::{crop_resize, load_image};
use crate::detfusion::records::{group_detections, load_jsonl, DetectionRecord, GroundTruthRecord, ObjectGroup};
use crate::error::{Error, Result};
use crate::graph::Graph;

pub const YOLO: usize = 0;
pub const RETINA: usize = 1;
pub const UNION: usize = 2;
pub const NODE_CLASSES: usize = 3;
pub const CLASS_NAMES: [&str; NODE_CLASSES] = ["YOLO", "Retina", "Union"];

/// Edge feature marking a message from the YOLO node (0) or the RetinaNet
/// node (1).
pub const YOLO_EDGE: f64 = 0.0;
pub const RETINA_EDGE: f64 = 1.0;

#[derive(Clone, Debug, PartialEq)]
pub struct DetectionSample<T> {
    /// Node labels hold each node's class; `graph_label` is the target and
    /// `node_values` each node's IoU with the ground truth.
    pub graph: Graph<T>,
    pub boxes: Vec<BBox>,
}

/// `(node classes, node boxes)` in node order: detectors first, union last.
pub fn detection_nodes(yolo: Option<&BBox>, retina: Option<&BBox>) -> Result<(Vec<usize>, Vec<BBox>)> {
    match (yolo, retina) {
        (Some(y), Some(r)) => Ok((vec![YOLO, RETINA, UNION], vec![*y, *r, union_box(y, r)])),
        (Some(y), None) => Ok((vec![YOLO, UNION], vec![*y, *y])),
        (None, Some(r)) => Ok((vec![RETINA, UNION], vec![*r, *r])),
        (None, None) => Err(Error::data("object has no detection")),
    }
}

/// Node class whose box best overlaps `gt`; ties go to the lower class.
pub fn best_node(classes: &[usize], ious: &[f64]) -> usize {
    let mut best = (usize::MAX, f64::NEG_INFINITY);
    for (&k, &v) in classes.iter().zip(ious) {
        if v > best.1 || (v == best.1 && k < best.0) {
            best = (k, v);
        }
    }
    best.0
}

pub fn build_detection_graph<T: Real>(
    yolo: Option<&BBox>,
    retina: Option<&BBox>,
    image: &Tensor<T>,
    gt: &BBox,
    node_size: usize,
) -> Result<DetectionSample<T>> {
    gt.validate()?;
    let (classes, boxes) = detection_nodes(yolo, retina)?;
    let ious: Vec<f64> = boxes.iter().map(|b| box_iou(b, gt)).collect::<Result<_>>()?;
    let crops: Vec<Tensor<T>> = boxes
        .iter()
        .map(|b| crop_resize(image, b, node_size, node_size))
        .collect::<Result<_>>()?;
    let node_features = Tensor::cat_n(&crops.iter().collect::<Vec<_>>())?;
    let union = classes.len() - 1;
    let edges: Vec<(usize, usize)> = (0..union).map(|i| (i, union)).collect();
    let feats: Vec<f64> = classes[..union]
        .iter()
        .map(|&k| if k == YOLO { YOLO_EDGE } else { RETINA_EDGE })
        .collect();
    let mut graph = Graph::new(node_features, edges);
    graph.edge_features = Some(Tensor::from_f64(Shape::matrix(union, 1), &feats)?);
    graph.graph_label = Some(best_node(&classes, &ious));
    graph.node_labels = Some(classes);
    graph.node_values = Some(ious);
    graph.validate()?;
    Ok(DetectionSample { graph, boxes })
}

pub fn build_group_graph<T: Real>(g: &ObjectGroup, image: &Tensor<T>, node_size: usize) -> Result<DetectionSample<T>> {
    let yolo = g.yolo.as_ref().map(DetectionRecord::bbox).transpose()?;
    let retina = g.retina.as_ref().map(DetectionRecord::bbox).transpose()?;
    let mut s = build_detection_graph(yolo.as_ref(), retina.as_ref(), image, &g.gt, node_size)?;
    s.graph.id = Some(format!("{}/{}", g.image_id, g.object_id));
    Ok(s)
}

/// Finds `<dir>/<image_id>.png` or `.ppm`.
pub fn image_path(dir: &Path, image_id: &str) -> Result<std::path::PathBuf> {
    ["png", "ppm"]
        .iter()
        .map(|ext| dir.join(format!("{image_id}.{ext}")))
        .find(|p| p.exists())
        .ok_or_else(|| Error::data(format!("no image for `{image_id}` in {}", dir.display())))
}

/// Builds every object graph of a split directory holding
/// `detections.jsonl`, `ground_truth.jsonl` and `images/`.
pub fn load_detection_split<T: Real>(dir: &Path, node_size: usize) -> Result<Vec<DetectionSample<T>>> {
    let dets: Vec<DetectionRecord> = load_jsonl(dir.join("detections.jsonl"))?;
    let gts: Vec<GroundTruthRecord> = load_jsonl(dir.join("ground_truth.jsonl"))?;
    let (groups, dropped) = group_detections(&dets, &gts)?;
    if dropped > 0 {
        log::warn!("{}: {dropped} objects without detections skipped", dir.display());
    }
    let images = dir.join("images");
    let mut out = Vec::with_capacity(groups.len());
    let mut cached: Option<(String, Tensor<T>)> = None;
    for g in &groups {
        if cached.as_ref().is_none_or(|(id, _)| id != &g.image_id) {
            cached = Some((g.image_id.clone(), load_image(image_path(&images, &g.image_id)?)?));
        }
        let img = &cached.as_ref().expect("just loaded").1;
        out.push(build_group_graph(g, img, node_size)?);
    }
    Ok(out)
}
