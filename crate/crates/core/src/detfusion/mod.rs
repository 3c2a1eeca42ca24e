//! Fusing two object detectors' boxes by classifying per-object graphs.

pub mod boxes;
pub mod graph;
pub mod image;
pub mod metrics;
pub mod records;
pub mod synth;
