//! Heatmap targets, decoding and keypoint metrics.

mod io;
mod keypoints;
mod metrics;
mod targets;

pub use io::{load_k_constants, load_records, parse_records, KeypointRecord};
pub use keypoints::KeypointSet;
pub use metrics::{coco_k_constants, oks, oks_average_precision, pckh};
pub use targets::{decode_batch, decode_heatmaps, gaussian_targets};
