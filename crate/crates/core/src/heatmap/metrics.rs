//! PCKh and object keypoint similarity.

use crate::error::{Error, Result};

use super::KeypointSet;

/// COCO per-keypoint constants `k_i = 2 sigma_i`, in the usual 17-keypoint order.
pub fn coco_k_constants() -> Vec<f64> {
    serde_json::from_str(include_str!("../../data/coco_oks_k.json")).expect("bundled constants parse")
}

fn check_pair(pred: &KeypointSet, gt: &KeypointSet) -> Result<()> {
    if pred.len() != gt.len() {
        return Err(Error::InvalidArgument(format!(
            "prediction has {} keypoints, ground truth {}",
            pred.len(),
            gt.len()
        )));
    }
    Ok(())
}

fn distance(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// Fraction of visible ground-truth keypoints whose prediction lies within
/// `alpha * head_size` (inclusive). `None` when no keypoint is visible.
pub fn pckh(pred: &KeypointSet, gt: &KeypointSet, head_size: f64, alpha: f64) -> Result<Option<f64>> {
    check_pair(pred, gt)?;
    if !(head_size > 0.0) {
        return Err(Error::InvalidArgument(format!("head size must be positive, got {head_size}")));
    }
    let threshold = alpha * head_size;
    let mut total = 0usize;
    let mut hits = 0usize;
    for ((p, g), vis) in pred.coords.iter().zip(&gt.coords).zip(&gt.visible) {
        if *vis {
            total += 1;
            if distance(*p, *g) <= threshold {
                hits += 1;
            }
        }
    }
    Ok((total > 0).then(|| hits as f64 / total as f64))
}

/// Mean over visible ground-truth keypoints of `exp(-d_i^2 / (2 area k_i^2))`.
/// `None` when no keypoint is visible.
pub fn oks(pred: &KeypointSet, gt: &KeypointSet, area: f64, k: &[f64]) -> Result<Option<f64>> {
    check_pair(pred, gt)?;
    if !(area > 0.0) {
        return Err(Error::InvalidArgument(format!("area must be positive, got {area}")));
    }
    if k.len() != gt.len() || k.iter().any(|v| !(*v > 0.0)) {
        return Err(Error::InvalidArgument(format!(
            "need {} positive k constants, got {:?}",
            gt.len(),
            k
        )));
    }
    let mut total = 0usize;
    let mut acc = 0f64;
    for (((p, g), vis), ki) in pred.coords.iter().zip(&gt.coords).zip(&gt.visible).zip(k) {
        if *vis {
            let d2 = (p[0] - g[0]).powi(2) + (p[1] - g[1]).powi(2);
            acc += (-d2 / (2.0 * area * ki * ki)).exp();
            total += 1;
        }
    }
    Ok((total > 0).then(|| acc / total as f64))
}

/// Average over OKS thresholds `0.50, 0.55, ..., 0.95` of the fraction of
/// single-instance similarities at or above the threshold.
pub fn oks_average_precision(similarities: &[f64]) -> Option<f64> {
    if similarities.is_empty() {
        return None;
    }
    let thresholds = (0..10).map(|i| 0.5 + 0.05 * i as f64);
    let per: Vec<f64> = thresholds
        .map(|t| similarities.iter().filter(|s| **s >= t - 1e-12).count() as f64 / similarities.len() as f64)
        .collect();
    Some(per.iter().sum::<f64>() / per.len() as f64)
}
