//! Constructed keypoint configurations with metric values worked out by hand.

use lgm_core::heatmap::KeypointSet;

fn set(coords: &[[f64; 2]]) -> KeypointSet {
    KeypointSet::from_coords(coords.to_vec())
}

fn square() -> KeypointSet {
    set(&[[0.0, 0.0], [10.0, 0.0], [0.0, 10.0], [10.0, 10.0]])
}

/// `(label, prediction, ground truth, head size, expected PCKh@0.5)`.
pub fn pckh_cases() -> Vec<(&'static str, KeypointSet, KeypointSet, f64, Option<f64>)> {
    let gt = square();
    vec![
        ("exact", gt.clone(), gt.clone(), 8.0, Some(1.0)),
        // one error exactly at the threshold (inclusive), one beyond
        ("threshold", set(&[[4.0, 0.0], [10.0, 5.0], [0.0, 10.0], [10.0, 10.0]]), gt.clone(), 8.0, Some(0.75)),
        // 3-4-5 offsets against 0.5 * 10
        ("pythagorean", set(&[[3.0, 4.0], [13.0, 4.0], [3.0, 14.0], [20.0, 20.0]]), gt.clone(), 10.0, Some(0.75)),
        (
            "invisible_excluded",
            set(&[[0.0, 0.0], [99.0, 0.0], [99.0, 0.0], [30.0, 30.0]]),
            KeypointSet::with_visibility(gt.coords.clone(), vec![true, false, false, true]),
            8.0,
            Some(0.5),
        ),
        ("none_visible", gt.clone(), KeypointSet::with_visibility(gt.coords.clone(), vec![false; 4]), 8.0, None),
    ]
}

/// `(label, prediction, ground truth, area, k, expected OKS)`.
pub fn oks_cases() -> Vec<(&'static str, KeypointSet, KeypointSet, f64, Vec<f64>, Option<f64>)> {
    let gt = set(&[[10.0, 10.0], [20.0, 10.0]]);
    let k = vec![0.1, 0.2];
    let hidden_first = KeypointSet::with_visibility(gt.coords.clone(), vec![false, true]);
    vec![
        ("exact", gt.clone(), gt.clone(), 100.0, k.clone(), Some(1.0)),
        // d^2 = 1 on the first point: exp(-1 / (2 * 100 * 0.01))
        ("unit_offset", set(&[[11.0, 10.0], [20.0, 10.0]]), gt.clone(), 100.0, k.clone(), Some(((-0.5f64).exp() + 1.0) / 2.0)),
        // d^2 = 25 on both; the wider constant decays slower
        (
            "both_offset",
            set(&[[13.0, 14.0], [17.0, 14.0]]),
            gt.clone(),
            100.0,
            k.clone(),
            Some(((-12.5f64).exp() + (-3.125f64).exp()) / 2.0),
        ),
        // second keypoint only, d^2 = 8, area 50: exp(-8 / (2 * 50 * 0.04))
        ("one_visible", set(&[[0.0, 0.0], [22.0, 12.0]]), hidden_first, 50.0, k.clone(), Some((-2.0f64).exp())),
        ("none_visible", gt.clone(), KeypointSet::with_visibility(gt.coords.clone(), vec![false, false]), 50.0, k, None),
    ]
}
