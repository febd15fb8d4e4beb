//! Gaussian target rendering and argmax decoding with quarter-cell refinement.

use crate::error::{shape_err, Error, Result};
use crate::tensor::{Scalar, Tensor};

use super::KeypointSet;

/// Renders one channel per keypoint: `exp(-((x-x0)^2 + (y-y0)^2) / (2 sigma^2))`
/// around the rounded keypoint `(x0, y0)`, truncated to the
/// `(2 ceil(3 sigma) + 1)^2` window. Invisible keypoints and keypoints whose
/// rounded position falls outside the map give all-zero channels.
pub fn gaussian_targets<T: Scalar>(kps: &KeypointSet, heat_h: usize, heat_w: usize, sigma: f64) -> Result<Tensor<T>> {
    if !(sigma > 0.0) {
        return Err(Error::InvalidArgument(format!("sigma must be positive, got {sigma}")));
    }
    let radius = (3.0 * sigma).ceil() as i64;
    let plane = heat_h * heat_w;
    let mut data = vec![T::zero(); kps.len() * plane];
    for (k, ([x, y], vis)) in kps.coords.iter().zip(&kps.visible).enumerate() {
        if !vis || !x.is_finite() || !y.is_finite() {
            continue;
        }
        let (cx, cy) = (x.round() as i64, y.round() as i64);
        if cx < 0 || cy < 0 || cx >= heat_w as i64 || cy >= heat_h as i64 {
            continue;
        }
        let out = &mut data[k * plane..(k + 1) * plane];
        for yy in (cy - radius).max(0)..=(cy + radius).min(heat_h as i64 - 1) {
            for xx in (cx - radius).max(0)..=(cx + radius).min(heat_w as i64 - 1) {
                let d2 = ((xx - cx).pow(2) + (yy - cy).pow(2)) as f64;
                out[yy as usize * heat_w + xx as usize] = T::cast((-d2 / (2.0 * sigma * sigma)).exp());
            }
        }
    }
    Tensor::new([kps.len(), heat_h, heat_w], data)
}

/// Per-channel argmax (first maximum in row-major order), shifted by 0.25
/// cells toward the strictly larger horizontal and vertical neighbor when
/// both neighbors exist. The score is the peak value clamped to `[0, 1]`.
pub fn decode_heatmaps<T: Scalar>(hm: &Tensor<T>) -> Result<KeypointSet> {
    let [c, h, w] = match *hm.shape() {
        [c, h, w] => [c, h, w],
        _ => return shape_err(format!("expected C x H x W heatmaps, got {:?}", hm.shape())),
    };
    if h == 0 || w == 0 {
        return shape_err("heatmaps must be non-empty");
    }
    let plane = h * w;
    let mut coords = Vec::with_capacity(c);
    let mut scores = Vec::with_capacity(c);
    for ch in hm.data().chunks(plane).take(c) {
        let mut best = 0;
        for (i, v) in ch.iter().enumerate() {
            if *v > ch[best] {
                best = i;
            }
        }
        let (py, px) = (best / w, best % w);
        let at = |y: usize, x: usize| ch[y * w + x].as_f64();
        let mut x = px as f64;
        let mut y = py as f64;
        if px > 0 && px + 1 < w {
            let (l, r) = (at(py, px - 1), at(py, px + 1));
            x += if r > l { 0.25 } else if l > r { -0.25 } else { 0.0 };
        }
        if py > 0 && py + 1 < h {
            let (u, d) = (at(py - 1, px), at(py + 1, px));
            y += if d > u { 0.25 } else if u > d { -0.25 } else { 0.0 };
        }
        coords.push([x, y]);
        let s = ch[best].as_f64();
        scores.push(if s.is_nan() { 0.0 } else { s.clamp(0.0, 1.0) });
    }
    Ok(KeypointSet { visible: vec![true; c], coords, scores })
}

/// Decodes every item of a `B x C x H x W` batch.
pub fn decode_batch<T: Scalar>(hm: &Tensor<T>) -> Result<Vec<KeypointSet>> {
    let [b, ..] = hm.dims4()?;
    (0..b).map(|i| decode_heatmaps(&hm.index0(i)?)).collect()
}
