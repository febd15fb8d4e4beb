use serde::{Deserialize, Serialize};

/// Keypoint coordinates `(x, y)` in heatmap cells, with confidences and
/// visibility flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeypointSet {
    pub coords: Vec<[f64; 2]>,
    pub scores: Vec<f64>,
    pub visible: Vec<bool>,
}

impl KeypointSet {
    /// All keypoints visible with score 1.
    pub fn from_coords(coords: Vec<[f64; 2]>) -> Self {
        let n = coords.len();
        Self { coords, scores: vec![1.0; n], visible: vec![true; n] }
    }

    pub fn with_visibility(coords: Vec<[f64; 2]>, visible: Vec<bool>) -> Self {
        let n = coords.len();
        assert_eq!(n, visible.len(), "one visibility flag per keypoint");
        Self { coords, scores: vec![1.0; n], visible }
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn visible_count(&self) -> usize {
        self.visible.iter().filter(|v| **v).count()
    }

    /// Multiplies every coordinate by `(sx, sy)`.
    pub fn scaled(&self, sx: f64, sy: f64) -> Self {
        Self { coords: self.coords.iter().map(|[x, y]| [x * sx, y * sy]).collect(), ..self.clone() }
    }

    pub fn translated(&self, dx: f64, dy: f64) -> Self {
        Self { coords: self.coords.iter().map(|[x, y]| [x + dx, y + dy]).collect(), ..self.clone() }
    }
}
