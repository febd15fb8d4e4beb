//! Ground-truth keypoint records in JSON.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::KeypointSet;

/// `{"image": ..., "keypoints": [[x, y, vis], ...], "head_size": ..., "area": ...}`.
/// A keypoint is visible when `vis > 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KeypointRecord {
    pub image: String,
    pub keypoints: Vec<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub head_size: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub area: Option<f64>,
}

impl KeypointRecord {
    pub fn keypoint_set(&self) -> KeypointSet {
        KeypointSet::with_visibility(
            self.keypoints.iter().map(|k| [k[0], k[1]]).collect(),
            self.keypoints.iter().map(|k| k[2] > 0.0).collect(),
        )
    }
}

/// Reads a single record or an array of records.
pub fn load_records(path: impl AsRef<Path>) -> Result<Vec<KeypointRecord>> {
    let text = std::fs::read_to_string(path)?;
    parse_records(&text)
}

pub fn parse_records(text: &str) -> Result<Vec<KeypointRecord>> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum OneOrMany {
        Many(Vec<KeypointRecord>),
        One(KeypointRecord),
    }
    match serde_json::from_str(text).map_err(|e| Error::Format(format!("keypoint records: {e}")))? {
        OneOrMany::Many(v) => Ok(v),
        OneOrMany::One(r) => Ok(vec![r]),
    }
}

/// Reads a JSON array of per-keypoint OKS constants.
pub fn load_k_constants(path: impl AsRef<Path>) -> Result<Vec<f64>> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Format(format!("k constants: {e}")))
}
