//! Declarative model description, read from JSON.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::blocks::FusionConfig;
use crate::error::{Error, Result};

fn default_heatmap_stride() -> usize {
    4
}
fn default_patch() -> [usize; 2] {
    [2, 2]
}
fn default_ratio() -> usize {
    2
}
fn default_stem_stride() -> usize {
    2
}
fn default_one() -> usize {
    1
}
fn default_expansion() -> usize {
    6
}

/// Per-channel input normalization `(x / 255 - mean) / std`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Preprocess {
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

impl Default for Preprocess {
    fn default() -> Self {
        Self { mean: [0.5; 3], std: [0.5; 3] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum StageConfig {
    /// 3x3 convolution from the RGB input, batch norm, relu6.
    Stem {
        channels: usize,
        #[serde(default = "default_stem_stride")]
        stride: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        name: Option<String>,
    },
    /// Inverted residual block.
    Mnv2 {
        channels: usize,
        #[serde(default = "default_one")]
        stride: usize,
        #[serde(default = "default_expansion")]
        expansion: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        name: Option<String>,
    },
    /// Channel-preserving global-modeling block with patch-mixer width `dim`.
    Mobilevim {
        dim: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        patch: Option<[usize; 2]>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        mlp_ratio: Option<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        name: Option<String>,
    },
    /// 4x4 stride-2 transposed convolution, batch norm, relu6.
    Deconv {
        channels: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        name: Option<String>,
    },
    /// Fuses the previous output with the named earlier stage.
    Sfusion {
        skip: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        fusion: Option<FusionConfig>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        name: Option<String>,
    },
    /// 1x1 convolution to one heatmap per keypoint.
    Head {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        name: Option<String>,
    },
}

impl StageConfig {
    pub fn kind(&self) -> &'static str {
        match self {
            StageConfig::Stem { .. } => "stem",
            StageConfig::Mnv2 { .. } => "mnv2",
            StageConfig::Mobilevim { .. } => "mobilevim",
            StageConfig::Deconv { .. } => "deconv",
            StageConfig::Sfusion { .. } => "sfusion",
            StageConfig::Head { .. } => "head",
        }
    }

    pub fn name(&self) -> Option<&str> {
        match self {
            StageConfig::Stem { name, .. }
            | StageConfig::Mnv2 { name, .. }
            | StageConfig::Mobilevim { name, .. }
            | StageConfig::Deconv { name, .. }
            | StageConfig::Sfusion { name, .. }
            | StageConfig::Head { name } => name.as_deref(),
        }
    }

    /// `stage 3 'stage_b' (mnv2)`.
    pub fn describe(&self, index: usize) -> String {
        match self.name() {
            Some(n) => format!("stage {index} '{n}' ({})", self.kind()),
            None => format!("stage {index} ({})", self.kind()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    /// `[height, width]` of the network input.
    pub input_size: [usize; 2],
    pub keypoints: usize,
    #[serde(default = "default_heatmap_stride")]
    pub heatmap_stride: usize,
    #[serde(default)]
    pub fusion: FusionConfig,
    /// Default `[h, w]` patch of every patch mixer.
    #[serde(default = "default_patch")]
    pub patch: [usize; 2],
    #[serde(default = "default_ratio")]
    pub mlp_ratio: usize,
    /// Zero-pad feature maps to the next patch multiple inside patch mixers,
    /// and crop an upsampled map that overshoots its skip by one row or column.
    #[serde(default)]
    pub pad_to_fit: bool,
    #[serde(default)]
    pub preprocess: Preprocess,
    pub stages: Vec<StageConfig>,
}

impl ModelConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref())?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Same architecture at another input resolution.
    pub fn with_input_size(&self, height: usize, width: usize) -> Self {
        Self { input_size: [height, width], ..self.clone() }
    }

    pub fn with_fusion(&self, fusion: FusionConfig) -> Self {
        Self { fusion, ..self.clone() }
    }

    pub fn heatmap_size(&self) -> [usize; 2] {
        [self.input_size[0] / self.heatmap_stride, self.input_size[1] / self.heatmap_stride]
    }

    /// The shipped reference architecture for 17 keypoints at 256x192.
    pub fn reference() -> Self {
        Self::from_json(include_str!("../../../../configs/reference.json")).expect("bundled reference config parses")
    }

    /// The small architecture used for toy training.
    pub fn toy() -> Self {
        Self::from_json(include_str!("../../../../configs/toy.json")).expect("bundled toy config parses")
    }
}
