//! Network building blocks. Each block has a tape-level `forward`, a shape
//! inferring `cost`, and an eager free function for one-off evaluation.

mod fusion;
mod inverted_residual;
mod larm;
pub mod layers;
mod mlp;
mod mobilevim;

pub use fusion::{sfusion_forward, Fusion, FusionConfig, FusionMode};
pub use inverted_residual::{inverted_residual_forward, InvertedResidual};
pub use larm::{larm_forward, Larm};
pub use layers::{BatchNorm2d, Chw, Conv2d, ConvBn, ConvTranspose2d, LayerNorm, Linear};
pub use mlp::{mlp_block, MlpBlock};
pub use mobilevim::{mobilevim_forward, MobileVim, MobileVimSpec};

pub use crate::kernels::channel_shuffle;
