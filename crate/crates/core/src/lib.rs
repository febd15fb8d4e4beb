//! LGM-Pose: tensor kernels, a gradient tape, the MobileViM / LARM / SFusion
//! blocks, model assembly with cost accounting, heatmap decoding and metrics,
//! and the pieces behind the `lgm-pose` command-line tool.

pub mod autograd;
pub mod bench;
pub mod blocks;
pub mod cost;
pub mod error;
pub mod gradcheck;
pub mod heatmap;
pub mod infer;
pub mod init;
pub mod kernels;
pub mod model;
pub mod npt;
pub mod param;
pub mod selftest;
pub mod tensor;
pub mod train;

pub use autograd::{Gradients, Tape, Var};
pub use error::{Error, Result, WeightFileError};
pub use npt::{npt_op1, npt_op2, npt_op3, PatchDims};
pub use param::{Module, Param, ParamKind};
pub use tensor::{DType, Scalar, Tensor};
pub use model::{Model, ModelConfig};
