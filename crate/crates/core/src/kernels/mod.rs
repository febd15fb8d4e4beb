//! Forward kernels and the backward helpers the tape uses.

mod activation;
mod conv;
mod layout;
mod linear;
mod norm;

pub use activation::{activation, Activation};
pub use conv::{conv2d, conv_out_extent, conv_transpose2d, conv_transpose_out_extent};
pub use layout::{channel_shuffle, concat_channels, crop2d, pad2d, shuffle_source, split_channels, Padding2d};
pub use linear::linear;
pub use norm::{batch_norm2d, layer_norm};

pub(crate) use conv::{channel_sums, conv2d_input_grad, conv2d_weight_grad};
pub(crate) use layout::channel_unshuffle;
pub(crate) use linear::{last_axis_sums, linear_input_grad, linear_weight_grad};
pub(crate) use norm::{
    batch_norm2d_eval, batch_norm2d_eval_backward, batch_norm2d_train, batch_norm2d_train_backward,
    layer_norm_backward, layer_norm_forward, update_running_stats, NormStats,
};
