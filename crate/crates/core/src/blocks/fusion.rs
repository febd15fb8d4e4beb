//! Fusion of an upsampled feature map with the same-resolution skip feature.

use serde::{Deserialize, Serialize};

use crate::autograd::{Tape, Var};
use crate::cost::CostReport;
use crate::error::{shape_err, Error, Result};
use crate::param::impl_module;
use crate::tensor::{Scalar, Tensor};

use super::layers::{eval_eager, Chw, Conv2d};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionMode {
    /// The upsampled map passes through; the skip is ignored.
    None,
    /// Concatenation and a dense 3x3 convolution.
    Conv3x3,
    /// Concatenation, depthwise 3x3, pointwise 1x1 in `conv_groups` groups.
    DwSeparable,
    /// Concatenation, channel shuffle in `shuffle_groups`, 3x3 convolution in
    /// `conv_groups` groups.
    Sfusion,
}

fn two() -> usize {
    2
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FusionConfig {
    pub mode: FusionMode,
    #[serde(default = "two")]
    pub shuffle_groups: usize,
    #[serde(default = "two")]
    pub conv_groups: usize,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self { mode: FusionMode::Sfusion, shuffle_groups: 2, conv_groups: 2 }
    }
}

impl FusionConfig {
    pub fn new(mode: FusionMode, shuffle_groups: usize, conv_groups: usize) -> Self {
        Self { mode, shuffle_groups, conv_groups }
    }
}

#[derive(Debug, Clone)]
pub struct Fusion<T: Scalar> {
    pub config: FusionConfig,
    pub up_channels: usize,
    pub skip_channels: usize,
    /// Dense or grouped 3x3 (conv3x3, sfusion).
    pub conv: Option<Conv2d<T>>,
    /// Depthwise 3x3 (dw_separable).
    pub depthwise: Option<Conv2d<T>>,
    /// Grouped 1x1 (dw_separable).
    pub pointwise: Option<Conv2d<T>>,
}

impl_module!(Fusion { conv, depthwise, pointwise });

impl<T: Scalar> Fusion<T> {
    /// Fuses `up_channels + skip_channels` into `out_channels`. Mode `none`
    /// requires `out_channels == up_channels`.
    pub fn new(config: FusionConfig, up_channels: usize, skip_channels: usize, out_channels: usize) -> Result<Self> {
        let (n, k) = (config.shuffle_groups, config.conv_groups);
        if n == 0 || k == 0 {
            return Err(Error::InvalidArgument("fusion group counts must be at least 1".into()));
        }
        let cin = up_channels + skip_channels;
        let mut f = Self { config, up_channels, skip_channels, conv: None, depthwise: None, pointwise: None };
        match config.mode {
            FusionMode::None => {
                if out_channels != up_channels {
                    return Err(Error::InvalidArgument(format!(
                        "fusion mode none passes {up_channels} channels through but {out_channels} were requested"
                    )));
                }
            }
            FusionMode::Conv3x3 => f.conv = Some(Conv2d::new(cin, out_channels, 3, 1, 1, 1, true)?),
            FusionMode::DwSeparable => {
                Self::check_groups(cin, out_channels, k)?;
                f.depthwise = Some(Conv2d::new(cin, cin, 3, 1, 1, cin, true)?);
                f.pointwise = Some(Conv2d::new(cin, out_channels, 1, 1, 0, k, true)?);
            }
            FusionMode::Sfusion => {
                if cin % n != 0 {
                    return Err(Error::InvalidArgument(format!(
                        "shuffle groups {n} do not divide fused channel count {cin}"
                    )));
                }
                Self::check_groups(cin, out_channels, k)?;
                f.conv = Some(Conv2d::new(cin, out_channels, 3, 1, 1, k, true)?);
            }
        }
        Ok(f)
    }

    fn check_groups(cin: usize, cout: usize, k: usize) -> Result<()> {
        if cin % k != 0 || cout % k != 0 {
            return Err(Error::InvalidArgument(format!(
                "conv groups {k} must divide fused channels {cin} and output channels {cout}"
            )));
        }
        Ok(())
    }

    pub fn out_channels(&self) -> usize {
        match (&self.conv, &self.pointwise) {
            (Some(c), _) | (None, Some(c)) => c.out_channels(),
            _ => self.up_channels,
        }
    }

    pub fn forward(&self, tape: &mut Tape<T>, up: Var, skip: Var) -> Result<Var> {
        let (us, ss) = (tape.value(up).shape(), tape.value(skip).shape());
        if us.len() != 4 || ss.len() != 4 || us[2..] != ss[2..] || us[0] != ss[0] {
            return shape_err(format!("fusion inputs {us:?} and {ss:?} differ in batch or spatial extent"));
        }
        if us[1] != self.up_channels || ss[1] != self.skip_channels {
            return shape_err(format!(
                "fusion expects {} + {} channels, got {} + {}",
                self.up_channels, self.skip_channels, us[1], ss[1]
            ));
        }
        if self.config.mode == FusionMode::None {
            return Ok(up);
        }
        let cat = tape.concat_channels(up, skip)?;
        match self.config.mode {
            FusionMode::Sfusion => {
                let s = tape.channel_shuffle(cat, self.config.shuffle_groups)?;
                self.conv.as_ref().expect("sfusion conv").forward(tape, s)
            }
            FusionMode::Conv3x3 => self.conv.as_ref().expect("fusion conv").forward(tape, cat),
            FusionMode::DwSeparable => {
                let h = self.depthwise.as_ref().expect("depthwise conv").forward(tape, cat)?;
                self.pointwise.as_ref().expect("pointwise conv").forward(tape, h)
            }
            FusionMode::None => unreachable!(),
        }
    }

    pub fn cost(&self, name: &str, up: Chw, skip: Chw, report: &mut CostReport) -> Result<Chw> {
        if up[1..] != skip[1..] {
            return shape_err(format!("fusion inputs {up:?} and {skip:?} differ in spatial extent"));
        }
        let cat = [up[0] + skip[0], up[1], up[2]];
        match self.config.mode {
            FusionMode::None => Ok(up),
            FusionMode::Conv3x3 | FusionMode::Sfusion => {
                self.conv.as_ref().expect("fusion conv").cost(&format!("{name}.conv"), cat, report)
            }
            FusionMode::DwSeparable => {
                let h = self.depthwise.as_ref().expect("depthwise").cost(&format!("{name}.depthwise"), cat, report)?;
                self.pointwise.as_ref().expect("pointwise").cost(&format!("{name}.pointwise"), h, report)
            }
        }
    }

    /// Closed-form parameter count for `cin` fused channels into `cout`.
    pub fn closed_form_params(config: FusionConfig, cin: usize, cout: usize) -> usize {
        let k = config.conv_groups;
        match config.mode {
            FusionMode::None => 0,
            FusionMode::Conv3x3 => 9 * cin * cout + cout,
            FusionMode::Sfusion => 9 * (cin / k) * cout + cout,
            FusionMode::DwSeparable => 9 * cin + cin + (cin / k) * cout + cout,
        }
    }
}

/// Eager fusion of `C x H x W` (or batched) inputs.
pub fn sfusion_forward<T: Scalar>(up: &Tensor<T>, skip: &Tensor<T>, fusion: &Fusion<T>) -> Result<Tensor<T>> {
    let batched = up.ndim() == 4;
    let skip = if batched { skip.clone() } else { skip.clone().unsqueeze0() };
    eval_eager(up, 4, move |tape, u| {
        let s = tape.constant(skip);
        fusion.forward(tape, u, s)
    })
}
