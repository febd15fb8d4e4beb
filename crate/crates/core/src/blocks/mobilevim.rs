//! Local convolution, projection into the patch mixer, projection back, and
//! a fusing convolution over the concatenation with the block input.

use crate::autograd::{Tape, Var};
use crate::cost::CostReport;
use crate::error::Result;
use crate::param::impl_module;
use crate::tensor::{Scalar, Tensor};

use super::larm::Larm;
use super::layers::{eval_eager, Chw, Conv2d};

#[derive(Debug, Clone)]
pub struct MobileVim<T: Scalar> {
    /// 3x3, `C -> C`.
    pub local: Conv2d<T>,
    /// 1x1, `C -> d`.
    pub proj_in: Conv2d<T>,
    pub larm: Larm<T>,
    /// 1x1, `d -> C`.
    pub proj_out: Conv2d<T>,
    /// 3x3 over `[x, proj_out]`, `2C -> C`.
    pub fuse: Conv2d<T>,
}

impl_module!(MobileVim { local, proj_in, larm, proj_out, fuse });

/// Construction parameters of a [`MobileVim`] block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MobileVimSpec {
    pub channels: usize,
    pub dim: usize,
    pub height: usize,
    pub width: usize,
    pub patch: (usize, usize),
    pub mlp_ratio: usize,
    pub pad_to_fit: bool,
}

impl<T: Scalar> MobileVim<T> {
    pub fn new(s: MobileVimSpec) -> Result<Self> {
        let c = s.channels;
        Ok(Self {
            local: Conv2d::new(c, c, 3, 1, 1, 1, true)?,
            proj_in: Conv2d::new(c, s.dim, 1, 1, 0, 1, true)?,
            larm: Larm::new(s.dim, s.height, s.width, s.patch, s.mlp_ratio, s.pad_to_fit)?,
            proj_out: Conv2d::new(s.dim, c, 1, 1, 0, 1, true)?,
            fuse: Conv2d::new(2 * c, c, 3, 1, 1, 1, true)?,
        })
    }

    /// `9C^2 + Cd + LARM + dC + 18C^2` weights plus `C + d + C + C` biases.
    pub fn closed_form_params(&self) -> usize {
        let c = self.local.out_channels();
        let d = self.proj_in.out_channels();
        9 * c * c + c * d + self.larm.closed_form_params() + d * c + 18 * c * c + 3 * c + d
    }

    pub fn forward(&self, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        let h = self.local.forward(tape, x)?;
        let h = self.proj_in.forward(tape, h)?;
        let h = self.larm.forward(tape, h)?;
        let h = self.proj_out.forward(tape, h)?;
        let cat = tape.concat_channels(x, h)?;
        self.fuse.forward(tape, cat)
    }

    pub fn cost(&self, name: &str, input: Chw, report: &mut CostReport) -> Result<Chw> {
        let h = self.local.cost(&format!("{name}.local"), input, report)?;
        let h = self.proj_in.cost(&format!("{name}.proj_in"), h, report)?;
        let h = self.larm.cost(&format!("{name}.larm"), h, report)?;
        let h = self.proj_out.cost(&format!("{name}.proj_out"), h, report)?;
        self.fuse.cost(&format!("{name}.fuse"), [input[0] + h[0], h[1], h[2]], report)
    }
}

pub fn mobilevim_forward<T: Scalar>(x: &Tensor<T>, block: &MobileVim<T>) -> Result<Tensor<T>> {
    eval_eager(x, 4, |tape, xv| block.forward(tape, xv))
}
