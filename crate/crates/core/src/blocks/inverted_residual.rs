//! Expand / depthwise / project block with a conditional identity skip.

use crate::autograd::{Tape, Var};
use crate::cost::CostReport;
use crate::error::{Error, Result};
use crate::kernels::Activation;
use crate::param::impl_module;
use crate::tensor::{Scalar, Tensor};

use super::layers::{eval_eager, Chw, ConvBn};

#[derive(Debug, Clone)]
pub struct InvertedResidual<T: Scalar> {
    /// Absent when the expansion factor is 1.
    pub expand: Option<ConvBn<T>>,
    pub depthwise: ConvBn<T>,
    pub project: ConvBn<T>,
    pub stride: usize,
    pub residual: bool,
}

impl_module!(InvertedResidual { expand, depthwise, project });

impl<T: Scalar> InvertedResidual<T> {
    pub fn new(in_ch: usize, out_ch: usize, stride: usize, expansion: usize) -> Result<Self> {
        if stride != 1 && stride != 2 {
            return Err(Error::InvalidArgument(format!("inverted residual stride must be 1 or 2, got {stride}")));
        }
        if expansion == 0 {
            return Err(Error::InvalidArgument("expansion factor must be at least 1".into()));
        }
        let hidden = in_ch * expansion;
        let expand = if expansion == 1 {
            None
        } else {
            Some(ConvBn::new(in_ch, hidden, 1, 1, 1, Some(Activation::Relu6))?)
        };
        Ok(Self {
            expand,
            depthwise: ConvBn::new(hidden, hidden, 3, stride, hidden, Some(Activation::Relu6))?,
            project: ConvBn::new(hidden, out_ch, 1, 1, 1, None)?,
            stride,
            residual: stride == 1 && in_ch == out_ch,
        })
    }

    pub fn out_channels(&self) -> usize {
        self.project.conv.out_channels()
    }

    pub fn forward(&self, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        let mut h = x;
        if let Some(e) = &self.expand {
            h = e.forward(tape, h)?;
        }
        let h = self.depthwise.forward(tape, h)?;
        let h = self.project.forward(tape, h)?;
        if self.residual {
            tape.add(x, h)
        } else {
            Ok(h)
        }
    }

    pub fn cost(&self, name: &str, input: Chw, report: &mut CostReport) -> Result<Chw> {
        let mut h = input;
        if let Some(e) = &self.expand {
            h = e.cost(&format!("{name}.expand"), h, report)?;
        }
        let h = self.depthwise.cost(&format!("{name}.depthwise"), h, report)?;
        self.project.cost(&format!("{name}.project"), h, report)
    }

    /// Weights of the three convolutions plus two affine terms per normalized channel.
    pub fn closed_form_params(in_ch: usize, out_ch: usize, expansion: usize) -> usize {
        let hidden = in_ch * expansion;
        let expand = if expansion == 1 { 0 } else { in_ch * hidden + 2 * hidden };
        expand + 9 * hidden + 2 * hidden + hidden * out_ch + 2 * out_ch
    }
}

pub fn inverted_residual_forward<T: Scalar>(x: &Tensor<T>, block: &InvertedResidual<T>) -> Result<Tensor<T>> {
    eval_eager(x, 4, |tape, xv| block.forward(tape, xv))
}
