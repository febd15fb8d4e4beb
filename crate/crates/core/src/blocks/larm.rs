//! Patch-mixing module: an MLP across patches followed by an MLP inside
//! each patch, bracketed by the NPT permutations.

use crate::autograd::{Tape, Var};
use crate::cost::CostReport;
use crate::error::{shape_err, Result};
use crate::kernels::Padding2d;
use crate::npt::PatchDims;
use crate::param::impl_module;
use crate::tensor::{Scalar, Tensor};

use super::layers::{eval_eager, Chw};
use super::mlp::MlpBlock;

#[derive(Debug, Clone)]
pub struct Larm<T: Scalar> {
    /// Mixes the `N` (patch) axis.
    pub inter: MlpBlock<T>,
    /// Mixes the `P` (pixel-in-patch) axis.
    pub intra: MlpBlock<T>,
    pub dims: PatchDims,
    /// Zero padding applied before unfolding; removed after folding.
    pub pad: Padding2d,
    pub height: usize,
    pub width: usize,
}

impl_module!(Larm { inter, intra });

impl<T: Scalar> Larm<T> {
    /// Built for a fixed `height x width` feature map, since the inter-patch
    /// MLP width is the patch count. With `pad_to_fit` the map is zero-padded
    /// symmetrically to the next patch multiple; otherwise a non-dividing
    /// patch size is rejected.
    pub fn new(
        channels: usize,
        height: usize,
        width: usize,
        patch: (usize, usize),
        ratio: usize,
        pad_to_fit: bool,
    ) -> Result<Self> {
        let (dims, pad) = if pad_to_fit {
            PatchDims::padded(height, width, channels, patch.0, patch.1)?
        } else {
            (PatchDims::new(height, width, channels, patch.0, patch.1)?, Padding2d::default())
        };
        Ok(Self {
            inter: MlpBlock::new(dims.patch_count(), ratio)?,
            intra: MlpBlock::new(dims.patch_pixels(), ratio)?,
            dims,
            pad,
            height,
            width,
        })
    }

    pub fn forward(&self, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        let shape = tape.value(x).shape().to_vec();
        if shape.len() != 4 || shape[1..] != [self.dims.channels, self.height, self.width] {
            return shape_err(format!(
                "patch mixer built for {}x{}x{} features, got {shape:?}",
                self.dims.channels, self.height, self.width
            ));
        }
        let padded = tape.pad2d(x, self.pad)?;
        let u = tape.npt_op1(padded, self.dims)?;
        let u = self.inter.forward(tape, u)?;
        let g = tape.npt_op2(u)?;
        let g = self.intra.forward(tape, g)?;
        let y = tape.npt_op3(g, self.dims)?;
        tape.crop2d(y, self.pad.top, self.pad.left, self.height, self.width)
    }

    pub fn cost(&self, name: &str, input: Chw, report: &mut CostReport) -> Result<Chw> {
        let d = &self.dims;
        let (p, n, c) = (d.patch_pixels(), d.patch_count(), d.channels);
        self.inter.cost(&format!("{name}.inter"), &[p, c, n], report)?;
        self.intra.cost(&format!("{name}.intra"), &[n, c, p], report)?;
        Ok(input)
    }

    pub fn closed_form_params(&self) -> usize {
        MlpBlock::<T>::closed_form_params(self.inter.dim(), self.inter.hidden() / self.inter.dim().max(1))
            + MlpBlock::<T>::closed_form_params(self.intra.dim(), self.intra.hidden() / self.intra.dim().max(1))
    }
}

/// Eager evaluation on `d x H x W` or `B x d x H x W`.
pub fn larm_forward<T: Scalar>(x: &Tensor<T>, larm: &Larm<T>) -> Result<Tensor<T>> {
    eval_eager(x, 4, |tape, xv| larm.forward(tape, xv))
}
