//! Residual two-layer perceptron over the last axis.

use crate::autograd::{Tape, Var};
use crate::cost::CostReport;
use crate::error::{Error, Result};
use crate::kernels::Activation;
use crate::param::impl_module;
use crate::tensor::{Scalar, Tensor};

use super::layers::{LayerNorm, Linear};

/// `y = x + fc2(gelu(fc1(norm(x))))` with `fc1: L -> rL` and `fc2: rL -> L`.
#[derive(Debug, Clone)]
pub struct MlpBlock<T: Scalar> {
    pub norm: LayerNorm<T>,
    pub fc1: Linear<T>,
    pub fc2: Linear<T>,
}

impl_module!(MlpBlock { norm, fc1, fc2 });

impl<T: Scalar> MlpBlock<T> {
    pub fn new(dim: usize, ratio: usize) -> Result<Self> {
        if ratio == 0 {
            return Err(Error::InvalidArgument("expansion ratio must be at least 1".into()));
        }
        let hidden = dim * ratio;
        Ok(Self { norm: LayerNorm::new(dim), fc1: Linear::new(dim, hidden, true), fc2: Linear::new(hidden, dim, true) })
    }

    pub fn dim(&self) -> usize {
        self.fc1.in_features()
    }

    pub fn hidden(&self) -> usize {
        self.fc1.out_features()
    }

    /// `2L + 2 L hidden + hidden + L`.
    pub fn closed_form_params(dim: usize, ratio: usize) -> usize {
        let hidden = dim * ratio;
        2 * dim + dim * hidden + hidden + hidden * dim + dim
    }

    pub fn forward(&self, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        let h = self.norm.forward(tape, x)?;
        let h = self.fc1.forward(tape, h)?;
        let h = tape.activation(h, Activation::Gelu);
        let h = self.fc2.forward(tape, h)?;
        tape.add(x, h)
    }

    pub fn cost(&self, name: &str, input: &[usize], report: &mut CostReport) -> Result<Vec<usize>> {
        self.norm.cost(&format!("{name}.norm"), input, report);
        let h = self.fc1.cost(&format!("{name}.fc1"), input, report)?;
        self.fc2.cost(&format!("{name}.fc2"), &h, report)
    }
}

/// Eager evaluation of an [`MlpBlock`] on any `... x L` tensor.
pub fn mlp_block<T: Scalar>(x: &Tensor<T>, block: &MlpBlock<T>) -> Result<Tensor<T>> {
    let mut tape = Tape::inference();
    let xv = tape.constant(x.clone());
    let y = block.forward(&mut tape, xv)?;
    Ok(tape.value(y).clone())
}
