//! Parameterized layers shared by every block.

use crate::autograd::{StatUpdate, Tape, Var};
use crate::cost::{CostEntry, CostReport, LayerKind};
use crate::error::{shape_err, Error, Result};
use crate::kernels::{conv_out_extent, conv_transpose_out_extent, Activation};
use crate::param::{impl_module, Module, Param};
use crate::tensor::{Scalar, Tensor};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;
pub const LN_EPS: f64 = 1e-5;

/// Per-sample feature shape `[channels, height, width]`.
pub type Chw = [usize; 3];

fn shape_of(c: Chw) -> Vec<usize> {
    c.to_vec()
}

#[derive(Debug, Clone)]
pub struct Conv2d<T: Scalar> {
    pub weight: Param<T>,
    pub bias: Option<Param<T>>,
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
}

impl_module!(Conv2d { weight, bias });

impl<T: Scalar> Conv2d<T> {
    /// Zero-initialized square-kernel convolution.
    pub fn new(
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        groups: usize,
        bias: bool,
    ) -> Result<Self> {
        if groups == 0 || in_ch % groups != 0 || out_ch % groups != 0 {
            return Err(Error::InvalidArgument(format!(
                "groups {groups} must divide both {in_ch} input and {out_ch} output channels"
            )));
        }
        if stride == 0 {
            return Err(Error::InvalidArgument("stride must be at least 1".into()));
        }
        Ok(Self {
            weight: Param::weight(Tensor::zeros([out_ch, in_ch / groups, kernel, kernel])),
            bias: bias.then(|| Param::weight(Tensor::zeros([out_ch]))),
            stride,
            padding,
            groups,
        })
    }

    pub fn in_channels(&self) -> usize {
        self.weight.value.shape()[1] * self.groups
    }

    pub fn out_channels(&self) -> usize {
        self.weight.value.shape()[0]
    }

    pub fn kernel(&self) -> usize {
        self.weight.value.shape()[2]
    }

    pub fn forward(&self, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        let w = tape.param(&self.weight);
        let b = self.bias.as_ref().map(|b| tape.param(b));
        tape.conv2d(x, w, b, self.stride, self.padding, self.groups)
    }

    pub fn output_shape(&self, input: Chw) -> Result<Chw> {
        if input[0] != self.in_channels() {
            return shape_err(format!(
                "convolution expects {} input channels, got {}",
                self.in_channels(),
                input[0]
            ));
        }
        let k = self.kernel();
        Ok([
            self.out_channels(),
            conv_out_extent(input[1], k, self.stride, self.padding)?,
            conv_out_extent(input[2], k, self.stride, self.padding)?,
        ])
    }

    /// `out * (in / groups) * k * k * OH * OW`.
    pub fn cost(&self, name: &str, input: Chw, report: &mut CostReport) -> Result<Chw> {
        let out = self.output_shape(input)?;
        let k = self.kernel();
        let macs = (out[0] * (input[0] / self.groups) * k * k * out[1] * out[2]) as u64;
        report.push(CostEntry {
            name: name.to_string(),
            kind: LayerKind::Conv,
            input: shape_of(input),
            output: shape_of(out),
            params: self.param_count() as u64,
            macs,
        });
        Ok(out)
    }
}

/// Transposed convolution; the kernel is laid out `[in, out, k, k]`.
#[derive(Debug, Clone)]
pub struct ConvTranspose2d<T: Scalar> {
    pub weight: Param<T>,
    pub bias: Option<Param<T>>,
    pub stride: usize,
    pub padding: usize,
}

impl_module!(ConvTranspose2d { weight, bias });

impl<T: Scalar> ConvTranspose2d<T> {
    pub fn new(in_ch: usize, out_ch: usize, kernel: usize, stride: usize, padding: usize, bias: bool) -> Self {
        Self {
            weight: Param::weight(Tensor::zeros([in_ch, out_ch, kernel, kernel])),
            bias: bias.then(|| Param::weight(Tensor::zeros([out_ch]))),
            stride,
            padding,
        }
    }

    pub fn in_channels(&self) -> usize {
        self.weight.value.shape()[0]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.value.shape()[1]
    }

    pub fn forward(&self, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        let w = tape.param(&self.weight);
        let b = self.bias.as_ref().map(|b| tape.param(b));
        tape.conv_transpose2d(x, w, b, self.stride, self.padding)
    }

    /// `in * out * k * k * H_in * W_in`.
    pub fn cost(&self, name: &str, input: Chw, report: &mut CostReport) -> Result<Chw> {
        if input[0] != self.in_channels() {
            return shape_err(format!(
                "transposed convolution expects {} input channels, got {}",
                self.in_channels(),
                input[0]
            ));
        }
        let k = self.weight.value.shape()[2];
        let out = [
            self.out_channels(),
            conv_transpose_out_extent(input[1], k, self.stride, self.padding)?,
            conv_transpose_out_extent(input[2], k, self.stride, self.padding)?,
        ];
        report.push(CostEntry {
            name: name.to_string(),
            kind: LayerKind::ConvTranspose,
            input: shape_of(input),
            output: shape_of(out),
            params: self.param_count() as u64,
            macs: (input[0] * out[0] * k * k * input[1] * input[2]) as u64,
        });
        Ok(out)
    }
}

#[derive(Debug, Clone)]
pub struct Linear<T: Scalar> {
    pub weight: Param<T>,
    pub bias: Option<Param<T>>,
}

impl_module!(Linear { weight, bias });

impl<T: Scalar> Linear<T> {
    pub fn new(in_features: usize, out_features: usize, bias: bool) -> Self {
        Self {
            weight: Param::weight(Tensor::zeros([out_features, in_features])),
            bias: bias.then(|| Param::weight(Tensor::zeros([out_features]))),
        }
    }

    pub fn in_features(&self) -> usize {
        self.weight.value.shape()[1]
    }

    pub fn out_features(&self) -> usize {
        self.weight.value.shape()[0]
    }

    pub fn forward(&self, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        let w = tape.param(&self.weight);
        let b = self.bias.as_ref().map(|b| tape.param(b));
        tape.linear(x, w, b)
    }

    /// `rows * in * out`, where `rows` is the product of the leading axes.
    pub fn cost(&self, name: &str, input: &[usize], report: &mut CostReport) -> Result<Vec<usize>> {
        if input.last() != Some(&self.in_features()) {
            return shape_err(format!("linear expects last axis {}, got {input:?}", self.in_features()));
        }
        let rows: usize = input[..input.len() - 1].iter().product();
        let mut out = input.to_vec();
        *out.last_mut().unwrap() = self.out_features();
        report.push(CostEntry {
            name: name.to_string(),
            kind: LayerKind::Linear,
            input: input.to_vec(),
            output: out.clone(),
            params: self.param_count() as u64,
            macs: (rows * self.in_features() * self.out_features()) as u64,
        });
        Ok(out)
    }
}

/// Layer normalization over the last axis.
#[derive(Debug, Clone)]
pub struct LayerNorm<T: Scalar> {
    pub gamma: Param<T>,
    pub beta: Param<T>,
    pub eps: f64,
}

impl_module!(LayerNorm { gamma, beta });

impl<T: Scalar> LayerNorm<T> {
    pub fn new(dim: usize) -> Self {
        Self { gamma: Param::weight(Tensor::ones([dim])), beta: Param::weight(Tensor::zeros([dim])), eps: LN_EPS }
    }

    pub fn forward(&self, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        let g = tape.param(&self.gamma);
        let b = tape.param(&self.beta);
        tape.layer_norm(x, g, b, self.eps)
    }

    pub fn cost(&self, name: &str, input: &[usize], report: &mut CostReport) {
        report.push(CostEntry {
            name: name.to_string(),
            kind: LayerKind::LayerNorm,
            input: input.to_vec(),
            output: input.to_vec(),
            params: self.param_count() as u64,
            macs: 0,
        });
    }
}

/// Batch normalization with running statistics stored as buffers.
#[derive(Debug, Clone)]
pub struct BatchNorm2d<T: Scalar> {
    pub gamma: Param<T>,
    pub beta: Param<T>,
    pub running_mean: Param<T>,
    pub running_var: Param<T>,
    pub eps: f64,
    pub momentum: f64,
}

impl_module!(BatchNorm2d { gamma, beta, running_mean, running_var });

impl<T: Scalar> BatchNorm2d<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: Param::weight(Tensor::ones([channels])),
            beta: Param::weight(Tensor::zeros([channels])),
            running_mean: Param::buffer(Tensor::zeros([channels])),
            running_var: Param::buffer(Tensor::ones([channels])),
            eps: BN_EPS,
            momentum: BN_MOMENTUM,
        }
    }

    /// Batch statistics on a training tape, running statistics otherwise.
    /// Running-statistic updates are queued on the tape.
    pub fn forward(&self, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        let g = tape.param(&self.gamma);
        let b = tape.param(&self.beta);
        let rm = tape.param(&self.running_mean);
        let rv = tape.param(&self.running_var);
        let (y, batch) = tape.batch_norm2d(x, g, b, rm, rv, self.eps)?;
        if let Some((mean, var)) = batch {
            let [n, _, h, w] = tape.value(x).dims4()?;
            tape.record_stat_update(StatUpdate {
                running_mean: self.running_mean.id(),
                running_var: self.running_var.id(),
                batch_mean: mean,
                batch_var: var,
                count: n * h * w,
                momentum: self.momentum,
            });
        }
        Ok(y)
    }

    pub fn cost(&self, name: &str, input: Chw, report: &mut CostReport) {
        report.push(CostEntry {
            name: name.to_string(),
            kind: LayerKind::BatchNorm,
            input: shape_of(input),
            output: shape_of(input),
            params: self.param_count() as u64,
            macs: 0,
        });
    }
}

/// Convolution without bias, batch norm, optional activation.
#[derive(Debug, Clone)]
pub struct ConvBn<T: Scalar> {
    pub conv: Conv2d<T>,
    pub bn: BatchNorm2d<T>,
    pub act: Option<Activation>,
}

impl_module!(ConvBn { conv, bn });

impl<T: Scalar> ConvBn<T> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        groups: usize,
        act: Option<Activation>,
    ) -> Result<Self> {
        Ok(Self {
            conv: Conv2d::new(in_ch, out_ch, kernel, stride, kernel / 2, groups, false)?,
            bn: BatchNorm2d::new(out_ch),
            act,
        })
    }

    pub fn forward(&self, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        let y = self.conv.forward(tape, x)?;
        let y = self.bn.forward(tape, y)?;
        Ok(match self.act {
            Some(a) => tape.activation(y, a),
            None => y,
        })
    }

    pub fn cost(&self, name: &str, input: Chw, report: &mut CostReport) -> Result<Chw> {
        let out = self.conv.cost(&format!("{name}.conv"), input, report)?;
        self.bn.cost(&format!("{name}.bn"), out, report);
        Ok(out)
    }
}

/// Applies `body` to `x` on a forward-only tape. Accepts an unbatched input
/// of rank `rank - 1` and returns the output at the input's rank.
pub(crate) fn eval_eager<T: Scalar>(
    x: &Tensor<T>,
    rank: usize,
    body: impl FnOnce(&mut Tape<T>, Var) -> Result<Var>,
) -> Result<Tensor<T>> {
    let batched = match x.ndim() {
        r if r == rank => x.clone(),
        r if r + 1 == rank => x.clone().unsqueeze0(),
        _ => return shape_err(format!("expected a rank-{} or rank-{rank} input, got {:?}", rank - 1, x.shape())),
    };
    let mut tape = Tape::inference();
    let xv = tape.constant(batched);
    let y = body(&mut tape, xv)?;
    let out = tape.value(y).clone();
    if x.ndim() + 1 == rank {
        out.squeeze0()
    } else {
        Ok(out)
    }
}
