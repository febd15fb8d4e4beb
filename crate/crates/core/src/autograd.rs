//! Tape-based reverse-mode differentiation.
//!
//! Every operation evaluates eagerly and appends a node holding its value,
//! its input handles and whatever context its reverse rule needs. Replaying
//! the nodes in reverse order accumulates gradients for every leaf that
//! requires them.

use std::collections::HashMap;

use crate::error::{shape_err, Error, Result};
use crate::kernels::{self, Activation, NormStats, Padding2d};
use crate::npt::{self, PatchDims};
use crate::param::{Param, ParamId};
use crate::tensor::{Scalar, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Conv2d { x: Var, w: Var, b: Option<Var>, stride: usize, padding: usize, groups: usize },
    ConvTranspose2d { x: Var, w: Var, b: Option<Var>, stride: usize, padding: usize },
    Linear { x: Var, w: Var, b: Option<Var> },
    LayerNorm { x: Var, gamma: Var, beta: Var, stats: NormStats },
    BatchNormTrain { x: Var, gamma: Var, beta: Var, stats: NormStats },
    BatchNormEval { x: Var, gamma: Var, beta: Var, mean: Var, var: Var, eps: f64 },
    Act { x: Var, kind: Activation },
    Add { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Scale { x: Var, factor: f64 },
    Concat { a: Var, b: Var, split: usize },
    Shuffle { x: Var, groups: usize },
    Npt1 { x: Var, dims: PatchDims },
    Npt2 { x: Var },
    Npt3 { x: Var, dims: PatchDims },
    Pad { x: Var, pad: Padding2d },
    Crop { x: Var, top: usize, left: usize },
    Sum { x: Var },
    Mean { x: Var },
    MaskedMse { pred: Var, target: Var, mask: Vec<f64> },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Conv2d { .. } => "conv2d",
            Op::ConvTranspose2d { .. } => "conv_transpose2d",
            Op::Linear { .. } => "linear",
            Op::LayerNorm { .. } => "layer_norm",
            Op::BatchNormTrain { .. } | Op::BatchNormEval { .. } => "batch_norm2d",
            Op::Act { kind: Activation::Gelu, .. } => "gelu",
            Op::Act { kind: Activation::Relu6, .. } => "relu6",
            Op::Add { .. } => "add",
            Op::Mul { .. } => "mul",
            Op::Scale { .. } => "scale",
            Op::Concat { .. } => "concat_channels",
            Op::Shuffle { .. } => "channel_shuffle",
            Op::Npt1 { .. } => "npt_op1",
            Op::Npt2 { .. } => "npt_op2",
            Op::Npt3 { .. } => "npt_op3",
            Op::Pad { .. } => "pad2d",
            Op::Crop { .. } => "crop2d",
            Op::Sum { .. } => "sum",
            Op::Mean { .. } => "mean",
            Op::MaskedMse { .. } => "masked_mse",
        }
    }
}

#[derive(Debug)]
struct Node<T: Scalar> {
    value: Tensor<T>,
    op: Op,
    requires_grad: bool,
    scope: String,
}

/// Batch statistics produced by a training-mode batch norm, to be folded
/// into the layer's running statistics once the step completes.
#[derive(Debug, Clone)]
pub struct StatUpdate {
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub batch_mean: Vec<f64>,
    pub batch_var: Vec<f64>,
    pub count: usize,
    pub momentum: f64,
}

/// Recorded computation trace. One tape per forward (and backward) pass.
#[derive(Debug)]
pub struct Tape<T: Scalar> {
    nodes: Vec<Node<T>>,
    params: HashMap<ParamId, Var>,
    grad_enabled: bool,
    training: bool,
    scopes: Vec<String>,
    stat_updates: Vec<StatUpdate>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    /// A tape that records gradients, with normalization in eval mode.
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            params: HashMap::new(),
            grad_enabled: true,
            training: false,
            scopes: Vec::new(),
            stat_updates: Vec::new(),
        }
    }

    /// Forward-only evaluation.
    pub fn inference() -> Self {
        Self { grad_enabled: false, ..Self::new() }
    }

    /// Gradients enabled and batch statistics used by normalization layers.
    pub fn training() -> Self {
        Self { training: true, ..Self::new() }
    }

    pub fn is_training(&self) -> bool {
        self.training
    }

    pub fn grad_enabled(&self) -> bool {
        self.grad_enabled
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn push_scope(&mut self, name: impl Into<String>) {
        self.scopes.push(name.into());
    }

    pub fn pop_scope(&mut self) {
        self.scopes.pop();
    }

    fn push(&mut self, value: Tensor<T>, op: Op, inputs: &[Var]) -> Var {
        let requires_grad = self.grad_enabled && inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node { value, op, requires_grad, scope: self.scopes.join(".") });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        let requires_grad = requires_grad && self.grad_enabled;
        self.nodes.push(Node { value, op: Op::Leaf, requires_grad, scope: self.scopes.join(".") });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    /// Leaf for a parameter; repeated calls with the same parameter return
    /// the same handle. Buffers never require gradients.
    pub fn param(&mut self, p: &Param<T>) -> Var {
        if let Some(&v) = self.params.get(&p.id()) {
            return v;
        }
        let v = self.leaf(p.value.clone(), p.is_trainable());
        self.params.insert(p.id(), v);
        v
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn take_stat_updates(&mut self) -> Vec<StatUpdate> {
        std::mem::take(&mut self.stat_updates)
    }

    pub(crate) fn record_stat_update(&mut self, update: StatUpdate) {
        self.stat_updates.push(update);
    }

    /// First node (in execution order) holding a non-finite value, described
    /// by its scope and operation.
    pub fn first_non_finite(&self) -> Option<String> {
        self.nodes.iter().enumerate().find(|(_, n)| !n.value.all_finite()).map(|(i, n)| {
            let scope = if n.scope.is_empty() { "<root>" } else { n.scope.as_str() };
            format!("{scope} ({} node #{i})", n.op.name())
        })
    }

    // ---- operations -------------------------------------------------------

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, padding: usize, groups: usize) -> Result<Var> {
        let y = kernels::conv2d(self.value(x), self.value(w), b.map(|b| self.value(b)), stride, padding, groups)?;
        let mut inputs = vec![x, w];
        inputs.extend(b);
        Ok(self.push(y, Op::Conv2d { x, w, b, stride, padding, groups }, &inputs))
    }

    pub fn conv_transpose2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, padding: usize) -> Result<Var> {
        let y = kernels::conv_transpose2d(self.value(x), self.value(w), b.map(|b| self.value(b)), stride, padding)?;
        let mut inputs = vec![x, w];
        inputs.extend(b);
        Ok(self.push(y, Op::ConvTranspose2d { x, w, b, stride, padding }, &inputs))
    }

    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let y = kernels::linear(self.value(x), self.value(w), b.map(|b| self.value(b)))?;
        let mut inputs = vec![x, w];
        inputs.extend(b);
        Ok(self.push(y, Op::Linear { x, w, b }, &inputs))
    }

    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let (y, stats) = kernels::layer_norm_forward(self.value(x), self.value(gamma), self.value(beta), eps)?;
        Ok(self.push(y, Op::LayerNorm { x, gamma, beta, stats }, &[x, gamma, beta]))
    }

    /// Batch norm in the tape's mode. In training mode the batch mean and
    /// biased variance are returned alongside the output.
    #[allow(clippy::type_complexity)]
    pub fn batch_norm2d(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running_mean: Var,
        running_var: Var,
        eps: f64,
    ) -> Result<(Var, Option<(Vec<f64>, Vec<f64>)>)> {
        if self.training {
            let (y, stats, var) = kernels::batch_norm2d_train(self.value(x), self.value(gamma), self.value(beta), eps)?;
            let mean = stats.mean.clone();
            let v = self.push(y, Op::BatchNormTrain { x, gamma, beta, stats }, &[x, gamma, beta]);
            Ok((v, Some((mean, var))))
        } else {
            let y = kernels::batch_norm2d_eval(
                self.value(x),
                self.value(gamma),
                self.value(beta),
                self.value(running_mean),
                self.value(running_var),
                eps,
            )?;
            let op = Op::BatchNormEval { x, gamma, beta, mean: running_mean, var: running_var, eps };
            Ok((self.push(y, op, &[x, gamma, beta]), None))
        }
    }

    pub fn activation(&mut self, x: Var, kind: Activation) -> Var {
        let y = kernels::activation(self.value(x), kind);
        self.push(y, Op::Act { x, kind }, &[x])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = self.value(a).zip_map(self.value(b), |p, q| T::cast(p.as_f64() + q.as_f64()))?;
        Ok(self.push(y, Op::Add { a, b }, &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = self.value(a).zip_map(self.value(b), |p, q| T::cast(p.as_f64() * q.as_f64()))?;
        Ok(self.push(y, Op::Mul { a, b }, &[a, b]))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let y = self.value(x).map(|v| T::cast(v.as_f64() * factor));
        self.push(y, Op::Scale { x, factor }, &[x])
    }

    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = kernels::concat_channels(self.value(a), self.value(b))?;
        let split = self.value(a).shape()[self.value(a).ndim() - 3];
        Ok(self.push(y, Op::Concat { a, b, split }, &[a, b]))
    }

    pub fn channel_shuffle(&mut self, x: Var, groups: usize) -> Result<Var> {
        let y = kernels::channel_shuffle(self.value(x), groups)?;
        Ok(self.push(y, Op::Shuffle { x, groups }, &[x]))
    }

    pub fn npt_op1(&mut self, x: Var, dims: PatchDims) -> Result<Var> {
        let y = npt::npt_op1(self.value(x), &dims)?;
        Ok(self.push(y, Op::Npt1 { x, dims }, &[x]))
    }

    pub fn npt_op2(&mut self, x: Var) -> Result<Var> {
        let y = npt::npt_op2(self.value(x))?;
        Ok(self.push(y, Op::Npt2 { x }, &[x]))
    }

    pub fn npt_op3(&mut self, x: Var, dims: PatchDims) -> Result<Var> {
        let y = npt::npt_op3(self.value(x), &dims)?;
        Ok(self.push(y, Op::Npt3 { x, dims }, &[x]))
    }

    pub fn pad2d(&mut self, x: Var, pad: Padding2d) -> Result<Var> {
        if pad.is_zero() {
            return Ok(x);
        }
        let y = kernels::pad2d(self.value(x), pad)?;
        Ok(self.push(y, Op::Pad { x, pad }, &[x]))
    }

    pub fn crop2d(&mut self, x: Var, top: usize, left: usize, height: usize, width: usize) -> Result<Var> {
        let shape = self.value(x).shape();
        let r = shape.len();
        if r >= 2 && top == 0 && left == 0 && shape[r - 2] == height && shape[r - 1] == width {
            return Ok(x);
        }
        let y = kernels::crop2d(self.value(x), top, left, height, width)?;
        Ok(self.push(y, Op::Crop { x, top, left }, &[x]))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let y = Tensor::scalar(T::cast(self.value(x).sum()));
        self.push(y, Op::Sum { x }, &[x])
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let y = Tensor::scalar(T::cast(t.sum() / t.numel().max(1) as f64));
        self.push(y, Op::Mean { x }, &[x])
    }

    /// `sum(mask[b,c] * (pred - target)^2) / numel(pred)` over an NCHW pair,
    /// with one mask weight per (batch, channel). The target is a constant.
    pub fn masked_mse(&mut self, pred: Var, target: Var, mask: &[f64]) -> Result<Var> {
        let (p, t) = (self.value(pred), self.value(target));
        if p.shape() != t.shape() {
            return shape_err(format!("prediction {:?} and target {:?} differ", p.shape(), t.shape()));
        }
        let [n, c, h, w] = p.dims4()?;
        if mask.len() != n * c {
            return shape_err(format!("mask has {} weights, expected {}", mask.len(), n * c));
        }
        let plane = h * w;
        let mut acc = 0f64;
        for (i, m) in mask.iter().enumerate() {
            if *m == 0.0 {
                continue;
            }
            let (pp, tt) = (&p.data()[i * plane..(i + 1) * plane], &t.data()[i * plane..(i + 1) * plane]);
            acc += m * pp.iter().zip(tt).map(|(a, b)| (a.as_f64() - b.as_f64()).powi(2)).sum::<f64>();
        }
        let y = Tensor::scalar(T::cast(acc / p.numel().max(1) as f64));
        Ok(self.push(y, Op::MaskedMse { pred, target, mask: mask.to_vec() }, &[pred, target]))
    }

    // ---- reverse pass -----------------------------------------------------

    /// Reverse-mode gradients of a scalar `loss` with respect to every leaf
    /// that requires them. If the loss does not depend on any such leaf the
    /// result is empty and carries a diagnostic.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let lv = self.value(loss);
        if lv.numel() != 1 {
            return shape_err(format!("loss must be a scalar, got shape {:?}", lv.shape()));
        }
        if !self.nodes[loss.0].requires_grad {
            return Ok(Gradients {
                grads: HashMap::new(),
                params: HashMap::new(),
                diagnostic: Some(format!(
                    "loss (node #{}) is not connected to any tensor that requires gradients",
                    loss.0
                )),
            });
        }

        let mut grads: Vec<Option<Tensor<T>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(lv.shape().to_vec(), T::one()));
        let mut leaf_grads = HashMap::new();

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            if let Op::Leaf = node.op {
                leaf_grads.insert(Var(i), g);
                continue;
            }
            for (input, gi) in self.reverse_rule(&node.op, &g)? {
                if !self.nodes[input.0].requires_grad {
                    continue;
                }
                match &mut grads[input.0] {
                    Some(acc) => {
                        for (a, b) in acc.data_mut().iter_mut().zip(gi.data()) {
                            *a = T::cast(a.as_f64() + b.as_f64());
                        }
                    }
                    slot @ None => *slot = Some(gi),
                }
            }
        }

        for (i, node) in self.nodes.iter().enumerate() {
            if node.requires_grad && matches!(node.op, Op::Leaf) {
                leaf_grads.entry(Var(i)).or_insert_with(|| Tensor::zeros(node.value.shape().to_vec()));
            }
        }
        Ok(Gradients { grads: leaf_grads, params: self.params.clone(), diagnostic: None })
    }

    fn reverse_rule(&self, op: &Op, g: &Tensor<T>) -> Result<Vec<(Var, Tensor<T>)>> {
        let val = |v: Var| self.value(v);
        let need = |v: Var| self.nodes[v.0].requires_grad;
        let vec_tensor = |v: Vec<f64>| Tensor::new([v.len()], v.into_iter().map(T::cast).collect());
        let mut out = Vec::new();
        match *op {
            Op::Leaf => {}
            Op::Conv2d { x, w, b, stride, padding, groups } => {
                let [_, _, h, wd] = val(x).dims4()?;
                let [_, _, kh, kw] = val(w).dims4()?;
                if need(x) {
                    out.push((x, kernels::conv2d_input_grad(g, val(w), (h, wd), stride, padding, groups)?));
                }
                if need(w) {
                    out.push((w, kernels::conv2d_weight_grad(val(x), g, (kh, kw), stride, padding, groups)?));
                }
                if let Some(b) = b.filter(|&b| need(b)) {
                    out.push((b, vec_tensor(kernels::channel_sums(g)?)?));
                }
            }
            Op::ConvTranspose2d { x, w, b, stride, padding } => {
                let [_, _, kh, kw] = val(w).dims4()?;
                if need(x) {
                    out.push((x, kernels::conv2d(g, val(w), None, stride, padding, 1)?));
                }
                if need(w) {
                    out.push((w, kernels::conv2d_weight_grad(g, val(x), (kh, kw), stride, padding, 1)?));
                }
                if let Some(b) = b.filter(|&b| need(b)) {
                    out.push((b, vec_tensor(kernels::channel_sums(g)?)?));
                }
            }
            Op::Linear { x, w, b } => {
                if need(x) {
                    out.push((x, kernels::linear_input_grad(g, val(w), val(x).shape())?));
                }
                if need(w) {
                    out.push((w, kernels::linear_weight_grad(val(x), g, val(w).shape()[0])?));
                }
                if let Some(b) = b.filter(|&b| need(b)) {
                    out.push((b, vec_tensor(kernels::last_axis_sums(g))?));
                }
            }
            Op::LayerNorm { x, gamma, beta, ref stats } => {
                let (dx, dg, db) = kernels::layer_norm_backward(val(x), g, val(gamma), stats);
                out.push((x, dx));
                out.push((gamma, vec_tensor(dg)?));
                out.push((beta, vec_tensor(db)?));
            }
            Op::BatchNormTrain { x, gamma, beta, ref stats } => {
                let (dx, dg, db) = kernels::batch_norm2d_train_backward(val(x), g, val(gamma), stats)?;
                out.push((x, dx));
                out.push((gamma, vec_tensor(dg)?));
                out.push((beta, vec_tensor(db)?));
            }
            Op::BatchNormEval { x, gamma, beta, mean, var, eps } => {
                let (dx, dg, db) =
                    kernels::batch_norm2d_eval_backward(val(x), g, val(gamma), val(mean), val(var), eps)?;
                out.push((x, dx));
                out.push((gamma, vec_tensor(dg)?));
                out.push((beta, vec_tensor(db)?));
            }
            Op::Act { x, kind } => {
                let dx = val(x).zip_map(g, |xv, gv| T::cast(gv.as_f64() * kind.derivative(xv.as_f64())))?;
                out.push((x, dx));
            }
            Op::Add { a, b } => {
                out.push((a, g.clone()));
                out.push((b, g.clone()));
            }
            Op::Mul { a, b } => {
                out.push((a, g.zip_map(val(b), |gv, bv| T::cast(gv.as_f64() * bv.as_f64()))?));
                out.push((b, g.zip_map(val(a), |gv, av| T::cast(gv.as_f64() * av.as_f64()))?));
            }
            Op::Scale { x, factor } => out.push((x, g.map(|v| T::cast(v.as_f64() * factor)))),
            Op::Concat { a, b, split } => {
                let (ga, gb) = kernels::split_channels(g, split)?;
                out.push((a, ga));
                out.push((b, gb));
            }
            Op::Shuffle { x, groups } => out.push((x, kernels::channel_unshuffle(g, groups)?)),
            Op::Npt1 { x, dims } => out.push((x, npt::npt_op1_inverse(g, &dims)?)),
            Op::Npt2 { x } => out.push((x, npt::npt_op2(g)?)),
            Op::Npt3 { x, dims } => out.push((x, npt::npt_op3_inverse(g, &dims)?)),
            Op::Pad { x, pad } => {
                let s = val(x).shape();
                let (h, w) = (s[s.len() - 2], s[s.len() - 1]);
                out.push((x, kernels::crop2d(g, pad.top, pad.left, h, w)?));
            }
            Op::Crop { x, top, left } => {
                let (src, gs) = (val(x).shape(), g.shape());
                let r = src.len();
                let pad = Padding2d {
                    top,
                    bottom: src[r - 2] - top - gs[r - 2],
                    left,
                    right: src[r - 1] - left - gs[r - 1],
                };
                out.push((x, kernels::pad2d(g, pad)?));
            }
            Op::Sum { x } => out.push((x, Tensor::full(val(x).shape().to_vec(), g.data()[0]))),
            Op::Mean { x } => {
                let n = val(x).numel().max(1) as f64;
                out.push((x, Tensor::full(val(x).shape().to_vec(), T::cast(g.data()[0].as_f64() / n))));
            }
            Op::MaskedMse { pred, target: _, ref mask } => {
                let (p, t) = (val(pred), val(self.masked_target(op)));
                let plane = p.numel() / mask.len().max(1);
                let scale = 2.0 * g.data()[0].as_f64() / p.numel().max(1) as f64;
                let data = p
                    .data()
                    .iter()
                    .zip(t.data())
                    .enumerate()
                    .map(|(i, (a, b))| T::cast(scale * mask[i / plane] * (a.as_f64() - b.as_f64())))
                    .collect();
                out.push((pred, Tensor::new(p.shape().to_vec(), data)?));
            }
        }
        Ok(out)
    }

    fn masked_target(&self, op: &Op) -> Var {
        match *op {
            Op::MaskedMse { target, .. } => target,
            _ => unreachable!("only called for masked_mse"),
        }
    }
}

/// Gradients produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients<T: Scalar> {
    grads: HashMap<Var, Tensor<T>>,
    params: HashMap<ParamId, Var>,
    diagnostic: Option<String>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(&v)
    }

    pub fn param(&self, p: &Param<T>) -> Option<&Tensor<T>> {
        self.params.get(&p.id()).and_then(|v| self.grads.get(v))
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    /// Explanation when no gradients could be produced.
    pub fn diagnostic(&self) -> Option<&str> {
        self.diagnostic.as_deref()
    }
}

/// Rejects a non-finite loss, naming the first layer that produced a
/// non-finite value.
pub fn ensure_finite_loss<T: Scalar>(tape: &Tape<T>, loss: Var) -> Result<()> {
    if tape.value(loss).all_finite() {
        return Ok(());
    }
    let culprit = tape.first_non_finite().unwrap_or_else(|| "unknown".into());
    Err(Error::Diverged(format!("first non-finite value produced by {culprit}")))
}
