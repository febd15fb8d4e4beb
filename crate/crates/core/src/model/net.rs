//! Network assembly, forward evaluation and cost accounting.

use crate::autograd::{StatUpdate, Tape, Var};
use crate::blocks::layers::eval_eager;
use crate::blocks::{Chw, Conv2d, ConvBn, ConvTranspose2d, BatchNorm2d, Fusion, InvertedResidual, MobileVim, MobileVimSpec};
use crate::cost::CostReport;
use crate::error::{shape_err, Error, Result};
use crate::kernels::{conv_out_extent, conv_transpose_out_extent, Activation};
use crate::param::{apply_stat_updates, impl_module, join, Module, Param};
use crate::tensor::{Scalar, Tensor};

use super::config::{ModelConfig, StageConfig};

pub const INPUT_CHANNELS: usize = 3;
const DECONV_KERNEL: usize = 4;

/// Transposed convolution (no bias), batch norm, relu6.
#[derive(Debug, Clone)]
pub struct Deconv<T: Scalar> {
    pub deconv: ConvTranspose2d<T>,
    pub bn: BatchNorm2d<T>,
}

impl_module!(Deconv { deconv, bn });

impl<T: Scalar> Deconv<T> {
    pub fn new(in_ch: usize, out_ch: usize) -> Self {
        Self { deconv: ConvTranspose2d::new(in_ch, out_ch, DECONV_KERNEL, 2, 1, false), bn: BatchNorm2d::new(out_ch) }
    }

    pub fn forward(&self, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        let y = self.deconv.forward(tape, x)?;
        let y = self.bn.forward(tape, y)?;
        Ok(tape.activation(y, Activation::Relu6))
    }

    pub fn cost(&self, name: &str, input: Chw, report: &mut CostReport) -> Result<Chw> {
        let out = self.deconv.cost(&format!("{name}.deconv"), input, report)?;
        self.bn.cost(&format!("{name}.bn"), out, report);
        Ok(out)
    }
}

#[derive(Debug, Clone)]
pub enum Stage<T: Scalar> {
    Stem(ConvBn<T>),
    Mnv2(InvertedResidual<T>),
    MobileVim(MobileVim<T>),
    Deconv(Deconv<T>),
    /// `skip` is the index of the paired stage; `crop` the `(h, w)` the
    /// upsampled input is cut to when it overshoots the skip.
    Fusion { block: Fusion<T>, skip: usize, crop: Option<(usize, usize)> },
    Head(Conv2d<T>),
}

impl<T: Scalar> Module<T> for Stage<T> {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Param<T>)>) {
        match self {
            Stage::Stem(m) => m.collect(prefix, out),
            Stage::Mnv2(m) => m.collect(prefix, out),
            Stage::MobileVim(m) => m.collect(prefix, out),
            Stage::Deconv(m) => m.collect(prefix, out),
            Stage::Fusion { block, .. } => block.collect(prefix, out),
            Stage::Head(m) => m.collect(prefix, out),
        }
    }

    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Param<T>)>) {
        match self {
            Stage::Stem(m) => m.collect_mut(prefix, out),
            Stage::Mnv2(m) => m.collect_mut(prefix, out),
            Stage::MobileVim(m) => m.collect_mut(prefix, out),
            Stage::Deconv(m) => m.collect_mut(prefix, out),
            Stage::Fusion { block, .. } => block.collect_mut(prefix, out),
            Stage::Head(m) => m.collect_mut(prefix, out),
        }
    }
}

/// An assembled network. Parameters are named `stages.<i>.<path>`.
#[derive(Debug, Clone)]
pub struct Model<T: Scalar> {
    config: ModelConfig,
    stages: Vec<Stage<T>>,
    /// Per-sample output shape of every stage.
    shapes: Vec<Chw>,
    /// Cumulative downsampling factor after every stage.
    levels: Vec<usize>,
}

impl<T: Scalar> Module<T> for Model<T> {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Param<T>)>) {
        for (i, s) in self.stages.iter().enumerate() {
            s.collect(&join(prefix, &format!("stages.{i}")), out);
        }
    }

    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Param<T>)>) {
        for (i, s) in self.stages.iter_mut().enumerate() {
            s.collect_mut(&join(prefix, &format!("stages.{i}")), out);
        }
    }
}

fn config_err<V>(msg: impl Into<String>) -> Result<V> {
    Err(Error::Config(msg.into()))
}

impl<T: Scalar> Model<T> {
    /// Validates `config` and assembles the network with zero weights (unit
    /// scales and variances); call [`Model::init_weights`] or load a weight
    /// file before use.
    pub fn build(config: &ModelConfig) -> Result<Self> {
        let [in_h, in_w] = config.input_size;
        let hs = config.heatmap_stride;
        if in_h == 0 || in_w == 0 || config.keypoints == 0 {
            return config_err("input size and keypoint count must be positive");
        }
        if hs == 0 || in_h % hs != 0 || in_w % hs != 0 {
            return config_err(format!("input {in_h}x{in_w} is not divisible by heatmap stride {hs}"));
        }
        let mut stages = Vec::with_capacity(config.stages.len());
        let mut shapes: Vec<Chw> = Vec::with_capacity(config.stages.len());
        let mut levels: Vec<usize> = Vec::with_capacity(config.stages.len());
        let mut cur: Chw = [INPUT_CHANNELS, in_h, in_w];
        let mut level = 1usize;
        let ctx = |i: usize| config.stages[i].describe(i);

        for (i, sc) in config.stages.iter().enumerate() {
            if i > 0 && matches!(sc, StageConfig::Stem { .. }) {
                return config_err(format!("{} must be the first stage", ctx(i)));
            }
            if i == 0 && !matches!(sc, StageConfig::Stem { .. }) {
                return config_err(format!("{} must be a stem", ctx(i)));
            }
            if let Some(name) = sc.name() {
                if config.stages[..i].iter().any(|s| s.name() == Some(name)) {
                    return config_err(format!("duplicate stage name '{name}'"));
                }
            }
            let wrap = |e: Error| Error::Config(format!("{}: {e}", ctx(i)));
            let stage = match sc {
                StageConfig::Stem { channels, stride, .. } => {
                    Stage::Stem(ConvBn::new(cur[0], *channels, 3, *stride, 1, Some(Activation::Relu6)).map_err(wrap)?)
                }
                StageConfig::Mnv2 { channels, stride, expansion, .. } => {
                    Stage::Mnv2(InvertedResidual::new(cur[0], *channels, *stride, *expansion).map_err(wrap)?)
                }
                StageConfig::Mobilevim { dim, patch, mlp_ratio, .. } => {
                    let p = patch.unwrap_or(config.patch);
                    Stage::MobileVim(
                        MobileVim::new(MobileVimSpec {
                            channels: cur[0],
                            dim: *dim,
                            height: cur[1],
                            width: cur[2],
                            patch: (p[0], p[1]),
                            mlp_ratio: mlp_ratio.unwrap_or(config.mlp_ratio),
                            pad_to_fit: config.pad_to_fit,
                        })
                        .map_err(wrap)?,
                    )
                }
                StageConfig::Deconv { channels, .. } => Stage::Deconv(Deconv::new(cur[0], *channels)),
                StageConfig::Sfusion { skip, fusion, .. } => {
                    let Some(j) = config.stages[..i].iter().position(|s| s.name() == Some(skip.as_str())) else {
                        return config_err(format!("{} refers to unknown skip stage '{skip}'", ctx(i)));
                    };
                    if i == 0 || !matches!(config.stages[i - 1], StageConfig::Deconv { .. }) {
                        return config_err(format!("{} must directly follow a deconv stage", ctx(i)));
                    }
                    let (skip_shape, skip_level) = (shapes[j], levels[j]);
                    if skip_level != level {
                        return config_err(format!(
                            "{} pairs {} at 1/{level} resolution with {} at 1/{skip_level}",
                            ctx(i),
                            ctx(i - 1),
                            ctx(j)
                        ));
                    }
                    let dh = cur[1].checked_sub(skip_shape[1]);
                    let dw = cur[2].checked_sub(skip_shape[2]);
                    let crop = match (dh, dw) {
                        (Some(0), Some(0)) => None,
                        (Some(a), Some(b)) if config.pad_to_fit && a <= 1 && b <= 1 => Some((skip_shape[1], skip_shape[2])),
                        _ => {
                            return config_err(format!(
                                "{}: {} output {}x{} does not match {} output {}x{}",
                                ctx(i),
                                ctx(i - 1),
                                cur[1],
                                cur[2],
                                ctx(j),
                                skip_shape[1],
                                skip_shape[2]
                            ))
                        }
                    };
                    let fcfg = fusion.unwrap_or(config.fusion);
                    let block = Fusion::new(fcfg, cur[0], skip_shape[0], cur[0]).map_err(wrap)?;
                    if let Some((h, w)) = crop {
                        cur = [cur[0], h, w];
                    }
                    Stage::Fusion { block, skip: j, crop }
                }
                StageConfig::Head { .. } => {
                    if i + 1 != config.stages.len() {
                        return config_err(format!("{} must be the last stage", ctx(i)));
                    }
                    Stage::Head(Conv2d::new(cur[0], config.keypoints, 1, 1, 0, 1, true).map_err(wrap)?)
                }
            };
            // shape and level bookkeeping
            let mut report = CostReport::default();
            let next = match &stage {
                Stage::Fusion { block, skip, .. } => block.cost("", cur, shapes[*skip], &mut report),
                other => Self::stage_cost(other, "", cur, &mut report),
            }
            .map_err(wrap)?;
            level = match sc {
                StageConfig::Stem { stride, .. } | StageConfig::Mnv2 { stride, .. } => level * stride,
                StageConfig::Deconv { .. } => {
                    if level % 2 != 0 {
                        return config_err(format!("{} upsamples beyond the input resolution", ctx(i)));
                    }
                    level / 2
                }
                _ => level,
            };
            cur = next;
            stages.push(stage);
            shapes.push(cur);
            levels.push(level);
        }

        if !matches!(config.stages.last(), Some(StageConfig::Head { .. })) {
            return config_err("the last stage must be a head");
        }
        if level != hs {
            return config_err(format!("head runs at 1/{level} resolution, heatmap stride is {hs}"));
        }
        if cur[1..] != config.heatmap_size() {
            return config_err(format!(
                "head emits {}x{} heatmaps, expected {}x{}",
                cur[1],
                cur[2],
                config.heatmap_size()[0],
                config.heatmap_size()[1]
            ));
        }
        Ok(Self { config: config.clone(), stages, shapes, levels })
    }

    /// Builds and initializes with [`crate::init::init_params`].
    pub fn with_seed(config: &ModelConfig, seed: u64) -> Result<Self> {
        let mut m = Self::build(config)?;
        m.init_weights(seed);
        Ok(m)
    }

    pub fn init_weights(&mut self, seed: u64) {
        crate::init::init_params(self, seed);
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn stages(&self) -> &[Stage<T>] {
        &self.stages
    }

    pub fn stage_shapes(&self) -> &[Chw] {
        &self.shapes
    }

    /// Cumulative downsampling factor after every stage.
    pub fn stage_levels(&self) -> &[usize] {
        &self.levels
    }

    /// Deepest downsampling factor reached.
    pub fn max_level(&self) -> usize {
        self.levels.iter().copied().max().unwrap_or(1)
    }

    pub fn output_shape(&self) -> Chw {
        *self.shapes.last().expect("model has stages")
    }

    fn stage_cost(stage: &Stage<T>, name: &str, input: Chw, report: &mut CostReport) -> Result<Chw> {
        match stage {
            Stage::Stem(m) => m.cost(name, input, report),
            Stage::Mnv2(m) => m.cost(name, input, report),
            Stage::MobileVim(m) => m.cost(name, input, report),
            Stage::Deconv(m) => m.cost(name, input, report),
            Stage::Head(m) => m.cost(name, input, report),
            Stage::Fusion { .. } => unreachable!("fusion costs need the skip shape"),
        }
    }

    /// Per-layer parameter and MAC report for one sample.
    pub fn cost_report(&self) -> CostReport {
        let mut report = CostReport::default();
        let mut cur = [INPUT_CHANNELS, self.config.input_size[0], self.config.input_size[1]];
        for (i, stage) in self.stages.iter().enumerate() {
            let name = format!("stages.{i}");
            cur = match stage {
                Stage::Fusion { block, skip, crop } => {
                    if let Some((h, w)) = crop {
                        cur = [cur[0], *h, *w];
                    }
                    block.cost(&name, cur, self.shapes[*skip], &mut report)
                }
                other => Self::stage_cost(other, &name, cur, &mut report),
            }
            .expect("shapes were validated at build time");
        }
        report
    }

    /// Trainable scalar count, including biases and normalization affines.
    pub fn count_params(&self) -> usize {
        self.param_count()
    }

    /// Multiply-accumulates of one forward pass at the built input size.
    pub fn count_flops(&self) -> u64 {
        self.cost_report().macs()
    }

    /// Cost report of the same architecture at another input size. The
    /// patch-mixer widths depend on resolution, so this rebuilds the graph.
    pub fn cost_at(&self, height: usize, width: usize) -> Result<CostReport> {
        Ok(Model::<T>::build(&self.config.with_input_size(height, width))?.cost_report())
    }

    /// Forward on a tape. `x` must be `B x 3 x H x W`.
    pub fn forward_tape(&self, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        let shape = tape.value(x).shape().to_vec();
        let [h, w] = self.config.input_size;
        if shape.len() != 4 || shape[1..] != [INPUT_CHANNELS, h, w] {
            return shape_err(format!("model expects B x {INPUT_CHANNELS} x {h} x {w} input, got {shape:?}"));
        }
        let mut outs: Vec<Var> = Vec::with_capacity(self.stages.len());
        let mut cur = x;
        for (i, stage) in self.stages.iter().enumerate() {
            tape.push_scope(format!("stages.{i}"));
            let r = match stage {
                Stage::Stem(m) => m.forward(tape, cur),
                Stage::Mnv2(m) => m.forward(tape, cur),
                Stage::MobileVim(m) => m.forward(tape, cur),
                Stage::Deconv(m) => m.forward(tape, cur),
                Stage::Head(m) => m.forward(tape, cur),
                Stage::Fusion { block, skip, crop } => (|| {
                    let up = match crop {
                        Some((ch, cw)) => tape.crop2d(cur, 0, 0, *ch, *cw)?,
                        None => cur,
                    };
                    block.forward(tape, up, outs[*skip])
                })(),
            };
            tape.pop_scope();
            cur = r?;
            outs.push(cur);
        }
        Ok(cur)
    }

    /// Eval-mode forward of `3 x H x W` or `B x 3 x H x W` input.
    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        eval_eager(x, 4, |tape, xv| self.forward_tape(tape, xv))
    }

    /// Folds running-statistic updates recorded by a training tape.
    pub fn apply_stat_updates(&mut self, updates: &[StatUpdate]) {
        apply_stat_updates(self, updates);
    }

    /// Copy of the parameters in another precision.
    pub fn cast<U: Scalar>(&self) -> Result<Model<U>> {
        let mut out = Model::<U>::build(&self.config)?;
        for ((_, src), (_, dst)) in self.named_params().into_iter().zip(out.named_params_mut()) {
            dst.value = src.value.cast();
        }
        Ok(out)
    }
}

/// Builds with zero weights; see [`Model::build`].
pub fn build_model<T: Scalar>(config: &ModelConfig) -> Result<Model<T>> {
    Model::build(config)
}

/// Counts multiply-accumulates of `model`'s architecture at `input_size`
/// (`[height, width]`).
pub fn count_flops<T: Scalar>(model: &Model<T>, input_size: [usize; 2]) -> Result<u64> {
    Ok(model.cost_at(input_size[0], input_size[1])?.macs())
}

pub fn count_params<T: Scalar>(model: &Model<T>) -> usize {
    model.count_params()
}

/// Spatial extent after a stride-`s` 3x3 convolution with padding 1.
pub fn downsampled_extent(n: usize, stride: usize) -> usize {
    conv_out_extent(n, 3, stride, 1).unwrap_or(0)
}

/// Spatial extent after one 4x4 stride-2 transposed convolution.
pub fn upsampled_extent(n: usize) -> usize {
    conv_transpose_out_extent(n, DECONV_KERNEL, 2, 1).unwrap_or(0)
}
