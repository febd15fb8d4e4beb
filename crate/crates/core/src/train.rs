//! Adam and toy-scale training on procedurally rendered keypoint images.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::autograd::{ensure_finite_loss, Tape};
use crate::error::{shape_err, Error, Result};
use crate::heatmap::{decode_heatmaps, gaussian_targets, pckh, KeypointSet};
use crate::model::{Model, ModelConfig, INPUT_CHANNELS};
use crate::param::Module;
use crate::tensor::{Scalar, Tensor};

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(lr: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, m: Vec::new(), v: Vec::new() }
    }

    pub fn first_moments(&self) -> &[Vec<f64>] {
        &self.m
    }

    pub fn second_moments(&self) -> &[Vec<f64>] {
        &self.v
    }
}

/// `m <- b1 m + (1-b1) g`, `v <- b2 v + (1-b2) g^2`,
/// `theta <- theta - lr * m_hat / (sqrt(v_hat) + eps)`.
///
/// Moments are allocated on the first call; later calls must pass the same
/// parameter list in the same order.
pub fn adam_step<T: Scalar>(params: &mut [&mut Tensor<T>], grads: &[&Tensor<T>], state: &mut AdamState) -> Result<()> {
    if params.len() != grads.len() {
        return shape_err(format!("{} parameters but {} gradients", params.len(), grads.len()));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.shape() != g.shape() {
            return shape_err(format!("parameter {i} has shape {:?}, gradient {:?}", p.shape(), g.shape()));
        }
    }
    if state.m.is_empty() {
        state.m = params.iter().map(|p| vec![0.0; p.numel()]).collect();
        state.v = state.m.clone();
    } else if state.m.len() != params.len() || state.m.iter().zip(params.iter()).any(|(m, p)| m.len() != p.numel()) {
        return shape_err("parameter list does not match the optimizer state");
    }
    state.step += 1;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = 1.0 - b1.powi(state.step as i32);
    let c2 = 1.0 - b2.powi(state.step as i32);
    for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut state.m).zip(&mut state.v) {
        for (((pv, gv), mv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
            let g = gv.as_f64();
            *mv = b1 * *mv + (1.0 - b1) * g;
            *vv = b2 * *vv + (1.0 - b2) * g * g;
            let update = state.lr * (*mv / c1) / ((*vv / c2).sqrt() + state.eps);
            *pv = T::cast(pv.as_f64() - update);
        }
    }
    Ok(())
}

/// Step-wise learning rate: `base`, then x0.1 from 75% and again from 90% of `total`.
pub fn learning_rate(base: f64, step: usize, total: usize) -> f64 {
    let mut lr = base;
    if step >= total * 3 / 4 {
        lr *= 0.1;
    }
    if step >= total * 9 / 10 {
        lr *= 0.1;
    }
    lr
}

/// One procedurally rendered image with its keypoints in heatmap cells.
#[derive(Debug, Clone)]
pub struct ToySample {
    pub image: Tensor<f32>,
    pub keypoints: KeypointSet,
}

#[derive(Debug, Clone)]
pub struct ToyDataset {
    pub samples: Vec<ToySample>,
    pub heat_h: usize,
    pub heat_w: usize,
    pub stride: usize,
}

impl ToyDataset {
    /// `count` images for `cfg`: a dim noise background with one Gaussian
    /// blob per keypoint, drawn in a keypoint-specific colour, at the image
    /// position of a random interior heatmap location.
    pub fn generate(cfg: &ModelConfig, count: usize, seed: u64) -> Result<Self> {
        if count == 0 {
            return Err(Error::InvalidArgument("toy dataset must be non-empty".into()));
        }
        let [h, w] = cfg.input_size;
        let [hh, hw] = cfg.heatmap_size();
        let stride = cfg.heatmap_stride as f64;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_da7a);
        let palette = |k: usize| -> [f64; 3] {
            let mut c = [0.15; 3];
            c[k % 3] = 1.0;
            if k >= 3 {
                c[(k + 1) % 3] = 0.6;
            }
            c
        };
        let blob_sigma = stride * 0.75;
        let mut samples = Vec::with_capacity(count);
        for _ in 0..count {
            let coords: Vec<[f64; 2]> = (0..cfg.keypoints)
                .map(|_| [rng.gen_range(1.5..hw as f64 - 2.5), rng.gen_range(1.5..hh as f64 - 2.5)])
                .collect();
            let mut img = vec![0f64; INPUT_CHANNELS * h * w];
            for v in img.iter_mut() {
                *v = rng.gen_range(0.0..0.1);
            }
            for (k, [x, y]) in coords.iter().enumerate() {
                let (cx, cy) = (x * stride + (stride - 1.0) / 2.0, y * stride + (stride - 1.0) / 2.0);
                let col = palette(k);
                for py in 0..h {
                    for px in 0..w {
                        let d2 = (px as f64 - cx).powi(2) + (py as f64 - cy).powi(2);
                        let a = (-d2 / (2.0 * blob_sigma * blob_sigma)).exp();
                        if a < 1e-4 {
                            continue;
                        }
                        for (c, cv) in col.iter().enumerate() {
                            let slot = &mut img[(c * h + py) * w + px];
                            *slot = (*slot + a * cv).min(1.0);
                        }
                    }
                }
            }
            let pre = cfg.preprocess;
            let data = img
                .iter()
                .enumerate()
                .map(|(i, v)| {
                    let c = i / (h * w);
                    ((v - pre.mean[c]) / pre.std[c]) as f32
                })
                .collect();
            samples.push(ToySample { image: Tensor::new([INPUT_CHANNELS, h, w], data)?, keypoints: KeypointSet::from_coords(coords) });
        }
        Ok(Self { samples, heat_h: hh, heat_w: hw, stride: cfg.heatmap_stride })
    }

    pub fn images(&self) -> Result<Tensor<f32>> {
        Tensor::stack(&self.samples.iter().map(|s| s.image.clone()).collect::<Vec<_>>())
    }

    pub fn targets(&self, sigma: f64) -> Result<Tensor<f32>> {
        let t: Result<Vec<_>> =
            self.samples.iter().map(|s| gaussian_targets(&s.keypoints, self.heat_h, self.heat_w, sigma)).collect();
        Tensor::stack(&t?)
    }

    /// One weight per (sample, keypoint): 1 if visible, else 0.
    pub fn mask(&self) -> Vec<f64> {
        self.samples
            .iter()
            .flat_map(|s| s.keypoints.visible.iter().map(|v| if *v { 1.0 } else { 0.0 }))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainOptions {
    pub steps: usize,
    pub seed: u64,
    pub samples: usize,
    pub lr: f64,
    pub sigma: f64,
    /// PCKh head size in heatmap cells; the 0.5 threshold is half of it.
    pub head_size: f64,
}

impl TrainOptions {
    pub fn new(steps: usize, seed: u64) -> Self {
        Self { steps, seed, samples: 8, lr: 1e-3, sigma: 1.0, head_size: 4.0 }
    }
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct TrainReport {
    pub steps: usize,
    pub seed: u64,
    pub samples: usize,
    pub losses: Vec<f64>,
    pub learning_rates: Vec<f64>,
    pub initial_loss: f64,
    pub final_loss: f64,
    /// Eval-mode MSE on the training set after the last step.
    pub final_eval_loss: f64,
    /// Train-set PCKh at `0.5 * head_size` after decoding, eval mode.
    pub final_pckh: Option<f64>,
    /// Fraction of visible keypoints decoded within two heatmap cells.
    pub within_two_cells: f64,
}

/// Trains `model` in place on `data` with full-batch Adam and a masked MSE
/// heatmap loss. Aborts on a non-finite loss, naming the first layer that
/// produced a non-finite value.
pub fn train_model(model: &mut Model<f32>, data: &ToyDataset, opts: &TrainOptions) -> Result<TrainReport> {
    let images = data.images()?;
    let targets = data.targets(opts.sigma)?;
    let mask = data.mask();
    let mut adam = AdamState::new(opts.lr);
    let mut losses = Vec::with_capacity(opts.steps);
    let mut rates = Vec::with_capacity(opts.steps);
    for step in 0..opts.steps {
        adam.lr = learning_rate(opts.lr, step, opts.steps);
        let mut tape = Tape::training();
        let x = tape.constant(images.clone());
        let t = tape.constant(targets.clone());
        let y = model.forward_tape(&mut tape, x)?;
        let loss = tape.masked_mse(y, t, &mask)?;
        ensure_finite_loss(&tape, loss).map_err(|e| match e {
            Error::Diverged(msg) => Error::Diverged(format!("step {step}: {msg}")),
            other => other,
        })?;
        losses.push(tape.value(loss).data()[0] as f64);
        rates.push(adam.lr);
        let grads = tape.backward(loss)?;
        let grad_list: Vec<Tensor<f32>> = model
            .named_params()
            .into_iter()
            .filter(|(_, p)| p.is_trainable())
            .map(|(_, p)| grads.param(p).cloned().unwrap_or_else(|| Tensor::zeros(p.value.shape().to_vec())))
            .collect();
        let updates = tape.take_stat_updates();
        drop(tape);
        {
            let mut params: Vec<&mut Tensor<f32>> = model
                .named_params_mut()
                .into_iter()
                .filter(|(_, p)| p.is_trainable())
                .map(|(_, p)| &mut p.value)
                .collect();
            let grad_refs: Vec<&Tensor<f32>> = grad_list.iter().collect();
            adam_step(&mut params, &grad_refs, &mut adam)?;
        }
        model.apply_stat_updates(&updates);
    }

    let pred = model.forward(&images)?;
    let mut tape = Tape::<f32>::inference();
    let (pv, tv) = (tape.constant(pred.clone()), tape.constant(targets));
    let eval_loss = tape.masked_mse(pv, tv, &mask)?;
    let final_eval_loss = tape.value(eval_loss).data()[0] as f64;

    let (mut hits, mut visible) = (0usize, 0usize);
    let (mut pck_sum, mut pck_n) = (0f64, 0usize);
    for (i, s) in data.samples.iter().enumerate() {
        let decoded = decode_heatmaps(&pred.index0(i)?)?;
        for ((p, g), vis) in decoded.coords.iter().zip(&s.keypoints.coords).zip(&s.keypoints.visible) {
            if *vis {
                visible += 1;
                if ((p[0] - g[0]).powi(2) + (p[1] - g[1]).powi(2)).sqrt() <= 2.0 {
                    hits += 1;
                }
            }
        }
        if let Some(v) = pckh(&decoded, &s.keypoints, opts.head_size, 0.5)? {
            pck_sum += v * s.keypoints.visible_count() as f64;
            pck_n += s.keypoints.visible_count();
        }
    }
    Ok(TrainReport {
        steps: opts.steps,
        seed: opts.seed,
        samples: data.samples.len(),
        initial_loss: losses.first().copied().unwrap_or(f64::NAN),
        final_loss: losses.last().copied().unwrap_or(f64::NAN),
        losses,
        learning_rates: rates,
        final_eval_loss,
        final_pckh: (pck_n > 0).then(|| pck_sum / pck_n as f64),
        within_two_cells: if visible > 0 { hits as f64 / visible as f64 } else { 0.0 },
    })
}

/// Builds a model from `cfg` seeded with `opts.seed`, renders the toy set
/// from the same seed and trains.
pub fn train_toy(cfg: &ModelConfig, opts: &TrainOptions) -> Result<(Model<f32>, TrainReport)> {
    let mut model = Model::with_seed(cfg, opts.seed)?;
    let data = ToyDataset::generate(cfg, opts.samples, opts.seed)?;
    let report = train_model(&mut model, &data, opts)?;
    Ok((model, report))
}
