//! Randomized instance generators for the gradient and kernel-oracle suites.
//! Each function draws one instance and returns its error.

use lgm_core::blocks::{
    Fusion, FusionConfig, FusionMode, InvertedResidual, Larm, MlpBlock, MobileVim, MobileVimSpec,
};
use lgm_core::init::init_params;
use lgm_core::kernels::{self, Activation, Padding2d};
use lgm_core::{Module, PatchDims, Result, Tensor};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::grad::{check, NoParams};
use super::{channel_moments, max_abs_diff_f32, rand_tensor};

pub type Target = (&'static str, fn(&mut ChaCha8Rng) -> Result<f64>);

fn rt(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    rand_tensor(rng, shape)
}

fn op(rng: &mut ChaCha8Rng, inputs: &[Tensor<f64>], training: bool, f: impl Fn(&mut lgm_core::Tape<f64>, &[lgm_core::Var]) -> Result<lgm_core::Var>) -> Result<f64> {
    check(rng, &mut NoParams, inputs, training, |_, t, v| f(t, v))
}

/// He-initialized module with every trainable vector and every buffer
/// perturbed, so affine terms and running statistics are generic.
fn randomize<M: Module<f64>>(m: &mut M, rng: &mut ChaCha8Rng) {
    init_params(m, rng.gen());
    for (name, p) in m.named_params_mut() {
        if name.ends_with("running_var") {
            p.value.data_mut().iter_mut().for_each(|v| *v = rng.gen_range(0.5..1.5));
        } else if p.value.ndim() == 1 {
            p.value.data_mut().iter_mut().for_each(|v| *v += rng.gen_range(-0.5..0.5));
        }
    }
}

fn random_dims(rng: &mut ChaCha8Rng) -> PatchDims {
    let (ph, pw) = (rng.gen_range(1..=3), rng.gen_range(1..=3));
    PatchDims::new(ph * rng.gen_range(1..=3), pw * rng.gen_range(1..=3), rng.gen_range(1..=3), ph, pw).unwrap()
}

fn g_conv2d(rng: &mut ChaCha8Rng) -> Result<f64> {
    let groups = [1, 2, 4][rng.gen_range(0..3)];
    let co = groups * rng.gen_range(1..=2);
    let k = rng.gen_range(1..=3);
    let (stride, pad) = (rng.gen_range(1..=2), rng.gen_range(0..k));
    let mut inputs = vec![rt(rng, &[2, 4, 5, 5]), rt(rng, &[co, 4 / groups, k, k])];
    if rng.gen_bool(0.5) {
        inputs.push(rt(rng, &[co]));
    }
    op(rng, &inputs, false, |t, v| t.conv2d(v[0], v[1], v.get(2).copied(), stride, pad, groups))
}

fn g_conv_transpose2d(rng: &mut ChaCha8Rng) -> Result<f64> {
    let k = rng.gen_range(2..=4);
    let (stride, pad) = (rng.gen_range(1..=2), rng.gen_range(0..=(k - 1) / 2));
    let mut inputs = vec![rt(rng, &[2, 3, 3, 3]), rt(rng, &[3, 2, k, k])];
    if rng.gen_bool(0.5) {
        inputs.push(rt(rng, &[2]));
    }
    op(rng, &inputs, false, |t, v| t.conv_transpose2d(v[0], v[1], v.get(2).copied(), stride, pad))
}

fn g_linear(rng: &mut ChaCha8Rng) -> Result<f64> {
    let inputs = [rt(rng, &[2, 3, 5]), rt(rng, &[4, 5]), rt(rng, &[4])];
    op(rng, &inputs, false, |t, v| t.linear(v[0], v[1], Some(v[2])))
}

fn g_layer_norm(rng: &mut ChaCha8Rng) -> Result<f64> {
    let inputs = [rt(rng, &[3, 6]), rt(rng, &[6]), rt(rng, &[6])];
    op(rng, &inputs, false, |t, v| t.layer_norm(v[0], v[1], v[2], 1e-5))
}

fn g_batch_norm_train(rng: &mut ChaCha8Rng) -> Result<f64> {
    let inputs = [rt(rng, &[3, 2, 3, 3]), rt(rng, &[2]), rt(rng, &[2])];
    op(rng, &inputs, true, |t, v| {
        let rm = t.constant(Tensor::zeros([2]));
        let rv = t.constant(Tensor::ones([2]));
        Ok(t.batch_norm2d(v[0], v[1], v[2], rm, rv, 1e-5)?.0)
    })
}

fn g_batch_norm_eval(rng: &mut ChaCha8Rng) -> Result<f64> {
    let inputs = [rt(rng, &[2, 3, 2, 2]), rt(rng, &[3]), rt(rng, &[3])];
    let mean = rt(rng, &[3]);
    let var = Tensor::from_fn([3], |_| rng.gen_range(0.5..2.0));
    op(rng, &inputs, false, move |t, v| {
        let rm = t.constant(mean.clone());
        let rv = t.constant(var.clone());
        Ok(t.batch_norm2d(v[0], v[1], v[2], rm, rv, 1e-5)?.0)
    })
}

fn g_gelu(rng: &mut ChaCha8Rng) -> Result<f64> {
    let x = Tensor::from_fn([24], |_| rng.gen_range(-4.0..4.0));
    op(rng, &[x], false, |t, v| Ok(t.activation(v[0], Activation::Gelu)))
}

fn g_relu6(rng: &mut ChaCha8Rng) -> Result<f64> {
    // Kept away from the kinks at 0 and 6, where the derivative is undefined.
    let x = Tensor::from_fn([24], |_| loop {
        let v: f64 = rng.gen_range(-2.0..8.0);
        if v.abs() > 1e-3 && (v - 6.0).abs() > 1e-3 {
            break v;
        }
    });
    op(rng, &[x], false, |t, v| Ok(t.activation(v[0], Activation::Relu6)))
}

fn g_add(rng: &mut ChaCha8Rng) -> Result<f64> {
    let inputs = [rt(rng, &[2, 3, 4]), rt(rng, &[2, 3, 4])];
    op(rng, &inputs, false, |t, v| t.add(v[0], v[1]))
}

fn g_mul(rng: &mut ChaCha8Rng) -> Result<f64> {
    let inputs = [rt(rng, &[2, 3, 4]), rt(rng, &[2, 3, 4])];
    op(rng, &inputs, false, |t, v| t.mul(v[0], v[1]))
}

fn g_scale(rng: &mut ChaCha8Rng) -> Result<f64> {
    let f = rng.gen_range(-3.0..3.0);
    let x = rt(rng, &[5, 2]);
    op(rng, &[x], false, move |t, v| Ok(t.scale(v[0], f)))
}

fn g_concat(rng: &mut ChaCha8Rng) -> Result<f64> {
    let inputs = [rt(rng, &[2, 2, 3, 3]), rt(rng, &[2, 3, 3, 3])];
    op(rng, &inputs, false, |t, v| t.concat_channels(v[0], v[1]))
}

fn g_shuffle(rng: &mut ChaCha8Rng) -> Result<f64> {
    let groups = [1, 2, 3, 6][rng.gen_range(0..4)];
    let x = rt(rng, &[2, 6, 2, 2]);
    op(rng, &[x], false, move |t, v| t.channel_shuffle(v[0], groups))
}

fn g_npt1(rng: &mut ChaCha8Rng) -> Result<f64> {
    let d = random_dims(rng);
    let x = rt(rng, &[2, d.channels, d.height, d.width]);
    op(rng, &[x], false, move |t, v| t.npt_op1(v[0], d))
}

fn g_npt2(rng: &mut ChaCha8Rng) -> Result<f64> {
    let shape = [2, rng.gen_range(1..=4), rng.gen_range(1..=3), rng.gen_range(1..=4)];
    let x = rt(rng, &shape);
    op(rng, &[x], false, |t, v| t.npt_op2(v[0]))
}

fn g_npt3(rng: &mut ChaCha8Rng) -> Result<f64> {
    let d = random_dims(rng);
    let shape = [2, d.patch_count(), d.channels, d.patch_pixels()];
    let x = rt(rng, &shape);
    op(rng, &[x], false, move |t, v| t.npt_op3(v[0], d))
}

fn g_pad(rng: &mut ChaCha8Rng) -> Result<f64> {
    let pad = Padding2d {
        top: rng.gen_range(0..3),
        bottom: rng.gen_range(0..3),
        left: rng.gen_range(0..3),
        right: rng.gen_range(1..3),
    };
    let x = rt(rng, &[2, 2, 3, 4]);
    op(rng, &[x], false, move |t, v| t.pad2d(v[0], pad))
}

fn g_crop(rng: &mut ChaCha8Rng) -> Result<f64> {
    let (top, left) = (rng.gen_range(0..3), rng.gen_range(1..3));
    let (h, w) = (rng.gen_range(1..=5 - top), rng.gen_range(1..=6 - left));
    let x = rt(rng, &[2, 2, 5, 6]);
    op(rng, &[x], false, move |t, v| t.crop2d(v[0], top, left, h, w))
}

fn g_sum(rng: &mut ChaCha8Rng) -> Result<f64> {
    let x = rt(rng, &[3, 4]);
    op(rng, &[x], false, |t, v| Ok(t.sum(v[0])))
}

fn g_mean(rng: &mut ChaCha8Rng) -> Result<f64> {
    let x = rt(rng, &[3, 4]);
    op(rng, &[x], false, |t, v| Ok(t.mean(v[0])))
}

fn g_masked_mse(rng: &mut ChaCha8Rng) -> Result<f64> {
    let target = rt(rng, &[2, 3, 3, 3]);
    let mask: Vec<f64> = (0..6).map(|_| if rng.gen_bool(0.7) { 1.0 } else { 0.0 }).collect();
    let x = rt(rng, &[2, 3, 3, 3]);
    op(rng, &[x], false, move |t, v| {
        let tv = t.constant(target.clone());
        t.masked_mse(v[0], tv, &mask)
    })
}

fn g_mlp_block(rng: &mut ChaCha8Rng) -> Result<f64> {
    let mut m = MlpBlock::<f64>::new(5, rng.gen_range(1..=3))?;
    randomize(&mut m, rng);
    let x = rt(rng, &[2, 3, 5]);
    check(rng, &mut m, &[x], false, |m, t, v| m.forward(t, v[0]))
}

fn g_larm(rng: &mut ChaCha8Rng) -> Result<f64> {
    let pad_to_fit = rng.gen_bool(0.5);
    let (h, w, patch) = if pad_to_fit { (3, 5, (2, 2)) } else { (4, 6, [(2, 2), (2, 3), (1, 2)][rng.gen_range(0..3)]) };
    let mut m = Larm::<f64>::new(3, h, w, patch, 2, pad_to_fit)?;
    randomize(&mut m, rng);
    let x = rt(rng, &[1, 3, h, w]);
    check(rng, &mut m, &[x], false, |m, t, v| m.forward(t, v[0]))
}

fn g_mobilevim(rng: &mut ChaCha8Rng) -> Result<f64> {
    let spec = MobileVimSpec { channels: 3, dim: 4, height: 4, width: 4, patch: (2, 2), mlp_ratio: 2, pad_to_fit: false };
    let mut m = MobileVim::<f64>::new(spec)?;
    randomize(&mut m, rng);
    let x = rt(rng, &[1, 3, 4, 4]);
    check(rng, &mut m, &[x], false, |m, t, v| m.forward(t, v[0]))
}

fn fusion_case(rng: &mut ChaCha8Rng, mode: FusionMode) -> Result<f64> {
    let mut m = Fusion::<f64>::new(FusionConfig::new(mode, 2, 2), 4, 4, 4)?;
    randomize(&mut m, rng);
    let (up, skip) = (rt(rng, &[1, 4, 3, 3]), rt(rng, &[1, 4, 3, 3]));
    check(rng, &mut m, &[up, skip], false, |m, t, v| m.forward(t, v[0], v[1]))
}

fn g_fusion_none(rng: &mut ChaCha8Rng) -> Result<f64> {
    fusion_case(rng, FusionMode::None)
}

fn g_fusion_conv3x3(rng: &mut ChaCha8Rng) -> Result<f64> {
    fusion_case(rng, FusionMode::Conv3x3)
}

fn g_fusion_dw(rng: &mut ChaCha8Rng) -> Result<f64> {
    fusion_case(rng, FusionMode::DwSeparable)
}

fn g_fusion_sfusion(rng: &mut ChaCha8Rng) -> Result<f64> {
    fusion_case(rng, FusionMode::Sfusion)
}

fn g_inverted_residual(rng: &mut ChaCha8Rng) -> Result<f64> {
    let (ci, co, stride, t) = [(4, 4, 1, 2), (4, 6, 2, 3), (4, 4, 1, 1)][rng.gen_range(0..3)];
    let training = rng.gen_bool(0.5);
    let mut m = InvertedResidual::<f64>::new(ci, co, stride, t)?;
    randomize(&mut m, rng);
    let x = rt(rng, &[2, ci, 4, 4]);
    check(rng, &mut m, &[x], training, |m, t, v| m.forward(t, v[0]))
}

pub fn gradient_targets() -> Vec<Target> {
    vec![
        ("conv2d", g_conv2d),
        ("conv_transpose2d", g_conv_transpose2d),
        ("linear", g_linear),
        ("layer_norm", g_layer_norm),
        ("batch_norm2d_train", g_batch_norm_train),
        ("batch_norm2d_eval", g_batch_norm_eval),
        ("gelu", g_gelu),
        ("relu6", g_relu6),
        ("add", g_add),
        ("mul", g_mul),
        ("scale", g_scale),
        ("concat_channels", g_concat),
        ("channel_shuffle", g_shuffle),
        ("npt_op1", g_npt1),
        ("npt_op2", g_npt2),
        ("npt_op3", g_npt3),
        ("pad2d", g_pad),
        ("crop2d", g_crop),
        ("sum", g_sum),
        ("mean", g_mean),
        ("masked_mse", g_masked_mse),
        ("mlp_block", g_mlp_block),
        ("larm_forward", g_larm),
        ("mobilevim_forward", g_mobilevim),
        ("sfusion_forward/none", g_fusion_none),
        ("sfusion_forward/conv3x3", g_fusion_conv3x3),
        ("sfusion_forward/dw_separable", g_fusion_dw),
        ("sfusion_forward/sfusion", g_fusion_sfusion),
        ("inverted_residual", g_inverted_residual),
    ]
}

// ---- kernel oracles (f32 kernels against f64 loops on the same inputs) ----

fn f32_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f32> {
    rand_tensor(rng, shape)
}

fn o_conv2d(rng: &mut ChaCha8Rng, groups_choice: usize) -> Result<f64> {
    let ci = 4 * rng.gen_range(1..=2);
    let groups = [1, 2, ci][groups_choice % 3];
    let co = groups * rng.gen_range(1..=8 / groups.min(8)).max(1);
    let k = rng.gen_range(1..=3);
    let (stride, pad) = (rng.gen_range(1..=2), rng.gen_range(0..k));
    let (h, w) = (rng.gen_range(k..=7), rng.gen_range(k..=7));
    let shape = [rng.gen_range(1..=2), ci, h, w];
    let x = f32_tensor(rng, &shape);
    let wt = f32_tensor(rng, &[co, ci / groups, k, k]);
    let b = f32_tensor(rng, &[co]);
    let y = kernels::conv2d(&x, &wt, Some(&b), stride, pad, groups)?;
    let r = super::conv2d(&x.cast(), &wt.cast(), Some(&b.cast()), stride, pad, groups);
    Ok(max_abs_diff_f32(&y, &r))
}

pub fn o_conv2d_dense(rng: &mut ChaCha8Rng) -> Result<f64> {
    o_conv2d(rng, 0)
}

pub fn o_conv2d_grouped(rng: &mut ChaCha8Rng) -> Result<f64> {
    o_conv2d(rng, 1)
}

pub fn o_conv2d_depthwise(rng: &mut ChaCha8Rng) -> Result<f64> {
    o_conv2d(rng, 2)
}

pub fn o_conv_transpose2d(rng: &mut ChaCha8Rng) -> Result<f64> {
    let k = rng.gen_range(1..=4);
    let (stride, pad) = (rng.gen_range(1..=2), rng.gen_range(0..=(k - 1) / 2));
    let shape = [rng.gen_range(1..=2), rng.gen_range(1..=4), rng.gen_range(1..=5), rng.gen_range(1..=5)];
    let x = f32_tensor(rng, &shape);
    let shape = [x.shape()[1], rng.gen_range(1..=4), k, k];
    let wt = f32_tensor(rng, &shape);
    let b = f32_tensor(rng, &[wt.shape()[1]]);
    let y = kernels::conv_transpose2d(&x, &wt, Some(&b), stride, pad)?;
    let r = super::conv_transpose2d(&x.cast(), &wt.cast(), Some(&b.cast()), stride, pad);
    Ok(max_abs_diff_f32(&y, &r))
}

pub fn o_linear(rng: &mut ChaCha8Rng) -> Result<f64> {
    let (fi, fo) = (rng.gen_range(1..=24), rng.gen_range(1..=24));
    let shape = [rng.gen_range(1..=3), rng.gen_range(1..=5), fi];
    let x = f32_tensor(rng, &shape);
    let (w, b) = (f32_tensor(rng, &[fo, fi]), f32_tensor(rng, &[fo]));
    let y = kernels::linear(&x, &w, Some(&b))?;
    Ok(max_abs_diff_f32(&y, &super::linear(&x.cast(), &w.cast(), Some(&b.cast()))))
}

pub fn o_layer_norm(rng: &mut ChaCha8Rng) -> Result<f64> {
    let l = rng.gen_range(2..=32);
    let shape = [rng.gen_range(1..=6), l];
    let x = f32_tensor(rng, &shape);
    let (g, b) = (f32_tensor(rng, &[l]), f32_tensor(rng, &[l]));
    let y = kernels::layer_norm(&x, &g, &b, 1e-5)?;
    Ok(max_abs_diff_f32(&y, &super::layer_norm(&x.cast(), &g.cast(), &b.cast(), 1e-5)))
}

/// Training-mode output and both running statistics, plus eval mode.
pub fn o_batch_norm(rng: &mut ChaCha8Rng) -> Result<f64> {
    let c = rng.gen_range(1..=5);
    let shape = [rng.gen_range(1..=3), c, rng.gen_range(1..=4), rng.gen_range(2..=4)];
    let x = f32_tensor(rng, &shape);
    let (g, b) = (f32_tensor(rng, &[c]), f32_tensor(rng, &[c]));
    let rm0 = f32_tensor(rng, &[c]);
    let rv0 = Tensor::<f32>::from_fn([c], |_| rng.gen_range(0.5..1.5));
    let (mut rm, mut rv) = (rm0.clone(), rv0.clone());
    let y = kernels::batch_norm2d(&x, &g, &b, &mut rm, &mut rv, 1e-5, 0.1, true)?;
    let xd = x.cast::<f64>();
    let (mean, var) = channel_moments(&xd);
    let mut err = max_abs_diff_f32(&y, &super::batch_norm_with(&xd, &g.cast(), &b.cast(), &mean, &var, 1e-5));
    let count = (xd.numel() / c) as f64;
    for ch in 0..c {
        let want_m = 0.9 * rm0.data()[ch] as f64 + 0.1 * mean[ch];
        let want_v = 0.9 * rv0.data()[ch] as f64 + 0.1 * var[ch] * count / (count - 1.0);
        err = err.max((rm.data()[ch] as f64 - want_m).abs()).max((rv.data()[ch] as f64 - want_v).abs());
    }
    let ye = kernels::batch_norm2d(&x, &g, &b, &mut rm0.clone(), &mut rv0.clone(), 1e-5, 0.1, false)?;
    let rme: Vec<f64> = rm0.data().iter().map(|v| *v as f64).collect();
    let rve: Vec<f64> = rv0.data().iter().map(|v| *v as f64).collect();
    Ok(err.max(max_abs_diff_f32(&ye, &super::batch_norm_with(&xd, &g.cast(), &b.cast(), &rme, &rve, 1e-5))))
}

/// `|<conv(x), y> - <x, conv_T(y)>|` relative to `max(1, |<conv(x), y>|)`,
/// evaluated with f32 kernels.
pub fn o_adjoint(rng: &mut ChaCha8Rng) -> Result<f64> {
    let (ci, co, k) = (rng.gen_range(1..=4), rng.gen_range(1..=4), rng.gen_range(1..=4));
    let (stride, pad) = (rng.gen_range(1..=2), rng.gen_range(0..=(k - 1) / 2));
    // Input extents that the strided convolution covers exactly.
    let (oh, ow) = (rng.gen_range(1..=4), rng.gen_range(1..=4));
    let (h, w) = ((oh - 1) * stride + k - 2 * pad, (ow - 1) * stride + k - 2 * pad);
    let x = f32_tensor(rng, &[1, ci, h, w]);
    let wt = f32_tensor(rng, &[co, ci, k, k]);
    let y = f32_tensor(rng, &[1, co, oh, ow]);
    let cx = kernels::conv2d(&x, &wt, None, stride, pad, 1)?;
    let ty = kernels::conv_transpose2d(&y, &wt, None, stride, pad)?;
    let lhs = cx.dot(&y)?;
    Ok((lhs - x.dot(&ty)?).abs() / lhs.abs().max(1.0))
}

pub fn oracle_targets() -> Vec<Target> {
    vec![
        ("conv2d/dense", o_conv2d_dense),
        ("conv2d/grouped", o_conv2d_grouped),
        ("conv2d/depthwise", o_conv2d_depthwise),
        ("conv_transpose2d", o_conv_transpose2d),
        ("linear", o_linear),
        ("layer_norm", o_layer_norm),
        ("batch_norm2d", o_batch_norm),
        ("conv/deconv adjoint", o_adjoint),
    ]
}
