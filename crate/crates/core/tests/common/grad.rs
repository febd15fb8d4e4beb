//! Tape gradients against central differences of a random projection of the output.

use lgm_core::{Module, Result, Tape, Tensor, Var};
use rand_chacha::ChaCha8Rng;

use super::rand_tensor;

const STEP: f64 = 1e-6;

/// Compares the tape gradient of `<f(inputs, params), R>` for a random `R`
/// with central differences, for every input and every trainable parameter.
///
/// The error of one tensor is `max|analytic - numeric|` over
/// `max(|analytic|_inf, |numeric|_inf, 1e-3 * G)`, where `G` is the largest
/// gradient entry of the whole case. The worst tensor is returned.
pub fn check<M, F>(rng: &mut ChaCha8Rng, module: &mut M, inputs: &[Tensor<f64>], training: bool, f: F) -> Result<f64>
where
    M: Module<f64>,
    F: Fn(&M, &mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let new_tape = || if training { Tape::<f64>::training() } else { Tape::<f64>::new() };
    let mut tape = new_tape();
    let vars: Vec<Var> = inputs.iter().map(|x| tape.leaf(x.clone(), true)).collect();
    let y = f(module, &mut tape, &vars)?;
    let proj = rand_tensor::<f64>(rng, tape.value(y).shape());
    let pv = tape.constant(proj.clone());
    let weighted = tape.mul(y, pv)?;
    let loss = tape.sum(weighted);
    let grads = tape.backward(loss)?;

    let zeros = |t: &Tensor<f64>| Tensor::zeros(t.shape().to_vec());
    let mut analytic: Vec<Tensor<f64>> =
        inputs.iter().zip(&vars).map(|(x, v)| grads.get(*v).cloned().unwrap_or_else(|| zeros(x))).collect();
    for (_, p) in module.named_params() {
        if p.is_trainable() {
            analytic.push(grads.param(p).cloned().unwrap_or_else(|| zeros(&p.value)));
        }
    }
    drop(tape);

    let eval = |m: &M, xs: &[Tensor<f64>]| -> f64 {
        let mut t = new_tape();
        let vs: Vec<Var> = xs.iter().map(|x| t.constant(x.clone())).collect();
        let out = f(m, &mut t, &vs).expect("forward succeeded once");
        t.value(out).dot(&proj).expect("projection shape")
    };

    let mut numeric = Vec::with_capacity(analytic.len());
    let mut xs = inputs.to_vec();
    for i in 0..xs.len() {
        let mut g = zeros(&xs[i]);
        for k in 0..xs[i].numel() {
            let orig = xs[i].data()[k];
            xs[i].data_mut()[k] = orig + STEP;
            let plus = eval(module, &xs);
            xs[i].data_mut()[k] = orig - STEP;
            let minus = eval(module, &xs);
            xs[i].data_mut()[k] = orig;
            g.data_mut()[k] = (plus - minus) / (2.0 * STEP);
        }
        numeric.push(g);
    }
    let names: Vec<String> =
        module.named_params().into_iter().filter(|(_, p)| p.is_trainable()).map(|(n, _)| n).collect();
    for name in names {
        let numel = param_mut(module, &name).value.numel();
        let mut g = Tensor::zeros(param_mut(module, &name).value.shape().to_vec());
        for k in 0..numel {
            let orig = param_mut(module, &name).value.data()[k];
            param_mut(module, &name).value.data_mut()[k] = orig + STEP;
            let plus = eval(module, &xs);
            param_mut(module, &name).value.data_mut()[k] = orig - STEP;
            let minus = eval(module, &xs);
            param_mut(module, &name).value.data_mut()[k] = orig;
            g.data_mut()[k] = (plus - minus) / (2.0 * STEP);
        }
        numeric.push(g);
    }

    let global = analytic.iter().chain(&numeric).map(|t| t.max_abs()).fold(0.0, f64::max);
    let floor = (1e-3 * global).max(1e-12);
    Ok(analytic
        .iter()
        .zip(&numeric)
        .map(|(a, n)| a.max_abs_diff(n) / a.max_abs().max(n.max_abs()).max(floor))
        .fold(0.0, f64::max))
}

fn param_mut<'a, M: Module<f64>>(module: &'a mut M, name: &str) -> &'a mut lgm_core::Param<f64> {
    module.named_params_mut().into_iter().find(|(n, _)| n == name).map(|(_, p)| p).expect("parameter exists")
}

/// A module without parameters, for checking bare operations.
pub struct NoParams;

impl Module<f64> for NoParams {
    fn collect<'a>(&'a self, _: &str, _: &mut Vec<(String, &'a lgm_core::Param<f64>)>) {}
    fn collect_mut<'a>(&'a mut self, _: &str, _: &mut Vec<(String, &'a mut lgm_core::Param<f64>)>) {}
}
