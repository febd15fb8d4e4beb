//! Built-in consistency suites run by `lgm-pose selftest`.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::autograd::Tape;
use crate::blocks::{Conv2d, ConvTranspose2d, InvertedResidual, Linear, MlpBlock};
use crate::cost::CostReport;
use crate::error::Result;
use crate::gradcheck::{finite_diff_grad, relative_error};
use crate::init::init_params;
use crate::kernels::{self, Activation};
use crate::model::{Model, ModelConfig};
use crate::npt::{npt_op1, npt_op2, npt_op3, PatchDims};
use crate::param::Module;
use crate::tensor::Tensor;

const SEED: u64 = 0x5e1f_7e57;

#[derive(Debug, Clone, Copy, Default)]
pub struct SelftestOptions {
    /// Negative control: swap two entries of the unfold index map.
    pub corrupt_npt: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteResult {
    pub name: String,
    pub passed: usize,
    pub failed: usize,
    pub millis: f64,
    /// First few failure descriptions.
    pub failures: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SelftestReport {
    pub suites: Vec<SuiteResult>,
    pub passed: usize,
    pub failed: usize,
}

impl SelftestReport {
    pub fn ok(&self) -> bool {
        self.failed == 0
    }

    /// Same report with timings zeroed, for run-to-run comparison.
    pub fn without_timing(&self) -> Self {
        let mut r = self.clone();
        r.suites.iter_mut().for_each(|s| s.millis = 0.0);
        r
    }

    pub fn table(&self) -> String {
        let mut s = format!("{:<12} {:>7} {:>7} {:>10}\n", "suite", "passed", "failed", "ms");
        for suite in &self.suites {
            s += &format!("{:<12} {:>7} {:>7} {:>10.1}\n", suite.name, suite.passed, suite.failed, suite.millis);
            for f in &suite.failures {
                s += &format!("    {f}\n");
            }
        }
        s += &format!("{:<12} {:>7} {:>7}\n", "total", self.passed, self.failed);
        s
    }
}

struct Suite {
    name: &'static str,
    passed: usize,
    failed: usize,
    failures: Vec<String>,
}

impl Suite {
    fn new(name: &'static str) -> Self {
        Self { name, passed: 0, failed: 0, failures: Vec::new() }
    }

    fn check(&mut self, ok: bool, what: impl FnOnce() -> String) {
        if ok {
            self.passed += 1;
        } else {
            self.failed += 1;
            if self.failures.len() < 5 {
                self.failures.push(what());
            }
        }
    }

    fn check_result(&mut self, r: Result<bool>, what: impl FnOnce() -> String) {
        match r {
            Ok(ok) => self.check(ok, what),
            Err(e) => {
                let msg = what();
                self.check(false, || format!("{msg}: {e}"));
            }
        }
    }
}

pub fn run_selftest(opts: SelftestOptions) -> SelftestReport {
    let suites: [(&str, fn(&mut Suite, &SelftestOptions)); 4] =
        [("bijection", bijection), ("gradient", gradient), ("oracle", oracle), ("counting", counting)];
    let mut out = Vec::new();
    for (name, body) in suites {
        let mut suite = Suite::new(name);
        let t0 = Instant::now();
        body(&mut suite, &opts);
        out.push(SuiteResult {
            name: suite.name.to_string(),
            passed: suite.passed,
            failed: suite.failed,
            millis: t0.elapsed().as_secs_f64() * 1e3,
            failures: suite.failures,
        });
    }
    let passed = out.iter().map(|s| s.passed).sum();
    let failed = out.iter().map(|s| s.failed).sum();
    SelftestReport { suites: out, passed, failed }
}

fn unfold(x: &Tensor<f32>, dims: &PatchDims, corrupt: bool) -> Result<Tensor<f32>> {
    let mut u = npt_op1(x, dims)?;
    if corrupt && u.numel() >= 2 {
        u.data_mut().swap(0, 1);
    }
    Ok(u)
}

fn random_dims(rng: &mut ChaCha8Rng) -> PatchDims {
    let (ph, pw) = (rng.gen_range(1..=4), rng.gen_range(1..=4));
    let (gh, gw) = (rng.gen_range(1..=5), rng.gen_range(1..=5));
    PatchDims::new(ph * gh, pw * gw, rng.gen_range(1..=4), ph, pw).expect("divisible by construction")
}

fn bijection(s: &mut Suite, opts: &SelftestOptions) {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    for i in 0..200 {
        let dims = random_dims(&mut rng);
        let x = Tensor::from_fn([dims.channels, dims.height, dims.width], |k| k as f32);
        let r = unfold(&x, &dims, opts.corrupt_npt)
            .and_then(|u| npt_op2(&u))
            .and_then(|g| npt_op3(&g, &dims))
            .map(|y| y.bit_eq(&x));
        s.check_result(r, || format!("chain identity fails on instance {i} ({dims:?})"));
    }
    // Every source index appears exactly once in the unfolded tensor.
    for (h, w, d, ph, pw) in [(4, 4, 2, 2, 2), (4, 4, 2, 1, 4), (4, 4, 2, 4, 1), (6, 4, 3, 3, 2)] {
        let dims = PatchDims::new(h, w, d, ph, pw).expect("divisible");
        let x = Tensor::from_fn([d, h, w], |k| k as f32);
        let r = unfold(&x, &dims, opts.corrupt_npt).map(|u| {
            let mut seen = vec![false; x.numel()];
            let mut landing_ok = true;
            for (pos, v) in u.data().iter().enumerate() {
                let src = *v as usize;
                seen[src] = true;
                let (c, y, xx) = (src / (h * w), (src / w) % h, src % w);
                let (p, n) = dims.patch_index(y, xx);
                landing_ok &= pos == (p * d + c) * dims.patch_count() + n;
            }
            landing_ok && seen.iter().all(|b| *b)
        });
        s.check_result(r, || format!("unfold is not the expected permutation for {h}x{w}x{d}, patch {ph}x{pw}"));
    }
}

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| rng.gen_range(-1.0..1.0))
}

/// Tape gradient of `sum(f(x))` against central differences.
fn grad_matches(x: &Tensor<f64>, f: impl Fn(&mut Tape<f64>, crate::Var) -> Result<crate::Var>) -> Result<bool> {
    let mut tape = Tape::<f64>::new();
    let xv = tape.leaf(x.clone(), true);
    let y = f(&mut tape, xv)?;
    let loss = tape.sum(y);
    let analytic = tape.backward(loss)?.get(xv).cloned().unwrap_or_else(|| Tensor::zeros(x.shape().to_vec()));
    let numeric = finite_diff_grad(
        |t| {
            let mut tp = Tape::<f64>::inference();
            let v = tp.constant(t.clone());
            let out = f(&mut tp, v).expect("forward succeeded once");
            tp.value(out).clone()
        },
        x,
        1e-6,
    );
    Ok(relative_error(&analytic, &numeric, 1e-3) < 1e-4)
}

fn gradient(s: &mut Suite, _: &SelftestOptions) {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED ^ 1);
    for i in 0..5 {
        let x = rand_tensor(&mut rng, &[1, 4, 5, 5]);
        let w = rand_tensor(&mut rng, &[4, 2, 3, 3]);
        let r = grad_matches(&x, |t, v| {
            let wv = t.constant(w.clone());
            t.conv2d(v, wv, None, 1 + i % 2, 1, 2)
        });
        s.check_result(r, || format!("conv2d gradient, instance {i}"));

        let wt = rand_tensor(&mut rng, &[4, 3, 4, 4]);
        let x3 = rand_tensor(&mut rng, &[1, 4, 3, 3]);
        let r = grad_matches(&x3, |t, v| {
            let wv = t.constant(wt.clone());
            t.conv_transpose2d(v, wv, None, 2, 1)
        });
        s.check_result(r, || format!("conv_transpose2d gradient, instance {i}"));

        let xl = rand_tensor(&mut rng, &[3, 6]);
        let wl = rand_tensor(&mut rng, &[4, 6]);
        let g = Tensor::from_fn([6], |k| 1.0 + 0.1 * k as f64);
        let b = rand_tensor(&mut rng, &[6]);
        let r = grad_matches(&xl, |t, v| {
            let (gv, bv) = (t.constant(g.clone()), t.constant(b.clone()));
            let n = t.layer_norm(v, gv, bv, 1e-5)?;
            let n = t.activation(n, Activation::Gelu);
            let n = t.mul(n, v)?;
            let wv = t.constant(wl.clone());
            t.linear(n, wv, None)
        });
        s.check_result(r, || format!("layer_norm/gelu/linear gradient, instance {i}"));

        let dims = random_dims(&mut rng);
        let xn = rand_tensor(&mut rng, &[1, dims.channels, dims.height, dims.width]);
        let weights = rand_tensor(&mut rng, &[1, dims.channels, dims.height, dims.width]);
        let r = grad_matches(&xn, |t, v| {
            let u = t.npt_op1(v, dims)?;
            let u = t.npt_op2(u)?;
            let y = t.npt_op3(u, dims)?;
            let wv = t.constant(weights.clone());
            t.mul(y, wv)
        });
        s.check_result(r, || format!("npt chain gradient, instance {i}"));
    }
}

fn naive_conv2d(x: &Tensor<f64>, w: &Tensor<f64>, stride: usize, pad: usize, groups: usize) -> Tensor<f64> {
    let (n, ci, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (co, cpg, k) = (w.shape()[0], w.shape()[1], w.shape()[2]);
    let (oh, ow) = ((h + 2 * pad - k) / stride + 1, (wd + 2 * pad - k) / stride + 1);
    let opg = co / groups;
    let mut out = Tensor::zeros([n, co, oh, ow]);
    for b in 0..n {
        for o in 0..co {
            for y in 0..oh {
                for xx in 0..ow {
                    let mut acc = 0.0;
                    for c in 0..cpg {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (y * stride + ky) as isize - pad as isize;
                                let ix = (xx * stride + kx) as isize - pad as isize;
                                if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < wd {
                                    acc += x.at(&[b, (o / opg) * cpg + c, iy as usize, ix as usize]) * w.at(&[o, c, ky, kx]);
                                }
                            }
                        }
                    }
                    out.set(&[b, o, y, xx], acc);
                }
            }
        }
    }
    debug_assert_eq!(ci, cpg * groups);
    out
}

fn oracle(s: &mut Suite, _: &SelftestOptions) {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED ^ 2);
    for i in 0..20 {
        let groups = [1, 2, 4][i % 3];
        let (ci, co) = (4, 4 * rng.gen_range(1..=2));
        let (k, stride) = (rng.gen_range(1..=3), rng.gen_range(1..=2));
        let pad = rng.gen_range(0..k);
        let x = rand_tensor(&mut rng, &[2, ci, 6, 5]);
        let w = rand_tensor(&mut rng, &[co, ci / groups, k, k]);
        let r = kernels::conv2d(&x, &w, None, stride, pad, groups)
            .map(|y| y.max_abs_diff(&naive_conv2d(&x, &w, stride, pad, groups)) < 1e-10);
        s.check_result(r, || format!("conv2d oracle, instance {i}"));

        // <conv_T(x), y> == <x, conv(y)>; the transposed layout is the forward kernel.
        let wt = rand_tensor(&mut rng, &[3, 2, 4, 4]);
        let xt = rand_tensor(&mut rng, &[1, 3, 4, 3]);
        let r = kernels::conv_transpose2d(&xt, &wt, None, 2, 1).and_then(|up| {
            let yt = rand_tensor(&mut rng, up.shape());
            let down = kernels::conv2d(&yt, &wt, None, 2, 1, 1)?;
            Ok((up.dot(&yt)? - xt.dot(&down)?).abs() < 1e-10)
        });
        s.check_result(r, || format!("conv_transpose2d adjoint, instance {i}"));

        let xl = rand_tensor(&mut rng, &[3, 5]);
        let wl = rand_tensor(&mut rng, &[4, 5]);
        let r = kernels::linear(&xl, &wl, None).map(|y| {
            (0..3).all(|r| {
                (0..4).all(|o| {
                    let v: f64 = (0..5).map(|c| xl.at(&[r, c]) * wl.at(&[o, c])).sum();
                    (v - y.at(&[r, o])).abs() < 1e-12
                })
            })
        });
        s.check_result(r, || format!("linear oracle, instance {i}"));

        let (g, b) = (Tensor::ones([5]), Tensor::zeros([5]));
        let r = kernels::layer_norm(&xl, &g, &b, 1e-5).map(|y| {
            (0..3).all(|r| {
                let row: Vec<f64> = (0..5).map(|c| xl.at(&[r, c])).collect();
                let m = row.iter().sum::<f64>() / 5.0;
                let v = row.iter().map(|a| (a - m) * (a - m)).sum::<f64>() / 5.0;
                (0..5).all(|c| ((row[c] - m) / (v + 1e-5).sqrt() - y.at(&[r, c])).abs() < 1e-12)
            })
        });
        s.check_result(r, || format!("layer_norm oracle, instance {i}"));
    }
}

fn counting(s: &mut Suite, _: &SelftestOptions) {
    let conv = |ci: usize, co: usize, k: usize, st: usize, g: usize, h: usize, w: usize| -> Result<bool> {
        let layer = Conv2d::<f32>::new(ci, co, k, st, k / 2, g, true)?;
        let mut rep = CostReport::default();
        let [_, oh, ow] = layer.cost("c", [ci, h, w], &mut rep)?;
        let params = co * (ci / g) * k * k + co;
        Ok(layer.param_count() == params
            && rep.params() == params as u64
            && rep.macs() == (co * (ci / g) * k * k * oh * ow) as u64)
    };
    for (i, (ci, co, k, st, g)) in [(3, 8, 3, 2, 1), (8, 8, 3, 1, 8), (8, 16, 1, 1, 1), (8, 8, 3, 1, 2)].into_iter().enumerate() {
        s.check_result(conv(ci, co, k, st, g, 12, 10), || format!("conv counting case {i}"));
    }
    let deconv = ConvTranspose2d::<f32>::new(8, 4, 4, 2, 1, false);
    let mut rep = CostReport::default();
    let r = deconv.cost("d", [8, 5, 6], &mut rep).map(|out| {
        out == [4, 10, 12] && rep.params() == 8 * 4 * 16 && rep.macs() == 8 * 4 * 16 * 5 * 6
    });
    s.check_result(r, || "deconv counting".into());
    let lin = Linear::<f32>::new(6, 9, true);
    let mut rep = CostReport::default();
    let r = lin.cost("l", &[2, 7, 6], &mut rep).map(|_| rep.params() == 6 * 9 + 9 && rep.macs() == 14 * 6 * 9);
    s.check_result(r, || "linear counting".into());
    for (dim, ratio) in [(4, 2), (48, 4)] {
        let r = MlpBlock::<f32>::new(dim, ratio).map(|m| m.param_count() == MlpBlock::<f32>::closed_form_params(dim, ratio));
        s.check_result(r, || format!("mlp block counting ({dim}, {ratio})"));
    }
    for (ci, co, t) in [(16, 16, 6), (16, 24, 1)] {
        let r = InvertedResidual::<f32>::new(ci, co, 1, t)
            .map(|b| b.param_count() == InvertedResidual::<f32>::closed_form_params(ci, co, t));
        s.check_result(r, || format!("inverted residual counting ({ci}, {co}, {t})"));
    }
    let r = Model::<f32>::build(&ModelConfig::toy()).map(|mut m| {
        init_params(&mut m, SEED);
        let rep = m.cost_report();
        m.count_params() as u64 == rep.params() && m.count_params() == m.param_count()
    });
    s.check_result(r, || "toy model totals".into());
}
