//! Reference implementations written directly from the defining sums, and
//! random-instance helpers shared by the integration tests.
#![allow(dead_code)]

use lgm_core::{Scalar, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rand_tensor<T: Scalar>(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<T> {
    Tensor::from_fn(shape.to_vec(), |_| T::cast(rng.gen_range(-1.0..1.0)))
}

/// Plain nested-loop grouped cross-correlation, accumulated in f64.
pub fn conv2d(x: &Tensor<f64>, w: &Tensor<f64>, b: Option<&Tensor<f64>>, stride: usize, pad: usize, groups: usize) -> Tensor<f64> {
    let [n, ci, h, wd] = [x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]];
    let [co, cpg, kh, kw] = [w.shape()[0], w.shape()[1], w.shape()[2], w.shape()[3]];
    assert_eq!(ci, cpg * groups);
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (wd + 2 * pad - kw) / stride + 1;
    let per_group_out = co / groups;
    let mut out = Tensor::zeros([n, co, oh, ow]);
    for bi in 0..n {
        for o in 0..co {
            let g = o / per_group_out;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = b.map_or(0.0, |b| b.data()[o]);
                    for c in 0..cpg {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                    continue;
                                }
                                acc += x.at(&[bi, g * cpg + c, iy as usize, ix as usize]) * w.at(&[o, c, ky, kx]);
                            }
                        }
                    }
                    out.set(&[bi, o, oy, ox], acc);
                }
            }
        }
    }
    out
}

/// Transposed convolution as an explicit scatter of every input pixel.
pub fn conv_transpose2d(x: &Tensor<f64>, w: &Tensor<f64>, b: Option<&Tensor<f64>>, stride: usize, pad: usize) -> Tensor<f64> {
    let [n, ci, h, wd] = [x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]];
    let [_, co, kh, kw] = [w.shape()[0], w.shape()[1], w.shape()[2], w.shape()[3]];
    let oh = (h - 1) * stride + kh - 2 * pad;
    let ow = (wd - 1) * stride + kw - 2 * pad;
    let mut out = Tensor::zeros([n, co, oh, ow]);
    for bi in 0..n {
        for o in 0..co {
            let bias = b.map_or(0.0, |b| b.data()[o]);
            for y in 0..oh {
                for xx in 0..ow {
                    out.set(&[bi, o, y, xx], bias);
                }
            }
        }
        for c in 0..ci {
            for iy in 0..h {
                for ix in 0..wd {
                    let v = x.at(&[bi, c, iy, ix]);
                    for o in 0..co {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let y = (iy * stride + ky) as isize - pad as isize;
                                let xx = (ix * stride + kx) as isize - pad as isize;
                                if y < 0 || xx < 0 || y >= oh as isize || xx >= ow as isize {
                                    continue;
                                }
                                let idx = [bi, o, y as usize, xx as usize];
                                out.set(&idx, out.at(&idx) + v * w.at(&[c, o, ky, kx]));
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// `y[r, o] = sum_c x[r, c] w[o, c] + b[o]` over all leading rows.
pub fn linear(x: &Tensor<f64>, w: &Tensor<f64>, b: Option<&Tensor<f64>>) -> Tensor<f64> {
    let (fo, fi) = (w.shape()[0], w.shape()[1]);
    let rows = x.numel() / fi;
    let mut out = Vec::with_capacity(rows * fo);
    for r in 0..rows {
        for o in 0..fo {
            let mut acc = b.map_or(0.0, |b| b.data()[o]);
            for c in 0..fi {
                acc += x.data()[r * fi + c] * w.data()[o * fi + c];
            }
            out.push(acc);
        }
    }
    let mut shape = x.shape().to_vec();
    *shape.last_mut().unwrap() = fo;
    Tensor::new(shape, out).unwrap()
}

pub fn layer_norm(x: &Tensor<f64>, gamma: &Tensor<f64>, beta: &Tensor<f64>, eps: f64) -> Tensor<f64> {
    let l = *x.shape().last().unwrap();
    let mut out = Vec::with_capacity(x.numel());
    for row in x.data().chunks(l) {
        let mean = row.iter().sum::<f64>() / l as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / l as f64;
        for (i, v) in row.iter().enumerate() {
            out.push(gamma.data()[i] * (v - mean) / (var + eps).sqrt() + beta.data()[i]);
        }
    }
    Tensor::new(x.shape().to_vec(), out).unwrap()
}

/// Per-channel normalization with the given statistics.
pub fn batch_norm_with(x: &Tensor<f64>, gamma: &Tensor<f64>, beta: &Tensor<f64>, mean: &[f64], var: &[f64], eps: f64) -> Tensor<f64> {
    let [n, c, h, w] = [x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]];
    let mut out = x.clone();
    for bi in 0..n {
        for ch in 0..c {
            for y in 0..h {
                for xx in 0..w {
                    let v = x.at(&[bi, ch, y, xx]);
                    out.set(&[bi, ch, y, xx], gamma.data()[ch] * (v - mean[ch]) / (var[ch] + eps).sqrt() + beta.data()[ch]);
                }
            }
        }
    }
    out
}

/// Batch mean and biased variance per channel.
pub fn channel_moments(x: &Tensor<f64>) -> (Vec<f64>, Vec<f64>) {
    let [n, c, h, w] = [x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]];
    let count = (n * h * w) as f64;
    let mut mean = vec![0.0; c];
    let mut var = vec![0.0; c];
    for ch in 0..c {
        let vals: Vec<f64> = (0..n)
            .flat_map(|b| (0..h).flat_map(move |y| (0..w).map(move |xx| (b, y, xx))))
            .map(|(b, y, xx)| x.at(&[b, ch, y, xx]))
            .collect();
        mean[ch] = vals.iter().sum::<f64>() / count;
        var[ch] = vals.iter().map(|v| (v - mean[ch]).powi(2)).sum::<f64>() / count;
    }
    (mean, var)
}

/// Unfold by walking the patch grid: `out[p][c][n]` with `n` the patch and `p`
/// the pixel inside it, both row-major.
pub fn unfold(x: &Tensor<f64>, ph: usize, pw: usize) -> Tensor<f64> {
    let [d, h, w] = [x.shape()[0], x.shape()[1], x.shape()[2]];
    let (gh, gw) = (h / ph, w / pw);
    let (pp, nn) = (ph * pw, gh * gw);
    let mut out = Tensor::zeros([pp, d, nn]);
    for gy in 0..gh {
        for gx in 0..gw {
            for ry in 0..ph {
                for rx in 0..pw {
                    for c in 0..d {
                        out.set(&[ry * pw + rx, c, gy * gw + gx], x.at(&[c, gy * ph + ry, gx * pw + rx]));
                    }
                }
            }
        }
    }
    out
}

/// Source channel list of a channel shuffle, built by literally reshaping
/// `0..C` to `(groups, C/groups)` and reading it column by column.
pub fn shuffle_order(channels: usize, groups: usize) -> Vec<usize> {
    let per = channels / groups;
    let rows: Vec<Vec<usize>> = (0..groups).map(|g| (g * per..(g + 1) * per).collect()).collect();
    (0..per).flat_map(|j| rows.iter().map(move |r| r[j])).collect()
}

pub fn max_abs_diff_f32(a: &Tensor<f32>, b: &Tensor<f64>) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.data().iter().zip(b.data()).map(|(x, y)| (*x as f64 - y).abs()).fold(0.0, f64::max)
}

pub mod costs;
pub mod grad;
pub mod metric_cases;
pub mod perm;
pub mod reach;
pub mod targets;
