//! Layer normalization over the last axis and per-channel batch normalization.

use crate::error::{shape_err, Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Statistics saved by a normalization forward pass for its backward rule.
#[derive(Debug, Clone)]
pub(crate) struct NormStats {
    pub mean: Vec<f64>,
    pub rstd: Vec<f64>,
}

fn check_affine<T: Scalar>(gamma: &Tensor<T>, beta: &Tensor<T>, extent: usize, what: &str) -> Result<()> {
    if gamma.shape() != [extent] || beta.shape() != [extent] {
        return shape_err(format!(
            "{what} affine shapes {:?}/{:?} do not match extent {extent}",
            gamma.shape(),
            beta.shape()
        ));
    }
    Ok(())
}

pub(crate) fn layer_norm_forward<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    eps: f64,
) -> Result<(Tensor<T>, NormStats)> {
    let Some(&l) = x.shape().last() else {
        return shape_err("layer norm input must have at least one axis");
    };
    check_affine(gamma, beta, l, "layer norm")?;
    let rows = if l == 0 { 0 } else { x.numel() / l };
    let mut out = Vec::with_capacity(x.numel());
    let mut stats = NormStats { mean: Vec::with_capacity(rows), rstd: Vec::with_capacity(rows) };
    for row in x.data().chunks(l.max(1)).take(rows) {
        let mean = row.iter().map(|v| v.as_f64()).sum::<f64>() / l as f64;
        let var = row.iter().map(|v| (v.as_f64() - mean).powi(2)).sum::<f64>() / l as f64;
        let rstd = 1.0 / (var + eps).sqrt();
        let constant = row.iter().all(|v| *v == row[0]);
        for ((v, g), b) in row.iter().zip(gamma.data()).zip(beta.data()) {
            let xhat = if constant { 0.0 } else { (v.as_f64() - mean) * rstd };
            out.push(T::cast(g.as_f64() * xhat + b.as_f64()));
        }
        stats.mean.push(mean);
        stats.rstd.push(rstd);
    }
    Ok((Tensor::new(x.shape().to_vec(), out)?, stats))
}

/// `y = gamma * (x - mean) / sqrt(var + eps) + beta` over the last axis.
///
/// A constant slice normalizes to zero even when `eps == 0`.
pub fn layer_norm<T: Scalar>(x: &Tensor<T>, gamma: &Tensor<T>, beta: &Tensor<T>, eps: f64) -> Result<Tensor<T>> {
    layer_norm_forward(x, gamma, beta, eps).map(|(y, _)| y)
}

/// Returns `(dx, dgamma, dbeta)`.
pub(crate) fn layer_norm_backward<T: Scalar>(
    x: &Tensor<T>,
    dy: &Tensor<T>,
    gamma: &Tensor<T>,
    stats: &NormStats,
) -> (Tensor<T>, Vec<f64>, Vec<f64>) {
    let l = *x.shape().last().expect("checked");
    let mut dx = Vec::with_capacity(x.numel());
    let mut dgamma = vec![0f64; l];
    let mut dbeta = vec![0f64; l];
    let mut xhat = vec![0f64; l];
    let mut dxhat = vec![0f64; l];
    if l > 0 {
        for (r, (xr, dr)) in x.data().chunks(l).zip(dy.data().chunks(l)).enumerate() {
            let (mean, rstd) = (stats.mean[r], stats.rstd[r]);
            let (mut m1, mut m2) = (0f64, 0f64);
            for j in 0..l {
                xhat[j] = (xr[j].as_f64() - mean) * rstd;
                let d = dr[j].as_f64();
                dgamma[j] += d * xhat[j];
                dbeta[j] += d;
                dxhat[j] = d * gamma.data()[j].as_f64();
                m1 += dxhat[j];
                m2 += dxhat[j] * xhat[j];
            }
            m1 /= l as f64;
            m2 /= l as f64;
            for j in 0..l {
                dx.push(T::cast(rstd * (dxhat[j] - m1 - xhat[j] * m2)));
            }
        }
    }
    (Tensor::new(x.shape().to_vec(), dx).expect("same shape"), dgamma, dbeta)
}

fn check_bn<T: Scalar>(x: &Tensor<T>, params: &[&Tensor<T>]) -> Result<[usize; 4]> {
    let dims = x.dims4()?;
    for p in params {
        if p.shape() != [dims[1]] {
            return shape_err(format!(
                "batch norm parameter shape {:?} does not match {} channels",
                p.shape(),
                dims[1]
            ));
        }
    }
    Ok(dims)
}

fn apply_channel_affine<T: Scalar>(x: &Tensor<T>, scale: &[f64], shift: &[f64]) -> Result<Tensor<T>> {
    let [_, c, h, w] = x.dims4()?;
    let plane = h * w;
    let mut out = Vec::with_capacity(x.numel());
    if plane > 0 {
        for (i, chunk) in x.data().chunks(plane).enumerate() {
            let ch = i % c;
            out.extend(chunk.iter().map(|v| T::cast(v.as_f64() * scale[ch] + shift[ch])));
        }
    }
    Tensor::new(x.shape().to_vec(), out)
}

/// Training-mode batch norm: batch statistics over N, H, W per channel.
/// Returns the output, the saved statistics and the biased batch variance.
pub(crate) fn batch_norm2d_train<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    eps: f64,
) -> Result<(Tensor<T>, NormStats, Vec<f64>)> {
    let [n, c, h, w] = check_bn(x, &[gamma, beta])?;
    let count = n * h * w;
    if count == 0 {
        return Err(Error::InvalidArgument("batch norm over an empty batch".into()));
    }
    let plane = h * w;
    let mut mean = vec![0f64; c];
    for (i, chunk) in x.data().chunks(plane).enumerate() {
        mean[i % c] += chunk.iter().map(|v| v.as_f64()).sum::<f64>();
    }
    mean.iter_mut().for_each(|m| *m /= count as f64);
    let mut var = vec![0f64; c];
    for (i, chunk) in x.data().chunks(plane).enumerate() {
        let m = mean[i % c];
        var[i % c] += chunk.iter().map(|v| (v.as_f64() - m).powi(2)).sum::<f64>();
    }
    var.iter_mut().for_each(|v| *v /= count as f64);
    let rstd: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
    let scale: Vec<f64> = (0..c).map(|ch| gamma.data()[ch].as_f64() * rstd[ch]).collect();
    let shift: Vec<f64> = (0..c).map(|ch| beta.data()[ch].as_f64() - mean[ch] * scale[ch]).collect();
    let y = apply_channel_affine(x, &scale, &shift)?;
    Ok((y, NormStats { mean, rstd }, var))
}

/// Eval-mode batch norm: a fixed per-channel affine map from running statistics.
pub(crate) fn batch_norm2d_eval<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    running_mean: &Tensor<T>,
    running_var: &Tensor<T>,
    eps: f64,
) -> Result<Tensor<T>> {
    let [_, c, _, _] = check_bn(x, &[gamma, beta, running_mean, running_var])?;
    let scale: Vec<f64> = (0..c)
        .map(|ch| gamma.data()[ch].as_f64() / (running_var.data()[ch].as_f64() + eps).sqrt())
        .collect();
    let shift: Vec<f64> = (0..c)
        .map(|ch| beta.data()[ch].as_f64() - running_mean.data()[ch].as_f64() * scale[ch])
        .collect();
    apply_channel_affine(x, &scale, &shift)
}

/// Momentum update of running statistics; the variance uses the unbiased
/// estimator `var * count / (count - 1)`.
pub(crate) fn update_running_stats<T: Scalar>(
    running_mean: &mut Tensor<T>,
    running_var: &mut Tensor<T>,
    batch_mean: &[f64],
    batch_var: &[f64],
    count: usize,
    momentum: f64,
) {
    let unbias = if count > 1 { count as f64 / (count - 1) as f64 } else { 1.0 };
    for (rm, m) in running_mean.data_mut().iter_mut().zip(batch_mean) {
        *rm = T::cast((1.0 - momentum) * rm.as_f64() + momentum * m);
    }
    for (rv, v) in running_var.data_mut().iter_mut().zip(batch_var) {
        *rv = T::cast((1.0 - momentum) * rv.as_f64() + momentum * v * unbias);
    }
}

/// Batch normalization over the channel axis of an NCHW tensor.
///
/// In training mode the batch statistics normalize the input and the running
/// statistics are updated with `momentum`; in eval mode only the running
/// statistics are used.
#[allow(clippy::too_many_arguments)]
pub fn batch_norm2d<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    running_mean: &mut Tensor<T>,
    running_var: &mut Tensor<T>,
    eps: f64,
    momentum: f64,
    training: bool,
) -> Result<Tensor<T>> {
    if training {
        check_bn(x, &[running_mean, running_var])?;
        let [n, _, h, w] = x.dims4()?;
        let (y, stats, var) = batch_norm2d_train(x, gamma, beta, eps)?;
        update_running_stats(running_mean, running_var, &stats.mean, &var, n * h * w, momentum);
        Ok(y)
    } else {
        batch_norm2d_eval(x, gamma, beta, running_mean, running_var, eps)
    }
}

/// Returns `(dx, dgamma, dbeta)` for training-mode batch norm.
pub(crate) fn batch_norm2d_train_backward<T: Scalar>(
    x: &Tensor<T>,
    dy: &Tensor<T>,
    gamma: &Tensor<T>,
    stats: &NormStats,
) -> Result<(Tensor<T>, Vec<f64>, Vec<f64>)> {
    let [n, c, h, w] = x.dims4()?;
    let plane = h * w;
    let count = (n * plane) as f64;
    let mut dgamma = vec![0f64; c];
    let mut dbeta = vec![0f64; c];
    for (i, (xc, dc)) in x.data().chunks(plane).zip(dy.data().chunks(plane)).enumerate() {
        let ch = i % c;
        for (xv, dv) in xc.iter().zip(dc) {
            let xhat = (xv.as_f64() - stats.mean[ch]) * stats.rstd[ch];
            dgamma[ch] += dv.as_f64() * xhat;
            dbeta[ch] += dv.as_f64();
        }
    }
    let mut dx = Vec::with_capacity(x.numel());
    for (i, (xc, dc)) in x.data().chunks(plane).zip(dy.data().chunks(plane)).enumerate() {
        let ch = i % c;
        let g = gamma.data()[ch].as_f64();
        let (m1, m2) = (g * dbeta[ch] / count, g * dgamma[ch] / count);
        for (xv, dv) in xc.iter().zip(dc) {
            let xhat = (xv.as_f64() - stats.mean[ch]) * stats.rstd[ch];
            dx.push(T::cast(stats.rstd[ch] * (g * dv.as_f64() - m1 - xhat * m2)));
        }
    }
    Ok((Tensor::new(x.shape().to_vec(), dx)?, dgamma, dbeta))
}

/// Returns `(dx, dgamma, dbeta)` for eval-mode batch norm.
pub(crate) fn batch_norm2d_eval_backward<T: Scalar>(
    x: &Tensor<T>,
    dy: &Tensor<T>,
    gamma: &Tensor<T>,
    running_mean: &Tensor<T>,
    running_var: &Tensor<T>,
    eps: f64,
) -> Result<(Tensor<T>, Vec<f64>, Vec<f64>)> {
    let [_, c, h, w] = x.dims4()?;
    let plane = h * w;
    let rstd: Vec<f64> = running_var.data().iter().map(|v| 1.0 / (v.as_f64() + eps).sqrt()).collect();
    let mut dgamma = vec![0f64; c];
    let mut dbeta = vec![0f64; c];
    let mut dx = Vec::with_capacity(x.numel());
    for (i, (xc, dc)) in x.data().chunks(plane).zip(dy.data().chunks(plane)).enumerate() {
        let ch = i % c;
        let scale = gamma.data()[ch].as_f64() * rstd[ch];
        let m = running_mean.data()[ch].as_f64();
        for (xv, dv) in xc.iter().zip(dc) {
            let d = dv.as_f64();
            dgamma[ch] += d * (xv.as_f64() - m) * rstd[ch];
            dbeta[ch] += d;
            dx.push(T::cast(d * scale));
        }
    }
    Ok((Tensor::new(x.shape().to_vec(), dx)?, dgamma, dbeta))
}
