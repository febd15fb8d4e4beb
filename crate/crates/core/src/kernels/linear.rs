use rayon::prelude::*;

use crate::error::{shape_err, Result};
use crate::tensor::{Scalar, Tensor};

const PAR_ROWS: usize = 1 << 14;

fn check_linear<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, b: Option<&Tensor<T>>) -> Result<(usize, usize, usize)> {
    let &[f_out, f_in] = w.shape() else {
        return shape_err(format!("linear weight must be 2-D, got {:?}", w.shape()));
    };
    let Some(&last) = x.shape().last() else {
        return shape_err("linear input must have at least one axis");
    };
    if last != f_in {
        return shape_err(format!(
            "linear expects last axis {f_in}, input shape is {:?}",
            x.shape()
        ));
    }
    if let Some(b) = b {
        if b.shape() != [f_out] {
            return shape_err(format!("linear bias shape {:?} does not match {f_out}", b.shape()));
        }
    }
    let rows = if f_in == 0 { 0 } else { x.numel() / f_in };
    Ok((rows, f_in, f_out))
}

/// `y = x . w^T + b`, applied over every leading index of `x`.
pub fn linear<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, b: Option<&Tensor<T>>) -> Result<Tensor<T>> {
    let (rows, f_in, f_out) = check_linear(x, w, b)?;
    let (xd, wd) = (x.data(), w.data());
    let bias = b.map(|b| b.data());
    let mut out = vec![T::zero(); rows * f_out];
    let row = |(r, dst): (usize, &mut [T])| {
        let xr = &xd[r * f_in..(r + 1) * f_in];
        for (o, d) in dst.iter_mut().enumerate() {
            let wr = &wd[o * f_in..(o + 1) * f_in];
            let mut acc = bias.map_or(0.0, |b| b[o].as_f64());
            for (a, c) in xr.iter().zip(wr) {
                acc += a.as_f64() * c.as_f64();
            }
            *d = T::cast(acc);
        }
    };
    if f_out > 0 {
        if rows * f_in * f_out >= PAR_ROWS {
            out.par_chunks_mut(f_out).enumerate().for_each(row);
        } else {
            out.chunks_mut(f_out).enumerate().for_each(row);
        }
    }
    let mut shape = x.shape().to_vec();
    *shape.last_mut().expect("non-empty") = f_out;
    Tensor::new(shape, out)
}

pub(crate) fn linear_input_grad<T: Scalar>(dy: &Tensor<T>, w: &Tensor<T>, x_shape: &[usize]) -> Result<Tensor<T>> {
    let &[f_out, f_in] = w.shape() else {
        return shape_err("linear weight must be 2-D");
    };
    let rows = if f_out == 0 { 0 } else { dy.numel() / f_out };
    let (dd, wd) = (dy.data(), w.data());
    let mut out = vec![0f64; rows * f_in];
    for r in 0..rows {
        let acc = &mut out[r * f_in..(r + 1) * f_in];
        for o in 0..f_out {
            let g = dd[r * f_out + o].as_f64();
            for (a, c) in acc.iter_mut().zip(&wd[o * f_in..(o + 1) * f_in]) {
                *a += g * c.as_f64();
            }
        }
    }
    Tensor::new(x_shape.to_vec(), out.into_iter().map(T::cast).collect())
}

pub(crate) fn linear_weight_grad<T: Scalar>(x: &Tensor<T>, dy: &Tensor<T>, f_out: usize) -> Result<Tensor<T>> {
    let f_in = *x.shape().last().expect("checked in forward");
    let rows = if f_in == 0 { 0 } else { x.numel() / f_in };
    let (xd, dd) = (x.data(), dy.data());
    let mut out = vec![T::zero(); f_out * f_in];
    let per_out = |(o, dst): (usize, &mut [T])| {
        let mut acc = vec![0f64; f_in];
        for r in 0..rows {
            let g = dd[r * f_out + o].as_f64();
            for (a, v) in acc.iter_mut().zip(&xd[r * f_in..(r + 1) * f_in]) {
                *a += g * v.as_f64();
            }
        }
        for (d, a) in dst.iter_mut().zip(acc) {
            *d = T::cast(a);
        }
    };
    if f_in > 0 {
        if rows * f_in * f_out >= PAR_ROWS {
            out.par_chunks_mut(f_in).enumerate().for_each(per_out);
        } else {
            out.chunks_mut(f_in).enumerate().for_each(per_out);
        }
    }
    Tensor::new([f_out, f_in], out)
}

/// Column sums over all leading indices (bias gradient).
pub(crate) fn last_axis_sums<T: Scalar>(dy: &Tensor<T>) -> Vec<f64> {
    let f = *dy.shape().last().unwrap_or(&0);
    let mut sums = vec![0f64; f];
    if f > 0 {
        for row in dy.data().chunks(f) {
            for (s, v) in sums.iter_mut().zip(row) {
                *s += v.as_f64();
            }
        }
    }
    sums
}
