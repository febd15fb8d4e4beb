//! Direct 2-D convolution and transposed convolution (cross-correlation, NCHW).
//!
//! Every output plane is accumulated in an `f64` buffer in a fixed
//! (channel, ky, kx, row, column) order, so results are bit-identical
//! whether planes are computed serially or by the rayon pool.

use std::ops::Range;

use rayon::prelude::*;

use crate::error::{shape_err, Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Planes below this many multiply-accumulates are not worth a task.
const PAR_THRESHOLD: usize = 1 << 15;

pub(crate) fn for_each_plane<T: Send>(
    out: &mut [T],
    plane: usize,
    work: usize,
    f: impl Fn(usize, &mut [T]) + Sync + Send,
) {
    if plane == 0 {
        return;
    }
    if work >= PAR_THRESHOLD && out.len() > plane {
        out.par_chunks_mut(plane).enumerate().for_each(|(i, c)| f(i, c));
    } else {
        out.chunks_mut(plane).enumerate().for_each(|(i, c)| f(i, c));
    }
}

/// Output extent of a strided, padded correlation: `floor((n + 2p - k)/s) + 1`.
pub fn conv_out_extent(input: usize, kernel: usize, stride: usize, padding: usize) -> Result<usize> {
    if stride == 0 {
        return Err(Error::InvalidArgument("stride must be at least 1".into()));
    }
    let padded = input + 2 * padding;
    if padded < kernel {
        return shape_err(format!(
            "kernel extent {kernel} exceeds padded input extent {padded}"
        ));
    }
    Ok((padded - kernel) / stride + 1)
}

/// Output extent of a transposed convolution: `(n - 1)s - 2p + k`.
pub fn conv_transpose_out_extent(input: usize, kernel: usize, stride: usize, padding: usize) -> Result<usize> {
    if stride == 0 {
        return Err(Error::InvalidArgument("stride must be at least 1".into()));
    }
    let full = input.saturating_sub(1) * stride + kernel;
    if input == 0 || full <= 2 * padding {
        return shape_err(format!(
            "transposed convolution of extent {input} with kernel {kernel}, stride {stride}, padding {padding} is empty"
        ));
    }
    Ok(full - 2 * padding)
}

/// Output positions `o` whose tap `k` lands inside the input: `0 <= o*s + k - p < n`.
#[inline]
fn tap_range(k: usize, stride: usize, padding: usize, input: usize, output: usize) -> Range<usize> {
    let lo = if padding > k { (padding - k).div_ceil(stride) } else { 0 };
    let hi = if input + padding > k { ((input - 1 + padding - k) / stride + 1).min(output) } else { 0 };
    lo.min(hi)..hi
}

struct ConvDims {
    n: usize,
    c_in: usize,
    h: usize,
    w: usize,
    c_out: usize,
    cpg: usize,
    kh: usize,
    kw: usize,
    groups: usize,
}

fn check_conv<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, stride: usize, groups: usize) -> Result<ConvDims> {
    let [n, c_in, h, wd] = x.dims4()?;
    let [c_out, cpg, kh, kw] = w.dims4()?;
    if stride == 0 {
        return Err(Error::InvalidArgument("stride must be at least 1".into()));
    }
    if groups == 0 {
        return Err(Error::InvalidArgument("groups must be at least 1".into()));
    }
    if c_in % groups != 0 {
        return Err(Error::InvalidArgument(format!(
            "input channels {c_in} are not divisible by groups {groups}"
        )));
    }
    if c_out % groups != 0 {
        return Err(Error::InvalidArgument(format!(
            "output channels {c_out} are not divisible by groups {groups}"
        )));
    }
    if cpg * groups != c_in {
        return shape_err(format!(
            "kernel expects {} input channels ({cpg} per group x {groups} groups) but input has {c_in}",
            cpg * groups
        ));
    }
    Ok(ConvDims { n, c_in, h, w: wd, c_out, cpg, kh, kw, groups })
}

fn check_bias<T: Scalar>(b: Option<&Tensor<T>>, channels: usize) -> Result<()> {
    if let Some(b) = b {
        if b.shape() != [channels] {
            return shape_err(format!("bias shape {:?} does not match {channels} output channels", b.shape()));
        }
    }
    Ok(())
}

/// Grouped 2-D cross-correlation.
///
/// `x` is `N x C_in x H x W`; `w` is `C_out x C_in/groups x kh x kw`.
pub fn conv2d<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: Option<&Tensor<T>>,
    stride: usize,
    padding: usize,
    groups: usize,
) -> Result<Tensor<T>> {
    let d = check_conv(x, w, stride, groups)?;
    check_bias(b, d.c_out)?;
    let oh = conv_out_extent(d.h, d.kh, stride, padding)?;
    let ow = conv_out_extent(d.w, d.kw, stride, padding)?;
    let opg = d.c_out / d.groups;
    let (xd, wdat) = (x.data(), w.data());
    let bias = b.map(|b| b.data());
    let plane_in = d.h * d.w;
    let work = d.cpg * d.kh * d.kw * oh * ow;

    let mut out = vec![T::zero(); d.n * d.c_out * oh * ow];
    for_each_plane(&mut out, oh * ow, work, |idx, dst| {
        let (bi, oc) = (idx / d.c_out, idx % d.c_out);
        let g = oc / opg;
        let mut acc = vec![0f64; oh * ow];
        for icl in 0..d.cpg {
            let ic = g * d.cpg + icl;
            let xplane = &xd[(bi * d.c_in + ic) * plane_in..][..plane_in];
            for ky in 0..d.kh {
                let rows = tap_range(ky, stride, padding, d.h, oh);
                for kx in 0..d.kw {
                    let wv = wdat[((oc * d.cpg + icl) * d.kh + ky) * d.kw + kx].as_f64();
                    let cols = tap_range(kx, stride, padding, d.w, ow);
                    for oy in rows.clone() {
                        let iy = oy * stride + ky - padding;
                        let xrow = &xplane[iy * d.w..(iy + 1) * d.w];
                        let arow = &mut acc[oy * ow..(oy + 1) * ow];
                        for ox in cols.clone() {
                            arow[ox] += wv * xrow[ox * stride + kx - padding].as_f64();
                        }
                    }
                }
            }
        }
        let bv = bias.map_or(0.0, |b| b[oc].as_f64());
        for (o, a) in dst.iter_mut().zip(&acc) {
            *o = T::cast(a + bv);
        }
    });
    Tensor::new([d.n, d.c_out, oh, ow], out)
}

/// Gradient of [`conv2d`] with respect to its input, i.e. the scatter-add
/// adjoint. `dy` is `N x C_out x OH x OW`; the result is `N x C_in x in_h x in_w`.
pub(crate) fn conv2d_input_grad<T: Scalar>(
    dy: &Tensor<T>,
    w: &Tensor<T>,
    in_hw: (usize, usize),
    stride: usize,
    padding: usize,
    groups: usize,
) -> Result<Tensor<T>> {
    let [n, c_out, oh, ow] = dy.dims4()?;
    let [wc_out, cpg, kh, kw] = w.dims4()?;
    if wc_out != c_out {
        return shape_err(format!(
            "kernel has {wc_out} output channels but the incoming tensor has {c_out}"
        ));
    }
    if groups == 0 || c_out % groups != 0 {
        return Err(Error::InvalidArgument(format!(
            "channels {c_out} are not divisible by groups {groups}"
        )));
    }
    let (h, wd) = in_hw;
    let c_in = cpg * groups;
    let opg = c_out / groups;
    let (dyd, wdat) = (dy.data(), w.data());
    let plane_out = oh * ow;
    let work = opg * kh * kw * plane_out;

    let mut out = vec![T::zero(); n * c_in * h * wd];
    for_each_plane(&mut out, h * wd, work, |idx, dst| {
        let (bi, ic) = (idx / c_in, idx % c_in);
        let (g, icl) = (ic / cpg, ic % cpg);
        let mut acc = vec![0f64; h * wd];
        for ocl in 0..opg {
            let oc = g * opg + ocl;
            let dplane = &dyd[(bi * c_out + oc) * plane_out..][..plane_out];
            for ky in 0..kh {
                let rows = tap_range(ky, stride, padding, h, oh);
                for kx in 0..kw {
                    let wv = wdat[((oc * cpg + icl) * kh + ky) * kw + kx].as_f64();
                    let cols = tap_range(kx, stride, padding, wd, ow);
                    for oy in rows.clone() {
                        let iy = oy * stride + ky - padding;
                        let drow = &dplane[oy * ow..(oy + 1) * ow];
                        let arow = &mut acc[iy * wd..(iy + 1) * wd];
                        for ox in cols.clone() {
                            arow[ox * stride + kx - padding] += wv * drow[ox].as_f64();
                        }
                    }
                }
            }
        }
        for (o, a) in dst.iter_mut().zip(&acc) {
            *o = T::cast(*a);
        }
    });
    Tensor::new([n, c_in, h, wd], out)
}

/// Gradient of [`conv2d`] with respect to its kernel.
pub(crate) fn conv2d_weight_grad<T: Scalar>(
    x: &Tensor<T>,
    dy: &Tensor<T>,
    kernel: (usize, usize),
    stride: usize,
    padding: usize,
    groups: usize,
) -> Result<Tensor<T>> {
    let [n, c_in, h, wd] = x.dims4()?;
    let [dn, c_out, oh, ow] = dy.dims4()?;
    if dn != n {
        return shape_err(format!("batch extents differ: {n} vs {dn}"));
    }
    if groups == 0 || c_in % groups != 0 || c_out % groups != 0 {
        return Err(Error::InvalidArgument(format!(
            "channels {c_in}->{c_out} are not divisible by groups {groups}"
        )));
    }
    let (kh, kw) = kernel;
    let cpg = c_in / groups;
    let opg = c_out / groups;
    let (xd, dyd) = (x.data(), dy.data());
    let work = n * cpg * kh * kw * oh * ow;

    let mut out = vec![T::zero(); c_out * cpg * kh * kw];
    for_each_plane(&mut out, cpg * kh * kw, work, |oc, dst| {
        let g = oc / opg;
        for icl in 0..cpg {
            let ic = g * cpg + icl;
            for ky in 0..kh {
                let rows = tap_range(ky, stride, padding, h, oh);
                for kx in 0..kw {
                    let cols = tap_range(kx, stride, padding, wd, ow);
                    let mut acc = 0f64;
                    for bi in 0..n {
                        let xplane = &xd[(bi * c_in + ic) * h * wd..][..h * wd];
                        let dplane = &dyd[(bi * c_out + oc) * oh * ow..][..oh * ow];
                        for oy in rows.clone() {
                            let iy = oy * stride + ky - padding;
                            let xrow = &xplane[iy * wd..(iy + 1) * wd];
                            let drow = &dplane[oy * ow..(oy + 1) * ow];
                            for ox in cols.clone() {
                                acc += drow[ox].as_f64() * xrow[ox * stride + kx - padding].as_f64();
                            }
                        }
                    }
                    dst[(icl * kh + ky) * kw + kx] = T::cast(acc);
                }
            }
        }
    });
    Tensor::new([c_out, cpg, kh, kw], out)
}

/// Per-channel sums over batch and spatial axes of an NCHW tensor.
pub(crate) fn channel_sums<T: Scalar>(t: &Tensor<T>) -> Result<Vec<f64>> {
    let [n, c, h, w] = t.dims4()?;
    let mut sums = vec![0f64; c];
    for bi in 0..n {
        for (ch, s) in sums.iter_mut().enumerate() {
            *s += t.data()[(bi * c + ch) * h * w..][..h * w].iter().map(|v| v.as_f64()).sum::<f64>();
        }
    }
    Ok(sums)
}

/// 2-D transposed convolution.
///
/// `x` is `N x C_in x H x W`; `w` is `C_in x C_out x kh x kw` (the layout of
/// the forward convolution it transposes). Output extent is `(H-1)s - 2p + kh`.
pub fn conv_transpose2d<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: Option<&Tensor<T>>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>> {
    let [_, c_in, h, wd] = x.dims4()?;
    let [wc_in, c_out, kh, kw] = w.dims4()?;
    if wc_in != c_in {
        return shape_err(format!(
            "transposed kernel expects {wc_in} input channels but input has {c_in}"
        ));
    }
    check_bias(b, c_out)?;
    let oh = conv_transpose_out_extent(h, kh, stride, padding)?;
    let ow = conv_transpose_out_extent(wd, kw, stride, padding)?;
    let mut y = conv2d_input_grad(x, w, (oh, ow), stride, padding, 1)?;
    if let Some(b) = b {
        add_channel_bias(&mut y, b);
    }
    Ok(y)
}

fn add_channel_bias<T: Scalar>(y: &mut Tensor<T>, b: &Tensor<T>) {
    let [_, c, h, w] = y.dims4().expect("4-D");
    let plane = h * w;
    for (i, chunk) in y.data_mut().chunks_mut(plane).enumerate() {
        let bv = b.data()[i % c].as_f64();
        for v in chunk {
            *v = T::cast(v.as_f64() + bv);
        }
    }
}
