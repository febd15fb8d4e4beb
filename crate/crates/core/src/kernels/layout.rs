//! Parameter-free layout operations on channel-first tensors (`C x H x W` or
//! `N x C x H x W`): channel concatenation, channel shuffle, spatial pad and crop.

use crate::error::{shape_err, Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Splits a 3-D or 4-D shape into (batch, channels, plane size).
fn channel_view(shape: &[usize]) -> Result<(usize, usize, usize)> {
    match *shape {
        [c, h, w] => Ok((1, c, h * w)),
        [n, c, h, w] => Ok((n, c, h * w)),
        _ => shape_err(format!("expected C x H x W or N x C x H x W, got {shape:?}")),
    }
}

/// Concatenates along the channel axis: `a` occupies channels `0..Ca`, `b` the rest.
pub fn concat_channels<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (na, ca, pa) = channel_view(a.shape())?;
    let (nb, cb, pb) = channel_view(b.shape())?;
    let rank = a.ndim();
    let spatial_a = &a.shape()[rank - 2..];
    if a.ndim() != b.ndim() || na != nb || spatial_a != &b.shape()[rank - 2..] {
        return shape_err(format!(
            "cannot concatenate {:?} and {:?}: batch and spatial extents must agree",
            a.shape(),
            b.shape()
        ));
    }
    let mut data = Vec::with_capacity(a.numel() + b.numel());
    for bi in 0..na {
        data.extend_from_slice(&a.data()[bi * ca * pa..(bi + 1) * ca * pa]);
        data.extend_from_slice(&b.data()[bi * cb * pb..(bi + 1) * cb * pb]);
    }
    let mut shape = a.shape().to_vec();
    shape[rank - 3] = ca + cb;
    Tensor::new(shape, data)
}

/// Inverse of [`concat_channels`]: the first `ca` channels and the remainder.
pub fn split_channels<T: Scalar>(x: &Tensor<T>, ca: usize) -> Result<(Tensor<T>, Tensor<T>)> {
    let (n, c, p) = channel_view(x.shape())?;
    if ca > c {
        return shape_err(format!("cannot split {c} channels at {ca}"));
    }
    let cb = c - ca;
    let mut a = Vec::with_capacity(n * ca * p);
    let mut b = Vec::with_capacity(n * cb * p);
    for bi in 0..n {
        let base = bi * c * p;
        a.extend_from_slice(&x.data()[base..base + ca * p]);
        b.extend_from_slice(&x.data()[base + ca * p..base + c * p]);
    }
    let rank = x.ndim();
    let mut sa = x.shape().to_vec();
    sa[rank - 3] = ca;
    let mut sb = x.shape().to_vec();
    sb[rank - 3] = cb;
    Ok((Tensor::new(sa, a)?, Tensor::new(sb, b)?))
}

/// Source channel of output channel `out` under a shuffle with `groups`
/// groups: output `j*n + i` reads input `i*(C/n) + j`.
#[inline]
pub fn shuffle_source(out: usize, channels: usize, groups: usize) -> usize {
    let per = channels / groups;
    let (j, i) = (out / groups, out % groups);
    i * per + j
}

/// Channel shuffle: view channels as `(n, C/n)`, transpose, flatten.
pub fn channel_shuffle<T: Scalar>(x: &Tensor<T>, groups: usize) -> Result<Tensor<T>> {
    let (n, c, p) = channel_view(x.shape())?;
    if groups == 0 || c % groups != 0 {
        return Err(Error::InvalidArgument(format!(
            "shuffle groups {groups} must divide channel count {c}"
        )));
    }
    let mut data = Vec::with_capacity(x.numel());
    for bi in 0..n {
        for out in 0..c {
            let src = shuffle_source(out, c, groups);
            data.extend_from_slice(&x.data()[(bi * c + src) * p..(bi * c + src + 1) * p]);
        }
    }
    Tensor::new(x.shape().to_vec(), data)
}

/// Inverse channel permutation of [`channel_shuffle`].
pub(crate) fn channel_unshuffle<T: Scalar>(x: &Tensor<T>, groups: usize) -> Result<Tensor<T>> {
    let (n, c, p) = channel_view(x.shape())?;
    let mut data = vec![T::zero(); x.numel()];
    for bi in 0..n {
        for out in 0..c {
            let src = shuffle_source(out, c, groups);
            data[(bi * c + src) * p..(bi * c + src + 1) * p]
                .copy_from_slice(&x.data()[(bi * c + out) * p..(bi * c + out + 1) * p]);
        }
    }
    Tensor::new(x.shape().to_vec(), data)
}

/// Amounts of zero padding on each spatial side.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Padding2d {
    pub top: usize,
    pub bottom: usize,
    pub left: usize,
    pub right: usize,
}

impl Padding2d {
    pub fn is_zero(&self) -> bool {
        *self == Self::default()
    }
}

fn spatial(shape: &[usize]) -> Result<(usize, usize, usize)> {
    if shape.len() < 2 {
        return shape_err(format!("expected at least 2 axes, got {shape:?}"));
    }
    let (h, w) = (shape[shape.len() - 2], shape[shape.len() - 1]);
    let lead: usize = shape[..shape.len() - 2].iter().product();
    Ok((lead, h, w))
}

/// Zero-pads the last two axes.
pub fn pad2d<T: Scalar>(x: &Tensor<T>, pad: Padding2d) -> Result<Tensor<T>> {
    let (lead, h, w) = spatial(x.shape())?;
    let (oh, ow) = (h + pad.top + pad.bottom, w + pad.left + pad.right);
    let mut data = vec![T::zero(); lead * oh * ow];
    for l in 0..lead {
        for y in 0..h {
            let src = &x.data()[(l * h + y) * w..(l * h + y + 1) * w];
            let start = (l * oh + y + pad.top) * ow + pad.left;
            data[start..start + w].copy_from_slice(src);
        }
    }
    let mut shape = x.shape().to_vec();
    let r = shape.len();
    shape[r - 2] = oh;
    shape[r - 1] = ow;
    Tensor::new(shape, data)
}

/// Keeps the `height x width` window of the last two axes starting at `(top, left)`.
pub fn crop2d<T: Scalar>(x: &Tensor<T>, top: usize, left: usize, height: usize, width: usize) -> Result<Tensor<T>> {
    let (lead, h, w) = spatial(x.shape())?;
    if top + height > h || left + width > w {
        return shape_err(format!(
            "crop window {height}x{width} at ({top}, {left}) exceeds {h}x{w}"
        ));
    }
    let mut data = Vec::with_capacity(lead * height * width);
    for l in 0..lead {
        for y in top..top + height {
            let row = (l * h + y) * w;
            data.extend_from_slice(&x.data()[row + left..row + left + width]);
        }
    }
    let mut shape = x.shape().to_vec();
    let r = shape.len();
    shape[r - 2] = height;
    shape[r - 1] = width;
    Tensor::new(shape, data)
}
