//! Non-parametric patch transformations.
//!
//! A `d x H x W` feature map is cut into `N = (H/h)(W/w)` non-overlapping
//! `h x w` patches of `P = hw` pixels. Patches are numbered row-major over the
//! patch grid and pixels row-major inside a patch, so pixel `(y, x)` maps to
//!
//! ```text
//! n = (y / h) * (W / w) + (x / w)
//! p = (y % h) * w + (x % w)
//! ```
//!
//! * [`npt_op1`]: `d x H x W -> P x d x N` (unfold, pixel-position planes of length N)
//! * [`npt_op2`]: `A x d x B -> B x d x A` (swap the outer axes; an involution)
//! * [`npt_op3`]: `N x d x P -> d x H x W` (fold back; inverse of `op2 . op1`)
//!
//! All three accept an optional leading batch axis.

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::kernels::Padding2d;
use crate::tensor::{Scalar, Tensor};

/// Dimension bookkeeping for one patch decomposition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchDims {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub patch_h: usize,
    pub patch_w: usize,
}

impl PatchDims {
    /// Rejects patch sizes that do not divide the feature extents.
    pub fn new(height: usize, width: usize, channels: usize, patch_h: usize, patch_w: usize) -> Result<Self> {
        if patch_h == 0 || patch_w == 0 {
            return Err(Error::InvalidArgument("patch extents must be positive".into()));
        }
        if height % patch_h != 0 || width % patch_w != 0 {
            return shape_err(format!(
                "patch {patch_h}x{patch_w} does not divide feature map {height}x{width}"
            ));
        }
        Ok(Self { height, width, channels, patch_h, patch_w })
    }

    /// Dims for a feature map zero-padded symmetrically up to the next patch
    /// multiple, together with the padding that achieves it.
    pub fn padded(
        height: usize,
        width: usize,
        channels: usize,
        patch_h: usize,
        patch_w: usize,
    ) -> Result<(Self, Padding2d)> {
        if patch_h == 0 || patch_w == 0 {
            return Err(Error::InvalidArgument("patch extents must be positive".into()));
        }
        let extra_h = (patch_h - height % patch_h) % patch_h;
        let extra_w = (patch_w - width % patch_w) % patch_w;
        let pad = Padding2d {
            top: extra_h / 2,
            bottom: extra_h - extra_h / 2,
            left: extra_w / 2,
            right: extra_w - extra_w / 2,
        };
        let dims = Self::new(height + extra_h, width + extra_w, channels, patch_h, patch_w)?;
        Ok((dims, pad))
    }

    /// `P = hw`, pixels per patch.
    pub fn patch_pixels(&self) -> usize {
        self.patch_h * self.patch_w
    }

    /// `N = HW / P`, number of patches.
    pub fn patch_count(&self) -> usize {
        (self.height / self.patch_h) * (self.width / self.patch_w)
    }

    /// `(p, n)` for spatial position `(y, x)`.
    #[inline]
    pub fn patch_index(&self, y: usize, x: usize) -> (usize, usize) {
        let n = (y / self.patch_h) * (self.width / self.patch_w) + x / self.patch_w;
        let p = (y % self.patch_h) * self.patch_w + x % self.patch_w;
        (p, n)
    }

    /// Spatial position `(y, x)` of pixel `p` in patch `n`.
    #[inline]
    pub fn position(&self, p: usize, n: usize) -> (usize, usize) {
        let grid_w = self.width / self.patch_w;
        let (py, px) = (n / grid_w, n % grid_w);
        (py * self.patch_h + p / self.patch_w, px * self.patch_w + p % self.patch_w)
    }

    fn check_spatial(&self, shape: &[usize]) -> Result<usize> {
        let batch = match *shape {
            [c, h, w] if (c, h, w) == (self.channels, self.height, self.width) => 1,
            [b, c, h, w] if (c, h, w) == (self.channels, self.height, self.width) => b,
            _ => {
                return shape_err(format!(
                    "feature shape {shape:?} is inconsistent with patch dims d={} H={} W={}",
                    self.channels, self.height, self.width
                ))
            }
        };
        Ok(batch)
    }

    fn check_patch_major(&self, shape: &[usize]) -> Result<usize> {
        let (n, p, d) = (self.patch_count(), self.patch_pixels(), self.channels);
        match *shape {
            [a, c, b] if (a, c, b) == (n, d, p) => Ok(1),
            [bt, a, c, b] if (a, c, b) == (n, d, p) => Ok(bt),
            _ => shape_err(format!(
                "patch-major shape {shape:?} is inconsistent with N={n}, d={d}, P={p}"
            )),
        }
    }
}

/// Unfold `d x H x W` into `P x d x N`.
pub fn npt_op1<T: Scalar>(x: &Tensor<T>, dims: &PatchDims) -> Result<Tensor<T>> {
    let batch = dims.check_spatial(x.shape())?;
    let (h, w, d) = (dims.height, dims.width, dims.channels);
    let (pp, nn) = (dims.patch_pixels(), dims.patch_count());
    let mut out = vec![T::zero(); x.numel()];
    let src = x.data();
    for b in 0..batch {
        let base = b * d * h * w;
        for c in 0..d {
            for y in 0..h {
                for xx in 0..w {
                    let (p, n) = dims.patch_index(y, xx);
                    out[base + (p * d + c) * nn + n] = src[base + (c * h + y) * w + xx];
                }
            }
        }
    }
    let shape = if x.ndim() == 4 { vec![batch, pp, d, nn] } else { vec![pp, d, nn] };
    Tensor::new(shape, out)
}

/// Swap the first and last of the trailing three axes: `A x d x B -> B x d x A`.
pub fn npt_op2<T: Scalar>(u: &Tensor<T>) -> Result<Tensor<T>> {
    let (batch, a, d, b) = match *u.shape() {
        [a, d, b] => (1, a, d, b),
        [bt, a, d, b] => (bt, a, d, b),
        _ => return shape_err(format!("expected a 3-D (or batched 4-D) tensor, got {:?}", u.shape())),
    };
    let mut out = vec![T::zero(); u.numel()];
    let src = u.data();
    let per = a * d * b;
    for bt in 0..batch {
        let base = bt * per;
        for i in 0..a {
            for c in 0..d {
                for j in 0..b {
                    out[base + (j * d + c) * a + i] = src[base + (i * d + c) * b + j];
                }
            }
        }
    }
    let shape = if u.ndim() == 4 { vec![batch, b, d, a] } else { vec![b, d, a] };
    Tensor::new(shape, out)
}

/// Fold `N x d x P` back into `d x H x W`.
pub fn npt_op3<T: Scalar>(g: &Tensor<T>, dims: &PatchDims) -> Result<Tensor<T>> {
    let batch = dims.check_patch_major(g.shape())?;
    let (h, w, d) = (dims.height, dims.width, dims.channels);
    let pp = dims.patch_pixels();
    let mut out = vec![T::zero(); g.numel()];
    let src = g.data();
    for b in 0..batch {
        let base = b * d * h * w;
        for c in 0..d {
            for y in 0..h {
                for xx in 0..w {
                    let (p, n) = dims.patch_index(y, xx);
                    out[base + (c * h + y) * w + xx] = src[base + (n * d + c) * pp + p];
                }
            }
        }
    }
    let shape = if g.ndim() == 4 { vec![batch, d, h, w] } else { vec![d, h, w] };
    Tensor::new(shape, out)
}

/// Inverse of [`npt_op1`]: `P x d x N -> d x H x W`.
pub(crate) fn npt_op1_inverse<T: Scalar>(u: &Tensor<T>, dims: &PatchDims) -> Result<Tensor<T>> {
    npt_op3(&npt_op2(u)?, dims)
}

/// Inverse of [`npt_op3`]: `d x H x W -> N x d x P`.
pub(crate) fn npt_op3_inverse<T: Scalar>(x: &Tensor<T>, dims: &PatchDims) -> Result<Tensor<T>> {
    npt_op2(&npt_op1(x, dims)?)
}
