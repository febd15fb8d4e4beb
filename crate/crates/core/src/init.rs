//! Deterministic parameter initialization.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::param::Module;
use crate::tensor::{Scalar, Tensor};

/// He-uniform bound `sqrt(6 / fan_in)` for a weight of the given shape.
///
/// Fan-in is the product of every axis after the first, which covers linear
/// `[out, in]`, convolution `[out, in/groups, kh, kw]` and transposed
/// convolution `[in, out, kh, kw]` kernels.
pub fn fan_in_bound(shape: &[usize]) -> f64 {
    let fan_in: usize = shape.iter().skip(1).product();
    (6.0 / fan_in.max(1) as f64).sqrt()
}

/// Draws every weight with two or more axes from `U(-b, b)` with the bound
/// above, in parameter-name order. Biases and shifts become 0, scales and
/// running variances 1.
pub fn init_params<T: Scalar, M: Module<T> + ?Sized>(module: &mut M, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for (name, p) in module.named_params_mut() {
        let shape = p.value.shape().to_vec();
        let leaf = name.rsplit('.').next().unwrap_or(&name);
        p.value = if shape.len() >= 2 {
            let b = fan_in_bound(&shape);
            Tensor::from_fn(shape, |_| T::cast(rng.gen_range(-b..b)))
        } else if matches!(leaf, "gamma" | "running_var") {
            Tensor::ones(shape)
        } else {
            Tensor::zeros(shape)
        };
    }
}
