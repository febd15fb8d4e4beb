//! Central finite differences, computed without the tape.

use crate::tensor::{Scalar, Tensor};

/// Gradient of `sum(f(x))` by central differences with step `h`.
pub fn finite_diff_grad<T: Scalar>(mut f: impl FnMut(&Tensor<T>) -> Tensor<T>, x: &Tensor<T>, h: f64) -> Tensor<T> {
    let mut probe = x.clone();
    let mut grad = Vec::with_capacity(x.numel());
    for i in 0..x.numel() {
        let orig = x.data()[i];
        probe.data_mut()[i] = T::cast(orig.as_f64() + h);
        let plus = f(&probe).sum();
        probe.data_mut()[i] = T::cast(orig.as_f64() - h);
        let minus = f(&probe).sum();
        probe.data_mut()[i] = orig;
        grad.push(T::cast((plus - minus) / (2.0 * h)));
    }
    Tensor::new(x.shape().to_vec(), grad).expect("gradient has the shape of x")
}

/// `max|a - b| / max(|a|_inf, |b|_inf, floor)`.
pub fn relative_error<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, floor: f64) -> f64 {
    let scale = a.max_abs().max(b.max_abs()).max(floor);
    a.max_abs_diff(b) / scale
}
