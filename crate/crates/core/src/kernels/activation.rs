use serde::{Deserialize, Serialize};

use crate::tensor::{Scalar, Tensor};

const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
const GELU_CUBIC: f64 = 0.044_715;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    /// Tanh approximation: `0.5x(1 + tanh(sqrt(2/pi)(x + 0.044715x^3)))`.
    Gelu,
    /// `min(max(x, 0), 6)`.
    Relu6,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Gelu => {
                let inner = SQRT_2_OVER_PI * (x + GELU_CUBIC * x * x * x);
                0.5 * x * (1.0 + inner.tanh())
            }
            Activation::Relu6 => x.clamp(0.0, 6.0),
        }
    }

    #[inline]
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Gelu => {
                let inner = SQRT_2_OVER_PI * (x + GELU_CUBIC * x * x * x);
                let t = inner.tanh();
                let dinner = SQRT_2_OVER_PI * (1.0 + 3.0 * GELU_CUBIC * x * x);
                0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner
            }
            Activation::Relu6 => {
                if x > 0.0 && x < 6.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

pub fn activation<T: Scalar>(x: &Tensor<T>, kind: Activation) -> Tensor<T> {
    x.map(|v| T::cast(kind.apply(v.as_f64())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixed_points_and_clamp() {
        assert_eq!(Activation::Gelu.apply(0.0), 0.0);
        assert_eq!(Activation::Relu6.apply(0.0), 0.0);
        assert_eq!(Activation::Relu6.apply(7.3), 6.0);
        assert_eq!(Activation::Relu6.apply(-2.0), 0.0);
    }

    #[test]
    fn gelu_at_one() {
        // 0.5 * (1 + tanh(sqrt(2/pi) * 1.044715)) = 0.841191990...
        assert!((Activation::Gelu.apply(1.0) - 0.841_192).abs() < 1e-6);
    }

    #[test]
    fn gelu_derivative_matches_central_difference() {
        for &x in &[-3.0, -1.2, -0.1, 0.0, 0.4, 1.0, 2.5] {
            let h = 1e-6;
            let fd = (Activation::Gelu.apply(x + h) - Activation::Gelu.apply(x - h)) / (2.0 * h);
            assert!((fd - Activation::Gelu.derivative(x)).abs() < 1e-8, "x={x}");
        }
    }
}
