//! Squared-exponential kernel over voltage, plus the derivative blocks used
//! for joint value/derivative inference.
//!
//! Units: voltage in V, charge in Ah. `k` is in Ah², `k_cross` in Ah²/V and
//! `k_dd` in Ah²/V².

use core::fmt;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::math::exp;

/// Kernel hyperparameters in natural units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawHyperparams")]
pub struct Hyperparams {
    /// Length scale ℓ in volts.
    pub length_scale: f64,
    /// Signal standard deviation σ_f in Ah.
    pub signal_std: f64,
    /// Observation noise standard deviation σ_n in Ah.
    pub noise_std: f64,
}

#[derive(Deserialize)]
struct RawHyperparams {
    length_scale: f64,
    signal_std: f64,
    noise_std: f64,
}

impl TryFrom<RawHyperparams> for Hyperparams {
    type Error = HyperparamError;
    fn try_from(r: RawHyperparams) -> Result<Self, Self::Error> {
        Hyperparams::new(r.length_scale, r.signal_std, r.noise_std)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum HyperparamError {
    LengthScale(f64),
    SignalStd(f64),
    NoiseStd(f64),
}

impl fmt::Display for HyperparamError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::LengthScale(v) => write!(f, "length scale must be finite and > 0, got {v}"),
            Self::SignalStd(v) => write!(f, "signal std must be finite and > 0, got {v}"),
            Self::NoiseStd(v) => write!(f, "noise std must be finite and >= 0, got {v}"),
        }
    }
}

impl core::error::Error for HyperparamError {}

impl Hyperparams {
    pub fn new(
        length_scale: f64,
        signal_std: f64,
        noise_std: f64,
    ) -> Result<Self, HyperparamError> {
        if !(length_scale.is_finite() && length_scale > 0.0) {
            return Err(HyperparamError::LengthScale(length_scale));
        }
        if !(signal_std.is_finite() && signal_std > 0.0) {
            return Err(HyperparamError::SignalStd(signal_std));
        }
        if !(noise_std.is_finite() && noise_std >= 0.0) {
            return Err(HyperparamError::NoiseStd(noise_std));
        }
        Ok(Self {
            length_scale,
            signal_std,
            noise_std,
        })
    }

    /// Prior variance of the derivative process, σ_f²/ℓ².
    pub fn derivative_prior_variance(&self) -> f64 {
        let r = self.signal_std / self.length_scale;
        r * r
    }
}

/// Diagonal jitter added to any value-value Gram matrix before factorization.
pub fn jitter(signal_std: f64) -> f64 {
    (1e-12 * signal_std * signal_std).max(1e-10)
}

#[inline]
fn se(d: f64, hp: &Hyperparams) -> f64 {
    let l2 = hp.length_scale * hp.length_scale;
    hp.signal_std * hp.signal_std * exp(-0.5 * d * d / l2)
}

/// Value covariance `σ_f² exp(-(x - x')² / 2ℓ²)`.
#[inline]
pub fn k(x: f64, x_prime: f64, hp: &Hyperparams) -> f64 {
    se(x - x_prime, hp)
}

/// Covariance between `f(x)` and `f'(x_star)`: `∂k(x, x*)/∂x* = k · (x - x*)/ℓ²`.
#[inline]
pub fn k_cross(x: f64, x_star: f64, hp: &Hyperparams) -> f64 {
    let d = x - x_star;
    se(d, hp) * d / (hp.length_scale * hp.length_scale)
}

/// Covariance between `f'(a)` and `f'(b)`: `k · (1/ℓ² - (a - b)²/ℓ⁴)`.
#[inline]
pub fn k_dd(a: f64, b: f64, hp: &Hyperparams) -> f64 {
    let d = a - b;
    let l2 = hp.length_scale * hp.length_scale;
    se(d, hp) * (1.0 / l2 - d * d / (l2 * l2))
}

/// Which covariance block to assemble.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Block {
    /// `K(X, X')`, value-value.
    VV,
    /// `K'(X, X')`, value at `xs` against derivative at `xs2`.
    VD,
    /// `K''(X, X')`, derivative-derivative.
    DD,
}

/// Assemble a covariance block with rows indexed by `xs` and columns by `xs2`.
pub fn kernel_matrix(xs: &[f64], xs2: &[f64], hp: &Hyperparams, block: Block) -> DMatrix<f64> {
    let f = match block {
        Block::VV => k,
        Block::VD => k_cross,
        Block::DD => k_dd,
    };
    DMatrix::from_fn(xs.len(), xs2.len(), |i, j| f(xs[i], xs2[j], hp))
}
