//! Closed-form posterior of dQ/dV from a fitted value GP.
//!
//! The derivative process is jointly Gaussian with Q, so conditioning on the
//! charge observations gives
//!
//! ```text
//! μ'(X*) = K'(X*, X) Kn⁻¹ Y
//! Σ'*    = K''(X*, X*) − K'(X*, X) Kn⁻¹ K'(X, X*)
//! ```
//!
//! which is evaluated with the stored Cholesky factor.

use alloc::vec::Vec;
use core::fmt;

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::gp::FittedGP;
use crate::kernel::{self, Hyperparams};
use crate::math::{dot, sqrt, two_sided_z};

pub const DEFAULT_LEVEL: f64 = 0.95;
pub const DEFAULT_GRID_N: usize = 400;
pub const MAX_FULL_COVARIANCE: usize = 2000;

#[derive(Debug, Clone, PartialEq)]
pub enum DerivativeError {
    InvalidLevel(f64),
    EmptyGrid,
    NonFiniteGrid(usize),
    /// Variance more negative than round-off allows; the model is corrupt.
    NegativeVariance {
        index: usize,
        value: f64,
    },
    GridTooLarge(usize),
    FactorizationFailure,
    ZeroDraws,
}

impl fmt::Display for DerivativeError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::InvalidLevel(l) => write!(f, "credible level must lie in (0, 1), got {l}"),
            Self::EmptyGrid => f.write_str("empty voltage grid"),
            Self::NonFiniteGrid(i) => write!(f, "non-finite grid voltage at index {i}"),
            Self::NegativeVariance { index, value } => {
                write!(
                    f,
                    "posterior variance {value:e} at grid index {index} is negative"
                )
            }
            Self::GridTooLarge(n) => {
                write!(
                    f,
                    "full covariance limited to {MAX_FULL_COVARIANCE} points, got {n}"
                )
            }
            Self::FactorizationFailure => {
                f.write_str("derivative covariance is not positive definite")
            }
            Self::ZeroDraws => f.write_str("at least one draw is required"),
        }
    }
}

impl core::error::Error for DerivativeError {}

/// Pointwise posterior of dQ/dV on a voltage grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DerivativePosterior {
    pub grid: Vec<f64>,
    /// Ah/V
    pub mean: Vec<f64>,
    /// (Ah/V)²
    pub var: Vec<f64>,
    pub level: f64,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl DerivativePosterior {
    /// Build from mean and variance, deriving the symmetric band for `level`.
    pub fn from_moments(
        grid: Vec<f64>,
        mean: Vec<f64>,
        var: Vec<f64>,
        level: f64,
    ) -> Result<Self, DerivativeError> {
        check_level(level)?;
        let z = two_sided_z(level);
        let (lower, upper) = mean
            .iter()
            .zip(&var)
            .map(|(m, v)| {
                let h = z * sqrt(*v);
                (m - h, m + h)
            })
            .unzip();
        Ok(Self {
            grid,
            mean,
            var,
            level,
            lower,
            upper,
        })
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    /// z·sqrt(var[i]).
    pub fn half_width(&self, i: usize) -> f64 {
        0.5 * (self.upper[i] - self.lower[i])
    }
}

fn check_level(level: f64) -> Result<(), DerivativeError> {
    if level > 0.0 && level < 1.0 {
        Ok(())
    } else {
        Err(DerivativeError::InvalidLevel(level))
    }
}

fn check_grid(grid: &[f64]) -> Result<(), DerivativeError> {
    if grid.is_empty() {
        return Err(DerivativeError::EmptyGrid);
    }
    if let Some(i) = grid.iter().position(|g| !g.is_finite()) {
        return Err(DerivativeError::NonFiniteGrid(i));
    }
    Ok(())
}

/// `n` equally spaced voltages across the model's training inputs.
pub fn default_grid(model: &FittedGP, n: usize) -> Vec<f64> {
    let xs = model.training_set().xs();
    crate::math::linspace(xs[0], xs[xs.len() - 1], n)
}

/// Standardized cross-covariance column `K'(X, x*)` for one grid point.
fn cross_column(model: &FittedGP, hp: &Hyperparams, x_star_c: f64) -> DVector<f64> {
    let xc = model.centered_inputs();
    DVector::from_iterator(
        xc.len(),
        xc.iter().map(|x| kernel::k_cross(*x, x_star_c, hp)),
    )
}

/// Posterior mean, pointwise variance and credible band of dQ/dV.
pub fn derivative_posterior(
    model: &FittedGP,
    grid: &[f64],
    level: f64,
) -> Result<DerivativePosterior, DerivativeError> {
    check_level(level)?;
    check_grid(grid)?;
    let p = model.std_params().as_hyperparams();
    let t = model.training_set();
    let scale = t.y_scale();
    let l = model.chol().l_dirty();
    let prior = kernel::k_dd(0.0, 0.0, &p);
    let alpha = model.alpha().as_slice();

    let mut mean = Vec::with_capacity(grid.len());
    let mut var = Vec::with_capacity(grid.len());
    for &g in grid {
        let mut col = cross_column(model, &p, g - t.x_mean());
        mean.push(scale * dot(col.as_slice(), alpha));
        l.solve_lower_triangular_mut(&mut col);
        var.push(scale * scale * (prior - col.norm_squared()));
    }
    clip_variance(&mut var)?;
    DerivativePosterior::from_moments(grid.to_vec(), mean, var, level)
}

/// Clip round-off negatives to zero; anything below −1e-8·max is an error.
fn clip_variance(var: &mut [f64]) -> Result<(), DerivativeError> {
    let vmax = var.iter().cloned().fold(0.0f64, f64::max);
    for (i, v) in var.iter_mut().enumerate() {
        if *v < 0.0 {
            if *v < -1e-8 * vmax {
                return Err(DerivativeError::NegativeVariance {
                    index: i,
                    value: *v,
                });
            }
            *v = 0.0;
        }
    }
    Ok(())
}

/// Full posterior covariance of dQ/dV on `grid`, in (Ah/V)².
pub fn covariance_full(model: &FittedGP, grid: &[f64]) -> Result<DMatrix<f64>, DerivativeError> {
    check_grid(grid)?;
    if grid.len() > MAX_FULL_COVARIANCE {
        return Err(DerivativeError::GridTooLarge(grid.len()));
    }
    let p = model.std_params().as_hyperparams();
    let t = model.training_set();
    let gc: Vec<f64> = grid.iter().map(|g| g - t.x_mean()).collect();
    let cross = kernel::kernel_matrix(model.centered_inputs(), &gc, &p, kernel::Block::VD);
    let v = model
        .chol()
        .l_dirty()
        .solve_lower_triangular(&cross)
        .ok_or(DerivativeError::FactorizationFailure)?;
    let prior = kernel::kernel_matrix(&gc, &gc, &p, kernel::Block::DD);
    let mut cov = prior - v.transpose() * &v;
    let s2 = t.y_scale() * t.y_scale();
    cov *= s2;
    // Exact symmetry; the product above is symmetric only up to round-off.
    let n = cov.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let m = 0.5 * (cov[(i, j)] + cov[(j, i)]);
            cov[(i, j)] = m;
            cov[(j, i)] = m;
        }
    }
    Ok(cov)
}

/// Lower factor of `cov` after adding the smallest diagonal jitter (scaled to
/// the mean diagonal, grown ×10 per retry) that makes it factorize.
pub(crate) fn jittered_factor(cov: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let n = cov.nrows();
    let mean_diag = (0..n).map(|i| cov[(i, i)]).sum::<f64>() / n as f64;
    let base = if mean_diag > 0.0 { mean_diag } else { 1.0 };
    let mut eps = 1e-10 * base;
    for _ in 0..8 {
        let mut a = cov.clone();
        for i in 0..n {
            a[(i, i)] += eps;
        }
        if let Some(c) = Cholesky::new(a) {
            return Some(c.unpack());
        }
        eps *= 10.0;
    }
    None
}

/// `n` joint draws of dQ/dV on `grid` from the posterior; deterministic in `seed`.
pub fn sample_derivative(
    model: &FittedGP,
    grid: &[f64],
    n: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>, DerivativeError> {
    if n == 0 {
        return Err(DerivativeError::ZeroDraws);
    }
    let mean = derivative_posterior(model, grid, DEFAULT_LEVEL)?.mean;
    let cov = covariance_full(model, grid)?;
    let l = jittered_factor(&cov).ok_or(DerivativeError::FactorizationFailure)?;
    Ok(draw_mvn(&mean, &l, n, seed))
}

/// Draws `mean + L z` with `z` standard normal.
pub fn draw_mvn(mean: &[f64], lower: &DMatrix<f64>, n: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = mean.len();
    let mut z = DVector::<f64>::zeros(m);
    (0..n)
        .map(|_| {
            for zi in z.iter_mut() {
                *zi = StandardNormal.sample(&mut rng);
            }
            let x = lower * &z;
            mean.iter().zip(x.iter()).map(|(a, b)| a + b).collect()
        })
        .collect()
}

/// Prior covariance of `[f(xs); f'(xs)]` as one `2n × 2n` block matrix.
pub fn joint_prior_covariance(xs: &[f64], hp: &Hyperparams) -> DMatrix<f64> {
    let n = xs.len();
    let kvv = kernel::kernel_matrix(xs, xs, hp, kernel::Block::VV);
    let kvd = kernel::kernel_matrix(xs, xs, hp, kernel::Block::VD);
    let kdd = kernel::kernel_matrix(xs, xs, hp, kernel::Block::DD);
    let mut out = DMatrix::zeros(2 * n, 2 * n);
    out.view_mut((0, 0), (n, n)).copy_from(&kvv);
    out.view_mut((0, n), (n, n)).copy_from(&kvd);
    out.view_mut((n, 0), (n, n)).copy_from(&kvd.transpose());
    out.view_mut((n, n), (n, n)).copy_from(&kdd);
    out
}
