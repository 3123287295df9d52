//! Savitzky-Golay smoothing followed by finite differences: the
//! conventional dQ/dV estimate.

use alloc::vec::Vec;
use core::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::ingest::QvCurve;
use crate::math::linspace;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SgConfig {
    pub window: usize,
    pub polyorder: usize,
    pub resample_n: usize,
}

impl Default for SgConfig {
    fn default() -> Self {
        Self {
            window: 11,
            polyorder: 2,
            resample_n: 400,
        }
    }
}

impl SgConfig {
    pub fn validate(&self) -> Result<(), SgError> {
        if self.window < 5 || self.window.is_multiple_of(2) {
            return Err(SgError::InvalidWindow(self.window));
        }
        if self.polyorder < 1 || self.polyorder >= self.window {
            return Err(SgError::InvalidPolyorder {
                polyorder: self.polyorder,
                window: self.window,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SgError {
    InvalidWindow(usize),
    InvalidPolyorder { polyorder: usize, window: usize },
    WindowTooLarge { window: usize, len: usize },
    TooFewPoints(usize),
}

impl fmt::Display for SgError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::InvalidWindow(w) => write!(f, "window must be odd and at least 5, got {w}"),
            Self::InvalidPolyorder { polyorder, window } => {
                write!(f, "polyorder {polyorder} must be in 1..{window}")
            }
            Self::WindowTooLarge { window, len } => {
                write!(f, "window {window} exceeds {len} samples")
            }
            Self::TooFewPoints(n) => write!(f, "need at least 2 curve points, got {n}"),
        }
    }
}

impl core::error::Error for SgError {}

/// Weights that evaluate, at window position `at`, the least-squares
/// polynomial of degree `order` through `window` equally spaced samples.
fn weights(window: usize, order: usize, at: usize) -> Vec<f64> {
    let half = (window / 2) as f64;
    let u = |r: usize| (r as f64 - half) / half;
    let a = DMatrix::from_fn(window, order + 1, |r, c| libm::pow(u(r), c as f64));
    let e = DVector::from_fn(order + 1, |c, _| libm::pow(u(at), c as f64));
    let ata = a.transpose() * &a;
    let c = ata
        .cholesky()
        .expect("Vandermonde normal matrix is positive definite");
    (a * c.solve(&e)).iter().copied().collect()
}

/// Smooth `values` with the SG filter; the first and last `window / 2`
/// outputs come from the polynomial fitted to the nearest full window.
pub fn sg_smooth(values: &[f64], cfg: &SgConfig) -> Result<Vec<f64>, SgError> {
    cfg.validate()?;
    let (w, n) = (cfg.window, values.len());
    if n < w {
        return Err(SgError::WindowTooLarge { window: w, len: n });
    }
    let half = w / 2;
    let apply = |wt: &[f64], start: usize| -> f64 {
        wt.iter()
            .zip(&values[start..start + w])
            .map(|(a, b)| a * b)
            .sum()
    };

    let mut out = Vec::with_capacity(n);
    for i in 0..half {
        out.push(apply(&weights(w, cfg.polyorder, i), 0));
    }
    let center = weights(w, cfg.polyorder, half);
    for i in half..n - half {
        out.push(apply(&center, i - half));
    }
    for i in n - half..n {
        out.push(apply(&weights(w, cfg.polyorder, i - (n - w)), n - w));
    }
    Ok(out)
}

/// Sum of squared interior weights: the output variance for unit white noise.
pub fn noise_gain(cfg: &SgConfig) -> Result<f64, SgError> {
    cfg.validate()?;
    Ok(weights(cfg.window, cfg.polyorder, cfg.window / 2)
        .iter()
        .map(|w| w * w)
        .sum())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FdDerivative {
    pub grid: Vec<f64>,
    /// Smoothed charge on `grid`.
    pub q: Vec<f64>,
    pub dqdv: Vec<f64>,
}

fn interpolate(xs: &[f64], ys: &[f64], grid: &[f64]) -> Vec<f64> {
    let mut j = 0;
    grid.iter()
        .map(|&g| {
            while j + 2 < xs.len() && xs[j + 1] < g {
                j += 1;
            }
            let t = (g - xs[j]) / (xs[j + 1] - xs[j]);
            ys[j] + t * (ys[j + 1] - ys[j])
        })
        .collect()
}

/// Resample onto a uniform voltage grid, smooth, then difference.
pub fn fd_dqdv(curve: &QvCurve, cfg: &SgConfig) -> Result<FdDerivative, SgError> {
    cfg.validate()?;
    if curve.len() < 2 {
        return Err(SgError::TooFewPoints(curve.len()));
    }
    let grid = linspace(curve.v[0], curve.v[curve.len() - 1], cfg.resample_n);
    let q = sg_smooth(&interpolate(&curve.v, &curve.q, &grid), cfg)?;
    let n = grid.len();
    let mut d = Vec::with_capacity(n);
    d.push((q[1] - q[0]) / (grid[1] - grid[0]));
    for i in 1..n - 1 {
        d.push((q[i + 1] - q[i - 1]) / (grid[i + 1] - grid[i - 1]));
    }
    d.push((q[n - 1] - q[n - 2]) / (grid[n - 1] - grid[n - 2]));
    Ok(FdDerivative { grid, q, dqdv: d })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn curve(v: Vec<f64>, q: Vec<f64>) -> QvCurve {
        QvCurve {
            cycle: 1,
            start: 0,
            end: v.len(),
            throughput: *q.last().unwrap(),
            v,
            q,
            over_capacity: false,
        }
    }

    #[test]
    fn reproduces_low_degree_polynomials() {
        let cfg = SgConfig::default();
        let x: Vec<f64> = (0..40).map(|i| i as f64 * 0.1).collect();
        let y: Vec<f64> = x.iter().map(|t| 2.0 - 3.0 * t + 0.5 * t * t).collect();
        let s = sg_smooth(&y, &cfg).unwrap();
        for (a, b) in s.iter().zip(&y) {
            assert!((a - b).abs() < 1e-10);
        }
        let c = sg_smooth(&[4.2; 20], &cfg).unwrap();
        assert!(c.iter().all(|v| (v - 4.2).abs() < 1e-12));
    }

    #[test]
    fn known_quadratic_weights() {
        // Classic 5-point quadratic smoother: (-3, 12, 17, 12, -3) / 35.
        let w = weights(5, 2, 2);
        let want = [-3.0, 12.0, 17.0, 12.0, -3.0];
        for (a, b) in w.iter().zip(want) {
            assert!((a - b / 35.0).abs() < 1e-12);
        }
    }

    #[test]
    fn linear() {
        let cfg = SgConfig::default();
        let a: Vec<f64> = (0..30).map(|i| libm::sin(i as f64)).collect();
        let b: Vec<f64> = (0..30).map(|i| libm::cos(0.3 * i as f64)).collect();
        let mix: Vec<f64> = a.iter().zip(&b).map(|(x, y)| 2.0 * x - 0.5 * y).collect();
        let (sa, sb, sm) = (
            sg_smooth(&a, &cfg).unwrap(),
            sg_smooth(&b, &cfg).unwrap(),
            sg_smooth(&mix, &cfg).unwrap(),
        );
        for i in 0..30 {
            assert!((sm[i] - (2.0 * sa[i] - 0.5 * sb[i])).abs() < 1e-12);
        }
    }

    #[test]
    fn config_errors() {
        let bad = |window, polyorder| SgConfig {
            window,
            polyorder,
            resample_n: 100,
        };
        assert_eq!(bad(4, 2).validate(), Err(SgError::InvalidWindow(4)));
        assert_eq!(bad(3, 1).validate(), Err(SgError::InvalidWindow(3)));
        assert!(bad(7, 7).validate().is_err());
        assert!(bad(7, 0).validate().is_err());
        assert_eq!(
            sg_smooth(&[1.0; 6], &SgConfig::default()),
            Err(SgError::WindowTooLarge { window: 11, len: 6 })
        );
    }

    #[test]
    fn line_has_constant_slope() {
        let v = linspace(2.75, 4.2, 50);
        let q = v.iter().map(|x| 3.0 * x).collect();
        let d = fd_dqdv(&curve(v, q), &SgConfig::default()).unwrap();
        assert!(d.dqdv.iter().all(|s| (s - 3.0).abs() < 1e-8));
    }

    #[test]
    fn integrates_back() {
        let v = linspace(3.0, 4.0, 300);
        let q: Vec<f64> = v
            .iter()
            .map(|x| 0.02 * libm::tanh((x - 3.5) / 0.05) + 0.01 * x)
            .collect();
        let d = fd_dqdv(&curve(v.clone(), q.clone()), &SgConfig::default()).unwrap();
        let r = interpolate(&v, &q, &d.grid);
        let span = r[r.len() - 1] - r[0];
        let mut acc = r[0];
        for (i, ri) in r.iter().enumerate().skip(1) {
            acc += 0.5 * (d.dqdv[i] + d.dqdv[i - 1]) * (d.grid[i] - d.grid[i - 1]);
            assert!((acc - ri).abs() <= 5e-3 * span, "{i}");
        }
    }
}
