//! Peak finding on the dQ/dV posterior and the high-voltage plating verdict.

use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::derivative::DerivativePosterior;
use crate::kernel::Hyperparams;

pub const DEFAULT_THRESHOLD_V: f64 = 4.0;
pub const DEFAULT_MIN_PROMINENCE_FRAC: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeakCandidate {
    pub v_peak: f64,
    /// Posterior mean at the refined peak location, Ah/V.
    pub magnitude: f64,
    pub band_halfwidth: f64,
    pub prominence: f64,
    pub confidence_pct: f64,
}

/// Band half-width as a percentage of peak magnitude.
pub fn confidence_metric(peak: &PeakCandidate) -> f64 {
    100.0 * peak.band_halfwidth / peak.magnitude
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    Plating,
    NoPlating,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Significance {
    /// The lower band at the peak must clear the upper band at the
    /// following minimum.
    #[default]
    BandSeparated,
    MeanOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectConfig {
    pub threshold_v: f64,
    pub min_prominence_frac: f64,
    pub significance: Significance,
}

impl Default for DetectConfig {
    fn default() -> Self {
        Self {
            threshold_v: DEFAULT_THRESHOLD_V,
            min_prominence_frac: DEFAULT_MIN_PROMINENCE_FRAC,
            significance: Significance::BandSeparated,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpan {
    pub vmin: f64,
    pub vmax: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlatingReport {
    pub cycle: u32,
    pub verdict: Verdict,
    pub threshold_v: f64,
    /// Every candidate above the threshold, significant or not.
    pub peaks: Vec<PeakCandidate>,
    pub hyperparams: Hyperparams,
    pub grid: GridSpan,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DetectError {
    GridDoesNotReachThreshold { vmax: f64, threshold_v: f64 },
    InvalidThreshold,
}

impl fmt::Display for DetectError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::GridDoesNotReachThreshold { vmax, threshold_v } => {
                write!(
                    f,
                    "grid ends at {vmax} V, below the {threshold_v} V threshold"
                )
            }
            Self::InvalidThreshold => f.write_str("threshold voltage must be finite"),
        }
    }
}

impl core::error::Error for DetectError {}

/// Indices of interior local maxima. A flat top counts once, at its middle,
/// and only if it drops on both sides.
fn local_maxima(y: &[f64]) -> Vec<usize> {
    let n = y.len();
    let mut out = Vec::new();
    let mut i = 1;
    while i + 1 < n {
        if y[i - 1] < y[i] {
            let mut j = i;
            while j + 1 < n && y[j + 1] == y[i] {
                j += 1;
            }
            if j + 1 < n && y[j + 1] < y[i] {
                out.push((i + j) / 2);
            }
            i = j + 1;
        } else {
            i += 1;
        }
    }
    out
}

/// Height of `y[i]` above the higher of its two bases, where each base is
/// the lowest point between `i` and the nearest strictly higher sample (or
/// the array end) on that side.
fn prominence(y: &[f64], i: usize) -> f64 {
    let h = y[i];
    let mut left = h;
    for &v in y[..i].iter().rev() {
        if v > h {
            break;
        }
        left = left.min(v);
    }
    let mut right = h;
    for &v in &y[i + 1..] {
        if v > h {
            break;
        }
        right = right.min(v);
    }
    h - left.max(right)
}

/// Vertex of the parabola through three points, clamped to their span.
fn refine(x: [f64; 3], y: [f64; 3]) -> (f64, f64) {
    let d1 = (y[1] - y[0]) / (x[1] - x[0]);
    let d2 = (y[2] - y[1]) / (x[2] - x[1]);
    let a = (d2 - d1) / (x[2] - x[0]);
    if !(a < 0.0) {
        return (x[1], y[1]);
    }
    let b = d1 - a * (x[0] + x[1]);
    let xv = (-b / (2.0 * a)).clamp(x[0], x[2]);
    let yv = y[1] + (xv - x[1]) * (d1 + a * (xv - x[0]));
    (xv, yv)
}

fn candidates(post: &DerivativePosterior, min_prominence_frac: f64) -> Vec<(usize, PeakCandidate)> {
    let y = &post.mean;
    let n = y.len();
    if n < 5 {
        return Vec::new();
    }
    let (lo, hi) = y
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| {
            (a.min(v), b.max(v))
        });
    let floor = min_prominence_frac * (hi - lo);

    let mut out = Vec::new();
    for i in local_maxima(y) {
        let p = prominence(y, i);
        if p < floor || p <= 0.0 {
            continue;
        }
        let g = &post.grid;
        let (v_peak, magnitude) = refine([g[i - 1], g[i], g[i + 1]], [y[i - 1], y[i], y[i + 1]]);
        if !(magnitude > 0.0) {
            continue;
        }
        let band_halfwidth = post.half_width(i);
        out.push((
            i,
            PeakCandidate {
                v_peak,
                magnitude,
                band_halfwidth,
                prominence: p,
                confidence_pct: 100.0 * band_halfwidth / magnitude,
            },
        ));
    }
    out
}

/// Interior maxima of the posterior mean whose prominence is at least
/// `min_prominence_frac` of the mean's range, in ascending voltage.
pub fn find_peaks(post: &DerivativePosterior, min_prominence_frac: f64) -> Vec<PeakCandidate> {
    candidates(post, min_prominence_frac)
        .into_iter()
        .map(|(_, c)| c)
        .collect()
}

/// Plating verdict for one cycle.
pub fn classify(
    post: &DerivativePosterior,
    hyperparams: &Hyperparams,
    cycle: u32,
    cfg: &DetectConfig,
) -> Result<PlatingReport, DetectError> {
    if !cfg.threshold_v.is_finite() {
        return Err(DetectError::InvalidThreshold);
    }
    let n = post.len();
    let vmax = post.grid.last().copied().unwrap_or(f64::NEG_INFINITY);
    if vmax <= cfg.threshold_v {
        return Err(DetectError::GridDoesNotReachThreshold {
            vmax,
            threshold_v: cfg.threshold_v,
        });
    }

    let all = candidates(post, cfg.min_prominence_frac);
    let mut peaks = Vec::new();
    let mut plating = false;
    for (k, (i, c)) in all.iter().enumerate() {
        if c.v_peak <= cfg.threshold_v {
            continue;
        }
        let significant = match cfg.significance {
            Significance::MeanOnly => true,
            Significance::BandSeparated => {
                let stop = all.get(k + 1).map(|(j, _)| *j).unwrap_or(n - 1);
                let j_min = (*i + 1..=stop)
                    .min_by(|&a, &b| post.mean[a].total_cmp(&post.mean[b]))
                    .unwrap_or(n - 1);
                post.lower[*i] > post.upper[j_min]
            }
        };
        plating |= significant;
        peaks.push(*c);
    }

    Ok(PlatingReport {
        cycle,
        verdict: if plating {
            Verdict::Plating
        } else {
            Verdict::NoPlating
        },
        threshold_v: cfg.threshold_v,
        peaks,
        hyperparams: *hyperparams,
        grid: GridSpan {
            vmin: post.grid.first().copied().unwrap_or(f64::NAN),
            vmax,
            n,
        },
    })
}
