//! From raw cycler samples to clean Q(V) training curves.
//!
//! Pipeline: [`extract_cc_charge`] finds constant-current charge runs,
//! [`coulomb_count`] integrates current into charge, and [`clean_qv`] turns
//! the time-ordered trace into a strictly increasing voltage axis.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::math::{fabs, median};

pub const DEFAULT_VMIN: f64 = 2.75;
pub const DEFAULT_VMAX: f64 = 4.2;
pub const DEFAULT_MAX_POINTS: usize = 500;
pub const DEFAULT_CC_TOL: f64 = 0.02;
/// Voltages closer than this (0.1 mV) are merged.
pub const DUPLICATE_TOL_V: f64 = 1e-4;
pub const MIN_SEGMENT_SAMPLES: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub enum IngestError {
    EmptyLog,
    /// 1-based data row whose timestamp does not advance.
    NonMonotonicTime(usize),
    NonFiniteSample(usize),
    NoChargeSegments,
    TooFewPoints(usize),
}

impl fmt::Display for IngestError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::EmptyLog => f.write_str("log contains no samples"),
            Self::NonMonotonicTime(r) => write!(f, "time does not increase at row {r}"),
            Self::NonFiniteSample(r) => write!(f, "non-finite value at row {r}"),
            Self::NoChargeSegments => f.write_str("no constant-current charge segments found"),
            Self::TooFewPoints(n) => write!(f, "only {n} points left after cleaning (need 4)"),
        }
    }
}

impl core::error::Error for IngestError {}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    /// s
    pub t: f64,
    /// A, positive while charging
    pub current: f64,
    /// V
    pub voltage: f64,
    pub cycle: Option<u32>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LogMetadata {
    /// Nominal capacity in Ah.
    pub capacity_ah: Option<f64>,
    pub temperature: Option<String>,
    pub c_rate: Option<String>,
    pub label: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChargeLog {
    samples: Vec<Sample>,
    pub metadata: LogMetadata,
}

impl ChargeLog {
    /// Validates finiteness and that time increases within each cycle.
    /// Row numbers in errors are 1-based sample positions.
    pub fn new(samples: Vec<Sample>, metadata: LogMetadata) -> Result<Self, IngestError> {
        if samples.is_empty() {
            return Err(IngestError::EmptyLog);
        }
        for (i, s) in samples.iter().enumerate() {
            if !(s.t.is_finite() && s.current.is_finite() && s.voltage.is_finite()) {
                return Err(IngestError::NonFiniteSample(i + 1));
            }
            if i > 0 {
                let p = &samples[i - 1];
                if p.cycle == s.cycle && s.t <= p.t {
                    return Err(IngestError::NonMonotonicTime(i + 1));
                }
            }
        }
        Ok(Self { samples, metadata })
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<Sample> {
        self.samples
    }

    pub fn has_cycle_column(&self) -> bool {
        self.samples.iter().any(|s| s.cycle.is_some())
    }
}

/// A maximal constant-current charge run, as indices into the log.
#[derive(Debug, Clone, PartialEq)]
pub struct ChargeSegment {
    pub cycle: u32,
    /// First sample index (inclusive).
    pub start: usize,
    /// Last sample index (exclusive).
    pub end: usize,
    pub samples: Vec<Sample>,
    pub nominal_capacity: Option<f64>,
}

impl ChargeSegment {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Split the log into constant-current charging runs.
///
/// A run is a maximal stretch with `I > 0` (and a single cycle label) whose
/// samples all lie within `tol` × its median current. Stretches that break
/// the tolerance are split recursively; runs shorter than
/// [`MIN_SEGMENT_SAMPLES`] are dropped.
pub fn extract_cc_charge(log: &ChargeLog, tol: f64) -> Result<Vec<ChargeSegment>, IngestError> {
    let s = log.samples();
    let mut ranges = Vec::new();
    let mut i = 0;
    while i < s.len() {
        if s[i].current > 0.0 {
            let mut j = i + 1;
            while j < s.len() && s[j].current > 0.0 && s[j].cycle == s[i].cycle {
                j += 1;
            }
            split_constant(s, i, j, tol, &mut ranges);
            i = j;
        } else {
            i += 1;
        }
    }
    if ranges.is_empty() {
        return Err(IngestError::NoChargeSegments);
    }
    ranges.sort_unstable();
    Ok(ranges
        .into_iter()
        .enumerate()
        .map(|(ord, (a, b))| ChargeSegment {
            cycle: s[a].cycle.unwrap_or(ord as u32 + 1),
            start: a,
            end: b,
            samples: s[a..b].to_vec(),
            nominal_capacity: log.metadata.capacity_ah,
        })
        .collect())
}

fn split_constant(s: &[Sample], a: usize, b: usize, tol: f64, out: &mut Vec<(usize, usize)>) {
    if b - a < MIN_SEGMENT_SAMPLES {
        return;
    }
    let currents: Vec<f64> = s[a..b].iter().map(|x| x.current).collect();
    let m = median(&currents);
    let within = |k: usize| fabs(s[k].current - m) <= tol * m;
    if (a..b).all(within) {
        out.push((a, b));
        return;
    }
    if !(a..b).any(within) {
        // No sample near the median (e.g. two equal-length current levels):
        // split at the largest step in current.
        let k = (a + 1..b)
            .max_by(|&x, &y| {
                let dx = fabs(s[x].current - s[x - 1].current);
                let dy = fabs(s[y].current - s[y - 1].current);
                dx.total_cmp(&dy).then(y.cmp(&x))
            })
            .unwrap_or(a + 1);
        split_constant(s, a, k, tol, out);
        split_constant(s, k, b, tol, out);
        return;
    }
    let mut k = a;
    while k < b {
        let inside = within(k);
        let mut e = k + 1;
        while e < b && within(e) == inside {
            e += 1;
        }
        split_constant(s, k, e, tol, out);
        k = e;
    }
}

/// Time-ordered coulomb-counted trace of one segment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChargeCurve {
    pub cycle: u32,
    pub start: usize,
    pub end: usize,
    pub v: Vec<f64>,
    /// Ah, starting at 0
    pub q: Vec<f64>,
    /// Total charge exceeds 1.5× the nominal capacity.
    pub over_capacity: bool,
}

impl ChargeCurve {
    pub fn total_charge(&self) -> f64 {
        self.q.last().copied().unwrap_or(0.0)
    }
}

/// Trapezoidal `∫ I dt`, converted from A·s to Ah.
pub fn coulomb_count(segment: &ChargeSegment) -> ChargeCurve {
    let s = &segment.samples;
    let mut q = Vec::with_capacity(s.len());
    let mut acc = 0.0;
    for (i, x) in s.iter().enumerate() {
        if i > 0 {
            let p = &s[i - 1];
            acc += 0.5 * (x.current + p.current) * (x.t - p.t);
        }
        q.push(acc / 3600.0);
    }
    let total = q.last().copied().unwrap_or(0.0);
    ChargeCurve {
        cycle: segment.cycle,
        start: segment.start,
        end: segment.end,
        v: s.iter().map(|x| x.voltage).collect(),
        q,
        over_capacity: segment.nominal_capacity.is_some_and(|c| total > 1.5 * c),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CleanConfig {
    pub vmin: f64,
    pub vmax: f64,
    pub max_points: usize,
    /// Drop samples within this many volts of `vmax` (0 keeps everything).
    pub trim_end_v: f64,
}

impl Default for CleanConfig {
    fn default() -> Self {
        Self {
            vmin: DEFAULT_VMIN,
            vmax: DEFAULT_VMAX,
            max_points: DEFAULT_MAX_POINTS,
            trim_end_v: 0.0,
        }
    }
}

/// A clean Q(V) curve: `v` strictly increasing inside the cutoffs, `q`
/// non-decreasing from 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QvCurve {
    pub cycle: u32,
    pub start: usize,
    pub end: usize,
    pub v: Vec<f64>,
    pub q: Vec<f64>,
    /// Coulomb-counted charge of the whole segment, Ah.
    pub throughput: f64,
    pub over_capacity: bool,
}

impl QvCurve {
    pub fn len(&self) -> usize {
        self.v.len()
    }

    pub fn is_empty(&self) -> bool {
        self.v.is_empty()
    }

    pub fn q_span(&self) -> f64 {
        self.q.last().copied().unwrap_or(0.0) - self.q.first().copied().unwrap_or(0.0)
    }
}

/// Sort by voltage, merge near-duplicate voltages, pool any charge
/// reversals so `q` is non-decreasing, and thin to at most
/// `cfg.max_points` roughly uniform in voltage (endpoints kept).
pub fn clean_qv(curve: &ChargeCurve, cfg: &CleanConfig) -> Result<QvCurve, IngestError> {
    let hi = cfg.vmax - cfg.trim_end_v.max(0.0);
    let mut pts: Vec<(f64, f64)> = curve
        .v
        .iter()
        .zip(&curve.q)
        .filter(|(v, q)| v.is_finite() && q.is_finite() && **v >= cfg.vmin && **v <= hi)
        .map(|(v, q)| (*v, *q))
        .collect();
    if pts.len() < 4 {
        return Err(IngestError::TooFewPoints(pts.len()));
    }
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));

    // Blocks of (sum_v, sum_q, count).
    let mut blocks: Vec<(f64, f64, f64)> = Vec::with_capacity(pts.len());
    let mut anchor = f64::NEG_INFINITY;
    for (v, q) in pts {
        match blocks.last_mut() {
            Some(b) if v - anchor <= DUPLICATE_TOL_V => {
                b.0 += v;
                b.1 += q;
                b.2 += 1.0;
            }
            _ => {
                anchor = v;
                blocks.push((v, q, 1.0));
            }
        }
    }

    // Pool adjacent violators until block means of q are non-decreasing.
    let mut pooled: Vec<(f64, f64, f64)> = Vec::with_capacity(blocks.len());
    for b in blocks {
        pooled.push(b);
        while pooled.len() >= 2 {
            let n = pooled.len();
            let (l, r) = (pooled[n - 2], pooled[n - 1]);
            if r.1 / r.2 < l.1 / l.2 {
                pooled.truncate(n - 2);
                pooled.push((l.0 + r.0, l.1 + r.1, l.2 + r.2));
            } else {
                break;
            }
        }
    }
    let mut v: Vec<f64> = pooled.iter().map(|b| b.0 / b.2).collect();
    let mut q: Vec<f64> = pooled.iter().map(|b| b.1 / b.2).collect();

    // Means of adjacent blocks can collide in floating point.
    let mut keep = Vec::with_capacity(v.len());
    for i in 0..v.len() {
        if keep.last().is_none_or(|&j: &usize| v[i] > v[j]) {
            keep.push(i);
        }
    }
    if keep.len() != v.len() {
        v = keep.iter().map(|&i| v[i]).collect();
        q = keep.iter().map(|&i| q[i]).collect();
    }

    if v.len() < 4 {
        return Err(IngestError::TooFewPoints(v.len()));
    }
    if cfg.max_points >= 4 && v.len() > cfg.max_points {
        let idx = uniform_in_v(&v, cfg.max_points);
        v = idx.iter().map(|&i| v[i]).collect();
        q = idx.iter().map(|&i| q[i]).collect();
    }
    let q0 = q[0];
    q.iter_mut().for_each(|x| *x -= q0);
    Ok(QvCurve {
        cycle: curve.cycle,
        start: curve.start,
        end: curve.end,
        v,
        q,
        throughput: curve.total_charge(),
        over_capacity: curve.over_capacity,
    })
}

/// Indices of the samples nearest to `n` equally spaced voltage targets,
/// deduplicated, always including both ends.
fn uniform_in_v(v: &[f64], n: usize) -> Vec<usize> {
    let (a, b) = (v[0], v[v.len() - 1]);
    let targets = crate::math::linspace(a, b, n);
    let mut out: Vec<usize> = Vec::with_capacity(n);
    let mut j = 0;
    for t in targets {
        while j + 1 < v.len() && fabs(v[j + 1] - t) <= fabs(v[j] - t) {
            j += 1;
        }
        if out.last() != Some(&j) {
            out.push(j);
        }
    }
    if out.last() != Some(&(v.len() - 1)) {
        out.push(v.len() - 1);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn cc_log(current: f64, n: usize, dt: f64) -> ChargeLog {
        let samples = (0..n)
            .map(|i| Sample {
                t: i as f64 * dt,
                current,
                voltage: 3.0 + i as f64 * 1e-3,
                cycle: None,
            })
            .collect();
        ChargeLog::new(samples, LogMetadata::default()).unwrap()
    }

    #[test]
    fn log_validation() {
        assert_eq!(
            ChargeLog::new(vec![], LogMetadata::default()).unwrap_err(),
            IngestError::EmptyLog
        );
        let mut s: Vec<Sample> = cc_log(1.0, 20, 1.0).into_samples();
        s[16].t = s[14].t;
        assert_eq!(
            ChargeLog::new(s.clone(), LogMetadata::default()).unwrap_err(),
            IngestError::NonMonotonicTime(17)
        );
        s[16].t = 16.0;
        s[3].voltage = f64::INFINITY;
        assert_eq!(
            ChargeLog::new(s, LogMetadata::default()).unwrap_err(),
            IngestError::NonFiniteSample(4)
        );
    }

    #[test]
    fn time_may_restart_with_new_cycle() {
        let mut s: Vec<Sample> = cc_log(1.0, 4, 1.0).into_samples();
        for x in &mut s[..2] {
            x.cycle = Some(1);
        }
        for x in &mut s[2..] {
            x.cycle = Some(2);
        }
        s[2].t = 0.0;
        s[3].t = 1.0;
        assert!(ChargeLog::new(s, LogMetadata::default()).is_ok());
    }

    #[test]
    fn discharge_only_has_no_segments() {
        let log = cc_log(-0.045, 100, 1.0);
        assert_eq!(
            extract_cc_charge(&log, 0.02).unwrap_err(),
            IngestError::NoChargeSegments
        );
    }

    #[test]
    fn rest_splits_segment() {
        let mut s: Vec<Sample> = cc_log(0.045, 200, 10.0).into_samples();
        for x in &mut s[90..120] {
            x.current = 0.0;
        }
        let segs =
            extract_cc_charge(&ChargeLog::new(s, LogMetadata::default()).unwrap(), 0.02).unwrap();
        assert_eq!(segs.len(), 2);
        assert_eq!((segs[0].start, segs[0].end), (0, 90));
        assert_eq!((segs[1].start, segs[1].end), (120, 200));
        assert_eq!((segs[0].cycle, segs[1].cycle), (1, 2));
    }

    #[test]
    fn taper_is_excluded() {
        let mut s: Vec<Sample> = cc_log(0.045, 100, 10.0).into_samples();
        for (k, x) in s[70..].iter_mut().enumerate() {
            x.current = 0.045 * libm::exp(-(k as f64 + 1.0) / 5.0);
        }
        let segs =
            extract_cc_charge(&ChargeLog::new(s, LogMetadata::default()).unwrap(), 0.02).unwrap();
        assert_eq!(segs.len(), 1);
        assert_eq!((segs[0].start, segs[0].end), (0, 70));
    }

    #[test]
    fn two_current_levels() {
        let mut s: Vec<Sample> = cc_log(0.045, 100, 10.0).into_samples();
        for x in &mut s[50..] {
            x.current = 0.0225;
        }
        let segs =
            extract_cc_charge(&ChargeLog::new(s, LogMetadata::default()).unwrap(), 0.02).unwrap();
        assert_eq!(segs.len(), 2);
        assert_eq!((segs[0].start, segs[0].end, segs[1].end), (0, 50, 100));
    }

    #[test]
    fn short_runs_dropped() {
        let log = cc_log(0.045, 9, 1.0);
        assert!(extract_cc_charge(&log, 0.02).is_err());
    }

    #[test]
    fn constant_current_hour() {
        let log = cc_log(0.045, 3601, 1.0);
        let seg = &extract_cc_charge(&log, 0.02).unwrap()[0];
        let c = coulomb_count(seg);
        assert_eq!(c.q[0], 0.0);
        assert!((c.total_charge() - 0.045).abs() < 1e-12 * 0.045);
    }

    #[test]
    fn zero_current_counts_nothing() {
        let seg = ChargeSegment {
            cycle: 1,
            start: 0,
            end: 3,
            samples: (0..3)
                .map(|i| Sample {
                    t: i as f64,
                    current: 0.0,
                    voltage: 3.0,
                    cycle: None,
                })
                .collect(),
            nominal_capacity: None,
        };
        assert!(coulomb_count(&seg).q.iter().all(|q| *q == 0.0));
    }

    #[test]
    fn ramp_current_integral() {
        let a = 1e-5;
        let n = 1001;
        let tt = 3600.0;
        let samples: Vec<Sample> = (0..n)
            .map(|i| {
                let t = tt * i as f64 / (n - 1) as f64;
                Sample {
                    t,
                    current: a * t,
                    voltage: 3.0,
                    cycle: None,
                }
            })
            .collect();
        let seg = ChargeSegment {
            cycle: 1,
            start: 0,
            end: n,
            samples,
            nominal_capacity: Some(0.01),
        };
        let c = coulomb_count(&seg);
        let expect = a * tt * tt / 2.0 / 3600.0;
        assert!((c.total_charge() - expect).abs() <= 1e-10 * expect);
        assert!(c.over_capacity);
    }

    fn curve(v: Vec<f64>, q: Vec<f64>) -> ChargeCurve {
        ChargeCurve {
            cycle: 1,
            start: 0,
            end: v.len(),
            v,
            q,
            over_capacity: false,
        }
    }

    #[test]
    fn clean_curve_unchanged() {
        let v: Vec<f64> = (0..100).map(|i| 3.0 + 0.01 * i as f64).collect();
        let q: Vec<f64> = (0..100).map(|i| 1e-4 * i as f64).collect();
        let out = clean_qv(&curve(v.clone(), q.clone()), &CleanConfig::default()).unwrap();
        assert_eq!(out.v, v);
        assert_eq!(out.q, q);
    }

    #[test]
    fn duplicates_merged() {
        let v = vec![3.0, 3.1, 3.1, 3.2, 3.3];
        let q = vec![0.0, 0.001, 0.003, 0.004, 0.005];
        let out = clean_qv(&curve(v, q), &CleanConfig::default()).unwrap();
        assert_eq!(out.v, vec![3.0, 3.1, 3.2, 3.3]);
        assert!((out.q[1] - 0.002).abs() < 1e-15);
    }

    #[test]
    fn cutoffs_and_trim() {
        let v: Vec<f64> = (0..200).map(|i| 2.6 + 0.01 * i as f64).collect();
        let q: Vec<f64> = (0..200).map(|i| 1e-4 * i as f64).collect();
        let cfg = CleanConfig {
            trim_end_v: 0.05,
            ..CleanConfig::default()
        };
        let out = clean_qv(&curve(v, q), &cfg).unwrap();
        assert!(out.v[0] >= 2.75 && *out.v.last().unwrap() <= 4.15 + 1e-12);
        assert_eq!(out.q[0], 0.0);
    }

    #[test]
    fn too_few_points() {
        let out = clean_qv(
            &curve(vec![3.0, 3.0, 3.00005, 3.1], vec![0.0; 4]),
            &CleanConfig::default(),
        );
        assert_eq!(out.unwrap_err(), IngestError::TooFewPoints(2));
    }

    #[test]
    fn downsampling_keeps_endpoints() {
        let v: Vec<f64> = (0..5000).map(|i| 3.0 + 1.0 * i as f64 / 4999.0).collect();
        let q: Vec<f64> = v.iter().map(|x| x * x).collect();
        let out = clean_qv(&curve(v.clone(), q), &CleanConfig::default()).unwrap();
        assert!(out.len() <= 500 && out.len() > 450);
        assert_eq!(out.v[0], v[0]);
        assert_eq!(*out.v.last().unwrap(), v[4999]);
    }
}
