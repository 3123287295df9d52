//! Charge throughput per cycle, its fade rate, and agreement between fade
//! and plating verdicts.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::detect::Verdict;
use crate::ingest::QvCurve;

pub const DEFAULT_RATE_SPLIT: f64 = 1.0;

#[derive(Debug, Clone, PartialEq)]
pub enum MetricsError {
    Empty,
    ZeroFirstThroughput,
    TooFewCycles(usize),
    LabelMismatch(Vec<String>),
}

impl fmt::Display for MetricsError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Empty => f.write_str("no cycles"),
            Self::ZeroFirstThroughput => f.write_str("first-cycle throughput is not positive"),
            Self::TooFewCycles(n) => write!(f, "need at least 2 cycles for a rate, got {n}"),
            Self::LabelMismatch(l) => write!(f, "unmatched condition labels: {}", l.join(", ")),
        }
    }
}

impl core::error::Error for MetricsError {}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThroughputSeries {
    pub cycles: Vec<u32>,
    /// Ah per CC charge.
    pub throughput: Vec<f64>,
    /// Throughput over the first cycle's.
    pub normalized: Vec<f64>,
}

impl ThroughputSeries {
    pub fn new(cycles: Vec<u32>, throughput: Vec<f64>) -> Result<Self, MetricsError> {
        let first = *throughput.first().ok_or(MetricsError::Empty)?;
        if !(first > 0.0) {
            return Err(MetricsError::ZeroFirstThroughput);
        }
        assert_eq!(cycles.len(), throughput.len(), "one throughput per cycle");
        let normalized = throughput.iter().map(|t| t / first).collect();
        Ok(Self {
            cycles,
            throughput,
            normalized,
        })
    }

    pub fn len(&self) -> usize {
        self.cycles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cycles.is_empty()
    }
}

pub fn throughput_series(curves: &[QvCurve]) -> Result<ThroughputSeries, MetricsError> {
    ThroughputSeries::new(
        curves.iter().map(|c| c.cycle).collect(),
        curves.iter().map(|c| c.throughput).collect(),
    )
}

/// Negated least-squares slope of normalized throughput against cycle
/// number, in % per cycle, ignoring the first `skip_cycles` entries.
pub fn degradation_rate(
    series: &ThroughputSeries,
    skip_cycles: usize,
) -> Result<f64, MetricsError> {
    let x: Vec<f64> = series
        .cycles
        .iter()
        .skip(skip_cycles)
        .map(|&c| c as f64)
        .collect();
    let y = series.normalized.get(skip_cycles..).unwrap_or(&[]);
    if x.len() < 2 {
        return Err(MetricsError::TooFewCycles(x.len()));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
    }
    Ok(-100.0 * sxy / sxx)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConcordanceRow {
    pub label: String,
    pub verdict: Verdict,
    pub rate: f64,
    pub high_fade: bool,
    pub agrees: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Concordance {
    pub rate_split: f64,
    pub rows: Vec<ConcordanceRow>,
    /// Counts indexed `[plating][high_fade]`, so `[1][1]` is Plating with a
    /// rate at or above the split.
    pub table: [[usize; 2]; 2],
    pub agreements: usize,
    pub agreement: f64,
}

/// Cross-tabulate verdicts against `rate ≥ rate_split`. Every label must
/// appear exactly once on both sides.
pub fn concordance(
    verdicts: &[(String, Verdict)],
    rates: &[(String, f64)],
    rate_split: f64,
) -> Result<Concordance, MetricsError> {
    let mut missing: Vec<String> = verdicts
        .iter()
        .filter(|(l, _)| !rates.iter().any(|(r, _)| r == l))
        .map(|(l, _)| l.clone())
        .collect();
    missing.extend(
        rates
            .iter()
            .filter(|(r, _)| !verdicts.iter().any(|(l, _)| l == r))
            .map(|(r, _)| r.clone()),
    );
    if !missing.is_empty() || verdicts.is_empty() {
        return Err(MetricsError::LabelMismatch(missing));
    }

    let mut rows = Vec::with_capacity(verdicts.len());
    let mut table = [[0usize; 2]; 2];
    for (label, verdict) in verdicts {
        let rate = rates
            .iter()
            .find(|(r, _)| r == label)
            .map(|(_, x)| *x)
            .unwrap_or(f64::NAN);
        let high_fade = rate >= rate_split;
        let plating = *verdict == Verdict::Plating;
        table[plating as usize][high_fade as usize] += 1;
        rows.push(ConcordanceRow {
            label: label.clone(),
            verdict: *verdict,
            rate,
            high_fade,
            agrees: plating == high_fade,
        });
    }
    let agreements = table[0][0] + table[1][1];
    Ok(Concordance {
        rate_split,
        agreement: agreements as f64 / rows.len() as f64,
        rows,
        table,
        agreements,
    })
}

/// One reference operating condition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TableRow {
    pub label: &'static str,
    pub c_rate: f64,
    pub temperature_c: f64,
    pub plating: bool,
    /// Charge throughput loss, % per cycle.
    pub throughput_rate: f64,
    /// RPT capacity loss, % per cycle.
    pub capacity_rate: f64,
}

const fn row(
    label: &'static str,
    c_rate: f64,
    temperature_c: f64,
    plating: bool,
    t: f64,
    c: f64,
) -> TableRow {
    TableRow {
        label,
        c_rate,
        temperature_c,
        plating,
        throughput_rate: t,
        capacity_rate: c,
    }
}

/// Coin-cell results across charge rates and temperatures.
pub const REFERENCE_CONDITIONS: [TableRow; 9] = [
    row("1.0C@10C", 1.0, 10.0, true, 1.464, 0.877),
    row("0.8C@10C", 0.8, 10.0, true, 2.734, 1.979),
    row("0.6C@10C", 0.6, 10.0, true, 2.038, 1.692),
    row("0.4C@10C", 0.4, 10.0, true, 1.671, 1.237),
    row("0.6C@0C", 0.6, 0.0, true, 3.617, 1.175),
    row("0.4C@0C", 0.4, 0.0, true, 1.711, 0.845),
    row("0.2C@0C", 0.2, 0.0, false, 0.029, 0.094),
    row("1.0C@40C", 1.0, 40.0, false, 0.093, 0.016),
    row("1.0C@25C", 1.0, 25.0, false, 0.227, 0.031),
];
