//! Synthetic CC-charge logs with a closed-form dQ/dV.
//!
//! The noise-free cell is a mixture of densities in voltage (uniform,
//! logistic-derivative and Gaussian components) scaled so that the charge
//! accumulated between the cutoffs equals the cell capacity. Because every
//! component has an analytic CDF, both Q(V) and dQ/dV are exact.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::ingest::{ChargeLog, LogMetadata, Sample};
use crate::math::{exp, normal_cdf};

const SQRT_2PI: f64 = 2.506_628_274_631_000_5;

#[derive(Debug, Clone, PartialEq)]
pub enum SynthError {
    InvalidSpec(String),
    CycleOutOfRange(u32),
}

impl fmt::Display for SynthError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::InvalidSpec(m) => write!(f, "invalid synthetic spec: {m}"),
            Self::CycleOutOfRange(c) => write!(f, "cycle {c} outside 1..=n_cycles"),
        }
    }
}

impl core::error::Error for SynthError {}

/// Smooth background contribution to dQ/dV.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Background {
    /// Constant density across the voltage range.
    Uniform { weight: f64 },
    /// A logistic step in Q, i.e. a broad hump in dQ/dV.
    Logistic {
        center: f64,
        width: f64,
        weight: f64,
    },
}

/// Gaussian peak in dQ/dV carrying `weight` units of charge.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bump {
    pub center: f64,
    pub width: f64,
    pub weight: f64,
}

/// Gaussian peak whose height is `amplitude` × the mean background density.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlatingBump {
    pub center: f64,
    pub width: f64,
    pub amplitude: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseMode {
    /// Additive Gaussian noise on Q (std in Ah), realized through voltage.
    Charge,
    /// Additive Gaussian noise on the voltage channel (std in V).
    Voltage,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FadeModel {
    /// Capacity × (1 − fade_rate·(cycle − 1)).
    Linear,
    /// Capacity × (1 − fade_rate)^(cycle − 1).
    Geometric,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub v_range: [f64; 2],
    /// Ah, charge between the cutoffs on cycle 1.
    pub capacity: f64,
    pub background: Vec<Background>,
    pub staging: Vec<Bump>,
    pub plating: Option<PlatingBump>,
    pub noise_std: f64,
    pub noise_mode: NoiseMode,
    /// Time-triggered charge samples per cycle.
    pub n_samples: usize,
    /// Also log whenever the voltage has risen this much since the last
    /// sample, V.
    pub log_dv: Option<f64>,
    pub seed: u64,
    pub fade_rate: f64,
    pub fade_model: FadeModel,
    pub n_cycles: u32,
    /// Charge current as a multiple of capacity per hour.
    pub c_rate: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self::plating()
    }
}

impl SynthSpec {
    /// Graphite-staging style bumps only, nothing above 4.0 V.
    pub fn baseline() -> Self {
        Self {
            v_range: [2.75, 4.2],
            capacity: 0.045,
            background: alloc::vec![
                Background::Uniform { weight: 0.1 },
                Background::Logistic {
                    center: 3.6,
                    width: 0.07,
                    weight: 0.3,
                },
            ],
            staging: alloc::vec![
                Bump {
                    center: 3.45,
                    width: 0.025,
                    weight: 0.3,
                },
                Bump {
                    center: 3.75,
                    width: 0.025,
                    weight: 0.2,
                },
            ],
            plating: None,
            noise_std: 2e-5,
            noise_mode: NoiseMode::Charge,
            n_samples: 200,
            log_dv: Some(0.01),
            seed: 0,
            fade_rate: 0.0,
            fade_model: FadeModel::Linear,
            n_cycles: 1,
            c_rate: 1.0,
        }
    }

    /// Baseline plus a plating peak at 4.08 V, 30 mV wide, 3× the mean background.
    pub fn plating() -> Self {
        Self {
            plating: Some(PlatingBump {
                center: 4.08,
                width: 0.03,
                amplitude: 3.0,
            }),
            ..Self::baseline()
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::InvalidSpec(String::from(m)));
        let [a, b] = self.v_range;
        if !(a.is_finite() && b.is_finite() && a < b) {
            return bad("v_range must be finite and increasing");
        }
        if !(self.capacity.is_finite() && self.capacity > 0.0) {
            return bad("capacity must be positive");
        }
        for c in &self.background {
            match *c {
                Background::Uniform { weight } if !(weight >= 0.0 && weight.is_finite()) => {
                    return bad("background weights must be >= 0")
                }
                Background::Logistic {
                    width,
                    weight,
                    center,
                } if !(weight >= 0.0
                    && weight.is_finite()
                    && width > 0.0
                    && center.is_finite()) =>
                {
                    return bad("logistic components need weight >= 0 and width > 0");
                }
                _ => {}
            }
        }
        for s in &self.staging {
            if !(s.weight >= 0.0 && s.weight.is_finite() && s.width > 0.0 && s.center.is_finite()) {
                return bad("staging bumps need weight >= 0 and width > 0");
            }
        }
        if let Some(p) = &self.plating {
            if !(p.center > 4.0 && p.center < b) {
                return bad("plating bump center must lie in (4.0, v_max)");
            }
            if !(p.width > 0.0 && p.amplitude >= 0.0 && p.amplitude.is_finite()) {
                return bad("plating bump needs width > 0 and amplitude >= 0");
            }
        }
        if self.total_weight() <= 0.0 {
            return bad("components carry no charge");
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return bad("noise_std must be >= 0");
        }
        if self.n_samples < 10 {
            return bad("n_samples must be at least 10");
        }
        if let Some(dv) = self.log_dv {
            if !(dv > 0.0 && dv.is_finite()) {
                return bad("log_dv must be positive");
            }
        }
        if self.n_cycles == 0 {
            return bad("n_cycles must be at least 1");
        }
        if !(0.0..1.0).contains(&self.fade_rate) {
            return bad("fade_rate must lie in [0, 1)");
        }
        if self.fade_model == FadeModel::Linear
            && self.fade_rate * (self.n_cycles - 1) as f64 >= 1.0
        {
            return bad("linear fade exhausts capacity before the last cycle");
        }
        if !(self.c_rate.is_finite() && self.c_rate > 0.0) {
            return bad("c_rate must be positive");
        }
        Ok(())
    }

    fn background_mass(&self) -> f64 {
        let [a, b] = self.v_range;
        self.background
            .iter()
            .map(|c| component_cdf(&Component::from(*c), b, a, b))
            .sum()
    }

    fn components(&self) -> Vec<Component> {
        let [a, b] = self.v_range;
        let mut out: Vec<Component> = self
            .background
            .iter()
            .map(|c| Component::from(*c))
            .collect();
        out.extend(self.staging.iter().map(|s| Component::Gaussian {
            center: s.center,
            width: s.width,
            weight: s.weight,
        }));
        if let Some(p) = &self.plating {
            let mean_bg = self.background_mass() / (b - a);
            out.push(Component::Gaussian {
                center: p.center,
                width: p.width,
                weight: p.amplitude * mean_bg * p.width * SQRT_2PI,
            });
        }
        out
    }

    fn total_weight(&self) -> f64 {
        let [a, b] = self.v_range;
        self.components()
            .iter()
            .map(|c| component_cdf(c, b, a, b))
            .sum()
    }

    /// Capacity multiplier for `cycle` (1 on the first cycle).
    pub fn fade_factor(&self, cycle: u32) -> f64 {
        let k = cycle.saturating_sub(1) as f64;
        match self.fade_model {
            FadeModel::Linear => 1.0 - self.fade_rate * k,
            FadeModel::Geometric => libm::pow(1.0 - self.fade_rate, k),
        }
    }

    /// Charge current in A.
    pub fn current(&self) -> f64 {
        self.c_rate * self.capacity
    }
}

#[derive(Debug, Clone, Copy)]
enum Component {
    Uniform {
        weight: f64,
    },
    Logistic {
        center: f64,
        width: f64,
        weight: f64,
    },
    Gaussian {
        center: f64,
        width: f64,
        weight: f64,
    },
}

impl From<Background> for Component {
    fn from(b: Background) -> Self {
        match b {
            Background::Uniform { weight } => Component::Uniform { weight },
            Background::Logistic {
                center,
                width,
                weight,
            } => Component::Logistic {
                center,
                width,
                weight,
            },
        }
    }
}

fn logistic(u: f64) -> f64 {
    if u >= 0.0 {
        1.0 / (1.0 + exp(-u))
    } else {
        let e = exp(u);
        e / (1.0 + e)
    }
}

fn component_density(c: &Component, v: f64, a: f64, b: f64) -> f64 {
    match *c {
        Component::Uniform { weight } => weight / (b - a),
        Component::Logistic {
            center,
            width,
            weight,
        } => {
            let s = logistic((v - center) / width);
            weight * s * (1.0 - s) / width
        }
        Component::Gaussian {
            center,
            width,
            weight,
        } => {
            let u = (v - center) / width;
            weight * exp(-0.5 * u * u) / (width * SQRT_2PI)
        }
    }
}

/// Mass of the component on `[a, v]`.
fn component_cdf(c: &Component, v: f64, a: f64, b: f64) -> f64 {
    match *c {
        Component::Uniform { weight } => weight * (v - a) / (b - a),
        Component::Logistic {
            center,
            width,
            weight,
        } => weight * (logistic((v - center) / width) - logistic((a - center) / width)),
        Component::Gaussian {
            center,
            width,
            weight,
        } => weight * (normal_cdf((v - center) / width) - normal_cdf((a - center) / width)),
    }
}

/// Closed-form charge/voltage map of a spec.
#[derive(Debug, Clone)]
pub struct SynthCell {
    components: Vec<Component>,
    scale: f64,
    range: [f64; 2],
}

impl SynthCell {
    pub fn new(spec: &SynthSpec) -> Result<Self, SynthError> {
        spec.validate()?;
        let components = spec.components();
        let [a, b] = spec.v_range;
        let total: f64 = components.iter().map(|c| component_cdf(c, b, a, b)).sum();
        Ok(Self {
            components,
            scale: spec.capacity / total,
            range: spec.v_range,
        })
    }

    /// dQ/dV on cycle 1, Ah/V.
    pub fn dqdv(&self, v: f64) -> f64 {
        let [a, b] = self.range;
        self.scale
            * self
                .components
                .iter()
                .map(|c| component_density(c, v, a, b))
                .sum::<f64>()
    }

    /// Q(V) on cycle 1 with Q(v_min) = 0, Ah.
    pub fn q(&self, v: f64) -> f64 {
        let [a, b] = self.range;
        self.scale
            * self
                .components
                .iter()
                .map(|c| component_cdf(c, v, a, b))
                .sum::<f64>()
    }

    /// Voltage where Q(V) = `q`, clamped to the range.
    pub fn voltage_at(&self, q: f64) -> f64 {
        let [mut lo, mut hi] = self.range;
        if q <= 0.0 {
            return lo;
        }
        if q >= self.q(hi) {
            return hi;
        }
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            if self.q(mid) < q {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo < 1e-14 {
                break;
            }
        }
        0.5 * (lo + hi)
    }
}

/// dQ/dV of the noise-free cell on cycle 1.
pub fn true_dqdv(spec: &SynthSpec, v: f64) -> Result<f64, SynthError> {
    Ok(SynthCell::new(spec)?.dqdv(v))
}

const REST_S: f64 = 300.0;
const REST_SAMPLES: usize = 10;
const DISCHARGE_SAMPLES: usize = 20;

/// One cycle starting at t = 0: CC charge, rest, 1C discharge, rest.
///
/// Deterministic in `(spec, cycle)`. The charge is logged every
/// `duration / (n_samples - 1)` seconds and, with `log_dv`, on every
/// voltage step of that size, whichever comes first.
pub fn generate_cycle(spec: &SynthSpec, cycle: u32) -> Result<Vec<Sample>, SynthError> {
    let cell = SynthCell::new(spec)?;
    if cycle == 0 || cycle > spec.n_cycles {
        return Err(SynthError::CycleOutOfRange(cycle));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(cycle as u64);

    let f = spec.fade_factor(cycle);
    let q_cycle = f * spec.capacity;
    let current = spec.current();
    let duration = 3600.0 * q_cycle / current;
    let n = spec.n_samples;
    let [vmin, vmax] = spec.v_range;
    let mut out = Vec::with_capacity(n + 2 * REST_SAMPLES + DISCHARGE_SAMPLES);

    let dt = duration / (n - 1) as f64;
    let mut times = alloc::vec![0.0];
    let mut t = 0.0;
    loop {
        let mut next = t + dt;
        if let Some(dv) = spec.log_dv {
            let v_next = cell.voltage_at(current * t / 3600.0 / f) + dv;
            if v_next < vmax {
                let tv = 3600.0 * f * cell.q(v_next) / current;
                if tv > t {
                    next = next.min(tv);
                }
            }
        }
        if next >= duration * (1.0 - 1e-12) {
            times.push(duration);
            break;
        }
        times.push(next);
        t = next;
    }

    for &t in &times {
        let q = current * t / 3600.0;
        let eps: f64 = StandardNormal.sample(&mut rng);
        let v = match spec.noise_mode {
            NoiseMode::Charge => cell.voltage_at((q + spec.noise_std * eps) / f),
            NoiseMode::Voltage => cell.voltage_at(q / f) + spec.noise_std * eps,
        };
        out.push(Sample {
            t,
            current,
            voltage: v,
            cycle: Some(cycle),
        });
    }

    let mut t = duration;
    let v_top = out.last().map(|s| s.voltage).unwrap_or(vmax);
    let dt_rest = REST_S / REST_SAMPLES as f64;
    for _ in 0..REST_SAMPLES {
        t += dt_rest;
        out.push(Sample {
            t,
            current: 0.0,
            voltage: v_top - 0.02,
            cycle: Some(cycle),
        });
    }
    let discharge = spec.capacity;
    let dt_dis = 3600.0 * q_cycle / discharge / DISCHARGE_SAMPLES as f64;
    for k in 1..=DISCHARGE_SAMPLES {
        t += dt_dis;
        let frac = k as f64 / DISCHARGE_SAMPLES as f64;
        out.push(Sample {
            t,
            current: -discharge,
            voltage: vmax - 0.05 - frac * (vmax - 0.05 - vmin),
            cycle: Some(cycle),
        });
    }
    for _ in 0..REST_SAMPLES {
        t += dt_rest;
        out.push(Sample {
            t,
            current: 0.0,
            voltage: vmin + 0.3,
            cycle: Some(cycle),
        });
    }
    Ok(out)
}

/// All cycles back to back on one clock.
pub fn generate_log(spec: &SynthSpec) -> Result<ChargeLog, SynthError> {
    let mut samples = Vec::new();
    let mut offset = 0.0;
    for c in 1..=spec.n_cycles {
        let cyc = generate_cycle(spec, c)?;
        let end = cyc.last().map(|s| s.t).unwrap_or(0.0);
        samples.extend(cyc.into_iter().map(|mut s| {
            s.t += offset;
            s
        }));
        offset += end + 1.0;
    }
    let metadata = LogMetadata {
        capacity_ah: Some(spec.capacity),
        temperature: None,
        c_rate: Some(alloc::format!("{}C", spec.c_rate)),
        label: Some(String::from(if spec.plating.is_some() {
            "synth-plating"
        } else {
            "synth-baseline"
        })),
    };
    ChargeLog::new(samples, metadata).map_err(|e| SynthError::InvalidSpec(alloc::format!("{e}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    /// Largest deviation of `dqdv` from the five-point central difference of `q`.
    fn max_fd_mismatch(cell: &SynthCell, n: usize) -> (f64, f64) {
        let [a, b] = cell.range;
        let h = (b - a) / n as f64;
        let mut worst = 0.0f64;
        let mut peak = 0.0f64;
        for i in 2..n.saturating_sub(2) {
            let v = a + h * i as f64;
            let fd = (cell.q(v - 2.0 * h) - 8.0 * cell.q(v - h) + 8.0 * cell.q(v + h)
                - cell.q(v + 2.0 * h))
                / (12.0 * h);
            let d = cell.dqdv(v);
            worst = worst.max((fd - d).abs());
            peak = peak.max(d.abs());
        }
        (worst, peak)
    }

    #[test]
    fn defaults_validate() {
        SynthSpec::baseline().validate().unwrap();
        SynthSpec::plating().validate().unwrap();
    }

    #[test]
    fn invalid_specs_rejected() {
        let mut s = SynthSpec::plating();
        s.plating.as_mut().unwrap().center = 3.9;
        assert!(matches!(s.validate(), Err(SynthError::InvalidSpec(_))));
        let mut s = SynthSpec::baseline();
        s.staging[0].weight = -1.0;
        assert!(s.validate().is_err());
        let mut s = SynthSpec::baseline();
        s.n_cycles = 0;
        assert!(s.validate().is_err());
    }

    #[test]
    fn uniform_background_is_flat() {
        let spec = SynthSpec {
            background: vec![Background::Uniform { weight: 2.0 }],
            staging: vec![],
            plating: None,
            ..SynthSpec::baseline()
        };
        let expect = 0.045 / 1.45;
        for v in [2.8, 3.3, 4.1] {
            assert!((true_dqdv(&spec, v).unwrap() - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn decays_far_from_components() {
        let spec = SynthSpec {
            background: vec![],
            plating: None,
            ..SynthSpec::baseline()
        };
        let cell = SynthCell::new(&spec).unwrap();
        let max = (0..1000)
            .map(|i| cell.dqdv(2.75 + 1.45 * i as f64 / 999.0))
            .fold(0.0, f64::max);
        // 2.95 V is > 6 widths below 3.45 V.
        assert!(cell.dqdv(2.95) <= 1e-6 * max);
    }

    #[test]
    fn integral_equals_capacity() {
        let cell = SynthCell::new(&SynthSpec::plating()).unwrap();
        let n = 10_000;
        let h = 1.45 / n as f64;
        let mut s = 0.5 * (cell.dqdv(2.75) + cell.dqdv(4.2));
        for i in 1..n {
            s += cell.dqdv(2.75 + h * i as f64);
        }
        assert!((s * h - 0.045).abs() <= 1e-6 * 0.045);
        assert!((cell.q(4.2) - 0.045).abs() < 1e-15);
    }

    #[test]
    fn dqdv_is_derivative_of_q() {
        let cell = SynthCell::new(&SynthSpec::plating()).unwrap();
        let (worst, peak) = max_fd_mismatch(&cell, 100_000);
        assert!(worst <= 1e-8 * peak, "{worst} vs {peak}");
    }

    #[test]
    fn inversion_round_trips() {
        let cell = SynthCell::new(&SynthSpec::plating()).unwrap();
        for v in [2.8, 3.45, 3.9, 4.08, 4.19] {
            assert!((cell.voltage_at(cell.q(v)) - v).abs() < 1e-10);
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = SynthSpec {
            n_cycles: 3,
            ..SynthSpec::plating()
        };
        assert_eq!(
            generate_cycle(&spec, 2).unwrap(),
            generate_cycle(&spec, 2).unwrap()
        );
        assert_ne!(
            generate_cycle(&spec, 1).unwrap()[5].voltage,
            generate_cycle(&spec, 2).unwrap()[5].voltage
        );
        assert_eq!(
            generate_cycle(&spec, 4).unwrap_err(),
            SynthError::CycleOutOfRange(4)
        );
        assert_eq!(generate_log(&spec).unwrap(), generate_log(&spec).unwrap());
    }

    #[test]
    fn fade_models() {
        let mut s = SynthSpec {
            fade_rate: 0.02,
            n_cycles: 10,
            ..SynthSpec::baseline()
        };
        assert!((s.fade_factor(10) - 0.82).abs() < 1e-15);
        s.fade_model = FadeModel::Geometric;
        assert!((s.fade_factor(10) - libm::pow(0.98, 9.0)).abs() < 1e-15);
    }
}
