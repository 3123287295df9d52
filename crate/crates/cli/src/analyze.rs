//! The `analyze` subcommand.

use std::collections::BTreeSet;
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use dqdv_core::detect::{DetectError, PlatingReport, Verdict};
use dqdv_core::ingest::{clean_qv, coulomb_count, extract_cc_charge, LogMetadata, QvCurve};
use dqdv_core::metrics::{
    concordance, degradation_rate, throughput_series, Concordance, ThroughputSeries,
};
use flate2::read::GzDecoder;
use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::{AnalyzeArgs, RunConfig};
use crate::csvlog::{is_gz, log_stem, parse_log, LogError};
use crate::error::{CliError, Outcome};
use crate::output::{write_json, CsvOut};
use crate::pipeline::{analyze_curve, CurveAnalysis, PipelineConfig};

pub const REPORT_FILE: &str = "report.json";

#[derive(Debug, Clone, Serialize)]
pub struct ToolInfo {
    pub name: &'static str,
    pub version: &'static str,
}

impl ToolInfo {
    pub fn current() -> Self {
        Self {
            name: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct InputDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CycleStatus {
    Assessed,
    Unassessable,
}

#[derive(Debug, Clone, Serialize)]
pub struct CycleReport {
    pub cycle: u32,
    pub status: CycleStatus,
    pub n_points: usize,
    pub voltage_range: [f64; 2],
    pub throughput_ah: f64,
    pub over_capacity: bool,
    pub detection: Option<PlatingReport>,
    pub unassessable: Option<Unassessable>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Unassessable {
    pub reason: &'static str,
    pub grid_vmax: f64,
    pub threshold_v: f64,
    pub message: String,
}

impl Unassessable {
    fn from_detect(e: &DetectError) -> Self {
        let (grid_vmax, threshold_v) = match *e {
            DetectError::GridDoesNotReachThreshold { vmax, threshold_v } => (vmax, threshold_v),
            DetectError::InvalidThreshold => (f64::NAN, f64::NAN),
        };
        Self {
            reason: "GridDoesNotReachThreshold",
            grid_vmax,
            threshold_v,
            message: e.to_string(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ConditionReport {
    pub label: String,
    pub input: String,
    pub metadata: LogMetadata,
    /// Plating if any cycle plates; absent when no cycle could be assessed.
    pub verdict: Option<Verdict>,
    pub cycles: Vec<CycleReport>,
    pub throughput: ThroughputSeries,
    /// %/cycle; absent with fewer than two usable cycles.
    pub degradation_rate: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub tool: ToolInfo,
    pub config: RunConfig,
    pub inputs: Vec<InputDigest>,
    pub conditions: Vec<ConditionReport>,
    pub concordance: Option<Concordance>,
    pub unassessable_cycles: usize,
}

struct Condition {
    path: PathBuf,
    label: String,
    metadata: LogMetadata,
    curves: Vec<QvCurve>,
}

fn load(path: &Path, args: &AnalyzeArgs) -> Result<(InputDigest, Condition), CliError> {
    let log_err = |source: LogError| CliError::Log {
        path: path.to_path_buf(),
        source,
    };
    let bytes = fs::read(path).map_err(|e| log_err(e.into()))?;
    let sha256 = hex::encode(Sha256::digest(&bytes));
    let spec = args.ingest.csv().map_err(CliError::Config)?;
    let log = if is_gz(path) {
        let mut raw = Vec::new();
        GzDecoder::new(bytes.as_slice())
            .read_to_end(&mut raw)
            .map_err(|e| log_err(e.into()))?;
        parse_log(raw.as_slice(), &spec)
    } else {
        parse_log(bytes.as_slice(), &spec)
    }
    .map_err(log_err)?;

    let input = |message: String| CliError::Input {
        path: path.to_path_buf(),
        message,
    };
    let segments = extract_cc_charge(&log, args.ingest.cc_tol).map_err(|e| input(e.to_string()))?;
    let clean = args.ingest.clean();
    let curves = segments
        .iter()
        .map(|s| {
            clean_qv(&coulomb_count(s), &clean)
                .map_err(|e| input(format!("cycle {}: {e}", s.cycle)))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let label = log.metadata.label.clone().unwrap_or_else(|| log_stem(path));
    Ok((
        InputDigest {
            path: path.display().to_string(),
            sha256,
        },
        Condition {
            path: path.to_path_buf(),
            label,
            metadata: log.metadata,
            curves,
        },
    ))
}

fn condition_report(
    cond: &Condition,
    results: Vec<CurveAnalysis>,
    skip_cycles: usize,
) -> Result<ConditionReport, CliError> {
    let cycles: Vec<CycleReport> = cond
        .curves
        .iter()
        .zip(&results)
        .map(|(c, r)| CycleReport {
            cycle: c.cycle,
            status: if r.report.is_ok() {
                CycleStatus::Assessed
            } else {
                CycleStatus::Unassessable
            },
            n_points: c.len(),
            voltage_range: [c.v[0], c.v[c.len() - 1]],
            throughput_ah: c.throughput,
            over_capacity: c.over_capacity,
            detection: r.report.as_ref().ok().cloned(),
            unassessable: r.report.as_ref().err().map(Unassessable::from_detect),
        })
        .collect();
    let assessed: Vec<Verdict> = cycles
        .iter()
        .filter_map(|c| c.detection.as_ref().map(|d| d.verdict))
        .collect();
    let verdict = if assessed.contains(&Verdict::Plating) {
        Some(Verdict::Plating)
    } else if assessed.is_empty() {
        None
    } else {
        Some(Verdict::NoPlating)
    };
    let throughput = throughput_series(&cond.curves).map_err(|e| CliError::Input {
        path: cond.path.clone(),
        message: e.to_string(),
    })?;
    let degradation_rate = degradation_rate(&throughput, skip_cycles).ok();
    Ok(ConditionReport {
        label: cond.label.clone(),
        input: cond.path.display().to_string(),
        metadata: cond.metadata.clone(),
        verdict,
        cycles,
        throughput,
        degradation_rate,
    })
}

fn write_outputs(
    out: &Path,
    report: &Report,
    conds: &[Condition],
    results: &[Vec<CurveAnalysis>],
    baseline: bool,
) -> Result<(), CliError> {
    fs::create_dir_all(out).map_err(CliError::write(out))?;
    write_json(&out.join(REPORT_FILE), report)?;

    let mut qv = CsvOut::create(
        &out.join("qv.csv"),
        &["condition", "cycle", "voltage_v", "charge_ah"],
    )?;
    let mut gp = CsvOut::create(
        &out.join("dqdv_gp.csv"),
        &[
            "condition",
            "cycle",
            "method",
            "voltage_v",
            "mean",
            "lower",
            "upper",
        ],
    )?;
    let mut sg = if baseline {
        Some(CsvOut::create(
            &out.join("dqdv_sg.csv"),
            &[
                "condition",
                "cycle",
                "method",
                "voltage_v",
                "mean",
                "lower",
                "upper",
            ],
        )?)
    } else {
        None
    };
    let mut tp = CsvOut::create(
        &out.join("throughput.csv"),
        &[
            "condition",
            "cycle",
            "throughput_ah",
            "normalized_throughput",
        ],
    )?;

    for ((cond, res), rep) in conds.iter().zip(results).zip(&report.conditions) {
        let l = cond.label.as_str();
        for (curve, r) in cond.curves.iter().zip(res) {
            let c = curve.cycle.to_string();
            for (v, q) in curve.v.iter().zip(&curve.q) {
                qv.row(&[l, &c, &v.to_string(), &q.to_string()])?;
            }
            let p = &r.posterior;
            for i in 0..p.len() {
                gp.row(&[
                    l,
                    &c,
                    "gp",
                    &p.grid[i].to_string(),
                    &p.mean[i].to_string(),
                    &p.lower[i].to_string(),
                    &p.upper[i].to_string(),
                ])?;
            }
            if let (Some(w), Some(d)) = (sg.as_mut(), r.sg.as_ref()) {
                for (v, y) in d.grid.iter().zip(&d.dqdv) {
                    w.row(&[l, &c, "sg_fd", &v.to_string(), &y.to_string(), "", ""])?;
                }
            }
        }
        let t = &rep.throughput;
        for i in 0..t.len() {
            tp.row(&[
                l,
                &t.cycles[i].to_string(),
                &t.throughput[i].to_string(),
                &t.normalized[i].to_string(),
            ])?;
        }
    }
    qv.finish()?;
    gp.finish()?;
    if let Some(w) = sg {
        w.finish()?;
    }
    tp.finish()
}

/// Run the full pipeline and write all artifacts into `args.out`.
pub fn run(args: &AnalyzeArgs) -> Result<(Report, Outcome), CliError> {
    let loaded = args
        .inputs
        .iter()
        .map(|p| load(p, args))
        .collect::<Result<Vec<_>, _>>()?;
    let (inputs, conds): (Vec<_>, Vec<_>) = loaded.into_iter().unzip();
    let mut seen = BTreeSet::new();
    for c in &conds {
        if !seen.insert(c.label.as_str()) {
            return Err(CliError::Config(format!(
                "condition label {:?} appears twice",
                c.label
            )));
        }
    }

    let pcfg = PipelineConfig {
        grid_n: args.analysis.grid_n,
        level: args.analysis.level,
        detect: args.analysis.detect(),
        sg: args.baseline.then(|| args.sg.config()),
    };
    if let Some(s) = &pcfg.sg {
        s.validate().map_err(|e| CliError::Config(e.to_string()))?;
    }
    let jobs: Vec<(usize, &QvCurve)> = conds
        .iter()
        .enumerate()
        .flat_map(|(i, c)| c.curves.iter().map(move |q| (i, q)))
        .collect();
    let done = jobs
        .par_iter()
        .map(|&(i, q)| {
            analyze_curve(q, &pcfg).map_err(|source| CliError::Cycle {
                path: conds[i].path.clone(),
                cycle: q.cycle,
                source,
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mut results: Vec<Vec<CurveAnalysis>> = conds.iter().map(|_| Vec::new()).collect();
    for ((i, _), r) in jobs.iter().zip(done) {
        results[*i].push(r);
    }

    let conditions = conds
        .iter()
        .zip(&results)
        .map(|(c, r)| condition_report(c, r.clone(), args.skip_cycles))
        .collect::<Result<Vec<_>, _>>()?;
    let unassessable_cycles = conditions
        .iter()
        .flat_map(|c| &c.cycles)
        .filter(|c| c.status == CycleStatus::Unassessable)
        .count();
    let verdicts: Vec<_> = conditions
        .iter()
        .filter(|c| c.verdict.is_some() && c.degradation_rate.is_some())
        .map(|c| (c.label.clone(), c.verdict.unwrap_or(Verdict::NoPlating)))
        .collect();
    let rates: Vec<_> = conditions
        .iter()
        .filter(|c| c.verdict.is_some())
        .filter_map(|c| c.degradation_rate.map(|r| (c.label.clone(), r)))
        .collect();
    let concordance = concordance(&verdicts, &rates, args.rate_split).ok();

    let report = Report {
        tool: ToolInfo::current(),
        config: RunConfig::Analyze(args.clone()),
        inputs,
        conditions,
        concordance,
        unassessable_cycles,
    };
    write_outputs(&args.out, &report, &conds, &results, args.baseline)?;
    let outcome = if unassessable_cycles > 0 {
        Outcome::Unassessable
    } else {
        Outcome::Complete
    };
    Ok((report, outcome))
}
