//! The `bench` subcommand: GP against SG+FD on paired synthetic seeds.

use std::fs;

use dqdv_core::detect::Verdict;
use dqdv_core::ingest::{clean_qv, coulomb_count, extract_cc_charge, CleanConfig};
use dqdv_core::math::linspace;
use dqdv_core::synth::{generate_log, SynthCell, SynthSpec};
use rayon::prelude::*;
use serde::Serialize;

use crate::analyze::ToolInfo;
use crate::config::{BenchArgs, RunConfig};
use crate::error::CliError;
use crate::output::{write_json, CsvOut};
use crate::pipeline::{analyze_curve, PipelineConfig};

#[derive(Debug, Clone, Copy)]
pub struct BenchConfig {
    pub clean: CleanConfig,
    pub cc_tol: f64,
    /// Must carry an SG config.
    pub pipeline: PipelineConfig,
    pub edge_trim: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Trial {
    pub seed: u64,
    pub gp_rmse: f64,
    pub sg_rmse: f64,
    pub true_peak_v: Option<f64>,
    pub gp_peak_v: Option<f64>,
    pub sg_peak_v: Option<f64>,
    /// Interior grid points whose band contains the truth.
    pub covered: usize,
    pub scored: usize,
    pub verdict: Option<Verdict>,
}

impl Trial {
    pub fn gp_better(&self) -> bool {
        self.gp_rmse < self.sg_rmse
    }

    pub fn coverage(&self) -> f64 {
        self.covered as f64 / self.scored as f64
    }

    fn peak_err(&self, est: Option<f64>) -> Option<f64> {
        Some((est? - self.true_peak_v?).abs())
    }

    pub fn gp_peak_err(&self) -> Option<f64> {
        self.peak_err(self.gp_peak_v)
    }

    pub fn sg_peak_err(&self) -> Option<f64> {
        self.peak_err(self.sg_peak_v)
    }
}

fn rmse(grid: &[f64], est: &[f64], cell: &SynthCell) -> f64 {
    let se: f64 = grid
        .iter()
        .zip(est)
        .map(|(v, y)| (y - cell.dqdv(*v)).powi(2))
        .sum();
    (se / grid.len() as f64).sqrt()
}

fn argmax_above(grid: &[f64], ys: &[f64], threshold: f64) -> Option<f64> {
    grid.iter()
        .zip(ys)
        .filter(|(v, _)| **v > threshold)
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(v, _)| *v)
}

/// One paired trial on the first charge of `spec`.
pub fn trial(spec: &SynthSpec, cfg: &BenchConfig) -> Result<Trial, CliError> {
    let cfg_err = |e: &dyn std::fmt::Display| CliError::Config(format!("seed {}: {e}", spec.seed));
    let cell = SynthCell::new(spec).map_err(|e| cfg_err(&e))?;
    let log = generate_log(spec).map_err(|e| cfg_err(&e))?;
    let segments = extract_cc_charge(&log, cfg.cc_tol).map_err(|e| cfg_err(&e))?;
    let qv = clean_qv(&coulomb_count(&segments[0]), &cfg.clean).map_err(|e| cfg_err(&e))?;
    let a = analyze_curve(&qv, &cfg.pipeline).map_err(|e| cfg_err(&e))?;
    let sg =
        a.sg.as_ref()
            .ok_or_else(|| CliError::Config("bench needs an SG config".into()))?;
    let p = &a.posterior;

    let threshold = cfg.pipeline.detect.threshold_v;
    let true_peak_v = spec.plating.and_then(|_| {
        let g = linspace(threshold, spec.v_range[1], 4001);
        let t: Vec<f64> = g.iter().map(|v| cell.dqdv(*v)).collect();
        argmax_above(&g, &t, threshold)
    });
    let gp_peak_v = a
        .report
        .as_ref()
        .ok()
        .and_then(|r| {
            r.peaks
                .iter()
                .max_by(|x, y| x.magnitude.total_cmp(&y.magnitude))
        })
        .map(|pk| pk.v_peak);

    let (g0, g1) = (p.grid[0], p.grid[p.len() - 1]);
    let trim = cfg.edge_trim * (g1 - g0);
    let (mut covered, mut scored) = (0, 0);
    for i in 0..p.len() {
        let v = p.grid[i];
        if v < g0 + trim || v > g1 - trim {
            continue;
        }
        let t = cell.dqdv(v);
        scored += 1;
        covered += usize::from(p.lower[i] <= t && t <= p.upper[i]);
    }

    Ok(Trial {
        seed: spec.seed,
        gp_rmse: rmse(&p.grid, &p.mean, &cell),
        sg_rmse: rmse(&sg.grid, &sg.dqdv, &cell),
        true_peak_v,
        gp_peak_v,
        sg_peak_v: argmax_above(&sg.grid, &sg.dqdv, threshold),
        covered,
        scored,
        verdict: a.report.as_ref().ok().map(|r| r.verdict),
    })
}

/// Trials for consecutive seeds, in seed order.
pub fn trials(
    base: &SynthSpec,
    seeds: std::ops::Range<u64>,
    cfg: &BenchConfig,
) -> Result<Vec<Trial>, CliError> {
    seeds
        .collect::<Vec<_>>()
        .par_iter()
        .map(|&seed| {
            trial(
                &SynthSpec {
                    seed,
                    ..base.clone()
                },
                cfg,
            )
        })
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    pub trials: usize,
    pub gp_better: usize,
    pub mean_gp_rmse: f64,
    pub mean_sg_rmse: f64,
    pub mean_gp_peak_err: Option<f64>,
    pub mean_sg_peak_err: Option<f64>,
    /// Pooled over all trials and interior grid points.
    pub coverage: f64,
    pub plating_verdicts: usize,
}

fn mean(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

pub fn summarize(trials: &[Trial]) -> Summary {
    let covered: usize = trials.iter().map(|t| t.covered).sum();
    let scored: usize = trials.iter().map(|t| t.scored).sum();
    Summary {
        trials: trials.len(),
        gp_better: trials.iter().filter(|t| t.gp_better()).count(),
        mean_gp_rmse: mean(trials.iter().map(|t| t.gp_rmse)).unwrap_or(f64::NAN),
        mean_sg_rmse: mean(trials.iter().map(|t| t.sg_rmse)).unwrap_or(f64::NAN),
        mean_gp_peak_err: mean(trials.iter().filter_map(Trial::gp_peak_err)),
        mean_sg_peak_err: mean(trials.iter().filter_map(Trial::sg_peak_err)),
        coverage: covered as f64 / scored as f64,
        plating_verdicts: trials
            .iter()
            .filter(|t| t.verdict == Some(Verdict::Plating))
            .count(),
    }
}

#[derive(Debug, Clone, Serialize)]
struct BenchReport<'a> {
    tool: ToolInfo,
    config: RunConfig,
    summary: &'a Summary,
}

fn opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

pub fn run(args: &BenchArgs) -> Result<Summary, CliError> {
    let cfg = BenchConfig {
        clean: args.ingest.clean(),
        cc_tol: args.ingest.cc_tol,
        pipeline: PipelineConfig {
            grid_n: args.analysis.grid_n,
            level: args.analysis.level,
            detect: args.analysis.detect(),
            sg: Some(args.sg.config()),
        },
        edge_trim: args.edge_trim,
    };
    if !(0.0..0.5).contains(&cfg.edge_trim) {
        return Err(CliError::Config("edge-trim must lie in [0, 0.5)".into()));
    }
    if args.seeds == 0 {
        return Err(CliError::Config("seeds must be at least 1".into()));
    }
    let base = args.scenario.spec(args.seed);
    base.validate()
        .map_err(|e| CliError::Config(e.to_string()))?;
    let end = args
        .seed
        .checked_add(args.seeds)
        .ok_or_else(|| CliError::Config("seed range overflows".into()))?;
    let all = trials(&base, args.seed..end, &cfg)?;
    let summary = summarize(&all);

    fs::create_dir_all(&args.out).map_err(CliError::write(&args.out))?;
    let mut w = CsvOut::create(
        &args.out.join("bench.csv"),
        &[
            "seed",
            "gp_rmse",
            "sg_rmse",
            "gp_better",
            "true_peak_v",
            "gp_peak_v",
            "sg_peak_v",
            "gp_peak_err",
            "sg_peak_err",
            "coverage",
            "verdict",
        ],
    )?;
    for t in &all {
        let verdict = match t.verdict {
            Some(Verdict::Plating) => "plating",
            Some(Verdict::NoPlating) => "no_plating",
            None => "",
        };
        w.row(&[
            &t.seed.to_string(),
            &t.gp_rmse.to_string(),
            &t.sg_rmse.to_string(),
            &t.gp_better().to_string(),
            &opt(t.true_peak_v),
            &opt(t.gp_peak_v),
            &opt(t.sg_peak_v),
            &opt(t.gp_peak_err()),
            &opt(t.sg_peak_err()),
            &t.coverage().to_string(),
            verdict,
        ])?;
    }
    w.row(&[
        "summary",
        &summary.mean_gp_rmse.to_string(),
        &summary.mean_sg_rmse.to_string(),
        &summary.gp_better.to_string(),
        "",
        "",
        "",
        &opt(summary.mean_gp_peak_err),
        &opt(summary.mean_sg_peak_err),
        &summary.coverage.to_string(),
        &format!("plating={}/{}", summary.plating_verdicts, summary.trials),
    ])?;
    w.finish()?;
    write_json(
        &args.out.join("bench.json"),
        &BenchReport {
            tool: ToolInfo::current(),
            config: RunConfig::Bench(args.clone()),
            summary: &summary,
        },
    )?;
    Ok(summary)
}
