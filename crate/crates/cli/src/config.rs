//! Command-line flags, grouped by the stage they configure. Every group is
//! serialized into the reports it influences.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use dqdv_core::baseline::SgConfig;
use dqdv_core::derivative::{DEFAULT_GRID_N, DEFAULT_LEVEL};
use dqdv_core::detect::{
    DetectConfig, Significance, DEFAULT_MIN_PROMINENCE_FRAC, DEFAULT_THRESHOLD_V,
};
use dqdv_core::gp::{MAX_TRAINING_POINTS, MIN_TRAINING_POINTS};
use dqdv_core::ingest::{
    CleanConfig, DEFAULT_CC_TOL, DEFAULT_MAX_POINTS, DEFAULT_VMAX, DEFAULT_VMIN,
};
use dqdv_core::metrics::DEFAULT_RATE_SPLIT;
use dqdv_core::synth::{FadeModel, NoiseMode, SynthSpec};
use serde::Serialize;

use crate::csvlog::CsvSpec;

pub const SEED_ENV: &str = "DQDV_GP_SEED";

fn max_points_parser() -> clap::builder::RangedU64ValueParser<usize> {
    clap::builder::RangedU64ValueParser::new()
        .range(MIN_TRAINING_POINTS as u64..=MAX_TRAINING_POINTS as u64)
}

#[derive(Debug, Parser)]
#[command(
    name = "dqdv-gp",
    version,
    about = "Lithium-plating detection from charging logs via GP dQ/dV"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit every CC charge in the given logs and classify each cycle.
    Analyze(AnalyzeArgs),
    /// Write a synthetic charging log and its spec.
    Synth(SynthArgs),
    /// Compare GP and Savitzky-Golay derivatives on paired synthetic seeds.
    Bench(BenchArgs),
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct IngestArgs {
    /// Lower voltage cutoff, V.
    #[arg(long, default_value_t = DEFAULT_VMIN)]
    pub vmin: f64,
    /// Upper voltage cutoff, V.
    #[arg(long, default_value_t = DEFAULT_VMAX)]
    pub vmax: f64,
    /// Points kept per curve after downsampling.
    #[arg(long, default_value_t = DEFAULT_MAX_POINTS, value_parser = max_points_parser())]
    pub max_points: usize,
    /// CC tolerance as a fraction of the median charge current.
    #[arg(long, default_value_t = DEFAULT_CC_TOL)]
    pub cc_tol: f64,
    /// Drop samples within this many volts of the upper cutoff.
    #[arg(long, default_value_t = 0.0)]
    pub trim_end_v: f64,
    /// CSV field delimiter.
    #[arg(long, default_value_t = ',')]
    pub delimiter: char,
}

impl IngestArgs {
    pub fn clean(&self) -> CleanConfig {
        CleanConfig {
            vmin: self.vmin,
            vmax: self.vmax,
            max_points: self.max_points,
            trim_end_v: self.trim_end_v,
        }
    }

    pub fn csv(&self) -> Result<CsvSpec, String> {
        u8::try_from(self.delimiter)
            .ok()
            .filter(u8::is_ascii)
            .map(|delimiter| CsvSpec { delimiter })
            .ok_or_else(|| {
                format!(
                    "delimiter {:?} is not a single ASCII character",
                    self.delimiter
                )
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SignificanceArg {
    BandSeparated,
    MeanOnly,
}

impl From<SignificanceArg> for Significance {
    fn from(s: SignificanceArg) -> Self {
        match s {
            SignificanceArg::BandSeparated => Significance::BandSeparated,
            SignificanceArg::MeanOnly => Significance::MeanOnly,
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct AnalysisArgs {
    /// Voltage grid size for the derivative posterior.
    #[arg(long, default_value_t = DEFAULT_GRID_N)]
    pub grid_n: usize,
    /// Credible level of the reported bands.
    #[arg(long, default_value_t = DEFAULT_LEVEL)]
    pub level: f64,
    /// Plating peaks must sit above this voltage, V.
    #[arg(long, default_value_t = DEFAULT_THRESHOLD_V)]
    pub threshold_v: f64,
    /// Minimum peak prominence as a fraction of the posterior-mean range.
    #[arg(long, default_value_t = DEFAULT_MIN_PROMINENCE_FRAC)]
    pub prominence: f64,
    #[arg(long, value_enum, default_value_t = SignificanceArg::BandSeparated)]
    pub significance: SignificanceArg,
}

impl AnalysisArgs {
    pub fn detect(&self) -> DetectConfig {
        DetectConfig {
            threshold_v: self.threshold_v,
            min_prominence_frac: self.prominence,
            significance: self.significance.into(),
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SgArgs {
    /// Savitzky-Golay window length (odd).
    #[arg(long, default_value_t = 11)]
    pub sg_window: usize,
    #[arg(long, default_value_t = 2)]
    pub sg_polyorder: usize,
    /// Uniform voltage grid size the baseline resamples onto.
    #[arg(long, default_value_t = 400)]
    pub sg_resample_n: usize,
}

impl SgArgs {
    pub fn config(&self) -> SgConfig {
        SgConfig {
            window: self.sg_window,
            polyorder: self.sg_polyorder,
            resample_n: self.sg_resample_n,
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct AnalyzeArgs {
    /// Charging logs (CSV, optionally .gz); each file is one condition.
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    #[command(flatten)]
    pub ingest: IngestArgs,
    #[command(flatten)]
    pub analysis: AnalysisArgs,
    #[command(flatten)]
    pub sg: SgArgs,
    /// Also write the Savitzky-Golay finite-difference baseline.
    #[arg(long)]
    pub baseline: bool,
    /// Cycles excluded from the start of the degradation fit.
    #[arg(long, default_value_t = 0)]
    pub skip_cycles: usize,
    /// Fade rate separating high- from low-fade conditions, %/cycle.
    #[arg(long, default_value_t = DEFAULT_RATE_SPLIT)]
    pub rate_split: f64,
    #[arg(long, env = SEED_ENV, default_value_t = 0)]
    pub seed: u64,
    /// Output directory.
    #[arg(long, short, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    Plating,
    Baseline,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseModeArg {
    Charge,
    Voltage,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum FadeModelArg {
    Linear,
    Geometric,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ScenarioArgs {
    #[arg(long, value_enum, default_value_t = Scenario::Plating)]
    pub scenario: Scenario,
    /// Noise std: Ah in charge mode, V in voltage mode.
    #[arg(long)]
    pub noise: Option<f64>,
    #[arg(long, value_enum, default_value_t = NoiseModeArg::Charge)]
    pub noise_mode: NoiseModeArg,
    /// Time-triggered samples per charge.
    #[arg(long)]
    pub n_samples: Option<usize>,
    /// Voltage step that also triggers a sample, V; 0 disables.
    #[arg(long)]
    pub log_dv: Option<f64>,
    #[arg(long, default_value_t = 1)]
    pub n_cycles: u32,
    /// Capacity fade per cycle as a fraction.
    #[arg(long, default_value_t = 0.0)]
    pub fade_rate: f64,
    #[arg(long, value_enum, default_value_t = FadeModelArg::Linear)]
    pub fade_model: FadeModelArg,
    #[arg(long)]
    pub c_rate: Option<f64>,
}

impl ScenarioArgs {
    pub fn spec(&self, seed: u64) -> SynthSpec {
        let base = match self.scenario {
            Scenario::Plating => SynthSpec::plating(),
            Scenario::Baseline => SynthSpec::baseline(),
        };
        SynthSpec {
            noise_std: self.noise.unwrap_or(base.noise_std),
            noise_mode: match self.noise_mode {
                NoiseModeArg::Charge => NoiseMode::Charge,
                NoiseModeArg::Voltage => NoiseMode::Voltage,
            },
            n_samples: self.n_samples.unwrap_or(base.n_samples),
            log_dv: match self.log_dv {
                Some(0.0) => None,
                Some(d) => Some(d),
                None => base.log_dv,
            },
            n_cycles: self.n_cycles,
            fade_rate: self.fade_rate,
            fade_model: match self.fade_model {
                FadeModelArg::Linear => FadeModel::Linear,
                FadeModelArg::Geometric => FadeModel::Geometric,
            },
            c_rate: self.c_rate.unwrap_or(base.c_rate),
            seed,
            ..base
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SynthArgs {
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    #[arg(long, env = SEED_ENV, default_value_t = 0)]
    pub seed: u64,
    /// Log file name inside the output directory; `.gz` compresses.
    #[arg(long, default_value = "synth.csv")]
    pub name: String,
    #[arg(long, default_value_t = ',')]
    pub delimiter: char,
    #[arg(long, short, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct BenchArgs {
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    /// Number of paired trials.
    #[arg(long, default_value_t = 100)]
    pub seeds: u64,
    /// First seed; trials use consecutive seeds from here.
    #[arg(long, env = SEED_ENV, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub ingest: IngestArgs,
    #[command(flatten)]
    pub analysis: AnalysisArgs,
    #[command(flatten)]
    pub sg: SgArgs,
    /// Grid fraction trimmed from each end before scoring coverage.
    #[arg(long, default_value_t = 0.05)]
    pub edge_trim: f64,
    #[arg(long, short, default_value = "out")]
    pub out: PathBuf,
}

/// Reproducibility record embedded in every report.
#[derive(Debug, Clone, Serialize)]
#[serde(tag = "subcommand", rename_all = "snake_case")]
pub enum RunConfig {
    Analyze(AnalyzeArgs),
    Synth(SynthArgs),
    Bench(BenchArgs),
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn defaults_match_core() {
        let cli = Cli::try_parse_from(["dqdv-gp", "analyze", "a.csv"]).unwrap();
        let Command::Analyze(a) = cli.command else {
            panic!()
        };
        assert_eq!(a.ingest.clean(), CleanConfig::default());
        assert_eq!(a.analysis.detect(), DetectConfig::default());
        assert_eq!(a.sg.config(), SgConfig::default());
        assert_eq!(a.ingest.csv().unwrap(), CsvSpec::default());
    }

    #[test]
    fn scenario_defaults_reproduce_core_specs() {
        let cli = Cli::try_parse_from(["dqdv-gp", "synth", "--seed", "4"]).unwrap();
        let Command::Synth(s) = cli.command else {
            panic!()
        };
        assert_eq!(
            s.scenario.spec(s.seed),
            SynthSpec {
                seed: 4,
                ..SynthSpec::plating()
            }
        );
        let cli = Cli::try_parse_from([
            "dqdv-gp",
            "synth",
            "--scenario",
            "baseline",
            "--log-dv",
            "0",
        ])
        .unwrap();
        let Command::Synth(s) = cli.command else {
            panic!()
        };
        assert_eq!(
            s.scenario.spec(0),
            SynthSpec {
                log_dv: None,
                ..SynthSpec::baseline()
            }
        );
    }

    #[test]
    fn bad_delimiter() {
        let cli = Cli::try_parse_from(["dqdv-gp", "analyze", "a.csv", "--delimiter", "é"]).unwrap();
        let Command::Analyze(a) = cli.command else {
            panic!()
        };
        assert!(a.ingest.csv().is_err());
    }
}
