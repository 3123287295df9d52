//! Per-curve analysis shared by `analyze` and `bench`.

use dqdv_core::baseline::{fd_dqdv, FdDerivative, SgConfig, SgError};
use dqdv_core::derivative::{
    default_grid, derivative_posterior, DerivativeError, DerivativePosterior,
};
use dqdv_core::detect::{classify, DetectConfig, DetectError, PlatingReport};
use dqdv_core::gp::{fit_default, GpError, TrainingSet};
use dqdv_core::ingest::QvCurve;
use dqdv_core::Hyperparams;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PipelineConfig {
    pub grid_n: usize,
    pub level: f64,
    pub detect: DetectConfig,
    pub sg: Option<SgConfig>,
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("GP fit: {0}")]
    Gp(#[from] GpError),
    #[error("derivative posterior: {0}")]
    Derivative(#[from] DerivativeError),
    #[error("baseline: {0}")]
    Baseline(#[from] SgError),
    #[error("detection: {0}")]
    Detect(DetectError),
}

#[derive(Debug, Clone)]
pub struct CurveAnalysis {
    pub hyperparams: Hyperparams,
    pub posterior: DerivativePosterior,
    /// `Err` only for [`DetectError::GridDoesNotReachThreshold`].
    pub report: Result<PlatingReport, DetectError>,
    pub sg: Option<FdDerivative>,
}

pub fn analyze_curve(
    curve: &QvCurve,
    cfg: &PipelineConfig,
) -> Result<CurveAnalysis, PipelineError> {
    let model = fit_default(TrainingSet::new(curve.v.clone(), curve.q.clone())?)?;
    let hyperparams = *model.hyperparams();
    let grid = default_grid(&model, cfg.grid_n);
    let posterior = derivative_posterior(&model, &grid, cfg.level)?;
    let report = match classify(&posterior, &hyperparams, curve.cycle, &cfg.detect) {
        Err(e @ DetectError::GridDoesNotReachThreshold { .. }) => Err(e),
        Err(e) => return Err(PipelineError::Detect(e)),
        Ok(r) => Ok(r),
    };
    let sg = cfg.sg.as_ref().map(|c| fd_dqdv(curve, c)).transpose()?;
    Ok(CurveAnalysis {
        hyperparams,
        posterior,
        report,
        sg,
    })
}
