//! Exact GP regression of charge on voltage.
//!
//! Inputs are centered and outputs standardized before any linear algebra;
//! hyperparameters, likelihoods and predictions are reported in natural
//! units (V, Ah). The stored Cholesky factor and weight vector live in the
//! standardized space.

use alloc::vec::Vec;
use core::fmt;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::kernel::{self, jitter, HyperparamError, Hyperparams};
use crate::math::{dot, exp, log, mean, std_dev, LN_2PI};
use crate::optimize::{self, BfgsOptions};

pub const MIN_TRAINING_POINTS: usize = 4;
pub const MAX_TRAINING_POINTS: usize = 600;

#[derive(Debug, Clone, PartialEq)]
pub enum GpError {
    TooFewPoints(usize),
    TooManyPoints(usize),
    LengthMismatch { xs: usize, ys: usize },
    NotIncreasing(usize),
    NonFiniteInput(usize),
    FactorizationFailure,
    AllStartsFailed,
    NonFinite,
    NoStarts,
    ZeroBudget,
    Hyperparams(HyperparamError),
}

impl fmt::Display for GpError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::TooFewPoints(n) => {
                write!(f, "need at least {MIN_TRAINING_POINTS} points, got {n}")
            }
            Self::TooManyPoints(n) => {
                write!(f, "at most {MAX_TRAINING_POINTS} points supported, got {n}")
            }
            Self::LengthMismatch { xs, ys } => write!(f, "{xs} inputs but {ys} outputs"),
            Self::NotIncreasing(i) => write!(f, "voltages not strictly increasing at index {i}"),
            Self::NonFiniteInput(i) => write!(f, "non-finite training value at index {i}"),
            Self::FactorizationFailure => f.write_str("covariance matrix is not positive definite"),
            Self::AllStartsFailed => f.write_str("every optimizer start failed to factorize"),
            Self::NonFinite => f.write_str("log marginal likelihood became non-finite"),
            Self::NoStarts => f.write_str("no initial hyperparameters supplied"),
            Self::ZeroBudget => f.write_str("iteration budget must be at least 1"),
            Self::Hyperparams(e) => write!(f, "{e}"),
        }
    }
}

impl core::error::Error for GpError {}

impl From<HyperparamError> for GpError {
    fn from(e: HyperparamError) -> Self {
        Self::Hyperparams(e)
    }
}

/// Ascending voltages with matching charges.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    xs: Vec<f64>,
    ys: Vec<f64>,
    x_mean: f64,
    y_mean: f64,
    y_scale: f64,
}

impl TrainingSet {
    pub fn new(xs: Vec<f64>, ys: Vec<f64>) -> Result<Self, GpError> {
        if xs.len() != ys.len() {
            return Err(GpError::LengthMismatch {
                xs: xs.len(),
                ys: ys.len(),
            });
        }
        if xs.len() < MIN_TRAINING_POINTS {
            return Err(GpError::TooFewPoints(xs.len()));
        }
        if xs.len() > MAX_TRAINING_POINTS {
            return Err(GpError::TooManyPoints(xs.len()));
        }
        if let Some(i) = xs
            .iter()
            .zip(&ys)
            .position(|(x, y)| !x.is_finite() || !y.is_finite())
        {
            return Err(GpError::NonFiniteInput(i));
        }
        if let Some(i) = xs.windows(2).position(|w| w[1] <= w[0]) {
            return Err(GpError::NotIncreasing(i + 1));
        }
        Ok(Self::build(xs, ys))
    }

    fn build(xs: Vec<f64>, ys: Vec<f64>) -> Self {
        let x_mean = mean(&xs);
        let y_mean = mean(&ys);
        let s = std_dev(&ys);
        let y_scale = if s > 0.0 && s.is_finite() { s } else { 1.0 };
        Self {
            xs,
            ys,
            x_mean,
            y_mean,
            y_scale,
        }
    }

    pub fn xs(&self) -> &[f64] {
        &self.xs
    }

    pub fn ys(&self) -> &[f64] {
        &self.ys
    }

    pub fn len(&self) -> usize {
        self.xs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xs.is_empty()
    }

    pub fn x_mean(&self) -> f64 {
        self.x_mean
    }

    pub fn y_mean(&self) -> f64 {
        self.y_mean
    }

    /// Scale dividing centered outputs (std of ys, or 1 for constant data).
    pub fn y_scale(&self) -> f64 {
        self.y_scale
    }

    pub fn voltage_span(&self) -> f64 {
        self.xs[self.xs.len() - 1] - self.xs[0]
    }

    fn centered_x(&self) -> Vec<f64> {
        self.xs.iter().map(|x| x - self.x_mean).collect()
    }

    fn standardized_y(&self) -> DVector<f64> {
        DVector::from_iterator(
            self.ys.len(),
            self.ys.iter().map(|y| (y - self.y_mean) / self.y_scale),
        )
    }
}

/// Hyperparameters in the standardized space: ℓ unchanged, σ's divided by y_scale.
#[derive(Debug, Clone, Copy)]
pub(crate) struct StdParams {
    pub length_scale: f64,
    pub signal_std: f64,
    pub noise_std: f64,
}

impl StdParams {
    fn from_natural(hp: &Hyperparams, y_scale: f64) -> Self {
        Self {
            length_scale: hp.length_scale,
            signal_std: hp.signal_std / y_scale,
            noise_std: hp.noise_std / y_scale,
        }
    }

    pub(crate) fn as_hyperparams(&self) -> Hyperparams {
        Hyperparams {
            length_scale: self.length_scale,
            signal_std: self.signal_std,
            noise_std: self.noise_std,
        }
    }
}

struct Evaluation {
    lml: f64,
    grad: [f64; 3],
    chol: Cholesky<f64, Dyn>,
    alpha: DVector<f64>,
}

/// Log marginal likelihood of standardized data with optional gradient
/// with respect to (ln ℓ, ln σ_f, ln σ_n).
fn evaluate(
    xc: &[f64],
    yc: &DVector<f64>,
    p: &StdParams,
    want_grad: bool,
) -> Result<Evaluation, GpError> {
    let n = xc.len();
    let hp = p.as_hyperparams();
    let jit = jitter(p.signal_std);
    let inv_l2 = 1.0 / (p.length_scale * p.length_scale);
    let sf2 = p.signal_std * p.signal_std;
    let sn2 = p.noise_std * p.noise_std;

    let gram = kernel::kernel_matrix(xc, xc, &hp, kernel::Block::VV);
    let mut kn = gram.clone();
    for i in 0..n {
        kn[(i, i)] += sn2 + jit;
    }
    let chol = Cholesky::new(kn).ok_or(GpError::FactorizationFailure)?;
    let alpha = chol.solve(yc);
    let log_det_half: f64 = chol.l_dirty().diagonal().iter().map(|d| log(*d)).sum();
    let lml = -0.5 * yc.dot(&alpha) - log_det_half - 0.5 * n as f64 * LN_2PI;
    if !lml.is_finite() {
        return Err(GpError::NonFinite);
    }

    let mut grad = [0.0; 3];
    if want_grad {
        // ∂LML/∂θ = ½ tr((ααᵀ − Kn⁻¹) ∂Kn/∂θ)
        let kinv = lower_inverse_gram(chol.l_dirty());
        let mut g_len = 0.0;
        let mut g_sig = 0.0;
        let mut trace_w = 0.0;
        for j in 0..n {
            let col = kinv.column(j);
            let kcol = gram.column(j);
            let aj = alpha[j];
            let wjj = aj * aj - col[j];
            g_sig += 0.5 * wjj * kcol[j];
            trace_w += wjj;
            for i in j + 1..n {
                let w = alpha[i] * aj - col[i];
                let d = xc[i] - xc[j];
                let wk = w * kcol[i];
                g_len += wk * d * d * inv_l2;
                g_sig += wk;
            }
        }
        g_len *= 2.0;
        g_sig *= 2.0;
        let jitter_slope = if 1e-12 * sf2 > 1e-10 {
            2e-12 * sf2
        } else {
            0.0
        };
        grad[0] = 0.5 * g_len;
        grad[1] = g_sig + 0.5 * trace_w * jitter_slope;
        grad[2] = trace_w * sn2;
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(GpError::NonFinite);
        }
    }
    Ok(Evaluation {
        lml,
        grad,
        chol,
        alpha,
    })
}

/// Lower triangle of (L Lᵀ)⁻¹ given the lower factor `l` (upper triangle of
/// `l` is ignored and the result's upper triangle is left zero).
fn lower_inverse_gram(l: &DMatrix<f64>) -> DMatrix<f64> {
    let n = l.nrows();
    let mut m = DMatrix::<f64>::zeros(n, n);
    for j in 0..n {
        let mut x = m.column_mut(j);
        x[j] = 1.0;
        for k in j..n {
            let xk = x[k] / l[(k, k)];
            x[k] = xk;
            if xk != 0.0 {
                let lk = l.column(k);
                for i in k + 1..n {
                    x[i] -= lk[i] * xk;
                }
            }
        }
    }
    let mut out = DMatrix::<f64>::zeros(n, n);
    let ms = m.as_slice();
    for j in 0..n {
        let cj = &ms[j * n..(j + 1) * n];
        for i in j..n {
            let ci = &ms[i * n..(i + 1) * n];
            out[(i, j)] = dot(&ci[i..], &cj[i..]);
        }
    }
    out
}

/// LML value and gradient with respect to (ln ℓ, ln σ_f, ln σ_n).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lml {
    pub value: f64,
    pub gradient: [f64; 3],
}

/// Exact log marginal likelihood of `train` under `hp`, in natural units.
///
/// The zero-mean GP is applied to `ys - mean(ys)`; the Gram matrix carries
/// the standard jitter.
pub fn log_marginal_likelihood(train: &TrainingSet, hp: &Hyperparams) -> Result<Lml, GpError> {
    lml_of(
        &train.centered_x(),
        &train.standardized_y(),
        train.y_scale,
        hp,
    )
}

/// Same as [`log_marginal_likelihood`] but without the minimum-size and
/// ordering checks of [`TrainingSet`].
pub fn log_marginal_likelihood_of(
    xs: &[f64],
    ys: &[f64],
    hp: &Hyperparams,
) -> Result<Lml, GpError> {
    if xs.len() != ys.len() {
        return Err(GpError::LengthMismatch {
            xs: xs.len(),
            ys: ys.len(),
        });
    }
    if xs.is_empty() {
        return Err(GpError::TooFewPoints(0));
    }
    let t = TrainingSet::build(xs.to_vec(), ys.to_vec());
    log_marginal_likelihood(&t, hp)
}

fn lml_of(xc: &[f64], yc: &DVector<f64>, y_scale: f64, hp: &Hyperparams) -> Result<Lml, GpError> {
    let p = StdParams::from_natural(hp, y_scale);
    let e = evaluate(xc, yc, &p, true)?;
    Ok(Lml {
        value: e.lml - xc.len() as f64 * log(y_scale),
        gradient: e.grad,
    })
}

/// A GP conditioned on its training set.
#[derive(Debug, Clone)]
pub struct FittedGP {
    hp: Hyperparams,
    train: TrainingSet,
    xc: Vec<f64>,
    chol: Cholesky<f64, Dyn>,
    alpha: DVector<f64>,
    lml: f64,
}

impl FittedGP {
    /// Condition on `train` at fixed hyperparameters.
    pub fn condition(train: TrainingSet, hp: Hyperparams) -> Result<Self, GpError> {
        let xc = train.centered_x();
        let yc = train.standardized_y();
        let p = StdParams::from_natural(&hp, train.y_scale);
        let e = evaluate(&xc, &yc, &p, false)?;
        let lml = e.lml - xc.len() as f64 * log(train.y_scale);
        Ok(Self {
            hp,
            train,
            xc,
            chol: e.chol,
            alpha: e.alpha,
            lml,
        })
    }

    pub fn hyperparams(&self) -> &Hyperparams {
        &self.hp
    }

    pub fn training_set(&self) -> &TrainingSet {
        &self.train
    }

    pub fn lml(&self) -> f64 {
        self.lml
    }

    /// Lower Cholesky factor of the standardized `K + σ_n² I + jitter`.
    pub fn cholesky_factor(&self) -> DMatrix<f64> {
        self.chol.l()
    }

    /// Standardized weight vector `Kn⁻¹ y`.
    pub fn alpha(&self) -> &DVector<f64> {
        &self.alpha
    }

    /// The standardized `Kn` the stored factor should reproduce.
    pub fn noisy_gram(&self) -> DMatrix<f64> {
        let p = self.std_params();
        let mut kn =
            kernel::kernel_matrix(&self.xc, &self.xc, &p.as_hyperparams(), kernel::Block::VV);
        let add = p.noise_std * p.noise_std + jitter(p.signal_std);
        for i in 0..kn.nrows() {
            kn[(i, i)] += add;
        }
        kn
    }

    pub(crate) fn std_params(&self) -> StdParams {
        StdParams::from_natural(&self.hp, self.train.y_scale)
    }

    pub(crate) fn centered_inputs(&self) -> &[f64] {
        &self.xc
    }

    pub(crate) fn chol(&self) -> &Cholesky<f64, Dyn> {
        &self.chol
    }

    /// Posterior mean of Q at each grid voltage.
    pub fn posterior_mean(&self, grid: &[f64]) -> Vec<f64> {
        let p = self.std_params().as_hyperparams();
        let w = self.alpha.as_slice();
        let mut row = alloc::vec![0.0; self.xc.len()];
        grid.iter()
            .map(|&g| {
                let gc = g - self.train.x_mean;
                for (r, x) in row.iter_mut().zip(&self.xc) {
                    *r = kernel::k(gc, *x, &p);
                }
                self.train.y_mean + self.train.y_scale * dot(&row, w)
            })
            .collect()
    }

    /// Posterior variance of the latent Q (noise excluded) at each grid voltage.
    pub fn posterior_variance(&self, grid: &[f64]) -> Vec<f64> {
        let p = self.std_params().as_hyperparams();
        let s2 = self.train.y_scale * self.train.y_scale;
        let l = self.chol.l_dirty();
        grid.iter()
            .map(|&g| {
                let gc = g - self.train.x_mean;
                let mut v = DVector::from_iterator(
                    self.xc.len(),
                    self.xc.iter().map(|x| kernel::k(*x, gc, &p)),
                );
                l.solve_lower_triangular_mut(&mut v);
                let prior = p.signal_std * p.signal_std;
                s2 * (prior - v.norm_squared()).max(0.0)
            })
            .collect()
    }
}

/// Five starts with ℓ at 2 to 40 % of the voltage span, σ_f at std(ys) and
/// σ_n at 1 % of std(ys).
pub fn default_inits(train: &TrainingSet) -> Vec<Hyperparams> {
    let span = train.voltage_span();
    let s = train.y_scale;
    [0.02, 0.05, 0.10, 0.20, 0.40]
        .iter()
        .map(|f| Hyperparams {
            length_scale: f * span,
            signal_std: s,
            noise_std: 0.01 * s,
        })
        .collect()
}

#[derive(Debug, Clone, Copy)]
pub struct Bounds {
    /// ℓ bounds as multiples of the voltage span.
    pub length_scale: (f64, f64),
    /// σ_f bounds as multiples of std(ys).
    pub signal_std: (f64, f64),
    /// σ_n bounds as multiples of std(ys).
    pub noise_std: (f64, f64),
}

impl Default for Bounds {
    fn default() -> Self {
        Self {
            length_scale: (1e-4, 10.0),
            signal_std: (1e-6, 1e3),
            noise_std: (1e-8, 1.0),
        }
    }
}

/// Maximize the LML from each start and keep the best.
pub fn fit(train: TrainingSet, inits: &[Hyperparams], budget: usize) -> Result<FittedGP, GpError> {
    fit_with(train, inits, budget, &Bounds::default())
}

pub fn fit_with(
    train: TrainingSet,
    inits: &[Hyperparams],
    budget: usize,
    bounds: &Bounds,
) -> Result<FittedGP, GpError> {
    if inits.is_empty() {
        return Err(GpError::NoStarts);
    }
    if budget == 0 {
        return Err(GpError::ZeroBudget);
    }
    let xc = train.centered_x();
    let yc = train.standardized_y();
    let span = train.voltage_span();
    let lo = [
        log(bounds.length_scale.0 * span),
        log(bounds.signal_std.0),
        log(bounds.noise_std.0),
    ];
    let hi = [
        log(bounds.length_scale.1 * span),
        log(bounds.signal_std.1),
        log(bounds.noise_std.1),
    ];
    let opts = BfgsOptions {
        max_iter: budget,
        ..BfgsOptions::default()
    };

    let mut best: Option<([f64; 3], f64)> = None;
    let mut saw_non_finite = false;
    for init in inits {
        let p0 = StdParams::from_natural(init, train.y_scale);
        let z0 = [
            log(p0.length_scale),
            log(p0.signal_std),
            log(p0.noise_std.max(bounds.noise_std.0)),
        ];
        let objective = |z: &[f64; 3]| {
            let p = StdParams {
                length_scale: exp(z[0]),
                signal_std: exp(z[1]),
                noise_std: exp(z[2]),
            };
            match evaluate(&xc, &yc, &p, true) {
                Ok(e) => Some((-e.lml, [-e.grad[0], -e.grad[1], -e.grad[2]])),
                Err(GpError::NonFinite) => {
                    saw_non_finite = true;
                    None
                }
                Err(_) => None,
            }
        };
        if let Some(r) = optimize::minimize(objective, z0, lo, hi, &opts) {
            let lml = -r.value;
            if best.is_none_or(|(_, b)| lml > b) {
                best = Some((r.x, lml));
            }
        }
    }
    let Some((z, _)) = best else {
        return Err(if saw_non_finite {
            GpError::NonFinite
        } else {
            GpError::AllStartsFailed
        });
    };
    let hp = Hyperparams::new(
        exp(z[0]),
        exp(z[1]) * train.y_scale,
        exp(z[2]) * train.y_scale,
    )?;
    FittedGP::condition(train, hp)
}

/// Fit from [`default_inits`] with the default 200-iteration budget.
pub fn fit_default(train: TrainingSet) -> Result<FittedGP, GpError> {
    let inits = default_inits(&train);
    fit(train, &inits, 200)
}
