//! EM driver shared by every switching autoregression with Gaussian
//! emissions: exact E-step, MAP transition update, model-specific M-step.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SaltError};
use crate::hmm::{forward_backward, DirichletPrior, HmmPosterior, TransitionModel};
use crate::linalg::GaussianFactor;
use crate::stats::{LagDesign, WeightedStats};
use crate::tensor::Mode;

/// States whose total responsibility falls below this are frozen for the iteration.
pub const MIN_STATE_WEIGHT: f64 = 1e-8;

/// Jitter added to every fitted emission covariance.
pub const COV_JITTER: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitMethod {
    KMeans,
    Random,
}

impl std::str::FromStr for InitMethod {
    type Err = SaltError;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "kmeans" => Ok(InitMethod::KMeans),
            "random" => Ok(InitMethod::Random),
            other => Err(SaltError::InvalidInput(format!("unknown init method '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub states: usize,
    pub rank: usize,
    pub lags: usize,
    pub mode: Mode,
    pub max_iters: usize,
    /// Stop once the relative change of the objective drops below this.
    pub rel_tol: f64,
    pub seed: u64,
    pub init: InitMethod,
    pub prior: DirichletPrior,
    pub inner_sweeps: usize,
}

impl FitConfig {
    pub fn new(states: usize, rank: usize, lags: usize, mode: Mode) -> Self {
        Self {
            states,
            rank,
            lags,
            mode,
            max_iters: 100,
            rel_tol: 1e-7,
            seed: 0,
            init: InitMethod::KMeans,
            prior: DirichletPrior::default(),
            inner_sweeps: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.states == 0 || self.rank == 0 || self.lags == 0 {
            return Err(SaltError::InvalidInput("states, rank and lags must be positive".into()));
        }
        if self.max_iters == 0 || self.inner_sweeps == 0 {
            return Err(SaltError::InvalidInput("max_iters and inner_sweeps must be at least 1".into()));
        }
        if !(self.rel_tol >= 0.0) {
            return Err(SaltError::InvalidInput("rel_tol must be non-negative".into()));
        }
        if self.prior.diag < 1.0 || self.prior.offdiag < 1.0 {
            return Err(SaltError::InvalidInput("Dirichlet concentrations must be at least 1".into()));
        }
        Ok(())
    }
}

/// Per-iteration record of a fit.
#[derive(Debug, Clone)]
pub struct FitTrace {
    /// Marginal log-likelihood of the scored frames after each E-step.
    pub loglik: Vec<f64>,
    /// `loglik` plus the Dirichlet log-prior of the transition matrix; this is
    /// the quantity EM never decreases.
    pub objective: Vec<f64>,
    pub posterior: HmmPosterior,
    pub converged: bool,
    /// Number of least-squares solves that needed a ridge.
    pub ridge_events: usize,
    /// Number of (state, iteration) pairs skipped for lack of responsibility.
    pub frozen_events: usize,
    pub frames: usize,
}

impl FitTrace {
    pub fn final_loglik(&self) -> f64 {
        *self.loglik.last().unwrap_or(&f64::NAN)
    }

    pub fn per_frame_loglik(&self) -> f64 {
        self.final_loglik() / self.frames as f64
    }

    /// Largest relative decrease between consecutive entries (0 if monotone).
    pub fn worst_decrease(values: &[f64]) -> f64 {
        values
            .windows(2)
            .map(|w| (w[0] - w[1]) / w[0].abs().max(1e-300))
            .fold(0.0, f64::max)
    }

    /// True when every step satisfies `v[k+1] >= v[k] - slack * |v[k]|`.
    pub fn is_monotone(&self, slack: f64) -> bool {
        Self::worst_decrease(&self.objective) <= slack
    }
}

#[derive(Debug, Default, Clone, Copy)]
pub struct StepDiagnostics {
    pub ridge_events: usize,
    pub frozen_events: usize,
}

/// A switching autoregression with Gaussian emissions.
pub trait SwitchingAr {
    fn transitions(&self) -> &TransitionModel;
    fn set_transitions(&mut self, tm: TransitionModel);
    fn num_states(&self) -> usize;
    /// `(Ψ, b, Σ)` of state `h`: mean `Ψ x + b`, covariance `Σ`.
    fn emission(&self, h: usize) -> (DMatrix<f64>, &DVector<f64>, &DMatrix<f64>);
    fn m_step_states(&mut self, stats: &[WeightedStats], diag: &mut StepDiagnostics) -> Result<()>;
}

/// `(T - L) x H` Gaussian log-densities of every scored frame under every state.
pub fn gaussian_log_likelihoods<M: SwitchingAr + ?Sized>(model: &M, design: &LagDesign) -> Result<DMatrix<f64>> {
    let h = model.num_states();
    let frames = design.frames();
    let n = design.dim();
    let mut out = DMatrix::zeros(frames, h);
    let mut resid = vec![0.0; n];
    for s in 0..h {
        let (psi, bias, cov) = model.emission(s);
        let g = GaussianFactor::new(cov)?;
        let means = design.means(&psi, bias);
        for r in 0..frames {
            for q in 0..n {
                resid[q] = design.y[(r, q)] - means[(r, q)];
            }
            out[(r, s)] = g.log_density(&resid);
        }
    }
    Ok(out)
}

/// Exact posterior over the discrete states of the scored frames.
///
/// A one-state model is scored from the cached second moments instead of
/// per-frame densities.
pub fn posterior<M: SwitchingAr + ?Sized>(model: &M, design: &LagDesign) -> Result<HmmPosterior> {
    if model.num_states() == 1 {
        let (psi, bias, cov) = model.emission(0);
        let g = GaussianFactor::new(cov)?;
        let nll = design.unweighted_stats().expected_nll(&psi, bias, &g.inverse(), g.log_det());
        if !nll.is_finite() {
            return Err(SaltError::Numerical("non-finite log-likelihood".into()));
        }
        return Ok(HmmPosterior::single_state(design.frames(), -nll));
    }
    let ll = gaussian_log_likelihoods(model, design)?;
    forward_backward(&ll, model.transitions())
}

/// `frames x N` means `Σ_h w[t, h] (Ψ_h x_t + b_h)` for per-frame state weights `w`.
pub fn mixture_means<M: SwitchingAr + ?Sized>(model: &M, design: &LagDesign, weights: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if weights.shape() != (design.frames(), model.num_states()) {
        return Err(SaltError::Shape(format!(
            "weights are {:?}, expected {:?}",
            weights.shape(),
            (design.frames(), model.num_states())
        )));
    }
    let mut out = DMatrix::zeros(design.frames(), design.dim());
    for h in 0..model.num_states() {
        let (psi, bias, _) = model.emission(h);
        let m = design.means(&psi, bias);
        for r in 0..design.frames() {
            let w = weights[(r, h)];
            if w != 0.0 {
                for q in 0..design.dim() {
                    out[(r, q)] += w * m[(r, q)];
                }
            }
        }
    }
    Ok(out)
}

/// Per-state weighted statistics under the posterior marginals.
pub fn state_stats(design: &LagDesign, omega: &DMatrix<f64>) -> Vec<WeightedStats> {
    (0..omega.ncols())
        .map(|h| {
            let w: Vec<f64> = omega.column(h).iter().copied().collect();
            design.stats(&w)
        })
        .collect()
}

/// MAP transition update that keeps the previous row when a row has no mass.
pub(crate) fn robust_transition_update(
    post: &HmmPosterior,
    prior: &DirichletPrior,
    prev: &TransitionModel,
) -> TransitionModel {
    let counts = post.transition_counts();
    let h = counts.nrows();
    let mut pi = prev.pi.clone();
    for r in 0..h {
        let row: Vec<f64> = (0..h).map(|k| (counts[(r, k)] + prior.alpha(r, k) - 1.0).max(0.0)).collect();
        let s: f64 = row.iter().sum();
        if s > 0.0 && s.is_finite() {
            for k in 0..h {
                pi[(r, k)] = row[k] / s;
            }
        }
    }
    let w0 = post.omega.row(0).transpose();
    let s = w0.sum();
    let init = if s > 0.0 { w0 / s } else { prev.init.clone() };
    TransitionModel { pi, init }
}

pub(crate) fn run_em<M: SwitchingAr>(mut model: M, design: &LagDesign, cfg: &FitConfig) -> Result<(M, FitTrace)> {
    let mut loglik = Vec::new();
    let mut objective = Vec::new();
    let mut diag = StepDiagnostics::default();
    let mut converged = false;
    let wrap = |iteration: usize| move |e: SaltError| SaltError::Fit { iteration, source: Box::new(e) };
    let mut it = 0;
    let posterior = loop {
        let post = posterior(&model, design).map_err(wrap(it))?;
        let obj = post.log_marginal + cfg.prior.log_density(&model.transitions().pi);
        if let Some(&prev) = objective.last() {
            let prev: f64 = prev;
            if (obj - prev).abs() <= cfg.rel_tol * prev.abs() {
                converged = true;
            }
        }
        loglik.push(post.log_marginal);
        objective.push(obj);
        if converged || it + 1 >= cfg.max_iters {
            break post;
        }

        let tm = robust_transition_update(&post, &cfg.prior, model.transitions());
        model.set_transitions(tm);
        let stats = state_stats(design, &post.omega);
        model.m_step_states(&stats, &mut diag).map_err(wrap(it))?;
        it += 1;
    };
    Ok((
        model,
        FitTrace {
            loglik,
            objective,
            posterior,
            converged,
            ridge_events: diag.ridge_events,
            frozen_events: diag.frozen_events,
            frames: design.frames(),
        },
    ))
}
