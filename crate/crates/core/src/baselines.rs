//! Unconstrained ARHMM baseline and parameter accounting.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::em::{run_em, FitConfig, FitTrace, InitMethod, StepDiagnostics, SwitchingAr, COV_JITTER, MIN_STATE_WEIGHT};
use crate::error::{shape_err, Result, SaltError};
use crate::hmm::TransitionModel;
use crate::init::kmeans;
use crate::linalg::{symmetrize, GaussianFactor};
use crate::rng::seeded;
use crate::series::TimeSeries;
use crate::stats::{residual_covariance, weighted_ols, LagDesign, WeightedStats};
use crate::tensor::{mode_n_matricize, mode_n_unmatricize, Tensor3};

/// One regime of an ARHMM: `y_t ~ N(A ×₂,₃ X_t + b, Σ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ArhmmState {
    /// `N x N x L` autoregressive tensor.
    pub tensor: Tensor3,
    pub bias: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl ArhmmState {
    pub fn coefficient_matrix(&self) -> DMatrix<f64> {
        mode_n_matricize(&self.tensor, 1).expect("tensor is three-way")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArhmmParams {
    pub lags: usize,
    pub states: Vec<ArhmmState>,
    pub tm: TransitionModel,
}

impl ArhmmParams {
    pub fn new(lags: usize, states: Vec<ArhmmState>, tm: TransitionModel) -> Result<Self> {
        let p = Self { lags, states, tm };
        p.validate()?;
        Ok(p)
    }

    pub fn num_states(&self) -> usize {
        self.states.len()
    }

    pub fn dim(&self) -> usize {
        self.states.first().map_or(0, |s| s.bias.len())
    }

    pub fn validate(&self) -> Result<()> {
        if self.states.is_empty() {
            return Err(SaltError::InvalidInput("need at least one state".into()));
        }
        self.tm.validate()?;
        if self.tm.num_states() != self.states.len() {
            return shape_err("transition matrix size differs from the number of states");
        }
        let n = self.dim();
        for s in &self.states {
            if s.tensor.dims() != [n, n, self.lags] || s.bias.len() != n || s.cov.shape() != (n, n) {
                return shape_err(format!("state shapes do not match N={n}, L={}", self.lags));
            }
            GaussianFactor::new(&s.cov)?;
        }
        Ok(())
    }
}

impl SwitchingAr for ArhmmParams {
    fn transitions(&self) -> &TransitionModel {
        &self.tm
    }
    fn set_transitions(&mut self, tm: TransitionModel) {
        self.tm = tm;
    }
    fn num_states(&self) -> usize {
        self.states.len()
    }
    fn emission(&self, h: usize) -> (DMatrix<f64>, &DVector<f64>, &DMatrix<f64>) {
        let s = &self.states[h];
        (s.coefficient_matrix(), &s.bias, &s.cov)
    }
    fn m_step_states(&mut self, stats: &[WeightedStats], diag: &mut StepDiagnostics) -> Result<()> {
        let (n, l) = (self.dim(), self.lags);
        for (s, st) in self.states.iter_mut().zip(stats) {
            if st.sw < MIN_STATE_WEIGHT {
                diag.frozen_events += 1;
                continue;
            }
            *s = ols_state(st, n, l, diag)?;
        }
        Ok(())
    }
}

fn ols_state(st: &WeightedStats, n: usize, l: usize, diag: &mut StepDiagnostics) -> Result<ArhmmState> {
    let (psi, bias, ridged) = weighted_ols(st)?;
    if ridged {
        diag.ridge_events += 1;
    }
    let cov = symmetrize(&residual_covariance(st, &psi, &bias, COV_JITTER));
    Ok(ArhmmState {
        tensor: mode_n_unmatricize(&psi, 1, [n, n, l])?,
        bias,
        cov,
    })
}

/// Starting point: per-cluster least squares on k-means labels of the lag
/// windows, or on random soft assignments.
pub fn initialize_arhmm(design: &LagDesign, cfg: &FitConfig) -> Result<ArhmmParams> {
    let mut rng = seeded(cfg.seed);
    let (n, l, h) = (design.dim(), cfg.lags, cfg.states);
    let frames = design.frames();
    let mut diag = StepDiagnostics::default();
    let (weights, tm) = match cfg.init {
        InitMethod::KMeans => {
            let labels = kmeans(&design.x, h, &mut rng, 100);
            let mut counts = DMatrix::from_element(h, h, 1.0);
            for win in labels.windows(2) {
                counts[(win[0], win[1])] += 1.0;
            }
            for r in 0..h {
                let s = counts.row(r).sum();
                counts.row_mut(r).scale_mut(1.0 / s);
            }
            let w = DMatrix::from_fn(frames, h, |r, c| if labels[r] == c { 1.0 } else { 0.0 });
            let tm = TransitionModel {
                pi: counts,
                init: DVector::from_element(h, 1.0 / h as f64),
            };
            (w, tm)
        }
        InitMethod::Random => {
            let mut w = DMatrix::from_fn(frames, h, |_, _| rng.random::<f64>() + 1e-3);
            for mut row in w.row_iter_mut() {
                let s = row.sum();
                row /= s;
            }
            (w, TransitionModel::sticky(h, 0.9))
        }
    };
    let global = design.unweighted_stats();
    let mut states = Vec::with_capacity(h);
    for c in 0..h {
        let wc: Vec<f64> = weights.column(c).iter().copied().collect();
        let st = design.stats(&wc);
        // A cluster too small for a regression falls back to the pooled fit.
        let st = if st.sw > (n * l + 1) as f64 { st } else { global.clone() };
        states.push(ols_state(&st, n, l, &mut diag)?);
    }
    ArhmmParams::new(l, states, tm)
}

/// EM for the full-tensor ARHMM; `cfg.rank` and `cfg.mode` are ignored.
pub fn fit_arhmm(y: &TimeSeries, cfg: &FitConfig) -> Result<(ArhmmParams, FitTrace)> {
    if y.len() <= cfg.lags + 1 {
        return Err(SaltError::InvalidInput(format!(
            "series of length {} is too short for {} lags",
            y.len(),
            cfg.lags
        )));
    }
    let design = LagDesign::new(y, cfg.lags)?;
    fit_arhmm_design(&design, cfg)
}

pub fn fit_arhmm_design(design: &LagDesign, cfg: &FitConfig) -> Result<(ArhmmParams, FitTrace)> {
    if cfg.states == 0 || cfg.lags == 0 || cfg.max_iters == 0 {
        return Err(SaltError::InvalidInput("states, lags and max_iters must be positive".into()));
    }
    if design.lags != cfg.lags {
        return shape_err("design lag order differs from the configuration");
    }
    let init = initialize_arhmm(design, cfg)?;
    run_em(init, design, cfg)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Arhmm,
    CpSalt,
    TuckerSalt,
    Slds,
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::Arhmm => "arhmm",
            ModelKind::CpSalt => "cp-salt",
            ModelKind::TuckerSalt => "tucker-salt",
            ModelKind::Slds => "slds",
        })
    }
}

impl FromStr for ModelKind {
    type Err = SaltError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "arhmm" => Ok(ModelKind::Arhmm),
            "cp-salt" | "cp" => Ok(ModelKind::CpSalt),
            "tucker-salt" | "tucker" => Ok(ModelKind::TuckerSalt),
            "slds" => Ok(ModelKind::Slds),
            other => Err(SaltError::InvalidInput(format!("unknown model kind `{other}`"))),
        }
    }
}

/// Dynamics parameter count, excluding covariances and biases.
///
/// ARHMM `H N² L`; CP `H (2ND + LD + D)`; Tucker `H (2ND + LD + D³)`;
/// SLDS `H D² + N D` (per-state dynamics, shared emission matrix).
pub fn param_count(kind: ModelKind, h: u64, n: u64, l: u64, d: u64) -> u64 {
    match kind {
        ModelKind::Arhmm => h * n * n * l,
        ModelKind::CpSalt => h * (2 * n * d + l * d + d),
        ModelKind::TuckerSalt => h * (2 * n * d + l * d + d * d * d),
        ModelKind::Slds => h * d * d + n * d,
    }
}
