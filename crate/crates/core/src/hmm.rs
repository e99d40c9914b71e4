//! Exact inference for a discrete Markov chain with arbitrary per-step
//! emission log-likelihoods.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Result, SaltError};
use crate::linalg::log_sum_exp;

const STOCHASTIC_TOL: f64 = 1e-12;

/// Markov chain over `H` discrete states.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionModel {
    /// `pi[(h, k)] = p(z_t = k | z_{t-1} = h)`.
    pub pi: DMatrix<f64>,
    pub init: DVector<f64>,
}

impl TransitionModel {
    pub fn new(pi: DMatrix<f64>, init: DVector<f64>) -> Result<Self> {
        let tm = Self { pi, init };
        tm.validate()?;
        Ok(tm)
    }

    pub fn uniform(h: usize) -> Self {
        let p = 1.0 / h as f64;
        Self {
            pi: DMatrix::from_element(h, h, p),
            init: DVector::from_element(h, p),
        }
    }

    /// `diag` on the diagonal, the rest spread evenly; uniform initial distribution.
    pub fn sticky(h: usize, diag: f64) -> Self {
        if h == 1 {
            return Self::uniform(1);
        }
        let off = (1.0 - diag) / (h - 1) as f64;
        Self {
            pi: DMatrix::from_fn(h, h, |i, j| if i == j { diag } else { off }),
            init: DVector::from_element(h, 1.0 / h as f64),
        }
    }

    pub fn num_states(&self) -> usize {
        self.init.len()
    }

    pub fn validate(&self) -> Result<()> {
        let h = self.init.len();
        if h == 0 || self.pi.nrows() != h || self.pi.ncols() != h {
            return shape_err(format!(
                "transition matrix {}x{} does not match {h} states",
                self.pi.nrows(),
                self.pi.ncols()
            ));
        }
        let bad = |v: f64| !v.is_finite() || v < 0.0;
        if self.pi.iter().any(|&v| bad(v)) || self.init.iter().any(|&v| bad(v)) {
            return Err(SaltError::InvalidInput("probabilities must be finite and non-negative".into()));
        }
        for r in 0..h {
            let s: f64 = self.pi.row(r).sum();
            if (s - 1.0).abs() > STOCHASTIC_TOL * h as f64 {
                return Err(SaltError::InvalidInput(format!("row {r} of pi sums to {s}")));
            }
        }
        let s = self.init.sum();
        if (s - 1.0).abs() > STOCHASTIC_TOL * h as f64 {
            return Err(SaltError::InvalidInput(format!("initial distribution sums to {s}")));
        }
        Ok(())
    }

    fn log_pi(&self) -> DMatrix<f64> {
        self.pi.map(f64::ln)
    }

    fn log_init(&self) -> DVector<f64> {
        self.init.map(f64::ln)
    }
}

/// Dirichlet prior on each transition row: `diag` on the self-transition,
/// `offdiag` elsewhere. `(1, 1)` gives maximum likelihood.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DirichletPrior {
    pub diag: f64,
    pub offdiag: f64,
}

impl Default for DirichletPrior {
    fn default() -> Self {
        Self { diag: 1.0, offdiag: 1.0 }
    }
}

impl DirichletPrior {
    pub fn sticky(diag: f64, offdiag: f64) -> Self {
        Self { diag, offdiag }
    }

    pub fn alpha(&self, h: usize, k: usize) -> f64 {
        if h == k {
            self.diag
        } else {
            self.offdiag
        }
    }

    pub fn is_flat(&self) -> bool {
        self.diag == 1.0 && self.offdiag == 1.0
    }

    /// Unnormalized log density of `pi` under the prior.
    pub fn log_density(&self, pi: &DMatrix<f64>) -> f64 {
        let mut s = 0.0;
        for h in 0..pi.nrows() {
            for k in 0..pi.ncols() {
                let a = self.alpha(h, k) - 1.0;
                if a != 0.0 {
                    s += a * pi[(h, k)].ln();
                }
            }
        }
        s
    }
}

/// Smoothed posterior of the chain.
#[derive(Debug, Clone)]
pub struct HmmPosterior {
    /// `T x H` smoothed marginals.
    pub omega: DMatrix<f64>,
    /// `T - 1` pairwise expectations, `xi[t][(h, k)] = p(z_t = h, z_{t+1} = k | y)`.
    pub xi: Vec<DMatrix<f64>>,
    pub log_marginal: f64,
    /// `T x H` filtered marginals `p(z_t | y_{1:t})`.
    pub filtered: DMatrix<f64>,
}

impl HmmPosterior {
    pub fn len(&self) -> usize {
        self.omega.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.omega.nrows() == 0
    }

    /// Posterior of a one-state chain over `frames` frames.
    pub fn single_state(frames: usize, log_marginal: f64) -> Self {
        Self {
            omega: DMatrix::from_element(frames, 1, 1.0),
            xi: vec![DMatrix::from_element(1, 1, 1.0); frames.saturating_sub(1)],
            log_marginal,
            filtered: DMatrix::from_element(frames, 1, 1.0),
        }
    }

    /// `sum_t xi[t]`.
    pub fn transition_counts(&self) -> DMatrix<f64> {
        let h = self.omega.ncols();
        let mut c = DMatrix::zeros(h, h);
        for x in &self.xi {
            c += x;
        }
        c
    }

    /// One-step predictive state probabilities `p(z_t | y_{1:t-1})`.
    pub fn predictive(&self, tm: &TransitionModel) -> DMatrix<f64> {
        let (t_len, h) = self.filtered.shape();
        let mut out = DMatrix::zeros(t_len, h);
        for t in 0..t_len {
            let row = if t == 0 {
                tm.init.transpose()
            } else {
                self.filtered.row(t - 1) * &tm.pi
            };
            out.row_mut(t).copy_from(&row);
        }
        out
    }
}

fn check_inputs(log_lik: &DMatrix<f64>, tm: &TransitionModel) -> Result<()> {
    if log_lik.nrows() == 0 {
        return Err(SaltError::InvalidInput("need at least one time step".into()));
    }
    if log_lik.ncols() != tm.num_states() {
        return shape_err(format!(
            "log-likelihood has {} columns for {} states",
            log_lik.ncols(),
            tm.num_states()
        ));
    }
    if log_lik.iter().any(|v| !v.is_finite()) {
        return Err(SaltError::InvalidInput("log-likelihoods must be finite".into()));
    }
    Ok(())
}

/// Forward-backward smoothing in log space.
pub fn forward_backward(log_lik: &DMatrix<f64>, tm: &TransitionModel) -> Result<HmmPosterior> {
    check_inputs(log_lik, tm)?;
    let (t_len, h) = log_lik.shape();
    let log_pi = tm.log_pi();
    let log_init = tm.log_init();

    let mut log_alpha = DMatrix::zeros(t_len, h);
    let mut buf = vec![0.0; h];
    for k in 0..h {
        log_alpha[(0, k)] = log_init[k] + log_lik[(0, k)];
    }
    for t in 1..t_len {
        for k in 0..h {
            for j in 0..h {
                buf[j] = log_alpha[(t - 1, j)] + log_pi[(j, k)];
            }
            log_alpha[(t, k)] = log_sum_exp(&buf) + log_lik[(t, k)];
        }
    }
    let last: Vec<f64> = log_alpha.row(t_len - 1).iter().copied().collect();
    let log_marginal = log_sum_exp(&last);
    if !log_marginal.is_finite() {
        return Err(SaltError::Numerical("every state path has zero probability".into()));
    }

    let mut log_beta = DMatrix::zeros(t_len, h);
    for t in (0..t_len - 1).rev() {
        for j in 0..h {
            for k in 0..h {
                buf[k] = log_pi[(j, k)] + log_lik[(t + 1, k)] + log_beta[(t + 1, k)];
            }
            log_beta[(t, j)] = log_sum_exp(&buf);
        }
    }

    let mut omega = DMatrix::zeros(t_len, h);
    let mut filtered = DMatrix::zeros(t_len, h);
    for t in 0..t_len {
        let row: Vec<f64> = log_alpha.row(t).iter().copied().collect();
        let norm = log_sum_exp(&row);
        let mut s = 0.0;
        for k in 0..h {
            filtered[(t, k)] = (log_alpha[(t, k)] - norm).exp();
            let v = (log_alpha[(t, k)] + log_beta[(t, k)] - log_marginal).exp();
            omega[(t, k)] = v;
            s += v;
        }
        for k in 0..h {
            omega[(t, k)] /= s;
        }
    }

    let mut xi = Vec::with_capacity(t_len.saturating_sub(1));
    for t in 0..t_len.saturating_sub(1) {
        let mut m = DMatrix::zeros(h, h);
        let mut s = 0.0;
        for j in 0..h {
            for k in 0..h {
                let v = (log_alpha[(t, j)] + log_pi[(j, k)] + log_lik[(t + 1, k)] + log_beta[(t + 1, k)]
                    - log_marginal)
                    .exp();
                m[(j, k)] = v;
                s += v;
            }
        }
        m /= s;
        xi.push(m);
    }

    Ok(HmmPosterior {
        omega,
        xi,
        log_marginal,
        filtered,
    })
}

/// Most probable state path. Ties resolve toward the lower state index.
pub fn viterbi(log_lik: &DMatrix<f64>, tm: &TransitionModel) -> Result<Vec<usize>> {
    check_inputs(log_lik, tm)?;
    let (t_len, h) = log_lik.shape();
    let log_pi = tm.log_pi();
    let log_init = tm.log_init();
    let mut delta: Vec<f64> = (0..h).map(|k| log_init[k] + log_lik[(0, k)]).collect();
    let mut back = vec![0usize; t_len * h];
    let mut next = vec![0.0; h];
    for t in 1..t_len {
        for k in 0..h {
            let mut best = f64::NEG_INFINITY;
            let mut arg = 0;
            for j in 0..h {
                let v = delta[j] + log_pi[(j, k)];
                if v > best {
                    best = v;
                    arg = j;
                }
            }
            next[k] = best + log_lik[(t, k)];
            back[t * h + k] = arg;
        }
        std::mem::swap(&mut delta, &mut next);
    }
    let mut state = 0;
    let mut best = f64::NEG_INFINITY;
    for (k, &v) in delta.iter().enumerate() {
        if v > best {
            best = v;
            state = k;
        }
    }
    if best == f64::NEG_INFINITY {
        return Err(SaltError::Numerical("every state path has zero probability".into()));
    }
    let mut path = vec![0; t_len];
    path[t_len - 1] = state;
    for t in (1..t_len).rev() {
        state = back[t * h + state];
        path[t - 1] = state;
    }
    Ok(path)
}

/// Joint log-probability of a state path and the observations.
pub fn path_log_score(log_lik: &DMatrix<f64>, tm: &TransitionModel, path: &[usize]) -> Result<f64> {
    if path.len() != log_lik.nrows() {
        return shape_err(format!("path length {} vs {} steps", path.len(), log_lik.nrows()));
    }
    let h = tm.num_states();
    if path.iter().any(|&s| s >= h) {
        return Err(SaltError::InvalidInput("state index out of range".into()));
    }
    let mut s = tm.init[path[0]].ln() + log_lik[(0, path[0])];
    for t in 1..path.len() {
        s += tm.pi[(path[t - 1], path[t])].ln() + log_lik[(t, path[t])];
    }
    Ok(s)
}

/// MAP transition update: `pi[h, k] ∝ counts[h, k] + alpha_hk - 1`, `init ∝ omega_0`.
pub fn update_transitions(
    counts: &DMatrix<f64>,
    omega0: &DVector<f64>,
    prior: &DirichletPrior,
) -> Result<TransitionModel> {
    let h = omega0.len();
    if counts.nrows() != h || counts.ncols() != h {
        return shape_err("transition counts do not match the number of states");
    }
    if prior.diag < 1.0 || prior.offdiag < 1.0 {
        return Err(SaltError::InvalidInput("Dirichlet concentrations must be at least 1".into()));
    }
    let mut pi = DMatrix::zeros(h, h);
    for r in 0..h {
        let mut s = 0.0;
        for k in 0..h {
            let v = (counts[(r, k)] + prior.alpha(r, k) - 1.0).max(0.0);
            pi[(r, k)] = v;
            s += v;
        }
        if !(s > 0.0) || !s.is_finite() {
            return Err(SaltError::Numerical(format!("transition row {r} has no mass")));
        }
        for k in 0..h {
            pi[(r, k)] /= s;
        }
    }
    let s = omega0.sum();
    if !(s > 0.0) {
        return Err(SaltError::Numerical("initial state weights have no mass".into()));
    }
    Ok(TransitionModel {
        pi,
        init: omega0 / s,
    })
}
