//! Switching autoregressive models whose per-state AR tensors are kept in
//! Tucker or CP form, fitted by EM with exact coordinate-wise M-steps.
//!
//! All M-step solves work from the per-state weighted statistics of the lag
//! design (see [`crate::stats`]), so each coordinate update costs the same
//! no matter how long the series is.

use nalgebra::{DMatrix, DVector};

use crate::em::{
    gaussian_log_likelihoods, run_em, state_stats, FitConfig, FitTrace, InitMethod, StepDiagnostics, SwitchingAr,
    COV_JITTER, MIN_STATE_WEIGHT,
};
use crate::error::{shape_err, Result, SaltError};
use crate::hmm::{forward_backward, HmmPosterior, TransitionModel};
use crate::init::{cp_als, hosvd, kmeans};
use crate::linalg::{solve_spd, solve_spd_vec, symmetrize, GaussianFactor};
use crate::rng::{seeded, standard_normal_matrix};
use crate::series::TimeSeries;
use crate::stats::{residual_covariance, weighted_ols, LagDesign, WeightedStats};
use crate::tensor::{kron, materialize, mode_n_matricize, row_major_vec, Mode, Tensor3, TuckerFactors};

/// Parameters of one discrete state.
#[derive(Debug, Clone, PartialEq)]
pub struct StateParams {
    pub factors: TuckerFactors,
    pub bias: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl StateParams {
    /// `A_(1) = U G_(1) (Vᵀ ⊗ Wᵀ)`, the `N x NL` map from a row-major lag
    /// vector to the mean.
    pub fn coefficient_matrix(&self) -> DMatrix<f64> {
        let f = &self.factors;
        let g1 = mode_n_matricize(&f.core, 1).expect("mode 1 is valid");
        &f.u * (g1 * kron(&f.v.transpose(), &f.w.transpose()))
    }

    /// `G_(1)(Vᵀ ⊗ Wᵀ)`: lag vector to rank-space input `x̃`.
    pub fn input_map(&self) -> DMatrix<f64> {
        let f = &self.factors;
        mode_n_matricize(&f.core, 1).expect("mode 1 is valid") * kron(&f.v.transpose(), &f.w.transpose())
    }

    fn expected_nll(&self, st: &WeightedStats) -> Result<f64> {
        let g = GaussianFactor::new(&self.cov)?;
        Ok(st.expected_nll(&self.coefficient_matrix(), &self.bias, &g.inverse(), g.log_det()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SaltParams {
    pub mode: Mode,
    pub lags: usize,
    pub rank: usize,
    pub states: Vec<StateParams>,
    pub tm: TransitionModel,
}

impl SaltParams {
    pub fn new(mode: Mode, lags: usize, rank: usize, states: Vec<StateParams>, tm: TransitionModel) -> Result<Self> {
        let p = Self {
            mode,
            lags,
            rank,
            states,
            tm,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn num_states(&self) -> usize {
        self.states.len()
    }

    pub fn dim(&self) -> usize {
        self.states.first().map(|s| s.bias.len()).unwrap_or(0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.states.is_empty() {
            return Err(SaltError::InvalidInput("model has no states".into()));
        }
        self.tm.validate()?;
        if self.tm.num_states() != self.states.len() {
            return shape_err(format!(
                "{} states but a {}-state transition model",
                self.states.len(),
                self.tm.num_states()
            ));
        }
        let n = self.dim();
        let d = self.rank;
        for (h, s) in self.states.iter().enumerate() {
            let f = &s.factors;
            f.check()?;
            if f.dims() != [n, n, self.lags] {
                return shape_err(format!("state {h}: factor rows {:?}, expected [{n}, {n}, {}]", f.dims(), self.lags));
            }
            if f.ranks() != [d, d, d] {
                return shape_err(format!("state {h}: ranks {:?}, expected {d}", f.ranks()));
            }
            if self.mode == Mode::Cp && !f.core.is_superdiagonal() {
                return Err(SaltError::InvalidInput(format!("state {h}: CP core must be superdiagonal")));
            }
            if s.bias.len() != n || s.cov.shape() != (n, n) {
                return shape_err(format!("state {h}: bias or covariance has the wrong size"));
            }
            GaussianFactor::new(&s.cov)?;
        }
        Ok(())
    }

    /// Dense AR tensor of state `h`.
    pub fn tensor(&self, h: usize) -> Result<Tensor3> {
        materialize(&self.states[h].factors)
    }

    /// One-step means of every scored frame under state `h`.
    pub fn state_means(&self, design: &LagDesign, h: usize) -> DMatrix<f64> {
        let s = &self.states[h];
        design.means(&s.coefficient_matrix(), &s.bias)
    }
}

impl SwitchingAr for SaltParams {
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
        sweep_states(self, stats, 1, diag)
    }
}

struct SaltFitter {
    params: SaltParams,
    sweeps: usize,
}

impl SwitchingAr for SaltFitter {
    fn transitions(&self) -> &TransitionModel {
        &self.params.tm
    }
    fn set_transitions(&mut self, tm: TransitionModel) {
        self.params.tm = tm;
    }
    fn num_states(&self) -> usize {
        self.params.states.len()
    }
    fn emission(&self, h: usize) -> (DMatrix<f64>, &DVector<f64>, &DMatrix<f64>) {
        self.params.emission(h)
    }
    fn m_step_states(&mut self, stats: &[WeightedStats], diag: &mut StepDiagnostics) -> Result<()> {
        sweep_states(&mut self.params, stats, self.sweeps, diag)
    }
}

fn sweep_states(p: &mut SaltParams, stats: &[WeightedStats], sweeps: usize, diag: &mut StepDiagnostics) -> Result<()> {
    let mode = p.mode;
    for (s, st) in p.states.iter_mut().zip(stats) {
        if st.sw < MIN_STATE_WEIGHT {
            diag.frozen_events += 1;
            continue;
        }
        for _ in 0..sweeps {
            guarded(s, st, diag, update_output)?;
            guarded(s, st, diag, |s, st| update_core(s, st, mode))?;
            guarded(s, st, diag, update_input)?;
            guarded(s, st, diag, update_lag)?;
            normalize_gauge(&mut s.factors);
            update_bias_cov(s, st)?;
        }
    }
    Ok(())
}

/// Applies a coordinate update; if it needed a ridge and made the expected
/// NLL worse, the previous value is restored.
fn guarded(
    s: &mut StateParams,
    st: &WeightedStats,
    diag: &mut StepDiagnostics,
    update: impl FnOnce(&mut StateParams, &WeightedStats) -> Result<bool>,
) -> Result<()> {
    let before = s.clone();
    let ridged = update(s, st)?;
    if ridged {
        diag.ridge_events += 1;
        if s.expected_nll(st)? > before.expected_nll(st)? {
            *s = before;
        }
    }
    Ok(())
}

/// Rescale factor columns to unit norm, absorbing the scales into the core.
/// Leaves the represented tensor unchanged.
pub fn normalize_gauge(f: &mut TuckerFactors) {
    let [d1, d2, d3] = f.ranks();
    let norms = |m: &DMatrix<f64>| -> Vec<f64> { (0..m.ncols()).map(|c| m.column(c).norm()).collect() };
    let (nu, nv, nw) = (norms(&f.u), norms(&f.v), norms(&f.w));
    for (c, &n) in nu.iter().enumerate() {
        if n > 0.0 {
            f.u.column_mut(c).scale_mut(1.0 / n);
        }
    }
    for (c, &n) in nv.iter().enumerate() {
        if n > 0.0 {
            f.v.column_mut(c).scale_mut(1.0 / n);
        }
    }
    for (c, &n) in nw.iter().enumerate() {
        if n > 0.0 {
            f.w.column_mut(c).scale_mut(1.0 / n);
        }
    }
    let s = |n: f64| if n > 0.0 { n } else { 1.0 };
    for i in 0..d1 {
        for j in 0..d2 {
            for k in 0..d3 {
                let g = f.core.get(i, j, k);
                if g != 0.0 {
                    f.core.set(i, j, k, g * s(nu[i]) * s(nv[j]) * s(nw[k]));
                }
            }
        }
    }
}

/// Output factors: `U = Σω (y - b) x̃ᵀ (Σω x̃ x̃ᵀ)⁻¹` with `x̃ = G_(1)(Vᵀ ⊗ Wᵀ) x`.
/// Returns whether a ridge was needed.
pub fn update_output(s: &mut StateParams, st: &WeightedStats) -> Result<bool> {
    let phi = s.input_map();
    let c = st.cross_centered(&s.bias);
    let gram = symmetrize(&(&phi * &st.sxx * phi.transpose()));
    let rhs = &phi * c.transpose();
    let (ut, ridged) = solve_spd(&gram, &rhs)?;
    s.factors.u = ut.transpose();
    Ok(ridged)
}

/// Core tensor. Tucker solves for every entry; CP only for the superdiagonal.
pub fn update_core(s: &mut StateParams, st: &WeightedStats, mode: Mode) -> Result<bool> {
    let f = &s.factors;
    let d = f.ranks()[0];
    let z = kron(&f.v.transpose(), &f.w.transpose());
    let lam = GaussianFactor::new(&s.cov)?.inverse();
    let ul = f.u.transpose() * &lam;
    let utlu = symmetrize(&(&ul * &f.u));
    let rhs_mat = &ul * st.cross_centered(&s.bias) * z.transpose();
    match mode {
        Mode::Tucker => {
            let zsz = symmetrize(&(&z * &st.sxx * z.transpose()));
            let gram = kron(&utlu, &zsz);
            let (g, ridged) = solve_spd_vec(&gram, &row_major_vec(&rhs_mat))?;
            s.factors.core = Tensor3::from_vec([d, d, d], g.as_slice().to_vec())?;
            Ok(ridged)
        }
        Mode::Cp => {
            let zd = DMatrix::from_fn(d, z.ncols(), |r, c| z[(r * d + r, c)]);
            let zsz = symmetrize(&(&zd * &st.sxx * zd.transpose()));
            let gram = utlu.component_mul(&zsz);
            let rhs = DVector::from_fn(d, |r, _| rhs_mat[(r, r * d + r)]);
            let (g, ridged) = solve_spd_vec(&gram, &rhs)?;
            if g.iter().any(|v| !v.is_finite()) {
                return Err(SaltError::Numerical("non-finite core update".into()));
            }
            s.factors.core = Tensor3::superdiagonal(g.as_slice());
            Ok(ridged)
        }
    }
}

/// `S̃[(q, q'), (a, b)] = Sxx[(q, a), (q', b)]`, an `N² x L²` regrouping of the
/// lag second moments.
fn lag_pair_view(sxx: &DMatrix<f64>, n: usize, l: usize) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(n * n, l * l);
    for qp in 0..n {
        for b in 0..l {
            let col = sxx.column(qp * l + b);
            for q in 0..n {
                for a in 0..l {
                    out[(q * n + qp, a * l + b)] = col[q * l + a];
                }
            }
        }
    }
    out
}

/// Input factors, solved for `vec(Vᵀ)` (parameter `V[q, j]` at `j * N + q`).
pub fn update_input(s: &mut StateParams, st: &WeightedStats) -> Result<bool> {
    let f = &s.factors;
    let (n, d, l) = (f.u.nrows(), f.ranks()[0], f.w.nrows());
    // F[p, j * L + a] = Σ_{i,k} U[p,i] g_ijk W[a,k]
    let mut fmat = DMatrix::zeros(n, d * l);
    for j in 0..d {
        let gj = DMatrix::from_fn(d, d, |i, k| f.core.get(i, j, k));
        let mj = &f.u * gj * f.w.transpose();
        fmat.columns_mut(j * l, l).copy_from(&mj);
    }
    let lam = GaussianFactor::new(&s.cov)?.inverse();
    let kmat = fmat.transpose() * &lam * &fmat;
    let r = fmat.transpose() * (&lam * st.cross_centered(&s.bias));

    // Gram[(j,q),(j',q')] = Σ_{a,b} K[(j,a),(j',b)] S[(q,a),(q',b)] as one product.
    let mut ktil = DMatrix::zeros(d * d, l * l);
    for j in 0..d {
        for jp in 0..d {
            for a in 0..l {
                for b in 0..l {
                    ktil[(j * d + jp, a * l + b)] = kmat[(j * l + a, jp * l + b)];
                }
            }
        }
    }
    let prod = ktil * lag_pair_view(&st.sxx, n, l).transpose();
    let mut gram = DMatrix::zeros(d * n, d * n);
    for j in 0..d {
        for jp in 0..d {
            for q in 0..n {
                for qp in 0..n {
                    gram[(j * n + q, jp * n + qp)] = prod[(j * d + jp, q * n + qp)];
                }
            }
        }
    }
    let mut rhs = DVector::zeros(d * n);
    for j in 0..d {
        for q in 0..n {
            rhs[j * n + q] = (0..l).map(|a| r[(j * l + a, q * l + a)]).sum();
        }
    }
    let (theta, ridged) = solve_spd_vec(&symmetrize(&gram), &rhs)?;
    s.factors.v = DMatrix::from_fn(n, d, |q, j| theta[j * n + q]);
    Ok(ridged)
}

/// Lag factors, solved for `vec(W)` (parameter `W[l, k]` at `l * D + k`).
pub fn update_lag(s: &mut StateParams, st: &WeightedStats) -> Result<bool> {
    let f = &s.factors;
    let (n, d, l) = (f.u.nrows(), f.ranks()[0], f.w.nrows());
    // Fw[p, q * D + k] = Σ_{i,j} U[p,i] g_ijk V[q,j]
    let mut fw = DMatrix::zeros(n, n * d);
    for k in 0..d {
        let m = &f.u * f.core.frontal_slice(k) * f.v.transpose();
        for q in 0..n {
            fw.column_mut(q * d + k).copy_from(&m.column(q));
        }
    }
    let lam = GaussianFactor::new(&s.cov)?.inverse();
    let k2 = fw.transpose() * &lam * &fw;
    let r = fw.transpose() * (&lam * st.cross_centered(&s.bias));

    // Gram[(a,k),(b,k')] = Σ_{q,q'} K2[(q,k),(q',k')] S[(q,a),(q',b)]
    let mut k2til = DMatrix::zeros(d * d, n * n);
    for k in 0..d {
        for kp in 0..d {
            for q in 0..n {
                for qp in 0..n {
                    k2til[(k * d + kp, q * n + qp)] = k2[(q * d + k, qp * d + kp)];
                }
            }
        }
    }
    let prod = lag_pair_view(&st.sxx, n, l).transpose() * k2til.transpose();
    let mut gram = DMatrix::zeros(l * d, l * d);
    for a in 0..l {
        for b in 0..l {
            for k in 0..d {
                for kp in 0..d {
                    gram[(a * d + k, b * d + kp)] = prod[(a * l + b, k * d + kp)];
                }
            }
        }
    }
    let mut rhs = DVector::zeros(l * d);
    for a in 0..l {
        for k in 0..d {
            rhs[a * d + k] = (0..n).map(|q| r[(q * d + k, q * l + a)]).sum();
        }
    }
    let (theta, ridged) = solve_spd_vec(&symmetrize(&gram), &rhs)?;
    s.factors.w = DMatrix::from_fn(l, d, |a, k| theta[a * d + k]);
    Ok(ridged)
}

/// Bias as the weighted mean residual, covariance as the weighted residual
/// covariance plus jitter.
pub fn update_bias_cov(s: &mut StateParams, st: &WeightedStats) -> Result<()> {
    if st.sw < MIN_STATE_WEIGHT {
        return Ok(());
    }
    let psi = s.coefficient_matrix();
    let bias = (&st.sy - &psi * &st.sx) / st.sw;
    let cov = residual_covariance(st, &psi, &bias, COV_JITTER);
    GaussianFactor::new(&cov)?;
    s.bias = bias;
    s.cov = cov;
    Ok(())
}

fn per_state_update(
    p: &mut SaltParams,
    y: &TimeSeries,
    post: &HmmPosterior,
    mut f: impl FnMut(&mut StateParams, &WeightedStats) -> Result<bool>,
) -> Result<StepDiagnostics> {
    let design = LagDesign::new(y, p.lags)?;
    if post.omega.shape() != (design.frames(), p.num_states()) {
        return shape_err("posterior does not match the scored frames and states");
    }
    let stats = state_stats(&design, &post.omega);
    let mut diag = StepDiagnostics::default();
    for (s, st) in p.states.iter_mut().zip(&stats) {
        if st.sw < MIN_STATE_WEIGHT {
            diag.frozen_events += 1;
            continue;
        }
        if f(s, st)? {
            diag.ridge_events += 1;
        }
    }
    Ok(diag)
}

/// Output-factor update for every state under the given posterior.
pub fn m_step_output(p: &mut SaltParams, y: &TimeSeries, post: &HmmPosterior) -> Result<StepDiagnostics> {
    per_state_update(p, y, post, update_output)
}

pub fn m_step_core(p: &mut SaltParams, y: &TimeSeries, post: &HmmPosterior) -> Result<StepDiagnostics> {
    let mode = p.mode;
    per_state_update(p, y, post, |s, st| update_core(s, st, mode))
}

pub fn m_step_input(p: &mut SaltParams, y: &TimeSeries, post: &HmmPosterior) -> Result<StepDiagnostics> {
    per_state_update(p, y, post, update_input)
}

pub fn m_step_lag(p: &mut SaltParams, y: &TimeSeries, post: &HmmPosterior) -> Result<StepDiagnostics> {
    per_state_update(p, y, post, update_lag)
}

pub fn m_step_bias_cov(p: &mut SaltParams, y: &TimeSeries, post: &HmmPosterior) -> Result<StepDiagnostics> {
    per_state_update(p, y, post, |s, st| update_bias_cov(s, st).map(|_| false))
}

/// `(T - L) x H` emission log-densities; the first `L` frames are conditioned on.
pub fn emission_log_likelihoods(p: &SaltParams, y: &TimeSeries) -> Result<DMatrix<f64>> {
    check_series(p, y)?;
    gaussian_log_likelihoods(p, &LagDesign::new(y, p.lags)?)
}

pub fn emission_log_likelihoods_design(p: &SaltParams, design: &LagDesign) -> Result<DMatrix<f64>> {
    gaussian_log_likelihoods(p, design)
}

pub fn e_step(p: &SaltParams, y: &TimeSeries) -> Result<HmmPosterior> {
    forward_backward(&emission_log_likelihoods(p, y)?, &p.tm)
}

fn check_series(p: &SaltParams, y: &TimeSeries) -> Result<()> {
    if y.dim() != p.dim() {
        return shape_err(format!("series has dimension {}, model {}", y.dim(), p.dim()));
    }
    Ok(())
}

/// Fit by EM from the configured initialization.
pub fn fit_em(y: &TimeSeries, cfg: &FitConfig) -> Result<(SaltParams, FitTrace)> {
    cfg.validate()?;
    if y.len() <= cfg.lags + 1 {
        return Err(SaltError::InvalidInput(format!(
            "series of length {} is too short for {} lags",
            y.len(),
            cfg.lags
        )));
    }
    let design = LagDesign::new(y, cfg.lags)?;
    fit_em_design(&design, cfg)
}

/// [`fit_em`] on a prebuilt design; repeated fits on one design share the
/// cached unweighted statistics.
pub fn fit_em_design(design: &LagDesign, cfg: &FitConfig) -> Result<(SaltParams, FitTrace)> {
    cfg.validate()?;
    if design.lags != cfg.lags {
        return shape_err("design lag order differs from the configuration");
    }
    let init = initialize(design, cfg)?;
    fit_em_from(design, init, cfg)
}

/// EM from explicit starting parameters.
pub fn fit_em_from(design: &LagDesign, init: SaltParams, cfg: &FitConfig) -> Result<(SaltParams, FitTrace)> {
    cfg.validate()?;
    init.validate()?;
    if init.lags != design.lags || init.dim() != design.dim() {
        return shape_err("initial parameters do not match the data");
    }
    let fitter = SaltFitter {
        params: init,
        sweeps: cfg.inner_sweeps,
    };
    let (fitter, trace) = run_em(fitter, design, cfg)?;
    Ok((fitter.params, trace))
}

/// Starting parameters for EM.
pub fn initialize(design: &LagDesign, cfg: &FitConfig) -> Result<SaltParams> {
    let mut rng = seeded(cfg.seed);
    let (n, l, d, h) = (design.dim(), cfg.lags, cfg.rank, cfg.states);
    let global = design.unweighted_stats();
    let mean = &global.sy / global.sw;
    let sample_cov = symmetrize(&(&global.syy / global.sw - &mean * mean.transpose())) + DMatrix::identity(n, n) * COV_JITTER;

    let random_state = |rng: &mut _| -> Result<StateParams> {
        let u = standard_normal_matrix(rng, n, d) / ((n * d) as f64).sqrt();
        let v = standard_normal_matrix(rng, n, d) / ((n * d) as f64).sqrt();
        let w = standard_normal_matrix(rng, l, d) / ((l * d) as f64).sqrt();
        let core = match cfg.mode {
            Mode::Tucker => Tensor3::from_vec([d, d, d], standard_normal_matrix(rng, 1, d * d * d).as_slice().to_vec())?,
            Mode::Cp => Tensor3::superdiagonal(standard_normal_matrix(rng, 1, d).as_slice()),
        };
        Ok(StateParams {
            factors: TuckerFactors::new(u, v, w, core)?,
            bias: mean.clone(),
            cov: sample_cov.clone(),
        })
    };

    match cfg.init {
        InitMethod::Random => {
            let states = (0..h).map(|_| random_state(&mut rng)).collect::<Result<Vec<_>>>()?;
            SaltParams::new(cfg.mode, l, d, states, TransitionModel::sticky(h, 0.9))
        }
        InitMethod::KMeans => {
            let labels = kmeans(&design.x, h, &mut rng, 100);
            let mut states = Vec::with_capacity(h);
            for c in 0..h {
                let w: Vec<f64> = labels.iter().map(|&lab| if lab == c { 1.0 } else { 0.0 }).collect();
                let st = design.stats(&w);
                if st.sw < 1.0 {
                    states.push(random_state(&mut rng)?);
                    continue;
                }
                let (psi, bias, _) = weighted_ols(&st)?;
                let a = crate::tensor::mode_n_unmatricize(&psi, 1, [n, n, l])?;
                let factors = match cfg.mode {
                    Mode::Tucker => hosvd(&a, d, &mut rng)?,
                    Mode::Cp => cp_als(&a, d, 100, &mut rng)?,
                };
                let mut s = StateParams {
                    factors,
                    bias,
                    cov: sample_cov.clone(),
                };
                s.factors.check()?;
                let psi_low = s.coefficient_matrix();
                s.bias = (&st.sy - &psi_low * &st.sx) / st.sw;
                let cov = residual_covariance(&st, &psi_low, &s.bias, COV_JITTER);
                if GaussianFactor::new(&cov).is_ok() {
                    s.cov = cov;
                }
                states.push(s);
            }
            let mut counts = DMatrix::from_element(h, h, 1.0);
            for win in labels.windows(2) {
                counts[(win[0], win[1])] += 1.0;
            }
            for r in 0..h {
                let s = counts.row(r).sum();
                counts.row_mut(r).scale_mut(1.0 / s);
            }
            let tm = TransitionModel {
                pi: counts,
                init: DVector::from_element(h, 1.0 / h as f64),
            };
            SaltParams::new(cfg.mode, l, d, states, tm)
        }
    }
}

/// Low-dimensional continuous representation `x_t = G_(1) vec(Vᵀ X_t W)` of
/// each scored frame under the state `path[t - L]`.
pub fn latent_trajectory(p: &SaltParams, y: &TimeSeries, path: &[usize]) -> Result<DMatrix<f64>> {
    check_series(p, y)?;
    let design = LagDesign::new(y, p.lags)?;
    if path.len() != design.frames() {
        return shape_err(format!("path has {} entries for {} scored frames", path.len(), design.frames()));
    }
    if path.iter().any(|&s| s >= p.num_states()) {
        return Err(SaltError::InvalidInput("state index out of range".into()));
    }
    let maps: Vec<DMatrix<f64>> = p.states.iter().map(|s| s.input_map()).collect();
    let mut out = DMatrix::zeros(design.frames(), p.rank);
    for (r, &s) in path.iter().enumerate() {
        let x = design.x.row(r).transpose();
        out.row_mut(r).copy_from(&(&maps[s] * x).transpose());
    }
    Ok(out)
}

/// The lag filter `A^(h)[p, q, :]` coupling input `q` to output `p`.
pub fn ar_filter(p: &SaltParams, h: usize, pair: (usize, usize)) -> Result<Vec<f64>> {
    let n = p.dim();
    if h >= p.num_states() || pair.0 >= n || pair.1 >= n {
        return Err(SaltError::InvalidInput(format!(
            "state {h} / pair {pair:?} out of range for {} states of dimension {n}",
            p.num_states()
        )));
    }
    let f = &p.states[h].factors;
    let [d1, d2, d3] = f.ranks();
    Ok((0..p.lags)
        .map(|l| {
            let mut s = 0.0;
            for i in 0..d1 {
                for j in 0..d2 {
                    for k in 0..d3 {
                        s += f.core.get(i, j, k) * f.u[(pair.0, i)] * f.v[(pair.1, j)] * f.w[(l, k)];
                    }
                }
            }
            s
        })
        .collect())
}

/// Draw `t_len` steps from the model. The first `L` observations are
/// standard normal; the returned states cover the scored frames only.
pub fn simulate(p: &SaltParams, t_len: usize, seed: u64) -> Result<(TimeSeries, Vec<usize>)> {
    p.validate()?;
    let (n, l) = (p.dim(), p.lags);
    if t_len <= l {
        return Err(SaltError::InvalidInput(format!("need more than {l} steps")));
    }
    let mut cont = crate::rng::seeded_stream(seed, 0);
    let mut disc = crate::rng::seeded_stream(seed, 1);
    let chols: Vec<DMatrix<f64>> = p
        .states
        .iter()
        .map(|s| GaussianFactor::new(&s.cov).map(|g| g.lower()))
        .collect::<Result<_>>()?;
    let psis: Vec<DMatrix<f64>> = p.states.iter().map(|s| s.coefficient_matrix()).collect();
    let mut data = vec![0.0; t_len * n];
    for v in data.iter_mut().take(l * n) {
        *v = crate::rng::standard_normal(&mut cont);
    }
    let mut states = Vec::with_capacity(t_len - l);
    let mut z = crate::rng::categorical(&mut disc, p.tm.init.as_slice());
    let mut x = vec![0.0; n * l];
    for t in l..t_len {
        if t > l {
            let row: Vec<f64> = p.tm.pi.row(z).iter().copied().collect();
            z = crate::rng::categorical(&mut disc, &row);
        }
        states.push(z);
        for q in 0..n {
            for a in 0..l {
                x[q * l + a] = data[(t - 1 - a) * n + q];
            }
        }
        let mean = &psis[z] * DVector::from_column_slice(&x) + &p.states[z].bias;
        let y = crate::rng::gaussian_with_factor(&mut cont, &mean, &chols[z]);
        data[t * n..(t + 1) * n].copy_from_slice(y.as_slice());
    }
    Ok((TimeSeries::new(n, data)?, states))
}
