//! Linear-Gaussian state-space models and their exact representation as
//! low-rank autoregressions through the steady-state Kalman predictor.
//!
//! Index convention: the one-step prediction is
//! `ŷ_t = C Σ_{l≥1} Γ^{l-1} (A K y_{t-l} + b - A K d) + d`, so lag slice `l`
//! (0-based) of the truncated AR tensor is `C Γ^l A K`.

use nalgebra::{Complex, DMatrix, DVector};

use crate::error::{shape_err, Result, SaltError};
use crate::hmm::TransitionModel;
use crate::linalg::{discrete_lyapunov, spectral_radius, symmetrize, GaussianFactor};
use crate::rng::{gaussian_with_factor, seeded_stream};
use crate::salt::{SaltParams, StateParams};
use crate::series::TimeSeries;
use crate::tensor::{Mode, Tensor3, TuckerFactors};

type C64 = Complex<f64>;

pub const DARE_TOL: f64 = 1e-12;
pub const DARE_MAX_ITERS: usize = 100_000;
const REAL_EIG_TOL: f64 = 1e-10;
const DEFECTIVE_TOL: f64 = 1e-6;

/// `x_t ~ N(A x_{t-1} + b, Q)`, `y_t ~ N(C x_t + d, R)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LdsParams {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub q: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub d: DVector<f64>,
    pub r: DMatrix<f64>,
}

impl LdsParams {
    pub fn new(
        a: DMatrix<f64>,
        b: DVector<f64>,
        q: DMatrix<f64>,
        c: DMatrix<f64>,
        d: DVector<f64>,
        r: DMatrix<f64>,
    ) -> Result<Self> {
        let p = Self { a, b, q, c, d, r };
        p.validate()?;
        Ok(p)
    }

    pub fn latent_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn obs_dim(&self) -> usize {
        self.c.nrows()
    }

    pub fn validate(&self) -> Result<()> {
        let (dl, n) = (self.a.nrows(), self.c.nrows());
        if self.a.ncols() != dl
            || self.b.len() != dl
            || self.q.shape() != (dl, dl)
            || self.c.ncols() != dl
            || self.d.len() != n
            || self.r.shape() != (n, n)
        {
            return shape_err(format!("inconsistent LDS shapes for latent {dl}, observed {n}"));
        }
        GaussianFactor::new(&self.q).map_err(|_| SaltError::InvalidInput("Q must be positive definite".into()))?;
        GaussianFactor::new(&self.r).map_err(|_| SaltError::InvalidInput("R must be positive definite".into()))?;
        Ok(())
    }

    pub fn spectral_radius(&self) -> f64 {
        spectral_radius(&self.a)
    }

    pub fn is_stable(&self) -> bool {
        self.spectral_radius() < 1.0
    }

    /// Stationary mean and covariance of the latent state.
    pub fn stationary(&self) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let dl = self.latent_dim();
        let p = discrete_lyapunov(&self.a, &self.q)?;
        let mean = (DMatrix::identity(dl, dl) - &self.a)
            .lu()
            .solve(&self.b)
            .ok_or_else(|| SaltError::Numerical("I - A is singular".into()))?;
        Ok((mean, p))
    }
}

/// Steady-state Kalman predictor.
#[derive(Debug, Clone)]
pub struct SteadyState {
    /// Steady predictive covariance `Σ = lim Σ_{t|t-1}`.
    pub sigma_pred: DMatrix<f64>,
    /// Steady gain `K = Σ Cᵀ (C Σ Cᵀ + R)⁻¹`.
    pub k: DMatrix<f64>,
    /// `Γ = A (I - K C)`.
    pub gamma: DMatrix<f64>,
    pub lambda_max: f64,
    pub iterations: usize,
}

/// Residual of the Riccati equation at `sigma`.
pub fn dare_residual(p: &LdsParams, sigma: &DMatrix<f64>) -> f64 {
    riccati_step(p, sigma).map(|next| (next - sigma).amax()).unwrap_or(f64::INFINITY)
}

fn riccati_step(p: &LdsParams, s: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let cs = &p.c * s;
    let innov = &cs * p.c.transpose() + &p.r;
    let gain_t = innov.cholesky()?.solve(&cs); // (CΣCᵀ + R)⁻¹ C Σ
    let asa = &p.a * s * p.a.transpose();
    let corr = &p.a * cs.transpose() * gain_t * p.a.transpose();
    Some(symmetrize(&(asa - corr + &p.q)))
}

/// Fixed-point iteration of the Riccati recursion from `Σ₀ = Q`.
pub fn solve_dare(p: &LdsParams) -> Result<SteadyState> {
    p.validate()?;
    let mut s = p.q.clone();
    let mut residual = f64::INFINITY;
    let mut iterations = 0;
    while iterations < DARE_MAX_ITERS {
        let next = riccati_step(p, &s).ok_or_else(|| SaltError::Numerical("innovation covariance is singular".into()))?;
        residual = (&next - &s).amax();
        s = next;
        iterations += 1;
        if !residual.is_finite() {
            break;
        }
        if residual < DARE_TOL {
            break;
        }
    }
    if !(residual < DARE_TOL) {
        return Err(SaltError::NotConverged { iterations, residual });
    }
    let innov = &p.c * &s * p.c.transpose() + &p.r;
    let kt = innov
        .cholesky()
        .ok_or_else(|| SaltError::Numerical("innovation covariance is singular".into()))?
        .solve(&(&p.c * &s));
    let k = kt.transpose();
    let dl = p.latent_dim();
    let gamma = &p.a * (DMatrix::identity(dl, dl) - &k * &p.c);
    let lambda_max = spectral_radius(&gamma);
    Ok(SteadyState {
        sigma_pred: s,
        k,
        gamma,
        lambda_max,
        iterations,
    })
}

/// Real block-diagonal form `Γ = E Λ E⁻¹`.
#[derive(Debug, Clone)]
pub struct ModalForm {
    pub n_real: usize,
    pub n_complex_pairs: usize,
    pub e: DMatrix<f64>,
    pub lambda: DMatrix<f64>,
    /// Real eigenvalues, then one representative `σ + iω` (ω > 0) per pair.
    pub eigenvalues: Vec<C64>,
    /// Complex eigenvector basis matching `E`: real vectors, then `v, v̄` per pair.
    pub e_complex: DMatrix<C64>,
    pub reconstruction_residual: f64,
}

impl ModalForm {
    pub fn dim(&self) -> usize {
        self.n_real + 2 * self.n_complex_pairs
    }
}

/// Null space of `m` of the given dimension: right singular vectors of the
/// smallest singular values.
fn null_vectors(m: &DMatrix<C64>, count: usize) -> Vec<DVector<C64>> {
    let svd = m.clone().svd(false, true);
    let vt = svd.v_t.expect("right singular vectors requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| {
        svd.singular_values[a]
            .partial_cmp(&svd.singular_values[b])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    order
        .into_iter()
        .take(count)
        .map(|i| vt.row(i).transpose().map(|z| z.conj()))
        .collect()
}

pub fn real_modal_form(gamma: &DMatrix<f64>) -> Result<ModalForm> {
    let dl = gamma.nrows();
    if gamma.ncols() != dl || dl == 0 {
        return shape_err("Γ must be a non-empty square matrix");
    }
    let eig = gamma.complex_eigenvalues();
    let is_real = |z: &C64| z.im.abs() < REAL_EIG_TOL * (1.0 + z.norm());
    let mut reals: Vec<f64> = eig.iter().filter(|z| is_real(z)).map(|z| z.re).collect();
    let mut uppers: Vec<C64> = eig.iter().filter(|z| !is_real(z) && z.im > 0.0).copied().collect();
    let lowers = eig.iter().filter(|z| !is_real(z) && z.im < 0.0).count();
    if lowers != uppers.len() {
        return Err(SaltError::Numerical("complex eigenvalues do not pair by conjugation".into()));
    }
    let by_modulus = |a: &f64, b: &f64| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal);
    reals.sort_by(|a, b| by_modulus(&a.abs(), &b.abs()).then(by_modulus(a, b)));
    uppers.sort_by(|a, b| by_modulus(&a.norm(), &b.norm()).then(by_modulus(&a.im, &b.im)));

    let gc = gamma.map(|v| C64::new(v, 0.0));
    let group_tol = 1e-8 * (1.0 + gamma.amax());
    // Eigenvectors for a cluster of (numerically) equal eigenvalues come from
    // one shared null space.
    let eigvecs = |vals: &[C64]| -> Vec<DVector<C64>> {
        let mut out = Vec::with_capacity(vals.len());
        let mut i = 0;
        while i < vals.len() {
            let mut j = i + 1;
            while j < vals.len() && (vals[j] - vals[i]).norm() < group_tol {
                j += 1;
            }
            let mean = vals[i..j].iter().sum::<C64>() / (j - i) as f64;
            let shifted = &gc - DMatrix::<C64>::identity(dl, dl) * mean;
            out.extend(null_vectors(&shifted, j - i));
            i = j;
        }
        out
    };
    let real_c: Vec<C64> = reals.iter().map(|&r| C64::new(r, 0.0)).collect();
    let real_vecs = eigvecs(&real_c);
    let pair_vecs = eigvecs(&uppers);

    let (n, m) = (reals.len(), uppers.len());
    let mut e = DMatrix::zeros(dl, dl);
    let mut lambda = DMatrix::zeros(dl, dl);
    let mut e_complex = DMatrix::from_element(dl, dl, C64::new(0.0, 0.0));
    for (k, (v, &val)) in real_vecs.iter().zip(&reals).enumerate() {
        // A real eigenvalue has a real eigenvector up to a phase; rotate it out.
        let pivot = v.iter().copied().fold(C64::new(0.0, 0.0), |acc, z| if z.norm() > acc.norm() { z } else { acc });
        let phase = if pivot.norm() > 0.0 { pivot.conj() / pivot.norm() } else { C64::new(1.0, 0.0) };
        let re = v.map(|z| (z * phase).re);
        let re = &re / re.norm();
        e.set_column(k, &re);
        e_complex.set_column(k, &re.map(|x| C64::new(x, 0.0)));
        lambda[(k, k)] = val;
    }
    for (i, (v, &z)) in pair_vecs.iter().zip(&uppers).enumerate() {
        let col = n + 2 * i;
        e.set_column(col, &v.map(|c| c.re));
        e.set_column(col + 1, &v.map(|c| c.im));
        e_complex.set_column(col, v);
        e_complex.set_column(col + 1, &v.map(|c| c.conj()));
        lambda[(col, col)] = z.re;
        lambda[(col, col + 1)] = z.im;
        lambda[(col + 1, col)] = -z.im;
        lambda[(col + 1, col + 1)] = z.re;
    }
    let residual = match e.clone().try_inverse() {
        Some(inv) => (&e * &lambda * inv - gamma).amax() / (1.0 + gamma.amax()),
        None => f64::INFINITY,
    };
    if !(residual <= DEFECTIVE_TOL) {
        return Err(SaltError::Defective { residual });
    }
    let mut eigenvalues = real_c;
    eigenvalues.extend(uppers);
    Ok(ModalForm {
        n_real: n,
        n_complex_pairs: m,
        e,
        lambda,
        eigenvalues,
        e_complex,
        reconstruction_residual: residual,
    })
}

/// Dense coefficients of the order-`L` truncated steady-state predictor:
/// slice `l` is `C Γ^l A K` and the bias is `C Σ_{l<L} Γ^l (b - A K d) + d`.
pub fn truncated_kalman_coeffs(ss: &SteadyState, p: &LdsParams, lags: usize) -> Result<(Tensor3, DVector<f64>)> {
    let n = p.obs_dim();
    let ak = &p.a * &ss.k;
    let drift = &p.b - &ak * &p.d;
    let mut out = Tensor3::zeros([n, n, lags]);
    let mut gl = DMatrix::identity(p.latent_dim(), p.latent_dim());
    let mut acc = DVector::zeros(p.latent_dim());
    for l in 0..lags {
        let slice = &p.c * &gl * &ak;
        for i in 0..n {
            for j in 0..n {
                out.set(i, j, l, slice[(i, j)]);
            }
        }
        acc += &gl * &drift;
        gl = &ss.gamma * gl;
    }
    let bias = &p.c * acc + &p.d;
    Ok((out, bias))
}

fn complex_powers(z: C64, lags: usize) -> Vec<C64> {
    let mut out = Vec::with_capacity(lags);
    let mut acc = C64::new(1.0, 0.0);
    for _ in 0..lags {
        out.push(acc);
        acc *= z;
    }
    out
}

/// Exact order-`L` SALT representation (one state) of the truncated
/// steady-state Kalman predictor.
///
/// Tucker rank is `n + 2m` and CP rank `n + 3m` for `n` real eigenvalues and
/// `m` complex pairs of `Γ`.
pub fn lds_to_salt(p: &LdsParams, lags: usize, mode: Mode) -> Result<SaltParams> {
    if lags == 0 {
        return Err(SaltError::InvalidInput("lags must be positive".into()));
    }
    let rho = p.spectral_radius();
    if rho >= 1.0 {
        return Err(SaltError::Unstable { spectral_radius: rho });
    }
    let ss = solve_dare(p)?;
    if ss.lambda_max >= 1.0 {
        return Err(SaltError::Unstable {
            spectral_radius: ss.lambda_max,
        });
    }
    let modal = real_modal_form(&ss.gamma)?;
    let e_inv = modal
        .e
        .clone()
        .try_inverse()
        .ok_or_else(|| SaltError::Numerical("modal basis is singular".into()))?;
    let ak = &p.a * &ss.k;
    let (n, m) = (modal.n_real, modal.n_complex_pairs);

    let factors = match mode {
        Mode::Tucker => {
            let d = n + 2 * m;
            let u = &p.c * &modal.e;
            let v = (&e_inv * &ak).transpose();
            let mut w = DMatrix::zeros(lags, d);
            let mut core = Tensor3::zeros([d, d, d]);
            for k in 0..n {
                let lam = modal.eigenvalues[k].re;
                let mut acc = 1.0;
                for l in 0..lags {
                    w[(l, k)] = acc;
                    acc *= lam;
                }
                core.set(k, k, k, 1.0);
            }
            for i in 0..m {
                let c = n + 2 * i;
                for (l, z) in complex_powers(modal.eigenvalues[n + i], lags).into_iter().enumerate() {
                    w[(l, c)] = z.re;
                    w[(l, c + 1)] = -z.im;
                }
                core.set(c, c, c, 1.0);
                core.set(c + 1, c + 1, c, 1.0);
                core.set(c, c + 1, c + 1, -1.0);
                core.set(c + 1, c, c + 1, 1.0);
            }
            TuckerFactors::new(u, v, w, core)?
        }
        Mode::Cp => {
            let dl = p.latent_dim();
            let d = n + 3 * m;
            let mut j = DMatrix::zeros(dl, d);
            let mut s = DMatrix::zeros(d, dl);
            let mut w = DMatrix::zeros(lags, d);
            for k in 0..n {
                j.set_column(k, &modal.e.column(k));
                s.set_row(k, &e_inv.row(k));
                let lam = modal.eigenvalues[k].re;
                let mut acc = 1.0;
                for l in 0..lags {
                    w[(l, k)] = acc;
                    acc *= lam;
                }
            }
            for i in 0..m {
                let (src, dst) = (n + 2 * i, n + 3 * i);
                let (bv, cv) = (modal.e.column(src), modal.e.column(src + 1));
                let (ev, fv) = (e_inv.row(src), e_inv.row(src + 1));
                j.set_column(dst, &(bv + cv));
                j.set_column(dst + 1, &bv);
                j.set_column(dst + 2, &cv);
                s.set_row(dst, &(ev + fv));
                s.set_row(dst + 1, &fv);
                s.set_row(dst + 2, &ev);
                for (l, z) in complex_powers(modal.eigenvalues[n + i], lags).into_iter().enumerate() {
                    w[(l, dst)] = z.re;
                    w[(l, dst + 1)] = z.im - z.re;
                    w[(l, dst + 2)] = -z.im - z.re;
                }
            }
            let u = &p.c * j;
            let v = (s * &ak).transpose();
            TuckerFactors::new(u, v, w, Tensor3::superdiagonal(&vec![1.0; d]))?
        }
    };
    let rank = factors.ranks()[0];
    let (_, bias) = truncated_kalman_coeffs(&ss, p, lags)?;
    let cov = symmetrize(&(&p.c * &ss.sigma_pred * p.c.transpose() + &p.r));
    SaltParams::new(
        mode,
        lags,
        rank,
        vec![StateParams { factors, bias, cov }],
        TransitionModel::uniform(1),
    )
}

/// `max_t ‖E⁻¹ (A K y_t + b - A K d)‖∞` in the complex eigenbasis of `Γ`.
pub fn bound_scale_from_data(ss: &SteadyState, p: &LdsParams, y: &TimeSeries) -> Result<f64> {
    let modal = real_modal_form(&ss.gamma)?;
    let inv = modal
        .e_complex
        .clone()
        .try_inverse()
        .ok_or_else(|| SaltError::Numerical("eigenbasis is singular".into()))?;
    let ak = &p.a * &ss.k;
    let drift = &p.b - &ak * &p.d;
    let mut worst: f64 = 0.0;
    for t in 0..y.len() {
        let q = &ak * y.row_vector(t) + &drift;
        let z = &inv * q.map(|v| C64::new(v, 0.0));
        worst = worst.max(z.iter().map(|c| c.norm()).fold(0.0, f64::max));
    }
    Ok(worst)
}

/// `ε ≤ W max_n Σ_d |p_nd| λ_max^L / (1 - λ_max)` with `P = C E` in the complex
/// eigenbasis and `W` a bound on the eigen-coordinates of the driving input.
pub fn truncation_error_bound(ss: &SteadyState, p: &LdsParams, lags: usize, w_bound: f64) -> Result<f64> {
    let lam = ss.lambda_max;
    if lam >= 1.0 {
        return Err(SaltError::Unstable { spectral_radius: lam });
    }
    if lam == 0.0 {
        return Ok(0.0);
    }
    let modal = real_modal_form(&ss.gamma)?;
    let pm = p.c.map(|v| C64::new(v, 0.0)) * &modal.e_complex;
    let row_sum = (0..pm.nrows())
        .map(|r| pm.row(r).iter().map(|z| z.norm()).sum::<f64>())
        .fold(0.0, f64::max);
    Ok(w_bound * row_sum * lam.powi(lags as i32) / (1.0 - lam))
}

/// Latent path and observations of a simulation.
#[derive(Debug, Clone)]
pub struct LdsSample {
    pub y: TimeSeries,
    pub x: TimeSeries,
}

/// Draw `t_len` steps. The first latent state comes from the stationary
/// distribution when `A` is stable, otherwise from `N(b, Q)`.
pub fn simulate_lds_full(p: &LdsParams, t_len: usize, seed: u64) -> Result<LdsSample> {
    p.validate()?;
    if t_len == 0 {
        return Err(SaltError::InvalidInput("need at least one step".into()));
    }
    let mut rng = seeded_stream(seed, 0);
    let (mean0, cov0) = if p.is_stable() {
        p.stationary()?
    } else {
        (p.b.clone(), p.q.clone())
    };
    let l0 = GaussianFactor::new(&symmetrize(&cov0))?.lower();
    let lq = GaussianFactor::new(&p.q)?.lower();
    let lr = GaussianFactor::new(&p.r)?.lower();
    let (dl, n) = (p.latent_dim(), p.obs_dim());
    let mut xs = Vec::with_capacity(t_len * dl);
    let mut ys = Vec::with_capacity(t_len * n);
    let mut x = gaussian_with_factor(&mut rng, &mean0, &l0);
    for t in 0..t_len {
        if t > 0 {
            let mean = &p.a * &x + &p.b;
            x = gaussian_with_factor(&mut rng, &mean, &lq);
        }
        let y = gaussian_with_factor(&mut rng, &(&p.c * &x + &p.d), &lr);
        xs.extend(x.iter());
        ys.extend(y.iter());
    }
    Ok(LdsSample {
        y: TimeSeries::new(n, ys)?,
        x: TimeSeries::new(dl, xs)?,
    })
}

pub fn simulate_lds(p: &LdsParams, t_len: usize, seed: u64) -> Result<TimeSeries> {
    Ok(simulate_lds_full(p, t_len, seed)?.y)
}

/// One-step predictions of a Kalman filter.
#[derive(Debug, Clone)]
pub struct KalmanPredictions {
    /// `T x N` predictive means `E[y_t | y_{1:t-1}]`.
    pub means: DMatrix<f64>,
    /// Predictive log-density of each `y_t`.
    pub log_densities: Vec<f64>,
}

impl KalmanPredictions {
    /// Mean log-density over frames `from..T`.
    pub fn per_frame_loglik(&self, from: usize) -> f64 {
        let s = &self.log_densities[from..];
        s.iter().sum::<f64>() / s.len() as f64
    }
}

/// Exact time-varying Kalman filter started from the stationary distribution.
pub fn kalman_filter(p: &LdsParams, y: &TimeSeries) -> Result<KalmanPredictions> {
    p.validate()?;
    if y.dim() != p.obs_dim() {
        return shape_err("series dimension does not match C");
    }
    let (mut mu, mut cov) = p.stationary()?;
    let n = p.obs_dim();
    let mut means = DMatrix::zeros(y.len(), n);
    let mut dens = Vec::with_capacity(y.len());
    for t in 0..y.len() {
        let pred = &p.c * &mu + &p.d;
        let s = symmetrize(&(&p.c * &cov * p.c.transpose() + &p.r));
        let g = GaussianFactor::new(&s)?;
        let resid = y.row_vector(t) - &pred;
        dens.push(g.log_density(resid.as_slice()));
        means.row_mut(t).copy_from(&pred.transpose());
        let kt = s
            .cholesky()
            .ok_or_else(|| SaltError::Numerical("innovation covariance is singular".into()))?
            .solve(&(&p.c * &cov));
        let k = kt.transpose();
        let mu_f = &mu + &k * resid;
        let cov_f = symmetrize(&(&cov - &k * &p.c * &cov));
        mu = &p.a * mu_f + &p.b;
        cov = symmetrize(&(&p.a * cov_f * p.a.transpose() + &p.q));
    }
    Ok(KalmanPredictions {
        means,
        log_densities: dens,
    })
}

/// Steady-state predictor `μ_{t+1|t} = Γ μ_{t|t-1} + A K y_t + b - A K d`,
/// started from the stationary mean, with innovation covariance `C Σ Cᵀ + R`.
pub fn steady_state_predictions(p: &LdsParams, ss: &SteadyState, y: &TimeSeries) -> Result<KalmanPredictions> {
    if y.dim() != p.obs_dim() {
        return shape_err("series dimension does not match C");
    }
    let (mut mu, _) = p.stationary()?;
    let ak = &p.a * &ss.k;
    let drift = &p.b - &ak * &p.d;
    let s = symmetrize(&(&p.c * &ss.sigma_pred * p.c.transpose() + &p.r));
    let g = GaussianFactor::new(&s)?;
    let n = p.obs_dim();
    let mut means = DMatrix::zeros(y.len(), n);
    let mut dens = Vec::with_capacity(y.len());
    for t in 0..y.len() {
        let pred = &p.c * &mu + &p.d;
        let yt = y.row_vector(t);
        dens.push(g.log_density((&yt - &pred).as_slice()));
        means.row_mut(t).copy_from(&pred.transpose());
        mu = &ss.gamma * mu + &ak * yt + &drift;
    }
    Ok(KalmanPredictions {
        means,
        log_densities: dens,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{seeded, standard_normal_matrix};
    use crate::tensor::materialize;

    fn scalar(a: f64, c: f64, q: f64, r: f64) -> LdsParams {
        let m = |v: f64| DMatrix::from_element(1, 1, v);
        LdsParams::new(m(a), DVector::zeros(1), m(q), m(c), DVector::zeros(1), m(r)).unwrap()
    }

    fn rotation(theta: f64) -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 2, &[theta.cos(), -theta.sin(), theta.sin(), theta.cos()])
    }

    #[test]
    fn dare_zero_dynamics_gives_q() {
        let ss = solve_dare(&scalar(0.0, 1.0, 0.7, 1.0)).unwrap();
        assert_eq!(ss.sigma_pred[(0, 0)], 0.7);
    }

    #[test]
    fn dare_without_observations_is_lyapunov() {
        let ss = solve_dare(&scalar(0.5, 0.0, 1.0, 1.0)).unwrap();
        assert!((ss.sigma_pred[(0, 0)] - 4.0 / 3.0).abs() < 1e-11);
        assert_eq!(ss.k[(0, 0)], 0.0);
    }

    #[test]
    fn dare_scalar_matches_quadratic_root() {
        let (a, c, q, r): (f64, f64, f64, f64) = (0.9, 1.0, 0.1, 1.0);
        let ss = solve_dare(&scalar(a, c, q, r)).unwrap();
        // s = a² s r / (c² s + r) + q  ⇔  c² s² + (r - a² r - q c²) s - q r = 0
        let qa = c * c;
        let qb = r - a * a * r - q * c * c;
        let qc = -q * r;
        let root = (-qb + (qb * qb - 4.0 * qa * qc).sqrt()) / (2.0 * qa);
        assert!((ss.sigma_pred[(0, 0)] - root).abs() < 1e-11);
        assert!(dare_residual(&scalar(a, c, q, r), &ss.sigma_pred) < 1e-10);
    }

    #[test]
    fn modal_form_examples() {
        let g = DMatrix::from_row_slice(2, 2, &[0.5, 0.0, 0.0, -0.3]);
        let mf = real_modal_form(&g).unwrap();
        assert_eq!((mf.n_real, mf.n_complex_pairs), (2, 0));
        assert!((&mf.lambda - &g).amax() < 1e-12);

        let theta: f64 = 0.4;
        let g = rotation(theta) * 0.8;
        let mf = real_modal_form(&g).unwrap();
        assert_eq!((mf.n_real, mf.n_complex_pairs), (0, 1));
        assert!((mf.lambda[(0, 0)] - 0.8 * theta.cos()).abs() < 1e-12);
        assert!((mf.lambda[(0, 1)] - 0.8 * theta.sin()).abs() < 1e-12);
        assert!((mf.lambda[(1, 0)] + 0.8 * theta.sin()).abs() < 1e-12);
    }

    #[test]
    fn modal_form_reconstructs_random_matrix() {
        for seed in 0..10 {
            let mut rng = seeded(seed);
            let g = standard_normal_matrix(&mut rng, 7, 7) * 0.3;
            let mf = real_modal_form(&g).unwrap();
            assert_eq!(mf.dim(), 7);
            assert!(mf.reconstruction_residual < 1e-8);
        }
    }

    #[test]
    fn modal_form_handles_repeated_eigenvalues() {
        let g = DMatrix::from_diagonal(&DVector::from_vec(vec![0.5, 0.5, -0.2]));
        let mf = real_modal_form(&g).unwrap();
        assert!(mf.reconstruction_residual < 1e-10);
    }

    #[test]
    fn defective_matrix_is_reported() {
        let g = DMatrix::from_row_slice(2, 2, &[0.5, 1.0, 0.0, 0.5]);
        assert!(matches!(real_modal_form(&g), Err(SaltError::Defective { .. })));
    }

    #[test]
    fn first_slice_is_cak() {
        let p = scalar(0.8, 1.3, 0.2, 0.5);
        let ss = solve_dare(&p).unwrap();
        let (t, _) = truncated_kalman_coeffs(&ss, &p, 1).unwrap();
        assert!((t.get(0, 0, 0) - 1.3 * 0.8 * ss.k[(0, 0)]).abs() < 1e-15);
    }

    #[test]
    fn zero_gain_gives_bias_only_model() {
        let p = scalar(0.8, 0.0, 0.2, 0.5);
        let salt = lds_to_salt(&p, 4, Mode::Tucker).unwrap();
        let a = materialize(&salt.states[0].factors).unwrap();
        assert!(a.data().iter().all(|&v| v == 0.0));
        let ss = solve_dare(&p).unwrap();
        assert!(truncated_kalman_coeffs(&ss, &p, 4).unwrap().0.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn scalar_construction_matches_direct_coefficients() {
        let (a, c) = (0.9, 1.4);
        let p = scalar(a, c, 0.3, 0.6);
        let ss = solve_dare(&p).unwrap();
        let k = ss.k[(0, 0)];
        let gamma = a * (1.0 - k * c);
        for mode in [Mode::Tucker, Mode::Cp] {
            let salt = lds_to_salt(&p, 6, mode).unwrap();
            let t = materialize(&salt.states[0].factors).unwrap();
            for l in 0..6 {
                let direct = c * gamma.powi(l as i32) * a * k;
                assert!((t.get(0, 0, l) - direct).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn rotational_system_ranks() {
        // One real mode and three rotations.
        let mut a = DMatrix::zeros(7, 7);
        a[(0, 0)] = 0.9;
        for (i, th) in [0.3, 0.7, 1.3].iter().enumerate() {
            a.view_mut((1 + 2 * i, 1 + 2 * i), (2, 2)).copy_from(&(rotation(*th) * 0.9));
        }
        let mut rng = seeded(3);
        let c = standard_normal_matrix(&mut rng, 20, 7);
        let p = LdsParams::new(
            a,
            DVector::zeros(7),
            DMatrix::identity(7, 7) * 0.1,
            c,
            DVector::zeros(20),
            DMatrix::identity(20, 20),
        )
        .unwrap();
        let ss = solve_dare(&p).unwrap();
        let mf = real_modal_form(&ss.gamma).unwrap();
        assert_eq!((mf.n_real, mf.n_complex_pairs), (1, 3));
        assert_eq!(lds_to_salt(&p, 10, Mode::Tucker).unwrap().rank, 7);
        assert_eq!(lds_to_salt(&p, 10, Mode::Cp).unwrap().rank, 10);
    }

    #[test]
    fn bound_is_zero_for_zero_gamma() {
        let p = scalar(0.0, 1.0, 0.5, 1.0);
        let ss = solve_dare(&p).unwrap();
        assert_eq!(ss.lambda_max, 0.0);
        assert_eq!(truncation_error_bound(&ss, &p, 3, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn bound_ratio_is_inverse_lambda() {
        let p = scalar(0.9, 1.0, 0.1, 1.0);
        let ss = solve_dare(&p).unwrap();
        let b5 = truncation_error_bound(&ss, &p, 5, 2.0).unwrap();
        let b6 = truncation_error_bound(&ss, &p, 6, 2.0).unwrap();
        assert!((b5 / b6 - 1.0 / ss.lambda_max).abs() < 1e-12);
    }

    #[test]
    fn simulation_is_deterministic_and_tracks_deterministic_limit() {
        let p = LdsParams::new(
            DMatrix::zeros(2, 2),
            DVector::zeros(2),
            DMatrix::identity(2, 2) * 1e-14,
            DMatrix::identity(2, 2),
            DVector::from_vec(vec![3.0, -1.0]),
            DMatrix::identity(2, 2) * 1e-14,
        )
        .unwrap();
        let y = simulate_lds(&p, 20, 5).unwrap();
        for t in 0..20 {
            assert!((y.row(t)[0] - 3.0).abs() < 1e-5 && (y.row(t)[1] + 1.0).abs() < 1e-5);
        }
        assert_eq!(y, simulate_lds(&p, 20, 5).unwrap());
    }

    #[test]
    fn scalar_autocovariance_matches_stationary_moments() {
        let a = 0.9;
        let p = scalar(a, 1.0, 1.0, 1e-12);
        let x = simulate_lds_full(&p, 100_000, 9).unwrap().x;
        let d = x.data();
        let m = d.iter().sum::<f64>() / d.len() as f64;
        let lag1 = d.windows(2).map(|w| (w[0] - m) * (w[1] - m)).sum::<f64>() / (d.len() - 1) as f64;
        let expect = a / (1.0 - a * a);
        assert!((lag1 - expect).abs() < 0.05 * expect, "{lag1} vs {expect}");
    }

    #[test]
    fn steady_state_filter_converges_to_exact_filter() {
        let p = scalar(0.9, 1.0, 0.1, 1.0);
        let y = simulate_lds(&p, 400, 4).unwrap();
        let ss = solve_dare(&p).unwrap();
        let exact = kalman_filter(&p, &y).unwrap();
        let steady = steady_state_predictions(&p, &ss, &y).unwrap();
        assert!((exact.means[(399, 0)] - steady.means[(399, 0)]).abs() < 1e-8);
    }
}
