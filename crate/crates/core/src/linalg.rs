//! Small dense linear-algebra helpers shared by the fitting code.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Result, SaltError};

pub const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Relative ridge added to a Gram matrix whose Cholesky factorization fails.
pub const RIDGE_SCALE: f64 = 1e-8;

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Solve `gram * x = rhs` for symmetric positive (semi-)definite `gram`.
///
/// Returns the solution and whether a ridge of `1e-8 * trace / dim` had to be
/// added because the plain factorization failed.
pub fn solve_spd(gram: &DMatrix<f64>, rhs: &DMatrix<f64>) -> Result<(DMatrix<f64>, bool)> {
    if let Some(ch) = Cholesky::new(gram.clone()) {
        return Ok((ch.solve(rhs), false));
    }
    let n = gram.nrows().max(1);
    let mut ridge = RIDGE_SCALE * gram.trace().abs().max(f64::MIN_POSITIVE) / n as f64;
    if !ridge.is_finite() || ridge == 0.0 {
        ridge = RIDGE_SCALE;
    }
    for _ in 0..8 {
        let mut g = gram.clone();
        for i in 0..gram.nrows() {
            g[(i, i)] += ridge;
        }
        if let Some(ch) = Cholesky::new(g) {
            return Ok((ch.solve(rhs), true));
        }
        ridge *= 100.0;
    }
    Err(SaltError::Numerical("Gram matrix is not positive semi-definite".into()))
}

pub fn solve_spd_vec(gram: &DMatrix<f64>, rhs: &DVector<f64>) -> Result<(DVector<f64>, bool)> {
    let m = DMatrix::from_column_slice(rhs.len(), 1, rhs.as_slice());
    let (x, ridged) = solve_spd(gram, &m)?;
    Ok((DVector::from_column_slice(x.as_slice()), ridged))
}

/// Cached Cholesky factor of a covariance for repeated Gaussian log-densities.
#[derive(Debug, Clone)]
pub struct GaussianFactor {
    chol: Cholesky<f64, Dyn>,
    half_log_det: f64,
    dim: usize,
}

impl GaussianFactor {
    pub fn new(cov: &DMatrix<f64>) -> Result<Self> {
        let chol = Cholesky::new(cov.clone())
            .ok_or_else(|| SaltError::Numerical("covariance is not positive definite".into()))?;
        let half_log_det = chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum();
        Ok(Self {
            chol,
            half_log_det,
            dim: cov.nrows(),
        })
    }

    pub fn lower(&self) -> DMatrix<f64> {
        self.chol.l()
    }

    pub fn inverse(&self) -> DMatrix<f64> {
        self.chol.inverse()
    }

    pub fn log_det(&self) -> f64 {
        2.0 * self.half_log_det
    }

    /// `log N(resid; 0, cov)`.
    pub fn log_density(&self, resid: &[f64]) -> f64 {
        let l = self.chol.l_dirty();
        // Forward substitution on the lower factor.
        let mut z = [0.0f64; 64];
        let mut heap;
        let buf: &mut [f64] = if self.dim <= 64 {
            &mut z[..self.dim]
        } else {
            heap = vec![0.0; self.dim];
            &mut heap
        };
        let mut quad = 0.0;
        for i in 0..self.dim {
            let mut s = resid[i];
            for j in 0..i {
                s -= l[(i, j)] * buf[j];
            }
            let v = s / l[(i, i)];
            buf[i] = v;
            quad += v * v;
        }
        -0.5 * quad - self.half_log_det - 0.5 * self.dim as f64 * LN_2PI
    }
}

/// Numerically stable `log sum exp`.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if m == f64::INFINITY {
        return f64::INFINITY;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Solve the discrete Lyapunov equation `P = A P A^T + Q` by squaring.
pub fn discrete_lyapunov(a: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let rho = spectral_radius(a);
    if rho >= 1.0 {
        return Err(SaltError::Unstable { spectral_radius: rho });
    }
    let mut p = q.clone();
    let mut ak = a.clone();
    for _ in 0..64 {
        let next = &p + &ak * &p * ak.transpose();
        let delta = (&next - &p).amax();
        p = next;
        ak = &ak * &ak;
        if delta <= 1e-15 * p.amax().max(1e-300) {
            break;
        }
    }
    Ok(symmetrize(&p))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lse_matches_direct() {
        let xs = [0.1, -2.0, 3.5];
        let direct: f64 = xs.iter().map(|x: &f64| x.exp()).sum::<f64>().ln();
        assert!((log_sum_exp(&xs) - direct).abs() < 1e-14);
        assert_eq!(log_sum_exp(&[f64::NEG_INFINITY, f64::NEG_INFINITY]), f64::NEG_INFINITY);
        assert!((log_sum_exp(&[1000.0, 1000.0]) - (1000.0 + 2f64.ln())).abs() < 1e-12);
    }

    #[test]
    fn gaussian_density_standard_normal() {
        let g = GaussianFactor::new(&DMatrix::identity(1, 1)).unwrap();
        assert!((g.log_density(&[0.0]) + 0.5 * LN_2PI).abs() < 1e-15);
    }

    #[test]
    fn ridge_fallback_on_singular_gram() {
        let gram = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let rhs = DMatrix::from_row_slice(2, 1, &[1.0, 1.0]);
        let (x, ridged) = solve_spd(&gram, &rhs).unwrap();
        assert!(ridged);
        assert!(((&gram * x) - rhs).amax() < 1e-6);
    }

    #[test]
    fn lyapunov_scalar() {
        let p = discrete_lyapunov(&DMatrix::from_element(1, 1, 0.5), &DMatrix::identity(1, 1)).unwrap();
        assert!((p[(0, 0)] - 4.0 / 3.0).abs() < 1e-14);
    }
}
