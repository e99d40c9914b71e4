//! Lag design matrices and the weighted second-moment statistics every
//! autoregressive M-step reduces to.

use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};

use crate::error::Result;
use crate::linalg::{solve_spd, LN_2PI};
use crate::series::TimeSeries;

/// Stacked regression problem of an order-`L` autoregression over the scored
/// frames `t = L..T`.
///
/// Row `r` of `x` is the row-major `vec(X_{L+r})` (entry `q * L + l` holds
/// `y_{L+r-1-l}[q]`) and row `r` of `y` is `y_{L+r}`.
#[derive(Debug)]
pub struct LagDesign {
    pub lags: usize,
    pub x: DMatrix<f64>,
    pub y: DMatrix<f64>,
    unweighted: OnceLock<WeightedStats>,
}

impl Clone for LagDesign {
    fn clone(&self) -> Self {
        Self {
            lags: self.lags,
            x: self.x.clone(),
            y: self.y.clone(),
            unweighted: self.unweighted.clone(),
        }
    }
}

impl LagDesign {
    pub fn new(series: &TimeSeries, lags: usize) -> Result<Self> {
        let frames = series.scored_frames(lags)?;
        let n = series.dim();
        let mut x = DMatrix::zeros(frames, n * lags);
        let mut y = DMatrix::zeros(frames, n);
        let mut row = vec![0.0; n * lags];
        for r in 0..frames {
            let t = r + lags;
            series.lag_vector_into(t, lags, &mut row);
            for (c, v) in row.iter().enumerate() {
                x[(r, c)] = *v;
            }
            for (q, v) in series.row(t).iter().enumerate() {
                y[(r, q)] = *v;
            }
        }
        Ok(Self {
            lags,
            x,
            y,
            unweighted: OnceLock::new(),
        })
    }

    pub fn frames(&self) -> usize {
        self.y.nrows()
    }

    pub fn dim(&self) -> usize {
        self.y.ncols()
    }

    pub fn regressors(&self) -> usize {
        self.x.ncols()
    }

    /// Statistics with unit weights, computed once and cached.
    pub fn unweighted_stats(&self) -> &WeightedStats {
        self.unweighted.get_or_init(|| WeightedStats::compute(self, None))
    }

    /// Statistics under per-frame weights; unit weights hit the cache.
    pub fn stats(&self, weights: &[f64]) -> WeightedStats {
        if weights.iter().all(|&w| w == 1.0) {
            return self.unweighted_stats().clone();
        }
        WeightedStats::compute(self, Some(weights))
    }

    /// `x_r^T Psi^T + b^T` for every frame: a `frames x N` matrix of one-step means.
    pub fn means(&self, psi: &DMatrix<f64>, bias: &DVector<f64>) -> DMatrix<f64> {
        let mut m = &self.x * psi.transpose();
        for mut row in m.row_iter_mut() {
            row += bias.transpose();
        }
        m
    }
}

/// `sw = Σ ω`, `sx = Σ ω x`, `sy = Σ ω y`, `sxx = Σ ω x xᵀ`, `syx = Σ ω y xᵀ`,
/// `syy = Σ ω y yᵀ` over the scored frames.
#[derive(Debug, Clone)]
pub struct WeightedStats {
    pub sw: f64,
    pub sx: DVector<f64>,
    pub sy: DVector<f64>,
    pub sxx: DMatrix<f64>,
    pub syx: DMatrix<f64>,
    pub syy: DMatrix<f64>,
}

impl WeightedStats {
    pub fn compute(design: &LagDesign, weights: Option<&[f64]>) -> Self {
        let (frames, p) = design.x.shape();
        let n = design.dim();
        let (xw, yw, sw) = match weights {
            None => (design.x.clone(), design.y.clone(), frames as f64),
            Some(w) => {
                let mut xw = design.x.clone();
                let mut yw = design.y.clone();
                for r in 0..frames {
                    xw.row_mut(r).scale_mut(w[r]);
                    yw.row_mut(r).scale_mut(w[r]);
                }
                (xw, yw, w.iter().sum())
            }
        };
        let mut sx = DVector::zeros(p);
        for c in 0..p {
            sx[c] = xw.column(c).sum();
        }
        let mut sy = DVector::zeros(n);
        for c in 0..n {
            sy[c] = yw.column(c).sum();
        }
        let sxx = symmetric(xw.transpose() * &design.x);
        let syx = yw.transpose() * &design.x;
        let syy = symmetric(yw.transpose() * &design.y);
        Self { sw, sx, sy, sxx, syx, syy }
    }

    /// `Σ ω (y - b) xᵀ`.
    pub fn cross_centered(&self, bias: &DVector<f64>) -> DMatrix<f64> {
        &self.syx - bias * self.sx.transpose()
    }

    /// `Σ ω (y - Ψx - b)(y - Ψx - b)ᵀ`.
    pub fn residual_scatter(&self, psi: &DMatrix<f64>, bias: &DVector<f64>) -> DMatrix<f64> {
        let sxx_psi = &self.sxx * psi.transpose();
        let cross = &self.syx * psi.transpose();
        let mut m = &self.syy - &cross - cross.transpose() + psi * sxx_psi;
        let r_mean = &self.sy - psi * &self.sx;
        m -= bias * r_mean.transpose() + &r_mean * bias.transpose();
        m += bias * bias.transpose() * self.sw;
        symmetric(m)
    }

    /// Expected negative log-likelihood `Σ ω [-log N(y; Ψx + b, Σ)]` given the
    /// precision `Σ⁻¹` and `log det Σ`.
    pub fn expected_nll(&self, psi: &DMatrix<f64>, bias: &DVector<f64>, precision: &DMatrix<f64>, log_det: f64) -> f64 {
        let m = self.residual_scatter(psi, bias);
        let n = bias.len() as f64;
        0.5 * precision.component_mul(&m).sum() + 0.5 * self.sw * (log_det + n * LN_2PI)
    }
}

/// Weighted least squares with intercept: minimizes `Σ ω ‖y - Ψx - b‖²`.
///
/// Returns `(Ψ, b, ridged)`.
pub fn weighted_ols(st: &WeightedStats) -> Result<(DMatrix<f64>, DVector<f64>, bool)> {
    let p = st.sx.len();
    let n = st.sy.len();
    let mut gram = DMatrix::zeros(p + 1, p + 1);
    gram.view_mut((0, 0), (p, p)).copy_from(&st.sxx);
    gram.view_mut((0, p), (p, 1)).copy_from(&st.sx);
    gram.view_mut((p, 0), (1, p)).copy_from(&st.sx.transpose());
    gram[(p, p)] = st.sw;
    let mut rhs = DMatrix::zeros(p + 1, n);
    rhs.view_mut((0, 0), (p, n)).copy_from(&st.syx.transpose());
    rhs.row_mut(p).copy_from(&st.sy.transpose());
    let (beta, ridged) = solve_spd(&gram, &rhs)?;
    let psi = beta.rows(0, p).transpose();
    let bias = beta.row(p).transpose();
    Ok((psi, bias, ridged))
}

/// Weighted residual covariance plus `jitter * I`.
pub fn residual_covariance(st: &WeightedStats, psi: &DMatrix<f64>, bias: &DVector<f64>, jitter: f64) -> DMatrix<f64> {
    let n = bias.len();
    st.residual_scatter(psi, bias) / st.sw + DMatrix::identity(n, n) * jitter
}

fn symmetric(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}
