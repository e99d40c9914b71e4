use nalgebra::{DMatrix, DVector};

use crate::error::{shape_err, Result, SaltError};

/// A multivariate time series `y_1..y_T`, each `y_t` in `R^N`, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries {
    dim: usize,
    data: Vec<f64>,
}

impl TimeSeries {
    pub fn new(dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(SaltError::InvalidInput("series dimension must be positive".into()));
        }
        if data.len() % dim != 0 {
            return shape_err(format!("{} values do not form rows of width {dim}", data.len()));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(SaltError::InvalidInput("series values must be finite".into()));
        }
        Ok(Self { dim, data })
    }

    pub fn from_rows(rows: &[DVector<f64>]) -> Result<Self> {
        let dim = rows.first().map(|r| r.len()).unwrap_or(0);
        if rows.iter().any(|r| r.len() != dim) {
            return shape_err("rows of unequal length");
        }
        let mut data = Vec::with_capacity(rows.len() * dim);
        for r in rows {
            data.extend(r.iter());
        }
        Self::new(dim, data)
    }

    /// Rows of a `T x N` matrix become time steps.
    pub fn from_matrix(m: &DMatrix<f64>) -> Result<Self> {
        Self::new(m.ncols(), m.transpose().as_slice().to_vec())
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.len(), self.dim, &self.data)
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn row(&self, t: usize) -> &[f64] {
        &self.data[t * self.dim..(t + 1) * self.dim]
    }

    pub fn row_vector(&self, t: usize) -> DVector<f64> {
        DVector::from_column_slice(self.row(t))
    }

    /// `X_t = [y_{t-1}, ..., y_{t-L}]` as an `N x L` matrix (column `l` is `y_{t-1-l}`).
    pub fn lag_window(&self, t: usize, lags: usize) -> DMatrix<f64> {
        debug_assert!(t >= lags);
        DMatrix::from_fn(self.dim, lags, |q, l| self.row(t - 1 - l)[q])
    }

    /// Row-major `vec(X_t)`: entry `q * L + l` is `y_{t-1-l}[q]`.
    pub fn lag_vector_into(&self, t: usize, lags: usize, out: &mut [f64]) {
        for q in 0..self.dim {
            for l in 0..lags {
                out[q * lags + l] = self.data[(t - 1 - l) * self.dim + q];
            }
        }
    }

    pub fn slice(&self, start: usize, end: usize) -> Result<Self> {
        if start > end || end > self.len() {
            return shape_err(format!("slice {start}..{end} out of range for length {}", self.len()));
        }
        Ok(Self {
            dim: self.dim,
            data: self.data[start * self.dim..end * self.dim].to_vec(),
        })
    }

    pub fn split_at(&self, t: usize) -> Result<(Self, Self)> {
        Ok((self.slice(0, t)?, self.slice(t, self.len())?))
    }

    /// Number of frames scored by an order-`lags` model.
    pub fn scored_frames(&self, lags: usize) -> Result<usize> {
        if self.len() <= lags {
            return Err(SaltError::InvalidInput(format!(
                "series of length {} is too short for {lags} lags",
                self.len()
            )));
        }
        Ok(self.len() - lags)
    }
}
