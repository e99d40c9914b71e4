//! Dense three-way tensors and the Tucker / CP algebra used by the
//! autoregressive models.
//!
//! Vectorization and matricization are row-major throughout: the entry
//! `t[i, j, k]` of an `(n1, n2, n3)` tensor lives at `(i * n2 + j) * n3 + k`,
//! and the mode-1 matricization places it at row `i`, column `j * n3 + k`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Result, SaltError};

/// Dense real tensor of order three, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3 {
    dims: [usize; 3],
    data: Vec<f64>,
}

impl Tensor3 {
    pub fn zeros(dims: [usize; 3]) -> Self {
        Self {
            dims,
            data: vec![0.0; dims[0] * dims[1] * dims[2]],
        }
    }

    pub fn from_vec(dims: [usize; 3], data: Vec<f64>) -> Result<Self> {
        if data.len() != dims[0] * dims[1] * dims[2] {
            return shape_err(format!(
                "tensor {:?} needs {} entries, got {}",
                dims,
                dims[0] * dims[1] * dims[2],
                data.len()
            ));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(SaltError::InvalidInput("tensor entries must be finite".into()));
        }
        Ok(Self { dims, data })
    }

    pub fn from_fn(dims: [usize; 3], mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(dims[0] * dims[1] * dims[2]);
        for i in 0..dims[0] {
            for j in 0..dims[1] {
                for k in 0..dims[2] {
                    data.push(f(i, j, k));
                }
            }
        }
        Self { dims, data }
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    fn offset(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.dims[1] + j) * self.dims[2] + k
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.data[self.offset(i, j, k)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, k: usize, v: f64) {
        let o = self.offset(i, j, k);
        self.data[o] = v;
    }

    /// Frontal slice `t[:, :, k]`.
    pub fn frontal_slice(&self, k: usize) -> DMatrix<f64> {
        DMatrix::from_fn(self.dims[0], self.dims[1], |i, j| self.get(i, j, k))
    }

    /// True when every entry off the superdiagonal `i == j == k` is zero.
    pub fn is_superdiagonal(&self) -> bool {
        (0..self.dims[0]).all(|i| {
            (0..self.dims[1]).all(|j| {
                (0..self.dims[2]).all(|k| (i == j && j == k) || self.get(i, j, k) == 0.0)
            })
        })
    }

    pub fn superdiagonal(values: &[f64]) -> Self {
        let d = values.len();
        let mut t = Self::zeros([d, d, d]);
        for (i, &v) in values.iter().enumerate() {
            t.set(i, i, i, v);
        }
        t
    }
}

/// Factor matrices and core of a Tucker decomposition.
///
/// `u` is `N1 x D1`, `v` is `N2 x D2`, `w` is `N3 x D3` and `core` is
/// `D1 x D2 x D3`. A CP decomposition is the special case with a
/// superdiagonal core.
#[derive(Debug, Clone, PartialEq)]
pub struct TuckerFactors {
    pub u: DMatrix<f64>,
    pub v: DMatrix<f64>,
    pub w: DMatrix<f64>,
    pub core: Tensor3,
}

/// Tucker (dense core) or CP (superdiagonal core) factorization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Cp,
    Tucker,
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Mode::Cp => f.write_str("cp"),
            Mode::Tucker => f.write_str("tucker"),
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = SaltError;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cp" => Ok(Mode::Cp),
            "tucker" => Ok(Mode::Tucker),
            other => Err(SaltError::InvalidInput(format!("unknown mode '{other}'"))),
        }
    }
}

impl TuckerFactors {
    pub fn new(u: DMatrix<f64>, v: DMatrix<f64>, w: DMatrix<f64>, core: Tensor3) -> Result<Self> {
        let f = Self { u, v, w, core };
        f.check()?;
        Ok(f)
    }

    pub fn check(&self) -> Result<()> {
        let [d1, d2, d3] = self.core.dims();
        if self.u.ncols() != d1 || self.v.ncols() != d2 || self.w.ncols() != d3 {
            return shape_err(format!(
                "factor ranks ({}, {}, {}) do not match core {:?}",
                self.u.ncols(),
                self.v.ncols(),
                self.w.ncols(),
                self.core.dims()
            ));
        }
        Ok(())
    }

    /// Output dimensions `(N1, N2, N3)` of the represented tensor.
    pub fn dims(&self) -> [usize; 3] {
        [self.u.nrows(), self.v.nrows(), self.w.nrows()]
    }

    pub fn ranks(&self) -> [usize; 3] {
        self.core.dims()
    }

    /// `G_(1) vec(V^T X W)`: the rank-space representation of an input.
    pub fn project_input(&self, x: &DMatrix<f64>) -> Result<DVector<f64>> {
        let [_, n2, n3] = self.dims();
        if x.nrows() != n2 || x.ncols() != n3 {
            return shape_err(format!(
                "input is {}x{}, expected {n2}x{n3}",
                x.nrows(),
                x.ncols()
            ));
        }
        let z = self.v.transpose() * x * &self.w;
        Ok(mode_n_matricize(&self.core, 1)? * row_major_vec(&z))
    }

    /// Predictive mean `A x_{2,3} X` in the U-form `U G_(1) vec(V^T X W)`.
    pub fn predict_mean(&self, x: &DMatrix<f64>) -> Result<DVector<f64>> {
        Ok(&self.u * self.project_input(x)?)
    }
}

/// Row-major vectorization of a matrix.
pub fn row_major_vec(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_iterator(m.len(), m.transpose().iter().copied())
}

/// Inverse of [`row_major_vec`].
pub fn row_major_unvec(v: &DVector<f64>, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_row_slice(rows, cols, v.as_slice())
}

/// Kronecker product.
pub fn kron(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    a.kronecker(b)
}

/// Sum over `i, j, k` of `g_ijk u_:i ∘ v_:j ∘ w_:k`.
pub fn materialize(f: &TuckerFactors) -> Result<Tensor3> {
    f.check()?;
    let [n1, n2, n3] = f.dims();
    let [d1, d2, d3] = f.ranks();
    // Contract one mode at a time: core x_3 W, then x_2 V, then x_1 U.
    let mut t3 = vec![0.0; d1 * d2 * n3];
    for i in 0..d1 {
        for j in 0..d2 {
            for l in 0..n3 {
                let mut s = 0.0;
                for k in 0..d3 {
                    s += f.core.get(i, j, k) * f.w[(l, k)];
                }
                t3[(i * d2 + j) * n3 + l] = s;
            }
        }
    }
    let mut t2 = vec![0.0; d1 * n2 * n3];
    for i in 0..d1 {
        for q in 0..n2 {
            for l in 0..n3 {
                let mut s = 0.0;
                for j in 0..d2 {
                    s += f.v[(q, j)] * t3[(i * d2 + j) * n3 + l];
                }
                t2[(i * n2 + q) * n3 + l] = s;
            }
        }
    }
    let mut out = Tensor3::zeros([n1, n2, n3]);
    for p in 0..n1 {
        for q in 0..n2 {
            for l in 0..n3 {
                let mut s = 0.0;
                for i in 0..d1 {
                    s += f.u[(p, i)] * t2[(i * n2 + q) * n3 + l];
                }
                out.set(p, q, l, s);
            }
        }
    }
    Ok(out)
}

/// `A x_{2,3} X = sum_{j,k} a_:jk x_jk`.
pub fn contract_23(a: &Tensor3, x: &DMatrix<f64>) -> Result<DVector<f64>> {
    let [n1, n2, n3] = a.dims();
    if x.nrows() != n2 || x.ncols() != n3 {
        return shape_err(format!(
            "cannot contract {:?} with a {}x{} matrix",
            a.dims(),
            x.nrows(),
            x.ncols()
        ));
    }
    let mut out = DVector::zeros(n1);
    for p in 0..n1 {
        let mut s = 0.0;
        for j in 0..n2 {
            for k in 0..n3 {
                s += a.get(p, j, k) * x[(j, k)];
            }
        }
        out[p] = s;
    }
    Ok(out)
}

/// Mode-`n` matricization (`n` in 1..=3), row-major column ordering.
///
/// Mode 1 of an `(n1, n2, n3)` tensor is `n1 x (n2 n3)` with column `j n3 + k`;
/// mode 2 is `n2 x (n1 n3)` with column `i n3 + k`; mode 3 is `n3 x (n1 n2)`
/// with column `i n2 + j`.
pub fn mode_n_matricize(t: &Tensor3, n: usize) -> Result<DMatrix<f64>> {
    let [n1, n2, n3] = t.dims();
    match n {
        1 => Ok(DMatrix::from_fn(n1, n2 * n3, |i, c| t.get(i, c / n3, c % n3))),
        2 => Ok(DMatrix::from_fn(n2, n1 * n3, |j, c| t.get(c / n3, j, c % n3))),
        3 => Ok(DMatrix::from_fn(n3, n1 * n2, |k, c| t.get(c / n2, c % n2, k))),
        _ => Err(SaltError::InvalidInput(format!("matricization mode must be 1, 2 or 3, got {n}"))),
    }
}

/// Inverse of [`mode_n_matricize`].
pub fn mode_n_unmatricize(m: &DMatrix<f64>, n: usize, dims: [usize; 3]) -> Result<Tensor3> {
    let [n1, n2, n3] = dims;
    let expected = match n {
        1 => (n1, n2 * n3),
        2 => (n2, n1 * n3),
        3 => (n3, n1 * n2),
        _ => return Err(SaltError::InvalidInput(format!("matricization mode must be 1, 2 or 3, got {n}"))),
    };
    if (m.nrows(), m.ncols()) != expected {
        return shape_err(format!(
            "mode-{n} matrix of {dims:?} must be {}x{}, got {}x{}",
            expected.0,
            expected.1,
            m.nrows(),
            m.ncols()
        ));
    }
    Ok(Tensor3::from_fn(dims, |i, j, k| match n {
        1 => m[(i, j * n3 + k)],
        2 => m[(j, i * n3 + k)],
        _ => m[(k, i * n2 + j)],
    }))
}

/// The four algebraically equivalent ways of computing `A x_{2,3} X` from
/// Tucker factors. Only the U-form is used for fitting; the others exist to
/// cross-check the coefficient matrices the coordinate updates rely on.
#[derive(Debug, Clone)]
pub struct MeanForms {
    pub u_form: DVector<f64>,
    pub v_form: DVector<f64>,
    pub w_form: DVector<f64>,
    pub g_form: DVector<f64>,
}

impl MeanForms {
    pub fn max_discrepancy(&self) -> f64 {
        let all = [&self.u_form, &self.v_form, &self.w_form, &self.g_form];
        let mut worst: f64 = 0.0;
        for a in 0..all.len() {
            for b in a + 1..all.len() {
                worst = worst.max((all[a] - all[b]).amax());
            }
        }
        worst
    }
}

pub fn predict_mean_forms(f: &TuckerFactors, x: &DMatrix<f64>) -> Result<MeanForms> {
    let u_form = f.predict_mean(x)?;
    let g1 = mode_n_matricize(&f.core, 1)?;
    let [_, d2, d3] = f.ranks();
    let ug = &f.u * &g1;

    // U G_(1) (I_{D2} ⊗ W^T X^T) vec(V^T)
    let wx = f.w.transpose() * x.transpose();
    let v_form = &ug * kron(&DMatrix::identity(d2, d2), &wx) * row_major_vec(&f.v.transpose());

    // U G_(1) (V^T X ⊗ I_{D3}) vec(W)
    let vx = f.v.transpose() * x;
    let w_form = &ug * kron(&vx, &DMatrix::identity(d3, d3)) * row_major_vec(&f.w);

    // [U ⊗ vec(V^T X W)^T] vec(G)
    let z = row_major_vec(&(f.v.transpose() * x * &f.w));
    let g_vec = DVector::from_column_slice(f.core.data());
    let g_form = kron(&f.u, &DMatrix::from_row_slice(1, z.len(), z.as_slice())) * g_vec;

    Ok(MeanForms {
        u_form,
        v_form,
        w_form,
        g_form,
    })
}
