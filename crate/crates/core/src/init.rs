//! Starting points for EM: k-means over lag windows, per-cluster least
//! squares, and low-rank projections of the fitted tensors.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::Result;
use crate::rng::{standard_normal_matrix, SaltRng};
use crate::tensor::{kron, mode_n_matricize, mode_n_unmatricize, Tensor3, TuckerFactors};

/// Lloyd's algorithm with k-means++ seeding over the rows of `points`.
/// Returns a cluster label per row.
pub fn kmeans(points: &DMatrix<f64>, k: usize, rng: &mut SaltRng, max_iter: usize) -> Vec<usize> {
    let (n, dim) = points.shape();
    if k <= 1 || n == 0 {
        return vec![0; n];
    }
    let dist2 = |r: usize, c: &DVector<f64>| -> f64 {
        let mut s = 0.0;
        for j in 0..dim {
            let d = points[(r, j)] - c[j];
            s += d * d;
        }
        s
    };
    let row = |r: usize| -> DVector<f64> { points.row(r).transpose() };

    let mut centers = vec![row(rng.random_range(0..n))];
    let mut best: Vec<f64> = (0..n).map(|r| dist2(r, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = best.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut idx = n - 1;
            for (r, &d) in best.iter().enumerate() {
                if u < d {
                    idx = r;
                    break;
                }
                u -= d;
            }
            idx
        } else {
            rng.random_range(0..n)
        };
        let c = row(pick);
        for (r, b) in best.iter_mut().enumerate() {
            *b = b.min(dist2(r, &c));
        }
        centers.push(c);
    }

    let mut labels = vec![usize::MAX; n];
    for _ in 0..max_iter {
        let mut changed = false;
        for r in 0..n {
            let mut arg = 0;
            let mut bd = f64::INFINITY;
            for (c, center) in centers.iter().enumerate() {
                let d = dist2(r, center);
                if d < bd {
                    bd = d;
                    arg = c;
                }
            }
            if labels[r] != arg {
                labels[r] = arg;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let mut sums = vec![DVector::zeros(dim); k];
        let mut counts = vec![0usize; k];
        for r in 0..n {
            sums[labels[r]] += points.row(r).transpose();
            counts[labels[r]] += 1;
        }
        for c in 0..k {
            if counts[c] > 0 {
                centers[c] = &sums[c] / counts[c] as f64;
            } else {
                // Re-seed an empty cluster at the point farthest from its center.
                let far = (0..n)
                    .max_by(|&a, &b| {
                        dist2(a, &centers[labels[a]])
                            .partial_cmp(&dist2(b, &centers[labels[b]]))
                            .unwrap_or(std::cmp::Ordering::Equal)
                    })
                    .unwrap_or(0);
                centers[c] = row(far);
            }
        }
    }
    labels
}

/// Leading `d` left singular vectors of `m`, padded with small random columns
/// when `m` has fewer than `d` rows. The second value counts the real columns.
fn leading_subspace(m: &DMatrix<f64>, d: usize, rng: &mut SaltRng) -> (DMatrix<f64>, usize) {
    let rows = m.nrows();
    let svd = m.clone().svd(true, false);
    let u = svd.u.expect("left singular vectors requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| {
        svd.singular_values[b]
            .partial_cmp(&svd.singular_values[a])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let real = d.min(order.len()).min(rows);
    let mut out = standard_normal_matrix(rng, rows, d) * (1e-3 / (rows as f64).sqrt());
    for (c, &idx) in order.iter().take(real).enumerate() {
        out.set_column(c, &u.column(idx));
    }
    (out, real)
}

/// Truncated higher-order SVD of `a` to multilinear rank `(d, d, d)`.
pub fn hosvd(a: &Tensor3, d: usize, rng: &mut SaltRng) -> Result<TuckerFactors> {
    let (u, ru) = leading_subspace(&mode_n_matricize(a, 1)?, d, rng);
    let (v, rv) = leading_subspace(&mode_n_matricize(a, 2)?, d, rng);
    let (w, rw) = leading_subspace(&mode_n_matricize(a, 3)?, d, rng);
    // Project with the orthonormal part only; padded slices of the core stay zero.
    let mask = |m: &DMatrix<f64>, r: usize| {
        let mut m = m.clone();
        for c in r..m.ncols() {
            m.column_mut(c).fill(0.0);
        }
        m
    };
    let a1 = mode_n_matricize(a, 1)?;
    let g1 = mask(&u, ru).transpose() * a1 * kron(&mask(&v, rv), &mask(&w, rw));
    let core = mode_n_unmatricize(&g1, 1, [d, d, d])?;
    TuckerFactors::new(u, v, w, core)
}

/// Column-wise Khatri-Rao product with row index `i * b.nrows() + j`.
fn khatri_rao(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let (na, nb) = (a.nrows(), b.nrows());
    DMatrix::from_fn(na * nb, a.ncols(), |r, c| a[(r / nb, c)] * b[(r % nb, c)])
}

/// Rank-`d` CP decomposition of `a` by alternating least squares, started
/// from the HOSVD factor columns.
pub fn cp_als(a: &Tensor3, d: usize, iters: usize, rng: &mut SaltRng) -> Result<TuckerFactors> {
    let start = hosvd(a, d, rng)?;
    let (mut u, mut v, mut w) = (start.u, start.v, start.w);
    let a1 = mode_n_matricize(a, 1)?;
    let a2 = mode_n_matricize(a, 2)?;
    let a3 = mode_n_matricize(a, 3)?;
    let solve = |rhs: DMatrix<f64>, gram: DMatrix<f64>| -> Result<DMatrix<f64>> {
        let (x, _) = crate::linalg::solve_spd(&gram, &rhs.transpose())?;
        Ok(x.transpose())
    };
    let mut scale = vec![1.0; d];
    for _ in 0..iters {
        u = solve(&a1 * khatri_rao(&v, &w), (v.transpose() * &v).component_mul(&(w.transpose() * &w)))?;
        v = solve(&a2 * khatri_rao(&u, &w), (u.transpose() * &u).component_mul(&(w.transpose() * &w)))?;
        w = solve(&a3 * khatri_rao(&u, &v), (u.transpose() * &u).component_mul(&(v.transpose() * &v)))?;
        for c in 0..d {
            let nu = u.column(c).norm();
            let nv = v.column(c).norm();
            if nu > 0.0 && nv > 0.0 {
                u.column_mut(c).scale_mut(1.0 / nu);
                v.column_mut(c).scale_mut(1.0 / nv);
                w.column_mut(c).scale_mut(nu * nv);
            }
        }
    }
    for (c, s) in scale.iter_mut().enumerate() {
        let nw = w.column(c).norm();
        if nw > 0.0 {
            w.column_mut(c).scale_mut(1.0 / nw);
            *s = nw;
        } else {
            *s = 0.0;
        }
    }
    TuckerFactors::new(u, v, w, Tensor3::superdiagonal(&scale))
}
