//! Shared fixtures and normal-equation oracles for the integration tests.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use salt_core::hmm::TransitionModel;
use salt_core::rng::{seeded, standard_normal_matrix, SaltRng};
use salt_core::salt::{SaltParams, StateParams};
use salt_core::tensor::{kron, mode_n_matricize, row_major_vec, Mode, Tensor3, TuckerFactors};
use salt_core::TimeSeries;

pub fn random_state(n: usize, l: usize, d: usize, mode: Mode, rng: &mut SaltRng) -> StateParams {
    let u = standard_normal_matrix(rng, n, d) * 0.5;
    let v = standard_normal_matrix(rng, n, d) * 0.5;
    let w = standard_normal_matrix(rng, l, d) * 0.5;
    let core = match mode {
        Mode::Tucker => Tensor3::from_vec([d, d, d], standard_normal_matrix(rng, 1, d * d * d).as_slice().to_vec()).unwrap(),
        Mode::Cp => Tensor3::superdiagonal(standard_normal_matrix(rng, 1, d).as_slice()),
    };
    let a = standard_normal_matrix(rng, n, n);
    StateParams {
        factors: TuckerFactors::new(u, v, w, core).unwrap(),
        bias: standard_normal_matrix(rng, n, 1).column(0).into_owned() * 0.3,
        cov: &a * a.transpose() * 0.3 + DMatrix::identity(n, n),
    }
}

/// Gaussian matrix with its singular values redrawn from `[0.5, 2]`.
pub fn conditioned_matrix(rng: &mut SaltRng, rows: usize, cols: usize) -> DMatrix<f64> {
    use rand::Rng;
    let svd = standard_normal_matrix(rng, rows, cols).svd(true, true);
    let k = rows.min(cols);
    let s = DMatrix::from_diagonal(&DVector::from_fn(k, |_, _| rng.random_range(0.5..2.0)));
    svd.u.unwrap() * s * svd.v_t.unwrap()
}

/// Random model whose factors, core unfolding and covariances all have
/// condition number at most 4.
pub fn conditioned_model(n: usize, l: usize, d: usize, h: usize, mode: Mode, seed: u64) -> SaltParams {
    let mut rng = seeded(seed);
    let states = (0..h)
        .map(|_| {
            let core = match mode {
                Mode::Tucker => {
                    let g1 = conditioned_matrix(&mut rng, d, d * d);
                    salt_core::tensor::mode_n_unmatricize(&g1, 1, [d, d, d]).unwrap()
                }
                Mode::Cp => {
                    let diag = conditioned_matrix(&mut rng, 1, d);
                    Tensor3::superdiagonal(&(0..d).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 } * (0.5 + diag[(0, i)].abs())).collect::<Vec<_>>())
                }
            };
            let u = conditioned_matrix(&mut rng, n, d) * 0.5;
            let v = conditioned_matrix(&mut rng, n, d) * 0.5;
            let w = conditioned_matrix(&mut rng, l, d) * 0.5;
            let a = conditioned_matrix(&mut rng, n, n);
            StateParams {
                factors: TuckerFactors::new(u, v, w, core).unwrap(),
                bias: standard_normal_matrix(&mut rng, n, 1).column(0).into_owned() * 0.3,
                cov: &a * a.transpose() * 0.3 + DMatrix::identity(n, n),
            }
        })
        .collect();
    SaltParams::new(mode, l, d, states, TransitionModel::sticky(h, 0.8)).unwrap()
}

pub fn random_model(n: usize, l: usize, d: usize, h: usize, mode: Mode, seed: u64) -> SaltParams {
    let mut rng = seeded(seed);
    let states = (0..h).map(|_| random_state(n, l, d, mode, &mut rng)).collect();
    SaltParams::new(mode, l, d, states, TransitionModel::sticky(h, 0.8)).unwrap()
}

pub fn white_noise(t: usize, n: usize, seed: u64) -> TimeSeries {
    let mut rng = seeded(seed);
    TimeSeries::from_matrix(&standard_normal_matrix(&mut rng, t, n)).unwrap()
}

pub fn rel_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).amax() / (1.0 + b.amax())
}

/// Weighted normal equations `Σ ω Xᵀ Λ X θ = Σ ω Xᵀ Λ (y - b)` assembled
/// from explicit per-frame design matrices.
pub fn normal_equations(
    y: &TimeSeries,
    l: usize,
    w: &[f64],
    s: &StateParams,
    design_of: impl Fn(&DMatrix<f64>) -> DMatrix<f64>,
) -> DVector<f64> {
    let lam = s.cov.clone().try_inverse().unwrap();
    let mut gram: Option<DMatrix<f64>> = None;
    let mut rhs: Option<DVector<f64>> = None;
    for t in l..y.len() {
        let x = design_of(&y.lag_window(t, l));
        let r = y.row_vector(t) - &s.bias;
        let g = x.transpose() * &lam * &x * w[t - l];
        let b = x.transpose() * &lam * r * w[t - l];
        gram = Some(match gram {
            None => g,
            Some(acc) => acc + g,
        });
        rhs = Some(match rhs {
            None => b,
            Some(acc) => acc + b,
        });
    }
    gram.unwrap().lu().solve(&rhs.unwrap()).unwrap()
}

pub fn oracle_u(y: &TimeSeries, l: usize, w: &[f64], s: &StateParams) -> DMatrix<f64> {
    let f = &s.factors;
    let n = f.u.nrows();
    let d = f.ranks()[0];
    let theta = normal_equations(y, l, w, s, |x| {
        let xt = f.project_input(x).unwrap();
        kron(&DMatrix::identity(n, n), &DMatrix::from_row_slice(1, d, xt.as_slice()))
    });
    DMatrix::from_row_slice(n, d, theta.as_slice())
}

pub fn oracle_core(y: &TimeSeries, l: usize, w: &[f64], s: &StateParams, mode: Mode) -> Tensor3 {
    let f = &s.factors;
    let d = f.ranks()[0];
    let zt = |x: &DMatrix<f64>| row_major_vec(&(f.v.transpose() * x * &f.w));
    match mode {
        Mode::Tucker => {
            let theta = normal_equations(y, l, w, s, |x| {
                let z = zt(x);
                kron(&f.u, &DMatrix::from_row_slice(1, z.len(), z.as_slice()))
            });
            Tensor3::from_vec([d, d, d], theta.as_slice().to_vec()).unwrap()
        }
        Mode::Cp => {
            let theta = normal_equations(y, l, w, s, |x| {
                let z = zt(x);
                DMatrix::from_fn(f.u.nrows(), d, |p, c| f.u[(p, c)] * z[c * d + c])
            });
            Tensor3::superdiagonal(theta.as_slice())
        }
    }
}

pub fn oracle_v(y: &TimeSeries, l: usize, w: &[f64], s: &StateParams) -> DMatrix<f64> {
    let f = &s.factors;
    let (n, d) = (f.u.nrows(), f.ranks()[0]);
    let ug = &f.u * mode_n_matricize(&f.core, 1).unwrap();
    let theta = normal_equations(y, l, w, s, |x| &ug * kron(&DMatrix::identity(d, d), &(f.w.transpose() * x.transpose())));
    // theta = vec(Vᵀ)
    DMatrix::from_row_slice(d, n, theta.as_slice()).transpose()
}

pub fn oracle_w(y: &TimeSeries, l: usize, w: &[f64], s: &StateParams) -> DMatrix<f64> {
    let f = &s.factors;
    let d = f.ranks()[0];
    let ug = &f.u * mode_n_matricize(&f.core, 1).unwrap();
    let theta = normal_equations(y, l, w, s, |x| &ug * kron(&(f.v.transpose() * x), &DMatrix::identity(d, d)));
    DMatrix::from_row_slice(l, d, theta.as_slice())
}
