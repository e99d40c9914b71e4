use nalgebra::{DMatrix, DVector};
use salt_core::datagen::random_rotational_lds;
use salt_core::lds::{
    bound_scale_from_data, dare_residual, kalman_filter, lds_to_salt, real_modal_form, simulate_lds, solve_dare,
    steady_state_predictions, truncated_kalman_coeffs, truncation_error_bound, LdsParams,
};
use salt_core::rng::{seeded, standard_normal_matrix};
use salt_core::salt::emission_log_likelihoods;
use salt_core::stats::LagDesign;
use salt_core::tensor::{materialize, Mode};
use salt_core::TimeSeries;

const LN_2PI: f64 = 1.8378770664093453;

fn random_stable_lds(dl: usize, n: usize, seed: u64) -> LdsParams {
    let mut rng = seeded(seed);
    let a = standard_normal_matrix(&mut rng, dl, dl);
    let rho = a.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max);
    let a = a * (0.9 / rho);
    let qf = standard_normal_matrix(&mut rng, dl, dl) * 0.3;
    let rf = standard_normal_matrix(&mut rng, n, n) * 0.3;
    LdsParams::new(
        a,
        standard_normal_matrix(&mut rng, dl, 1).column(0).into_owned() * 0.1,
        &qf * qf.transpose() + DMatrix::identity(dl, dl) * 0.1,
        standard_normal_matrix(&mut rng, n, dl),
        standard_normal_matrix(&mut rng, n, 1).column(0).into_owned(),
        &rf * rf.transpose() + DMatrix::identity(n, n) * 0.5,
    )
    .unwrap()
}

#[test]
fn construction_reproduces_truncated_coefficients() {
    for seed in 0..6 {
        let p = random_stable_lds(2 + (seed as usize % 5), 3 + seed as usize, seed);
        let ss = solve_dare(&p).unwrap();
        let (truth, bias) = truncated_kalman_coeffs(&ss, &p, 12).unwrap();
        for mode in [Mode::Tucker, Mode::Cp] {
            let salt = lds_to_salt(&p, 12, mode).unwrap();
            let est = materialize(&salt.states[0].factors).unwrap();
            let scale = truth.data().iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let err = est.data().iter().zip(truth.data()).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
            assert!(err <= 1e-8 * scale.max(1e-300), "seed {seed} {mode}: {err}");
            assert!((&salt.states[0].bias - &bias).amax() < 1e-10);
        }
    }
}

#[test]
fn truncated_coefficients_match_impulse_response() {
    // Drive the steady-state predictor with a unit impulse; the prediction `l + 1`
    // steps later is column q of slice l.
    let mut p = random_stable_lds(4, 3, 21);
    p.b = DVector::zeros(4);
    p.d = DVector::zeros(3);
    let ss = solve_dare(&p).unwrap();
    assert!(dare_residual(&p, &ss.sigma_pred) < 1e-10);
    let lags = 8;
    let (coef, _) = truncated_kalman_coeffs(&ss, &p, lags).unwrap();
    for q in 0..3 {
        let mut data = vec![0.0; (lags + 1) * 3];
        data[q] = 1.0;
        let y = TimeSeries::new(3, data).unwrap();
        let pred = steady_state_predictions(&p, &ss, &y).unwrap();
        for l in 0..lags {
            for i in 0..3 {
                assert!((pred.means[(l + 1, i)] - coef.get(i, q, l)).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn exact_filter_matches_joint_gaussian_density() {
    let p = random_stable_lds(3, 2, 5);
    let t_len = 6;
    let y = simulate_lds(&p, t_len, 2).unwrap();
    // Joint moments of y_1..y_T under the stationary start.
    let (mu0, p0) = p.stationary().unwrap();
    let (dl, n) = (3, 2);
    let mut means = Vec::new();
    let mut covs = vec![DMatrix::zeros(dl, dl); t_len];
    let mut m = mu0.clone();
    let mut c = p0.clone();
    for t in 0..t_len {
        means.push(&p.c * &m + &p.d);
        covs[t] = c.clone();
        m = &p.a * m + &p.b;
        c = &p.a * c * p.a.transpose() + &p.q;
    }
    let mut big = DMatrix::zeros(n * t_len, n * t_len);
    for s in 0..t_len {
        for t in s..t_len {
            // Cov(x_t, x_s) = A^{t-s} P_s
            let apow = (0..t - s).fold(DMatrix::identity(dl, dl), |acc, _| &p.a * acc);
            let mut block = &p.c * apow * &covs[s] * p.c.transpose();
            if s == t {
                block += &p.r;
            }
            big.view_mut((t * n, s * n), (n, n)).copy_from(&block);
            big.view_mut((s * n, t * n), (n, n)).copy_from(&block.transpose());
        }
    }
    let mut resid = DVector::zeros(n * t_len);
    for t in 0..t_len {
        for i in 0..n {
            resid[t * n + i] = y.row(t)[i] - means[t][i];
        }
    }
    let chol = big.clone().cholesky().unwrap();
    let quad = resid.dot(&chol.solve(&resid));
    let logdet = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let joint = -0.5 * (quad + logdet + (n * t_len) as f64 * LN_2PI);
    let kf: f64 = kalman_filter(&p, &y).unwrap().log_densities.iter().sum();
    assert!((kf - joint).abs() < 1e-9 * joint.abs(), "{kf} vs {joint}");
}

#[test]
fn truncation_gap_respects_the_bound() {
    let p = random_rotational_lds(1, 2, 6, 0.9, 4).unwrap();
    let ss = solve_dare(&p).unwrap();
    let y = simulate_lds(&p, 600, 8).unwrap();
    let exact = steady_state_predictions(&p, &ss, &y).unwrap();
    let w = bound_scale_from_data(&ss, &p, &y).unwrap();
    let mut prev_bound = f64::INFINITY;
    for lags in [5, 10, 20] {
        let salt = lds_to_salt(&p, lags, Mode::Tucker).unwrap();
        let design = LagDesign::new(&y, lags).unwrap();
        let trunc = salt.state_means(&design, 0);
        let mut gap: f64 = 0.0;
        for r in 0..design.frames() {
            for i in 0..6 {
                gap = gap.max((exact.means[(r + lags, i)] - trunc[(r, i)]).abs());
            }
        }
        let bound = truncation_error_bound(&ss, &p, lags, w).unwrap();
        assert!(gap <= bound, "L={lags}: gap {gap} > bound {bound}");
        assert!(bound < prev_bound);
        prev_bound = bound;
    }
}

#[test]
fn salt_emissions_use_steady_innovation_covariance() {
    let p = random_rotational_lds(1, 1, 4, 0.7, 1).unwrap();
    let ss = solve_dare(&p).unwrap();
    let y = simulate_lds(&p, 300, 3).unwrap();
    let lags = 40;
    let salt = lds_to_salt(&p, lags, Mode::Cp).unwrap();
    let ll = emission_log_likelihoods(&salt, &y).unwrap();
    let steady = steady_state_predictions(&p, &ss, &y).unwrap();
    // With λ^L negligible the two predictors agree frame by frame.
    for r in 0..ll.nrows() {
        assert!((ll[(r, 0)] - steady.log_densities[r + lags]).abs() < 1e-6);
    }
}

#[test]
fn modal_form_of_closed_loop_matrix_reconstructs() {
    for seed in 0..5 {
        let p = random_stable_lds(7, 5, 100 + seed);
        let ss = solve_dare(&p).unwrap();
        let mf = real_modal_form(&ss.gamma).unwrap();
        assert!(mf.reconstruction_residual < 1e-8);
        let e_inv = mf.e.clone().try_inverse().unwrap();
        assert!((&mf.e * &mf.lambda * e_inv - &ss.gamma).amax() < 1e-8);
    }
}
