use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use salt_core::em::{state_stats, FitConfig, InitMethod};
use salt_core::hmm::{forward_backward, HmmPosterior, TransitionModel};
use salt_core::rng::{seeded, standard_normal_matrix};
use salt_core::salt::{
    ar_filter, e_step, emission_log_likelihoods, fit_em, fit_em_from, latent_trajectory, m_step_bias_cov,
    m_step_core, m_step_input, m_step_lag, m_step_output, simulate, update_bias_cov, update_core, update_input,
    update_lag, update_output, SaltParams, StateParams,
};
use salt_core::stats::LagDesign;
use salt_core::tensor::{contract_23, materialize, mode_n_matricize, Mode, Tensor3, TuckerFactors};
use salt_core::TimeSeries;

mod common;

use common::*;

const LN_2PI: f64 = 1.8378770664093453;

fn posterior_for(p: &SaltParams, y: &TimeSeries) -> HmmPosterior {
    e_step(p, y).unwrap()
}

#[test]
fn zero_model_scores_standard_normal_at_zero() {
    let s = StateParams {
        factors: TuckerFactors::new(
            DMatrix::zeros(1, 1),
            DMatrix::zeros(1, 1),
            DMatrix::zeros(1, 1),
            Tensor3::zeros([1, 1, 1]),
        )
        .unwrap(),
        bias: DVector::zeros(1),
        cov: DMatrix::identity(1, 1),
    };
    let p = SaltParams::new(Mode::Tucker, 1, 1, vec![s], TransitionModel::uniform(1)).unwrap();
    let y = TimeSeries::new(1, vec![0.0; 6]).unwrap();
    let ll = emission_log_likelihoods(&p, &y).unwrap();
    assert_eq!(ll.nrows(), 5);
    assert!(ll.iter().all(|&v| (v + 0.5 * LN_2PI).abs() < 1e-15));
}

#[test]
fn perfect_predictor_scores_normalizer_only() {
    let a = 0.7;
    let sigma2: f64 = 0.25;
    let s = StateParams {
        factors: TuckerFactors::new(
            DMatrix::from_element(1, 1, a),
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_element(1, 1, 1.0),
            Tensor3::superdiagonal(&[1.0]),
        )
        .unwrap(),
        bias: DVector::zeros(1),
        cov: DMatrix::from_element(1, 1, sigma2),
    };
    let p = SaltParams::new(Mode::Cp, 1, 1, vec![s], TransitionModel::uniform(1)).unwrap();
    let data: Vec<f64> = (0..8).map(|t| 2.0 * a.powi(t)).collect();
    let ll = emission_log_likelihoods(&p, &TimeSeries::new(1, data).unwrap()).unwrap();
    let expect = -0.5 * (2.0 * std::f64::consts::PI * sigma2).ln();
    assert!(ll.iter().all(|&v| (v - expect).abs() < 1e-12));
}

#[test]
fn emission_matches_dense_tensor_oracle() {
    let p = random_model(3, 2, 2, 2, Mode::Tucker, 5);
    let y = white_noise(20, 3, 6);
    let ll = emission_log_likelihoods(&p, &y).unwrap();
    for h in 0..2 {
        let s = &p.states[h];
        let a = materialize(&s.factors).unwrap();
        let inv = s.cov.clone().try_inverse().unwrap();
        let det = s.cov.determinant();
        for t in 2..20 {
            let mean = contract_23(&a, &y.lag_window(t, 2)).unwrap() + &s.bias;
            let r = y.row_vector(t) - mean;
            let q = (r.transpose() * &inv * &r)[0];
            let dens = -0.5 * q - 0.5 * det.ln() - 1.5 * LN_2PI;
            assert!((ll[(t - 2, h)] - dens).abs() < 1e-10);
        }
    }
}

#[test]
fn gauge_rescaling_leaves_likelihoods_unchanged() {
    let p = random_model(3, 3, 2, 2, Mode::Tucker, 8);
    let y = white_noise(30, 3, 9);
    let before = emission_log_likelihoods(&p, &y).unwrap();
    let mut q = p.clone();
    let s = 3.7;
    for st in &mut q.states {
        st.factors.u.column_mut(1).scale_mut(s);
        for j in 0..2 {
            for k in 0..2 {
                let g = st.factors.core.get(1, j, k);
                st.factors.core.set(1, j, k, g / s);
            }
        }
    }
    let after = emission_log_likelihoods(&q, &y).unwrap();
    assert!((before - after).amax() < 1e-10);
}

#[test]
fn coordinate_updates_match_normal_equations() {
    for seed in 0..6u64 {
        for mode in [Mode::Tucker, Mode::Cp] {
            let (n, l, h) = (3 + (seed as usize % 2), 2 + (seed as usize % 3), 2);
            // The Tucker core is only identifiable when D² ≤ N L.
            let d = if n * l >= 9 { 3 } else { 2 };
            let p = random_model(n, l, d, h, mode, 100 + seed);
            let y = white_noise(45, n, 200 + seed);
            let post = posterior_for(&p, &y);
            let weights: Vec<Vec<f64>> = (0..h).map(|k| post.omega.column(k).iter().copied().collect()).collect();

            let mut q = p.clone();
            m_step_output(&mut q, &y, &post).unwrap();
            for k in 0..h {
                let o = oracle_u(&y, l, &weights[k], &p.states[k]);
                assert!(rel_diff(&q.states[k].factors.u, &o) < 1e-8);
            }

            let mut q = p.clone();
            m_step_core(&mut q, &y, &post).unwrap();
            for k in 0..h {
                let o = oracle_core(&y, l, &weights[k], &p.states[k], mode);
                let a = DMatrix::from_column_slice(o.data().len(), 1, q.states[k].factors.core.data());
                let b = DMatrix::from_column_slice(o.data().len(), 1, o.data());
                assert!(rel_diff(&a, &b) < 1e-8);
                if mode == Mode::Cp {
                    assert!(q.states[k].factors.core.is_superdiagonal());
                }
            }

            let mut q = p.clone();
            m_step_input(&mut q, &y, &post).unwrap();
            for k in 0..h {
                let o = oracle_v(&y, l, &weights[k], &p.states[k]);
                assert!(rel_diff(&q.states[k].factors.v, &o) < 1e-8);
            }

            let mut q = p.clone();
            m_step_lag(&mut q, &y, &post).unwrap();
            for k in 0..h {
                let o = oracle_w(&y, l, &weights[k], &p.states[k]);
                assert!(rel_diff(&q.states[k].factors.w, &o) < 1e-8);
            }
        }
    }
}

#[test]
fn zero_weight_state_is_untouched() {
    let p = random_model(3, 2, 2, 2, Mode::Tucker, 12);
    let y = white_noise(30, 3, 13);
    let mut post = posterior_for(&p, &y);
    for t in 0..post.omega.nrows() {
        post.omega[(t, 0)] = 1.0;
        post.omega[(t, 1)] = 0.0;
    }
    let mut q = p.clone();
    m_step_output(&mut q, &y, &post).unwrap();
    m_step_core(&mut q, &y, &post).unwrap();
    m_step_input(&mut q, &y, &post).unwrap();
    m_step_lag(&mut q, &y, &post).unwrap();
    m_step_bias_cov(&mut q, &y, &post).unwrap();
    assert_eq!(q.states[1], p.states[1]);
    assert_ne!(q.states[0], p.states[0]);
}

#[test]
fn scalar_updates_reduce_to_closed_forms() {
    // N = L = D = 1: mean is u g v w y_{t-1}; each coordinate is a 1-D least squares.
    let y = white_noise(40, 1, 21);
    let design = LagDesign::new(&y, 1).unwrap();
    let sxy: f64 = (0..design.frames()).map(|r| design.x[(r, 0)] * (design.y[(r, 0)] - 0.1)).sum();
    let sxx: f64 = (0..design.frames()).map(|r| design.x[(r, 0)].powi(2)).sum();
    let (u, v, w, g) = (0.5, -1.5, 2.0, 0.8);
    let make = || StateParams {
        factors: TuckerFactors::new(
            DMatrix::from_element(1, 1, u),
            DMatrix::from_element(1, 1, v),
            DMatrix::from_element(1, 1, w),
            Tensor3::superdiagonal(&[g]),
        )
        .unwrap(),
        bias: DVector::from_element(1, 0.1),
        cov: DMatrix::from_element(1, 1, 2.0),
    };
    let st = design.stats(&vec![1.0; design.frames()]);
    let coef = sxy / sxx;
    let mut s = make();
    update_output(&mut s, &st).unwrap();
    assert!((s.factors.u[(0, 0)] - coef / (g * v * w)).abs() < 1e-12);
    let mut s = make();
    update_core(&mut s, &st, Mode::Tucker).unwrap();
    assert!((s.factors.core.get(0, 0, 0) - coef / (u * v * w)).abs() < 1e-12);
    let mut s = make();
    update_input(&mut s, &st).unwrap();
    assert!((s.factors.v[(0, 0)] - coef / (u * g * w)).abs() < 1e-12);
    let mut s = make();
    update_lag(&mut s, &st).unwrap();
    assert!((s.factors.w[(0, 0)] - coef / (u * g * v)).abs() < 1e-12);
}

#[test]
fn output_update_is_ols_for_identity_factors() {
    // L = 1, D = N, V = I, W selects the single lag, G the identity slice.
    let n = 3;
    let y = white_noise(60, n, 30);
    let core = Tensor3::from_fn([n, n, n], |i, j, k| if i == j && k == 0 { 1.0 } else { 0.0 });
    let mut w = DMatrix::zeros(1, n);
    w[(0, 0)] = 1.0;
    let mut s = StateParams {
        factors: TuckerFactors::new(DMatrix::identity(n, n), DMatrix::identity(n, n), w, core).unwrap(),
        bias: DVector::zeros(n),
        cov: DMatrix::identity(n, n),
    };
    let design = LagDesign::new(&y, 1).unwrap();
    let st = design.stats(&vec![1.0; design.frames()]);
    update_output(&mut s, &st).unwrap();
    let ols = (design.y.transpose() * &design.x) * (design.x.transpose() * &design.x).try_inverse().unwrap();
    assert!(rel_diff(&s.factors.u, &ols) < 1e-10);
}

#[test]
fn bias_cov_examples() {
    let n = 2;
    let make = |t: usize, f: &dyn Fn(usize) -> [f64; 2]| {
        let data: Vec<f64> = (0..t).flat_map(|i| f(i)).collect();
        TimeSeries::new(n, data).unwrap()
    };
    let zero_state = || StateParams {
        factors: TuckerFactors::new(
            DMatrix::zeros(n, 1),
            DMatrix::zeros(n, 1),
            DMatrix::zeros(1, 1),
            Tensor3::zeros([1, 1, 1]),
        )
        .unwrap(),
        bias: DVector::zeros(n),
        cov: DMatrix::identity(n, n),
    };
    // All-zero residuals.
    let y = make(10, &|_| [0.0, 0.0]);
    let design = LagDesign::new(&y, 1).unwrap();
    let mut s = zero_state();
    update_bias_cov(&mut s, &design.stats(&vec![1.0; 9])).unwrap();
    assert_eq!(s.bias.amax(), 0.0);
    assert!((s.cov.clone() - DMatrix::identity(n, n) * 1e-6).amax() < 1e-18);
    // Constant residual.
    let y = make(10, &|_| [1.5, -0.5]);
    let design = LagDesign::new(&y, 1).unwrap();
    let mut s = zero_state();
    update_bias_cov(&mut s, &design.stats(&vec![1.0; 9])).unwrap();
    assert!((s.bias[0] - 1.5).abs() < 1e-14 && (s.bias[1] + 0.5).abs() < 1e-14);
    assert!((s.cov.clone() - DMatrix::identity(n, n) * 1e-6).amax() < 1e-12);
}

#[test]
fn bias_cov_matches_weighted_moments() {
    let p = random_model(3, 2, 2, 2, Mode::Tucker, 40);
    let y = white_noise(40, 3, 41);
    let post = posterior_for(&p, &y);
    let mut q = p.clone();
    m_step_bias_cov(&mut q, &y, &post).unwrap();
    for h in 0..2 {
        let a = materialize(&p.states[h].factors).unwrap();
        let mut sw = 0.0;
        let mut sr = DVector::zeros(3);
        let resid: Vec<DVector<f64>> = (2..40).map(|t| y.row_vector(t) - contract_23(&a, &y.lag_window(t, 2)).unwrap()).collect();
        for (r, res) in resid.iter().enumerate() {
            sw += post.omega[(r, h)];
            sr += res * post.omega[(r, h)];
        }
        let b = sr / sw;
        let mut cov = DMatrix::zeros(3, 3);
        for (r, res) in resid.iter().enumerate() {
            let c = res - &b;
            cov += &c * c.transpose() * post.omega[(r, h)];
        }
        cov = cov / sw + DMatrix::identity(3, 3) * 1e-6;
        assert!((&q.states[h].bias - &b).amax() < 1e-10);
        assert!((&q.states[h].cov - &cov).amax() < 1e-10);
    }
}

/// Direct per-frame evaluation of the expected negative log-likelihood.
fn direct_expected_nll(s: &StateParams, y: &TimeSeries, l: usize, w: &[f64]) -> f64 {
    let a = materialize(&s.factors).unwrap();
    let inv = s.cov.clone().try_inverse().unwrap();
    let logdet = s.cov.determinant().ln();
    let n = y.dim() as f64;
    (l..y.len())
        .map(|t| {
            let r = y.row_vector(t) - contract_23(&a, &y.lag_window(t, l)).unwrap() - &s.bias;
            w[t - l] * 0.5 * ((r.transpose() * &inv * &r)[0] + logdet + n * LN_2PI)
        })
        .sum()
}

#[test]
fn no_coordinate_update_increases_expected_nll() {
    for seed in 0..4u64 {
        for mode in [Mode::Tucker, Mode::Cp] {
            let p = random_model(3, 3, 2, 2, mode, 300 + seed);
            let y = simulate(&p, 60, seed).unwrap().0;
            let post = posterior_for(&p, &y);
            let design = LagDesign::new(&y, 3).unwrap();
            let stats = state_stats(&design, &post.omega);
            for h in 0..2 {
                let w: Vec<f64> = post.omega.column(h).iter().copied().collect();
                let mut s = p.states[h].clone();
                let mut prev = direct_expected_nll(&s, &y, 3, &w);
                for step in 0..5 {
                    match step {
                        0 => drop(update_output(&mut s, &stats[h]).unwrap()),
                        1 => drop(update_core(&mut s, &stats[h], mode).unwrap()),
                        2 => drop(update_input(&mut s, &stats[h]).unwrap()),
                        3 => drop(update_lag(&mut s, &stats[h]).unwrap()),
                        _ => update_bias_cov(&mut s, &stats[h]).unwrap(),
                    }
                    let now = direct_expected_nll(&s, &y, 3, &w);
                    assert!(now <= prev + 1e-9 * prev.abs(), "step {step}: {prev} -> {now}");
                    prev = now;
                }
            }
        }
    }
}

#[test]
fn one_sweep_at_full_rank_reaches_var_least_squares() {
    // D = N = L with identity factors: the core alone spans every AR tensor.
    let n = 3;
    let truth = random_model(n, n, n, 1, Mode::Tucker, 50);
    let mut truth = truth;
    for s in &mut truth.states {
        s.factors.u *= 0.3;
    }
    let y = simulate(&truth, 400, 51).unwrap().0;
    let design = LagDesign::new(&y, n).unwrap();
    let mut rng = seeded(52);
    let init = StateParams {
        factors: TuckerFactors::new(
            DMatrix::identity(n, n),
            DMatrix::identity(n, n),
            DMatrix::identity(n, n),
            Tensor3::from_vec([n, n, n], standard_normal_matrix(&mut rng, 1, n * n * n).as_slice().to_vec()).unwrap(),
        )
        .unwrap(),
        bias: DVector::zeros(n),
        cov: DMatrix::identity(n, n),
    };
    let init = SaltParams::new(Mode::Tucker, n, n, vec![init], TransitionModel::uniform(1)).unwrap();
    let mut cfg = FitConfig::new(1, n, n, Mode::Tucker);
    cfg.max_iters = 2;
    cfg.rel_tol = 0.0;
    let (fitted, trace) = fit_em_from(&design, init, &cfg).unwrap();

    // Oracle: no-intercept least squares, then residual mean and covariance.
    let x = &design.x;
    let ys = &design.y;
    let psi = (ys.transpose() * x) * (x.transpose() * x).try_inverse().unwrap();
    let resid = ys - x * psi.transpose();
    let frames = design.frames() as f64;
    let b = DVector::from_fn(n, |q, _| resid.column(q).sum() / frames);
    let mut cov = DMatrix::identity(n, n) * 1e-6;
    for r in 0..design.frames() {
        let c = resid.row(r).transpose() - &b;
        cov += &c * c.transpose() / frames;
    }
    let inv = cov.clone().try_inverse().unwrap();
    let oracle_ll: f64 = (0..design.frames())
        .map(|r| {
            let c = resid.row(r).transpose() - &b;
            -0.5 * ((c.transpose() * &inv * &c)[0] + cov.determinant().ln() + n as f64 * LN_2PI)
        })
        .sum();
    assert!((trace.final_loglik() - oracle_ll).abs() < 1e-6 * oracle_ll.abs());
    let a = materialize(&fitted.states[0].factors).unwrap();
    let a1 = mode_n_matricize(&a, 1).unwrap();
    assert!(rel_diff(&a1, &psi) < 1e-6);
}

#[test]
fn mle_dominates_generating_model() {
    for mode in [Mode::Tucker, Mode::Cp] {
        let mut truth = random_model(3, 2, 2, 1, mode, 60);
        for s in &mut truth.states {
            s.factors.u *= 0.2;
        }
        let y = simulate(&truth, 300, 61).unwrap().0;
        let truth_ll = forward_backward(&emission_log_likelihoods(&truth, &y).unwrap(), &truth.tm)
            .unwrap()
            .log_marginal;
        let mut cfg = FitConfig::new(1, 2, 2, mode);
        cfg.max_iters = 300;
        cfg.rel_tol = 1e-10;
        let (_, trace) = fit_em(&y, &cfg).unwrap();
        assert!(trace.final_loglik() >= truth_ll - 1e-6 * truth_ll.abs());
    }
}

#[test]
fn random_inits_give_monotone_traces() {
    let truth = {
        let mut m = random_model(3, 2, 2, 2, Mode::Tucker, 70);
        for s in &mut m.states {
            s.factors.u *= 0.3;
        }
        m
    };
    let y = simulate(&truth, 200, 71).unwrap().0;
    for seed in 0..20u64 {
        for mode in [Mode::Tucker, Mode::Cp] {
            let mut cfg = FitConfig::new(2, 2, 2, mode);
            cfg.init = InitMethod::Random;
            cfg.seed = seed;
            cfg.max_iters = 25;
            cfg.rel_tol = 0.0;
            let (_, trace) = fit_em(&y, &cfg).unwrap();
            assert!(trace.is_monotone(1e-6), "seed {seed} {mode}: {:?}", trace.loglik);
        }
    }
}

#[test]
fn latent_trajectory_examples() {
    let p = random_model(3, 2, 2, 2, Mode::Tucker, 80);
    let zeros = TimeSeries::new(3, vec![0.0; 30]).unwrap();
    let path = vec![0; 8];
    assert_eq!(latent_trajectory(&p, &zeros, &path).unwrap().amax(), 0.0);

    let y = white_noise(25, 3, 81);
    let path: Vec<usize> = (0..23).map(|t| t % 2).collect();
    let x = latent_trajectory(&p, &y, &path).unwrap();
    let design = LagDesign::new(&y, 2).unwrap();
    for (r, &h) in path.iter().enumerate() {
        let s = &p.states[h];
        let recon = &s.factors.u * x.row(r).transpose() + &s.bias;
        let mean = p.state_means(&design, h).row(r).transpose();
        assert!((recon - mean).amax() < 1e-10);
    }

    // D = 1: x_t = g vᵀ X_t w.
    let q = random_model(2, 3, 1, 1, Mode::Cp, 82);
    let y = white_noise(10, 2, 83);
    let x = latent_trajectory(&q, &y, &[0; 7]).unwrap();
    let f = &q.states[0].factors;
    for t in 3..10 {
        let v = (f.v.transpose() * y.lag_window(t, 3) * &f.w)[(0, 0)] * f.core.get(0, 0, 0);
        assert!((x[(t - 3, 0)] - v).abs() < 1e-12);
    }
}

#[test]
fn ar_filter_examples() {
    let s = StateParams {
        factors: TuckerFactors::new(
            DMatrix::from_element(1, 1, 2.0),
            DMatrix::from_element(1, 1, 3.0),
            DMatrix::from_column_slice(2, 1, &[0.5, 0.25]),
            Tensor3::superdiagonal(&[1.0]),
        )
        .unwrap(),
        bias: DVector::zeros(1),
        cov: DMatrix::identity(1, 1),
    };
    let p = SaltParams::new(Mode::Cp, 2, 1, vec![s], TransitionModel::uniform(1)).unwrap();
    assert_eq!(ar_filter(&p, 0, (0, 0)).unwrap(), vec![3.0, 1.5]);

    let p = random_model(4, 3, 2, 2, Mode::Tucker, 90);
    let a = materialize(&p.states[1].factors).unwrap();
    let filt = ar_filter(&p, 1, (2, 3)).unwrap();
    for l in 0..3 {
        assert!((filt[l] - a.get(2, 3, l)).abs() < 1e-12);
    }
    assert!(ar_filter(&p, 2, (0, 0)).is_err());

    let mut z = p.clone();
    z.states[0].factors.core = Tensor3::zeros([2, 2, 2]);
    assert!(ar_filter(&z, 0, (1, 1)).unwrap().iter().all(|&v| v == 0.0));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn single_sweep_never_lowers_likelihood(seed in 0u64..1000, cp in any::<bool>()) {
        let mode = if cp { Mode::Cp } else { Mode::Tucker };
        let p = random_model(3, 2, 2, 2, mode, seed);
        let y = white_noise(40, 3, seed + 1);
        let design = LagDesign::new(&y, 2).unwrap();
        let mut cfg = FitConfig::new(2, 2, 2, mode);
        cfg.max_iters = 4;
        cfg.rel_tol = 0.0;
        let (_, trace) = fit_em_from(&design, p, &cfg).unwrap();
        prop_assert!(trace.is_monotone(1e-6));
    }
}
