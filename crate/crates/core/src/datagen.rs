//! Ground-truth generators: random rotational LDSs, switching LDSs with
//! Markov or scripted schedules, an oval-track preset and a Lorenz series.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{shape_err, Result, SaltError};
use crate::hmm::TransitionModel;
use crate::linalg::{symmetrize, GaussianFactor};
use crate::lds::LdsParams;
use crate::rng::{categorical, gaussian_with_factor, seeded_stream, standard_normal, standard_normal_matrix};
use crate::series::TimeSeries;

/// Noise levels used by [`random_rotational_lds`].
pub const DEFAULT_Q_SCALE: f64 = 0.1;
pub const DEFAULT_R_SCALE: f64 = 1.0;

fn rotation(theta: f64) -> DMatrix<f64> {
    DMatrix::from_row_slice(2, 2, &[theta.cos(), -theta.sin(), theta.sin(), theta.cos()])
}

/// Block-diagonal dynamics with `n_real` scalar modes and `m_pairs` rotations,
/// all with modulus `decay`; random emission matrix with unit-norm columns.
pub fn random_rotational_lds(n_real: usize, m_pairs: usize, n_obs: usize, decay: f64, seed: u64) -> Result<LdsParams> {
    random_rotational_lds_with_noise(n_real, m_pairs, n_obs, decay, DEFAULT_Q_SCALE, DEFAULT_R_SCALE, seed)
}

pub fn random_rotational_lds_with_noise(
    n_real: usize,
    m_pairs: usize,
    n_obs: usize,
    decay: f64,
    q_scale: f64,
    r_scale: f64,
    seed: u64,
) -> Result<LdsParams> {
    if !(decay > 0.0 && decay < 1.0) {
        return Err(SaltError::InvalidInput(format!("decay must lie in (0, 1), got {decay}")));
    }
    let dl = n_real + 2 * m_pairs;
    if dl == 0 || n_obs == 0 {
        return Err(SaltError::InvalidInput("need a positive latent and observed dimension".into()));
    }
    let mut rng = seeded_stream(seed, 2);
    let mut a = DMatrix::zeros(dl, dl);
    for k in 0..n_real {
        a[(k, k)] = decay;
    }
    // Distinct angles away from 0 and π keep the pairs well separated.
    let base = PI / (m_pairs as f64 + 1.0);
    for i in 0..m_pairs {
        let theta = base * (i as f64 + 0.5 + 0.5 * rng.random::<f64>());
        let o = n_real + 2 * i;
        a.view_mut((o, o), (2, 2)).copy_from(&(rotation(theta) * decay));
    }
    let mut c = standard_normal_matrix(&mut rng, n_obs, dl);
    for mut col in c.column_iter_mut() {
        let n = col.norm();
        col /= n;
    }
    LdsParams::new(
        a,
        DVector::zeros(dl),
        DMatrix::identity(dl, dl) * q_scale,
        c,
        DVector::zeros(n_obs),
        DMatrix::identity(n_obs, n_obs) * r_scale,
    )
}

/// A switching LDS: state `h` follows `regimes[h]`.
#[derive(Debug, Clone)]
pub struct SldsGroundTruth {
    pub regimes: Vec<LdsParams>,
    pub tm: TransitionModel,
    /// Fixed first latent state; `None` draws it from the stationary
    /// distribution of the first active regime.
    pub x0: Option<DVector<f64>>,
}

impl SldsGroundTruth {
    pub fn validate(&self) -> Result<()> {
        let first = self.regimes.first().ok_or_else(|| SaltError::InvalidInput("no regimes".into()))?;
        let (dl, n) = (first.latent_dim(), first.obs_dim());
        for r in &self.regimes {
            r.validate()?;
            if r.latent_dim() != dl || r.obs_dim() != n {
                return shape_err("regimes differ in latent or observed dimension");
            }
        }
        self.tm.validate()?;
        if self.tm.num_states() != self.regimes.len() {
            return shape_err("transition matrix size differs from the number of regimes");
        }
        if let Some(x0) = &self.x0 {
            if x0.len() != dl {
                return shape_err("initial state has the wrong dimension");
            }
        }
        Ok(())
    }
}

/// How the discrete states are generated.
#[derive(Debug, Clone, PartialEq)]
pub enum Schedule {
    /// Sample from the transition model.
    Markov,
    /// `k` evenly spaced switches cycling through the states.
    EvenSwitches(usize),
    /// Explicit per-step states.
    Script(Vec<usize>),
}

#[derive(Debug, Clone)]
pub struct SldsSample {
    pub y: TimeSeries,
    pub x: TimeSeries,
    pub states: Vec<usize>,
}

fn schedule_states(gt: &SldsGroundTruth, t_len: usize, schedule: &Schedule, seed: u64) -> Result<Vec<usize>> {
    let h = gt.regimes.len();
    match schedule {
        Schedule::Markov => {
            let mut rng = seeded_stream(seed, 1);
            let mut z = Vec::with_capacity(t_len);
            let init: Vec<f64> = gt.tm.init.iter().copied().collect();
            z.push(categorical(&mut rng, &init));
            for t in 1..t_len {
                let row: Vec<f64> = gt.tm.pi.row(z[t - 1]).iter().copied().collect();
                z.push(categorical(&mut rng, &row));
            }
            Ok(z)
        }
        Schedule::EvenSwitches(k) => {
            let segs = k + 1;
            Ok((0..t_len).map(|t| (t * segs / t_len) % h).collect())
        }
        Schedule::Script(s) => {
            if s.len() != t_len {
                return shape_err(format!("script has {} steps, expected {t_len}", s.len()));
            }
            if let Some(&bad) = s.iter().find(|&&z| z >= h) {
                return Err(SaltError::InvalidInput(format!("script state {bad} out of range")));
            }
            Ok(s.clone())
        }
    }
}

/// Draw `t_len` steps. Continuous draws follow the same order as
/// [`crate::lds::simulate_lds_full`], so a one-regime system reproduces it.
pub fn simulate_slds(gt: &SldsGroundTruth, t_len: usize, schedule: &Schedule, seed: u64) -> Result<SldsSample> {
    gt.validate()?;
    if t_len == 0 {
        return Err(SaltError::InvalidInput("need at least one step".into()));
    }
    let states = schedule_states(gt, t_len, schedule, seed)?;
    let mut rng = seeded_stream(seed, 0);
    let lq: Vec<_> = gt
        .regimes
        .iter()
        .map(|r| GaussianFactor::new(&r.q).map(|g| g.lower()))
        .collect::<Result<_>>()?;
    let lr: Vec<_> = gt
        .regimes
        .iter()
        .map(|r| GaussianFactor::new(&r.r).map(|g| g.lower()))
        .collect::<Result<_>>()?;
    let first = &gt.regimes[states[0]];
    let mut x = match &gt.x0 {
        Some(x0) => x0.clone(),
        None => {
            let (m0, c0) = if first.is_stable() {
                first.stationary()?
            } else {
                (first.b.clone(), first.q.clone())
            };
            let l0 = GaussianFactor::new(&symmetrize(&c0))?.lower();
            gaussian_with_factor(&mut rng, &m0, &l0)
        }
    };
    let (dl, n) = (first.latent_dim(), first.obs_dim());
    let mut xs = Vec::with_capacity(t_len * dl);
    let mut ys = Vec::with_capacity(t_len * n);
    for t in 0..t_len {
        let z = states[t];
        let p = &gt.regimes[z];
        if t > 0 {
            let mean = &p.a * &x + &p.b;
            x = gaussian_with_factor(&mut rng, &mean, &lq[z]);
        }
        let y = gaussian_with_factor(&mut rng, &(&p.c * &x + &p.d), &lr[z]);
        xs.extend(x.iter());
        ys.extend(y.iter());
    }
    Ok(SldsSample {
        y: TimeSeries::new(n, ys)?,
        x: TimeSeries::new(dl, xs)?,
        states,
    })
}

/// Geometry of the oval-track preset.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NascarConfig {
    pub n_obs: usize,
    /// Steps per straightaway.
    pub straight_steps: usize,
    /// Steps per half-turn.
    pub turn_steps: usize,
    /// Per-step contraction of the straightaway dynamics.
    pub straight_decay: f64,
    /// Modulus of the turn dynamics.
    pub turn_decay: f64,
    pub q_scale: f64,
    pub r_scale: f64,
}

impl Default for NascarConfig {
    fn default() -> Self {
        Self {
            n_obs: 10,
            straight_steps: 40,
            turn_steps: 30,
            straight_decay: 0.98,
            turn_decay: 0.9999,
            q_scale: 1e-4,
            r_scale: 1e-3,
        }
    }
}

/// Four-regime oval track in a 2-D latent space: bottom straightaway (state 0,
/// moving right), right half-turn (1), top straightaway (2, moving left) and
/// left half-turn (3). Turns rotate about `(±1, 0)` with radius 1.
///
/// Straightaways contract toward a far target on the track line, so every
/// regime is stable while a segment still covers its full length.
pub fn nascar(cfg: &NascarConfig, seed: u64) -> Result<SldsGroundTruth> {
    let mut rng = seeded_stream(seed, 2);
    let c = standard_normal_matrix(&mut rng, cfg.n_obs, 2);
    let d = DVector::from_fn(cfg.n_obs, |_, _| 0.1 * standard_normal(&mut rng));
    let q = DMatrix::identity(2, 2) * cfg.q_scale;
    let r = DMatrix::identity(cfg.n_obs, cfg.n_obs) * cfg.r_scale;
    let regime = |a: DMatrix<f64>, b: DVector<f64>| LdsParams::new(a, b, q.clone(), c.clone(), d.clone(), r.clone());

    let a_s = cfg.straight_decay;
    let reach = 2.0 / (1.0 - a_s.powi(cfg.straight_steps as i32));
    let straight = |start: [f64; 2], dir: f64| {
        let target = DVector::from_vec(vec![start[0] + dir * reach, start[1]]);
        regime(DMatrix::identity(2, 2) * a_s, target * (1.0 - a_s))
    };
    let theta = PI / cfg.turn_steps as f64;
    let turn = |center: [f64; 2]| {
        let a = rotation(theta) * cfg.turn_decay;
        let cvec = DVector::from_vec(center.to_vec());
        let b = (DMatrix::identity(2, 2) - &a) * cvec;
        regime(a, b)
    };
    let regimes = vec![
        straight([-1.0, -1.0], 1.0)?,
        turn([1.0, 0.0])?,
        straight([1.0, 1.0], -1.0)?,
        turn([-1.0, 0.0])?,
    ];
    let mut pi = DMatrix::zeros(4, 4);
    for h in 0..4 {
        pi[(h, h)] = 0.95;
        pi[(h, (h + 1) % 4)] = 0.05;
    }
    Ok(SldsGroundTruth {
        regimes,
        tm: TransitionModel {
            pi,
            init: DVector::from_vec(vec![1.0, 0.0, 0.0, 0.0]),
        },
        x0: Some(DVector::from_vec(vec![-1.0, -1.0])),
    })
}

/// States of consecutive laps, truncated to `t_len` steps.
pub fn nascar_script(cfg: &NascarConfig, t_len: usize) -> Vec<usize> {
    let lap: Vec<usize> = [(0, cfg.straight_steps), (1, cfg.turn_steps), (2, cfg.straight_steps), (3, cfg.turn_steps)]
        .iter()
        .flat_map(|&(s, k)| std::iter::repeat_n(s, k))
        .collect();
    lap.iter().copied().cycle().take(t_len).collect()
}

/// Noise-free latent path following a script from `x0`. Entry `t` is the
/// state after `t` transitions.
pub fn mean_path(gt: &SldsGroundTruth, x0: &DVector<f64>, script: &[usize]) -> Vec<DVector<f64>> {
    let mut out = Vec::with_capacity(script.len() + 1);
    let mut x = x0.clone();
    out.push(x.clone());
    for &z in script {
        let p = &gt.regimes[z];
        x = &p.a * x + &p.b;
        out.push(x.clone());
    }
    out
}

const SIGMA: f64 = 10.0;
const RHO: f64 = 28.0;
const BETA: f64 = 8.0 / 3.0;
const LORENZ_BURN_IN: usize = 2000;

fn lorenz_rate(s: [f64; 3]) -> [f64; 3] {
    [SIGMA * (s[1] - s[0]), s[0] * (RHO - s[2]) - s[1], s[0] * s[1] - BETA * s[2]]
}

/// One classical Runge-Kutta step of the Lorenz system.
pub fn lorenz_rk4_step(s: [f64; 3], dt: f64) -> [f64; 3] {
    let add = |a: [f64; 3], b: [f64; 3], h: f64| [a[0] + h * b[0], a[1] + h * b[1], a[2] + h * b[2]];
    let k1 = lorenz_rate(s);
    let k2 = lorenz_rate(add(s, k1, dt / 2.0));
    let k3 = lorenz_rate(add(s, k2, dt / 2.0));
    let k4 = lorenz_rate(add(s, k3, dt));
    let mut out = s;
    for i in 0..3 {
        out[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    out
}

/// `steps + 1` states starting at `x0`.
pub fn lorenz_trajectory(x0: [f64; 3], dt: f64, steps: usize) -> Vec<[f64; 3]> {
    let mut out = Vec::with_capacity(steps + 1);
    let mut s = x0;
    out.push(s);
    for _ in 0..steps {
        s = lorenz_rk4_step(s, dt);
        out.push(s);
    }
    out
}

/// Z-scored Lorenz states (`T x 3`) after a burn-in from a seed-dependent start.
pub fn lorenz_states(t_len: usize, dt: f64, seed: u64) -> Result<DMatrix<f64>> {
    if !(dt > 0.0) {
        return Err(SaltError::InvalidInput(format!("dt must be positive, got {dt}")));
    }
    if t_len < 2 {
        return Err(SaltError::InvalidInput("need at least two steps".into()));
    }
    let mut rng = seeded_stream(seed, 3);
    let mut s = [1.0 + standard_normal(&mut rng), 1.0 + standard_normal(&mut rng), 20.0 + standard_normal(&mut rng)];
    for _ in 0..LORENZ_BURN_IN {
        s = lorenz_rk4_step(s, dt);
    }
    let mut m = DMatrix::zeros(t_len, 3);
    for t in 0..t_len {
        for i in 0..3 {
            m[(t, i)] = s[i];
        }
        s = lorenz_rk4_step(s, dt);
    }
    for mut col in m.column_iter_mut() {
        let mean = col.mean();
        col.add_scalar_mut(-mean);
        let sd = (col.norm_squared() / t_len as f64).sqrt();
        col /= sd;
    }
    Ok(m)
}

/// Z-scored Lorenz states mapped through `map` (`N x 3`) plus isotropic noise.
pub fn lorenz_series_with_map(t_len: usize, dt: f64, map: &DMatrix<f64>, noise_scale: f64, seed: u64) -> Result<TimeSeries> {
    if map.ncols() != 3 {
        return shape_err("the Lorenz map must have three columns");
    }
    let states = lorenz_states(t_len, dt, seed)?;
    let mut y = states * map.transpose();
    if noise_scale > 0.0 {
        let mut rng = seeded_stream(seed, 0);
        y += standard_normal_matrix(&mut rng, t_len, map.nrows()) * noise_scale;
    }
    TimeSeries::from_matrix(&y)
}

/// Lorenz series observed through a random `N x 3` Gaussian map.
pub fn lorenz_series(t_len: usize, dt: f64, n_obs: usize, noise_scale: f64, seed: u64) -> Result<TimeSeries> {
    let mut rng = seeded_stream(seed, 2);
    let map = standard_normal_matrix(&mut rng, n_obs, 3) / 3f64.sqrt();
    lorenz_series_with_map(t_len, dt, &map, noise_scale, seed)
}
