//! Fixtures shared by the benchmarks.

use nalgebra::DMatrix;
use salt_core::datagen::random_rotational_lds;
use salt_core::lds::simulate_lds;
use salt_core::rng::{seeded, standard_normal_matrix};
use salt_core::{LdsParams, TimeSeries, TransitionModel};

/// The `D = 7` rotational system (one real mode, three pairs) observed in 20 dimensions.
pub fn rotational_lds(seed: u64) -> LdsParams {
    random_rotational_lds(1, 3, 20, 0.95, seed).expect("valid generator arguments")
}

pub fn rotational_series(t_len: usize, seed: u64) -> (LdsParams, TimeSeries) {
    let p = rotational_lds(seed);
    let y = simulate_lds(&p, t_len, seed).expect("stable system");
    (p, y)
}

/// Random log-likelihood table and sticky transitions for HMM inference.
pub fn hmm_problem(t_len: usize, h: usize, seed: u64) -> (DMatrix<f64>, TransitionModel) {
    let mut rng = seeded(seed);
    let ll = standard_normal_matrix(&mut rng, t_len, h) * 3.0;
    (ll, TransitionModel::sticky(h, 0.95))
}
