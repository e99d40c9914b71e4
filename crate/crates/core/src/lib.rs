//! Switching autoregressive low-rank tensor models.

pub mod baselines;
pub mod datagen;
pub mod em;
pub mod error;
pub mod hmm;
pub mod init;
pub mod lds;
pub mod linalg;
pub mod metrics;
pub mod rng;
pub mod salt;
pub mod series;
pub mod stats;
pub mod tensor;

pub use baselines::{fit_arhmm, param_count, ArhmmParams, ModelKind};
pub use em::{FitConfig, FitTrace, InitMethod, SwitchingAr};
pub use metrics::EvalReport;
pub use error::{Result, SaltError};
pub use lds::{lds_to_salt, solve_dare, LdsParams, SteadyState};
pub use hmm::{forward_backward, update_transitions, viterbi, DirichletPrior, HmmPosterior, TransitionModel};
pub use salt::{fit_em, SaltParams, StateParams};
pub use series::TimeSeries;
pub use stats::LagDesign;
pub use tensor::{Mode, Tensor3, TuckerFactors};
