//! `salt`: simulate, fit and evaluate switching low-rank autoregressions.
//!
//! Errors are written to stderr as one line of JSON,
//! `{"error":{"kind":...,"message":...}}`, and the exit code is 1 for usage
//! errors, 2 for unreadable or malformed data and 3 for numerical failures.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use salt_core::datagen::{NascarConfig, DEFAULT_Q_SCALE, DEFAULT_R_SCALE};
use salt_core::tensor::Mode;
use salt_core::{InitMethod, ModelKind};

use salt_cli::commands::*;
use salt_cli::error::{CliError, CliResult};

#[derive(Parser)]
#[command(name = "salt", version, about = "Switching autoregressive low-rank tensor models")]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a synthetic series.
    #[command(subcommand)]
    Simulate(Simulate),
    /// Fit a model by EM.
    Fit(FitArgs),
    /// Score a model on a series and print an evaluation report.
    Eval(EvalArgs),
    /// Build the SALT model equivalent to an LDS steady-state Kalman predictor.
    #[command(name = "lds2salt")]
    Lds2Salt(Lds2SaltArgs),
    /// Dump per-lag autoregressive filters of one state.
    Filters(FiltersArgs),
    /// Fit a grid of single-state ranks against a known LDS.
    RankSweep(RankSweepArgs),
}

#[derive(Args)]
struct Common {
    /// Number of time steps.
    #[arg(long = "T")]
    t: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output series CSV.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RotationalArgs {
    /// Real eigenvalues of the dynamics.
    #[arg(long, default_value_t = 1)]
    n_real: usize,
    /// Complex-conjugate eigenvalue pairs of the dynamics.
    #[arg(long, default_value_t = 3)]
    pairs: usize,
    /// Observation dimension.
    #[arg(long, default_value_t = 20)]
    obs: usize,
    /// Modulus of every eigenvalue.
    #[arg(long, default_value_t = 0.95)]
    decay: f64,
    #[arg(long, default_value_t = DEFAULT_Q_SCALE)]
    q_scale: f64,
    #[arg(long, default_value_t = DEFAULT_R_SCALE)]
    r_scale: f64,
    /// Seed for the system parameters (defaults to --seed).
    #[arg(long)]
    param_seed: Option<u64>,
}

#[derive(Subcommand)]
enum Simulate {
    /// Random stable LDS with rotational dynamics, or a saved LDS.
    Lds {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        sys: RotationalArgs,
        /// Simulate this LDS model file instead of drawing one.
        #[arg(long)]
        lds: Option<PathBuf>,
        /// Save the generating LDS.
        #[arg(long)]
        out_model: Option<PathBuf>,
        /// Save the latent trajectory.
        #[arg(long)]
        out_latent: Option<PathBuf>,
    },
    /// Switching LDS with Markov regime changes and a shared emission.
    Slds {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        sys: RotationalArgs,
        #[arg(long, default_value_t = 3)]
        states: usize,
        /// Self-transition probability.
        #[arg(long, default_value_t = 0.98)]
        sticky: f64,
        #[arg(long)]
        out_states: Option<PathBuf>,
        #[arg(long)]
        out_latent: Option<PathBuf>,
    },
    /// Four-regime oval track.
    Nascar {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = NascarConfig::default().n_obs)]
        obs: usize,
        #[arg(long, default_value_t = NascarConfig::default().straight_steps)]
        straight_steps: usize,
        #[arg(long, default_value_t = NascarConfig::default().turn_steps)]
        turn_steps: usize,
        #[arg(long, default_value_t = NascarConfig::default().straight_decay)]
        straight_decay: f64,
        #[arg(long, default_value_t = NascarConfig::default().turn_decay)]
        turn_decay: f64,
        #[arg(long, default_value_t = NascarConfig::default().q_scale)]
        q_scale: f64,
        #[arg(long, default_value_t = NascarConfig::default().r_scale)]
        r_scale: f64,
        #[arg(long)]
        out_states: Option<PathBuf>,
        #[arg(long)]
        out_latent: Option<PathBuf>,
    },
    /// Lorenz attractor observed through a random linear map.
    Lorenz {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 0.01)]
        dt: f64,
        #[arg(long, default_value_t = 20)]
        obs: usize,
        /// Standard deviation of the observation noise.
        #[arg(long, default_value_t = 0.1)]
        noise: f64,
    },
}

fn parse_kind(s: &str) -> Result<ModelKind, String> {
    s.parse().map_err(|e: salt_core::SaltError| e.to_string())
}

fn parse_mode(s: &str) -> Result<Mode, String> {
    s.parse().map_err(|e: salt_core::SaltError| e.to_string())
}

fn parse_init(s: &str) -> Result<InitMethod, String> {
    s.parse().map_err(|e: salt_core::SaltError| e.to_string())
}

#[derive(Args)]
struct FitArgs {
    /// Series CSV.
    #[arg(long)]
    data: PathBuf,
    /// cp-salt, tucker-salt or arhmm.
    #[arg(long, value_parser = parse_kind)]
    model_kind: ModelKind,
    #[arg(long, default_value_t = 1)]
    states: usize,
    /// Rank D (SALT models only).
    #[arg(long)]
    rank: Option<usize>,
    #[arg(long)]
    lags: usize,
    #[arg(long, default_value_t = 100)]
    iters: usize,
    /// Relative objective change that stops EM.
    #[arg(long, default_value_t = 1e-7)]
    tol: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// random or kmeans.
    #[arg(long, value_parser = parse_init, default_value = "kmeans")]
    init: InitMethod,
    /// Dirichlet concentration on self-transitions.
    #[arg(long, default_value_t = 1.0)]
    sticky_diag: f64,
    /// Dirichlet concentration on other transitions.
    #[arg(long, default_value_t = 1.0)]
    sticky_offdiag: f64,
    #[arg(long)]
    out_model: PathBuf,
    /// CSV of `iter,loglik,objective`.
    #[arg(long)]
    out_trace: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum WeightsArg {
    Smoothed,
    Predictive,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Reference model for the tensor error (LDS, SALT or ARHMM).
    #[arg(long)]
    truth_model: Option<PathBuf>,
    /// Reference `t,state` labels, one per step of --data.
    #[arg(long)]
    truth_states: Option<PathBuf>,
    /// State weights used to mix the per-state predictions.
    #[arg(long, value_enum, default_value = "smoothed")]
    weights: WeightsArg,
    /// Steps excluded from scoring when --model is an LDS.
    #[arg(long, default_value_t = 0)]
    skip: usize,
    /// Also write the report here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct Lds2SaltArgs {
    #[arg(long)]
    lds: PathBuf,
    #[arg(long)]
    lags: usize,
    /// cp or tucker.
    #[arg(long, value_parser = parse_mode, default_value = "tucker")]
    mode: Mode,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FiltersArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value_t = 0)]
    state: usize,
    /// Output/input index pairs, `p,q;p,q;...`.
    #[arg(long)]
    pairs: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RankSweepArgs {
    /// Generating LDS model file.
    #[arg(long)]
    lds: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Leading steps used for training; the rest are held out.
    #[arg(long)]
    train: Option<usize>,
    #[arg(long, default_value_t = 50)]
    lags: usize,
    /// Comma list or inclusive range `a..b`.
    #[arg(long, default_value = "5..9")]
    tucker_ranks: String,
    #[arg(long, default_value = "8..12")]
    cp_ranks: String,
    #[arg(long, default_value_t = 100)]
    iters: usize,
    #[arg(long, default_value_t = 1e-7)]
    tol: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_parser = parse_init, default_value = "kmeans")]
    init: InitMethod,
    #[arg(long)]
    out: PathBuf,
}

fn run(cmd: Command) -> CliResult<Option<String>> {
    match cmd {
        Command::Simulate(s) => {
            match s {
                Simulate::Lds { common, sys, lds, out_model, out_latent } => simulate_lds(&SimLdsOpts {
                    t_len: common.t,
                    seed: common.seed,
                    out: common.out,
                    lds,
                    n_real: sys.n_real,
                    pairs: sys.pairs,
                    obs: sys.obs,
                    decay: sys.decay,
                    q_scale: sys.q_scale,
                    r_scale: sys.r_scale,
                    param_seed: sys.param_seed,
                    out_model,
                    out_latent,
                })?,
                Simulate::Slds { common, sys, states, sticky, out_states, out_latent } => {
                    simulate_slds_random(&SimSldsOpts {
                        t_len: common.t,
                        seed: common.seed,
                        out: common.out,
                        states,
                        n_real: sys.n_real,
                        pairs: sys.pairs,
                        obs: sys.obs,
                        decay: sys.decay,
                        q_scale: sys.q_scale,
                        r_scale: sys.r_scale,
                        sticky,
                        param_seed: sys.param_seed,
                        out_states,
                        out_latent,
                    })?
                }
                Simulate::Nascar {
                    common,
                    obs,
                    straight_steps,
                    turn_steps,
                    straight_decay,
                    turn_decay,
                    q_scale,
                    r_scale,
                    out_states,
                    out_latent,
                } => simulate_nascar(&SimNascarOpts {
                    t_len: common.t,
                    seed: common.seed,
                    out: common.out,
                    cfg: NascarConfig { n_obs: obs, straight_steps, turn_steps, straight_decay, turn_decay, q_scale, r_scale },
                    out_states,
                    out_latent,
                })?,
                Simulate::Lorenz { common, dt, obs, noise } => {
                    simulate_lorenz(common.t, common.seed, &common.out, dt, obs, noise)?
                }
            }
            Ok(None)
        }
        Command::Fit(a) => fit(&FitOpts {
            data: a.data,
            kind: a.model_kind,
            states: a.states,
            rank: a.rank,
            lags: a.lags,
            iters: a.iters,
            tol: a.tol,
            seed: a.seed,
            init: a.init,
            sticky_diag: a.sticky_diag,
            sticky_offdiag: a.sticky_offdiag,
            out_model: a.out_model,
            out_trace: a.out_trace,
        })
        .map(Some),
        Command::Eval(a) => eval(&EvalOpts {
            model: a.model,
            data: a.data,
            truth_model: a.truth_model,
            truth_states: a.truth_states,
            weights: match a.weights {
                WeightsArg::Smoothed => Weights::Smoothed,
                WeightsArg::Predictive => Weights::Predictive,
            },
            skip: a.skip,
            out: a.out,
        })
        .map(|s| Some(s.trim_end().to_string())),
        Command::Lds2Salt(a) => lds2salt(&a.lds, a.lags, a.mode, &a.out).map(|_| None),
        Command::Filters(a) => filters(&a.model, a.state, &parse_pairs(&a.pairs)?, &a.out).map(|_| None),
        Command::RankSweep(a) => rank_sweep(&RankSweepOpts {
            lds: a.lds,
            data: a.data,
            train: a.train,
            lags: a.lags,
            tucker_ranks: parse_ranks(&a.tucker_ranks)?,
            cp_ranks: parse_ranks(&a.cp_ranks)?,
            iters: a.iters,
            tol: a.tol,
            seed: a.seed,
            init: a.init,
            out: a.out,
        })
        .map(|_| None),
    }
}

fn fail(e: &CliError) -> ExitCode {
    eprintln!("{}", e.to_json());
    ExitCode::from(e.kind.exit_code() as u8)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind as K;
            if matches!(e.kind(), K::DisplayHelp | K::DisplayVersion | K::DisplayHelpOnMissingArgumentOrSubcommand) {
                let _ = e.print();
                return if e.kind() == K::DisplayHelpOnMissingArgumentOrSubcommand {
                    ExitCode::from(1)
                } else {
                    ExitCode::SUCCESS
                };
            }
            return fail(&CliError::usage(e.render().to_string().trim_end().to_string()));
        }
    };
    match run(cli.cmd) {
        Ok(Some(out)) => {
            println!("{out}");
            ExitCode::SUCCESS
        }
        Ok(None) => ExitCode::SUCCESS,
        Err(e) => fail(&e),
    }
}
