use std::path::{Path, PathBuf};

use salt_core::datagen::{
    lorenz_series, nascar, nascar_script, random_rotational_lds_with_noise, simulate_slds, NascarConfig, Schedule,
    SldsGroundTruth,
};
use salt_core::em::{gaussian_log_likelihoods, mixture_means, posterior};
use salt_core::lds::{kalman_filter, simulate_lds_full, truncated_kalman_coeffs};
use salt_core::metrics::{best_tensor_mse, explained_variance, segmentation_accuracy};
use salt_core::salt::fit_em_design;
use salt_core::stats::LagDesign;
use salt_core::tensor::{materialize, Mode, Tensor3};
use salt_core::baselines::fit_arhmm_design;
use salt_core::{
    lds_to_salt, solve_dare, viterbi, DirichletPrior, EvalReport, FitConfig, InitMethod, LdsParams, ModelKind,
    SwitchingAr, TimeSeries, TransitionModel,
};
use serde::Serialize;

use crate::error::{CliError, CliResult};
use crate::io::{atomic_write, fmt_f64, read_series, read_states, write_series, write_states, write_table, write_trace};
use crate::model_file::{load_model, save_model, Model};

pub struct SimLdsOpts {
    pub t_len: usize,
    pub seed: u64,
    pub out: PathBuf,
    pub lds: Option<PathBuf>,
    pub n_real: usize,
    pub pairs: usize,
    pub obs: usize,
    pub decay: f64,
    pub q_scale: f64,
    pub r_scale: f64,
    pub param_seed: Option<u64>,
    pub out_model: Option<PathBuf>,
    pub out_latent: Option<PathBuf>,
}

pub fn simulate_lds(o: &SimLdsOpts) -> CliResult<()> {
    let p = match &o.lds {
        Some(path) => match load_model(path)? {
            Model::Lds(p) => p,
            _ => return Err(CliError::data(format!("{}: expected an LDS model", path.display()))),
        },
        None => random_rotational_lds_with_noise(
            o.n_real,
            o.pairs,
            o.obs,
            o.decay,
            o.q_scale,
            o.r_scale,
            o.param_seed.unwrap_or(o.seed),
        )?,
    };
    let s = simulate_lds_full(&p, o.t_len, o.seed)?;
    write_series(&o.out, &s.y)?;
    if let Some(path) = &o.out_latent {
        write_series(path, &s.x)?;
    }
    if let Some(path) = &o.out_model {
        save_model(path, &Model::Lds(p))?;
    }
    Ok(())
}

pub struct SimSldsOpts {
    pub t_len: usize,
    pub seed: u64,
    pub out: PathBuf,
    pub states: usize,
    pub n_real: usize,
    pub pairs: usize,
    pub obs: usize,
    pub decay: f64,
    pub q_scale: f64,
    pub r_scale: f64,
    pub sticky: f64,
    pub param_seed: Option<u64>,
    pub out_states: Option<PathBuf>,
    pub out_latent: Option<PathBuf>,
}

/// Regimes draw their own dynamics and share the emission of regime 0.
pub fn simulate_slds_random(o: &SimSldsOpts) -> CliResult<()> {
    if o.states == 0 {
        return Err(CliError::usage("--states must be positive"));
    }
    if !(0.0..=1.0).contains(&o.sticky) {
        return Err(CliError::usage("--sticky must lie in [0, 1]"));
    }
    let base = o.param_seed.unwrap_or(o.seed);
    let mut regimes: Vec<LdsParams> = (0..o.states)
        .map(|h| {
            random_rotational_lds_with_noise(o.n_real, o.pairs, o.obs, o.decay, o.q_scale, o.r_scale, base.wrapping_add(h as u64))
        })
        .collect::<Result<_, _>>()?;
    let (c, d, r) = (regimes[0].c.clone(), regimes[0].d.clone(), regimes[0].r.clone());
    for reg in regimes.iter_mut().skip(1) {
        reg.c = c.clone();
        reg.d = d.clone();
        reg.r = r.clone();
    }
    let tm = if o.states == 1 { TransitionModel::uniform(1) } else { TransitionModel::sticky(o.states, o.sticky) };
    let gt = SldsGroundTruth { regimes, tm, x0: None };
    let s = simulate_slds(&gt, o.t_len, &Schedule::Markov, o.seed)?;
    write_slds_outputs(&o.out, o.out_states.as_deref(), o.out_latent.as_deref(), &s.y, &s.x, &s.states)
}

fn write_slds_outputs(
    out: &Path,
    states_path: Option<&Path>,
    latent_path: Option<&Path>,
    y: &TimeSeries,
    x: &TimeSeries,
    states: &[usize],
) -> CliResult<()> {
    write_series(out, y)?;
    if let Some(p) = states_path {
        write_states(p, states)?;
    }
    if let Some(p) = latent_path {
        write_series(p, x)?;
    }
    Ok(())
}

pub struct SimNascarOpts {
    pub t_len: usize,
    pub seed: u64,
    pub out: PathBuf,
    pub cfg: NascarConfig,
    pub out_states: Option<PathBuf>,
    pub out_latent: Option<PathBuf>,
}

pub fn simulate_nascar(o: &SimNascarOpts) -> CliResult<()> {
    let gt = nascar(&o.cfg, o.seed)?;
    let script = nascar_script(&o.cfg, o.t_len);
    let s = simulate_slds(&gt, o.t_len, &Schedule::Script(script), o.seed)?;
    write_slds_outputs(&o.out, o.out_states.as_deref(), o.out_latent.as_deref(), &s.y, &s.x, &s.states)
}

pub fn simulate_lorenz(t_len: usize, seed: u64, out: &Path, dt: f64, obs: usize, noise: f64) -> CliResult<()> {
    let y = lorenz_series(t_len, dt, obs, noise, seed)?;
    write_series(out, &y)
}

pub struct FitOpts {
    pub data: PathBuf,
    pub kind: ModelKind,
    pub states: usize,
    pub rank: Option<usize>,
    pub lags: usize,
    pub iters: usize,
    pub tol: f64,
    pub seed: u64,
    pub init: InitMethod,
    pub sticky_diag: f64,
    pub sticky_offdiag: f64,
    pub out_model: PathBuf,
    pub out_trace: Option<PathBuf>,
}

#[derive(Serialize)]
struct FitSummary {
    model_kind: String,
    iterations: usize,
    converged: bool,
    final_loglik: f64,
    per_frame_loglik: f64,
    ridge_events: usize,
    frozen_events: usize,
}

fn fit_config(o: &FitOpts, mode: Mode, rank: usize) -> CliResult<FitConfig> {
    let mut cfg = FitConfig::new(o.states, rank, o.lags, mode);
    cfg.max_iters = o.iters;
    cfg.rel_tol = o.tol;
    cfg.seed = o.seed;
    cfg.init = o.init;
    cfg.prior = DirichletPrior::sticky(o.sticky_diag, o.sticky_offdiag);
    cfg.validate().map_err(|e| CliError::usage(e.to_string()))?;
    Ok(cfg)
}

pub fn fit(o: &FitOpts) -> CliResult<String> {
    let y = read_series(&o.data)?;
    let design = LagDesign::new(&y, o.lags)?;
    let (model, trace) = match o.kind {
        ModelKind::CpSalt | ModelKind::TuckerSalt => {
            let mode = if o.kind == ModelKind::CpSalt { Mode::Cp } else { Mode::Tucker };
            let rank = o.rank.ok_or_else(|| CliError::usage("--rank is required for SALT models"))?;
            let (p, t) = fit_em_design(&design, &fit_config(o, mode, rank)?)?;
            (Model::Salt(p), t)
        }
        ModelKind::Arhmm => {
            let (p, t) = fit_arhmm_design(&design, &fit_config(o, Mode::Tucker, 1)?)?;
            (Model::Arhmm(p), t)
        }
        ModelKind::Slds => return Err(CliError::usage("fitting SLDS models is not supported")),
    };
    save_model(&o.out_model, &model)?;
    if let Some(p) = &o.out_trace {
        write_trace(p, &trace)?;
    }
    let summary = FitSummary {
        model_kind: o.kind.to_string(),
        iterations: trace.loglik.len(),
        converged: trace.converged,
        final_loglik: trace.final_loglik(),
        per_frame_loglik: trace.per_frame_loglik(),
        ridge_events: trace.ridge_events,
        frozen_events: trace.frozen_events,
    };
    Ok(serde_json::to_string(&summary).expect("summary serializes"))
}

fn switching(m: &Model) -> Option<(&dyn SwitchingAr, usize)> {
    match m {
        Model::Salt(p) => Some((p, p.lags)),
        Model::Arhmm(p) => Some((p, p.lags)),
        Model::Lds(_) => None,
    }
}

/// Per-state AR tensors; an LDS is represented by its truncated Kalman
/// coefficients at `lags`.
fn tensors(m: &Model, lags: usize) -> CliResult<Vec<Tensor3>> {
    match m {
        Model::Salt(p) => Ok(p.states.iter().map(|s| materialize(&s.factors)).collect::<Result<_, _>>()?),
        Model::Arhmm(p) => Ok(p.states.iter().map(|s| s.tensor.clone()).collect()),
        Model::Lds(p) => {
            let ss = solve_dare(p)?;
            Ok(vec![truncated_kalman_coeffs(&ss, p, lags)?.0])
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Weights {
    Smoothed,
    Predictive,
}

pub struct EvalOpts {
    pub model: PathBuf,
    pub data: PathBuf,
    pub truth_model: Option<PathBuf>,
    pub truth_states: Option<PathBuf>,
    pub weights: Weights,
    pub skip: usize,
    pub out: Option<PathBuf>,
}

pub fn eval(o: &EvalOpts) -> CliResult<String> {
    let model = load_model(&o.model)?;
    let y = read_series(&o.data)?;
    let (mut report, lags, path) = match switching(&model) {
        Some((m, lags)) => {
            let design = LagDesign::new(&y, lags)?;
            let post = posterior(m, &design)?;
            let w = match o.weights {
                Weights::Smoothed => post.omega.clone(),
                Weights::Predictive => post.predictive(m.transitions()),
            };
            let pred = mixture_means(m, &design, &w)?;
            let path = if o.truth_states.is_some() {
                Some(viterbi(&gaussian_log_likelihoods(m, &design)?, m.transitions())?)
            } else {
                None
            };
            let report = EvalReport {
                per_frame_loglik: post.log_marginal / design.frames() as f64,
                explained_variance: explained_variance(&pred, &design.y)?,
                tensor_mse: None,
                seg_accuracy: None,
                confusion: None,
                permutation: None,
            };
            (report, lags, path)
        }
        None => {
            let Model::Lds(p) = &model else { unreachable!() };
            if o.skip >= y.len() {
                return Err(CliError::usage(format!("--skip {} leaves no frames of {}", o.skip, y.len())));
            }
            if o.truth_states.is_some() {
                return Err(CliError::usage("--truth-states needs a switching model"));
            }
            let kf = kalman_filter(p, &y)?;
            let truth = y.to_matrix().rows(o.skip, y.len() - o.skip).into_owned();
            let pred = kf.means.rows(o.skip, y.len() - o.skip).into_owned();
            let report = EvalReport {
                per_frame_loglik: kf.per_frame_loglik(o.skip),
                explained_variance: explained_variance(&pred, &truth)?,
                tensor_mse: None,
                seg_accuracy: None,
                confusion: None,
                permutation: None,
            };
            (report, 0, None)
        }
    };
    if let Some(tp) = &o.truth_model {
        let truth = load_model(tp)?;
        let l = if lags > 0 {
            lags
        } else {
            match &truth {
                Model::Salt(p) => p.lags,
                Model::Arhmm(p) => p.lags,
                Model::Lds(_) => return Err(CliError::usage("cannot compare two LDS models as tensors")),
            }
        };
        let est = tensors(&model, l)?;
        let tru = tensors(&truth, l)?;
        let (mse, _) = best_tensor_mse(&est, &tru)?;
        report.tensor_mse = Some(mse);
    }
    if let (Some(sp), Some(path)) = (&o.truth_states, path) {
        let states = read_states(sp)?;
        if states.len() != y.len() {
            return Err(CliError::data(format!(
                "{}: {} labels for a series of {} steps",
                sp.display(),
                states.len(),
                y.len()
            )));
        }
        let seg = segmentation_accuracy(&path, &states[lags..])?;
        report.seg_accuracy = Some(seg.accuracy);
        report.confusion = Some(seg.confusion);
        report.permutation = Some(seg.permutation);
    }
    let mut json = serde_json::to_string_pretty(&report).map_err(|e| CliError::io(e.to_string()))?;
    json.push('\n');
    if let Some(out) = &o.out {
        atomic_write(out, json.as_bytes())?;
    }
    Ok(json)
}

pub fn lds2salt(lds: &Path, lags: usize, mode: Mode, out: &Path) -> CliResult<()> {
    let p = match load_model(lds)? {
        Model::Lds(p) => p,
        _ => return Err(CliError::data(format!("{}: expected an LDS model", lds.display()))),
    };
    if lags == 0 {
        return Err(CliError::usage("--lags must be positive"));
    }
    save_model(out, &Model::Salt(lds_to_salt(&p, lags, mode)?))
}

/// Parse `p,q;p,q;...`.
pub fn parse_pairs(s: &str) -> CliResult<Vec<(usize, usize)>> {
    s.split(';')
        .filter(|part| !part.trim().is_empty())
        .map(|part| {
            let mut it = part.split(',').map(|v| v.trim().parse::<usize>());
            match (it.next(), it.next(), it.next()) {
                (Some(Ok(p)), Some(Ok(q)), None) => Ok((p, q)),
                _ => Err(CliError::usage(format!("bad pair `{part}`; expected `p,q`"))),
            }
        })
        .collect()
}

pub fn filters(model: &Path, state: usize, pairs: &[(usize, usize)], out: &Path) -> CliResult<()> {
    let m = load_model(model)?;
    let lags = match &m {
        Model::Salt(p) => p.lags,
        Model::Arhmm(p) => p.lags,
        Model::Lds(_) => return Err(CliError::usage("filters needs a SALT or ARHMM model")),
    };
    let ts = tensors(&m, lags)?;
    let t = ts
        .get(state)
        .ok_or_else(|| CliError::usage(format!("state {state} out of range for {} states", ts.len())))?;
    let n = t.dims()[0];
    if pairs.is_empty() {
        return Err(CliError::usage("--pairs is empty"));
    }
    if let Some(&(p, q)) = pairs.iter().find(|&&(p, q)| p >= n || q >= n) {
        return Err(CliError::usage(format!("pair ({p}, {q}) out of range for dimension {n}")));
    }
    let header: Vec<String> = std::iter::once("lag".to_string())
        .chain(pairs.iter().map(|(p, q)| format!("a_{p}_{q}")))
        .collect();
    let rows = (0..lags)
        .map(|l| {
            std::iter::once(l.to_string())
                .chain(pairs.iter().map(|&(p, q)| fmt_f64(t.get(p, q, l))))
                .collect()
        })
        .collect();
    write_table(out, &header, rows)
}

pub struct RankSweepOpts {
    pub lds: PathBuf,
    pub data: PathBuf,
    pub train: Option<usize>,
    pub lags: usize,
    pub tucker_ranks: Vec<usize>,
    pub cp_ranks: Vec<usize>,
    pub iters: usize,
    pub tol: f64,
    pub seed: u64,
    pub init: InitMethod,
    pub out: PathBuf,
}

/// Fit every requested rank and report the tensor error against the
/// truncated Kalman coefficients of the generating LDS.
pub fn rank_sweep(o: &RankSweepOpts) -> CliResult<()> {
    let lds = match load_model(&o.lds)? {
        Model::Lds(p) => p,
        _ => return Err(CliError::data(format!("{}: expected an LDS model", o.lds.display()))),
    };
    let y = read_series(&o.data)?;
    let split = o.train.unwrap_or(y.len());
    if split > y.len() || split <= o.lags {
        return Err(CliError::usage(format!("--train {split} does not fit a series of {} steps", y.len())));
    }
    let train = y.slice(0, split)?;
    let test = if y.len() - split > o.lags { Some(LagDesign::new(&y.slice(split, y.len())?, o.lags)?) } else { None };
    let design = LagDesign::new(&train, o.lags)?;
    let truth = {
        let ss = solve_dare(&lds)?;
        vec![truncated_kalman_coeffs(&ss, &lds, o.lags)?.0]
    };
    let header: Vec<String> = ["mode", "rank", "tensor_mse", "train_loglik", "test_loglik", "iters", "converged"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let mut rows = Vec::new();
    let grid = o.tucker_ranks.iter().map(|&d| (Mode::Tucker, d)).chain(o.cp_ranks.iter().map(|&d| (Mode::Cp, d)));
    for (mode, d) in grid {
        let mut cfg = FitConfig::new(1, d, o.lags, mode);
        cfg.max_iters = o.iters;
        cfg.rel_tol = o.tol;
        cfg.seed = o.seed;
        cfg.init = o.init;
        cfg.validate().map_err(|e| CliError::usage(e.to_string()))?;
        let (p, trace) = fit_em_design(&design, &cfg).map_err(|e| CliError::from(e).context(format!("{mode} rank {d}")))?;
        let est = tensors(&Model::Salt(p.clone()), o.lags)?;
        let (mse, _) = best_tensor_mse(&est, &truth)?;
        let test_ll = match &test {
            Some(t) => fmt_f64(posterior(&p, t)?.log_marginal / t.frames() as f64),
            None => String::new(),
        };
        rows.push(vec![
            mode.to_string(),
            d.to_string(),
            fmt_f64(mse),
            fmt_f64(trace.per_frame_loglik()),
            test_ll,
            trace.loglik.len().to_string(),
            trace.converged.to_string(),
        ]);
    }
    write_table(&o.out, &header, rows)
}

/// Parse `5,6,7` or `5..9` (inclusive).
pub fn parse_ranks(s: &str) -> CliResult<Vec<usize>> {
    let bad = || CliError::usage(format!("bad rank list `{s}`"));
    if let Some((a, b)) = s.split_once("..") {
        let (a, b): (usize, usize) = (a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?);
        if a == 0 || a > b {
            return Err(bad());
        }
        return Ok((a..=b).collect());
    }
    let v: Vec<usize> = s
        .split(',')
        .filter(|p| !p.trim().is_empty())
        .map(|p| p.trim().parse().map_err(|_| bad()))
        .collect::<CliResult<_>>()?;
    if v.iter().any(|&d| d == 0) {
        return Err(bad());
    }
    Ok(v)
}

