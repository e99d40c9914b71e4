use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use salt_bench::{hmm_problem, rotational_lds, rotational_series};
use salt_core::em::state_stats;
use salt_core::salt::{emission_log_likelihoods_design, fit_em_design};
use salt_core::stats::LagDesign;
use salt_core::tensor::Mode;
use salt_core::{forward_backward, lds_to_salt, solve_dare, viterbi, FitConfig};

fn inference(c: &mut Criterion) {
    let mut g = c.benchmark_group("hmm");
    for h in [2, 4, 8] {
        let (ll, tm) = hmm_problem(5000, h, 1);
        g.bench_with_input(BenchmarkId::new("forward_backward", h), &h, |b, _| {
            b.iter(|| forward_backward(&ll, &tm).unwrap())
        });
        g.bench_with_input(BenchmarkId::new("viterbi", h), &h, |b, _| b.iter(|| viterbi(&ll, &tm).unwrap()));
    }
    g.finish();
}

fn statistics(c: &mut Criterion) {
    let (_, y) = rotational_series(5000, 2);
    let mut g = c.benchmark_group("stats");
    g.sample_size(10);
    g.bench_function("lag_design_t5000_l50", |b| b.iter(|| LagDesign::new(&y, 50).unwrap()));
    let design = LagDesign::new(&y, 50).unwrap();
    let omega = nalgebra::DMatrix::from_element(design.frames(), 2, 0.5);
    g.bench_function("weighted_stats_h2", |b| b.iter(|| state_stats(&design, &omega)));
    g.finish();
}

fn em_iterations(c: &mut Criterion) {
    let (_, y) = rotational_series(5000, 3);
    let design = LagDesign::new(&y, 50).unwrap();
    let mut g = c.benchmark_group("em");
    g.sample_size(10);
    for (mode, d) in [(Mode::Tucker, 7), (Mode::Cp, 10)] {
        let mut cfg = FitConfig::new(2, d, 50, mode);
        cfg.max_iters = 3;
        cfg.rel_tol = 0.0;
        let p = fit_em_design(&design, &cfg).unwrap().0;
        g.bench_function(format!("{mode}_d{d}_three_iterations"), |b| {
            b.iter(|| fit_em_design(&design, &cfg).unwrap())
        });
        g.bench_function(format!("{mode}_d{d}_emission_loglik"), |b| {
            b.iter(|| emission_log_likelihoods_design(&p, &design).unwrap())
        });
    }
    g.finish();
}

fn lds_bridge(c: &mut Criterion) {
    let p = rotational_lds(4);
    let mut g = c.benchmark_group("lds");
    g.bench_function("solve_dare", |b| b.iter(|| solve_dare(&p).unwrap()));
    for mode in [Mode::Tucker, Mode::Cp] {
        g.bench_function(format!("lds_to_salt_{mode}_l50"), |b| b.iter(|| lds_to_salt(&p, 50, mode).unwrap()));
    }
    g.finish();
}

criterion_group!(benches, inference, statistics, em_iterations, lds_bridge);
criterion_main!(benches);
