use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use dexperts_core::protocols::{dewa_l_estimate, dewa_m_estimate, dewa_s_estimate, running_max_updates, SampledSet};
use dexperts_core::{run_trial, BaseProtocol, DayLocalCosts, DayStreams, ExperimentConfig, ProtocolId, Role};

// Cheap deterministic fill; local costs sum to at most 1 per expert.
fn day_costs(n: usize, s: usize) -> DayLocalCosts {
    let values = (0..n * s).map(|i| ((i * 7919) % 1000) as f64 / 1000.0 / s as f64).collect();
    DayLocalCosts::from_rows(0, n, s, values).unwrap()
}

fn one_day(c: &mut Criterion) {
    let mut g = c.benchmark_group("one_day");
    for &(n, s) in &[(100usize, 10usize), (1000, 50)] {
        let costs = day_costs(n, s);
        let streams = DayStreams::new(1, 0, 0);
        let sampled = SampledSet::draw(n, 10, &mut streams.stream(Role::Coordinator, 0));
        let id = format!("n{n}_s{s}");
        g.bench_with_input(BenchmarkId::new("dewa-s", &id), &costs, |b, costs| {
            b.iter(|| dewa_s_estimate(black_box(costs), 10, 1, &streams).unwrap())
        });
        g.bench_with_input(BenchmarkId::new("dewa-m", &id), &costs, |b, costs| {
            b.iter(|| dewa_m_estimate(black_box(costs), &sampled, &streams).unwrap())
        });
        g.bench_with_input(BenchmarkId::new("dewa-l", &id), &costs, |b, costs| {
            b.iter(|| dewa_l_estimate(black_box(costs), 2.0, 10, &sampled, &streams).unwrap())
        });
    }
    g.finish();
}

fn pivot(c: &mut Criterion) {
    let values: Vec<f64> = (0..10_000).map(|i| ((i * 48_271) % 65_537) as f64).collect();
    c.bench_function("running_max_updates_10k", |b| b.iter(|| running_max_updates(black_box(&values))));
}

fn trial(c: &mut Criterion) {
    let mut g = c.benchmark_group("trial_T200");
    g.sample_size(20);
    for base in [BaseProtocol::Ewa, BaseProtocol::DewaS, BaseProtocol::Exp3] {
        let mut cfg = ExperimentConfig::new(ProtocolId::plain(base));
        cfg.horizon = 200;
        cfg.budget = 5;
        g.bench_function(cfg.protocol.to_string(), |b| b.iter(|| run_trial(black_box(&cfg), 0).unwrap()));
    }
    g.finish();
}

criterion_group!(benches, one_day, pivot, trial);
criterion_main!(benches);
