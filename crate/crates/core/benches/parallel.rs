//! Parallel against sequential execution of the two data-parallel kernels:
//! a sampled envelope (independent integrations) and a trust-region envelope
//! (independent rows sharing an integration cache).

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use trajex::extremes::{compute_envelope, EnvelopeConfig};
use trajex::models::{build_case_a, build_case_b};
use trajex::oracle::{sample_envelope, SamplePlan};
use trajex::par::Execution;

const MODES: [(&str, Execution); 2] = [("parallel", Execution::Parallel), ("sequential", Execution::Sequential)];

fn sampling(c: &mut Criterion) {
    let s = build_case_b().unwrap();
    let i = s.state_index("gen1.omega").unwrap();
    let rows = s.times_of_interest.clone();
    let plan = SamplePlan::grid(32);
    let mut g = c.benchmark_group("grid_envelope_case_b_32");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| black_box(sample_envelope(&s, i, &s.bounds, &plan, &rows, false, exec).unwrap()))
        });
    }
    g.finish();
}

fn trust_region(c: &mut Criterion) {
    let s = build_case_a().unwrap();
    let i = s.state_index("gen1.omega").unwrap();
    let rows = s.times_of_interest.clone();
    let mut g = c.benchmark_group("trust_envelope_case_a");
    g.sample_size(10);
    for (name, exec) in MODES {
        let cfg = EnvelopeConfig { execution: exec, ..EnvelopeConfig::default() };
        g.bench_with_input(BenchmarkId::from_parameter(name), &cfg, |b, cfg| {
            b.iter(|| black_box(compute_envelope(&s, i, &s.bounds, cfg, &rows).unwrap()))
        });
    }
    g.finish();
}

criterion_group!(benches, sampling, trust_region);
criterion_main!(benches);
