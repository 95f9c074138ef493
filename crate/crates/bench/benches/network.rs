use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use navbench::agent::forward;
use navbench::trainer::accumulate_gradients;
use navbench_bench::fixture_rollout;

fn forward_pass(c: &mut Criterion) {
    let (agent, params, rollout, _) = fixture_rollout(1);
    let obs = &rollout.steps[0].observation;
    c.bench_function("forward_42x42", |b| b.iter(|| forward(&agent, &params, black_box(obs), &rollout.initial_state).unwrap()));
}

fn forward_backward(c: &mut Criterion) {
    let (agent, params, rollout, cfg) = fixture_rollout(20);
    c.bench_function("rollout_gradients_t20", |b| b.iter(|| accumulate_gradients(&agent, &params, black_box(&rollout), &cfg).unwrap()));
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(20);
    targets = forward_pass, forward_backward
}
criterion_main!(benches);
