use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use navbench::metrics::episode_metrics;
use navbench::raycast::Camera;
use navbench::world::{Action, EnvConfig, Environment};
use navbench_bench::{fixture_map, random_episode};

fn render(c: &mut Criterion) {
    let (maze, ann) = fixture_map(1, 5, 5);
    let mut group = c.benchmark_group("observe");
    for size in [42usize, 84] {
        let mut env = EnvConfig::default();
        env.camera = Camera { width: size, height: size, ..env.camera };
        let world = Environment::reset(maze.clone(), ann.clone(), env, 3).unwrap();
        group.bench_with_input(BenchmarkId::from_parameter(size), &world, |b, w| b.iter(|| w.observe().unwrap()));
    }
    group.finish();
}

fn step(c: &mut Criterion) {
    let (maze, ann) = fixture_map(1, 5, 5);
    c.bench_function("environment_step", |b| {
        let mut world = Environment::reset(maze.clone(), ann.clone(), EnvConfig::default(), 3).unwrap();
        let mut i = 0usize;
        b.iter(|| {
            if world.done() {
                world = Environment::reset(maze.clone(), ann.clone(), EnvConfig::default(), 3).unwrap();
            }
            i += 1;
            world.step(black_box(Action::ALL[i % Action::COUNT])).unwrap()
        })
    });
}

fn metrics(c: &mut Criterion) {
    let (maze, ann) = fixture_map(2, 3, 3);
    let (_, log) = random_episode(&maze, &ann, 1200, 9);
    c.bench_function("episode_metrics_1200", |b| b.iter(|| episode_metrics(black_box(&log), &maze, 0).unwrap()));
}

criterion_group!(benches, render, step, metrics);
criterion_main!(benches);
