use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use navbench::benchmark::build_pool;
use navbench::maze::generate_maze;
use navbench::metrics::bfs_hops;

fn generation(c: &mut Criterion) {
    let mut group = c.benchmark_group("generate_maze");
    for cells in [3usize, 9, 25] {
        group.bench_with_input(BenchmarkId::from_parameter(cells), &cells, |b, &n| {
            let mut seed = 0;
            b.iter(|| {
                seed += 1;
                generate_maze(black_box(seed), n, n).unwrap()
            })
        });
    }
    group.finish();
}

fn pool(c: &mut Criterion) {
    c.bench_function("build_pool_100_10", |b| b.iter(|| build_pool(black_box(7), 100, 10, 3, 3).unwrap()));
}

fn shortest_paths(c: &mut Criterion) {
    let maze = generate_maze(3, 9, 9).unwrap();
    let start = maze.floor_blocks()[0];
    c.bench_function("bfs_hops_9x9", |b| b.iter(|| bfs_hops(&maze, black_box(start))));
}

criterion_group!(benches, generation, pool, shortest_paths);
criterion_main!(benches);
