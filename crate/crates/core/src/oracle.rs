//! Deliberately simple reference implementations used to cross-check the
//! fast code paths: all-pairs shortest paths, a fine-step ray marcher,
//! central finite differences and a quadratic loop-closure scan.

use crate::maze::{BlockPos, Maze};
use crate::world::Pose;

/// All-pairs hop distances between floor blocks by Floyd-Warshall.
/// Returns the floor blocks (row-major) and a dense distance matrix where
/// `None` marks an unreachable pair.
pub fn floyd_warshall(maze: &Maze) -> (Vec<BlockPos>, Vec<Vec<Option<usize>>>) {
    let floors = maze.floor_blocks();
    let n = floors.len();
    const INF: usize = usize::MAX / 4;
    let mut d = vec![vec![INF; n]; n];
    for i in 0..n {
        d[i][i] = 0;
        for j in 0..n {
            if floors[i].manhattan(floors[j]) == 1 {
                d[i][j] = 1;
            }
        }
    }
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                let via = d[i][k] + d[k][j];
                if via < d[i][j] {
                    d[i][j] = via;
                }
            }
        }
    }
    let d = d.into_iter().map(|row| row.into_iter().map(|v| (v < INF).then_some(v)).collect()).collect();
    (floors, d)
}

/// Perpendicular wall distance along `dir` found by marching in `step`-unit
/// increments, then bisecting the final step down to `1e-9` units.
/// `dir` must have a component of exactly 1 along the view axis, as produced
/// by [`crate::raycast::ray_direction`].
pub fn march_ray(maze: &Maze, pose: &Pose, dir: (f64, f64), block_size: f64, step: f64) -> f64 {
    let len = dir.0.hypot(dir.1);
    let (ux, uy) = (dir.0 / len, dir.1 / len);
    let inside = |s: f64| {
        let x = pose.x + s * ux;
        let y = pose.y + s * uy;
        maze.is_wall_at((x / block_size).floor() as i64, (y / block_size).floor() as i64)
    };
    let mut prev = 0.0;
    let mut s = step;
    while !inside(s) {
        prev = s;
        s += step;
    }
    let (mut lo, mut hi) = (prev, s);
    while hi - lo > 1e-9 {
        let mid = 0.5 * (lo + hi);
        if inside(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi / len
}

/// Central finite-difference gradient of `f` at `x`.
pub fn numeric_gradient(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + h;
            let up = f(&probe);
            probe[i] = x[i] - h;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `|a - n| / max(|a| + |n|, 1e-12)` over whole vectors.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = analytic.iter().zip(numeric).map(|(a, n)| a - n).collect();
    norm(&diff) / (norm(analytic) + norm(numeric)).max(1e-12)
}

/// Loop-closure labels by checking every earlier position.
pub fn loop_closure_scan(positions: &[(f64, f64)], t_min: usize, radius: f64) -> Vec<bool> {
    let t_min = t_min.max(1);
    (0..positions.len())
        .map(|t| {
            let p = positions[t];
            t >= t_min && (0..=t - t_min).any(|s| (positions[s].0 - p.0).hypot(positions[s].1 - p.1) < radius)
        })
        .collect()
}

/// Union-find count of spanning-tree edges among the carved cells of a
/// generated maze: each corridor block joins two cells, and a perfect maze
/// joins all `cells` with exactly `cells - 1` unions and no redundant edge.
pub fn spanning_tree_check(maze: &Maze) -> bool {
    let (cols, rows) = (maze.cell_cols(), maze.cell_rows());
    let cells = cols * rows;
    let mut parent: Vec<usize> = (0..cells).collect();
    fn find(p: &mut [usize], mut i: usize) -> usize {
        while p[i] != i {
            p[i] = p[p[i]];
            i = p[i];
        }
        i
    }
    let mut unions = 0;
    for r in 0..rows {
        for c in 0..cols {
            let here = r * cols + c;
            if !maze.is_floor(BlockPos::new(2 * c + 1, 2 * r + 1)) {
                return false;
            }
            let links = [(c + 1 < cols, BlockPos::new(2 * c + 2, 2 * r + 1), here + 1), (r + 1 < rows, BlockPos::new(2 * c + 1, 2 * r + 2), here + cols)];
            for (ok, corridor, other) in links {
                if ok && maze.is_floor(corridor) {
                    let (a, b) = (find(&mut parent, here), find(&mut parent, other));
                    if a == b {
                        return false;
                    }
                    parent[a] = b;
                    unions += 1;
                }
            }
        }
    }
    unions + 1 == cells && maze.floor_count() == 2 * cells - 1
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::maze::{build_square_map, generate_maze};

    #[test]
    fn floyd_on_ring() {
        let m = build_square_map();
        let (floors, d) = floyd_warshall(&m);
        let max = d.iter().flatten().map(|v| v.unwrap()).max().unwrap();
        assert_eq!(max, floors.len() / 2);
    }

    #[test]
    fn union_find_accepts_generated_rejects_ring() {
        for seed in 0..10 {
            assert!(spanning_tree_check(&generate_maze(seed, 5, 3).unwrap()));
        }
        assert!(!spanning_tree_check(&build_square_map()));
    }

    #[test]
    fn numeric_gradient_of_quadratic() {
        let g = numeric_gradient(|x| x[0] * x[0] + 3.0 * x[1], &[2.0, -1.0], 1e-5);
        assert!(relative_error(&g, &[4.0, 3.0]) < 1e-9);
    }
}
