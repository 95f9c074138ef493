//! Property suites that can run outside `cargo test`: gradient checks
//! against central differences and cross-checks of the fast code paths
//! against the reference implementations in [`crate::oracle`].

use std::sync::Arc;
use std::time::Instant;

use rand::Rng;

use crate::agent::{init_params, AgentConfig, ConvSpec, ParameterSet, RecurrentState};
use crate::autodiff::{depth_ce, entropy, loop_ce, lstm_cell, policy_gradient_term, value_mse, AutodiffError, LstmWeights, Tape, Tensor, Var, LOG_FLOOR};
use crate::maze::{generate_maze, Maze};
use crate::metrics::{bfs_hops, distance_inefficiency, extract_goal_hits, latency_ratio, GoalHitTimes, PathMode};
use crate::oracle::{floyd_warshall, loop_closure_scan, march_ray, numeric_gradient, relative_error, spanning_tree_check};
use crate::raycast::{cast_ray, ray_direction, Camera, Image, LoopClosureTracker, Observation};
use crate::rng::{mix_seeds, seeded, SeededRng};
use crate::scripted::{RoutePlan, RoutePolicy};
use crate::trainer::{RolloutRecorder, StepTargets, TrainConfig, TrainError};
use crate::world::{run_episode, Action, EnvConfig, EpisodeMeta, Pose};

/// Largest accepted norm-relative error between analytic and numeric
/// gradients.
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;
/// Seeds per gradient check.
pub const GRADCHECK_SEEDS: u64 = 20;
const FD_STEP: f64 = 1e-6;

/// Worst error of one gradient check over its seeds.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    pub name: &'static str,
    pub seeds: u64,
    pub worst_error: f64,
}

impl GradCheck {
    pub fn passed(&self) -> bool {
        self.worst_error < GRADCHECK_TOLERANCE
    }
}

#[derive(Clone, Copy)]
enum Domain {
    Any,
    /// Magnitudes in [0.1, 1], random sign: keeps kinks out of reach.
    AwayFromZero,
    Positive,
}

type Build = fn(&mut Tape, &[Var]) -> Result<Var, AutodiffError>;

struct Case {
    name: &'static str,
    shapes: Vec<Vec<usize>>,
    domain: Domain,
    build: Build,
}

fn case(name: &'static str, shapes: &[&[usize]], domain: Domain, build: Build) -> Case {
    Case { name, shapes: shapes.iter().map(|s| s.to_vec()).collect(), domain, build }
}

fn primitive_cases() -> Vec<Case> {
    use Domain::*;
    vec![
        case("matmul", &[&[3, 4], &[4, 2]], Any, |t, v| t.matmul(v[0], v[1])),
        case("bias_add", &[&[3, 4], &[4]], Any, |t, v| t.bias_add(v[0], v[1])),
        case("conv2d", &[&[2, 6, 6], &[3, 2, 3, 3], &[3]], Any, |t, v| t.conv2d(v[0], v[1], v[2], 1)),
        case("conv2d_stride2", &[&[2, 7, 7], &[3, 2, 3, 3], &[3]], Any, |t, v| t.conv2d(v[0], v[1], v[2], 2)),
        case("relu", &[&[12]], AwayFromZero, |t, v| t.relu(v[0])),
        case("tanh", &[&[12]], Any, |t, v| t.tanh(v[0])),
        case("sigmoid", &[&[12]], Any, |t, v| t.sigmoid(v[0])),
        case("softmax", &[&[2, 5]], Any, |t, v| t.softmax(v[0])),
        case("log", &[&[8]], Positive, |t, v| t.log(v[0], LOG_FLOOR)),
        case("scale", &[&[6]], Any, |t, v| t.scale(v[0], -1.7)),
        case("add", &[&[3, 4], &[3, 4]], Any, |t, v| t.add(v[0], v[1])),
        case("sub", &[&[3, 4], &[3, 4]], Any, |t, v| t.sub(v[0], v[1])),
        case("mul", &[&[3, 4], &[3, 4]], Any, |t, v| t.mul(v[0], v[1])),
        case("concat", &[&[1, 3], &[1, 2], &[1, 4]], Any, |t, v| t.concat(&[v[0], v[1], v[2]])),
        case("slice", &[&[1, 9]], Any, |t, v| t.slice(v[0], 2, 4)),
        case("sum", &[&[3, 4]], Any, |t, v| t.sum(v[0])),
        case("mean", &[&[3, 4]], Any, |t, v| t.mean(v[0])),
        case("reshape", &[&[2, 6]], Any, |t, v| t.reshape(v[0], &[3, 4])),
        case("policy_gradient_term", &[&[1, 4]], Any, |t, v| {
            let p = t.softmax(v[0])?;
            let lp = t.log(p, LOG_FLOOR)?;
            policy_gradient_term(t, lp, 2, 0.7)
        }),
        case("value_mse", &[&[1, 1]], Any, |t, v| value_mse(t, v[0], 0.3)),
        case("entropy", &[&[1, 4]], Any, |t, v| {
            let p = t.softmax(v[0])?;
            let lp = t.log(p, LOG_FLOOR)?;
            entropy(t, p, lp)
        }),
        case("depth_ce", &[&[1, 8]], Any, |t, v| depth_ce(t, v[0], &[1, 3], 4)),
        case("loop_ce_positive", &[&[1, 1]], Any, |t, v| loop_ce(t, v[0], true)),
        case("loop_ce_negative", &[&[1, 1]], Any, |t, v| loop_ce(t, v[0], false)),
    ]
}

fn lstm_case() -> Case {
    case("lstm_cell", &[&[1, 3], &[1, 4], &[1, 4], &[7, 16], &[16]], Domain::Any, |t, v| {
        let (h, c) = lstm_cell(t, v[0], v[1], v[2], &LstmWeights { w: v[3], b: v[4] })?;
        // Both outputs must carry gradient.
        let hc = t.concat(&[h, c])?;
        Ok(hc)
    })
}

fn sample(rng: &mut SeededRng, domain: Domain) -> f64 {
    match domain {
        Domain::Any => rng.random_range(-1.0..1.0),
        Domain::AwayFromZero => {
            let m = rng.random_range(0.1..1.0);
            if rng.random::<bool>() {
                m
            } else {
                -m
            }
        }
        Domain::Positive => rng.random_range(0.2..2.0),
    }
}

/// Value of `sum(w * build(inputs))` and optionally its gradient with
/// respect to all inputs, flattened in input order.
fn project(case: &Case, flat: &[f64], weights_seed: u64, grad: bool) -> Result<(f64, Option<Vec<f64>>), AutodiffError> {
    let mut tape = Tape::new();
    let mut vars = Vec::with_capacity(case.shapes.len());
    let mut offset = 0;
    for shape in &case.shapes {
        let n: usize = shape.iter().product();
        vars.push(tape.input(Tensor::new(shape.clone(), flat[offset..offset + n].to_vec())?, grad));
        offset += n;
    }
    let out = (case.build)(&mut tape, &vars)?;
    let shape = tape.value(out).shape().to_vec();
    let mut wr = seeded(weights_seed);
    let w: Vec<f64> = (0..tape.value(out).len()).map(|_| wr.random_range(-1.0..1.0)).collect();
    let w = tape.constant(Tensor::new(shape, w)?);
    let prod = tape.mul(out, w)?;
    let loss = tape.sum(prod)?;
    let value = tape.value(loss).item();
    if !grad {
        return Ok((value, None));
    }
    let g = tape.backward(loss)?;
    let flat_grad = vars.iter().flat_map(|&v| g.get_or_zeros(v, tape.value(v).len())).collect();
    Ok((value, Some(flat_grad)))
}

fn check_case(case: &Case, seeds: u64) -> Result<GradCheck, AutodiffError> {
    let mut worst: f64 = 0.0;
    let total: usize = case.shapes.iter().map(|s| s.iter().product::<usize>()).sum();
    for seed in 0..seeds {
        let name_hash = case.name.bytes().fold(0u64, |h, b| h.wrapping_mul(131).wrapping_add(b as u64));
        let mut rng = seeded(mix_seeds(&[seed, name_hash]));
        let x: Vec<f64> = (0..total).map(|_| sample(&mut rng, case.domain)).collect();
        let wseed = mix_seeds(&[seed, 0xBEEF]);
        let analytic = project(case, &x, wseed, true)?.1.unwrap_or_default();
        let numeric = numeric_gradient(|p| project(case, p, wseed, false).map_or(f64::NAN, |r| r.0), &x, FD_STEP);
        let err = if numeric.iter().all(|v| v.is_finite()) { relative_error(&analytic, &numeric) } else { f64::INFINITY };
        worst = worst.max(err);
    }
    Ok(GradCheck { name: case.name, seeds, worst_error: worst })
}

/// Gradient checks for every tape operation and loss term.
pub fn gradcheck_primitives(seeds: u64) -> Result<Vec<GradCheck>, AutodiffError> {
    primitive_cases().iter().map(|c| check_case(c, seeds)).collect()
}

pub fn gradcheck_lstm(seeds: u64) -> Result<GradCheck, AutodiffError> {
    check_case(&lstm_case(), seeds)
}

/// A small network with the full topology, cheap enough to difference
/// every parameter.
pub fn tiny_agent() -> AgentConfig {
    AgentConfig {
        width: 12,
        height: 12,
        conv1: ConvSpec { filters: 3, kernel: 4, stride: 2 },
        conv2: ConvSpec { filters: 4, kernel: 3, stride: 1 },
        lstm1: 5,
        lstm2: 4,
        depth_groups: 2,
        depth_buckets: 3,
        core2_skip: true,
    }
}

/// Gradient check of the complete training loss (policy, value, entropy,
/// both depth heads and loop closure) over a three-step rollout, with
/// respect to every network parameter.
pub fn gradcheck_combined_loss(seeds: u64) -> Result<GradCheck, TrainError> {
    let agent = tiny_agent();
    let cfg = TrainConfig::default();
    let mut worst: f64 = 0.0;
    for seed in 0..seeds {
        worst = worst.max(combined_loss_error(&agent, &cfg, seed)?);
    }
    Ok(GradCheck { name: "combined_loss", seeds, worst_error: worst })
}

/// Norm-relative gradient error of the combined loss for one seed.
pub fn combined_loss_error(agent: &AgentConfig, cfg: &TrainConfig, seed: u64) -> Result<f64, TrainError> {
    // Biases start at exactly zero, which can park a ReLU input on its kink
    // (a receptive field of dead units); jitter to a generic point.
    let init = init_params(seed, agent)?;
    let mut jitter = seeded(mix_seeds(&[seed, 0x717]));
    let params = init.with_flat(&init.flatten().iter().map(|v| v + jitter.random_range(-0.05..0.05)).collect::<Vec<_>>())?;
    let mut rng = seeded(mix_seeds(&[seed, 0xC0B]));
    let mut rand_vec = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.random_range(-0.5..0.5)).collect() };
    let state = RecurrentState { h1: rand_vec(agent.lstm1), c1: rand_vec(agent.lstm1), h2: rand_vec(agent.lstm2), c2: rand_vec(agent.lstm2) };
    let mut rng = seeded(mix_seeds(&[seed, 0xC0C]));
    let steps = 3;
    let observations: Vec<Observation> = (0..steps)
        .map(|_| Observation {
            image: Image { width: agent.width, height: agent.height, data: (0..3 * agent.width * agent.height).map(|_| rng.random()).collect() },
            prev_action: Action::from_index(rng.random_range(0..Action::COUNT)),
            prev_reward: rng.random_range(-1.0..1.0),
        })
        .collect();
    let depth: Vec<Vec<usize>> = (0..steps).map(|_| (0..agent.depth_groups).map(|_| rng.random_range(0..agent.depth_buckets)).collect()).collect();
    let targets: Vec<StepTargets<'_>> = (0..steps)
        .map(|i| StepTargets {
            action: Action::ALL[rng.random_range(0..Action::COUNT)],
            reward: rng.random_range(-1.0..1.0),
            depth_target: &depth[i],
            loop_target: rng.random(),
        })
        .collect();
    let bootstrap = rng.random_range(-1.0..1.0);

    let record = |p: &ParameterSet| -> Result<RolloutRecorder<'_>, TrainError> {
        let mut rec = RolloutRecorder::new(agent, p, &state);
        for o in &observations {
            rec.step(o)?;
        }
        Ok(rec)
    };
    let rec = record(&params)?;
    let baseline = rec.values();
    let analytic = rec.finish(&targets, bootstrap, cfg)?.0.flatten();
    // The advantage's baseline stays at its unperturbed value: it is a
    // constant in the analytic gradient.
    let total = |flat: &[f64]| -> Result<f64, TrainError> {
        let p = params.with_flat(flat)?;
        Ok(record(&p)?.loss_with_baseline(&targets, bootstrap, cfg, &baseline)?.total)
    };
    let numeric = numeric_gradient(|flat| total(flat).unwrap_or(f64::NAN), &params.flatten(), FD_STEP);
    Ok(if numeric.iter().all(|v| v.is_finite()) { relative_error(&analytic, &numeric) } else { f64::INFINITY })
}

/// Outcome of one self-test suite.
#[derive(Clone, Debug, PartialEq)]
pub struct SuiteResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

fn timed(name: &str, f: impl FnOnce() -> Result<(bool, String), String>) -> SuiteResult {
    let start = Instant::now();
    let (passed, detail) = f().unwrap_or_else(|e| (false, format!("error: {e}")));
    SuiteResult { name: name.to_string(), passed, detail, seconds: start.elapsed().as_secs_f64() }
}

/// Every generated maze is connected and its floor graph is a spanning tree.
pub fn maze_suite(seeds: u64, cols: usize, rows: usize) -> Result<(bool, String), String> {
    let mut failures = 0;
    for seed in 0..seeds {
        let m = generate_maze(seed, cols, rows).map_err(|e| e.to_string())?;
        let edges_ok = m.corridor_count() + 1 == cols * rows;
        if !(m.is_connected() && edges_ok && spanning_tree_check(&m)) {
            failures += 1;
        }
    }
    Ok((failures == 0, format!("{failures} failures over {seeds} mazes of {cols}x{rows} cells")))
}

/// BFS hop counts equal Floyd-Warshall for every pair on random mazes of up
/// to 9x9 blocks.
pub fn shortest_path_suite(mazes: u64) -> Result<(bool, String), String> {
    let mut mismatches = 0;
    let mut rng = seeded(0x5B0F);
    for i in 0..mazes {
        let (c, r) = (rng.random_range(1..=4), rng.random_range(1..=4));
        let m = generate_maze(mix_seeds(&[i, 0xF10]), c, r).map_err(|e| e.to_string())?;
        let (floors, d) = floyd_warshall(&m);
        for (a, &from) in floors.iter().enumerate() {
            let hops = bfs_hops(&m, from);
            for (b, &to) in floors.iter().enumerate() {
                if hops[m.index(to)] != d[a][b] {
                    mismatches += 1;
                }
            }
        }
    }
    Ok((mismatches == 0, format!("{mismatches} mismatched pairs over {mazes} mazes")))
}

/// A uniformly random pose at least `margin` from every wall.
pub fn random_pose(maze: &Maze, rng: &mut SeededRng, block_size: f64, margin: f64) -> Pose {
    let floors = maze.floor_blocks();
    let b = floors[rng.random_range(0..floors.len())];
    let (cx, cy) = maze.block_center(b, block_size);
    let half = block_size / 2.0 - margin;
    Pose {
        x: cx + rng.random_range(-half..half),
        y: cy + rng.random_range(-half..half),
        heading: rng.random_range(0.0..std::f64::consts::TAU),
    }
}

/// Largest per-column depth error of the DDA caster against a fine-step
/// marcher over random poses.
pub fn raycast_max_error(poses: u64, march_step: f64) -> Result<f64, String> {
    let camera = Camera::default();
    let block = 100.0;
    let mut rng = seeded(0x4A7);
    let mut worst: f64 = 0.0;
    for i in 0..poses {
        let maze = generate_maze(i % 25, 4, 4).map_err(|e| e.to_string())?;
        let pose = random_pose(&maze, &mut rng, block, 1.0);
        for col in 0..camera.width {
            let dir = ray_direction(pose.heading, camera.fov, camera.column_offset(col));
            let fast = cast_ray(&maze, &pose, dir, block).depth;
            let slow = march_ray(&maze, &pose, dir, block, march_step);
            worst = worst.max((fast - slow).abs());
        }
    }
    Ok(worst)
}

/// Hand-constructed metric values and the scripted-agent oracles.
pub fn metrics_suite() -> Result<(bool, String), String> {
    let ratio = |tau: &[usize]| latency_ratio(&GoalHitTimes { tau: tau.to_vec(), episode_len: 1200 });
    let a = ratio(&[100, 150]);
    let b = ratio(&[300, 600, 900]);
    let (geo, dbl) = scripted_dist_ineff(4, 4, 7)?;
    let ok = a == Some(2.0) && b == Some(1.0) && (geo - 1.0).abs() <= 0.05 && (dbl - 2.0).abs() <= 0.1;
    Ok((ok, format!("latency {a:?} {b:?}; geodesic {geo:.4}; out-and-back {dbl:.4}")))
}

/// Mean BFS distance-inefficiency of the geodesic and out-and-back agents
/// on `maps` static-placement mazes of the given size.
pub fn scripted_dist_ineff(cols: usize, rows: usize, maps: u64) -> Result<(f64, f64), String> {
    let env = EnvConfig::default();
    let mut sums = [0.0, 0.0];
    let mut counts = [0usize, 0];
    for seed in 0..maps {
        let maze = Arc::new(generate_maze(mix_seeds(&[seed, 0xD15]), cols, rows).map_err(|e| e.to_string())?);
        let ann = crate::maze::annotate(&maze, crate::maze::StageFlags { goal_static: true, spawn_static: true }, 0, 0).map_err(|e| e.to_string())?;
        for (k, plan) in [RoutePlan::Geodesic, RoutePlan::OutAndBack].into_iter().enumerate() {
            let log = run_episode(maze.clone(), ann.clone(), &env, &mut RoutePolicy::new(plan), seed, &EpisodeMeta::default()).map_err(|e| e.to_string())?;
            let hits = extract_goal_hits(&log).map_err(|e| e.to_string())?;
            if let Some(d) = distance_inefficiency(&log, &hits, &maze, PathMode::Bfs).map_err(|e| e.to_string())? {
                sums[k] += d;
                counts[k] += 1;
            }
        }
    }
    if counts.contains(&0) {
        return Err("scripted agents never reached the goal twice".into());
    }
    Ok((sums[0] / counts[0] as f64, sums[1] / counts[1] as f64))
}

/// Incremental loop-closure labels agree with the quadratic scan.
pub fn loop_closure_suite() -> Result<(bool, String), String> {
    let mut rng = seeded(0x100F);
    let mut mismatches = 0;
    for _ in 0..20 {
        let mut p = (500.0, 500.0);
        let path: Vec<(f64, f64)> = (0..400)
            .map(|_| {
                p.0 += rng.random_range(-25.0..25.0);
                p.1 += rng.random_range(-25.0..25.0);
                p
            })
            .collect();
        let want = loop_closure_scan(&path, 30, 50.0);
        let mut tracker = LoopClosureTracker::new(30, 50.0);
        mismatches += path.iter().zip(&want).filter(|(q, w)| tracker.observe(**q) != **w).count();
    }
    Ok((mismatches == 0, format!("{mismatches} mismatched labels")))
}

/// Run every suite. `quick` trims the seed counts for smoke runs.
pub fn run_all(quick: bool) -> Vec<SuiteResult> {
    let seeds = if quick { 3 } else { GRADCHECK_SEEDS };
    let mut out = Vec::new();
    out.push(timed("maze_spanning_tree", || maze_suite(if quick { 100 } else { 1000 }, 4, 4)));
    out.push(timed("bfs_vs_floyd_warshall", || shortest_path_suite(if quick { 10 } else { 50 })));
    out.push(timed("raycast_vs_marcher", || {
        let err = raycast_max_error(if quick { 50 } else { 1000 }, 0.01)?;
        Ok((err < 1e-3, format!("max abs depth error {err:.3e}")))
    }));
    out.push(timed("metrics", metrics_suite));
    out.push(timed("loop_closure", loop_closure_suite));
    out.push(timed("gradcheck_primitives", || {
        let checks = gradcheck_primitives(seeds).map_err(|e| e.to_string())?;
        let failed: Vec<String> = checks.iter().filter(|c| !c.passed()).map(|c| format!("{} ({:.2e})", c.name, c.worst_error)).collect();
        let worst = checks.iter().map(|c| c.worst_error).fold(0.0, f64::max);
        Ok((failed.is_empty(), format!("{} ops, worst {worst:.2e}, failed: [{}]", checks.len(), failed.join(", "))))
    }));
    out.push(timed("gradcheck_lstm", || {
        let c = gradcheck_lstm(seeds).map_err(|e| e.to_string())?;
        Ok((c.passed(), format!("worst {:.2e}", c.worst_error)))
    }));
    out.push(timed("gradcheck_combined_loss", || {
        let c = gradcheck_combined_loss(seeds).map_err(|e| e.to_string())?;
        Ok((c.passed(), format!("worst {:.2e}", c.worst_error)))
    }));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quick_suites_pass() {
        for r in run_all(true) {
            assert!(r.passed, "{}: {}", r.name, r.detail);
        }
    }

    #[test]
    fn gradcheck_catches_a_wrong_gradient() {
        // Finite differences of a function whose "analytic" gradient is off.
        let x = [0.3, -0.2];
        let numeric = numeric_gradient(|p| p[0] * p[1], &x, FD_STEP);
        assert!(relative_error(&[x[1], x[0] * 1.01], &numeric) > GRADCHECK_TOLERANCE);
    }
}
