use std::sync::Arc;

use navbench::agent::{init_params, AgentConfig, Checkpoint};
use navbench::maze::{annotate, default_apple_count, generate_maze, parse_map, serialize_map, StageFlags};
use navbench::metrics::{bfs_hops, distance_inefficiency, episode_metrics, extract_goal_hits, latency_ratio, GoalHitTimes, PathMode};
use navbench::oracle::{floyd_warshall, spanning_tree_check};
use navbench::scripted::RandomPolicy;
use navbench::selftest::tiny_agent;
use navbench::trainer::discounted_returns;
use navbench::world::{run_episode, EnvConfig, EpisodeLog, EpisodeMeta};
use proptest::prelude::*;

fn random_log(seed: u64, cols: usize, rows: usize, len: usize) -> (navbench::maze::Maze, EpisodeLog) {
    let maze = generate_maze(seed, cols, rows).unwrap();
    let flags = StageFlags { goal_static: false, spawn_static: false };
    let ann = annotate(&maze, flags, default_apple_count(&maze), seed).unwrap();
    let env = EnvConfig { episode_len: len, ..EnvConfig::default() };
    let meta = EpisodeMeta { map_id: Some(0), config_hash: String::new() };
    let log = run_episode(Arc::new(maze.clone()), ann, &env, &mut RandomPolicy::new(seed), seed, &meta).unwrap();
    (maze, log)
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn mazes_are_perfect(seed in any::<u64>(), cols in 1usize..12, rows in 1usize..12) {
        let m = generate_maze(seed, cols, rows).unwrap();
        prop_assert!(m.is_connected());
        prop_assert_eq!(m.floor_edge_count() + 1, m.floor_count());
        prop_assert!(spanning_tree_check(&m));
        prop_assert_eq!(m.floor_count(), cols * rows + cols * rows - 1);
    }

    #[test]
    fn maze_text_round_trips(seed in any::<u64>(), cols in 2usize..8, rows in 1usize..8) {
        let m = generate_maze(seed, cols, rows).unwrap();
        let ann = annotate(&m, StageFlags { goal_static: true, spawn_static: true }, default_apple_count(&m), seed).unwrap();
        let (back, back_ann) = parse_map(&serialize_map(&m, Some(&ann))).unwrap();
        prop_assert!(back.same_layout(&m));
        let back_ann = back_ann.unwrap();
        prop_assert_eq!(back_ann.goal, ann.goal);
        prop_assert_eq!(back_ann.spawn, ann.spawn);
        prop_assert_eq!(back_ann.apples, ann.apples);
    }

    #[test]
    fn bfs_matches_floyd_warshall(seed in any::<u64>(), cols in 1usize..5, rows in 1usize..5) {
        let m = generate_maze(seed, cols, rows).unwrap();
        let (nodes, dist) = floyd_warshall(&m);
        for (i, &a) in nodes.iter().enumerate() {
            let hops = bfs_hops(&m, a);
            for (j, &b) in nodes.iter().enumerate() {
                prop_assert_eq!(hops[m.index(b)], dist[i][j]);
            }
        }
    }

    /// latency > 1 exactly when the mean inter-hit interval is shorter than
    /// the time to the first hit.
    #[test]
    fn latency_ratio_restatement(mut tau in prop::collection::btree_set(1usize..1200, 2..12)) {
        let tau: Vec<usize> = std::mem::take(&mut tau).into_iter().collect();
        let n = tau.len();
        let ratio = latency_ratio(&GoalHitTimes { tau: tau.clone(), episode_len: 1200 }).unwrap();
        let mean_interval = (tau[n - 1] - tau[0]) as f64 / (n - 1) as f64;
        prop_assert_eq!(ratio > 1.0, mean_interval < tau[0] as f64);
        prop_assert!((ratio * mean_interval - tau[0] as f64).abs() < 1e-9 * tau[0] as f64);
    }

    #[test]
    fn discounted_returns_are_linear(r in prop::collection::vec(-10.0f64..10.0, 1..30), gamma in 0.01f64..=1.0, boot in -5.0f64..5.0, k in -3.0f64..3.0) {
        let a = discounted_returns(&r, gamma, boot);
        let scaled: Vec<f64> = r.iter().map(|x| x * k).collect();
        let b = discounted_returns(&scaled, gamma, boot * k);
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x * k - y).abs() < 1e-9 * (1.0 + y.abs()));
        }
        // The recursion itself.
        for t in 0..r.len() {
            let next = if t + 1 < r.len() { a[t + 1] } else { boot };
            prop_assert!((a[t] - (r[t] + gamma * next)).abs() < 1e-9 * (1.0 + a[t].abs()));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 12, failure_persistence: None, ..ProptestConfig::default() })]

    /// Manhattan distances never exceed geodesic ones, so the Manhattan
    /// ratio is never below the BFS ratio on the same trajectory.
    #[test]
    fn manhattan_ratio_bounds_bfs_ratio(seed in any::<u64>()) {
        let (maze, log) = random_log(seed, 2, 2, 1200);
        let hits = extract_goal_hits(&log).unwrap();
        let bfs = distance_inefficiency(&log, &hits, &maze, PathMode::Bfs).unwrap();
        let man = distance_inefficiency(&log, &hits, &maze, PathMode::Manhattan).unwrap();
        match (bfs, man) {
            (Some(b), Some(m)) => prop_assert!(m >= b - 1e-12, "manhattan {} < bfs {}", m, b),
            (None, None) => {}
            other => prop_assert!(false, "presence differs: {:?}", other),
        }
    }

    /// Metrics depend on the log alone: recomputing them from a serialized
    /// copy gives identical values.
    #[test]
    fn metrics_survive_serialization(seed in any::<u64>()) {
        let (maze, log) = random_log(seed, 2, 2, 600);
        let mut buf = Vec::new();
        log.write_jsonl(&mut buf).unwrap();
        let back = EpisodeLog::read_jsonl(buf.as_slice()).unwrap();
        prop_assert_eq!(&back.header, &log.header);
        for (a, b) in back.records.iter().zip(&log.records) {
            prop_assert_eq!((a.t, a.pose, a.action, a.reward, a.events, a.respawn), (b.t, b.pose, b.action, b.reward, b.events, b.respawn));
        }
        prop_assert_eq!(episode_metrics(&back, &maze, 0).unwrap(), episode_metrics(&log, &maze, 0).unwrap());
    }

    #[test]
    fn checkpoints_round_trip(seed in any::<u64>(), step in any::<u64>()) {
        let config = tiny_agent();
        let params = init_params(seed, &config).unwrap();
        let ckpt = Checkpoint { config, run_config: format!("seed = {seed}"), seeds: vec![seed, 1], global_step: step, params };
        let bytes = ckpt.to_bytes().unwrap();
        prop_assert_eq!(Checkpoint::read(bytes.as_slice()).unwrap(), ckpt);
    }
}

#[test]
fn default_agent_matches_desk_scale() {
    let a = AgentConfig::default();
    assert_eq!((a.width, a.height, a.lstm1, a.lstm2), (42, 42, 64, 32));
    let p = AgentConfig::paper_scale();
    assert_eq!((p.width, p.lstm1, p.lstm2), (84, 256, 64));
}
