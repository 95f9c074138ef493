//! Shared fixtures for the criterion benchmarks.

use std::sync::Arc;

use navbench::agent::{init_params, AgentConfig, ParameterSet, RecurrentState};
use navbench::analysis::replay_episode;
use navbench::maze::{annotate, assign_textures, default_apple_count, generate_maze, MapAnnotations, Maze, StageFlags};
use navbench::scripted::RandomPolicy;
use navbench::trainer::{Rollout, RolloutStep, TrainConfig};
use navbench::world::{run_episode, EnvConfig, EpisodeLog, EpisodeMeta};

/// A textured maze with apples, static goal and spawn.
pub fn fixture_map(seed: u64, cols: usize, rows: usize) -> (Arc<Maze>, MapAnnotations) {
    let maze = generate_maze(seed, cols, rows).expect("valid maze size");
    let flags = StageFlags { goal_static: true, spawn_static: true };
    let mut ann = annotate(&maze, flags, default_apple_count(&maze), seed).expect("annotatable maze");
    ann.textures = assign_textures(&maze, Some(seed));
    (Arc::new(maze), ann)
}

/// A uniform-random episode of `len` steps.
pub fn random_episode(maze: &Arc<Maze>, ann: &MapAnnotations, len: usize, seed: u64) -> (EnvConfig, EpisodeLog) {
    let env = EnvConfig { episode_len: len, ..EnvConfig::default() };
    let meta = EpisodeMeta { map_id: Some(0), config_hash: String::new() };
    let log = run_episode(maze.clone(), ann.clone(), &env, &mut RandomPolicy::new(seed), seed, &meta).expect("episode runs");
    (env, log)
}

/// Desk-scale agent, fresh parameters and a `t_max`-step rollout recorded
/// from a random episode.
pub fn fixture_rollout(t_max: usize) -> (AgentConfig, ParameterSet, Rollout, TrainConfig) {
    let agent = AgentConfig::default();
    let cfg = TrainConfig { t_max, ..TrainConfig::default() };
    let (maze, ann) = fixture_map(5, 3, 3);
    let (env, log) = random_episode(&maze, &ann, t_max, 1);
    let steps = replay_episode(maze, ann, &env, &log, &agent, &cfg).expect("replay matches");
    let steps = steps
        .into_iter()
        .map(|s| RolloutStep { observation: s.observation, action: s.action, reward: s.reward, depth_target: s.depth_target, loop_target: s.loop_target })
        .collect();
    let params = init_params(0, &agent).expect("valid agent");
    let rollout = Rollout { initial_state: RecurrentState::zeros(&agent), steps, bootstrap_value: 0.0 };
    (agent, params, rollout, cfg)
}
