//! Map-exploitation metrics computed from trajectory logs.
//!
//! Times are position indices: `x_0` is the start pose and `x_{k+1}` is the
//! pose after the step recorded at index `k`. A goal hit recorded at index
//! `k` therefore happens at time `k + 1`.

use std::collections::VecDeque;
use std::io::Write;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::maze::{BlockPos, MapAnnotations, Maze, TwoArmProbe};
use crate::rng::mix_seeds;
use crate::scripted::RandomPolicy;
use crate::world::{run_episode, EnvConfig, EpisodeLog, EpisodeMeta, Events, Policy, Pose, WorldError};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("trajectory log has no goal in its header")]
    MissingGoal,
    #[error("trajectory is empty")]
    EmptyTrajectory,
    #[error("block {0} is not a floor block")]
    NotFloor(BlockPos),
    #[error("no path from {0} to {1}")]
    Unreachable(BlockPos, BlockPos),
    #[error("no reports to aggregate")]
    NoReports,
    #[error("probe map is not a valid two-arm map: {0}")]
    BadProbe(String),
    #[error(transparent)]
    World(#[from] WorldError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Ordered goal-hit times of one episode.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoalHitTimes {
    pub tau: Vec<usize>,
    pub episode_len: usize,
}

impl GoalHitTimes {
    pub fn n(&self) -> usize {
        self.tau.len()
    }
}

/// Hit times from the logged `GoalHit` events.
pub fn extract_goal_hits(log: &EpisodeLog) -> Result<GoalHitTimes, MetricsError> {
    log.header.goal.ok_or(MetricsError::MissingGoal)?;
    if log.records.is_empty() {
        return Err(MetricsError::EmptyTrajectory);
    }
    let tau = log.records.iter().filter(|r| r.events.contains(Events::GOAL_HIT)).map(|r| r.t + 1).collect();
    Ok(GoalHitTimes { tau, episode_len: log.records.len() })
}

/// Hit times recomputed from geometry: poses within `epsilon` of the goal
/// block centre. Used to cross-check the event log.
pub fn recompute_goal_hits(log: &EpisodeLog) -> Result<GoalHitTimes, MetricsError> {
    let goal = log.header.goal.ok_or(MetricsError::MissingGoal)?;
    let b = log.header.block_size;
    let centre = ((goal.col as f64 + 0.5) * b, (goal.row as f64 + 0.5) * b);
    let tau = log
        .records
        .iter()
        .filter(|r| r.pose.distance_to(centre) < log.header.goal_epsilon)
        .map(|r| r.t + 1)
        .collect();
    Ok(GoalHitTimes { tau, episode_len: log.records.len() })
}

/// `(N - 1) * tau_1 / (tau_N - tau_1)` for `N >= 2`.
pub fn latency_ratio(hits: &GoalHitTimes) -> Option<f64> {
    let n = hits.n();
    if n < 2 {
        return None;
    }
    let (first, last) = (hits.tau[0] as f64, hits.tau[n - 1] as f64);
    Some((n - 1) as f64 * first / (last - first))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum PathMode {
    /// Exact geodesic: breadth-first search over floor blocks.
    Bfs,
    /// `|dcol| + |drow|`, ignoring walls.
    Manhattan,
}

/// Hop distance from `from` to every block (row-major), `None` for walls and
/// unreachable blocks.
pub fn bfs_hops(maze: &Maze, from: BlockPos) -> Vec<Option<usize>> {
    let mut dist = vec![None; maze.blocks().len()];
    if !maze.is_floor(from) {
        return dist;
    }
    dist[maze.index(from)] = Some(0);
    let mut queue = VecDeque::from([from]);
    while let Some(p) = queue.pop_front() {
        let d = dist[maze.index(p)].unwrap_or(0);
        for q in maze.floor_neighbors(p) {
            let slot = &mut dist[maze.index(q)];
            if slot.is_none() {
                *slot = Some(d + 1);
                queue.push_back(q);
            }
        }
    }
    dist
}

/// A shortest block path from `from` to `to` (both ends included) that never
/// enters a block in `forbidden`.
pub fn bfs_path(maze: &Maze, from: BlockPos, to: BlockPos, forbidden: &[BlockPos]) -> Option<Vec<BlockPos>> {
    if !maze.is_floor(from) || !maze.is_floor(to) {
        return None;
    }
    let mut prev: Vec<Option<BlockPos>> = vec![None; maze.blocks().len()];
    let mut seen = vec![false; maze.blocks().len()];
    seen[maze.index(from)] = true;
    let mut queue = VecDeque::from([from]);
    while let Some(p) = queue.pop_front() {
        if p == to {
            let mut path = vec![to];
            let mut cur = to;
            while let Some(q) = prev[maze.index(cur)] {
                path.push(q);
                cur = q;
            }
            path.reverse();
            return Some(path);
        }
        for q in maze.floor_neighbors(p) {
            let i = maze.index(q);
            if !seen[i] && !forbidden.contains(&q) {
                seen[i] = true;
                prev[i] = Some(p);
                queue.push_back(q);
            }
        }
    }
    None
}

/// Distance between two floor blocks in world units.
pub fn shortest_path_grid(maze: &Maze, a: BlockPos, b: BlockPos, mode: PathMode, block_size: f64) -> Result<f64, MetricsError> {
    for p in [a, b] {
        if !maze.is_floor(p) {
            return Err(MetricsError::NotFloor(p));
        }
    }
    let hops = match mode {
        PathMode::Manhattan => a.manhattan(b),
        PathMode::Bfs => bfs_hops(maze, a)[maze.index(b)].ok_or(MetricsError::Unreachable(a, b))?,
    };
    Ok(hops as f64 * block_size)
}

/// Post-discovery path length divided by the summed shortest distances from
/// each respawn point to the goal.
///
/// The numerator covers every step from the respawn after hit `i` up to and
/// including the step that produces hit `i + 1`, for `i = 1..N-1`. Each
/// denominator term is the grid distance from the respawn block to the goal
/// block, less the goal radius `epsilon` (the episode counts a hit as soon as
/// the agent is that close). Absent for fewer than two hits.
pub fn distance_inefficiency(log: &EpisodeLog, hits: &GoalHitTimes, maze: &Maze, mode: PathMode) -> Result<Option<f64>, MetricsError> {
    let goal = log.header.goal.ok_or(MetricsError::MissingGoal)?;
    if hits.n() < 2 {
        return Ok(None);
    }
    let b = log.header.block_size;
    let eps = log.header.goal_epsilon;
    let starts = log.start_poses();
    let step_len = |k: usize| {
        let (s, e) = (starts[k], log.records[k].pose);
        (e.x - s.x).hypot(e.y - s.y)
    };
    let hops_from_goal = (mode == PathMode::Bfs).then(|| bfs_hops(maze, goal));
    let mut travelled = 0.0;
    let mut shortest = 0.0;
    for w in hits.tau.windows(2) {
        let (hit_k, next_k) = (w[0] - 1, w[1] - 1);
        travelled += (hit_k + 1..=next_k).map(step_len).sum::<f64>();
        let spawn = starts[hit_k + 1];
        let block = maze.block_at(spawn.x, spawn.y, b);
        let hops = match &hops_from_goal {
            Some(d) => d[maze.index(block)].ok_or(MetricsError::Unreachable(block, goal))?,
            None => block.manhattan(goal),
        };
        shortest += (hops as f64 * b - eps).max(0.0);
    }
    Ok((shortest > 0.0).then(|| travelled / shortest))
}

/// Metrics of one evaluated episode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    pub map_id: Option<usize>,
    pub episode: usize,
    pub n: usize,
    pub latency_ratio: Option<f64>,
    pub dist_ineff_bfs: Option<f64>,
    pub dist_ineff_manhattan: Option<f64>,
    pub reward: f64,
    pub goal_hits: usize,
}

pub fn episode_metrics(log: &EpisodeLog, maze: &Maze, episode: usize) -> Result<EpisodeMetrics, MetricsError> {
    let hits = extract_goal_hits(log)?;
    Ok(EpisodeMetrics {
        map_id: log.header.map_id,
        episode,
        n: hits.n(),
        latency_ratio: latency_ratio(&hits),
        dist_ineff_bfs: distance_inefficiency(log, &hits, maze, PathMode::Bfs)?,
        dist_ineff_manhattan: distance_inefficiency(log, &hits, maze, PathMode::Manhattan)?,
        reward: log.total_reward(),
        goal_hits: hits.n(),
    })
}

/// Population mean and standard deviation over the present values.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: Option<f64>,
    pub std: Option<f64>,
    pub count: usize,
    pub absent: usize,
}

impl Stat {
    pub fn of(values: impl IntoIterator<Item = Option<f64>>) -> Self {
        let mut present = Vec::new();
        let mut absent = 0;
        for v in values {
            match v {
                Some(x) => present.push(x),
                None => absent += 1,
            }
        }
        if present.is_empty() {
            return Stat { mean: None, std: None, count: 0, absent };
        }
        let n = present.len() as f64;
        let mean = present.iter().sum::<f64>() / n;
        let var = present.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        Stat { mean: Some(mean), std: Some(var.sqrt()), count: present.len(), absent }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub episodes: Vec<EpisodeMetrics>,
    pub latency_ratio: Stat,
    pub dist_ineff_bfs: Stat,
    pub dist_ineff_manhattan: Stat,
    pub reward: Stat,
    pub goal_hits: Stat,
}

pub fn aggregate(episodes: Vec<EpisodeMetrics>) -> Result<MetricsReport, MetricsError> {
    if episodes.is_empty() {
        return Err(MetricsError::NoReports);
    }
    Ok(MetricsReport {
        latency_ratio: Stat::of(episodes.iter().map(|e| e.latency_ratio)),
        dist_ineff_bfs: Stat::of(episodes.iter().map(|e| e.dist_ineff_bfs)),
        dist_ineff_manhattan: Stat::of(episodes.iter().map(|e| e.dist_ineff_manhattan)),
        reward: Stat::of(episodes.iter().map(|e| Some(e.reward))),
        goal_hits: Stat::of(episodes.iter().map(|e| Some(e.goal_hits as f64))),
        episodes,
    })
}

pub const REPORT_CSV_HEADER: [&str; 8] = ["map_id", "episode", "N", "latency_ratio", "dist_ineff_bfs", "dist_ineff_manhattan", "reward", "goal_hits"];

impl MetricsReport {
    /// Per-episode rows, then `mean`, `std` and `count` footer rows.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), MetricsError> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(REPORT_CSV_HEADER)?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for e in &self.episodes {
            out.write_record([
                e.map_id.map(|m| m.to_string()).unwrap_or_default(),
                e.episode.to_string(),
                e.n.to_string(),
                opt(e.latency_ratio),
                opt(e.dist_ineff_bfs),
                opt(e.dist_ineff_manhattan),
                e.reward.to_string(),
                e.goal_hits.to_string(),
            ])?;
        }
        let stats = [&self.latency_ratio, &self.dist_ineff_bfs, &self.dist_ineff_manhattan, &self.reward, &self.goal_hits];
        for (label, pick) in [("mean", 0), ("std", 1), ("count", 2)] {
            let mut row = vec![label.to_string(), String::new(), String::new()];
            for s in stats {
                row.push(match pick {
                    0 => opt(s.mean),
                    1 => opt(s.std),
                    _ => s.count.to_string(),
                });
            }
            out.write_record(&row)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn to_json(&self) -> Result<String, MetricsError> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// A maze with its annotations, as evaluated by the baselines.
#[derive(Clone, Debug)]
pub struct EvalMap {
    pub map_id: Option<usize>,
    pub maze: Arc<Maze>,
    pub annotations: MapAnnotations,
}

/// Run `policy_for(seed)` for `episodes` episodes on every map and collect
/// the metric report. `annotate` may re-place goal and spawn per episode.
pub fn evaluate_policy<P: Policy>(
    maps: &[EvalMap],
    config: &EnvConfig,
    episodes: usize,
    seed: u64,
    mut annotate: impl FnMut(&EvalMap, u64) -> MapAnnotations,
    mut policy_for: impl FnMut(u64) -> P,
) -> Result<(MetricsReport, Vec<EpisodeLog>), MetricsError> {
    let mut rows = Vec::new();
    let mut logs = Vec::new();
    for (mi, map) in maps.iter().enumerate() {
        for e in 0..episodes {
            let episode_seed = mix_seeds(&[seed, map.map_id.unwrap_or(mi) as u64, e as u64]);
            let ann = annotate(map, episode_seed);
            let mut policy = policy_for(episode_seed);
            let meta = EpisodeMeta { map_id: map.map_id, config_hash: String::new() };
            let log = run_episode(map.maze.clone(), ann, config, &mut policy, episode_seed, &meta)?;
            rows.push(episode_metrics(&log, &map.maze, e)?);
            logs.push(log);
        }
    }
    Ok((aggregate(rows)?, logs))
}

/// The uniform-random agent through the standard metric pipeline, with the
/// maps' own annotations.
pub fn random_agent_baseline(maps: &[EvalMap], config: &EnvConfig, episodes: usize, seed: u64) -> Result<MetricsReport, MetricsError> {
    evaluate_policy(maps, config, episodes, seed, |m, _| m.annotations.clone(), RandomPolicy::new).map(|(r, _)| r)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Arm {
    Shorter,
    Longer,
    Unresolved,
}

/// Arm credited to each spawn-to-goal traversal in `log`: the first sentinel
/// block entered after the traversal starts decides it.
pub fn classify_traversals(log: &EpisodeLog, probe: &TwoArmProbe) -> Vec<Arm> {
    let b = log.header.block_size;
    let mut out = Vec::new();
    let mut first: Option<Arm> = None;
    let block = |p: &Pose| probe.maze.block_at(p.x, p.y, b);
    for r in &log.records {
        if first.is_none() {
            let here = block(&r.pose);
            if here == probe.short_sentinel {
                first = Some(Arm::Shorter);
            } else if here == probe.long_sentinel {
                first = Some(Arm::Longer);
            }
        }
        if r.events.contains(Events::GOAL_HIT) {
            out.push(first.unwrap_or(Arm::Unresolved));
            first = None;
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArmStats {
    pub shorter: usize,
    pub longer: usize,
    pub unresolved: usize,
    /// Shorter-arm share of the resolved traversals.
    pub fraction: Option<f64>,
    /// Population std of the per-episode shorter-arm share.
    pub std: Option<f64>,
}

/// Shorter-arm share over a set of episodes on a two-arm probe map.
pub fn shorter_path_fraction(logs: &[EpisodeLog], probe: &TwoArmProbe) -> Result<ArmStats, MetricsError> {
    validate_probe(probe)?;
    let (mut shorter, mut longer, mut unresolved) = (0, 0, 0);
    let mut per_episode = Vec::new();
    for log in logs {
        let arms = classify_traversals(log, probe);
        let s = arms.iter().filter(|a| **a == Arm::Shorter).count();
        let l = arms.iter().filter(|a| **a == Arm::Longer).count();
        unresolved += arms.len() - s - l;
        shorter += s;
        longer += l;
        if s + l > 0 {
            per_episode.push(Some(s as f64 / (s + l) as f64));
        }
    }
    let resolved = shorter + longer;
    let fraction = (resolved > 0).then(|| shorter as f64 / resolved as f64);
    Ok(ArmStats { shorter, longer, unresolved, fraction, std: Stat::of(per_episode).std })
}

/// A probe is valid when both sentinels are floor blocks and the spawn
/// reaches the goal through each sentinel with the other one blocked, the
/// short route strictly shorter.
pub fn validate_probe(probe: &TwoArmProbe) -> Result<(), MetricsError> {
    let m = &probe.maze;
    let via = |s: BlockPos, other: BlockPos| -> Result<usize, MetricsError> {
        let a = bfs_path(m, probe.spawn, s, &[other]).ok_or_else(|| MetricsError::BadProbe(format!("sentinel {s} unreachable")))?;
        let b = bfs_path(m, s, probe.goal, &[other]).ok_or_else(|| MetricsError::BadProbe(format!("goal unreachable via {s}")))?;
        Ok(a.len() + b.len() - 2)
    };
    let short = via(probe.short_sentinel, probe.long_sentinel)?;
    let long = via(probe.long_sentinel, probe.short_sentinel)?;
    if short >= long {
        return Err(MetricsError::BadProbe(format!("short arm {short} is not shorter than long arm {long}")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::maze::{build_square_map, goal_map_probe, square_map_probe};

    fn hits(tau: &[usize]) -> GoalHitTimes {
        GoalHitTimes { tau: tau.to_vec(), episode_len: 1200 }
    }

    #[test]
    fn latency_examples() {
        assert_eq!(latency_ratio(&hits(&[100, 150])), Some(2.0));
        assert_eq!(latency_ratio(&hits(&[300, 600, 900])), Some(1.0));
        assert_eq!(latency_ratio(&hits(&[300])), None);
        assert_eq!(latency_ratio(&hits(&[])), None);
    }

    #[test]
    fn stats_examples() {
        let s = Stat::of([Some(1.0), Some(3.0), None]);
        assert_eq!((s.mean, s.std, s.count, s.absent), (Some(2.0), Some(1.0), 2, 1));
        let one = Stat::of([Some(4.0)]);
        assert_eq!((one.mean, one.std), (Some(4.0), Some(0.0)));
        assert!(aggregate(vec![]).is_err());
    }

    #[test]
    fn grid_distances() {
        let m = build_square_map();
        let a = BlockPos::new(1, 1);
        assert_eq!(shortest_path_grid(&m, a, a, PathMode::Bfs, 100.0).unwrap(), 0.0);
        let b = BlockPos::new(5, 5);
        assert_eq!(shortest_path_grid(&m, a, b, PathMode::Bfs, 100.0).unwrap(), 800.0);
        assert_eq!(shortest_path_grid(&m, a, b, PathMode::Manhattan, 100.0).unwrap(), 800.0);
        assert!(shortest_path_grid(&m, a, BlockPos::new(3, 3), PathMode::Bfs, 100.0).is_err());
    }

    #[test]
    fn probes_are_valid() {
        validate_probe(&square_map_probe()).unwrap();
        validate_probe(&goal_map_probe()).unwrap();
        let mut flipped = square_map_probe();
        std::mem::swap(&mut flipped.short_sentinel, &mut flipped.long_sentinel);
        assert!(validate_probe(&flipped).is_err());
    }
}
