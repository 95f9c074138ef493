//! The navigation environment: continuous motion in the block maze, rewards,
//! respawns and fixed-length episodes.

use std::collections::BTreeSet;
use std::f64::consts::{PI, TAU};
use std::fmt;
use std::io::{BufRead, Write};
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::maze::{BlockPos, MapAnnotations, Maze, MazeError, DEFAULT_BLOCK_SIZE};
use crate::raycast::{render, Camera, Image, Observation, RenderError, Scene};
use crate::rng::{mix_seeds, seeded, SeededRng};

pub type PolicyError = Box<dyn std::error::Error + Send + Sync>;

#[derive(Debug, Error)]
pub enum WorldError {
    #[error("step called after the episode finished (t = {0})")]
    StepAfterDone(usize),
    #[error("invalid annotations: {0}")]
    Annotations(#[from] MazeError),
    #[error("invalid environment config: {0}")]
    Config(String),
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error("agent failed at step {step}: {source}")]
    Agent { step: usize, source: PolicyError },
    #[error("trajectory log: {0}")]
    Log(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    /// Radians in [0, 2pi); 0 points along +x, increasing towards +y.
    pub heading: f64,
}

impl Pose {
    pub fn position(&self) -> (f64, f64) {
        (self.x, self.y)
    }

    pub fn distance_to(&self, p: (f64, f64)) -> f64 {
        (self.x - p.0).hypot(self.y - p.1)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Action {
    Forward,
    Backward,
    RotateLeft,
    RotateRight,
}

impl Action {
    pub const COUNT: usize = 4;
    pub const ALL: [Action; 4] = [Action::Forward, Action::Backward, Action::RotateLeft, Action::RotateRight];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Action> {
        Self::ALL.get(i).copied()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvConfig {
    pub episode_len: usize,
    pub goal_reward: f64,
    pub apple_reward: f64,
    /// Most negative per-step wall penalty (reached at wall contact).
    pub wall_penalty_cap: f64,
    /// Clearance below which the wall penalty ramps in.
    pub wall_penalty_radius: f64,
    pub forward_speed: f64,
    pub turn_speed: f64,
    pub agent_radius: f64,
    pub goal_epsilon: f64,
    pub block_size: f64,
    pub camera: Camera,
}

impl Default for EnvConfig {
    fn default() -> Self {
        let agent_radius = 16.0;
        EnvConfig {
            episode_len: 1200,
            goal_reward: 10.0,
            apple_reward: 1.0,
            wall_penalty_cap: -0.2,
            wall_penalty_radius: 2.0 * agent_radius,
            forward_speed: 25.0,
            turn_speed: PI / 12.0,
            agent_radius,
            goal_epsilon: DEFAULT_BLOCK_SIZE / 2.0,
            block_size: DEFAULT_BLOCK_SIZE,
            camera: Camera::default(),
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<(), WorldError> {
        let bad = |m: &str| Err(WorldError::Config(m.to_string()));
        if self.episode_len == 0 {
            return bad("episode length must be positive");
        }
        if !(self.goal_epsilon > 0.0 && self.goal_epsilon < self.block_size) {
            return bad("goal epsilon must lie in (0, block size)");
        }
        if self.wall_penalty_cap > 0.0 {
            return bad("wall penalty cap must be <= 0");
        }
        if !(self.agent_radius > 0.0 && 2.0 * self.agent_radius < self.block_size) {
            return bad("agent must fit inside a block");
        }
        if !(self.forward_speed > 0.0 && self.forward_speed < self.block_size - 2.0 * self.agent_radius) {
            return bad("forward speed must be positive and smaller than the free width of a block");
        }
        if self.wall_penalty_radius <= 0.0 {
            return bad("wall penalty radius must be positive");
        }
        self.camera.validate()?;
        Ok(())
    }
}

/// Reward split by source. `total()` is their sum.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RewardTerms {
    pub apple: f64,
    pub goal: f64,
    pub wall: f64,
}

impl RewardTerms {
    pub fn total(&self) -> f64 {
        self.apple + self.goal + self.wall
    }
}

/// Set of per-step events.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct Events(u8);

impl Events {
    pub const NONE: Events = Events(0);
    pub const WALL_CONTACT: Events = Events(1);
    pub const APPLE_HIT: Events = Events(2);
    pub const GOAL_HIT: Events = Events(4);
    pub const RESPAWN: Events = Events(8);

    const NAMES: [(Events, &'static str); 4] = [
        (Events::WALL_CONTACT, "WallContact"),
        (Events::APPLE_HIT, "AppleHit"),
        (Events::GOAL_HIT, "GoalHit"),
        (Events::RESPAWN, "Respawn"),
    ];

    pub fn contains(self, other: Events) -> bool {
        self.0 & other.0 == other.0 && other.0 != 0
    }

    pub fn insert(&mut self, other: Events) {
        self.0 |= other.0;
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn parse(s: &str) -> Option<Events> {
        if s == "None" {
            return Some(Events::NONE);
        }
        let mut out = Events::NONE;
        for part in s.split('+') {
            let (e, _) = Self::NAMES.iter().find(|(_, n)| *n == part)?;
            out.insert(*e);
        }
        Some(out)
    }
}

impl fmt::Display for Events {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_empty() {
            return f.write_str("None");
        }
        let names: Vec<&str> = Self::NAMES.iter().filter(|(e, _)| self.contains(*e)).map(|(_, n)| *n).collect();
        f.write_str(&names.join("+"))
    }
}

/// Result of one environment step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepOutcome {
    pub terms: RewardTerms,
    pub reward: f64,
    pub events: Events,
    /// Where the motion left the agent (before any respawn).
    pub pose: Pose,
    /// Set when the goal was hit; the agent continues from here.
    pub respawn: Option<Pose>,
    pub done: bool,
}

/// One step of an episode log.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrajectoryRecord {
    pub t: usize,
    pub pose: Pose,
    pub action: Action,
    pub reward: f64,
    pub terms: RewardTerms,
    pub events: Events,
    pub respawn: Option<Pose>,
}

pub struct Environment {
    maze: Arc<Maze>,
    annotations: MapAnnotations,
    config: EnvConfig,
    rng: SeededRng,
    pose: Pose,
    t: usize,
    apples_left: BTreeSet<BlockPos>,
    prev_action: Option<Action>,
    prev_reward: f64,
    goal_center: (f64, f64),
    respawn_candidates: Vec<BlockPos>,
}

impl Environment {
    /// Start an episode. Static spawns face heading 0; random spawns get a
    /// uniform block (never the goal block) and a uniform heading.
    pub fn reset(maze: Arc<Maze>, annotations: MapAnnotations, config: EnvConfig, episode_seed: u64) -> Result<Self, WorldError> {
        config.validate()?;
        annotations.validate(&maze)?;
        if maze.blocks().len() != annotations.textures.len() {
            return Err(WorldError::Config("texture map does not match maze".into()));
        }
        let goal_center = maze.block_center(annotations.goal, config.block_size);
        let respawn_candidates = maze.floor_blocks().into_iter().filter(|&p| p != annotations.goal).collect::<Vec<_>>();
        if annotations.spawn.is_none() && respawn_candidates.is_empty() {
            return Err(WorldError::Config("no floor block available for random spawns".into()));
        }
        if annotations.spawn == Some(annotations.goal) {
            return Err(WorldError::Config("spawn block coincides with the goal".into()));
        }
        let mut env = Environment {
            apples_left: annotations.apples.clone(),
            maze,
            annotations,
            config,
            rng: seeded(mix_seeds(&[episode_seed, 0x5EA7])),
            pose: Pose { x: 0.0, y: 0.0, heading: 0.0 },
            t: 0,
            prev_action: None,
            prev_reward: 0.0,
            goal_center,
            respawn_candidates,
        };
        env.pose = env.spawn_pose();
        Ok(env)
    }

    fn spawn_pose(&mut self) -> Pose {
        match self.annotations.spawn {
            Some(block) => {
                let (x, y) = self.maze.block_center(block, self.config.block_size);
                Pose { x, y, heading: 0.0 }
            }
            None => {
                let block = self.respawn_candidates[self.rng.random_range(0..self.respawn_candidates.len())];
                let (x, y) = self.maze.block_center(block, self.config.block_size);
                Pose { x, y, heading: self.rng.random_range(0.0..TAU) }
            }
        }
    }

    pub fn pose(&self) -> Pose {
        self.pose
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn done(&self) -> bool {
        self.t >= self.config.episode_len
    }

    pub fn maze(&self) -> &Arc<Maze> {
        &self.maze
    }

    pub fn annotations(&self) -> &MapAnnotations {
        &self.annotations
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn apples_left(&self) -> &BTreeSet<BlockPos> {
        &self.apples_left
    }

    pub fn goal_center(&self) -> (f64, f64) {
        self.goal_center
    }

    /// Render the current view together with the previous action and reward.
    pub fn observe(&self) -> Result<Observation, WorldError> {
        let scene = Scene { textures: &self.annotations.textures, goal: Some(self.annotations.goal), apples: Some(&self.apples_left) };
        let image = render(&self.maze, &scene, &self.pose, &self.config.camera, self.config.block_size)?;
        Ok(self.observation_with(image))
    }

    /// Observation without an image, for agents that do not look.
    pub fn observe_blind(&self) -> Observation {
        self.observation_with(Image::new(0, 0))
    }

    fn observation_with(&self, image: Image) -> Observation {
        Observation { image, prev_action: self.prev_action, prev_reward: self.prev_reward }
    }

    pub fn step(&mut self, action: Action) -> Result<StepOutcome, WorldError> {
        if self.done() {
            return Err(WorldError::StepAfterDone(self.t));
        }
        let mut events = Events::NONE;
        let cfg = &self.config;
        let mut pose = self.pose;
        match action {
            Action::RotateLeft => pose.heading = (pose.heading - cfg.turn_speed).rem_euclid(TAU),
            Action::RotateRight => pose.heading = (pose.heading + cfg.turn_speed).rem_euclid(TAU),
            Action::Forward | Action::Backward => {
                let sign = if action == Action::Forward { 1.0 } else { -1.0 };
                let (s, c) = pose.heading.sin_cos();
                let (nx, hit_x) = slide_axis(&self.maze, pose.x, sign * cfg.forward_speed * c, pose.y, cfg, Axis::X);
                pose.x = nx;
                let (ny, hit_y) = slide_axis(&self.maze, pose.y, sign * cfg.forward_speed * s, pose.x, cfg, Axis::Y);
                pose.y = ny;
                if hit_x || hit_y {
                    events.insert(Events::WALL_CONTACT);
                }
            }
        }
        // Guard against a rem_euclid result of exactly TAU.
        if pose.heading >= TAU {
            pose.heading = 0.0;
        }

        let mut terms = RewardTerms { wall: wall_penalty(&self.maze, &pose, cfg), ..Default::default() };
        let block = self.maze.block_at(pose.x, pose.y, cfg.block_size);
        if self.apples_left.remove(&block) {
            terms.apple = cfg.apple_reward;
            events.insert(Events::APPLE_HIT);
        }
        let mut respawn = None;
        if pose.distance_to(self.goal_center) < cfg.goal_epsilon {
            terms.goal = cfg.goal_reward;
            events.insert(Events::GOAL_HIT);
            events.insert(Events::RESPAWN);
            let fresh = self.spawn_pose();
            respawn = Some(fresh);
        }

        let reward = terms.total();
        self.pose = respawn.unwrap_or(pose);
        self.t += 1;
        self.prev_action = Some(action);
        self.prev_reward = reward;
        Ok(StepOutcome { terms, reward, events, pose, respawn, done: self.done() })
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Axis {
    X,
    Y,
}

/// Move along one axis, clamping the agent's bounding square against walls.
/// Returns the new coordinate and whether a wall stopped the motion.
fn slide_axis(maze: &Maze, pos: f64, delta: f64, other: f64, cfg: &EnvConfig, axis: Axis) -> (f64, bool) {
    const TOL: f64 = 1e-9;
    if delta == 0.0 {
        return (pos, false);
    }
    let b = cfg.block_size;
    let r = cfg.agent_radius;
    let lo = ((other - r) / b + TOL).floor() as i64;
    let hi = ((other + r) / b - TOL).ceil() as i64 - 1;
    let wall_in = |line: i64| {
        (lo..=hi).any(|k| match axis {
            Axis::X => maze.is_wall_at(line, k),
            Axis::Y => maze.is_wall_at(k, line),
        })
    };
    let target = pos + delta;
    if delta > 0.0 {
        let from = ((pos + r) / b - TOL).ceil() as i64 - 1;
        let to = ((target + r) / b - TOL).ceil() as i64 - 1;
        for line in from + 1..=to {
            if wall_in(line) {
                return (line as f64 * b - r, true);
            }
        }
    } else {
        let from = ((pos - r) / b + TOL).floor() as i64;
        let to = ((target - r) / b + TOL).floor() as i64;
        let mut line = from - 1;
        while line >= to {
            if wall_in(line) {
                return ((line + 1) as f64 * b + r, true);
            }
            line -= 1;
        }
    }
    (target, false)
}

/// Distance from the agent centre to the nearest wall block.
pub fn wall_distance(maze: &Maze, pose: &Pose, block_size: f64) -> f64 {
    let cx = (pose.x / block_size).floor() as i64;
    let cy = (pose.y / block_size).floor() as i64;
    let mut best = f64::INFINITY;
    for dy in -1..=1 {
        for dx in -1..=1 {
            let (c, r) = (cx + dx, cy + dy);
            if !maze.is_wall_at(c, r) {
                continue;
            }
            let (x0, y0) = (c as f64 * block_size, r as f64 * block_size);
            let ex = (x0 - pose.x).max(0.0).max(pose.x - (x0 + block_size));
            let ey = (y0 - pose.y).max(0.0).max(pose.y - (y0 + block_size));
            best = best.min(ex.hypot(ey));
        }
    }
    best
}

/// Linear ramp from 0 (clearance >= radius) to the cap (touching a wall).
pub fn wall_penalty(maze: &Maze, pose: &Pose, cfg: &EnvConfig) -> f64 {
    let clearance = (wall_distance(maze, pose, cfg.block_size) - cfg.agent_radius).max(0.0);
    cfg.wall_penalty_cap * (1.0 - clearance / cfg.wall_penalty_radius).max(0.0)
}

/// Read-only context handed to a policy each step. Learned agents only use
/// the observation; scripted agents may use the privileged fields.
pub struct StepView<'a> {
    pub t: usize,
    pub pose: Pose,
    pub maze: &'a Maze,
    pub annotations: &'a MapAnnotations,
    pub config: &'a EnvConfig,
}

/// Maps an observation and recurrent memory to an action and new memory.
pub trait Policy {
    type Memory;

    fn initial_memory(&mut self) -> Self::Memory;

    fn act(&mut self, obs: &Observation, view: &StepView<'_>, memory: Self::Memory) -> Result<(Action, Self::Memory), PolicyError>;

    /// When false the image is left empty and rendering is skipped.
    fn needs_image(&self) -> bool {
        true
    }
}

/// Metadata line of a trajectory log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogHeader {
    pub map_id: Option<usize>,
    pub map_seed: u64,
    pub episode_seed: u64,
    pub config_hash: String,
    pub goal: Option<BlockPos>,
    pub spawn: Option<BlockPos>,
    pub start: Pose,
    pub block_size: f64,
    pub goal_epsilon: f64,
    pub forward_speed: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeLog {
    pub header: LogHeader,
    pub records: Vec<TrajectoryRecord>,
}

#[derive(Serialize, Deserialize)]
struct LogLine {
    t: usize,
    x: f64,
    y: f64,
    h: f64,
    a: usize,
    r: f64,
    e: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    sx: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    sy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    sh: Option<f64>,
}

impl EpisodeLog {
    pub fn total_reward(&self) -> f64 {
        self.records.iter().map(|r| r.reward).sum()
    }

    pub fn goal_hits(&self) -> usize {
        self.records.iter().filter(|r| r.events.contains(Events::GOAL_HIT)).count()
    }

    /// Position at the start of each step: the start pose, then the previous
    /// step's end pose (or its respawn pose).
    pub fn start_poses(&self) -> Vec<Pose> {
        let mut out = Vec::with_capacity(self.records.len());
        let mut cur = self.header.start;
        for r in &self.records {
            out.push(cur);
            cur = r.respawn.unwrap_or(r.pose);
        }
        out
    }

    /// JSON-lines: header object, then one object per step.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        serde_json::to_writer(&mut w, &self.header)?;
        w.write_all(b"\n")?;
        for r in &self.records {
            let line = LogLine {
                t: r.t,
                x: r.pose.x,
                y: r.pose.y,
                h: r.pose.heading,
                a: r.action.index(),
                r: r.reward,
                e: r.events.to_string(),
                sx: r.respawn.map(|p| p.x),
                sy: r.respawn.map(|p| p.y),
                sh: r.respawn.map(|p| p.heading),
            };
            serde_json::to_writer(&mut w, &line)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    /// Parse a JSON-lines log. Per-source reward terms are not stored in the
    /// file; the parsed records carry the total only.
    pub fn read_jsonl<R: BufRead>(r: R) -> Result<Self, WorldError> {
        let mut lines = r.lines();
        let err = |i: usize, e: String| WorldError::Log(format!("line {}: {e}", i + 1));
        let first = lines.next().ok_or_else(|| err(0, "empty log".into()))?.map_err(|e| err(0, e.to_string()))?;
        let header: LogHeader = serde_json::from_str(&first).map_err(|e| err(0, e.to_string()))?;
        let mut records = Vec::new();
        for (i, line) in lines.enumerate() {
            let line = line.map_err(|e| err(i + 1, e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let l: LogLine = serde_json::from_str(&line).map_err(|e| err(i + 1, e.to_string()))?;
            let action = Action::from_index(l.a).ok_or_else(|| err(i + 1, format!("bad action {}", l.a)))?;
            let events = Events::parse(&l.e).ok_or_else(|| err(i + 1, format!("bad event {:?}", l.e)))?;
            let respawn = match (l.sx, l.sy, l.sh) {
                (Some(x), Some(y), Some(heading)) => Some(Pose { x, y, heading }),
                (None, None, None) => None,
                _ => return Err(err(i + 1, "partial respawn pose".into())),
            };
            records.push(TrajectoryRecord {
                t: l.t,
                pose: Pose { x: l.x, y: l.y, heading: l.h },
                action,
                reward: l.r,
                terms: RewardTerms::default(),
                events,
                respawn,
            });
        }
        Ok(EpisodeLog { header, records })
    }
}

/// Identification carried into the log header.
#[derive(Clone, Debug, Default)]
pub struct EpisodeMeta {
    pub map_id: Option<usize>,
    pub config_hash: String,
}

/// Run one full episode. The policy's memory is threaded through every step,
/// including across respawns; it is only fresh at episode start.
pub fn run_episode<P: Policy>(
    maze: Arc<Maze>,
    annotations: MapAnnotations,
    config: &EnvConfig,
    policy: &mut P,
    episode_seed: u64,
    meta: &EpisodeMeta,
) -> Result<EpisodeLog, WorldError> {
    let mut env = Environment::reset(maze, annotations, config.clone(), episode_seed)?;
    let header = LogHeader {
        map_id: meta.map_id,
        map_seed: env.maze().seed(),
        episode_seed,
        config_hash: meta.config_hash.clone(),
        goal: Some(env.annotations().goal),
        spawn: env.annotations().spawn,
        start: env.pose(),
        block_size: config.block_size,
        goal_epsilon: config.goal_epsilon,
        forward_speed: config.forward_speed,
    };
    let mut memory = policy.initial_memory();
    let mut records = Vec::with_capacity(config.episode_len);
    while !env.done() {
        let obs = if policy.needs_image() { env.observe()? } else { env.observe_blind() };
        let t = env.t();
        let view = StepView { t, pose: env.pose(), maze: env.maze(), annotations: env.annotations(), config: env.config() };
        let (action, next) = policy.act(&obs, &view, memory).map_err(|source| WorldError::Agent { step: t, source })?;
        memory = next;
        let out = env.step(action)?;
        records.push(TrajectoryRecord {
            t,
            pose: out.pose,
            action,
            reward: out.reward,
            terms: out.terms,
            events: out.events,
            respawn: out.respawn,
        });
    }
    Ok(EpisodeLog { header, records })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::maze::{generate_maze, parse_map, TextureMap};

    fn corridor() -> (Arc<Maze>, MapAnnotations) {
        let (m, a) = parse_map("#######\n#S...G#\n#######").unwrap();
        (Arc::new(m), a.unwrap())
    }

    #[test]
    fn config_defaults_validate() {
        let cfg = EnvConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.episode_len, 1200);
        assert_eq!(cfg.goal_epsilon, 50.0);
        let mut bad = cfg.clone();
        bad.goal_epsilon = 100.0;
        assert!(bad.validate().is_err());
        let mut bad = cfg;
        bad.wall_penalty_cap = 0.1;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn static_reset_is_stable() {
        let (m, a) = corridor();
        let e1 = Environment::reset(m.clone(), a.clone(), EnvConfig::default(), 1).unwrap();
        let e2 = Environment::reset(m, a, EnvConfig::default(), 2).unwrap();
        assert_eq!(e1.pose(), e2.pose());
        assert_eq!(e1.pose(), Pose { x: 150.0, y: 150.0, heading: 0.0 });
        assert_eq!(e1.observe_blind().prev_reward, 0.0);
        assert_eq!(e1.observe_blind().prev_action, None);
    }

    #[test]
    fn flush_against_wall_forward() {
        let (m, a) = corridor();
        let mut env = Environment::reset(m, a, EnvConfig::default(), 0).unwrap();
        // Face north (heading 3pi/2) and push into the wall.
        for _ in 0..18 {
            env.step(Action::RotateRight).unwrap();
        }
        let mut last = env.step(Action::Forward).unwrap();
        for _ in 0..3 {
            last = env.step(Action::Forward).unwrap();
        }
        assert!(last.events.contains(Events::WALL_CONTACT));
        assert!((last.pose.y - 116.0).abs() < 1e-9, "{:?}", last.pose);
        assert!(last.terms.wall < 0.0 && last.terms.wall >= -0.2);
        assert!((last.terms.wall + 0.2).abs() < 1e-9);
    }

    #[test]
    fn goal_hit_respawns_and_keeps_goal() {
        let (m, a) = corridor();
        let mut env = Environment::reset(m, a, EnvConfig::default(), 0).unwrap();
        let goal = env.goal_center();
        let mut hit = None;
        for _ in 0..20 {
            let out = env.step(Action::Forward).unwrap();
            if out.events.contains(Events::GOAL_HIT) {
                hit = Some(out);
                break;
            }
        }
        let out = hit.expect("walking east reaches the goal");
        assert!(out.reward >= 10.0 - 0.2);
        assert!(out.events.contains(Events::RESPAWN));
        assert_eq!(out.respawn.unwrap(), Pose { x: 150.0, y: 150.0, heading: 0.0 });
        assert_eq!(env.pose(), out.respawn.unwrap());
        assert_eq!(env.goal_center(), goal);
        // 4 blocks east minus the 50-unit radius: hit 25 units short of centre.
        assert!((out.pose.x - 525.0).abs() < 1e-9);
    }

    #[test]
    fn apple_counts_once() {
        let (m, a) = parse_map("#######\n#SA..G#\n#######").unwrap();
        let mut env = Environment::reset(Arc::new(m), a.unwrap(), EnvConfig::default(), 0).unwrap();
        let mut apple_total = 0.0;
        for action in [Action::Forward, Action::Forward, Action::Forward, Action::Backward, Action::Backward, Action::Forward, Action::Forward] {
            apple_total += env.step(action).unwrap().terms.apple;
        }
        assert_eq!(apple_total, 1.0);
    }

    #[test]
    fn step_after_done_errors() {
        let (m, a) = corridor();
        let cfg = EnvConfig { episode_len: 3, ..EnvConfig::default() };
        let mut env = Environment::reset(m, a, cfg, 0).unwrap();
        for _ in 0..3 {
            env.step(Action::RotateLeft).unwrap();
        }
        assert!(env.done());
        assert!(matches!(env.step(Action::Forward), Err(WorldError::StepAfterDone(3))));
    }

    #[test]
    fn random_spawn_coverage() {
        let m = Arc::new(generate_maze(4, 4, 4).unwrap());
        let goal = m.floor_blocks()[0];
        let ann = MapAnnotations { goal, spawn: None, apples: Default::default(), textures: TextureMap::zeros(&m) };
        let mut seen = BTreeSet::new();
        for s in 0..500 {
            let env = Environment::reset(m.clone(), ann.clone(), EnvConfig::default(), s).unwrap();
            let p = env.pose();
            seen.insert(m.block_at(p.x, p.y, 100.0));
        }
        assert!(seen.len() as f64 >= 0.9 * m.floor_count() as f64, "covered {}", seen.len());
        assert!(!seen.contains(&goal));
    }

    #[test]
    fn events_display_round_trip() {
        let mut e = Events::NONE;
        assert_eq!(e.to_string(), "None");
        e.insert(Events::GOAL_HIT);
        e.insert(Events::RESPAWN);
        assert_eq!(e.to_string(), "GoalHit+Respawn");
        assert_eq!(Events::parse("GoalHit+Respawn"), Some(e));
        assert_eq!(Events::parse("Bogus"), None);
    }
}
