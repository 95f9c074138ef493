//! The five-stage experiment matrix, map pools, ablations and the
//! seen/unseen evaluation protocol.

use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::agent::{ActionMode, AgentConfig, AgentError, AgentPolicy, ParameterSet};
use crate::maze::{annotate, assign_textures, default_apple_count, MapAnnotations, MapEntry, MapPool, Maze, MazeError, StageFlags};
use crate::metrics::{aggregate, episode_metrics, EpisodeMetrics, MetricsError, MetricsReport, Stat};
use crate::rng::{mix_seeds, seeded};
use crate::trainer::{train, EpisodeSource, EpisodeSpec, TrainConfig, TrainError, TrainObserver, TrainSummary};
use crate::world::{run_episode, EnvConfig, EpisodeLog, EpisodeMeta, Policy, WorldError};

#[derive(Debug, Error)]
pub enum BenchmarkError {
    #[error("invalid benchmark configuration: {0}")]
    Config(String),
    #[error("map {0} is not in the pool")]
    UnknownMap(usize),
    #[error("manifest: {0}")]
    Manifest(String),
    #[error("episode on map {map_id}, index {episode}: {source}")]
    Episode {
        map_id: usize,
        episode: usize,
        #[source]
        source: Box<BenchmarkError>,
    },
    #[error(transparent)]
    Maze(#[from] MazeError),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    World(#[from] WorldError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Train(#[from] TrainError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Placement {
    Static,
    Random,
}

impl Placement {
    pub fn as_str(self) -> &'static str {
        match self {
            Placement::Static => "static",
            Placement::Random => "random",
        }
    }
}

/// One cell of the benchmark matrix.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StageSpec {
    pub stage_id: u8,
    pub spawn: Placement,
    pub goal: Placement,
    pub map: Placement,
}

impl StageSpec {
    pub fn canonical(stage_id: u8) -> Result<Self, BenchmarkError> {
        use Placement::{Random as R, Static as S};
        let (spawn, goal, map) = match stage_id {
            1 => (S, S, S),
            2 => (R, S, S),
            3 => (S, R, S),
            4 => (R, R, S),
            5 => (R, R, R),
            _ => return Err(BenchmarkError::Config(format!("stage must be 1..=5, got {stage_id}"))),
        };
        Ok(StageSpec { stage_id, spawn, goal, map })
    }

    pub fn all() -> [StageSpec; 5] {
        [1, 2, 3, 4, 5].map(|i| StageSpec::canonical(i).expect("canonical stage"))
    }

    pub fn flags(&self) -> StageFlags {
        StageFlags { goal_static: self.goal == Placement::Static, spawn_static: self.spawn == Placement::Static }
    }

    /// With a static goal the goal position is learned during training, so
    /// Latency-1:>1 sits near 1 by construction and carries little signal.
    pub fn latency_trivial(&self) -> bool {
        self.goal == Placement::Static
    }
}

impl fmt::Display for StageSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "stage {} (spawn {}, goal {}, map {})",
            self.stage_id,
            self.spawn.as_str(),
            self.goal.as_str(),
            self.map.as_str()
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AblationFlags {
    pub apples_present: bool,
    pub textures_random: bool,
}

impl Default for AblationFlags {
    fn default() -> Self {
        AblationFlags { apples_present: true, textures_random: true }
    }
}

impl AblationFlags {
    /// The four cells of the apples × textures grid.
    pub fn grid() -> [AblationFlags; 4] {
        [(true, true), (true, false), (false, true), (false, false)]
            .map(|(apples_present, textures_random)| AblationFlags { apples_present, textures_random })
    }
}

/// Which maps a stage is evaluated on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalVariant {
    /// The static subset of the training maps.
    Seen,
    /// The held-out test maps; random-map stage only.
    Unseen,
}

impl FromStr for EvalVariant {
    type Err = BenchmarkError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "seen" => Ok(EvalVariant::Seen),
            "unseen" => Ok(EvalVariant::Unseen),
            _ => Err(BenchmarkError::Config(format!("variant must be seen or unseen, got {s:?}"))),
        }
    }
}

impl EvalVariant {
    pub fn as_str(self) -> &'static str {
        match self {
            EvalVariant::Seen => "seen",
            EvalVariant::Unseen => "unseen",
        }
    }
}

/// Size of the static subset when the training split is large enough.
pub const STATIC_SUBSET_SIZE: usize = 10;

/// Generate `n_train + n_test` maps with distinct seeds. Ids `0..n_train`
/// are training maps, the rest test maps; the static subset is drawn from
/// the training ids.
pub fn build_pool(pool_seed: u64, n_train: usize, n_test: usize, cols: usize, rows: usize) -> Result<MapPool, BenchmarkError> {
    if n_train == 0 || n_test == 0 {
        return Err(BenchmarkError::Config("pool needs at least one train and one test map".into()));
    }
    if cols == 0 || rows == 0 {
        return Err(BenchmarkError::Config("maze dimensions must be positive".into()));
    }
    let mut rng = seeded(mix_seeds(&[pool_seed, 0x9001]));
    let mut seen = std::collections::HashSet::new();
    let mut entries = Vec::with_capacity(n_train + n_test);
    while entries.len() < n_train + n_test {
        let seed: u64 = rng.random();
        if seen.insert(seed) {
            entries.push(MapEntry { id: entries.len(), seed, cols, rows });
        }
    }
    let mut ids: Vec<usize> = (0..n_train).collect();
    let k = STATIC_SUBSET_SIZE.min(n_train);
    let mut pick = seeded(mix_seeds(&[pool_seed, 0x57A7]));
    for i in 0..k {
        let j = pick.random_range(i..n_train);
        ids.swap(i, j);
    }
    let mut static_subset = ids[..k].to_vec();
    static_subset.sort_unstable();
    Ok(MapPool { entries, train_ids: (0..n_train).collect(), test_ids: (n_train..n_train + n_test).collect(), static_subset })
}

/// Lowercase hex SHA-256.
pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn pool_hash(pool: &MapPool) -> String {
    sha256_hex(pool.manifest().as_bytes())
}

fn load_map(pool: &MapPool, id: usize) -> Result<Arc<Maze>, BenchmarkError> {
    let entry = pool.entry(id).ok_or(BenchmarkError::UnknownMap(id))?;
    Ok(Arc::new(entry.generate()?))
}

/// Goal, spawn, apples and textures for one episode of a stage.
pub fn episode_annotations(maze: &Maze, stage: &StageSpec, flags: AblationFlags, episode_seed: u64) -> Result<MapAnnotations, BenchmarkError> {
    let apples = if flags.apples_present { default_apple_count(maze) } else { 0 };
    let mut ann = annotate(maze, stage.flags(), apples, episode_seed)?;
    ann.textures = assign_textures(maze, flags.textures_random.then(|| mix_seeds(&[maze.seed(), 0x7E7])));
    Ok(ann)
}

/// Everything that determines an evaluation run besides the pool, the
/// environment config and the agent.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalSettings {
    pub stage: StageSpec,
    pub variant: EvalVariant,
    pub episodes_per_map: usize,
    pub flags: AblationFlags,
    pub eval_seed: u64,
    pub mode: ActionMode,
    /// Episode-level parallelism; results do not depend on it.
    pub workers: usize,
    /// Copied into every log header.
    pub config_hash: String,
}

impl EvalSettings {
    pub fn new(stage: StageSpec, eval_seed: u64) -> Self {
        EvalSettings {
            stage,
            variant: EvalVariant::Seen,
            episodes_per_map: 10,
            flags: AblationFlags::default(),
            eval_seed,
            mode: ActionMode::Sampled,
            workers: 1,
            config_hash: String::new(),
        }
    }

    /// Map ids evaluated under these settings.
    pub fn map_ids(&self, pool: &MapPool) -> Result<Vec<usize>, BenchmarkError> {
        match self.variant {
            EvalVariant::Seen => Ok(pool.static_subset.clone()),
            EvalVariant::Unseen if self.stage.map == Placement::Random => Ok(pool.test_ids.clone()),
            EvalVariant::Unseen => Err(BenchmarkError::Config(format!("{} uses static maps; only the seen variant applies", self.stage))),
        }
    }
}

/// Seed of one evaluation episode; shared by every ablation cell.
pub fn episode_seed(eval_seed: u64, map_id: usize, episode: usize) -> u64 {
    mix_seeds(&[eval_seed, map_id as u64, episode as u64])
}

#[derive(Clone, Debug)]
pub struct StageResult {
    pub stage: StageSpec,
    pub variant: EvalVariant,
    pub flags: AblationFlags,
    pub report: MetricsReport,
    /// Ordered by map id position, then episode index.
    pub logs: Vec<EpisodeLog>,
    pub map_ids: Vec<usize>,
    pub latency_trivial: bool,
}

/// Evaluate any policy on a stage. `policy_for` receives the episode seed.
pub fn run_stage_with<P, F>(settings: &EvalSettings, pool: &MapPool, env: &EnvConfig, policy_for: F) -> Result<StageResult, BenchmarkError>
where
    P: Policy,
    F: Fn(u64) -> Result<P, BenchmarkError> + Sync,
{
    env.validate()?;
    if settings.episodes_per_map == 0 {
        return Err(BenchmarkError::Config("episodes_per_map must be positive".into()));
    }
    let map_ids = settings.map_ids(pool)?;
    let mazes = map_ids.iter().map(|&id| load_map(pool, id)).collect::<Result<Vec<_>, _>>()?;
    let jobs: Vec<(usize, usize)> = (0..map_ids.len()).flat_map(|m| (0..settings.episodes_per_map).map(move |e| (m, e))).collect();

    type Slot = Option<Result<(EpisodeMetrics, EpisodeLog), BenchmarkError>>;
    let slots: Mutex<Vec<Slot>> = Mutex::new((0..jobs.len()).map(|_| None).collect());
    let next = AtomicUsize::new(0);
    let run_one = |(m, e): (usize, usize)| -> Result<(EpisodeMetrics, EpisodeLog), BenchmarkError> {
        let map_id = map_ids[m];
        let maze = &mazes[m];
        let seed = episode_seed(settings.eval_seed, map_id, e);
        let ann = episode_annotations(maze, &settings.stage, settings.flags, seed)?;
        let mut policy = policy_for(seed)?;
        let meta = EpisodeMeta { map_id: Some(map_id), config_hash: settings.config_hash.clone() };
        let log = run_episode(maze.clone(), ann, env, &mut policy, seed, &meta)?;
        Ok((episode_metrics(&log, maze, e)?, log))
    };
    let workers = settings.workers.clamp(1, jobs.len().max(1));
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(&job) = jobs.get(i) else { break };
                let out = run_one(job).map_err(|source| BenchmarkError::Episode {
                    map_id: map_ids[job.0],
                    episode: job.1,
                    source: Box::new(source),
                });
                let failed = out.is_err();
                slots.lock().expect("result slots")[i] = Some(out);
                if failed {
                    // Stop handing out work; the first error is reported.
                    next.store(jobs.len(), Ordering::Relaxed);
                }
            });
        }
    });

    let mut rows = Vec::with_capacity(jobs.len());
    let mut logs = Vec::with_capacity(jobs.len());
    for slot in slots.into_inner().expect("result slots") {
        match slot {
            Some(Ok((row, log))) => {
                rows.push(row);
                logs.push(log);
            }
            Some(Err(e)) => return Err(e),
            None => {}
        }
    }
    if rows.len() != jobs.len() {
        return Err(BenchmarkError::Config("evaluation stopped before all episodes ran".into()));
    }
    Ok(StageResult {
        stage: settings.stage,
        variant: settings.variant,
        flags: settings.flags,
        report: aggregate(rows)?,
        logs,
        map_ids,
        latency_trivial: settings.stage.latency_trivial(),
    })
}

/// Check that a parameter set fits the agent and the camera.
pub fn check_compatible(agent: &AgentConfig, params: &ParameterSet, env: &EnvConfig) -> Result<(), BenchmarkError> {
    agent.validate()?;
    params.check(agent)?;
    if env.camera.width != agent.width || env.camera.height != agent.height {
        return Err(BenchmarkError::Config(format!(
            "camera {}x{} does not match agent input {}x{}",
            env.camera.width, env.camera.height, agent.width, agent.height
        )));
    }
    Ok(())
}

/// Evaluate a learned agent. Compatibility is checked before any episode.
pub fn run_stage(settings: &EvalSettings, agent: &AgentConfig, params: &ParameterSet, pool: &MapPool, env: &EnvConfig) -> Result<StageResult, BenchmarkError> {
    check_compatible(agent, params, env)?;
    run_stage_with(settings, pool, env, |seed| Ok(AgentPolicy::new(agent.clone(), params.clone(), settings.mode, seed)?))
}

/// One cell of the apples × textures grid.
#[derive(Clone, Debug)]
pub struct AblationCell {
    pub flags: AblationFlags,
    pub result: StageResult,
}

/// Evaluate the four apples × textures cells with identical episode seeds.
pub fn run_ablation_grid(base: &EvalSettings, agent: &AgentConfig, params: &ParameterSet, pool: &MapPool, env: &EnvConfig) -> Result<Vec<AblationCell>, BenchmarkError> {
    check_compatible(agent, params, env)?;
    AblationFlags::grid()
        .into_iter()
        .map(|flags| {
            let settings = EvalSettings { flags, ..base.clone() };
            Ok(AblationCell { flags, result: run_stage(&settings, agent, params, pool, env)? })
        })
        .collect()
}

/// Episode sampling for training on a stage.
pub struct StageSource {
    stage: StageSpec,
    flags: AblationFlags,
    maps: Vec<(usize, Arc<Maze>)>,
}

impl StageSource {
    /// Static-map stages train on `train_map` (default: the first map of the
    /// static subset). The random-map stage samples uniformly per episode
    /// from the first `subset` training ids (default: all of them).
    pub fn new(stage: StageSpec, flags: AblationFlags, pool: &MapPool, train_map: Option<usize>, subset: Option<usize>) -> Result<Self, BenchmarkError> {
        let ids: Vec<usize> = match stage.map {
            Placement::Static => {
                let id = match train_map {
                    Some(id) => id,
                    None => *pool.static_subset.first().ok_or_else(|| BenchmarkError::Config("pool has no static subset".into()))?,
                };
                if !pool.train_ids.contains(&id) {
                    return Err(BenchmarkError::Config(format!("map {id} is not a training map")));
                }
                vec![id]
            }
            Placement::Random => {
                let n = subset.unwrap_or(pool.train_ids.len());
                if n == 0 || n > pool.train_ids.len() {
                    return Err(BenchmarkError::Config(format!("subset size {n} outside 1..={}", pool.train_ids.len())));
                }
                pool.train_ids[..n].to_vec()
            }
        };
        let maps = ids.into_iter().map(|id| Ok((id, load_map(pool, id)?))).collect::<Result<_, BenchmarkError>>()?;
        Ok(StageSource { stage, flags, maps })
    }

    pub fn map_ids(&self) -> Vec<usize> {
        self.maps.iter().map(|(id, _)| *id).collect()
    }
}

impl EpisodeSource for StageSource {
    fn episode(&self, _worker: usize, _episode_index: u64, seed: u64) -> Result<EpisodeSpec, String> {
        let (id, maze) = if self.maps.len() == 1 {
            &self.maps[0]
        } else {
            &self.maps[seeded(mix_seeds(&[seed, 0x3A9])).random_range(0..self.maps.len())]
        };
        let annotations = episode_annotations(maze, &self.stage, self.flags, seed).map_err(|e| e.to_string())?;
        Ok(EpisodeSpec { map_id: Some(*id), maze: maze.clone(), annotations })
    }
}

/// Train on a stage; checkpoints arrive through `observer` at the
/// configured cadence.
#[allow(clippy::too_many_arguments)]
pub fn train_stage(
    stage: StageSpec,
    flags: AblationFlags,
    pool: &MapPool,
    train_map: Option<usize>,
    subset: Option<usize>,
    agent: &AgentConfig,
    env: &EnvConfig,
    cfg: &TrainConfig,
    initial: ParameterSet,
    observer: &mut dyn TrainObserver,
) -> Result<TrainSummary, BenchmarkError> {
    let source = StageSource::new(stage, flags, pool, train_map, subset)?;
    Ok(train(agent, env, cfg, initial, &source, observer)?)
}

/// Plain-text record of an evaluation run: with the pool, the checkpoint
/// and the environment config it names, the run replays exactly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageManifest {
    pub format: u32,
    pub stage: StageSpec,
    pub variant: EvalVariant,
    pub episodes_per_map: usize,
    pub flags: AblationFlags,
    pub eval_seed: u64,
    pub action_mode: ActionMode,
    pub pool_hash: String,
    pub checkpoint_hash: String,
    pub config_hash: String,
    pub map_ids: Vec<usize>,
}

impl StageManifest {
    pub const FORMAT: u32 = 1;

    pub fn new(settings: &EvalSettings, pool: &MapPool, checkpoint_hash: String) -> Result<Self, BenchmarkError> {
        Ok(StageManifest {
            format: Self::FORMAT,
            stage: settings.stage,
            variant: settings.variant,
            episodes_per_map: settings.episodes_per_map,
            flags: settings.flags,
            eval_seed: settings.eval_seed,
            action_mode: settings.mode,
            pool_hash: pool_hash(pool),
            checkpoint_hash,
            config_hash: settings.config_hash.clone(),
            map_ids: settings.map_ids(pool)?,
        })
    }

    pub fn to_text(&self) -> Result<String, BenchmarkError> {
        toml::to_string(self).map_err(|e| BenchmarkError::Manifest(e.to_string()))
    }

    pub fn parse(text: &str) -> Result<Self, BenchmarkError> {
        let m: StageManifest = toml::from_str(text).map_err(|e| BenchmarkError::Manifest(e.to_string()))?;
        if m.format != Self::FORMAT {
            return Err(BenchmarkError::Manifest(format!("unsupported format {}", m.format)));
        }
        StageSpec::canonical(m.stage.stage_id).and_then(|c| {
            if c == m.stage {
                Ok(())
            } else {
                Err(BenchmarkError::Manifest(format!("stage {} has non-canonical placements", m.stage.stage_id)))
            }
        })?;
        Ok(m)
    }

    /// Settings for a replay, after checking the pool and checkpoint match.
    pub fn replay_settings(&self, pool: &MapPool, checkpoint_hash: &str, workers: usize) -> Result<EvalSettings, BenchmarkError> {
        let actual = pool_hash(pool);
        if actual != self.pool_hash {
            return Err(BenchmarkError::Manifest(format!("pool hash {actual} does not match manifest {}", self.pool_hash)));
        }
        if checkpoint_hash != self.checkpoint_hash {
            return Err(BenchmarkError::Manifest(format!(
                "checkpoint hash {checkpoint_hash} does not match manifest {}",
                self.checkpoint_hash
            )));
        }
        let settings = EvalSettings {
            stage: self.stage,
            variant: self.variant,
            episodes_per_map: self.episodes_per_map,
            flags: self.flags,
            eval_seed: self.eval_seed,
            mode: self.action_mode,
            workers,
            config_hash: self.config_hash.clone(),
        };
        if settings.map_ids(pool)? != self.map_ids {
            return Err(BenchmarkError::Manifest("map ids differ from the pool's split".into()));
        }
        Ok(settings)
    }
}

/// One row of the benchmark summary.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SummaryRow {
    pub stage: u8,
    pub variant: EvalVariant,
    pub latency_ratio: Stat,
    pub latency_trivial: bool,
    pub dist_ineff_bfs: Stat,
    pub dist_ineff_manhattan: Stat,
    pub reward: Stat,
    pub goal_hits: Stat,
}

impl SummaryRow {
    pub fn of(result: &StageResult) -> Self {
        let r = &result.report;
        SummaryRow {
            stage: result.stage.stage_id,
            variant: result.variant,
            latency_ratio: r.latency_ratio,
            latency_trivial: result.latency_trivial,
            dist_ineff_bfs: r.dist_ineff_bfs,
            dist_ineff_manhattan: r.dist_ineff_manhattan,
            reward: r.reward,
            goal_hits: r.goal_hits,
        }
    }
}

pub const SUMMARY_CSV_HEADER: [&str; 13] = [
    "stage",
    "variant",
    "latency_mean",
    "latency_std",
    "latency_count",
    "latency_trivial",
    "dist_ineff_bfs_mean",
    "dist_ineff_bfs_std",
    "dist_ineff_manhattan_mean",
    "dist_ineff_manhattan_std",
    "reward_mean",
    "reward_std",
    "goal_hits_mean",
];

impl SummaryRow {
    fn record(&self) -> [String; 13] {
        let f = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        [
            self.stage.to_string(),
            self.variant.as_str().to_string(),
            f(self.latency_ratio.mean),
            f(self.latency_ratio.std),
            self.latency_ratio.count.to_string(),
            self.latency_trivial.to_string(),
            f(self.dist_ineff_bfs.mean),
            f(self.dist_ineff_bfs.std),
            f(self.dist_ineff_manhattan.mean),
            f(self.dist_ineff_manhattan.std),
            f(self.reward.mean),
            f(self.reward.std),
            f(self.goal_hits.mean),
        ]
    }
}

fn csv_err(e: csv::Error) -> BenchmarkError {
    BenchmarkError::Metrics(MetricsError::from(e))
}

/// Summary CSV, one row per stage result.
pub fn write_summary_csv<W: std::io::Write>(rows: &[SummaryRow], w: W) -> Result<(), BenchmarkError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(SUMMARY_CSV_HEADER).map_err(csv_err)?;
    for r in rows {
        out.write_record(r.record()).map_err(csv_err)?;
    }
    out.flush().map_err(|e| BenchmarkError::Metrics(MetricsError::Io(e)))?;
    Ok(())
}

/// Ablation table: the two flag columns followed by the summary columns.
pub fn write_ablation_csv<W: std::io::Write>(cells: &[AblationCell], w: W) -> Result<(), BenchmarkError> {
    let mut out = csv::Writer::from_writer(w);
    let header = ["apples_present", "textures_random"].into_iter().chain(SUMMARY_CSV_HEADER);
    out.write_record(header).map_err(csv_err)?;
    for c in cells {
        let flags = [c.flags.apples_present.to_string(), c.flags.textures_random.to_string()];
        out.write_record(flags.into_iter().chain(SummaryRow::of(&c.result).record())).map_err(csv_err)?;
    }
    out.flush().map_err(|e| BenchmarkError::Metrics(MetricsError::Io(e)))?;
    Ok(())
}
