//! Asynchronous advantage actor-critic training.
//!
//! Workers each own an environment, a tape and a parameter snapshot. A
//! worker rolls out up to `t_max` steps with its snapshot, differentiates the
//! combined loss and hands the clipped gradient to the [`SharedStore`], which
//! applies it with a single shared Adam state. Gradients are never applied
//! to a worker's snapshot; the worker re-syncs before each rollout.

use std::io::Write;
use std::sync::mpsc;
use std::sync::{Arc, Mutex};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{
    bind_params, bind_state, forward, forward_on_tape, read_output, read_state, sample_action, ActionMode, AgentConfig, AgentError,
    BoundParams, OutputVars, ParameterSet, RecurrentState, StateVars,
};
use crate::autodiff::{depth_ce, entropy, loop_ce, policy_gradient_term, value_mse, AutodiffError, Tape, Var};
use crate::maze::{MapAnnotations, Maze};
use crate::raycast::{coarse_depth_classes, DepthBuckets, LoopClosureTracker, Observation};
use crate::rng::{mix_seeds, seeded, SeededRng};
use crate::world::{Action, EnvConfig, Environment, WorldError};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    World(#[from] WorldError),
    #[error("gradient shapes do not match the parameters")]
    GradientShape,
    #[error("non-finite gradient")]
    NonFiniteGradient,
    #[error("episode source: {0}")]
    Source(String),
    #[error("all workers failed; first failure: {0}")]
    AllWorkersFailed(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum OptimizerKind {
    Adam,
    /// Plain gradient descent, for debugging and linearity checks.
    Sgd,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub workers: usize,
    pub t_max: usize,
    pub gamma: f64,
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    pub beta_value: f64,
    pub beta_entropy: f64,
    pub beta_depth1: f64,
    pub beta_depth2: f64,
    pub beta_loop: f64,
    pub clip_norm: f64,
    /// Environment-step budget shared by all workers.
    pub max_steps: u64,
    /// Emit a parameter snapshot every this many environment steps.
    pub checkpoint_every: Option<u64>,
    pub seed: u64,
    pub loop_t_min: usize,
    /// Loop-closure radius in world units.
    pub loop_radius: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            workers: 4,
            t_max: 20,
            gamma: 0.99,
            optimizer: OptimizerKind::Adam,
            learning_rate: 1e-4,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            beta_value: 0.5,
            beta_entropy: 0.01,
            beta_depth1: 0.33,
            beta_depth2: 0.33,
            beta_loop: 0.33,
            clip_norm: 40.0,
            max_steps: 2_000_000,
            checkpoint_every: None,
            seed: 0,
            loop_t_min: 30,
            loop_radius: 50.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.to_string()));
        if self.workers == 0 {
            return bad("workers must be at least 1");
        }
        if self.t_max == 0 {
            return bad("t_max must be at least 1");
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad("gamma must lie in (0, 1]");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning rate must be positive");
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) || self.adam_epsilon <= 0.0 {
            return bad("Adam betas must lie in [0, 1) and epsilon must be positive");
        }
        let weights = [self.beta_value, self.beta_entropy, self.beta_depth1, self.beta_depth2, self.beta_loop];
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return bad("loss weights must be finite and non-negative");
        }
        if !(self.clip_norm > 0.0) {
            return bad("clip norm must be positive");
        }
        if self.checkpoint_every == Some(0) {
            return bad("checkpoint cadence must be positive");
        }
        if !(self.loop_radius > 0.0) {
            return bad("loop-closure radius must be positive");
        }
        Ok(())
    }
}

/// `R_t = r_t + gamma * R_{t+1}`, seeded with `bootstrap`.
pub fn discounted_returns(rewards: &[f64], gamma: f64, bootstrap: f64) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut acc = bootstrap;
    for (o, r) in out.iter_mut().zip(rewards).rev() {
        acc = r + gamma * acc;
        *o = acc;
    }
    out
}

/// One recorded step of a rollout together with its auxiliary targets.
#[derive(Clone, Debug)]
pub struct RolloutStep {
    pub observation: Observation,
    pub action: Action,
    pub reward: f64,
    pub depth_target: Vec<usize>,
    pub loop_target: bool,
}

#[derive(Clone, Debug)]
pub struct Rollout {
    pub initial_state: RecurrentState,
    pub steps: Vec<RolloutStep>,
    /// Value of the state after the last step; 0 when the episode ended.
    pub bootstrap_value: f64,
}

/// Unweighted per-term loss sums over a rollout plus the weighted total.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub policy: f64,
    pub value: f64,
    pub entropy: f64,
    pub depth1: f64,
    pub depth2: f64,
    pub loop_closure: f64,
    pub total: f64,
}

impl LossTerms {
    pub fn is_finite(&self) -> bool {
        [self.policy, self.value, self.entropy, self.depth1, self.depth2, self.loop_closure, self.total].iter().all(|v| v.is_finite())
    }
}

/// Gradients in canonical parameter order.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientSet {
    pub grads: Vec<Vec<f64>>,
}

impl GradientSet {
    pub fn zeros_like(params: &ParameterSet) -> Self {
        GradientSet { grads: (0..params.len()).map(|i| vec![0.0; params.tensor(i).len()]).collect() }
    }

    pub fn global_norm(&self) -> f64 {
        self.grads.iter().flatten().map(|g| g * g).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.grads.iter().flatten().all(|g| g.is_finite())
    }

    /// Rescale so the global norm is at most `max_norm`; returns the norm
    /// before clipping.
    pub fn clip(&mut self, max_norm: f64) -> f64 {
        let norm = self.global_norm();
        if norm > max_norm {
            let k = max_norm / norm;
            self.grads.iter_mut().flatten().for_each(|g| *g *= k);
        }
        norm
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.grads.iter().flatten().copied().collect()
    }
}

/// Records the forward passes of a rollout on one tape and turns them into
/// a loss. Both the acting worker and [`accumulate_gradients`] use it, so
/// the two paths evaluate the same operations in the same order.
pub struct RolloutRecorder<'a> {
    config: &'a AgentConfig,
    tape: Tape,
    bound: BoundParams,
    state: StateVars,
    outputs: Vec<OutputVars>,
    image_grad: bool,
}

impl<'a> RolloutRecorder<'a> {
    pub fn new(config: &'a AgentConfig, params: &ParameterSet, initial: &RecurrentState) -> Self {
        let mut tape = Tape::new();
        let bound = bind_params(&mut tape, params, true);
        let state = bind_state(&mut tape, initial);
        RolloutRecorder { config, tape, bound, state, outputs: Vec::new(), image_grad: false }
    }

    /// Parameters are held constant and every image is a gradient leaf:
    /// [`RolloutRecorder::finish_saliency`] then yields the loss gradient
    /// with respect to each input image.
    pub fn for_saliency(config: &'a AgentConfig, params: &ParameterSet, initial: &RecurrentState) -> Self {
        let mut tape = Tape::new();
        let bound = bind_params(&mut tape, params, false);
        let state = bind_state(&mut tape, initial);
        RolloutRecorder { config, tape, bound, state, outputs: Vec::new(), image_grad: true }
    }

    /// Run the network on `obs` and return the action distribution.
    pub fn step(&mut self, obs: &Observation) -> Result<[f64; Action::COUNT], AgentError> {
        let (out, next) = forward_on_tape(&mut self.tape, self.config, &self.bound, obs, self.state, self.image_grad)?;
        self.state = next;
        self.outputs.push(out);
        Ok(read_output(&self.tape, &out).policy)
    }

    pub fn state(&self) -> RecurrentState {
        read_state(&self.tape, &self.state)
    }

    pub fn len(&self) -> usize {
        self.outputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outputs.is_empty()
    }

    /// Build the combined loss, differentiate it and return the unclipped
    /// gradients with the per-term losses.
    pub fn finish(
        mut self,
        steps: &[StepTargets<'_>],
        bootstrap_value: f64,
        cfg: &TrainConfig,
    ) -> Result<(GradientSet, LossTerms), TrainError> {
        let (total, terms) = self.assemble_loss(steps, bootstrap_value, cfg, None)?;
        let tape = &self.tape;
        let grads = tape.backward(total)?;
        let set = GradientSet { grads: self.bound.vars.iter().map(|&v| grads.get_or_zeros(v, tape.value(v).len())).collect() };
        Ok((set, terms))
    }

    /// The same loss as [`RolloutRecorder::finish`], differentiated with
    /// respect to the input images (`[3, H, W]` each, in step order).
    pub fn finish_saliency(
        mut self,
        steps: &[StepTargets<'_>],
        bootstrap_value: f64,
        cfg: &TrainConfig,
    ) -> Result<(Vec<Vec<f64>>, LossTerms), TrainError> {
        if !self.image_grad {
            return Err(TrainError::Config("recorder was not built for saliency".into()));
        }
        let (total, terms) = self.assemble_loss(steps, bootstrap_value, cfg, None)?;
        let tape = &self.tape;
        let grads = tape.backward(total)?;
        let images = self.outputs.iter().map(|o| grads.get_or_zeros(o.image, tape.value(o.image).len())).collect();
        Ok((images, terms))
    }

    /// Value estimates of the recorded steps.
    pub fn values(&self) -> Vec<f64> {
        self.outputs.iter().map(|o| self.tape.value(o.value).item()).collect()
    }

    /// Loss terms only, with the advantages' baseline taken from `baseline`
    /// instead of the recorded values. The advantage is a constant in the
    /// policy term, so this is the function whose parameter gradient
    /// [`RolloutRecorder::finish`] returns when `baseline` equals
    /// [`RolloutRecorder::values`].
    pub fn loss_with_baseline(mut self, steps: &[StepTargets<'_>], bootstrap_value: f64, cfg: &TrainConfig, baseline: &[f64]) -> Result<LossTerms, TrainError> {
        if baseline.len() != self.outputs.len() {
            return Err(TrainError::Config(format!("{} baseline values for {} steps", baseline.len(), self.outputs.len())));
        }
        Ok(self.assemble_loss(steps, bootstrap_value, cfg, Some(baseline))?.1)
    }

    fn assemble_loss(&mut self, steps: &[StepTargets<'_>], bootstrap_value: f64, cfg: &TrainConfig, baseline: Option<&[f64]>) -> Result<(Var, LossTerms), TrainError> {
        if steps.len() != self.outputs.len() || steps.is_empty() {
            return Err(TrainError::Config(format!("{} targets for {} recorded steps", steps.len(), self.outputs.len())));
        }
        let rewards: Vec<f64> = steps.iter().map(|s| s.reward).collect();
        let returns = discounted_returns(&rewards, cfg.gamma, bootstrap_value);
        let tape = &mut self.tape;
        let mut terms = LossTerms::default();
        let mut parts: Vec<Var> = Vec::new();
        for (i, ((out, target), ret)) in self.outputs.iter().zip(steps).zip(&returns).enumerate() {
            let value = baseline.map_or_else(|| tape.value(out.value).item(), |b| b[i]);
            let pg = policy_gradient_term(tape, out.log_probs, target.action.index(), ret - value)?;
            terms.policy += tape.value(pg).item();
            parts.push(pg);

            let v = value_mse(tape, out.value, *ret)?;
            terms.value += tape.value(v).item();
            if cfg.beta_value > 0.0 {
                parts.push(tape.scale(v, cfg.beta_value)?);
            }

            let h = entropy(tape, out.probs, out.log_probs)?;
            terms.entropy += tape.value(h).item();
            if cfg.beta_entropy > 0.0 {
                parts.push(tape.scale(h, -cfg.beta_entropy)?);
            }

            if cfg.beta_depth1 > 0.0 || cfg.beta_depth2 > 0.0 {
                let d1 = depth_ce(tape, out.depth1, target.depth_target, self.config.depth_buckets)?;
                let d2 = depth_ce(tape, out.depth2, target.depth_target, self.config.depth_buckets)?;
                terms.depth1 += tape.value(d1).item();
                terms.depth2 += tape.value(d2).item();
                if cfg.beta_depth1 > 0.0 {
                    parts.push(tape.scale(d1, cfg.beta_depth1)?);
                }
                if cfg.beta_depth2 > 0.0 {
                    parts.push(tape.scale(d2, cfg.beta_depth2)?);
                }
            }
            if cfg.beta_loop > 0.0 {
                let l = loop_ce(tape, out.loop_logit, target.loop_target)?;
                terms.loop_closure += tape.value(l).item();
                parts.push(tape.scale(l, cfg.beta_loop)?);
            }
        }
        let mut total = parts[0];
        for &p in &parts[1..] {
            total = tape.add(total, p)?;
        }
        terms.total = tape.value(total).item();
        Ok((total, terms))
    }
}

/// The per-step quantities the loss needs besides the network outputs.
#[derive(Clone, Copy, Debug)]
pub struct StepTargets<'a> {
    pub action: Action,
    pub reward: f64,
    pub depth_target: &'a [usize],
    pub loop_target: bool,
}

impl<'a> From<&'a RolloutStep> for StepTargets<'a> {
    fn from(s: &'a RolloutStep) -> Self {
        StepTargets { action: s.action, reward: s.reward, depth_target: &s.depth_target, loop_target: s.loop_target }
    }
}

/// Re-run a stored rollout on a fresh tape and return clipped gradients, the
/// pre-clip global norm and the loss terms.
pub fn accumulate_gradients(
    agent: &AgentConfig,
    params: &ParameterSet,
    rollout: &Rollout,
    cfg: &TrainConfig,
) -> Result<(GradientSet, f64, LossTerms), TrainError> {
    let mut rec = RolloutRecorder::new(agent, params, &rollout.initial_state);
    for s in &rollout.steps {
        rec.step(&s.observation)?;
    }
    let targets: Vec<StepTargets<'_>> = rollout.steps.iter().map(StepTargets::from).collect();
    let (mut grads, terms) = rec.finish(&targets, rollout.bootstrap_value, cfg)?;
    if !grads.is_finite() {
        return Err(TrainError::NonFiniteGradient);
    }
    let norm = grads.clip(cfg.clip_norm);
    Ok((grads, norm, terms))
}

/// First and second moment estimates shared by all workers.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub t: u64,
}

impl AdamState {
    pub fn new(params: &ParameterSet) -> Self {
        let z = GradientSet::zeros_like(params).grads;
        AdamState { m: z.clone(), v: z, t: 0 }
    }
}

/// One optimiser step on `params` in place.
pub fn adam_apply(params: &mut ParameterSet, state: &mut AdamState, grads: &GradientSet, cfg: &TrainConfig) -> Result<(), TrainError> {
    if grads.grads.len() != params.len() || grads.grads.iter().enumerate().any(|(i, g)| g.len() != params.tensor(i).len()) {
        return Err(TrainError::GradientShape);
    }
    match cfg.optimizer {
        OptimizerKind::Sgd => {
            for (i, g) in grads.grads.iter().enumerate() {
                for (p, gi) in params.tensor_mut(i).data_mut().iter_mut().zip(g) {
                    *p -= cfg.learning_rate * gi;
                }
            }
        }
        OptimizerKind::Adam => {
            state.t += 1;
            let (b1, b2) = (cfg.adam_beta1, cfg.adam_beta2);
            let c1 = 1.0 - b1.powi(state.t.min(i32::MAX as u64) as i32);
            let c2 = 1.0 - b2.powi(state.t.min(i32::MAX as u64) as i32);
            let step = cfg.learning_rate * c2.sqrt() / c1;
            let eps = cfg.adam_epsilon * c2.sqrt();
            for (i, g) in grads.grads.iter().enumerate() {
                let (m, v) = (&mut state.m[i], &mut state.v[i]);
                let p = params.tensor_mut(i).data_mut();
                for k in 0..g.len() {
                    m[k] = b1 * m[k] + (1.0 - b1) * g[k];
                    v[k] = b2 * v[k] + (1.0 - b2) * g[k] * g[k];
                    p[k] -= step * m[k] / (v[k].sqrt() + eps);
                }
            }
        }
    }
    Ok(())
}

struct StoreState {
    params: ParameterSet,
    adam: AdamState,
    global_step: u64,
    updates: u64,
}

/// Master parameters, optimiser state and step counter behind one lock.
///
/// Readers get an immutable snapshot; an apply copies any tensor a snapshot
/// still holds before writing, so no reader ever sees a half-updated tensor.
pub struct SharedStore {
    inner: Mutex<StoreState>,
}

/// Result of one apply.
pub struct Applied {
    pub global_step: u64,
    pub updates: u64,
}

impl SharedStore {
    pub fn new(params: ParameterSet) -> Self {
        let adam = AdamState::new(&params);
        SharedStore { inner: Mutex::new(StoreState { params, adam, global_step: 0, updates: 0 }) }
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, StoreState> {
        // A worker that panicked mid-apply cannot leave torn tensors (writes go to a private copy), so poisoning is safe to ignore.
        self.inner.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub fn snapshot(&self) -> ParameterSet {
        self.lock().params.clone()
    }

    pub fn global_step(&self) -> u64 {
        self.lock().global_step
    }

    pub fn updates(&self) -> u64 {
        self.lock().updates
    }

    pub fn adam_state(&self) -> AdamState {
        self.lock().adam.clone()
    }

    /// Apply `grads` and credit `env_steps` to the step counter.
    pub fn apply(&self, grads: &GradientSet, env_steps: u64, cfg: &TrainConfig) -> Result<Applied, TrainError> {
        let mut s = self.lock();
        let StoreState { params, adam, .. } = &mut *s;
        adam_apply(params, adam, grads, cfg)?;
        s.global_step += env_steps;
        s.updates += 1;
        Ok(Applied { global_step: s.global_step, updates: s.updates })
    }

    pub fn into_params(self) -> ParameterSet {
        self.inner.into_inner().unwrap_or_else(|e| e.into_inner()).params
    }
}

/// What a worker plays in one episode.
#[derive(Clone, Debug)]
pub struct EpisodeSpec {
    pub map_id: Option<usize>,
    pub maze: Arc<Maze>,
    pub annotations: MapAnnotations,
}

/// Supplies training episodes; implementations decide map, goal and spawn
/// sampling.
pub trait EpisodeSource: Sync {
    fn episode(&self, worker: usize, episode_index: u64, seed: u64) -> Result<EpisodeSpec, String>;
}

/// One row of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RolloutLog {
    pub global_step: u64,
    pub worker: usize,
    /// Set on the rollout that finished an episode.
    pub episode_reward: Option<f64>,
    pub map_id: Option<usize>,
    pub loss: LossTerms,
    pub grad_norm: f64,
    pub wall_time_s: f64,
}

pub enum TrainEvent {
    Rollout(RolloutLog),
    Checkpoint { global_step: u64, params: ParameterSet },
    WorkerFailed { worker: usize, error: String },
}

/// Receives progress on the calling thread.
pub trait TrainObserver {
    fn on_event(&mut self, event: TrainEvent) -> Result<(), TrainError>;
}

impl<F: FnMut(TrainEvent) -> Result<(), TrainError>> TrainObserver for F {
    fn on_event(&mut self, event: TrainEvent) -> Result<(), TrainError> {
        self(event)
    }
}

#[derive(Clone, Debug)]
pub struct TrainSummary {
    pub params: ParameterSet,
    pub global_step: u64,
    pub updates: u64,
    pub episodes: u64,
    pub failed_workers: Vec<(usize, String)>,
}

/// Train from `initial` until the shared step budget is spent.
pub fn train(
    agent: &AgentConfig,
    env: &EnvConfig,
    cfg: &TrainConfig,
    initial: ParameterSet,
    source: &dyn EpisodeSource,
    observer: &mut dyn TrainObserver,
) -> Result<TrainSummary, TrainError> {
    cfg.validate()?;
    env.validate()?;
    initial.check(agent)?;
    if env.camera.width != agent.width || env.camera.height != agent.height {
        return Err(TrainError::Config(format!(
            "camera {}x{} does not match agent input {}x{}",
            env.camera.width, env.camera.height, agent.width, agent.height
        )));
    }
    let store = SharedStore::new(initial);
    let start = Instant::now();
    let (tx, rx) = mpsc::channel::<TrainEvent>();
    let mut episodes = 0u64;
    let mut failed = Vec::new();
    let mut observer_error = None;

    std::thread::scope(|scope| {
        for worker in 0..cfg.workers {
            let tx = tx.clone();
            let store = &store;
            scope.spawn(move || {
                if let Err(e) = worker_loop(worker, store, source, agent, env, cfg, start, &tx) {
                    log::error!("worker {worker} stopped: {e}");
                    let _ = tx.send(TrainEvent::WorkerFailed { worker, error: e.to_string() });
                }
            });
        }
        drop(tx);
        for event in rx {
            match &event {
                TrainEvent::Rollout(r) if r.episode_reward.is_some() => episodes += 1,
                TrainEvent::WorkerFailed { worker, error } => failed.push((*worker, error.clone())),
                _ => {}
            }
            if observer_error.is_none() {
                if let Err(e) = observer.on_event(event) {
                    observer_error = Some(e);
                }
            }
        }
    });

    if let Some(e) = observer_error {
        return Err(e);
    }
    if failed.len() == cfg.workers {
        return Err(TrainError::AllWorkersFailed(failed[0].1.clone()));
    }
    let global_step = store.global_step();
    let updates = store.updates();
    Ok(TrainSummary { params: store.into_params(), global_step, updates, episodes, failed_workers: failed })
}

struct WorkerEpisode {
    env: Environment,
    map_id: Option<usize>,
    state: RecurrentState,
    tracker: LoopClosureTracker,
    buckets: DepthBuckets,
    reward: f64,
}

#[allow(clippy::too_many_arguments)]
fn worker_loop(
    worker: usize,
    store: &SharedStore,
    source: &dyn EpisodeSource,
    agent: &AgentConfig,
    env_cfg: &EnvConfig,
    cfg: &TrainConfig,
    start: Instant,
    tx: &mpsc::Sender<TrainEvent>,
) -> Result<(), TrainError> {
    let mut rng: SeededRng = seeded(mix_seeds(&[cfg.seed, worker as u64, 0xA3C]));
    let mut episode_index = 0u64;
    let new_episode = |index: u64| -> Result<WorkerEpisode, TrainError> {
        let seed = mix_seeds(&[cfg.seed, worker as u64, index]);
        let spec = source.episode(worker, index, seed).map_err(TrainError::Source)?;
        let buckets = DepthBuckets::for_maze(&spec.maze, env_cfg.agent_radius, env_cfg.block_size);
        let env = Environment::reset(spec.maze, spec.annotations, env_cfg.clone(), seed)?;
        Ok(WorkerEpisode {
            env,
            map_id: spec.map_id,
            state: RecurrentState::zeros(agent),
            tracker: LoopClosureTracker::new(cfg.loop_t_min, cfg.loop_radius),
            buckets,
            reward: 0.0,
        })
    };
    let mut ep = new_episode(episode_index)?;

    while store.global_step() < cfg.max_steps {
        let params = store.snapshot();
        let mut rec = RolloutRecorder::new(agent, &params, &ep.state);
        let mut targets: Vec<(Action, f64, Vec<usize>, bool)> = Vec::with_capacity(cfg.t_max);
        let mut done = false;
        for _ in 0..cfg.t_max {
            let obs = ep.env.observe()?;
            let pose = ep.env.pose();
            let depth = coarse_depth_classes(ep.env.maze(), &pose, env_cfg.camera.fov, agent.depth_groups, &ep.buckets, env_cfg.block_size);
            let seen = ep.tracker.observe(pose.position());
            let policy = rec.step(&obs)?;
            let action = sample_action(&policy, ActionMode::Sampled, &mut rng)?;
            let out = ep.env.step(action)?;
            ep.reward += out.reward;
            targets.push((action, out.reward, depth, seen));
            if out.done {
                done = true;
                break;
            }
        }
        let state = rec.state();
        let bootstrap = if done { 0.0 } else { forward(agent, &params, &ep.env.observe()?, &state)?.0.value };
        let steps: Vec<StepTargets<'_>> = targets
            .iter()
            .map(|(a, r, d, l)| StepTargets { action: *a, reward: *r, depth_target: d, loop_target: *l })
            .collect();
        let n = steps.len() as u64;
        let (mut grads, loss) = rec.finish(&steps, bootstrap, cfg)?;
        ep.state = state;

        if !grads.is_finite() || !loss.is_finite() {
            // Skip the update; the next rollout re-syncs from the store.
            log::warn!("worker {worker}: non-finite gradient or loss, update dropped");
            continue;
        }
        let grad_norm = grads.clip(cfg.clip_norm);
        let before = store.global_step();
        let applied = store.apply(&grads, n, cfg)?;
        let episode_reward = done.then_some(ep.reward);
        let _ = tx.send(TrainEvent::Rollout(RolloutLog {
            global_step: applied.global_step,
            worker,
            episode_reward,
            map_id: ep.map_id,
            loss,
            grad_norm,
            wall_time_s: start.elapsed().as_secs_f64(),
        }));
        if let Some(every) = cfg.checkpoint_every {
            if applied.global_step / every > before / every || (applied.global_step >= cfg.max_steps && before < cfg.max_steps) {
                let _ = tx.send(TrainEvent::Checkpoint { global_step: applied.global_step, params: store.snapshot() });
            }
        }
        if done {
            episode_index += 1;
            ep = new_episode(episode_index)?;
        }
    }
    Ok(())
}

pub const TRAINING_CSV_HEADER: [&str; 13] = [
    "global_step",
    "worker",
    "map_id",
    "episode_reward",
    "loss_policy",
    "loss_value",
    "loss_entropy",
    "loss_depth1",
    "loss_depth2",
    "loss_loop",
    "loss_total",
    "grad_norm",
    "wall_time_s",
];

/// Writes [`RolloutLog`] rows as CSV.
pub struct TrainingCsv<W: Write> {
    writer: csv::Writer<W>,
}

impl<W: Write> TrainingCsv<W> {
    pub fn new(w: W) -> Result<Self, TrainError> {
        let mut writer = csv::Writer::from_writer(w);
        writer.write_record(TRAINING_CSV_HEADER)?;
        Ok(TrainingCsv { writer })
    }

    pub fn write(&mut self, r: &RolloutLog) -> Result<(), TrainError> {
        let opt = |v: Option<String>| v.unwrap_or_default();
        self.writer.write_record([
            r.global_step.to_string(),
            r.worker.to_string(),
            opt(r.map_id.map(|m| m.to_string())),
            opt(r.episode_reward.map(|v| v.to_string())),
            r.loss.policy.to_string(),
            r.loss.value.to_string(),
            r.loss.entropy.to_string(),
            r.loss.depth1.to_string(),
            r.loss.depth2.to_string(),
            r.loss.loop_closure.to_string(),
            r.loss.total.to_string(),
            r.grad_norm.to_string(),
            format!("{:.3}", r.wall_time_s),
        ])?;
        Ok(())
    }

    pub fn flush(&mut self) -> Result<(), TrainError> {
        self.writer.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::init_params;
    use crate::autodiff::Tensor;

    #[test]
    fn returns_examples() {
        assert_eq!(discounted_returns(&[0.0, 0.0, 10.0], 1.0, 0.0), vec![10.0, 10.0, 10.0]);
        assert_eq!(discounted_returns(&[1.0], 0.5, 4.0), vec![3.0]);
        assert_eq!(discounted_returns(&[0.0; 5], 0.9, 0.0), vec![0.0; 5]);
    }

    fn one_param(v: f64) -> ParameterSet {
        ParameterSet::new(vec![("w".into(), Tensor::row(vec![v, -v]))])
    }

    #[test]
    fn zero_gradient_leaves_params_and_decays_moments() {
        let cfg = TrainConfig::default();
        let mut p = one_param(1.0);
        let mut s = AdamState::new(&p);
        s.m[0] = vec![0.5, 0.5];
        s.v[0] = vec![0.25, 0.25];
        s.t = 3;
        let before = p.clone();
        adam_apply(&mut p, &mut s, &GradientSet { grads: vec![vec![0.0, 0.0]] }, &cfg).unwrap();
        assert_eq!(s.m[0], vec![0.45, 0.45]);
        assert!((s.v[0][0] - 0.25 * 0.999).abs() < 1e-15);
        // Zero gradient still moves along the decayed momentum, so compare against the closed form.
        let t = 4;
        let mhat = 0.45 / (1.0 - 0.9f64.powi(t));
        let vhat = 0.25 * 0.999 / (1.0 - 0.999f64.powi(t));
        let expected = 1.0 - 1e-4 * mhat / (vhat.sqrt() + 1e-8);
        assert!((p.flatten()[0] - expected).abs() < 1e-12);
        let mut fresh = AdamState::new(&before);
        let mut q = before.clone();
        adam_apply(&mut q, &mut fresh, &GradientSet { grads: vec![vec![0.0, 0.0]] }, &cfg).unwrap();
        assert_eq!(q, before);
    }

    #[test]
    fn sgd_step_is_linear_in_learning_rate() {
        let g = GradientSet { grads: vec![vec![2.0, -1.0]] };
        let step = |lr: f64| {
            let cfg = TrainConfig { optimizer: OptimizerKind::Sgd, learning_rate: lr, ..TrainConfig::default() };
            let mut p = one_param(1.0);
            adam_apply(&mut p, &mut AdamState::new(&one_param(1.0)), &g, &cfg).unwrap();
            p.flatten().iter().zip(one_param(1.0).flatten()).map(|(a, b)| a - b).collect::<Vec<_>>()
        };
        let (a, b) = (step(0.01), step(0.02));
        for (x, y) in a.iter().zip(&b) {
            assert!((2.0 * x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn clip_scales_to_norm() {
        let mut g = GradientSet { grads: vec![vec![3.0], vec![4.0]] };
        assert_eq!(g.clip(1.0), 5.0);
        assert!((g.global_norm() - 1.0).abs() < 1e-12);
        let mut small = GradientSet { grads: vec![vec![0.3]] };
        small.clip(1.0);
        assert_eq!(small.grads[0][0], 0.3);
    }

    #[test]
    fn store_snapshots_are_not_torn() {
        let cfg = TrainConfig { optimizer: OptimizerKind::Sgd, learning_rate: 1.0, ..TrainConfig::default() };
        let store = SharedStore::new(one_param(1.0));
        let snap = store.snapshot();
        store.apply(&GradientSet { grads: vec![vec![1.0, 1.0]] }, 20, &cfg).unwrap();
        assert_eq!(snap, one_param(1.0));
        assert_eq!(store.snapshot().flatten(), vec![0.0, -2.0]);
        assert_eq!(store.global_step(), 20);
    }

    #[test]
    fn config_validation() {
        TrainConfig::default().validate().unwrap();
        assert!(TrainConfig { workers: 0, ..TrainConfig::default() }.validate().is_err());
        assert!(TrainConfig { gamma: 0.0, ..TrainConfig::default() }.validate().is_err());
        assert!(TrainConfig { gamma: 1.5, ..TrainConfig::default() }.validate().is_err());
        let agent = AgentConfig::default();
        assert!(init_params(0, &agent).is_ok());
    }
}
