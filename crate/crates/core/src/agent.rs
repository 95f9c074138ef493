//! The recurrent navigation agent: a two-layer convolutional encoder, two
//! stacked LSTM cores, policy and value heads, and auxiliary depth and
//! loop-closure heads.
//!
//! Core 1 reads the encoder output and the previous reward. Core 2 reads the
//! core-1 output, the encoder output (skip connection, switchable) and the
//! previous action. Depth head D1 reads core 1; the policy, value, D2 and
//! loop-closure heads read core 2.

use std::io::{Read, Write};
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{lstm_cell, AutodiffError, LstmWeights, Tape, Tensor, Var, LOG_FLOOR};
use crate::raycast::{Observation, DEPTH_CLASSES};
use crate::rng::{mix_seeds, seeded, SeededRng};
use crate::world::{Action, Policy, PolicyError, StepView};

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("invalid agent config: {0}")]
    Config(String),
    #[error("observation is {got_w}x{got_h}, agent expects {want_w}x{want_h}")]
    ObservationSize { got_w: usize, got_h: usize, want_w: usize, want_h: usize },
    #[error("parameter set does not match the config: {0}")]
    Params(String),
    #[error("invalid action distribution: {0}")]
    Distribution(String),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub filters: usize,
    pub kernel: usize,
    pub stride: usize,
}

impl ConvSpec {
    fn output(&self, input: usize) -> Option<usize> {
        (input >= self.kernel && self.stride > 0).then(|| (input - self.kernel) / self.stride + 1)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentConfig {
    pub width: usize,
    pub height: usize,
    pub conv1: ConvSpec,
    pub conv2: ConvSpec,
    pub lstm1: usize,
    pub lstm2: usize,
    /// Column groups predicted by each depth head.
    pub depth_groups: usize,
    /// Depth classes per group.
    pub depth_buckets: usize,
    /// Feed the encoder output straight into core 2 as well as core 1.
    pub core2_skip: bool,
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig {
            width: 42,
            height: 42,
            conv1: ConvSpec { filters: 16, kernel: 8, stride: 4 },
            conv2: ConvSpec { filters: 32, kernel: 4, stride: 2 },
            lstm1: 64,
            lstm2: 32,
            depth_groups: 4,
            depth_buckets: DEPTH_CLASSES,
            core2_skip: true,
        }
    }
}

impl AgentConfig {
    /// Full-size network: 84x84 input, 256 and 64 unit cores.
    pub fn paper_scale() -> Self {
        AgentConfig { width: 84, height: 84, lstm1: 256, lstm2: 64, ..Self::default() }
    }

    /// Spatial size after each convolution.
    pub fn conv_shapes(&self) -> Result<[(usize, usize); 2], AgentError> {
        let err = || AgentError::Config(format!("{}x{} input too small for the encoder", self.width, self.height));
        let w1 = self.conv1.output(self.width).ok_or_else(err)?;
        let h1 = self.conv1.output(self.height).ok_or_else(err)?;
        let w2 = self.conv2.output(w1).ok_or_else(err)?;
        let h2 = self.conv2.output(h1).ok_or_else(err)?;
        Ok([(h1, w1), (h2, w2)])
    }

    /// Width of the encoder output `o_t`.
    pub fn encoder_width(&self) -> Result<usize, AgentError> {
        let [_, (h, w)] = self.conv_shapes()?;
        Ok(self.conv2.filters * h * w)
    }

    pub fn depth_width(&self) -> usize {
        self.depth_groups * self.depth_buckets
    }

    pub fn validate(&self) -> Result<(), AgentError> {
        self.encoder_width()?;
        if self.lstm1 == 0 || self.lstm2 == 0 || self.depth_groups == 0 || self.depth_buckets < 2 {
            return Err(AgentError::Config("layer sizes must be positive and depth needs at least two classes".into()));
        }
        if self.conv1.filters == 0 || self.conv2.filters == 0 {
            return Err(AgentError::Config("convolutions need at least one filter".into()));
        }
        Ok(())
    }

    /// Name and shape of every parameter tensor, in canonical order.
    pub fn parameter_shapes(&self) -> Result<Vec<(&'static str, Vec<usize>)>, AgentError> {
        self.validate()?;
        let enc = self.encoder_width()?;
        let core2_in = self.lstm1 + if self.core2_skip { enc } else { 0 } + Action::COUNT;
        let (c1, c2) = (self.conv1, self.conv2);
        Ok(vec![
            ("conv1.w", vec![c1.filters, 3, c1.kernel, c1.kernel]),
            ("conv1.b", vec![c1.filters]),
            ("conv2.w", vec![c2.filters, c1.filters, c2.kernel, c2.kernel]),
            ("conv2.b", vec![c2.filters]),
            ("lstm1.w", vec![enc + 1 + self.lstm1, 4 * self.lstm1]),
            ("lstm1.b", vec![4 * self.lstm1]),
            ("lstm2.w", vec![core2_in + self.lstm2, 4 * self.lstm2]),
            ("lstm2.b", vec![4 * self.lstm2]),
            ("policy.w", vec![self.lstm2, Action::COUNT]),
            ("policy.b", vec![Action::COUNT]),
            ("value.w", vec![self.lstm2, 1]),
            ("value.b", vec![1]),
            ("depth1.w", vec![self.lstm1, self.depth_width()]),
            ("depth1.b", vec![self.depth_width()]),
            ("depth2.w", vec![self.lstm2, self.depth_width()]),
            ("depth2.b", vec![self.depth_width()]),
            ("loop.w", vec![self.lstm2, 1]),
            ("loop.b", vec![1]),
        ])
    }
}

// Positions in the canonical parameter order.
const CONV1_W: usize = 0;
const CONV1_B: usize = 1;
const CONV2_W: usize = 2;
const CONV2_B: usize = 3;
const LSTM1_W: usize = 4;
const LSTM1_B: usize = 5;
const LSTM2_W: usize = 6;
const LSTM2_B: usize = 7;
const POLICY_W: usize = 8;
const POLICY_B: usize = 9;
const VALUE_W: usize = 10;
const VALUE_B: usize = 11;
const DEPTH1_W: usize = 12;
const DEPTH1_B: usize = 13;
const DEPTH2_W: usize = 14;
const DEPTH2_B: usize = 15;
const LOOP_W: usize = 16;
const LOOP_B: usize = 17;

/// Named parameter tensors. Cloning is cheap: tensors are shared until one
/// side writes to them.
#[derive(Clone, Debug, PartialEq)]
pub struct ParameterSet {
    names: Vec<String>,
    tensors: Vec<Arc<Tensor>>,
}

impl ParameterSet {
    pub fn new(entries: Vec<(String, Tensor)>) -> Self {
        let (names, tensors) = entries.into_iter().map(|(n, t)| (n, Arc::new(t))).unzip();
        ParameterSet { names, tensors }
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensor(&self, i: usize) -> &Arc<Tensor> {
        &self.tensors[i]
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.names.iter().position(|n| n == name).map(|i| self.tensors[i].as_ref())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(self.tensors.iter().map(Arc::as_ref))
    }

    /// Mutable access; copies the tensor first if a snapshot still shares it.
    pub fn tensor_mut(&mut self, i: usize) -> &mut Tensor {
        Arc::make_mut(&mut self.tensors[i])
    }

    pub fn total_len(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }

    /// All values concatenated in canonical order.
    pub fn flatten(&self) -> Vec<f64> {
        self.tensors.iter().flat_map(|t| t.data().iter().copied()).collect()
    }

    /// Same names and shapes with values taken from `flat` (canonical order).
    pub fn with_flat(&self, flat: &[f64]) -> Result<Self, AgentError> {
        if flat.len() != self.total_len() {
            return Err(AgentError::Params(format!("{} values for {} parameters", flat.len(), self.total_len())));
        }
        let mut offset = 0;
        let mut tensors = Vec::with_capacity(self.len());
        for t in &self.tensors {
            tensors.push(Arc::new(Tensor::new(t.shape().to_vec(), flat[offset..offset + t.len()].to_vec())?));
            offset += t.len();
        }
        Ok(ParameterSet { names: self.names.clone(), tensors })
    }

    pub fn zeros_like(&self) -> Self {
        ParameterSet { names: self.names.clone(), tensors: self.tensors.iter().map(|t| Arc::new(Tensor::zeros(t.shape()))).collect() }
    }

    /// Check names and shapes against a config.
    pub fn check(&self, config: &AgentConfig) -> Result<(), AgentError> {
        let shapes = config.parameter_shapes()?;
        if shapes.len() != self.len() {
            return Err(AgentError::Params(format!("expected {} tensors, found {}", shapes.len(), self.len())));
        }
        for ((name, shape), (have_name, t)) in shapes.iter().zip(self.iter()) {
            if *name != have_name || t.shape() != shape.as_slice() {
                return Err(AgentError::Params(format!("expected {name} {shape:?}, found {have_name} {:?}", t.shape())));
            }
        }
        Ok(())
    }
}

/// Fan-in scaled uniform initialisation, forget-gate bias 1 and a shrunken
/// policy head so the initial policy is close to uniform.
pub fn init_params(seed: u64, config: &AgentConfig) -> Result<ParameterSet, AgentError> {
    let shapes = config.parameter_shapes()?;
    let mut rng = seeded(mix_seeds(&[seed, 0x1A17]));
    let mut entries = Vec::with_capacity(shapes.len());
    for (name, shape) in shapes {
        let len: usize = shape.iter().product();
        let data = if name.ends_with(".b") {
            let mut b = vec![0.0; len];
            if name.starts_with("lstm") {
                let hidden = len / 4;
                b[hidden..2 * hidden].iter_mut().for_each(|v| *v = 1.0);
            }
            b
        } else {
            let fan_in: usize = if shape.len() == 4 { shape[1] * shape[2] * shape[3] } else { shape[0] };
            let mut bound = 1.0 / (fan_in as f64).sqrt();
            if name == "policy.w" {
                bound *= 0.1;
            }
            (0..len).map(|_| rng.random_range(-bound..bound)).collect()
        };
        entries.push((name.to_string(), Tensor::new(shape, data)?));
    }
    Ok(ParameterSet::new(entries))
}

/// `(h, c)` of both cores.
#[derive(Clone, Debug, PartialEq)]
pub struct RecurrentState {
    pub h1: Vec<f64>,
    pub c1: Vec<f64>,
    pub h2: Vec<f64>,
    pub c2: Vec<f64>,
}

impl RecurrentState {
    pub fn zeros(config: &AgentConfig) -> Self {
        RecurrentState { h1: vec![0.0; config.lstm1], c1: vec![0.0; config.lstm1], h2: vec![0.0; config.lstm2], c2: vec![0.0; config.lstm2] }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AgentOutput {
    pub policy: [f64; Action::COUNT],
    pub value: f64,
    pub depth1: Vec<f64>,
    pub depth2: Vec<f64>,
    pub loop_logit: f64,
}

/// Parameters placed on a tape.
#[derive(Clone, Debug)]
pub struct BoundParams {
    pub vars: Vec<Var>,
}

/// Tape handles for a recurrent state.
#[derive(Clone, Copy, Debug)]
pub struct StateVars {
    pub h1: Var,
    pub c1: Var,
    pub h2: Var,
    pub c2: Var,
}

/// Tape handles for one forward step.
#[derive(Clone, Copy, Debug)]
pub struct OutputVars {
    pub logits: Var,
    pub probs: Var,
    pub log_probs: Var,
    pub value: Var,
    pub depth1: Var,
    pub depth2: Var,
    pub loop_logit: Var,
    pub image: Var,
}

/// Place every parameter on the tape, as gradient leaves when `trainable`.
pub fn bind_params(tape: &mut Tape, params: &ParameterSet, trainable: bool) -> BoundParams {
    let vars = params
        .tensors
        .iter()
        .map(|t| if trainable { tape.param(t.clone()) } else { tape.constant_shared(t.clone()) })
        .collect();
    BoundParams { vars }
}

pub fn bind_state(tape: &mut Tape, state: &RecurrentState) -> StateVars {
    StateVars {
        h1: tape.constant(Tensor::row(state.h1.clone())),
        c1: tape.constant(Tensor::row(state.c1.clone())),
        h2: tape.constant(Tensor::row(state.h2.clone())),
        c2: tape.constant(Tensor::row(state.c2.clone())),
    }
}

pub fn read_state(tape: &Tape, vars: &StateVars) -> RecurrentState {
    RecurrentState {
        h1: tape.value(vars.h1).data().to_vec(),
        c1: tape.value(vars.c1).data().to_vec(),
        h2: tape.value(vars.h2).data().to_vec(),
        c2: tape.value(vars.c2).data().to_vec(),
    }
}

fn dense(tape: &mut Tape, x: Var, w: Var, b: Var) -> Result<Var, AutodiffError> {
    let y = tape.matmul(x, w)?;
    tape.bias_add(y, b)
}

/// One network step recorded on `tape`. When `image_grad` is set the image
/// is a gradient leaf (used for saliency).
pub fn forward_on_tape(
    tape: &mut Tape,
    config: &AgentConfig,
    p: &BoundParams,
    obs: &Observation,
    state: StateVars,
    image_grad: bool,
) -> Result<(OutputVars, StateVars), AgentError> {
    if obs.image.width != config.width || obs.image.height != config.height {
        return Err(AgentError::ObservationSize { got_w: obs.image.width, got_h: obs.image.height, want_w: config.width, want_h: config.height });
    }
    let v = &p.vars;
    let image = tape.input(Tensor::new(vec![3, config.height, config.width], obs.image.data.clone())?, image_grad);
    let x = tape.conv2d(image, v[CONV1_W], v[CONV1_B], config.conv1.stride)?;
    let x = tape.relu(x)?;
    let x = tape.conv2d(x, v[CONV2_W], v[CONV2_B], config.conv2.stride)?;
    let x = tape.relu(x)?;
    let enc = config.encoder_width()?;
    let o = tape.reshape(x, &[1, enc])?;

    let reward = tape.constant(Tensor::row(vec![obs.prev_reward]));
    let in1 = tape.concat(&[o, reward])?;
    let (h1, c1) = lstm_cell(tape, in1, state.h1, state.c1, &LstmWeights { w: v[LSTM1_W], b: v[LSTM1_B] })?;

    let action = tape.constant(Tensor::row(obs.prev_action_one_hot().to_vec()));
    let in2 = if config.core2_skip { tape.concat(&[h1, o, action])? } else { tape.concat(&[h1, action])? };
    let (h2, c2) = lstm_cell(tape, in2, state.h2, state.c2, &LstmWeights { w: v[LSTM2_W], b: v[LSTM2_B] })?;

    let logits = dense(tape, h2, v[POLICY_W], v[POLICY_B])?;
    let probs = tape.softmax(logits)?;
    let log_probs = tape.log(probs, LOG_FLOOR)?;
    let value = dense(tape, h2, v[VALUE_W], v[VALUE_B])?;
    let depth1 = dense(tape, h1, v[DEPTH1_W], v[DEPTH1_B])?;
    let depth2 = dense(tape, h2, v[DEPTH2_W], v[DEPTH2_B])?;
    let loop_logit = dense(tape, h2, v[LOOP_W], v[LOOP_B])?;
    Ok((
        OutputVars { logits, probs, log_probs, value, depth1, depth2, loop_logit, image },
        StateVars { h1, c1, h2, c2 },
    ))
}

pub fn read_output(tape: &Tape, out: &OutputVars) -> AgentOutput {
    let mut policy = [0.0; Action::COUNT];
    policy.copy_from_slice(tape.value(out.probs).data());
    AgentOutput {
        policy,
        value: tape.value(out.value).item(),
        depth1: tape.value(out.depth1).data().to_vec(),
        depth2: tape.value(out.depth2).data().to_vec(),
        loop_logit: tape.value(out.loop_logit).item(),
    }
}

/// Plain inference step.
pub fn forward(config: &AgentConfig, params: &ParameterSet, obs: &Observation, state: &RecurrentState) -> Result<(AgentOutput, RecurrentState), AgentError> {
    let mut tape = Tape::new();
    let bound = bind_params(&mut tape, params, false);
    let sv = bind_state(&mut tape, state);
    let (out, next) = forward_on_tape(&mut tape, config, &bound, obs, sv, false)?;
    Ok((read_output(&tape, &out), read_state(&tape, &next)))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActionMode {
    Sampled,
    Greedy,
}

fn check_distribution(policy: &[f64]) -> Result<(), AgentError> {
    let sum: f64 = policy.iter().sum();
    if policy.len() != Action::COUNT || policy.iter().any(|p| !p.is_finite() || *p < 0.0) || (sum - 1.0).abs() > 1e-6 {
        return Err(AgentError::Distribution(format!("{policy:?}")));
    }
    Ok(())
}

/// Draw an action from `policy`, or take the arg-max (first on ties) in
/// greedy mode.
pub fn sample_action<R: Rng + ?Sized>(policy: &[f64], mode: ActionMode, rng: &mut R) -> Result<Action, AgentError> {
    check_distribution(policy)?;
    let index = match mode {
        ActionMode::Greedy => policy.iter().enumerate().fold(0, |best, (i, &p)| if p > policy[best] { i } else { best }),
        ActionMode::Sampled => {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut pick = None;
            for (i, &p) in policy.iter().enumerate() {
                acc += p;
                if u < acc && p > 0.0 {
                    pick = Some(i);
                    break;
                }
            }
            // Rounding can leave u just above the running sum; fall back to the last supported action.
            pick.unwrap_or_else(|| policy.iter().rposition(|&p| p > 0.0).unwrap_or(0))
        }
    };
    Ok(Action::ALL[index])
}

/// A learned agent usable with [`crate::world::run_episode`].
pub struct AgentPolicy {
    pub config: AgentConfig,
    pub params: ParameterSet,
    pub mode: ActionMode,
    rng: SeededRng,
}

impl AgentPolicy {
    pub fn new(config: AgentConfig, params: ParameterSet, mode: ActionMode, seed: u64) -> Result<Self, AgentError> {
        params.check(&config)?;
        Ok(AgentPolicy { config, params, mode, rng: seeded(mix_seeds(&[seed, 0xAC7])) })
    }
}

impl Policy for AgentPolicy {
    type Memory = RecurrentState;

    fn initial_memory(&mut self) -> RecurrentState {
        RecurrentState::zeros(&self.config)
    }

    fn act(&mut self, obs: &Observation, _view: &StepView<'_>, memory: RecurrentState) -> Result<(Action, RecurrentState), PolicyError> {
        let (out, next) = forward(&self.config, &self.params, obs, &memory)?;
        let action = sample_action(&out.policy, self.mode, &mut self.rng)?;
        Ok((action, next))
    }
}

const MAGIC: &[u8; 8] = b"NAVBCKPT";
const VERSION: u32 = 1;

/// Everything stored in a checkpoint file.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: AgentConfig,
    /// Free-form run configuration (typically the CLI config text).
    pub run_config: String,
    pub seeds: Vec<u64>,
    pub global_step: u64,
    pub params: ParameterSet,
}

impl Checkpoint {
    /// Layout: magic, version, agent config (JSON), run config, seeds,
    /// global step, then per tensor: name length, name, rank, extents and
    /// little-endian f64 values. Integers are little-endian u64 except the
    /// version (u32).
    pub fn write<W: Write>(&self, mut w: W) -> Result<(), AgentError> {
        let config_json = serde_json::to_string(&self.config).map_err(|e| AgentError::Checkpoint(e.to_string()))?;
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        write_bytes(&mut w, config_json.as_bytes())?;
        write_bytes(&mut w, self.run_config.as_bytes())?;
        write_u64(&mut w, self.seeds.len() as u64)?;
        for &s in &self.seeds {
            write_u64(&mut w, s)?;
        }
        write_u64(&mut w, self.global_step)?;
        write_u64(&mut w, self.params.len() as u64)?;
        for (name, t) in self.params.iter() {
            write_bytes(&mut w, name.as_bytes())?;
            write_u64(&mut w, t.shape().len() as u64)?;
            for &e in t.shape() {
                write_u64(&mut w, e as u64)?;
            }
            for v in t.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, AgentError> {
        let mut out = Vec::new();
        self.write(&mut out)?;
        Ok(out)
    }

    pub fn read<R: Read>(mut r: R) -> Result<Self, AgentError> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(AgentError::Checkpoint("not a checkpoint file (bad magic)".into()));
        }
        let mut v = [0u8; 4];
        r.read_exact(&mut v)?;
        let version = u32::from_le_bytes(v);
        if version != VERSION {
            return Err(AgentError::Checkpoint(format!("unsupported version {version}")));
        }
        let text = |b: Vec<u8>| String::from_utf8(b).map_err(|e| AgentError::Checkpoint(e.to_string()));
        let config_json = text(read_bytes(&mut r)?)?;
        let config: AgentConfig = serde_json::from_str(&config_json).map_err(|e| AgentError::Checkpoint(e.to_string()))?;
        let run_config = text(read_bytes(&mut r)?)?;
        let n_seeds = read_len(&mut r, 1 << 16)?;
        let seeds = (0..n_seeds).map(|_| read_u64(&mut r)).collect::<Result<_, _>>()?;
        let global_step = read_u64(&mut r)?;
        let n = read_len(&mut r, 1 << 16)?;
        let mut entries = Vec::with_capacity(n);
        for _ in 0..n {
            let name = text(read_bytes(&mut r)?)?;
            let rank = read_len(&mut r, 8)?;
            let shape: Vec<usize> = (0..rank).map(|_| read_len(&mut r, 1 << 28)).collect::<Result<_, _>>()?;
            let len: usize = shape.iter().product();
            let mut data = Vec::with_capacity(len);
            let mut buf = [0u8; 8];
            for _ in 0..len {
                r.read_exact(&mut buf)?;
                data.push(f64::from_le_bytes(buf));
            }
            entries.push((name, Tensor::new(shape, data)?));
        }
        let params = ParameterSet::new(entries);
        params.check(&config)?;
        Ok(Checkpoint { config, run_config, seeds, global_step, params })
    }

    pub fn save(&self, path: &std::path::Path) -> Result<(), AgentError> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write(&mut f)?;
        f.flush()?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self, AgentError> {
        Self::read(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}

fn write_u64<W: Write>(w: &mut W, v: u64) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn write_bytes<W: Write>(w: &mut W, b: &[u8]) -> std::io::Result<()> {
    write_u64(w, b.len() as u64)?;
    w.write_all(b)
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64, AgentError> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_len<R: Read>(r: &mut R, max: u64) -> Result<usize, AgentError> {
    let v = read_u64(r)?;
    if v > max {
        return Err(AgentError::Checkpoint(format!("length {v} exceeds limit {max}")));
    }
    Ok(v as usize)
}

fn read_bytes<R: Read>(r: &mut R) -> Result<Vec<u8>, AgentError> {
    let n = read_len(r, 1 << 24)?;
    let mut b = vec![0u8; n];
    r.read_exact(&mut b)?;
    Ok(b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raycast::Image;

    fn obs(config: &AgentConfig, seed: u64) -> Observation {
        let mut rng = seeded(seed);
        let mut image = Image::new(config.width, config.height);
        image.data.iter_mut().for_each(|v| *v = rng.random());
        Observation { image, prev_action: Some(Action::Forward), prev_reward: 0.5 }
    }

    #[test]
    fn encoder_shapes() {
        assert_eq!(AgentConfig::default().encoder_width().unwrap(), 288);
        assert_eq!(AgentConfig::paper_scale().encoder_width().unwrap(), 2592);
        let tiny = AgentConfig { width: 6, ..AgentConfig::default() };
        assert!(tiny.validate().is_err());
    }

    #[test]
    fn zero_params_give_uniform_policy() {
        let cfg = AgentConfig::default();
        let p = init_params(1, &cfg).unwrap().zeros_like();
        let (out, _) = forward(&cfg, &p, &obs(&cfg, 3), &RecurrentState::zeros(&cfg)).unwrap();
        for pi in out.policy {
            assert!((pi - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn init_is_deterministic_and_finite() {
        let cfg = AgentConfig::default();
        let a = init_params(5, &cfg).unwrap();
        assert_eq!(a, init_params(5, &cfg).unwrap());
        assert_ne!(a, init_params(6, &cfg).unwrap());
        let (out, state) = forward(&cfg, &a, &obs(&cfg, 4), &RecurrentState::zeros(&cfg)).unwrap();
        assert!(out.value.is_finite() && out.loop_logit.is_finite());
        assert!((out.policy.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(state.h1.iter().chain(&state.c2).all(|v| v.is_finite()));
        let f = a.get("lstm1.b").unwrap().data();
        assert_eq!(&f[64..128], &[1.0; 64]);
        assert_eq!(&f[..64], &[0.0; 64]);
    }

    #[test]
    fn forward_rejects_wrong_image() {
        let cfg = AgentConfig::default();
        let p = init_params(1, &cfg).unwrap();
        let small = AgentConfig { width: 40, ..cfg.clone() };
        assert!(matches!(forward(&cfg, &p, &obs(&small, 1), &RecurrentState::zeros(&cfg)), Err(AgentError::ObservationSize { .. })));
    }

    #[test]
    fn sampling_modes() {
        let mut rng = seeded(1);
        for _ in 0..100 {
            assert_eq!(sample_action(&[1.0, 0.0, 0.0, 0.0], ActionMode::Sampled, &mut rng).unwrap(), Action::Forward);
        }
        assert_eq!(sample_action(&[0.1, 0.2, 0.6, 0.1], ActionMode::Greedy, &mut rng).unwrap(), Action::RotateLeft);
        assert!(sample_action(&[0.5, 0.5, 0.5, 0.0], ActionMode::Sampled, &mut rng).is_err());
        assert!(sample_action(&[f64::NAN, 0.0, 0.0, 1.0], ActionMode::Greedy, &mut rng).is_err());
    }

    #[test]
    fn checkpoint_round_trip() {
        let cfg = AgentConfig::default();
        let ck = Checkpoint { config: cfg.clone(), run_config: "seed = 3\n".into(), seeds: vec![3, 4], global_step: 77, params: init_params(9, &cfg).unwrap() };
        let bytes = ck.to_bytes().unwrap();
        assert_eq!(&bytes[..8], MAGIC);
        let back = Checkpoint::read(bytes.as_slice()).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_bytes().unwrap(), bytes);
        let o = obs(&cfg, 8);
        let s = RecurrentState::zeros(&cfg);
        assert_eq!(forward(&cfg, &ck.params, &o, &s).unwrap(), forward(&cfg, &back.params, &o, &s).unwrap());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Checkpoint::read(bad.as_slice()).is_err());
        assert!(Checkpoint::read(&bytes[..bytes.len() - 3]).is_err());
    }
}
