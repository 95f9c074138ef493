//! Run configuration: built-in defaults, then a TOML file, then `--set`
//! overrides and dedicated flags, validated as a whole before any work.

use std::path::Path;

use anyhow::{Context, Result};
use navbench::agent::{ActionMode, AgentConfig};
use navbench::benchmark::{sha256_hex, AblationFlags, EvalVariant};
use navbench::trainer::TrainConfig;
use navbench::world::EnvConfig;
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::exit::{usage, validation};

/// Keys that may appear in a config file although the default leaves them
/// unset.
const OPTIONAL_KEYS: &[&str] = &["train.checkpoint_every"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoolConfig {
    pub seed: u64,
    pub n_train: usize,
    pub n_test: usize,
    pub cols: usize,
    pub rows: usize,
}

impl Default for PoolConfig {
    fn default() -> Self {
        PoolConfig { seed: 0, n_train: 100, n_test: 10, cols: 3, rows: 3 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub seed: u64,
    pub episodes_per_map: usize,
    pub action_mode: ActionMode,
    pub variant: EvalVariant,
    pub workers: usize,
    pub apples_present: bool,
    pub textures_random: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        let flags = AblationFlags::default();
        EvalConfig {
            seed: 0,
            episodes_per_map: 10,
            action_mode: ActionMode::Sampled,
            variant: EvalVariant::Seen,
            workers: 1,
            apples_present: flags.apples_present,
            textures_random: flags.textures_random,
        }
    }
}

impl EvalConfig {
    pub fn flags(&self) -> AblationFlags {
        AblationFlags { apples_present: self.apples_present, textures_random: self.textures_random }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub pool: PoolConfig,
    pub env: EnvConfig,
    pub agent: AgentConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

impl RunConfig {
    /// Defaults overlaid with `file` (if any) and then each `key=value`
    /// override. Unknown keys are rejected.
    pub fn load(file: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut table = Value::try_from(RunConfig::default())?
            .as_table()
            .cloned()
            .context("default config did not serialize to a table")?;
        if let Some(path) = file {
            let text = std::fs::read_to_string(path).map_err(|e| usage(format!("cannot read config file {}: {e}", path.display())))?;
            let user: Table = text.parse().map_err(|e| validation(format!("config file {}: {e}", path.display())))?;
            merge(&mut table, user, "")?;
        }
        for o in overrides {
            let (key, raw) = o.split_once('=').ok_or_else(|| usage(format!("override `{o}` is not of the form section.key=value")))?;
            set_path(&mut table, key.trim(), parse_value(raw.trim()))?;
        }
        let cfg: RunConfig = Value::Table(table).try_into().map_err(|e| validation(format!("config: {e}")))?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.env.validate().map_err(|e| validation(format!("[env] {e}")))?;
        self.agent.validate().map_err(|e| validation(format!("[agent] {e}")))?;
        self.train.validate().map_err(|e| validation(format!("[train] {e}")))?;
        if self.env.camera.width != self.agent.width || self.env.camera.height != self.agent.height {
            return Err(validation(format!(
                "env.camera is {}x{} but the agent expects {}x{}",
                self.env.camera.width, self.env.camera.height, self.agent.width, self.agent.height
            )));
        }
        if self.pool.n_train == 0 || self.pool.n_test == 0 || self.pool.cols == 0 || self.pool.rows == 0 {
            return Err(validation("[pool] n_train, n_test, cols and rows must all be positive"));
        }
        if self.eval.episodes_per_map == 0 || self.eval.workers == 0 {
            return Err(validation("[eval] episodes_per_map and workers must be positive"));
        }
        Ok(())
    }

    pub fn to_text(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| validation(format!("embedded config: {e}")))
    }

    /// Hash of the full configuration, recorded in every artifact.
    pub fn hash(&self) -> Result<String> {
        Ok(sha256_hex(self.to_text()?.as_bytes()))
    }

    /// Hash of the parts a checkpoint depends on: network shape and the
    /// environment that produced its observations.
    pub fn model_hash(&self) -> Result<String> {
        #[derive(Serialize)]
        struct Model<'a> {
            agent: &'a AgentConfig,
            env: &'a EnvConfig,
        }
        Ok(sha256_hex(toml::to_string(&Model { agent: &self.agent, env: &self.env })?.as_bytes()))
    }
}

fn merge(base: &mut Table, user: Table, prefix: &str) -> Result<()> {
    for (k, v) in user {
        let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match (base.get_mut(&k), v) {
            (Some(Value::Table(b)), Value::Table(u)) => merge(b, u, &path)?,
            (Some(Value::Table(_)), _) => return Err(validation(format!("config key `{path}` must be a section"))),
            (Some(slot), v) => *slot = v,
            (None, v) if OPTIONAL_KEYS.contains(&path.as_str()) => {
                base.insert(k, v);
            }
            (None, _) => return Err(validation(format!("unknown config key `{path}`"))),
        }
    }
    Ok(())
}

fn set_path(table: &mut Table, key: &str, value: Value) -> Result<()> {
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().filter(|s| !s.is_empty()).ok_or_else(|| usage(format!("empty override key `{key}`")))?;
    let mut nested = Table::new();
    nested.insert(last.to_string(), value);
    for p in parts.iter().rev() {
        let mut outer = Table::new();
        outer.insert(p.to_string(), Value::Table(nested));
        nested = outer;
    }
    merge(table, nested, "")
}

/// A TOML literal when it parses as one, otherwise a bare string.
fn parse_value(raw: &str) -> Value {
    format!("v = {raw}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_text() {
        let cfg = RunConfig::default();
        assert_eq!(RunConfig::parse(&cfg.to_text().unwrap()).unwrap(), cfg);
        cfg.validate().unwrap();
    }

    #[test]
    fn overrides_apply_in_order() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(&path, "[train]\nlearning_rate = 0.002\nworkers = 2\ncheckpoint_every = 500\n").unwrap();
        let cfg = RunConfig::load(Some(&path), &["train.workers=3".into(), "eval.action_mode=greedy".into()]).unwrap();
        assert_eq!(cfg.train.learning_rate, 0.002);
        assert_eq!(cfg.train.workers, 3);
        assert_eq!(cfg.train.checkpoint_every, Some(500));
        assert_eq!(cfg.eval.action_mode, ActionMode::Greedy);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = RunConfig::load(None, &["train.lerning_rate=1".into()]).unwrap_err();
        assert!(err.to_string().contains("lerning_rate"), "{err}");
    }

    #[test]
    fn model_hash_ignores_training_knobs() {
        let a = RunConfig::default();
        let mut b = a.clone();
        b.train.learning_rate = 0.5;
        b.eval.seed = 9;
        assert_eq!(a.model_hash().unwrap(), b.model_hash().unwrap());
        assert_ne!(a.hash().unwrap(), b.hash().unwrap());
        b.env.goal_reward = 5.0;
        assert_ne!(a.model_hash().unwrap(), b.model_hash().unwrap());
    }
}
