//! Output directories, provenance records and input loading shared by the
//! subcommands.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use navbench::agent::Checkpoint;
use navbench::benchmark::{build_pool, sha256_hex, StageResult};
use navbench::maze::{serialize_map, MapPool};
use serde::Serialize;

use crate::config::RunConfig;
use crate::exit::{usage, validation};

pub const CODE_VERSION: &str = env!("CARGO_PKG_VERSION");
pub const POOL_MANIFEST: &str = "pool.tsv";
pub const CONFIG_FILE: &str = "config.toml";
pub const PROVENANCE_FILE: &str = "provenance.toml";

/// Collects the files a command writes and records them, with their
/// hashes, in `provenance.toml` when finished.
pub struct OutputDir {
    root: PathBuf,
    command: String,
    config_hash: String,
    seeds: BTreeMap<String, u64>,
    files: BTreeMap<String, String>,
}

#[derive(Serialize)]
struct Provenance<'a> {
    command: &'a str,
    code_version: &'a str,
    config_hash: &'a str,
    seeds: &'a BTreeMap<String, u64>,
    files: &'a BTreeMap<String, String>,
}

impl OutputDir {
    /// Create `root` and write the merged config into it.
    pub fn create(root: &Path, command: &str, cfg: &RunConfig, seeds: &[(&str, u64)]) -> Result<Self> {
        fs::create_dir_all(root).with_context(|| format!("creating output directory {}", root.display()))?;
        let mut out = OutputDir {
            root: root.to_path_buf(),
            command: command.to_string(),
            config_hash: cfg.hash()?,
            seeds: seeds.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
            files: BTreeMap::new(),
        };
        out.write(CONFIG_FILE, cfg.to_text()?.as_bytes())?;
        Ok(out)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Write `bytes` to `rel` (parents created) and remember its hash.
    pub fn write(&mut self, rel: &str, bytes: &[u8]) -> Result<PathBuf> {
        let path = self.root.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
        self.files.insert(rel.to_string(), sha256_hex(bytes));
        Ok(path)
    }

    /// Hash a file that was written directly under the root.
    pub fn record(&mut self, rel: &str) -> Result<()> {
        let bytes = fs::read(self.root.join(rel)).with_context(|| format!("reading back {rel}"))?;
        self.files.insert(rel.to_string(), sha256_hex(&bytes));
        Ok(())
    }

    pub fn finish(mut self) -> Result<PathBuf> {
        let files = std::mem::take(&mut self.files);
        let text = toml::to_string(&Provenance {
            command: &self.command,
            code_version: CODE_VERSION,
            config_hash: &self.config_hash,
            seeds: &self.seeds,
            files: &files,
        })?;
        let path = self.root.join(PROVENANCE_FILE);
        fs::write(&path, text)?;
        Ok(self.root)
    }
}

pub fn require_file(path: &Path, what: &str) -> Result<()> {
    if !path.is_file() {
        return Err(usage(format!("{what} {} does not exist", path.display())));
    }
    Ok(())
}

/// The pool from a `gen-maps` directory, or generated from `[pool]`.
pub fn load_pool(dir: Option<&Path>, cfg: &RunConfig) -> Result<MapPool> {
    match dir {
        Some(dir) => {
            let path = dir.join(POOL_MANIFEST);
            require_file(&path, "pool manifest")?;
            let text = fs::read_to_string(&path)?;
            MapPool::parse_manifest(&text).map_err(|e| validation(format!("{}: {e}", path.display())))
        }
        None => {
            let p = &cfg.pool;
            Ok(build_pool(p.seed, p.n_train, p.n_test, p.cols, p.rows)?)
        }
    }
}

/// Write the manifest and one text file per map.
pub fn write_pool(out: &mut OutputDir, pool: &MapPool) -> Result<()> {
    out.write(POOL_MANIFEST, pool.manifest().as_bytes())?;
    for entry in &pool.entries {
        let maze = entry.generate()?;
        out.write(&format!("maps/{:05}.map", entry.id), serialize_map(&maze, None).as_bytes())?;
    }
    Ok(())
}

pub struct LoadedCheckpoint {
    pub checkpoint: Checkpoint,
    pub hash: String,
    pub trained_with: RunConfig,
}

pub fn load_checkpoint(path: &Path) -> Result<LoadedCheckpoint> {
    require_file(path, "checkpoint")?;
    let bytes = fs::read(path)?;
    let checkpoint = Checkpoint::read(bytes.as_slice()).map_err(|e| validation(format!("{}: {e}", path.display())))?;
    let trained_with = RunConfig::parse(&checkpoint.run_config).with_context(|| format!("config embedded in {}", path.display()))?;
    Ok(LoadedCheckpoint { checkpoint, hash: sha256_hex(&bytes), trained_with })
}

/// Refuse to evaluate a checkpoint under a different network or
/// environment than it was trained with.
pub fn check_model(ckpt: &LoadedCheckpoint, cfg: &RunConfig, path: &Path) -> Result<()> {
    let (have, want) = (cfg.model_hash()?, ckpt.trained_with.model_hash()?);
    if have != want || ckpt.checkpoint.config != cfg.agent {
        return Err(validation(format!(
            "config hash mismatch: checkpoint {} was trained with agent/env config {} but this run uses {}; \
             pass the training run's config.toml via --config",
            path.display(),
            &want[..12],
            &have[..12]
        )));
    }
    Ok(())
}

/// Logs, per-episode CSV, JSON summary and manifest text for one stage.
pub fn write_stage(out: &mut OutputDir, prefix: &str, result: &StageResult, manifest: &str) -> Result<()> {
    for (i, log) in result.logs.iter().enumerate() {
        let row = &result.report.episodes[i];
        let mut buf = Vec::new();
        log.write_jsonl(&mut buf)?;
        let map = log.header.map_id.map_or_else(|| "x".to_string(), |m| format!("{m:05}"));
        out.write(&format!("{prefix}logs/map{map}_ep{:04}.jsonl", row.episode), &buf)?;
    }
    let mut csv = Vec::new();
    result.report.write_csv(&mut csv)?;
    out.write(&format!("{prefix}metrics.csv"), &csv)?;
    out.write(&format!("{prefix}metrics.json"), result.report.to_json()?.as_bytes())?;
    out.write(&format!("{prefix}manifest.toml"), manifest.as_bytes())?;
    Ok(())
}
