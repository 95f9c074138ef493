use std::fs::{self, File};
use std::io::BufWriter;
use std::path::Path;

use anyhow::{bail, Context, Result};
use log::info;
use navbench::agent::{init_params, ActionMode, Checkpoint, ParameterSet};
use navbench::benchmark::{
    check_compatible, run_ablation_grid, run_stage, run_stage_with, train_stage, write_ablation_csv, write_summary_csv, AblationFlags,
    EvalSettings, EvalVariant, StageManifest, StageResult, StageSpec, SummaryRow,
};
use navbench::maze::{goal_map_probe, square_map_probe, MapPool};
use navbench::metrics::{evaluate_policy, shorter_path_fraction, EvalMap};
use navbench::scripted::RandomPolicy;
use navbench::selftest::run_all;
use navbench::trainer::{TrainEvent, TrainingCsv};
use serde::Serialize;

use crate::artifacts::{check_model, load_checkpoint, load_pool, require_file, write_pool, write_stage, OutputDir, CONFIG_FILE};
use crate::config::RunConfig;
use crate::exit::{usage, validation};
use crate::{
    AblateArgs, BaselineArgs, BenchArgs, Cli, Command, EvalArgs, EvalKnobs, GenMapsArgs, ModeArg, ProbeArg, SelftestArgs, TrainArgs, VariantArg,
};

pub fn run(cli: Cli) -> Result<()> {
    let base = |cli_config: &Option<std::path::PathBuf>| RunConfig::load(cli_config.as_deref(), &cli.set);
    match cli.command {
        Command::GenMaps(a) => gen_maps(base(&cli.config)?, a),
        Command::Train(a) => train(base(&cli.config)?, a),
        Command::Eval(a) => match a.replay.clone() {
            Some(manifest) => replay(cli.config.as_deref(), &cli.set, &manifest, a),
            None => eval(base(&cli.config)?, a),
        },
        Command::Bench(a) => bench(base(&cli.config)?, a),
        Command::Ablate(a) => ablate(base(&cli.config)?, a),
        Command::Baseline(a) => baseline(base(&cli.config)?, a),
        Command::Analyze(a) => crate::analyze::run(base(&cli.config)?, a.what),
        Command::Selftest(a) => selftest(a),
    }
}

fn validated(cfg: RunConfig) -> Result<RunConfig> {
    cfg.validate()?;
    Ok(cfg)
}

fn apply_knobs(cfg: &mut RunConfig, k: &EvalKnobs) {
    if let Some(e) = k.episodes {
        cfg.eval.episodes_per_map = e;
    }
    if let Some(w) = k.workers {
        cfg.eval.workers = w;
    }
    if let Some(m) = k.mode {
        cfg.eval.action_mode = match m {
            ModeArg::Sampled => ActionMode::Sampled,
            ModeArg::Greedy => ActionMode::Greedy,
        };
    }
}

fn variant(v: VariantArg) -> EvalVariant {
    match v {
        VariantArg::Seen => EvalVariant::Seen,
        VariantArg::Unseen => EvalVariant::Unseen,
    }
}

fn stage(id: u8) -> Result<StageSpec> {
    StageSpec::canonical(id).map_err(|e| usage(e.to_string()))
}

fn settings(cfg: &RunConfig, stage: StageSpec, variant: EvalVariant, flags: AblationFlags) -> Result<EvalSettings> {
    Ok(EvalSettings {
        stage,
        variant,
        episodes_per_map: cfg.eval.episodes_per_map,
        flags,
        eval_seed: cfg.eval.seed,
        mode: cfg.eval.action_mode,
        workers: cfg.eval.workers,
        config_hash: cfg.hash()?,
    })
}

/// Benchmark errors that stem from inputs rather than execution.
fn classify(e: navbench::benchmark::BenchmarkError) -> anyhow::Error {
    use navbench::benchmark::BenchmarkError as B;
    match e {
        B::Config(_) | B::UnknownMap(_) | B::Manifest(_) | B::Agent(_) => validation(e.to_string()),
        other => other.into(),
    }
}

fn report_line(label: &str, r: &StageResult) {
    let f = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{x:.3}"));
    let rep = &r.report;
    info!(
        "{label}: reward {} | goal hits {} | latency {} (n={}){} | dist-ineff {} (n={})",
        f(rep.reward.mean),
        f(rep.goal_hits.mean),
        f(rep.latency_ratio.mean),
        rep.latency_ratio.count,
        if r.latency_trivial { " [static goal]" } else { "" },
        f(rep.dist_ineff_bfs.mean),
        rep.dist_ineff_bfs.count
    );
}

fn gen_maps(mut cfg: RunConfig, a: GenMapsArgs) -> Result<()> {
    cfg.pool.seed = a.seed;
    if let Some(n) = a.train {
        cfg.pool.n_train = n;
    }
    if let Some(n) = a.test {
        cfg.pool.n_test = n;
    }
    if let Some(c) = a.cols {
        cfg.pool.cols = c;
    }
    if let Some(r) = a.rows {
        cfg.pool.rows = r;
    }
    let cfg = validated(cfg)?;
    let pool = load_pool(None, &cfg)?;
    let mut out = OutputDir::create(&a.out, "gen-maps", &cfg, &[("pool_seed", a.seed)])?;
    write_pool(&mut out, &pool)?;
    info!("{} maps ({} train, {} test) written to {}", pool.entries.len(), pool.train_ids.len(), pool.test_ids.len(), a.out.display());
    out.finish()?;
    Ok(())
}

fn train(mut cfg: RunConfig, a: TrainArgs) -> Result<()> {
    cfg.train.seed = a.seed;
    if let Some(s) = a.steps {
        cfg.train.max_steps = s;
    }
    if let Some(w) = a.workers {
        cfg.train.workers = w;
    }
    if let Some(lr) = a.lr {
        cfg.train.learning_rate = lr;
    }
    if a.checkpoint_every.is_some() {
        cfg.train.checkpoint_every = a.checkpoint_every;
    }
    let cfg = validated(cfg)?;
    let stage = stage(a.stage)?;
    let pool = load_pool(a.pool.pool.as_deref(), &cfg)?;
    let initial = match &a.init {
        Some(path) => {
            let ckpt = load_checkpoint(path)?;
            check_model(&ckpt, &cfg, path)?;
            ckpt.checkpoint.params
        }
        None => init_params(a.seed, &cfg.agent)?,
    };

    let mut out = OutputDir::create(&a.out, "train", &cfg, &[("train_seed", a.seed), ("pool_seed", cfg.pool.seed)])?;
    let run_config = cfg.to_text()?;
    let seeds = vec![a.seed, cfg.pool.seed];
    let checkpoint = |step: u64, params: ParameterSet| Checkpoint {
        config: cfg.agent.clone(),
        run_config: run_config.clone(),
        seeds: seeds.clone(),
        global_step: step,
        params,
    };

    let csv_path = out.root().join("training.csv");
    let mut csv = TrainingCsv::new(BufWriter::new(File::create(&csv_path)?))?;
    let mut saved = Vec::new();
    let mut recent = Vec::new();
    let mut episodes = 0u64;
    let mut observer = |event: TrainEvent| -> Result<(), navbench::trainer::TrainError> {
        match event {
            TrainEvent::Rollout(r) => {
                csv.write(&r)?;
                if let Some(reward) = r.episode_reward {
                    episodes += 1;
                    recent.push(reward);
                    if recent.len() == 20 {
                        info!("step {:>9} | episodes {:>6} | mean reward (last 20) {:.2}", r.global_step, episodes, recent.iter().sum::<f64>() / 20.0);
                        recent.clear();
                    }
                }
            }
            TrainEvent::Checkpoint { global_step, params } => {
                let rel = format!("checkpoints/step_{global_step:010}.bin");
                let bytes = checkpoint(global_step, params).to_bytes()?;
                saved.push((rel, bytes));
            }
            TrainEvent::WorkerFailed { worker, error } => log::error!("worker {worker} failed: {error}"),
        }
        Ok(())
    };
    info!("training {} for {} steps with {} workers", stage, cfg.train.max_steps, cfg.train.workers);
    let summary = train_stage(stage, AblationFlags::default(), &pool, a.train_map, a.subset, &cfg.agent, &cfg.env, &cfg.train, initial, &mut observer)
        .map_err(classify)?;
    csv.flush()?;
    drop(csv);
    out.record("training.csv")?;
    for (rel, bytes) in saved {
        out.write(&rel, &bytes)?;
    }
    if !summary.failed_workers.is_empty() {
        log::warn!("{} worker(s) failed during training", summary.failed_workers.len());
    }
    let final_path = out.write("final.bin", &checkpoint(summary.global_step, summary.params).to_bytes()?)?;
    info!("{} steps, {} updates, {} episodes; final checkpoint {}", summary.global_step, summary.updates, summary.episodes, final_path.display());
    out.finish()?;
    Ok(())
}

fn eval_one(cfg: &RunConfig, settings: &EvalSettings, ckpt_path: &Path, pool: &MapPool) -> Result<(StageResult, String)> {
    let ckpt = load_checkpoint(ckpt_path)?;
    check_model(&ckpt, cfg, ckpt_path)?;
    check_compatible(&cfg.agent, &ckpt.checkpoint.params, &cfg.env).map_err(classify)?;
    let manifest = StageManifest::new(settings, pool, ckpt.hash.clone()).map_err(classify)?;
    let result = run_stage(settings, &cfg.agent, &ckpt.checkpoint.params, pool, &cfg.env).map_err(classify)?;
    Ok((result, manifest.to_text()?))
}

fn eval(mut cfg: RunConfig, a: EvalArgs) -> Result<()> {
    cfg.eval.seed = a.seed.context("--seed is required")?;
    apply_knobs(&mut cfg, &a.knobs);
    if let Some(v) = a.variant {
        cfg.eval.variant = variant(v);
    }
    if a.no_apples {
        cfg.eval.apples_present = false;
    }
    if a.fixed_textures {
        cfg.eval.textures_random = false;
    }
    let cfg = validated(cfg)?;
    require_file(&a.checkpoint, "checkpoint")?;
    let pool = load_pool(a.pool.pool.as_deref(), &cfg)?;
    let settings = settings(&cfg, stage(a.stage)?, cfg.eval.variant, cfg.eval.flags())?;
    let mut out = OutputDir::create(&a.out, "eval", &cfg, &[("eval_seed", cfg.eval.seed), ("pool_seed", cfg.pool.seed)])?;
    let (result, manifest) = eval_one(&cfg, &settings, &a.checkpoint, &pool)?;
    write_stage(&mut out, "", &result, &manifest)?;
    report_line(&settings.stage.to_string(), &result);
    out.finish()?;
    Ok(())
}

fn replay(config: Option<&Path>, overrides: &[String], manifest_path: &Path, a: EvalArgs) -> Result<()> {
    require_file(manifest_path, "manifest")?;
    let manifest = StageManifest::parse(&fs::read_to_string(manifest_path)?).map_err(classify)?;
    let sibling = manifest_path.parent().unwrap_or(Path::new(".")).join(CONFIG_FILE);
    let config_path = match config {
        Some(p) => p.to_path_buf(),
        None => sibling,
    };
    require_file(&config_path, "config")?;
    let cfg = validated(RunConfig::load(Some(&config_path), overrides)?)?;
    if cfg.hash()? != manifest.config_hash {
        return Err(validation(format!(
            "config hash mismatch: {} hashes to {} but the manifest records {}",
            config_path.display(),
            cfg.hash()?,
            manifest.config_hash
        )));
    }
    // The worker count never changes results, so it may differ from the
    // recorded run.
    let workers = a.knobs.workers.unwrap_or(cfg.eval.workers);
    let pool = load_pool(a.pool.pool.as_deref(), &cfg)?;
    let ckpt = load_checkpoint(&a.checkpoint)?;
    let settings = manifest.replay_settings(&pool, &ckpt.hash, workers).map_err(classify)?;
    let mut out = OutputDir::create(&a.out, "eval", &cfg, &[("eval_seed", settings.eval_seed), ("pool_seed", cfg.pool.seed)])?;
    let (result, manifest_text) = eval_one(&cfg, &settings, &a.checkpoint, &pool)?;
    write_stage(&mut out, "", &result, &manifest_text)?;
    report_line(&format!("replay of {}", settings.stage), &result);
    out.finish()?;
    Ok(())
}

fn bench(mut cfg: RunConfig, a: BenchArgs) -> Result<()> {
    cfg.eval.seed = a.seed;
    apply_knobs(&mut cfg, &a.knobs);
    let cfg = validated(cfg)?;
    let mut per_stage = std::collections::BTreeMap::new();
    for spec in &a.stage_checkpoint {
        let (s, p) = spec.split_once('=').ok_or_else(|| usage(format!("--stage-checkpoint `{spec}` is not STAGE=PATH")))?;
        let id: u8 = s.trim().parse().map_err(|_| usage(format!("bad stage in `{spec}`")))?;
        stage(id)?;
        per_stage.insert(id, std::path::PathBuf::from(p.trim()));
    }
    let pool = load_pool(a.pool.pool.as_deref(), &cfg)?;
    let mut out = OutputDir::create(&a.out, "bench", &cfg, &[("eval_seed", a.seed), ("pool_seed", cfg.pool.seed)])?;
    let mut rows = Vec::new();
    let runs = StageSpec::all().into_iter().map(|s| (s, EvalVariant::Seen)).chain([(stage(5)?, EvalVariant::Unseen)]);
    for (spec, var) in runs {
        let ckpt = per_stage.get(&spec.stage_id).unwrap_or(&a.checkpoint);
        let settings = settings(&cfg, spec, var, cfg.eval.flags())?;
        let (result, manifest) = eval_one(&cfg, &settings, ckpt, &pool)?;
        let prefix = format!("stage{}-{}/", spec.stage_id, var.as_str());
        write_stage(&mut out, &prefix, &result, &manifest)?;
        report_line(&format!("stage {} ({})", spec.stage_id, var.as_str()), &result);
        rows.push(SummaryRow::of(&result));
    }
    let mut csv = Vec::new();
    write_summary_csv(&rows, &mut csv)?;
    out.write("summary.csv", &csv)?;
    out.write("summary.json", serde_json::to_string_pretty(&rows)?.as_bytes())?;
    out.finish()?;
    Ok(())
}

fn ablate(mut cfg: RunConfig, a: AblateArgs) -> Result<()> {
    cfg.eval.seed = a.seed;
    apply_knobs(&mut cfg, &a.knobs);
    if let Some(v) = a.variant {
        cfg.eval.variant = variant(v);
    }
    let cfg = validated(cfg)?;
    let pool = load_pool(a.pool.pool.as_deref(), &cfg)?;
    let ckpt = load_checkpoint(&a.checkpoint)?;
    check_model(&ckpt, &cfg, &a.checkpoint)?;
    let base = settings(&cfg, stage(a.stage)?, cfg.eval.variant, cfg.eval.flags())?;
    let mut out = OutputDir::create(&a.out, "ablate", &cfg, &[("eval_seed", a.seed), ("pool_seed", cfg.pool.seed)])?;
    let cells = run_ablation_grid(&base, &cfg.agent, &ckpt.checkpoint.params, &pool, &cfg.env).map_err(classify)?;
    for cell in &cells {
        let prefix = format!("apples{}_textures{}/", u8::from(cell.flags.apples_present), u8::from(cell.flags.textures_random));
        let mut s = base.clone();
        s.flags = cell.flags;
        let manifest = StageManifest::new(&s, &pool, ckpt.hash.clone()).map_err(classify)?.to_text()?;
        write_stage(&mut out, &prefix, &cell.result, &manifest)?;
        report_line(prefix.trim_end_matches('/'), &cell.result);
    }
    let mut csv = Vec::new();
    write_ablation_csv(&cells, &mut csv)?;
    out.write("ablation.csv", &csv)?;
    out.finish()?;
    Ok(())
}

#[derive(Serialize)]
struct ProbeReport {
    probe: &'static str,
    episodes: usize,
    seed: u64,
    shorter: usize,
    longer: usize,
    unresolved: usize,
    fraction: Option<f64>,
    std: Option<f64>,
}

fn baseline(mut cfg: RunConfig, a: BaselineArgs) -> Result<()> {
    cfg.eval.seed = a.seed;
    apply_knobs(&mut cfg, &a.knobs);
    if let Some(v) = a.variant {
        cfg.eval.variant = variant(v);
    }
    let cfg = validated(cfg)?;
    let pool = load_pool(a.pool.pool.as_deref(), &cfg)?;
    let settings = settings(&cfg, stage(a.stage)?, cfg.eval.variant, cfg.eval.flags())?;
    let mut out = OutputDir::create(&a.out, "baseline", &cfg, &[("eval_seed", a.seed), ("pool_seed", cfg.pool.seed)])?;
    let result = run_stage_with(&settings, &pool, &cfg.env, |seed| Ok(RandomPolicy::new(seed))).map_err(classify)?;
    let manifest = StageManifest::new(&settings, &pool, "random-policy".into()).map_err(classify)?.to_text()?;
    write_stage(&mut out, "", &result, &manifest)?;
    report_line(&format!("random agent, {}", settings.stage), &result);

    if let Some(which) = a.probe {
        let (name, probe) = match which {
            ProbeArg::Square => ("square", square_map_probe()),
            ProbeArg::Goal => ("goal", goal_map_probe()),
        };
        let map = EvalMap { map_id: None, maze: std::sync::Arc::new(probe.maze.clone()), annotations: probe.annotations() };
        let (_, logs) = evaluate_policy(&[map], &cfg.env, a.probe_episodes, a.seed, |m, _| m.annotations.clone(), RandomPolicy::new)?;
        let stats = shorter_path_fraction(&logs, &probe)?;
        let report = ProbeReport {
            probe: name,
            episodes: a.probe_episodes,
            seed: a.seed,
            shorter: stats.shorter,
            longer: stats.longer,
            unresolved: stats.unresolved,
            fraction: stats.fraction,
            std: stats.std,
        };
        info!(
            "{name} probe: shorter-path fraction {} over {} resolved traversals",
            stats.fraction.map_or_else(|| "-".into(), |f| format!("{f:.3}")),
            stats.shorter + stats.longer
        );
        out.write(&format!("probe_{name}.json"), serde_json::to_string_pretty(&report)?.as_bytes())?;
    }
    out.finish()?;
    Ok(())
}

fn selftest(a: SelftestArgs) -> Result<()> {
    let results = run_all(a.quick);
    let mut failed = 0;
    for r in &results {
        println!("{} {:<26} {:>7.2}s  {}", if r.passed { "PASS" } else { "FAIL" }, r.name, r.seconds, r.detail);
        failed += usize::from(!r.passed);
    }
    if failed > 0 {
        bail!("{failed} of {} suites failed", results.len());
    }
    Ok(())
}
