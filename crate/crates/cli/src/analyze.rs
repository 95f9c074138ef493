use std::fs::{self, File};
use std::io::BufReader;
use std::path::Path;
use std::sync::Arc;

use anyhow::{Context, Result};
use log::info;
use navbench::analysis::{
    bar_plot_svg, line_plot_svg, read_summary_bars, read_training_csv, render_topdown, replay_episode, saliency, summarize_saliency, trajectory_poses,
};
use navbench::benchmark::{episode_annotations, StageManifest};
use navbench::maze::{MapAnnotations, Maze};
use navbench::raycast::RgbImage;
use navbench::world::EpisodeLog;

use crate::artifacts::{check_model, load_checkpoint, load_pool, require_file, OutputDir, CONFIG_FILE};
use crate::config::RunConfig;
use crate::exit::validation;
use crate::{AnalyzeCommand, PoolArgs};

pub fn run(base: RunConfig, what: AnalyzeCommand) -> Result<()> {
    match what {
        AnalyzeCommand::Saliency { run, log, checkpoint, pool, out, frames_every } => {
            let episode = load_episode(&run, &log, &pool)?;
            let ckpt = load_checkpoint(&checkpoint)?;
            check_model(&ckpt, &episode.cfg, &checkpoint)?;
            let cfg = &episode.cfg;
            let steps = replay_episode(episode.maze, episode.annotations, &cfg.env, &episode.log, &cfg.agent, &cfg.train)?;
            let masks = saliency(&cfg.agent, &ckpt.checkpoint.params, &cfg.train, &steps)?;
            let summary = summarize_saliency(&masks);
            let mut dir = OutputDir::create(&out, "analyze-saliency", cfg, &[("episode_seed", episode.log.header.episode_seed)])?;
            dir.write("saliency.json", serde_json::to_string_pretty(&summary)?.as_bytes())?;
            let mut mass = String::from("frame,central_third_mass,max\n");
            for (t, m) in masks.iter().enumerate() {
                mass.push_str(&format!("{t},{},{}\n", m.central_third_mass().map(|c| c.to_string()).unwrap_or_default(), m.max()));
            }
            dir.write("central_mass.csv", mass.as_bytes())?;
            if frames_every > 0 {
                for (t, (m, s)) in masks.iter().zip(&steps).enumerate().step_by(frames_every) {
                    dir.write(&format!("frames/{t:04}_obs.ppm"), &ppm(&s.observation.image.to_rgb8())?)?;
                    dir.write(&format!("frames/{t:04}_mask.ppm"), &ppm(&m.to_rgb8())?)?;
                    dir.write(&format!("frames/{t:04}_masked.ppm"), &ppm(&m.apply(&s.observation.image)?.to_rgb8())?)?;
                }
            }
            info!(
                "{} frames, {} with nonzero gradient; mean central-third mass {}; central majority on {} of frames",
                summary.frames,
                summary.nonzero_frames,
                summary.mean_central_mass.map_or_else(|| "-".into(), |v| format!("{v:.3}")),
                summary.central_majority_share.map_or_else(|| "-".into(), |v| format!("{:.1}%", 100.0 * v))
            );
            dir.finish()?;
        }
        AnalyzeCommand::Topdown { run, log, pool, from, to, px, out } => {
            let episode = load_episode(&run, &log, &pool)?;
            let end = to.unwrap_or(episode.log.records.len());
            let trail = trajectory_poses(&episode.log, from..end);
            let img = render_topdown(&episode.maze, &episode.annotations, &trail, episode.cfg.env.block_size, px);
            if let Some(parent) = out.parent() {
                fs::create_dir_all(parent)?;
            }
            fs::write(&out, ppm(&img)?).with_context(|| format!("writing {}", out.display()))?;
            info!("wrote {} ({} poses)", out.display(), trail.len());
        }
        AnalyzeCommand::Plot { training, summary, metric, out } => {
            let mut dir = OutputDir::create(&out, "analyze-plot", &base, &[])?;
            if !training.is_empty() {
                let mut series = Vec::new();
                for spec in &training {
                    let (label, path) = match spec.split_once('=') {
                        Some((l, p)) => (l.to_string(), Path::new(p).to_path_buf()),
                        None => (spec.clone(), Path::new(spec).to_path_buf()),
                    };
                    require_file(&path, "training CSV")?;
                    let s = read_training_csv(BufReader::new(File::open(&path)?), &label).map_err(|e| validation(format!("{}: {e}", path.display())))?;
                    series.push(s);
                }
                dir.write("reward.svg", line_plot_svg(&series, "Episode reward", "environment steps", "reward").as_bytes())?;
            }
            if let Some(path) = summary {
                require_file(&path, "summary CSV")?;
                for m in &metric {
                    let bars = read_summary_bars(BufReader::new(File::open(&path)?), m).map_err(|e| validation(format!("{}: {e}", path.display())))?;
                    dir.write(&format!("{m}.svg"), bar_plot_svg(&bars, m, m).as_bytes())?;
                }
            }
            dir.finish()?;
        }
    }
    Ok(())
}

fn ppm(img: &RgbImage) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    img.write_ppm(&mut buf)?;
    Ok(buf)
}

struct LoggedEpisode {
    cfg: RunConfig,
    log: EpisodeLog,
    maze: Arc<Maze>,
    annotations: MapAnnotations,
}

/// A log from an evaluation directory, with the maze and the per-episode
/// annotations it was played on.
fn load_episode(run: &Path, log: &Path, pool: &PoolArgs) -> Result<LoggedEpisode> {
    let config_path = run.join(CONFIG_FILE);
    let manifest_path = run.join("manifest.toml");
    let log_path = run.join(log);
    for (p, what) in [(&config_path, "run config"), (&manifest_path, "manifest"), (&log_path, "log")] {
        require_file(p, what)?;
    }
    let cfg = RunConfig::parse(&fs::read_to_string(&config_path)?)?;
    let manifest = StageManifest::parse(&fs::read_to_string(&manifest_path)?).map_err(|e| validation(e.to_string()))?;
    let log = EpisodeLog::read_jsonl(BufReader::new(File::open(&log_path)?)).map_err(|e| validation(format!("{}: {e}", log_path.display())))?;
    let pool = load_pool(pool.pool.as_deref(), &cfg)?;
    let map_id = log.header.map_id.ok_or_else(|| validation("log has no map id"))?;
    let entry = pool.entry(map_id).ok_or_else(|| validation(format!("map {map_id} is not in the pool")))?;
    let maze = entry.generate()?;
    if maze.seed() != log.header.map_seed {
        return Err(validation(format!("map {map_id} has seed {} but the log records {}", maze.seed(), log.header.map_seed)));
    }
    let annotations = episode_annotations(&maze, &manifest.stage, manifest.flags, log.header.episode_seed)?;
    Ok(LoggedEpisode { cfg, log, maze: Arc::new(maze), annotations })
}
