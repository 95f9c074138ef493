//! Qualitative artifacts: gradient saliency, top-down trajectory renders and
//! SVG plots.

use std::fmt::Write as _;
use std::io::Read;
use std::ops::Range;
use std::sync::Arc;

use thiserror::Error;

use crate::agent::{forward, AgentConfig, AgentError, ParameterSet, RecurrentState};
use crate::maze::{Block, MapAnnotations, Maze};
use crate::raycast::{coarse_depth_classes, DepthBuckets, Image, LoopClosureTracker, Observation, RgbImage};
use crate::trainer::{RolloutRecorder, StepTargets, TrainConfig, TrainError};
use crate::world::{Action, EnvConfig, Environment, EpisodeLog, Pose, WorldError};

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("replay diverged from the log at step {step}: {message}")]
    Replay { step: usize, message: String },
    #[error("CSV row {row}: {message}")]
    Csv { row: usize, message: String },
    #[error("invalid input: {0}")]
    Input(String),
    #[error(transparent)]
    World(#[from] WorldError),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Train(#[from] TrainError),
}

/// One replayed step with everything the training loss needs.
#[derive(Clone, Debug)]
pub struct ReplayedStep {
    pub observation: Observation,
    pub action: Action,
    pub reward: f64,
    pub depth_target: Vec<usize>,
    pub loop_target: bool,
}

/// Re-run a logged episode, re-rendering every observation and recomputing
/// the auxiliary targets from ground truth.
pub fn replay_episode(
    maze: Arc<Maze>,
    annotations: MapAnnotations,
    env: &EnvConfig,
    log: &EpisodeLog,
    agent: &AgentConfig,
    cfg: &TrainConfig,
) -> Result<Vec<ReplayedStep>, AnalysisError> {
    let buckets = DepthBuckets::for_maze(&maze, env.agent_radius, env.block_size);
    let mut world = Environment::reset(maze, annotations, env.clone(), log.header.episode_seed)?;
    if world.pose() != log.header.start {
        return Err(AnalysisError::Replay { step: 0, message: "start pose differs".into() });
    }
    let mut tracker = LoopClosureTracker::new(cfg.loop_t_min, cfg.loop_radius);
    let mut out = Vec::with_capacity(log.records.len());
    for rec in &log.records {
        let observation = world.observe()?;
        let pose = world.pose();
        let depth_target = coarse_depth_classes(world.maze(), &pose, env.camera.fov, agent.depth_groups, &buckets, env.block_size);
        let loop_target = tracker.observe(pose.position());
        let step = world.step(rec.action)?;
        let d = step.pose.distance_to(rec.pose.position()) + (step.pose.heading - rec.pose.heading).abs();
        if d > 1e-6 {
            return Err(AnalysisError::Replay { step: rec.t, message: format!("pose {:?} vs logged {:?}", step.pose, rec.pose) });
        }
        out.push(ReplayedStep { observation, action: rec.action, reward: step.reward, depth_target, loop_target });
    }
    Ok(out)
}

/// Per-pixel attention for one frame, row-major `height × width`.
#[derive(Clone, Debug, PartialEq)]
pub struct SaliencyMask {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
    /// False when the gradient was all zero and normalization was skipped.
    pub normalized: bool,
}

impl SaliencyMask {
    /// Sum of absolute gradient over channels, scaled so the maximum is one.
    pub fn from_gradient(grad: &[f64], width: usize, height: usize) -> Result<Self, AnalysisError> {
        let plane = width * height;
        if grad.len() != 3 * plane {
            return Err(AnalysisError::Input(format!("gradient of length {} for a {width}x{height} image", grad.len())));
        }
        let mut values: Vec<f64> = (0..plane).map(|i| (0..3).map(|c| grad[c * plane + i].abs()).sum()).collect();
        let max = values.iter().copied().fold(0.0, f64::max);
        if max > 0.0 {
            values.iter_mut().for_each(|v| *v /= max);
        } else {
            log::info!("all-zero input gradient; saliency normalization skipped");
        }
        Ok(SaliencyMask { width, height, values, normalized: max > 0.0 })
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    /// Share of the mask mass in the middle third of the columns.
    pub fn central_third_mass(&self) -> Option<f64> {
        let total: f64 = self.values.iter().sum();
        if total <= 0.0 {
            return None;
        }
        let (lo, hi) = (self.width / 3, self.width - self.width / 3);
        let central: f64 = (0..self.height).flat_map(|r| (lo..hi).map(move |c| r * self.width + c)).map(|i| self.values[i]).sum();
        Some(central / total)
    }

    /// Grayscale raster of the mask.
    pub fn to_rgb8(&self) -> RgbImage {
        let mut out = RgbImage::new(self.width, self.height, [0, 0, 0]);
        for (i, v) in self.values.iter().enumerate() {
            let g = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
            out.put(i % self.width, i / self.width, [g, g, g]);
        }
        out
    }

    /// The observation with every pixel scaled by its attention value.
    pub fn apply(&self, image: &Image) -> Result<Image, AnalysisError> {
        if image.width != self.width || image.height != self.height {
            return Err(AnalysisError::Input("mask and image sizes differ".into()));
        }
        let plane = self.width * self.height;
        let data = image.data.iter().enumerate().map(|(i, v)| v * self.values[i % plane]).collect();
        Ok(Image { width: self.width, height: self.height, data })
    }
}

/// Saliency of the total training loss with respect to each input image.
///
/// The episode is cut into `t_max` windows exactly as a training worker
/// would cut it, with the recurrent state carried across windows and the
/// value of the next observation as bootstrap (zero after the last step).
pub fn saliency(agent: &AgentConfig, params: &ParameterSet, cfg: &TrainConfig, steps: &[ReplayedStep]) -> Result<Vec<SaliencyMask>, AnalysisError> {
    params.check(agent)?;
    let mut state = RecurrentState::zeros(agent);
    let mut masks = Vec::with_capacity(steps.len());
    let windows: Vec<&[ReplayedStep]> = steps.chunks(cfg.t_max.max(1)).collect();
    for (w, window) in windows.iter().enumerate() {
        let mut rec = RolloutRecorder::for_saliency(agent, params, &state);
        for s in *window {
            rec.step(&s.observation)?;
        }
        let next_state = rec.state();
        let bootstrap = match windows.get(w + 1) {
            Some(next) => forward(agent, params, &next[0].observation, &next_state)?.0.value,
            None => 0.0,
        };
        let targets: Vec<StepTargets<'_>> = window
            .iter()
            .map(|s| StepTargets { action: s.action, reward: s.reward, depth_target: &s.depth_target, loop_target: s.loop_target })
            .collect();
        let (grads, _) = rec.finish_saliency(&targets, bootstrap, cfg)?;
        for g in grads {
            masks.push(SaliencyMask::from_gradient(&g, agent.width, agent.height)?);
        }
        state = next_state;
    }
    Ok(masks)
}

/// Central-third statistics over a mask sequence.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize)]
pub struct SaliencySummary {
    pub frames: usize,
    pub nonzero_frames: usize,
    pub mean_central_mass: Option<f64>,
    /// Share of nonzero frames whose central third holds over half the mass.
    pub central_majority_share: Option<f64>,
}

pub fn summarize_saliency(masks: &[SaliencyMask]) -> SaliencySummary {
    let central: Vec<f64> = masks.iter().filter_map(SaliencyMask::central_third_mass).collect();
    let n = central.len();
    SaliencySummary {
        frames: masks.len(),
        nonzero_frames: n,
        mean_central_mass: (n > 0).then(|| central.iter().sum::<f64>() / n as f64),
        central_majority_share: (n > 0).then(|| central.iter().filter(|&&c| c > 0.5).count() as f64 / n as f64),
    }
}

pub const TOPDOWN_GOAL: [u8; 3] = [0xFF, 0x8C, 0x00];
pub const TOPDOWN_TRAIL: [u8; 3] = [0x00, 0x00, 0x00];
pub const TOPDOWN_HEADING: [u8; 3] = [0xFF, 0x00, 0x00];
pub const TOPDOWN_APPLE: [u8; 3] = [0x2E, 0x8B, 0x57];
pub const TOPDOWN_WALL: [u8; 3] = [0x5A, 0x5A, 0x5A];
pub const TOPDOWN_FLOOR: [u8; 3] = [0xF0, 0xF0, 0xF0];

/// Poses of a log, including respawn poses, for steps in `range`.
pub fn trajectory_poses(log: &EpisodeLog, range: Range<usize>) -> Vec<Pose> {
    let starts = log.start_poses();
    let end = range.end.min(log.records.len());
    let mut out = Vec::new();
    for i in range.start.min(end)..end {
        if i == range.start {
            out.push(starts[i]);
        }
        let r = &log.records[i];
        out.push(r.pose);
        if let Some(p) = r.respawn {
            out.push(p);
        }
    }
    out
}

/// Draw the block grid to scale with goal, apples, the trail and a heading
/// tick at the last pose. Consecutive poses further apart than half a block
/// (respawns) are not joined.
pub fn render_topdown(maze: &Maze, annotations: &MapAnnotations, trail: &[Pose], block_size: f64, px_per_block: usize) -> RgbImage {
    let s = px_per_block.max(1);
    let mut img = RgbImage::new(maze.block_width() * s, maze.block_height() * s, TOPDOWN_FLOOR);
    let fill = |img: &mut RgbImage, col: usize, row: usize, inset: usize, rgb| {
        for y in row * s + inset..(row + 1) * s - inset {
            for x in col * s + inset..(col + 1) * s - inset {
                img.put(x, y, rgb);
            }
        }
    };
    for (i, b) in maze.blocks().iter().enumerate() {
        if *b == Block::Wall {
            let p = maze.pos_of(i);
            fill(&mut img, p.col, p.row, 0, TOPDOWN_WALL);
        }
    }
    for a in &annotations.apples {
        fill(&mut img, a.col, a.row, s * 3 / 8, TOPDOWN_APPLE);
    }
    fill(&mut img, annotations.goal.col, annotations.goal.row, s / 5, TOPDOWN_GOAL);

    let scale = s as f64 / block_size;
    let to_px = |x: f64, y: f64| (x * scale, y * scale);
    for w in trail.windows(2) {
        if w[0].distance_to(w[1].position()) > block_size / 2.0 {
            continue;
        }
        let (a, b) = (to_px(w[0].x, w[0].y), to_px(w[1].x, w[1].y));
        draw_line(&mut img, a, b, TOPDOWN_TRAIL);
    }
    if let Some(last) = trail.last() {
        let a = to_px(last.x, last.y);
        let len = 0.4 * s as f64;
        draw_line(&mut img, a, (a.0 + len * last.heading.cos(), a.1 + len * last.heading.sin()), TOPDOWN_HEADING);
    }
    img
}

fn draw_line(img: &mut RgbImage, a: (f64, f64), b: (f64, f64), rgb: [u8; 3]) {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let n = dx.abs().max(dy.abs()).ceil().max(1.0) as usize;
    for i in 0..=n {
        let t = i as f64 / n as f64;
        let (x, y) = (a.0 + t * dx, a.1 + t * dy);
        if x >= 0.0 && y >= 0.0 {
            img.put(x as usize, y as usize, rgb);
        }
    }
}

/// One line of a line plot.
#[derive(Clone, Debug, PartialEq)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

fn csv_error(e: csv::Error) -> AnalysisError {
    let row = e.position().map_or(0, |p| p.line() as usize);
    AnalysisError::Csv { row, message: e.to_string() }
}

fn column(headers: &csv::StringRecord, name: &str) -> Result<usize, AnalysisError> {
    headers.iter().position(|h| h == name).ok_or_else(|| AnalysisError::Csv { row: 1, message: format!("missing column {name:?}") })
}

/// Episode reward against global step from a training CSV. `row` numbers
/// in errors count the header as row 1.
pub fn read_training_csv<R: Read>(r: R, label: &str) -> Result<Series, AnalysisError> {
    let mut reader = csv::Reader::from_reader(r);
    let headers = reader.headers().map_err(csv_error)?.clone();
    let (cs, cr) = (column(&headers, "global_step")?, column(&headers, "episode_reward")?);
    let mut points = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let row = i + 2;
        let rec = rec.map_err(|e| AnalysisError::Csv { row, message: e.to_string() })?;
        let field = |k: usize| rec.get(k).unwrap_or("").trim();
        if field(cr).is_empty() {
            continue;
        }
        let num = |k: usize| field(k).parse::<f64>().map_err(|_| AnalysisError::Csv { row, message: format!("{:?} is not a number", field(k)) });
        points.push((num(cs)?, num(cr)?));
    }
    Ok(Series { label: label.to_string(), points })
}

/// A bar with a symmetric whisker.
#[derive(Clone, Debug, PartialEq)]
pub struct Bar {
    pub label: String,
    pub mean: f64,
    pub std: f64,
}

/// Bars for `metric` (a `*_mean` / `*_std` column pair) from a benchmark
/// summary CSV; rows with no mean are skipped.
pub fn read_summary_bars<R: Read>(r: R, metric: &str) -> Result<Vec<Bar>, AnalysisError> {
    let mut reader = csv::Reader::from_reader(r);
    let headers = reader.headers().map_err(csv_error)?.clone();
    let cs = column(&headers, "stage")?;
    let cv = column(&headers, "variant")?;
    let cm = column(&headers, &format!("{metric}_mean"))?;
    let cd = column(&headers, &format!("{metric}_std"))?;
    let mut bars = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let row = i + 2;
        let rec = rec.map_err(|e| AnalysisError::Csv { row, message: e.to_string() })?;
        let field = |k: usize| rec.get(k).unwrap_or("").trim();
        if field(cm).is_empty() {
            continue;
        }
        let num = |k: usize| {
            let f = field(k);
            if f.is_empty() {
                return Ok(0.0);
            }
            f.parse::<f64>().map_err(|_| AnalysisError::Csv { row, message: format!("{f:?} is not a number") })
        };
        bars.push(Bar { label: format!("{} {}", field(cs), field(cv)), mean: num(cm)?, std: num(cd)? });
    }
    Ok(bars)
}

/// Padded axis range covering every value; degenerate ranges are widened.
pub fn axis_range(values: impl IntoIterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.into_iter().filter(|v| v.is_finite()).fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| (l.min(v), h.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        let pad = if lo.abs() > 1e-12 { lo.abs() * 0.1 } else { 1.0 };
        return (lo - pad, hi + pad);
    }
    let pad = 0.05 * (hi - lo);
    (lo - pad, hi + pad)
}

const PLOT_W: f64 = 640.0;
const PLOT_H: f64 = 400.0;
const MARGIN: f64 = 60.0;
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

struct Frame {
    x: (f64, f64),
    y: (f64, f64),
}

impl Frame {
    fn px(&self, x: f64) -> f64 {
        MARGIN + (x - self.x.0) / (self.x.1 - self.x.0) * (PLOT_W - 2.0 * MARGIN)
    }

    fn py(&self, y: f64) -> f64 {
        PLOT_H - MARGIN - (y - self.y.0) / (self.y.1 - self.y.0) * (PLOT_H - 2.0 * MARGIN)
    }
}

fn svg_open(out: &mut String, title: &str, frame: &Frame, x_label: &str, y_label: &str) {
    let _ = writeln!(out, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(out, r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{PLOT_W}" height="{PLOT_H}" viewBox="0 0 {PLOT_W} {PLOT_H}">"#);
    let _ = writeln!(out, r#"<rect width="{PLOT_W}" height="{PLOT_H}" fill="white"/>"#);
    let _ = writeln!(out, r#"<text x="{}" y="24" text-anchor="middle" font-size="16">{}</text>"#, PLOT_W / 2.0, escape(title));
    let (x0, x1, y0, y1) = (MARGIN, PLOT_W - MARGIN, PLOT_H - MARGIN, MARGIN);
    let _ = writeln!(out, r#"<path d="M{x0} {y1} L{x0} {y0} L{x1} {y0}" stroke="black" fill="none"/>"#);
    let _ = writeln!(out, r#"<text x="{}" y="{}" text-anchor="middle" font-size="12">{}</text>"#, PLOT_W / 2.0, PLOT_H - 15.0, escape(x_label));
    let _ = writeln!(out, r#"<text x="15" y="{}" text-anchor="middle" font-size="12" transform="rotate(-90 15 {})">{}</text>"#, PLOT_H / 2.0, PLOT_H / 2.0, escape(y_label));
    let _ = writeln!(out, r#"<text class="ymin" x="{}" y="{y0}" text-anchor="end" font-size="10">{:.6}</text>"#, x0 - 4.0, frame.y.0);
    let _ = writeln!(out, r#"<text class="ymax" x="{}" y="{}" text-anchor="end" font-size="10">{:.6}</text>"#, x0 - 4.0, y1 + 8.0, frame.y.1);
}

/// Line plot with one polyline per series and a point marker for each
/// single-point series.
pub fn line_plot_svg(series: &[Series], title: &str, x_label: &str, y_label: &str) -> String {
    let all = || series.iter().flat_map(|s| s.points.iter());
    let frame = Frame { x: axis_range(all().map(|p| p.0)), y: axis_range(all().map(|p| p.1)) };
    let mut out = String::new();
    svg_open(&mut out, title, &frame, x_label, y_label);
    let (y0, x1) = (PLOT_H - MARGIN, PLOT_W - MARGIN);
    let _ = writeln!(out, r#"<text class="xmin" x="{MARGIN}" y="{}" text-anchor="start" font-size="10">{:.6}</text>"#, y0 + 14.0, frame.x.0);
    let _ = writeln!(out, r#"<text class="xmax" x="{x1}" y="{}" text-anchor="end" font-size="10">{:.6}</text>"#, y0 + 14.0, frame.x.1);
    for (i, s) in series.iter().enumerate() {
        let colour = PALETTE[i % PALETTE.len()];
        let pts: Vec<String> = s.points.iter().map(|&(x, y)| format!("{:.2},{:.2}", frame.px(x), frame.py(y))).collect();
        let _ = writeln!(out, r#"<polyline points="{}" fill="none" stroke="{colour}" stroke-width="1.5"/>"#, pts.join(" "));
        if let [(x, y)] = s.points[..] {
            let _ = writeln!(out, r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{colour}"/>"#, frame.px(x), frame.py(y));
        }
        let _ = writeln!(out, r#"<text x="{}" y="{}" font-size="11" fill="{colour}">{}</text>"#, x1 - 120.0, MARGIN + 14.0 * (i as f64 + 1.0), escape(&s.label));
    }
    out.push_str("</svg>\n");
    out
}

/// Bar chart with one-standard-deviation whiskers.
pub fn bar_plot_svg(bars: &[Bar], title: &str, y_label: &str) -> String {
    let extent = bars.iter().flat_map(|b| [b.mean - b.std, b.mean + b.std]).chain([0.0]);
    let frame = Frame { x: (0.0, bars.len().max(1) as f64), y: axis_range(extent) };
    let mut out = String::new();
    svg_open(&mut out, title, &frame, "", y_label);
    let slot = (PLOT_W - 2.0 * MARGIN) / bars.len().max(1) as f64;
    let zero = frame.py(0.0);
    for (i, b) in bars.iter().enumerate() {
        let x = MARGIN + slot * (i as f64 + 0.2);
        let w = slot * 0.6;
        let top = frame.py(b.mean);
        let _ = writeln!(
            out,
            r#"<rect x="{x:.2}" y="{:.2}" width="{w:.2}" height="{:.2}" fill="{}"/>"#,
            top.min(zero),
            (top - zero).abs(),
            PALETTE[i % PALETTE.len()]
        );
        let cx = x + w / 2.0;
        let _ = writeln!(
            out,
            r#"<line x1="{cx:.2}" y1="{:.2}" x2="{cx:.2}" y2="{:.2}" stroke="black"/>"#,
            frame.py(b.mean - b.std),
            frame.py(b.mean + b.std)
        );
        let _ = writeln!(out, r#"<text x="{cx:.2}" y="{}" text-anchor="middle" font-size="10">{}</text>"#, PLOT_H - MARGIN + 14.0, escape(&b.label));
    }
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::init_params;
    use crate::maze::{annotate, parse_map, StageFlags};
    use crate::scripted::RandomPolicy;
    use crate::world::{run_episode, EpisodeMeta};

    fn small_env() -> EnvConfig {
        let mut env = EnvConfig { episode_len: 30, ..EnvConfig::default() };
        env.camera.width = 42;
        env.camera.height = 42;
        env
    }

    fn logged_episode(env: &EnvConfig) -> (Arc<Maze>, MapAnnotations, EpisodeLog) {
        let maze = Arc::new(crate::maze::generate_maze(4, 3, 3).unwrap());
        let ann = annotate(&maze, StageFlags { goal_static: true, spawn_static: true }, 2, 0).unwrap();
        let log = run_episode(maze.clone(), ann.clone(), env, &mut RandomPolicy::new(3), 11, &EpisodeMeta::default()).unwrap();
        (maze, ann, log)
    }

    #[test]
    fn saliency_masks_are_normalized() {
        let env = small_env();
        let (maze, ann, log) = logged_episode(&env);
        let agent = AgentConfig::default();
        let cfg = TrainConfig::default();
        let steps = replay_episode(maze, ann, &env, &log, &agent, &cfg).unwrap();
        assert_eq!(steps.len(), 30);
        let masks = saliency(&agent, &init_params(2, &agent).unwrap(), &cfg, &steps).unwrap();
        assert_eq!(masks.len(), 30);
        for m in &masks {
            assert!(m.values.iter().all(|v| (0.0..=1.0).contains(v)));
            if m.normalized {
                assert!((m.max() - 1.0).abs() < 1e-12);
            }
        }
        assert!(masks.iter().any(|m| m.normalized));
        let s = summarize_saliency(&masks);
        assert!(s.mean_central_mass.unwrap() > 0.0);
    }

    #[test]
    fn zero_parameters_give_zero_masks() {
        let env = small_env();
        let (maze, ann, log) = logged_episode(&env);
        let agent = AgentConfig::default();
        let cfg = TrainConfig::default();
        let steps = replay_episode(maze, ann, &env, &log, &agent, &cfg).unwrap();
        let zeros = init_params(2, &agent).unwrap().zeros_like();
        let masks = saliency(&agent, &zeros, &cfg, &steps[..5]).unwrap();
        assert!(masks.iter().all(|m| !m.normalized && m.values.iter().all(|&v| v == 0.0)));
        assert_eq!(summarize_saliency(&masks).mean_central_mass, None);
    }

    #[test]
    fn replay_detects_divergence() {
        let env = small_env();
        let (maze, ann, mut log) = logged_episode(&env);
        log.records[3].pose.x += 1.0;
        let err = replay_episode(maze, ann, &env, &log, &AgentConfig::default(), &TrainConfig::default()).unwrap_err();
        assert!(matches!(err, AnalysisError::Replay { step: 3, .. }));
    }

    #[test]
    fn central_mass_of_a_band() {
        let mut values = vec![0.0; 9 * 2];
        values[4] = 1.0;
        values[9] = 1.0;
        let m = SaliencyMask { width: 9, height: 2, values, normalized: true };
        assert_eq!(m.central_third_mass(), Some(0.5));
    }

    #[test]
    fn topdown_colours() {
        let (maze, ann) = parse_map("#####\n#S.G#\n#####").unwrap();
        let ann = ann.unwrap();
        let img = render_topdown(&maze, &ann, &[], 100.0, 10);
        assert_eq!((img.width, img.height), (50, 30));
        assert_eq!(img.get(35, 15), TOPDOWN_GOAL);
        assert_eq!(img.get(0, 0), TOPDOWN_WALL);
        assert_eq!(img.get(15, 15), TOPDOWN_FLOOR);
    }

    #[test]
    fn trail_length_tracks_path_length() {
        let (maze, ann) = parse_map("#######\n#S...G#\n#######").unwrap();
        let ann = ann.unwrap();
        let trail: Vec<Pose> = (0..=8).map(|i| Pose { x: 150.0 + 25.0 * i as f64, y: 140.0, heading: 0.0 }).collect();
        let img = render_topdown(&maze, &ann, &trail, 100.0, 20);
        let black = (0..img.height).flat_map(|y| (0..img.width).map(move |x| (x, y))).filter(|&(x, y)| img.get(x, y) == TOPDOWN_TRAIL).count();
        // 200 world units at 0.2 px per unit.
        assert!((black as f64 - 40.0).abs() <= 2.0, "{black}");
        assert_eq!(img.get(74, 28), TOPDOWN_HEADING);
    }

    #[test]
    fn training_csv_parsing() {
        let text = "global_step,episode_reward\n10,\n20,-3.5\n";
        let s = read_training_csv(text.as_bytes(), "run").unwrap();
        assert_eq!(s.points, vec![(20.0, -3.5)]);
        let svg = line_plot_svg(&[s], "reward", "step", "reward");
        assert_eq!(svg.matches("<polyline").count(), 1);
        assert!(svg.contains("<circle"));
        let bad = "global_step,episode_reward\n10,1\n20,x\n";
        match read_training_csv(bad.as_bytes(), "run") {
            Err(AnalysisError::Csv { row, .. }) => assert_eq!(row, 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn two_series_two_polylines() {
        let a = Series { label: "a".into(), points: vec![(0.0, 1.0), (1.0, 2.0)] };
        let b = Series { label: "b".into(), points: vec![(0.0, -1.0), (2.0, 5.0)] };
        let svg = line_plot_svg(&[a, b], "t", "x", "y");
        assert_eq!(svg.matches("<polyline").count(), 2);
        let (lo, hi) = axis_range([1.0, 2.0, -1.0, 5.0]);
        assert!(lo <= -1.0 && hi >= 5.0);
    }

    #[test]
    fn summary_bars() {
        let text = "stage,variant,reward_mean,reward_std\n1,seen,5,1\n5,unseen,,\n";
        let bars = read_summary_bars(text.as_bytes(), "reward").unwrap();
        assert_eq!(bars, vec![Bar { label: "1 seen".into(), mean: 5.0, std: 1.0 }]);
        let svg = bar_plot_svg(&bars, "reward", "reward");
        assert_eq!(svg.matches("<rect").count(), 2);
    }
}
