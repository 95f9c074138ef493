//! First-person rendering and ground-truth depth.
//!
//! Grid DDA over the block maze, one ray per image column. Distances are
//! perpendicular to the view direction (no fisheye). Wall slices are
//! `round(H * block / d)` pixels tall; floor and ceiling are flat except for
//! the goal (orange floor and ceiling patch) and uncollected apples (green
//! floor patch).

use std::collections::BTreeSet;
use std::io::{self, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::maze::{BlockPos, Maze, TextureMap, TEXTURE_PALETTE};
use crate::world::{Action, Pose};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RenderError {
    #[error("field of view must lie in (0, pi), got {0}")]
    BadFov(f64),
    #[error("image must be at least 1x1 pixels, got {0}x{1}")]
    BadSize(usize, usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub width: usize,
    pub height: usize,
    pub fov: f64,
}

impl Camera {
    pub fn new(width: usize, height: usize, fov: f64) -> Result<Self, RenderError> {
        let cam = Camera { width, height, fov };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<(), RenderError> {
        if !(self.fov > 0.0 && self.fov < std::f64::consts::PI) {
            return Err(RenderError::BadFov(self.fov));
        }
        if self.width == 0 || self.height == 0 {
            return Err(RenderError::BadSize(self.width, self.height));
        }
        Ok(())
    }

    /// Camera-plane coordinate of a column centre, in [-1, 1].
    pub fn column_offset(&self, col: usize) -> f64 {
        2.0 * (col as f64 + 0.5) / self.width as f64 - 1.0
    }
}

impl Default for Camera {
    fn default() -> Self {
        Camera { width: 42, height: 42, fov: std::f64::consts::FRAC_PI_2 }
    }
}

/// Planar float image, channel-major (`[3, H, W]`), intensities in [0, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize) -> Self {
        Image { width, height, data: vec![0.0; 3 * width * height] }
    }

    pub fn get(&self, channel: usize, row: usize, col: usize) -> f64 {
        self.data[(channel * self.height + row) * self.width + col]
    }

    pub fn set_pixel(&mut self, row: usize, col: usize, rgb: [f64; 3]) {
        let plane = self.width * self.height;
        let i = row * self.width + col;
        for (c, v) in rgb.into_iter().enumerate() {
            self.data[c * plane + i] = v;
        }
    }

    pub fn pixel(&self, row: usize, col: usize) -> [f64; 3] {
        [self.get(0, row, col), self.get(1, row, col), self.get(2, row, col)]
    }

    pub fn to_rgb8(&self) -> RgbImage {
        let mut out = RgbImage::new(self.width, self.height, [0, 0, 0]);
        for row in 0..self.height {
            for col in 0..self.width {
                let p = self.pixel(row, col).map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8);
                out.put(col, row, p);
            }
        }
        out
    }
}

/// 8-bit interleaved RGB raster, written as binary PPM.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize, fill: [u8; 3]) -> Self {
        let mut data = Vec::with_capacity(width * height * 3);
        for _ in 0..width * height {
            data.extend_from_slice(&fill);
        }
        RgbImage { width, height, data }
    }

    pub fn get(&self, x: usize, y: usize) -> [u8; 3] {
        let i = 3 * (y * self.width + x);
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn put(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        if x < self.width && y < self.height {
            let i = 3 * (y * self.width + x);
            self.data[i..i + 3].copy_from_slice(&rgb);
        }
    }

    pub fn write_ppm<W: Write>(&self, mut w: W) -> io::Result<()> {
        write!(w, "P6\n{} {}\n255\n", self.width, self.height)?;
        w.write_all(&self.data)
    }
}

/// What the agent receives each step.
#[derive(Clone, Debug, PartialEq)]
pub struct Observation {
    pub image: Image,
    pub prev_action: Option<Action>,
    pub prev_reward: f64,
}

impl Observation {
    pub fn prev_action_one_hot(&self) -> [f64; Action::COUNT] {
        let mut v = [0.0; Action::COUNT];
        if let Some(a) = self.prev_action {
            v[a.index()] = 1.0;
        }
        v
    }
}

/// Scene content beyond the wall grid.
#[derive(Clone, Copy, Debug)]
pub struct Scene<'a> {
    pub textures: &'a TextureMap,
    pub goal: Option<BlockPos>,
    pub apples: Option<&'a BTreeSet<BlockPos>>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RayHit {
    /// Perpendicular distance in world units.
    pub depth: f64,
    pub block: (i64, i64),
    /// Hit coordinate along the wall face, in [0, 1).
    pub wall_u: f64,
}

/// Per-column wall slice geometry.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Slice {
    pub hit: RayHit,
    pub height: usize,
    pub top: usize,
}

/// Ray direction for a camera-plane offset in [-1, 1]. Its component along the
/// view axis is exactly 1.
pub fn ray_direction(heading: f64, fov: f64, offset: f64) -> (f64, f64) {
    let (s, c) = heading.sin_cos();
    let half = (fov / 2.0).tan();
    (c - s * half * offset, s + c * half * offset)
}

/// Cast one ray. The direction's component along the view axis is 1, so the
/// DDA parameter at the hit is already the perpendicular distance.
pub fn cast_ray(maze: &Maze, pose: &Pose, heading_offset: (f64, f64), block_size: f64) -> RayHit {
    let (rdx, rdy) = heading_offset;
    let px = pose.x / block_size;
    let py = pose.y / block_size;
    let mut map_x = px.floor() as i64;
    let mut map_y = py.floor() as i64;
    let delta_x = if rdx == 0.0 { f64::INFINITY } else { (1.0 / rdx).abs() };
    let delta_y = if rdy == 0.0 { f64::INFINITY } else { (1.0 / rdy).abs() };
    let (step_x, mut side_x) = if rdx < 0.0 {
        (-1, (px - map_x as f64) * delta_x)
    } else {
        (1, (map_x as f64 + 1.0 - px) * delta_x)
    };
    let (step_y, mut side_y) = if rdy < 0.0 {
        (-1, (py - map_y as f64) * delta_y)
    } else {
        (1, (map_y as f64 + 1.0 - py) * delta_y)
    };
    let mut vertical_face;
    loop {
        if side_x < side_y {
            side_x += delta_x;
            map_x += step_x;
            vertical_face = true;
        } else {
            side_y += delta_y;
            map_y += step_y;
            vertical_face = false;
        }
        if maze.is_wall_at(map_x, map_y) {
            break;
        }
    }
    let perp = if vertical_face { side_x - delta_x } else { side_y - delta_y };
    let along = if vertical_face { py + perp * rdy } else { px + perp * rdx };
    RayHit { depth: perp * block_size, block: (map_x, map_y), wall_u: along - along.floor() }
}

pub fn column_slices(maze: &Maze, pose: &Pose, camera: &Camera, block_size: f64) -> Vec<Slice> {
    (0..camera.width)
        .map(|col| {
            let dir = ray_direction(pose.heading, camera.fov, camera.column_offset(col));
            let hit = cast_ray(maze, pose, dir, block_size);
            let height = slice_height(hit.depth, camera.height, block_size);
            Slice { hit, height, top: (camera.height - height) / 2 }
        })
        .collect()
}

pub fn slice_height(depth: f64, image_height: usize, block_size: f64) -> usize {
    let h = (image_height as f64 * block_size / depth).round();
    if h.is_finite() {
        (h as usize).min(image_height)
    } else {
        image_height
    }
}

const CEILING: [f64; 3] = [0.55, 0.65, 0.80];
const FLOOR: [f64; 3] = [0.45, 0.40, 0.35];
pub const GOAL_COLOR: [f64; 3] = [1.0, 0.55, 0.0];
pub const APPLE_COLOR: [f64; 3] = [0.18, 0.80, 0.25];

/// Base colour and stripe count for a texture id.
fn texture_style(id: u16) -> ([f64; 3], u32) {
    let id = id % TEXTURE_PALETTE;
    let hue = id as f64 / TEXTURE_PALETTE as f64;
    let rgb = [
        0.5 + 0.4 * (std::f64::consts::TAU * hue).cos(),
        0.5 + 0.4 * (std::f64::consts::TAU * (hue + 1.0 / 3.0)).cos(),
        0.5 + 0.4 * (std::f64::consts::TAU * (hue + 2.0 / 3.0)).cos(),
    ];
    (rgb, 1 + (id as u32 % 4))
}

fn shade(depth: f64, block_size: f64) -> f64 {
    1.0 / (1.0 + depth / block_size)
}

/// Render the first-person view.
pub fn render(maze: &Maze, scene: &Scene<'_>, pose: &Pose, camera: &Camera, block_size: f64) -> Result<Image, RenderError> {
    camera.validate()?;
    let mut img = Image::new(camera.width, camera.height);
    let h = camera.height;
    let half = h as f64 / 2.0;
    let (px, py) = (pose.x / block_size, pose.y / block_size);
    let has_markers = scene.goal.is_some() || scene.apples.is_some_and(|a| !a.is_empty());

    for (col, slice) in column_slices(maze, pose, camera, block_size).into_iter().enumerate() {
        let (rdx, rdy) = ray_direction(pose.heading, camera.fov, camera.column_offset(col));
        let hit = slice.hit;
        let wall_index = maze.in_bounds(hit.block.0, hit.block.1).then(|| hit.block.1 as usize * maze.block_width() + hit.block.0 as usize);
        let tex = wall_index.and_then(|i| scene.textures.get(i)).unwrap_or(0);
        let (base, stripes) = texture_style(tex);
        // Stripes are mirrored about the face centre so the pattern reads the same from either side.
        let stripe = if (((hit.wall_u - 0.5).abs() * stripes as f64 * 2.0).floor() as u32) % 2 == 0 { 1.0 } else { 0.75 };
        let k = shade(hit.depth, block_size) * stripe;
        let wall = base.map(|c| c * k);

        for row in 0..h {
            let color = if row >= slice.top && row < slice.top + slice.height {
                wall
            } else {
                let centre = row as f64 + 0.5;
                let floor_side = centre > half;
                let mut color = if floor_side { FLOOR } else { CEILING };
                if has_markers {
                    // Ground point seen through this pixel (mirrored for the ceiling).
                    let dist = half / (centre - half).abs();
                    let gx = px + dist * rdx;
                    let gy = py + dist * rdy;
                    if gx >= 0.0 && gy >= 0.0 {
                        let cell = BlockPos::new(gx as usize, gy as usize);
                        if scene.goal == Some(cell) {
                            color = GOAL_COLOR;
                        } else if floor_side && scene.apples.is_some_and(|a| a.contains(&cell)) {
                            color = APPLE_COLOR;
                        }
                    }
                }
                color
            };
            img.set_pixel(row, col, color);
        }
    }
    Ok(img)
}

/// Geometric depth classes between the agent radius and the maze diagonal.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthBuckets {
    edges: Vec<f64>,
}

pub const DEPTH_CLASSES: usize = 8;

impl DepthBuckets {
    pub fn geometric(min: f64, max: f64, classes: usize) -> Self {
        let ratio = max / min;
        let edges = (0..=classes).map(|k| min * ratio.powf(k as f64 / classes as f64)).collect();
        DepthBuckets { edges }
    }

    pub fn for_maze(maze: &Maze, agent_radius: f64, block_size: f64) -> Self {
        let diag = ((maze.block_width() as f64).powi(2) + (maze.block_height() as f64).powi(2)).sqrt() * block_size;
        Self::geometric(agent_radius, diag, DEPTH_CLASSES)
    }

    pub fn classes(&self) -> usize {
        self.edges.len() - 1
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    /// Class index; values outside the range clamp to the end classes.
    pub fn classify(&self, depth: f64) -> usize {
        let inner = &self.edges[1..self.edges.len() - 1];
        inner.partition_point(|&e| e <= depth)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DepthVector {
    pub depths: Vec<f64>,
    pub buckets: Vec<usize>,
}

/// Per-column perpendicular wall distance and its depth class.
pub fn depth_truth(maze: &Maze, pose: &Pose, camera: &Camera, buckets: &DepthBuckets, block_size: f64) -> DepthVector {
    let depths: Vec<f64> = (0..camera.width)
        .map(|col| cast_ray(maze, pose, ray_direction(pose.heading, camera.fov, camera.column_offset(col)), block_size).depth)
        .collect();
    let classes = depths.iter().map(|&d| buckets.classify(d)).collect();
    DepthVector { depths, buckets: classes }
}

/// Depth classes for `groups` evenly spaced rays (one per column group).
pub fn coarse_depth_classes(maze: &Maze, pose: &Pose, fov: f64, groups: usize, buckets: &DepthBuckets, block_size: f64) -> Vec<usize> {
    (0..groups)
        .map(|g| {
            let offset = 2.0 * (g as f64 + 0.5) / groups as f64 - 1.0;
            buckets.classify(cast_ray(maze, pose, ray_direction(pose.heading, fov, offset), block_size).depth)
        })
        .collect()
}

/// Loop-closure label: 1 when the current position lies within `radius` of a
/// position visited at least `t_min` steps earlier.
pub fn loop_closure_truth(prefix: &[(f64, f64)], current: (f64, f64), t_min: usize, radius: f64) -> bool {
    let t = prefix.len();
    let t_min = t_min.max(1);
    if t < t_min {
        return false;
    }
    prefix[..=t - t_min].iter().any(|&(x, y)| (x - current.0).hypot(y - current.1) < radius)
}

/// Incremental loop-closure labelling over a trajectory, using a spatial hash
/// with `radius`-sized buckets.
#[derive(Clone, Debug)]
pub struct LoopClosureTracker {
    t_min: usize,
    radius: f64,
    history: Vec<(f64, f64)>,
    grid: std::collections::HashMap<(i64, i64), Vec<(f64, f64)>>,
    indexed: usize,
}

impl LoopClosureTracker {
    pub fn new(t_min: usize, radius: f64) -> Self {
        LoopClosureTracker { t_min: t_min.max(1), radius, history: Vec::new(), grid: Default::default(), indexed: 0 }
    }

    fn key(&self, p: (f64, f64)) -> (i64, i64) {
        ((p.0 / self.radius).floor() as i64, (p.1 / self.radius).floor() as i64)
    }

    /// Label the next position and append it to the history.
    pub fn observe(&mut self, p: (f64, f64)) -> bool {
        let t = self.history.len();
        while self.indexed + self.t_min <= t {
            let q = self.history[self.indexed];
            let k = self.key(q);
            self.grid.entry(k).or_default().push(q);
            self.indexed += 1;
        }
        let (kx, ky) = self.key(p);
        let mut hit = false;
        'outer: for dx in -1..=1 {
            for dy in -1..=1 {
                if let Some(pts) = self.grid.get(&(kx + dx, ky + dy)) {
                    if pts.iter().any(|q| (q.0 - p.0).hypot(q.1 - p.1) < self.radius) {
                        hit = true;
                        break 'outer;
                    }
                }
            }
        }
        self.history.push(p);
        hit
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::maze::{generate_maze, parse_map};
    use std::f64::consts::{FRAC_PI_2, PI, TAU};

    fn single_cell() -> Maze {
        parse_map("###\n#.#\n###").unwrap().0
    }

    #[test]
    fn rejects_degenerate_fov() {
        assert!(Camera::new(8, 8, 0.0).is_err());
        assert!(Camera::new(8, 8, PI).is_err());
        assert!(Camera::new(0, 8, 1.0).is_err());
    }

    #[test]
    fn centred_view_is_symmetric() {
        let m = single_cell();
        let tex = TextureMap::zeros(&m);
        let scene = Scene { textures: &tex, goal: None, apples: None };
        let cam = Camera::default();
        for heading in [0.0, FRAC_PI_2, PI, 3.0 * FRAC_PI_2] {
            let pose = Pose { x: 150.0, y: 150.0, heading };
            let img = render(&m, &scene, &pose, &cam, 100.0).unwrap();
            for row in 0..cam.height {
                for col in 0..cam.width / 2 {
                    let a = img.pixel(row, col);
                    let b = img.pixel(row, cam.width - 1 - col);
                    for c in 0..3 {
                        assert!((a[c] - b[c]).abs() < 1e-12, "asymmetry at {row},{col} heading {heading}");
                    }
                }
            }
        }
    }

    #[test]
    fn heading_is_periodic() {
        let m = generate_maze(3, 4, 4).unwrap();
        let tex = crate::maze::assign_textures(&m, Some(2));
        let scene = Scene { textures: &tex, goal: None, apples: None };
        let floor = m.floor_blocks()[0];
        let (x, y) = m.block_center(floor, 100.0);
        let a = render(&m, &scene, &Pose { x, y, heading: 0.7 }, &Camera::default(), 100.0).unwrap();
        let b = render(&m, &scene, &Pose { x, y, heading: 0.7 + TAU }, &Camera::default(), 100.0).unwrap();
        let max = a.data.iter().zip(&b.data).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
        assert!(max < 1e-9);
    }

    #[test]
    fn facing_wall_squarely() {
        let m = single_cell();
        let pose = Pose { x: 130.0, y: 150.0, heading: 0.0 };
        let cam = Camera { width: 41, height: 42, fov: FRAC_PI_2 };
        let buckets = DepthBuckets::for_maze(&m, 16.0, 100.0);
        let d = depth_truth(&m, &pose, &cam, &buckets, 100.0);
        assert!((d.depths[20] - 70.0).abs() < 1e-9);
    }

    #[test]
    fn intensities_in_unit_interval() {
        let m = generate_maze(8, 4, 4).unwrap();
        let tex = crate::maze::assign_textures(&m, Some(1));
        let floors = m.floor_blocks();
        let apples: BTreeSet<_> = floors[1..3].iter().copied().collect();
        let scene = Scene { textures: &tex, goal: Some(floors[4]), apples: Some(&apples) };
        for (i, f) in floors.iter().enumerate() {
            let (x, y) = m.block_center(*f, 100.0);
            let img = render(&m, &scene, &Pose { x, y, heading: i as f64 }, &Camera::default(), 100.0).unwrap();
            assert!(img.data.iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn buckets_are_monotone() {
        let b = DepthBuckets::geometric(16.0, 1273.0, 8);
        assert_eq!(b.classes(), 8);
        let mut last = 0;
        for i in 0..2000 {
            let d = 1.0 + i as f64;
            let c = b.classify(d);
            assert!(c >= last && c < 8);
            last = c;
        }
        assert_eq!(b.classify(0.1), 0);
        assert_eq!(b.classify(1e9), 7);
    }

    #[test]
    fn loop_closure_basics() {
        assert!(!loop_closure_truth(&[], (0.0, 0.0), 30, 50.0));
        let mut path: Vec<(f64, f64)> = (0..30).map(|i| (i as f64 * 10.0, 0.0)).collect();
        assert!(loop_closure_truth(&path, (0.0, 0.0), 30, 50.0));
        path.truncate(29);
        assert!(!loop_closure_truth(&path, (0.0, 0.0), 30, 50.0));
    }

    #[test]
    fn ppm_header() {
        let img = RgbImage::new(2, 1, [1, 2, 3]);
        let mut buf = Vec::new();
        img.write_ppm(&mut buf).unwrap();
        assert_eq!(&buf[..11], b"P6\n2 1\n255\n");
        assert_eq!(&buf[11..], &[1, 2, 3, 1, 2, 3]);
    }
}
