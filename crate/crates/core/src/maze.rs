//! Block-world mazes: generation, canonical probe maps, annotations and the
//! plain-text map format.
//!
//! A maze is a grid of wall and floor blocks. Generated mazes live on a cell
//! lattice: cell `(i, j)` sits at block `(2i + 1, 2j + 1)` and the blocks
//! between two cells are corridors, so the block grid is always
//! `(2 * cols + 1) x (2 * rows + 1)`.

use std::collections::{BTreeSet, VecDeque};
use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{mix_seeds, seeded};

/// World units per block edge.
pub const DEFAULT_BLOCK_SIZE: f64 = 100.0;

/// Largest block dimension [`generate_maze`] accepts.
pub const MAX_BLOCK_DIM: usize = 4097;

/// Number of procedural wall textures.
pub const TEXTURE_PALETTE: u16 = 16;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MazeError {
    #[error("maze of {cols}x{rows} cells exceeds the maximum block dimension {max}")]
    TooLarge { cols: usize, rows: usize, max: usize },
    #[error("maze must have at least one cell in each direction (got {cols}x{rows})")]
    Empty { cols: usize, rows: usize },
    #[error("need {needed} free floor blocks for the requested placement, maze has {available}")]
    InsufficientFloor { needed: usize, available: usize },
    #[error("line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    #[error("annotation at ({}, {}) is not on a floor block", .0.col, .0.row)]
    NotFloor(BlockPos),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Block {
    Wall,
    Floor,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct BlockPos {
    pub col: usize,
    pub row: usize,
}

impl BlockPos {
    pub const fn new(col: usize, row: usize) -> Self {
        BlockPos { col, row }
    }

    pub fn manhattan(self, other: BlockPos) -> usize {
        self.col.abs_diff(other.col) + self.row.abs_diff(other.row)
    }
}

impl fmt::Display for BlockPos {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.col, self.row)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Maze {
    block_width: usize,
    block_height: usize,
    blocks: Vec<Block>,
    cell_cols: usize,
    cell_rows: usize,
    seed: u64,
}

impl Maze {
    fn filled(cell_cols: usize, cell_rows: usize, seed: u64) -> Self {
        let block_width = 2 * cell_cols + 1;
        let block_height = 2 * cell_rows + 1;
        Maze {
            block_width,
            block_height,
            blocks: vec![Block::Wall; block_width * block_height],
            cell_cols,
            cell_rows,
            seed,
        }
    }

    /// Build a maze from an explicit block grid. Border blocks must be walls.
    pub fn from_blocks(
        block_width: usize,
        block_height: usize,
        blocks: Vec<Block>,
        seed: u64,
    ) -> Result<Self, MazeError> {
        if block_width < 3 || block_height < 3 {
            return Err(MazeError::Parse {
                line: 1,
                column: 1,
                message: format!("map must be at least 3x3 blocks, got {block_width}x{block_height}"),
            });
        }
        assert_eq!(blocks.len(), block_width * block_height);
        let maze = Maze {
            block_width,
            block_height,
            blocks,
            cell_cols: (block_width - 1) / 2,
            cell_rows: (block_height - 1) / 2,
            seed,
        };
        for row in 0..block_height {
            for col in 0..block_width {
                let border = row == 0 || col == 0 || row + 1 == block_height || col + 1 == block_width;
                if border && maze.is_floor(BlockPos::new(col, row)) {
                    return Err(MazeError::Parse {
                        line: row + 1,
                        column: col + 1,
                        message: "border block must be a wall".into(),
                    });
                }
            }
        }
        Ok(maze)
    }

    pub fn block_width(&self) -> usize {
        self.block_width
    }

    pub fn block_height(&self) -> usize {
        self.block_height
    }

    pub fn cell_cols(&self) -> usize {
        self.cell_cols
    }

    pub fn cell_rows(&self) -> usize {
        self.cell_rows
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn index(&self, pos: BlockPos) -> usize {
        pos.row * self.block_width + pos.col
    }

    pub fn pos_of(&self, index: usize) -> BlockPos {
        BlockPos::new(index % self.block_width, index / self.block_width)
    }

    pub fn in_bounds(&self, col: i64, row: i64) -> bool {
        col >= 0 && row >= 0 && (col as usize) < self.block_width && (row as usize) < self.block_height
    }

    pub fn block(&self, pos: BlockPos) -> Block {
        self.blocks[self.index(pos)]
    }

    pub fn is_floor(&self, pos: BlockPos) -> bool {
        pos.col < self.block_width && pos.row < self.block_height && self.block(pos) == Block::Floor
    }

    /// Wall test on signed coordinates; anything outside the grid counts as wall.
    pub fn is_wall_at(&self, col: i64, row: i64) -> bool {
        !self.in_bounds(col, row) || self.blocks[row as usize * self.block_width + col as usize] == Block::Wall
    }

    fn set(&mut self, pos: BlockPos, block: Block) {
        let i = self.index(pos);
        self.blocks[i] = block;
    }

    /// Floor blocks in row-major order.
    pub fn floor_blocks(&self) -> Vec<BlockPos> {
        (0..self.blocks.len())
            .filter(|&i| self.blocks[i] == Block::Floor)
            .map(|i| self.pos_of(i))
            .collect()
    }

    pub fn floor_count(&self) -> usize {
        self.blocks.iter().filter(|b| **b == Block::Floor).count()
    }

    /// 4-connected floor neighbours in N, E, S, W order.
    pub fn floor_neighbors(&self, pos: BlockPos) -> impl Iterator<Item = BlockPos> + '_ {
        const DIRS: [(i64, i64); 4] = [(0, -1), (1, 0), (0, 1), (-1, 0)];
        DIRS.iter().filter_map(move |&(dc, dr)| {
            let c = pos.col as i64 + dc;
            let r = pos.row as i64 + dr;
            (!self.is_wall_at(c, r)).then(|| BlockPos::new(c as usize, r as usize))
        })
    }

    /// Number of undirected floor-floor adjacencies.
    pub fn floor_edge_count(&self) -> usize {
        let mut edges = 0;
        for pos in self.floor_blocks() {
            if self.is_floor(BlockPos::new(pos.col + 1, pos.row)) {
                edges += 1;
            }
            if self.is_floor(BlockPos::new(pos.col, pos.row + 1)) {
                edges += 1;
            }
        }
        edges
    }

    /// Floor blocks that join two lattice cells.
    pub fn corridor_count(&self) -> usize {
        self.floor_blocks()
            .into_iter()
            .filter(|p| (p.col % 2 == 1) != (p.row % 2 == 1))
            .count()
    }

    /// BFS from the first floor block reaches every floor block.
    pub fn is_connected(&self) -> bool {
        let floors = self.floor_blocks();
        let Some(&start) = floors.first() else {
            return true;
        };
        let mut seen = vec![false; self.blocks.len()];
        seen[self.index(start)] = true;
        let mut queue = VecDeque::from([start]);
        let mut visited = 1;
        while let Some(p) = queue.pop_front() {
            for n in self.floor_neighbors(p) {
                let i = self.index(n);
                if !seen[i] {
                    seen[i] = true;
                    visited += 1;
                    queue.push_back(n);
                }
            }
        }
        visited == floors.len()
    }

    /// The floor graph is a spanning tree: connected and acyclic.
    pub fn is_perfect(&self) -> bool {
        let floors = self.floor_count();
        floors > 0 && self.is_connected() && self.floor_edge_count() + 1 == floors
    }

    /// Centre of a block in world units.
    pub fn block_center(&self, pos: BlockPos, block_size: f64) -> (f64, f64) {
        ((pos.col as f64 + 0.5) * block_size, (pos.row as f64 + 0.5) * block_size)
    }

    /// Block containing a world point.
    pub fn block_at(&self, x: f64, y: f64, block_size: f64) -> BlockPos {
        BlockPos::new((x / block_size).floor().max(0.0) as usize, (y / block_size).floor().max(0.0) as usize)
    }

    /// Same layout (grid and dimensions), ignoring the generation seed.
    pub fn same_layout(&self, other: &Maze) -> bool {
        self.block_width == other.block_width
            && self.block_height == other.block_height
            && self.blocks == other.blocks
    }
}

/// Recursive-backtracker maze generation.
///
/// Depth-first carve over the cell lattice with an explicit stack. At every
/// step the next cell is drawn uniformly from the unvisited neighbours using
/// a ChaCha8 stream seeded with `seed`, so output is a pure function of
/// `(seed, cell_cols, cell_rows)`.
pub fn generate_maze(seed: u64, cell_cols: usize, cell_rows: usize) -> Result<Maze, MazeError> {
    if cell_cols == 0 || cell_rows == 0 {
        return Err(MazeError::Empty { cols: cell_cols, rows: cell_rows });
    }
    let too_large = |c: usize| c.checked_mul(2).and_then(|v| v.checked_add(1)).is_none_or(|v| v > MAX_BLOCK_DIM);
    if too_large(cell_cols) || too_large(cell_rows) {
        return Err(MazeError::TooLarge { cols: cell_cols, rows: cell_rows, max: MAX_BLOCK_DIM });
    }

    let mut maze = Maze::filled(cell_cols, cell_rows, seed);
    let mut rng = seeded(seed);
    let cell_block = |c: usize, r: usize| BlockPos::new(2 * c + 1, 2 * r + 1);

    let mut visited = vec![false; cell_cols * cell_rows];
    let start = (rng.random_range(0..cell_cols), rng.random_range(0..cell_rows));
    visited[start.1 * cell_cols + start.0] = true;
    maze.set(cell_block(start.0, start.1), Block::Floor);
    let mut stack = vec![start];
    let mut options: Vec<(usize, usize)> = Vec::with_capacity(4);

    while let Some(&(c, r)) = stack.last() {
        options.clear();
        if r > 0 && !visited[(r - 1) * cell_cols + c] {
            options.push((c, r - 1));
        }
        if c + 1 < cell_cols && !visited[r * cell_cols + c + 1] {
            options.push((c + 1, r));
        }
        if r + 1 < cell_rows && !visited[(r + 1) * cell_cols + c] {
            options.push((c, r + 1));
        }
        if c > 0 && !visited[r * cell_cols + c - 1] {
            options.push((c - 1, r));
        }
        if options.is_empty() {
            stack.pop();
            continue;
        }
        let (nc, nr) = options[rng.random_range(0..options.len())];
        visited[nr * cell_cols + nc] = true;
        maze.set(BlockPos::new(c + nc + 1, r + nr + 1), Block::Floor);
        maze.set(cell_block(nc, nr), Block::Floor);
        stack.push((nc, nr));
    }
    Ok(maze)
}

fn maze_from_rows(rows: &[&str]) -> Maze {
    let (map, _) = parse_map(&rows.join("\n")).expect("canonical map is well-formed");
    map
}

/// A single rectangular ring corridor: two routes between any two points.
pub fn build_square_map() -> Maze {
    maze_from_rows(SQUARE_ROWS)
}

/// A dead-end stem that meets a ring at one junction; the two ring arms reach
/// the goal with different lengths.
pub fn build_goal_map() -> Maze {
    maze_from_rows(GOAL_ROWS)
}

const SQUARE_ROWS: &[&str] = &["#######", "#.....#", "#.###.#", "#.###.#", "#.###.#", "#.....#", "#######"];

const GOAL_ROWS: &[&str] = &["#########", "#.......#", "#.#####.#", "#.......#", "####.####", "####.####", "#########"];

/// A simple map with two goal-reaching arms and one sentinel block on each.
///
/// The first sentinel the agent enters after leaving the spawn decides which
/// arm a traversal is credited to.
#[derive(Clone, Debug)]
pub struct TwoArmProbe {
    pub name: &'static str,
    pub maze: Maze,
    pub goal: BlockPos,
    pub spawn: BlockPos,
    pub short_sentinel: BlockPos,
    pub long_sentinel: BlockPos,
}

impl TwoArmProbe {
    pub fn annotations(&self) -> MapAnnotations {
        MapAnnotations {
            goal: self.goal,
            spawn: Some(self.spawn),
            apples: BTreeSet::new(),
            textures: TextureMap::zeros(&self.maze),
        }
    }
}

pub fn square_map_probe() -> TwoArmProbe {
    // Ring index from the spawn going east: goal is 6 blocks east-about and
    // 10 blocks west-about.
    TwoArmProbe {
        name: "square",
        maze: build_square_map(),
        goal: BlockPos::new(5, 5),
        spawn: BlockPos::new(3, 1),
        short_sentinel: BlockPos::new(4, 1),
        long_sentinel: BlockPos::new(2, 1),
    }
}

pub fn goal_map_probe() -> TwoArmProbe {
    TwoArmProbe {
        name: "goal",
        maze: build_goal_map(),
        goal: BlockPos::new(5, 1),
        spawn: BlockPos::new(4, 5),
        short_sentinel: BlockPos::new(5, 3),
        long_sentinel: BlockPos::new(3, 3),
    }
}

/// Per-wall texture indices. Only walls that touch a floor block carry one.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TextureMap {
    ids: Vec<Option<u16>>,
}

impl TextureMap {
    pub fn zeros(maze: &Maze) -> Self {
        Self::from_fn(maze, |_| 0)
    }

    fn from_fn(maze: &Maze, mut f: impl FnMut(BlockPos) -> u16) -> Self {
        let mut ids = vec![None; maze.blocks().len()];
        for (i, slot) in ids.iter_mut().enumerate() {
            let pos = maze.pos_of(i);
            if maze.block(pos) == Block::Wall && is_exposed(maze, pos) {
                *slot = Some(f(pos));
            }
        }
        TextureMap { ids }
    }

    pub fn get(&self, index: usize) -> Option<u16> {
        self.ids.get(index).copied().flatten()
    }

    /// Number of block slots (exposed or not) covered by the map.
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Exposed wall blocks with their texture id, row-major.
    pub fn exposed(&self) -> impl Iterator<Item = (usize, u16)> + '_ {
        self.ids.iter().enumerate().filter_map(|(i, id)| id.map(|id| (i, id)))
    }

    pub fn all_zero(&self) -> bool {
        self.exposed().all(|(_, id)| id == 0)
    }
}

fn is_exposed(maze: &Maze, pos: BlockPos) -> bool {
    let (c, r) = (pos.col as i64, pos.row as i64);
    [(0, -1), (1, 0), (0, 1), (-1, 0)]
        .iter()
        .any(|(dc, dr)| maze.in_bounds(c + dc, r + dr) && !maze.is_wall_at(c + dc, r + dr))
}

/// Texture assignment. `None` (texture randomisation off) yields all zeros.
pub fn assign_textures(maze: &Maze, texture_seed: Option<u64>) -> TextureMap {
    match texture_seed {
        None => TextureMap::zeros(maze),
        Some(seed) => {
            let mut rng = seeded(mix_seeds(&[maze.seed(), seed, 0x7E87]));
            TextureMap::from_fn(maze, |_| rng.random_range(0..TEXTURE_PALETTE))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct StageFlags {
    pub goal_static: bool,
    pub spawn_static: bool,
}

/// Goal, spawn, apples and textures for one episode on one maze.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MapAnnotations {
    pub goal: BlockPos,
    /// `None` means the agent spawns at a random floor block every time.
    pub spawn: Option<BlockPos>,
    pub apples: BTreeSet<BlockPos>,
    pub textures: TextureMap,
}

impl MapAnnotations {
    pub fn validate(&self, maze: &Maze) -> Result<(), MazeError> {
        let check = |p: BlockPos| if maze.is_floor(p) { Ok(()) } else { Err(MazeError::NotFloor(p)) };
        check(self.goal)?;
        if let Some(s) = self.spawn {
            check(s)?;
        }
        for &a in &self.apples {
            check(a)?;
            if a == self.goal {
                return Err(MazeError::NotFloor(a));
            }
        }
        Ok(())
    }
}

/// One apple per this many floor blocks, rounded down.
pub const FLOORS_PER_APPLE: usize = 6;

pub fn default_apple_count(maze: &Maze) -> usize {
    maze.floor_count() / FLOORS_PER_APPLE
}

/// The static goal and static spawn of a map, pure functions of its seed.
pub fn static_placements(maze: &Maze) -> Result<(BlockPos, BlockPos), MazeError> {
    let floors = maze.floor_blocks();
    if floors.len() < 2 {
        return Err(MazeError::InsufficientFloor { needed: 2, available: floors.len() });
    }
    let mut goal_rng = seeded(mix_seeds(&[maze.seed(), 0x60A1]));
    let goal = floors[goal_rng.random_range(0..floors.len())];
    let mut spawn_rng = seeded(mix_seeds(&[maze.seed(), 0x5BA7]));
    let rest: Vec<_> = floors.iter().copied().filter(|&p| p != goal).collect();
    let spawn = rest[spawn_rng.random_range(0..rest.len())];
    Ok((goal, spawn))
}

/// Place goal, spawn and apples.
///
/// Static placements come from [`static_placements`] and never change for a
/// map. Random placements, and apples when the goal is random, are drawn
/// from `rng_seed`. Textures are left at zero; see [`assign_textures`].
pub fn annotate(
    maze: &Maze,
    flags: StageFlags,
    apple_count: usize,
    rng_seed: u64,
) -> Result<MapAnnotations, MazeError> {
    let floors = maze.floor_blocks();
    let needed = apple_count + 2;
    if floors.len() < needed {
        return Err(MazeError::InsufficientFloor { needed, available: floors.len() });
    }
    let (static_goal, static_spawn) = static_placements(maze)?;
    let mut episode_rng = seeded(mix_seeds(&[rng_seed, 0xE915]));

    let spawn = flags.spawn_static.then_some(static_spawn);
    let goal = if flags.goal_static {
        static_goal
    } else {
        let eligible: Vec<_> = floors.iter().copied().filter(|&p| Some(p) != spawn).collect();
        eligible[episode_rng.random_range(0..eligible.len())]
    };

    let mut apple_rng = if flags.goal_static {
        seeded(mix_seeds(&[maze.seed(), 0xA991]))
    } else {
        seeded(mix_seeds(&[rng_seed, 0xA991]))
    };
    let mut candidates: Vec<_> = floors
        .iter()
        .copied()
        .filter(|&p| p != goal && p != static_spawn && Some(p) != spawn)
        .collect();
    let mut apples = BTreeSet::new();
    for _ in 0..apple_count.min(candidates.len()) {
        let i = apple_rng.random_range(0..candidates.len());
        apples.insert(candidates.swap_remove(i));
    }

    Ok(MapAnnotations { goal, spawn, apples, textures: TextureMap::zeros(maze) })
}

/// Render a maze (and optionally its markers) in the text map format.
///
/// `#` wall, `.` floor, `G` goal, `S` spawn, `A` apple; LF line endings.
pub fn serialize_map(maze: &Maze, annotations: Option<&MapAnnotations>) -> String {
    let mut out = String::with_capacity((maze.block_width() + 1) * maze.block_height());
    for row in 0..maze.block_height() {
        for col in 0..maze.block_width() {
            let pos = BlockPos::new(col, row);
            let ch = match (maze.block(pos), annotations) {
                (Block::Wall, _) => '#',
                (Block::Floor, Some(a)) if a.goal == pos => 'G',
                (Block::Floor, Some(a)) if a.spawn == Some(pos) => 'S',
                (Block::Floor, Some(a)) if a.apples.contains(&pos) => 'A',
                (Block::Floor, _) => '.',
            };
            out.push(ch);
        }
        out.push('\n');
    }
    out
}

/// Parse the text map format. Annotations are returned when a goal is present.
///
/// Trailing whitespace on lines and trailing blank lines are ignored. Parsed
/// maps carry seed 0.
pub fn parse_map(text: &str) -> Result<(Maze, Option<MapAnnotations>), MazeError> {
    let mut lines: Vec<&str> = text.lines().map(|l| l.trim_end()).collect();
    while lines.last().is_some_and(|l| l.is_empty()) {
        lines.pop();
    }
    let err = |line: usize, column: usize, message: String| MazeError::Parse { line, column, message };
    if lines.is_empty() {
        return Err(err(1, 1, "empty map".into()));
    }
    let width = lines.iter().map(|l| l.chars().count()).max().unwrap_or(0);
    for (i, line) in lines.iter().enumerate() {
        let n = line.chars().count();
        if n != width {
            return Err(err(i + 1, n + 1, format!("ragged row: {n} blocks, expected {width}")));
        }
    }

    let height = lines.len();
    let mut blocks = Vec::with_capacity(width * height);
    let mut goal = None;
    let mut spawn = None;
    let mut apples = BTreeSet::new();
    for (row, line) in lines.iter().enumerate() {
        for (col, ch) in line.chars().enumerate() {
            let pos = BlockPos::new(col, row);
            let block = match ch {
                '#' => Block::Wall,
                '.' => Block::Floor,
                'G' => {
                    if goal.replace(pos).is_some() {
                        return Err(err(row + 1, col + 1, "multiple goals".into()));
                    }
                    Block::Floor
                }
                'S' => {
                    if spawn.replace(pos).is_some() {
                        return Err(err(row + 1, col + 1, "multiple spawns".into()));
                    }
                    Block::Floor
                }
                'A' => {
                    apples.insert(pos);
                    Block::Floor
                }
                other => return Err(err(row + 1, col + 1, format!("unknown character {other:?}"))),
            };
            blocks.push(block);
        }
    }
    let maze = Maze::from_blocks(width, height, blocks, 0)?;
    let annotations = match goal {
        Some(goal) => Some(MapAnnotations { goal, spawn, apples, textures: TextureMap::zeros(&maze) }),
        None if spawn.is_some() || !apples.is_empty() => {
            return Err(err(1, 1, "spawn or apple markers without a goal".into()));
        }
        None => None,
    };
    Ok((maze, annotations))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum MapRole {
    Train,
    Test,
    Static,
}

impl MapRole {
    pub fn as_str(self) -> &'static str {
        match self {
            MapRole::Train => "train",
            MapRole::Test => "test",
            MapRole::Static => "static",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MapEntry {
    pub id: usize,
    pub seed: u64,
    pub cols: usize,
    pub rows: usize,
}

impl MapEntry {
    pub fn generate(&self) -> Result<Maze, MazeError> {
        generate_maze(self.seed, self.cols, self.rows)
    }
}

/// The generated map set with its train/test split.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MapPool {
    pub entries: Vec<MapEntry>,
    pub train_ids: Vec<usize>,
    pub test_ids: Vec<usize>,
    /// Subset of `train_ids` used by the static-map stages.
    pub static_subset: Vec<usize>,
}

impl MapPool {
    pub fn entry(&self, id: usize) -> Option<&MapEntry> {
        self.entries.iter().find(|e| e.id == id)
    }

    pub fn role(&self, id: usize) -> Option<MapRole> {
        if self.static_subset.contains(&id) {
            Some(MapRole::Static)
        } else if self.train_ids.contains(&id) {
            Some(MapRole::Train)
        } else if self.test_ids.contains(&id) {
            Some(MapRole::Test)
        } else {
            None
        }
    }

    /// Manifest text: `id<TAB>seed<TAB>cols<TAB>rows<TAB>role` per line.
    pub fn manifest(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            let role = self.role(e.id).map_or("unassigned", MapRole::as_str);
            out.push_str(&format!("{}\t{}\t{}\t{}\t{}\n", e.id, e.seed, e.cols, e.rows, role));
        }
        out
    }

    pub fn parse_manifest(text: &str) -> Result<Self, MazeError> {
        let mut pool = MapPool { entries: Vec::new(), train_ids: Vec::new(), test_ids: Vec::new(), static_subset: Vec::new() };
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let fields: Vec<&str> = line.split('\t').collect();
            let bad = |col: usize, msg: &str| MazeError::Parse { line: i + 1, column: col, message: msg.to_string() };
            if fields.len() != 5 {
                return Err(bad(1, "expected 5 tab-separated fields"));
            }
            let num = |k: usize| fields[k].trim().parse::<u64>().map_err(|_| bad(k + 1, "not an integer"));
            let entry = MapEntry { id: num(0)? as usize, seed: num(1)?, cols: num(2)? as usize, rows: num(3)? as usize };
            match fields[4].trim() {
                "train" => pool.train_ids.push(entry.id),
                "static" => {
                    pool.train_ids.push(entry.id);
                    pool.static_subset.push(entry.id);
                }
                "test" => pool.test_ids.push(entry.id),
                _ => return Err(bad(5, "role must be train, test or static")),
            }
            pool.entries.push(entry);
        }
        Ok(pool)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_cell_maze() {
        let m = generate_maze(9, 1, 1).unwrap();
        assert_eq!((m.block_width(), m.block_height()), (3, 3));
        assert_eq!(m.floor_count(), 1);
        assert_eq!(m.corridor_count(), 0);
        assert!(m.is_perfect());
    }

    #[test]
    fn four_by_four_counts() {
        for seed in 0..20 {
            let m = generate_maze(seed, 4, 4).unwrap();
            assert_eq!((m.block_width(), m.block_height()), (9, 9));
            assert_eq!(m.floor_count(), 31);
            assert_eq!(m.corridor_count(), 15);
        }
    }

    #[test]
    fn rejects_bad_dims() {
        assert!(matches!(generate_maze(0, 0, 3), Err(MazeError::Empty { .. })));
        assert!(matches!(generate_maze(0, MAX_BLOCK_DIM, 1), Err(MazeError::TooLarge { .. })));
        assert!(matches!(generate_maze(0, usize::MAX, 1), Err(MazeError::TooLarge { .. })));
    }

    #[test]
    fn generation_is_deterministic() {
        assert_eq!(generate_maze(77, 5, 3).unwrap(), generate_maze(77, 5, 3).unwrap());
        assert_ne!(generate_maze(77, 5, 3).unwrap().blocks(), generate_maze(78, 5, 3).unwrap().blocks());
    }

    #[test]
    fn square_map_is_a_ring() {
        let m = build_square_map();
        assert!(m.is_connected());
        assert!(!m.is_perfect());
        for p in m.floor_blocks() {
            assert_eq!(m.floor_neighbors(p).count(), 2, "block {p}");
        }
        assert_eq!(m.floor_edge_count(), m.floor_count());
    }

    #[test]
    fn goal_map_has_one_junction() {
        let m = build_goal_map();
        let junctions: Vec<_> = m.floor_blocks().into_iter().filter(|&p| m.floor_neighbors(p).count() > 2).collect();
        assert_eq!(junctions, vec![BlockPos::new(4, 3)]);
        let probe = goal_map_probe();
        assert_eq!(m.floor_neighbors(probe.spawn).count(), 1);
    }

    #[test]
    fn parse_simple_goal_map() {
        let (m, a) = parse_map("###\n#G#\n###").unwrap();
        assert_eq!(m.floor_count(), 1);
        assert_eq!(a.unwrap().goal, BlockPos::new(1, 1));
    }

    #[test]
    fn parse_errors_name_location() {
        match parse_map("##\n###") {
            Err(MazeError::Parse { line, .. }) => assert_eq!(line, 1),
            other => panic!("expected ragged-row error, got {other:?}"),
        }
        match parse_map("###\n#x#\n###") {
            Err(MazeError::Parse { line, column, .. }) => assert_eq!((line, column), (2, 2)),
            other => panic!("{other:?}"),
        }
        match parse_map("#####\n#G.G#\n#####") {
            Err(MazeError::Parse { line, column, .. }) => assert_eq!((line, column), (2, 4)),
            other => panic!("{other:?}"),
        }
        assert!(parse_map("###\n#..\n###").is_err());
    }

    #[test]
    fn serialize_ignores_trailing_whitespace() {
        let text = "#####\n#S.G#\n#####\n";
        let (m, a) = parse_map("#####  \n#S.G#\n#####\n\n").unwrap();
        assert_eq!(serialize_map(&m, a.as_ref()), text);
    }

    #[test]
    fn static_annotations_are_stable() {
        let m = generate_maze(5, 4, 4).unwrap();
        let flags = StageFlags { goal_static: true, spawn_static: true };
        let a = annotate(&m, flags, 3, 1).unwrap();
        let b = annotate(&m, flags, 3, 999).unwrap();
        assert_eq!(a.goal, b.goal);
        assert_eq!(a.spawn, b.spawn);
        assert_eq!(a.apples, b.apples);
        assert!(a.validate(&m).is_ok());
        assert!(!a.apples.contains(&a.goal));
    }

    #[test]
    fn random_goal_covers_every_floor() {
        let m = generate_maze(11, 4, 4).unwrap();
        let flags = StageFlags { goal_static: false, spawn_static: true };
        let spawn = static_placements(&m).unwrap().1;
        let mut hit = BTreeSet::new();
        for s in 0..1000 {
            let a = annotate(&m, flags, 2, s).unwrap();
            assert_eq!(a.spawn, Some(spawn));
            hit.insert(a.goal);
        }
        let eligible: BTreeSet<_> = m.floor_blocks().into_iter().filter(|&p| p != spawn).collect();
        assert_eq!(hit, eligible);
    }

    #[test]
    fn zero_apples_and_insufficient_floor() {
        let m = generate_maze(3, 2, 2).unwrap();
        let flags = StageFlags::default();
        assert!(annotate(&m, flags, 0, 4).unwrap().apples.is_empty());
        assert!(matches!(annotate(&m, flags, m.floor_count(), 4), Err(MazeError::InsufficientFloor { .. })));
    }

    #[test]
    fn textures_deterministic_and_exposed_only() {
        let m = generate_maze(21, 4, 4).unwrap();
        assert_eq!(assign_textures(&m, Some(3)), assign_textures(&m, Some(3)));
        assert!(assign_textures(&m, None).all_zero());
        let t = assign_textures(&m, Some(3));
        for i in 0..m.blocks().len() {
            let p = m.pos_of(i);
            let expected = m.block(p) == Block::Wall && is_exposed(&m, p);
            assert_eq!(t.get(i).is_some(), expected);
        }
    }

    #[test]
    fn manifest_round_trip() {
        let pool = MapPool {
            entries: vec![
                MapEntry { id: 0, seed: 10, cols: 4, rows: 4 },
                MapEntry { id: 1, seed: 11, cols: 4, rows: 4 },
                MapEntry { id: 2, seed: 12, cols: 4, rows: 4 },
            ],
            train_ids: vec![0, 1],
            test_ids: vec![2],
            static_subset: vec![1],
        };
        let text = pool.manifest();
        assert_eq!(text.lines().nth(1).unwrap(), "1\t11\t4\t4\tstatic");
        assert_eq!(MapPool::parse_manifest(&text).unwrap(), pool);
    }
}
