//! Hand-written agents: uniform random, a null agent, and route followers
//! that use privileged map knowledge. They serve as baselines and as
//! oracles for the metrics.

use std::f64::consts::{PI, TAU};

use rand::Rng;

use crate::maze::{BlockPos, Maze};
use crate::metrics::bfs_path;
use crate::raycast::Observation;
use crate::rng::{mix_seeds, seeded, SeededRng};
use crate::world::{Action, Policy, PolicyError, Pose, StepView};

/// Uniformly random actions; never looks at the image.
pub struct RandomPolicy {
    rng: SeededRng,
}

impl RandomPolicy {
    pub fn new(seed: u64) -> Self {
        RandomPolicy { rng: seeded(mix_seeds(&[seed, 0x7A4D])) }
    }
}

impl Policy for RandomPolicy {
    type Memory = ();

    fn initial_memory(&mut self) {}

    fn act(&mut self, _: &Observation, _: &StepView<'_>, _: ()) -> Result<(Action, ()), PolicyError> {
        Ok((Action::ALL[self.rng.random_range(0..Action::COUNT)], ()))
    }

    fn needs_image(&self) -> bool {
        false
    }
}

/// Always rotates left, so it never moves.
#[derive(Clone, Copy, Debug, Default)]
pub struct NullPolicy;

impl Policy for NullPolicy {
    type Memory = ();

    fn initial_memory(&mut self) {}

    fn act(&mut self, _: &Observation, _: &StepView<'_>, _: ()) -> Result<(Action, ()), PolicyError> {
        Ok((Action::RotateLeft, ()))
    }

    fn needs_image(&self) -> bool {
        false
    }
}

/// How a [`RoutePolicy`] plans each spawn-to-goal traversal.
#[derive(Clone, Debug, PartialEq)]
pub enum RoutePlan {
    /// The BFS shortest path.
    Geodesic,
    /// Walk half the shortest path, return to the spawn block, then walk the
    /// whole path: roughly twice the geodesic length.
    OutAndBack,
    /// Alternate between routes through each of the two blocks, starting
    /// with the first; each route avoids the other block.
    Alternate(BlockPos, BlockPos),
}

/// Drives from block centre to block centre along a planned route.
pub struct RoutePolicy {
    plan: RoutePlan,
    traversals: usize,
}

/// Remaining waypoints and the pose seen on the previous step.
#[derive(Clone, Debug, Default)]
pub struct RouteMemory {
    waypoints: Vec<BlockPos>,
    last: Option<Pose>,
}

impl RoutePolicy {
    pub fn new(plan: RoutePlan) -> Self {
        RoutePolicy { plan, traversals: 0 }
    }

    /// Traversals planned so far (one per spawn or respawn).
    pub fn traversals(&self) -> usize {
        self.traversals
    }

    fn plan_route(&mut self, maze: &Maze, from: BlockPos, goal: BlockPos) -> Result<Vec<BlockPos>, PolicyError> {
        let path = |a, b, avoid: &[BlockPos]| bfs_path(maze, a, b, avoid).ok_or_else(|| PolicyError::from(format!("no route from {a} to {b}")));
        let full = path(from, goal, &[])?;
        let route = match &self.plan {
            RoutePlan::Geodesic => full[1..].to_vec(),
            RoutePlan::OutAndBack => {
                let k = (full.len() - 1) / 2;
                let mut r: Vec<BlockPos> = full[1..=k].to_vec();
                r.extend(full[..k].iter().rev().copied());
                r.extend_from_slice(&full[1..]);
                r
            }
            RoutePlan::Alternate(a, b) => {
                let (via, avoid) = if self.traversals % 2 == 0 { (*a, *b) } else { (*b, *a) };
                let mut r = path(from, via, &[avoid])?;
                r.extend_from_slice(&path(via, goal, &[avoid])?[1..]);
                r[1..].to_vec()
            }
        };
        self.traversals += 1;
        Ok(route)
    }
}

fn wrap(a: f64) -> f64 {
    let w = a.rem_euclid(TAU);
    if w > PI {
        w - TAU
    } else {
        w
    }
}

impl Policy for RoutePolicy {
    type Memory = RouteMemory;

    fn initial_memory(&mut self) -> RouteMemory {
        RouteMemory::default()
    }

    fn act(&mut self, _: &Observation, view: &StepView<'_>, mut mem: RouteMemory) -> Result<(Action, RouteMemory), PolicyError> {
        let cfg = view.config;
        let b = cfg.block_size;
        let pose = view.pose;
        // A jump larger than one step means a respawn (or the first step).
        let jumped = mem.last.is_none_or(|l| (l.x - pose.x).hypot(l.y - pose.y) > cfg.forward_speed + 1e-6);
        if jumped {
            let here = view.maze.block_at(pose.x, pose.y, b);
            mem.waypoints = self.plan_route(view.maze, here, view.annotations.goal)?;
            mem.waypoints.reverse();
        }
        mem.last = Some(pose);
        loop {
            let Some(&next) = mem.waypoints.last() else {
                return Ok((Action::RotateLeft, mem));
            };
            let (tx, ty) = view.maze.block_center(next, b);
            let (dx, dy) = (tx - pose.x, ty - pose.y);
            // Within half a stride counts as arrived, so off-axis headings cannot orbit a waypoint.
            if dx.hypot(dy) < 0.5 * cfg.forward_speed {
                mem.waypoints.pop();
                continue;
            }
            let err = wrap(dy.atan2(dx) - pose.heading);
            let action = if err.abs() <= cfg.turn_speed / 2.0 {
                Action::Forward
            } else if err > 0.0 {
                Action::RotateRight
            } else {
                Action::RotateLeft
            };
            return Ok((action, mem));
        }
    }

    fn needs_image(&self) -> bool {
        false
    }
}
