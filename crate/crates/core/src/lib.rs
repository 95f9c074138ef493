//! A maze-navigation benchmark for recurrent actor-critic agents.
//!
//! The pieces, bottom up:
//!
//! - [`maze`] generates perfect mazes and the goal, spawn and apple layouts.
//! - [`raycast`] renders first-person RGB frames and depth from a block grid.
//! - [`world`] is the continuous environment with rewards, respawns and logs.
//! - [`autodiff`] and [`agent`] hold the tape-based gradients and the
//!   conv-LSTM policy with depth and loop-closure heads.
//! - [`trainer`] runs asynchronous advantage actor-critic training.
//! - [`metrics`] computes goal hits, Latency-1:>1 and distance inefficiency.
//! - [`benchmark`] wires these into the five-stage evaluation matrix with
//!   replayable manifests.
//! - [`analysis`] covers saliency, top-down renders and plots.
//!
//! [`oracle`] and [`selftest`] hold slow reference implementations and the
//! suites that compare the fast paths against them.
//!
//! ```
//! use navbench::maze::generate_maze;
//! use navbench::metrics::bfs_hops;
//!
//! let maze = generate_maze(7, 3, 3).unwrap();
//! assert!(maze.is_connected());
//! let start = maze.floor_blocks()[0];
//! let hops = bfs_hops(&maze, start);
//! assert_eq!(hops[maze.index(start)], Some(0));
//! ```

pub mod autodiff;
pub mod maze;
pub mod raycast;
pub mod rng;
pub mod world;
pub mod agent;
pub mod oracle;
pub mod metrics;
pub mod scripted;
pub mod trainer;
pub mod benchmark;
pub mod analysis;
pub mod selftest;

pub use agent::{AgentConfig, Checkpoint, ParameterSet};
pub use benchmark::{StageSpec, StageManifest};
pub use maze::{generate_maze, Maze, MapPool};
pub use metrics::MetricsReport;
pub use trainer::TrainConfig;
pub use world::{EnvConfig, Environment};
