//! Deterministic simulator and library for open-vocabulary semantic mapping
//! in semi-static worlds: probabilistic per-object change detection, a
//! task-conditioned exploration priority map, ergodic waypoint sampling,
//! and an evaluation harness with random and patrol baselines.
//!
//! Everything is planar and grid-backed; one `GridSpec` is shared by the
//! background map, the priority map, the planner, and the metrics. All
//! randomness flows through a per-episode seeded generator, so a scenario,
//! seed, and policy fully determine every output byte.

pub mod config;
pub mod episode;
pub mod error;
pub mod eval;
pub mod explore;
pub mod export;
pub mod geometry;
pub mod grid;
pub mod icp;
pub mod lifecycle;
pub mod logging;
pub mod priority;
pub mod semantic_map;
pub mod stationarity;
pub mod world;

pub use config::Config;
pub use episode::{run_episode, EpisodeOptions, EpisodeResult, Policy, Task};
pub use error::{Error, Result};
pub use geometry::{Point2, Pose2D};
pub use semantic_map::{SemanticMap, SimilarityConfig};
pub use world::{load_scenario, Scenario, SimWorld};
