//! Multi-agent REINFORCE testbed for coalition detection.
//!
//! Twelve small policy networks play a hierarchical coordination game
//! ([`run_hierarchical`]), optionally with two agents trading groups mid-run
//! ([`run_swap`]). A negative control ([`run_negative_control`]) trains agents
//! to imitate group oracles in isolation, so they agree behaviorally without
//! any coupling. Each run measures hidden states and feeds them through the
//! `coalition-core` pipeline.

pub mod cluster;
pub mod error;
pub mod game;
pub mod hierarchy;
pub mod negative;
pub mod policy;

pub use error::{Result, SimError};
pub use game::{Assignment, EpisodeRecord, HierarchyConfig, MeasurementConfig, SwapConfig};
pub use hierarchy::{
    run_hierarchical, run_swap, CoordinationCurves, HierarchicalRun, MiGroupCurve, Recovery, SwapRun, Trainer,
    WindowSpec,
};
pub use negative::{
    behavioral_agreement, behavioral_baselines, run_negative_control, run_negative_control_with, BaselineResult,
    NegativeControlConfig, NegativeControlRun, Oracle,
};
pub use policy::{Adam, Mlp, PolicyAgent, PolicyOutput, Step};

use rayon::prelude::*;

/// Runs `f` once per seed on the rayon pool; results come back in seed order
/// and the first error wins.
pub fn run_seeds<T, F>(seeds: &[u64], f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(u64) -> Result<T> + Sync,
{
    seeds.par_iter().map(|&s| f(s)).collect()
}
