//! Sampling-based kinodynamic planning with a bandit-guided sampler.
//!
//! The planner runs RRT instances back to back, keeps the cheapest path, and
//! learns where good transitions live: finished trees are clustered by
//! position and reward, and a non-stationary bandit decides whether the next
//! sample comes from the whole space, the goal, or one of the clusters.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bandit;
pub mod clustering;
pub mod error;
pub mod experiment;
pub mod planner;
pub mod regret;
pub mod tree;
pub mod world;

pub use bandit::{ArmSet, KfManbConfig, Policy};
pub use clustering::{Cluster, ClusterSet, ClusteringConfig, TransitionDatabase};
pub use error::{Error, Result};
pub use planner::{ao_rrt, mab_rrt, PlanResult, PlannerConfig};
pub use tree::{NodeId, SearchTree};
pub use world::{
    bundled_scenario, load_scenario, AaBox, Control, Path, RewardField, Scenario, State, Transition,
};
