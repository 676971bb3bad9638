//! Discrete-time stochastic simulator for backpressure scheduling in
//! multi-hop sensor networks.
//!
//! Two engines are provided. The coupled engine evolves the exact finite-N
//! queue network on a directed graph: Poisson arrivals, congestion-sensitive
//! service rates, on-off transmission controls and per-edge routing of
//! departed data. The mean-field engine replaces neighbor interactions with
//! an ensemble of M independent samples per node, driving each node's
//! control from the gap between a sampled queue and the ensemble average.
//!
//! Everything is deterministic given a master seed: random draws come from
//! counter-based streams keyed by (node, sample, purpose, step), so results
//! do not depend on scheduling or worker count.

pub mod config;
pub mod dynamics;
pub mod engine;
pub mod meanfield;
pub mod output;
mod par;
pub mod schedulers;
pub mod stochastic;
pub mod topology;

pub use config::{Mode, SimConfig, DEFAULT_SEED};
pub use dynamics::{GlobalParams, QueueState, RoutingMode, StepFlows};
pub use engine::{stabilization_stat, Trajectory};
pub use meanfield::{ControlRule, EnsembleState, EstimatorMode};
pub use schedulers::{ControlVector, SchedulerKind};
pub use stochastic::{NodeParams, ParamRanges, RngStream};
pub use topology::{NodeId, RoutingWeights, Topology};
