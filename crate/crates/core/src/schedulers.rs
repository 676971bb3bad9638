//! On-off transmission control policies.
//!
//! The cooperative policy maximizes the summed backpressure criterion over
//! all 2^N schedules; the objective is separable in the per-node controls,
//! so the argmax is computed per node and must coincide with exhaustive
//! search (tested against one). The best-response policy optimizes each
//! node's own utility holding the others fixed; at a given instant it
//! reduces to the same sign test, independent of the other players. Ties
//! at exactly zero weight break to "off": transmitting would earn nothing
//! and the medium is better left quiet.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::dynamics::{service_rate, GlobalParams, QueueState};
use crate::stochastic::NodeParams;
use crate::topology::{NodeId, RoutingWeights, Topology};

#[derive(Debug, Error, PartialEq)]
pub enum SchedulerError {
    #[error("scheduler `{0}` needs the ensemble engine (it requires a mean estimate)")]
    NeedsEnsemble(SchedulerKind),
}

/// Per-node binary transmit decision; sinks are always off.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ControlVector {
    bits: Vec<bool>,
}

impl ControlVector {
    pub fn all_off(topo: &Topology) -> Self {
        Self {
            bits: vec![false; topo.num_nodes()],
        }
    }

    pub fn all_on(topo: &Topology) -> Self {
        Self::from_fn(topo, |_| true)
    }

    /// Build from a per-node closure; sinks are forced off.
    pub fn from_fn(topo: &Topology, f: impl Fn(usize) -> bool) -> Self {
        let bits = (0..topo.num_nodes())
            .map(|i| !topo.is_sink(i) && f(i))
            .collect();
        Self { bits }
    }

    pub fn from_bools(bits: Vec<bool>, topo: &Topology) -> Self {
        let mut cv = Self { bits };
        for s in topo.sinks() {
            cv.bits[s.index()] = false;
        }
        cv
    }

    #[inline]
    pub fn is_on(&self, node: usize) -> bool {
        self.bits[node]
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn as_bools(&self) -> &[bool] {
        &self.bits
    }

    /// Fraction of non-sink nodes transmitting.
    pub fn active_fraction(&self, topo: &Topology) -> f64 {
        let non_sink = topo.non_sink_count();
        if non_sink == 0 {
            return 0.0;
        }
        let active = self
            .bits
            .iter()
            .enumerate()
            .filter(|&(i, &on)| on && !topo.is_sink(i))
            .count();
        active as f64 / non_sink as f64
    }
}

/// Which control policy drives a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SchedulerKind {
    /// Argmax of the summed backpressure criterion.
    CooperativeBp,
    /// Per-node best response to the instantaneous utility.
    BestResponseBp,
    /// Transmit when a sampled queue exceeds the ensemble mean; only
    /// meaningful in the ensemble engine.
    MeanFieldThreshold,
    AlwaysOn,
    AlwaysOff,
}

impl SchedulerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SchedulerKind::CooperativeBp => "coop",
            SchedulerKind::BestResponseBp => "br",
            SchedulerKind::MeanFieldThreshold => "mft",
            SchedulerKind::AlwaysOn => "on",
            SchedulerKind::AlwaysOff => "off",
        }
    }
}

impl fmt::Display for SchedulerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SchedulerKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "coop" => Ok(SchedulerKind::CooperativeBp),
            "br" => Ok(SchedulerKind::BestResponseBp),
            "mft" => Ok(SchedulerKind::MeanFieldThreshold),
            "on" => Ok(SchedulerKind::AlwaysOn),
            "off" => Ok(SchedulerKind::AlwaysOff),
            other => Err(format!(
                "unknown scheduler `{other}` (expected coop, br, mft, on or off)"
            )),
        }
    }
}

/// Weighted queue differential toward the out-neighbors, scaled by the
/// node's own service rate: sum_j w(i,j) (q_i - q_j) mu_i(q_i). Positive
/// means transmitting moves data toward less congested nodes.
pub fn backpressure_weight(
    node: NodeId,
    state: &QueueState,
    topo: &Topology,
    weights: &RoutingWeights,
    node_params: &NodeParams,
    global: &GlobalParams,
) -> f64 {
    let i = node.index();
    let q_i = state.q[i];
    let differential: f64 = topo
        .out_neighbors(i)
        .iter()
        .enumerate()
        .map(|(slot, &j)| weights.weight_at(i, slot) * (q_i - state.q[j.index()]))
        .sum();
    differential * service_rate(node_params.base_rate[i], global.alpha, q_i)
}

/// Collective argmax of the summed backpressure criterion over all on-off
/// schedules. The objective is separable, so each node transmits exactly
/// when its own weight is positive; ties break to off.
pub fn cooperative_schedule(
    state: &QueueState,
    topo: &Topology,
    weights: &RoutingWeights,
    node_params: &NodeParams,
    global: &GlobalParams,
) -> ControlVector {
    ControlVector::from_fn(topo, |i| {
        backpressure_weight(NodeId(i as u32), state, topo, weights, node_params, global) > 0.0
    })
}

/// Best response of one node given everyone else's controls. The
/// instantaneous utility multiplies only this node's control, so the
/// response is the same sign test as the cooperative policy and does not
/// depend on `chi_others` (which influences only future states through
/// the dynamics).
pub fn best_response(
    node: NodeId,
    state: &QueueState,
    topo: &Topology,
    weights: &RoutingWeights,
    node_params: &NodeParams,
    global: &GlobalParams,
    chi_others: &ControlVector,
) -> bool {
    let _ = chi_others;
    backpressure_weight(node, state, topo, weights, node_params, global) > 0.0
}

/// Simultaneous best responses for every non-sink node.
pub fn best_response_schedule(
    state: &QueueState,
    topo: &Topology,
    weights: &RoutingWeights,
    node_params: &NodeParams,
    global: &GlobalParams,
    chi_others: &ControlVector,
) -> ControlVector {
    ControlVector::from_fn(topo, |i| {
        best_response(
            NodeId(i as u32),
            state,
            topo,
            weights,
            node_params,
            global,
            chi_others,
        )
    })
}

/// Mean-field threshold control: transmit exactly when the sampled queue
/// strictly exceeds the mean estimate.
#[inline]
pub fn meanfield_control(q_sample: f64, mean_estimate: f64) -> bool {
    q_sample > mean_estimate
}

/// Dispatch a coupled-engine scheduler. `prev` is the control of the
/// previous step, which the best-response policy is formally responding
/// to.
pub fn schedule(
    kind: SchedulerKind,
    state: &QueueState,
    topo: &Topology,
    weights: &RoutingWeights,
    node_params: &NodeParams,
    global: &GlobalParams,
    prev: &ControlVector,
) -> Result<ControlVector, SchedulerError> {
    match kind {
        SchedulerKind::CooperativeBp => {
            Ok(cooperative_schedule(state, topo, weights, node_params, global))
        }
        SchedulerKind::BestResponseBp => Ok(best_response_schedule(
            state,
            topo,
            weights,
            node_params,
            global,
            prev,
        )),
        SchedulerKind::AlwaysOn => Ok(ControlVector::all_on(topo)),
        SchedulerKind::AlwaysOff => Ok(ControlVector::all_off(topo)),
        SchedulerKind::MeanFieldThreshold => Err(SchedulerError::NeedsEnsemble(kind)),
    }
}
