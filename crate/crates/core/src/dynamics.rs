//! Queue-state evolution for the coupled finite-N network.
//!
//! One step samples Poisson arrivals and departures per node against the
//! step-start queues, routes departed data to out-neighbors, applies the
//! aggregation fraction, and pins sink queues at zero. Departures are
//! truncated at the data actually available; truncation events are
//! counted so runs can certify that the pure rate model was never bent.
//!
//! Residual diagnostics accumulate each counting process minus its
//! compensator; their standardized magnitudes should hover near zero when
//! the sampling is faithful.

use thiserror::Error;

use crate::schedulers::ControlVector;
use crate::stochastic::{sample_poisson, NodeParams, Purpose, RngStream, StreamKey};
use crate::topology::{RoutingWeights, Topology};

#[derive(Debug, Error, PartialEq)]
pub enum DynamicsError {
    #[error("invalid global params: {0}")]
    InvalidParams(String),
    #[error("state has {state} entries but topology has {nodes} nodes")]
    StateSizeMismatch { state: usize, nodes: usize },
    #[error("control vector has {control} entries but topology has {nodes} nodes")]
    ControlSizeMismatch { control: usize, nodes: usize },
    #[error("queue at node {node} would become negative ({value}); internal logic error")]
    NegativeQueue { node: usize, value: f64 },
    #[error("misaligned histories: {0}")]
    MisalignedHistory(String),
    #[error(transparent)]
    Stochastic(#[from] crate::stochastic::StochasticError),
}

/// Run-wide scalar parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GlobalParams {
    /// Congestion sensitivity of the service rate.
    pub alpha: f64,
    /// Fraction of incoming plus arriving data consumed by in-node
    /// processing before buffering.
    pub beta: f64,
    /// Time step; rates are per unit time and multiplied by dt everywhere.
    pub dt: f64,
}

impl GlobalParams {
    pub fn new(alpha: f64, beta: f64, dt: f64) -> Result<Self, DynamicsError> {
        let p = Self { alpha, beta, dt };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), DynamicsError> {
        if !(0.0..=1.0).contains(&self.alpha) || !self.alpha.is_finite() {
            return Err(DynamicsError::InvalidParams(format!(
                "alpha must lie in [0, 1], got {}",
                self.alpha
            )));
        }
        if !(0.0..=1.0).contains(&self.beta) || !self.beta.is_finite() {
            return Err(DynamicsError::InvalidParams(format!(
                "beta must lie in [0, 1], got {}",
                self.beta
            )));
        }
        if !self.dt.is_finite() || self.dt <= 0.0 {
            return Err(DynamicsError::InvalidParams(format!(
                "dt must be positive and finite, got {}",
                self.dt
            )));
        }
        Ok(())
    }
}

/// Non-negative queue lengths (data units) for all nodes at one step.
#[derive(Debug, Clone, PartialEq)]
pub struct QueueState {
    pub q: Vec<f64>,
    pub step: u64,
}

impl QueueState {
    pub fn zeros(num_nodes: usize) -> Self {
        Self {
            q: vec![0.0; num_nodes],
            step: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.q.len()
    }

    pub fn is_empty(&self) -> bool {
        self.q.is_empty()
    }
}

/// Flow record for one step. Arrival and raw departure counts are
/// integers; a departure truncated at the available data becomes
/// fractional, and `truncation_events` counts how often that happened.
#[derive(Debug, Clone, PartialEq)]
pub struct StepFlows {
    pub arrivals: Vec<u64>,
    pub departed: Vec<f64>,
    pub forwarded: Vec<f64>,
    pub processed: Vec<f64>,
    pub truncation_events: u64,
}

/// How departed data is split among a sender's out-neighbors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RoutingMode {
    /// Each receiver gets departed * weight(sender, receiver); the weights
    /// of a sender sum to 1, so routed mass equals departed mass. The
    /// default, because conservation is testable and physically required.
    #[default]
    SenderConserving,
    /// The incoming-flow sum taken literally: each receiver averages its
    /// in-neighbors' departures by its own in-degree. Does not conserve
    /// mass; retained for comparisons.
    PaperLiteral,
}

impl RoutingMode {
    pub fn as_str(self) -> &'static str {
        match self {
            RoutingMode::SenderConserving => "sender-conserving",
            RoutingMode::PaperLiteral => "paper-literal",
        }
    }
}

impl std::str::FromStr for RoutingMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sender-conserving" => Ok(RoutingMode::SenderConserving),
            "paper-literal" => Ok(RoutingMode::PaperLiteral),
            other => Err(format!(
                "unknown routing mode `{other}` (expected sender-conserving or paper-literal)"
            )),
        }
    }
}

impl std::fmt::Display for RoutingMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Everything a step needs besides the mutable state.
#[derive(Clone, Copy)]
pub struct StepContext<'a> {
    pub topo: &'a Topology,
    pub weights: &'a RoutingWeights,
    pub node_params: &'a NodeParams,
    pub global: &'a GlobalParams,
    pub routing: RoutingMode,
}

/// Congestion-sensitive service rate m / (1 + alpha q): equals m at an
/// empty queue and decays as the queue grows.
#[inline]
pub fn service_rate(base_rate: f64, alpha: f64, q: f64) -> f64 {
    base_rate / (1.0 + alpha * q)
}

/// Pin every sink queue at zero; other entries are untouched.
pub fn enforce_sink(state: &mut QueueState, topo: &Topology) {
    for s in topo.sinks() {
        state.q[s.index()] = 0.0;
    }
}

#[derive(Clone, Copy, Default)]
struct NodeDraw {
    arrival: u64,
    departed: f64,
    truncated: bool,
}

/// Advance the coupled network by one step.
///
/// Per non-sink node: arrivals ~ Poisson(lambda dt); departures ~
/// Poisson(mu chi dt) with mu evaluated on the step-start queue, truncated
/// at the step-start queue (the conservative availability reading);
/// departed data is routed to out-neighbors to form each receiver's
/// incoming flow; queues update as q + (1-beta)(arrivals + incoming) -
/// departed. Sinks never transmit and their queues are cleared, with
/// their incoming flow recorded so delivered data can be accounted.
pub fn step_coupled(
    state: &QueueState,
    control: &ControlVector,
    ctx: &StepContext<'_>,
    master_seed: u64,
) -> Result<(QueueState, StepFlows), DynamicsError> {
    let n = ctx.topo.num_nodes();
    if state.len() != n {
        return Err(DynamicsError::StateSizeMismatch {
            state: state.len(),
            nodes: n,
        });
    }
    if control.len() != n {
        return Err(DynamicsError::ControlSizeMismatch {
            control: control.len(),
            nodes: n,
        });
    }
    ctx.global.validate()?;
    let step = state.step + 1;
    let dt = ctx.global.dt;
    let alpha = ctx.global.alpha;
    let beta = ctx.global.beta;

    // Phase 1: per-node sampling against the step-start queues. Streams
    // are keyed by (node, step), so this is order-independent.
    let mut draws = vec![NodeDraw::default(); n];
    crate::par::for_each_indexed_mut(&mut draws, |i, slot| {
        if ctx.topo.is_sink(i) {
            return;
        }
        let q = state.q[i];
        let mut arrival_stream = RngStream::new(master_seed, StreamKey::new(i, 0, Purpose::Arrival, step));
        let arrival = sample_poisson(&mut arrival_stream, ctx.node_params.lambda_at(i, step) * dt)
            .expect("arrival mean validated with config");
        let mu = service_rate(ctx.node_params.base_rate[i], alpha, q);
        let mean_dep = if control.is_on(i) { mu * dt } else { 0.0 };
        let mut dep_stream = RngStream::new(master_seed, StreamKey::new(i, 0, Purpose::Departure, step));
        let raw = sample_poisson(&mut dep_stream, mean_dep)
            .expect("departure mean validated with config") as f64;
        let truncated = raw > q;
        *slot = NodeDraw {
            arrival,
            departed: if truncated { q } else { raw },
            truncated,
        };
    });

    // Phase 2: aggregate incoming flow per receiver in fixed neighbor
    // order, then update queues.
    let mut flows = StepFlows {
        arrivals: vec![0; n],
        departed: vec![0.0; n],
        forwarded: vec![0.0; n],
        processed: vec![0.0; n],
        truncation_events: 0,
    };
    for (i, d) in draws.iter().enumerate() {
        flows.arrivals[i] = d.arrival;
        flows.departed[i] = d.departed;
        flows.truncation_events += d.truncated as u64;
    }
    for i in 0..n {
        let incoming = incoming_flow(ctx, &flows.departed, i);
        flows.forwarded[i] = incoming;
        if !ctx.topo.is_sink(i) {
            flows.processed[i] = beta * (flows.arrivals[i] as f64 + incoming);
        }
    }

    let mut next = QueueState {
        q: vec![0.0; n],
        step,
    };
    for i in 0..n {
        if ctx.topo.is_sink(i) {
            continue;
        }
        let buffered = (1.0 - beta) * (flows.arrivals[i] as f64 + flows.forwarded[i]);
        let q_next = state.q[i] + buffered - flows.departed[i];
        if q_next < 0.0 {
            return Err(DynamicsError::NegativeQueue {
                node: i,
                value: q_next,
            });
        }
        next.q[i] = q_next;
    }
    enforce_sink(&mut next, ctx.topo);
    Ok((next, flows))
}

fn incoming_flow(ctx: &StepContext<'_>, departed: &[f64], receiver: usize) -> f64 {
    let senders = ctx.topo.in_neighbors(receiver);
    if senders.is_empty() {
        return 0.0;
    }
    match ctx.routing {
        RoutingMode::SenderConserving => senders
            .iter()
            .map(|&j| {
                let w = ctx
                    .weights
                    .weight(ctx.topo, j.index(), crate::topology::NodeId(receiver as u32))
                    .unwrap_or(0.0);
                w * departed[j.index()]
            })
            .sum(),
        RoutingMode::PaperLiteral => {
            let w = 1.0 / senders.len() as f64;
            senders.iter().map(|&j| w * departed[j.index()]).sum()
        }
    }
}

/// Running compensated residuals per node for the arrival, departure and
/// forwarding processes, plus their combination for the queue itself.
/// All residuals start at zero.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualDiagnostics {
    pub res_arrival: Vec<f64>,
    pub res_departure: Vec<f64>,
    pub res_forward: Vec<f64>,
    pub var_arrival: Vec<f64>,
    pub var_departure: Vec<f64>,
    pub var_forward: Vec<f64>,
    pub steps: u64,
    mu_chi_scratch: Vec<f64>,
}

/// Which compensated process a diagnostic query refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Process {
    Arrival,
    Departure,
    Forward,
}

impl ResidualDiagnostics {
    pub fn new(num_nodes: usize) -> Self {
        Self {
            res_arrival: vec![0.0; num_nodes],
            res_departure: vec![0.0; num_nodes],
            res_forward: vec![0.0; num_nodes],
            var_arrival: vec![0.0; num_nodes],
            var_departure: vec![0.0; num_nodes],
            var_forward: vec![0.0; num_nodes],
            steps: 0,
            mu_chi_scratch: vec![0.0; num_nodes],
        }
    }

    /// Fold in one step: `state_before` is the queue state the step was
    /// sampled against, `control` the control in force, `flows` its flow
    /// record.
    pub fn push(
        &mut self,
        state_before: &QueueState,
        control: &ControlVector,
        flows: &StepFlows,
        ctx: &StepContext<'_>,
    ) {
        let n = ctx.topo.num_nodes();
        let dt = ctx.global.dt;
        let scale = 1.0 - ctx.global.beta;
        let step = state_before.step + 1;
        for i in 0..n {
            self.mu_chi_scratch[i] = if !ctx.topo.is_sink(i) && control.is_on(i) {
                service_rate(ctx.node_params.base_rate[i], ctx.global.alpha, state_before.q[i])
            } else {
                0.0
            };
        }
        for i in 0..n {
            if ctx.topo.is_sink(i) {
                continue;
            }
            let lam_dt = ctx.node_params.lambda_at(i, step) * dt;
            self.res_arrival[i] += scale * (flows.arrivals[i] as f64 - lam_dt);
            self.var_arrival[i] += scale * scale * lam_dt;

            let dep_mean = self.mu_chi_scratch[i] * dt;
            self.res_departure[i] += flows.departed[i] - dep_mean;
            self.var_departure[i] += dep_mean;

            let (comp, var) = self.forward_compensator(ctx, i);
            self.res_forward[i] += scale * (flows.forwarded[i] - comp * dt);
            self.var_forward[i] += scale * scale * var * dt;
        }
        self.steps += 1;
    }

    fn forward_compensator(&self, ctx: &StepContext<'_>, receiver: usize) -> (f64, f64) {
        let senders = ctx.topo.in_neighbors(receiver);
        if senders.is_empty() {
            return (0.0, 0.0);
        }
        let mut comp = 0.0;
        let mut var = 0.0;
        for &j in senders {
            let w = match ctx.routing {
                RoutingMode::SenderConserving => ctx
                    .weights
                    .weight(ctx.topo, j.index(), crate::topology::NodeId(receiver as u32))
                    .unwrap_or(0.0),
                RoutingMode::PaperLiteral => 1.0 / senders.len() as f64,
            };
            comp += w * self.mu_chi_scratch[j.index()];
            var += w * w * self.mu_chi_scratch[j.index()];
        }
        (comp, var)
    }

    /// Residual of the queue martingale combination for one node.
    pub fn res_queue(&self, node: usize) -> f64 {
        self.res_arrival[node] - self.res_departure[node] + self.res_forward[node]
    }

    /// Residual per step for one node (time-averaged compensated
    /// increment).
    pub fn time_averaged(&self, process: Process, node: usize) -> f64 {
        if self.steps == 0 {
            return 0.0;
        }
        self.residual(process, node) / self.steps as f64
    }

    fn residual(&self, process: Process, node: usize) -> f64 {
        match process {
            Process::Arrival => self.res_arrival[node],
            Process::Departure => self.res_departure[node],
            Process::Forward => self.res_forward[node],
        }
    }

    fn variance(&self, process: Process, node: usize) -> f64 {
        match process {
            Process::Arrival => self.var_arrival[node],
            Process::Departure => self.var_departure[node],
            Process::Forward => self.var_forward[node],
        }
    }

    /// Standardized residual for one node: residual over the standard
    /// deviation its compensator implies. Zero when nothing was at stake.
    pub fn node_z(&self, process: Process, node: usize) -> f64 {
        let var = self.variance(process, node);
        if var == 0.0 {
            return 0.0;
        }
        self.residual(process, node) / var.sqrt()
    }

    /// Standardized across-node mean residual over non-sink nodes: the
    /// across-node mean divided by its standard error. Zero when no
    /// variance was accumulated.
    pub fn across_node_z(&self, process: Process, topo: &Topology) -> f64 {
        let mut sum = 0.0;
        let mut var = 0.0;
        for i in 0..topo.num_nodes() {
            if topo.is_sink(i) {
                continue;
            }
            sum += self.residual(process, i);
            var += self.variance(process, i);
        }
        if var == 0.0 {
            return 0.0;
        }
        sum / var.sqrt()
    }
}

/// Fold a full aligned history into residual diagnostics: `states` holds
/// K+1 entries (state before each step plus the final one), `controls`
/// and `flows` hold K entries each.
pub fn compensated_residuals(
    flows: &[StepFlows],
    states: &[QueueState],
    controls: &[ControlVector],
    ctx: &StepContext<'_>,
) -> Result<ResidualDiagnostics, DynamicsError> {
    if states.len() != flows.len() + 1 {
        return Err(DynamicsError::MisalignedHistory(format!(
            "{} states for {} flow records (need flows + 1)",
            states.len(),
            flows.len()
        )));
    }
    if controls.len() != flows.len() {
        return Err(DynamicsError::MisalignedHistory(format!(
            "{} controls for {} flow records",
            controls.len(),
            flows.len()
        )));
    }
    let mut diag = ResidualDiagnostics::new(ctx.topo.num_nodes());
    for k in 0..flows.len() {
        diag.push(&states[k], &controls[k], &flows[k], ctx);
    }
    Ok(diag)
}
