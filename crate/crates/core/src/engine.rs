//! Run orchestration: full coupled or mean-field runs, trajectory records
//! and summary statistics.
//!
//! Cross-node queue averages exclude sink nodes (their queues are pinned
//! at zero and would bias means); output headers say so. Per-node series
//! are gated behind a flag and capped, so quarter-million-node runs only
//! pay for aggregates.

use std::path::Path;

use thiserror::Error;

use crate::config::{ConfigError, Mode, SimConfig};
use crate::dynamics::{
    step_coupled, DynamicsError, QueueState, ResidualDiagnostics, StepContext,
};
use crate::meanfield::MeanFieldError;
use crate::schedulers::{schedule, ControlVector, SchedulerError, SchedulerKind};
use crate::stochastic::{draw_node_params, StochasticError};
use crate::topology::{build_directed_grid, uniform_routing, Topology, TopologyError};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error(transparent)]
    Stochastic(#[from] StochasticError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Scheduler(#[from] SchedulerError),
    #[error(transparent)]
    MeanField(#[from] MeanFieldError),
    #[error("scheduler `{scheduler}` is not available in this mode")]
    SchedulerNotSupported { scheduler: SchedulerKind },
    #[error("topology file {path}: {source}")]
    TopologyFile {
        path: String,
        source: std::io::Error,
    },
    #[error("stabilization window {window} needs at least {needed} steps, trajectory has {steps}")]
    WindowTooLarge {
        window: usize,
        needed: u64,
        steps: u64,
    },
    #[error("compare needs at least two runs")]
    NotEnoughRuns,
    #[error("compare needs matching shapes: run 0 has N={n0}, K={k0}; run {idx} has N={n}, K={k}")]
    ShapeMismatch {
        idx: usize,
        n0: usize,
        k0: u64,
        n: usize,
        k: u64,
    },
    #[error("invariant violated at node {node}: {detail}")]
    InvariantViolated { node: usize, detail: String },
}

/// Aggregate statistics for one step. `sink_throughput` is cumulative
/// data absorbed by the sinks up to this step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub step: u64,
    pub mean_queue: f64,
    pub std_queue: f64,
    pub active_fraction: f64,
    pub sink_throughput: f64,
    pub residual_z_arrival: f64,
    pub residual_z_departure: f64,
    /// Per-node queue values for the recorded node ids; empty unless
    /// per-node recording is on.
    pub per_node: Vec<f64>,
}

/// Time-indexed record of one run: K+1 records with strictly increasing
/// step indices.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub records: Vec<StepRecord>,
    /// Node ids the per-node columns refer to.
    pub per_node_ids: Vec<u32>,
    pub truncation_events: u64,
    pub residual_z_arrival: f64,
    pub residual_z_departure: f64,
}

impl Trajectory {
    pub fn new(per_node_ids: Vec<u32>) -> Self {
        Self {
            records: Vec::new(),
            per_node_ids,
            truncation_events: 0,
            residual_z_arrival: 0.0,
            residual_z_departure: 0.0,
        }
    }

    pub fn push_record(&mut self, record: StepRecord) {
        debug_assert!(self
            .records
            .last()
            .map(|r| r.step < record.step)
            .unwrap_or(true));
        self.records.push(record);
    }

    pub fn mean_queue_series(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.mean_queue).collect()
    }

    pub fn final_mean_queue(&self) -> f64 {
        self.records.last().map(|r| r.mean_queue).unwrap_or(0.0)
    }

    pub fn final_throughput(&self) -> f64 {
        self.records
            .last()
            .map(|r| r.sink_throughput)
            .unwrap_or(0.0)
    }

    /// Mean of the last `window` records' mean queue (the plateau level).
    pub fn plateau(&self, window: usize) -> f64 {
        let len = self.records.len();
        if len == 0 {
            return 0.0;
        }
        let w = window.max(1).min(len);
        let tail = &self.records[len - w..];
        tail.iter().map(|r| r.mean_queue).sum::<f64>() / w as f64
    }
}

/// Build the topology a coupled run uses: an explicit edge-list file when
/// configured, otherwise the rows x cols grid.
pub fn build_topology(cfg: &SimConfig) -> Result<Topology, EngineError> {
    if let Some(path) = &cfg.topology_file {
        let text =
            std::fs::read_to_string(Path::new(path)).map_err(|source| EngineError::TopologyFile {
                path: path.clone(),
                source,
            })?;
        return Ok(Topology::from_edge_list_text(&text)?);
    }
    Ok(build_directed_grid(cfg.rows, cfg.cols)?)
}

/// Run the coupled finite-N engine: scheduler, step, sink enforcement,
/// record, repeated K times. Deterministic given the seed.
pub fn run_coupled(cfg: &SimConfig) -> Result<Trajectory, EngineError> {
    cfg.validate()?;
    let topo = build_topology(cfg)?;
    let weights = uniform_routing(&topo);
    let node_params = draw_node_params(cfg.seed, topo.num_nodes(), &cfg.ranges())?;
    let global = cfg.global_params();
    let ctx = StepContext {
        topo: &topo,
        weights: &weights,
        node_params: &node_params,
        global: &global,
        routing: cfg.routing,
    };
    let n = topo.num_nodes();

    let per_node_ids: Vec<u32> = if cfg.per_node {
        (0..n.min(cfg.per_node_limit) as u32).collect()
    } else {
        Vec::new()
    };
    let mut traj = Trajectory::new(per_node_ids.clone());
    let mut diag = ResidualDiagnostics::new(n);

    let mut state = QueueState::zeros(n);
    let mut control = schedule(
        cfg.scheduler,
        &state,
        &topo,
        &weights,
        &node_params,
        &global,
        &ControlVector::all_off(&topo),
    )?;
    let mut throughput = 0.0;
    traj.push_record(coupled_record(
        &state,
        &topo,
        &control,
        throughput,
        &diag,
        &per_node_ids,
    ));

    for _ in 0..cfg.steps {
        let (next, flows) = step_coupled(&state, &control, &ctx, cfg.seed)?;
        diag.push(&state, &control, &flows, &ctx);
        traj.truncation_events += flows.truncation_events;
        for s in topo.sinks() {
            throughput += flows.forwarded[s.index()];
        }
        check_invariants(&next, &topo)?;
        state = next;
        control = schedule(
            cfg.scheduler,
            &state,
            &topo,
            &weights,
            &node_params,
            &global,
            &control,
        )?;
        traj.push_record(coupled_record(
            &state,
            &topo,
            &control,
            throughput,
            &diag,
            &per_node_ids,
        ));
    }
    traj.residual_z_arrival = diag.across_node_z(crate::dynamics::Process::Arrival, &topo);
    traj.residual_z_departure = diag.across_node_z(crate::dynamics::Process::Departure, &topo);
    Ok(traj)
}

fn check_invariants(state: &QueueState, topo: &Topology) -> Result<(), EngineError> {
    for (i, &q) in state.q.iter().enumerate() {
        if q < 0.0 {
            return Err(EngineError::InvariantViolated {
                node: i,
                detail: format!("queue is negative ({q})"),
            });
        }
        if topo.is_sink(i) && q != 0.0 {
            return Err(EngineError::InvariantViolated {
                node: i,
                detail: format!("sink queue not cleared ({q})"),
            });
        }
    }
    Ok(())
}

fn coupled_record(
    state: &QueueState,
    topo: &Topology,
    control: &ControlVector,
    throughput: f64,
    diag: &ResidualDiagnostics,
    per_node_ids: &[u32],
) -> StepRecord {
    let mut sum = 0.0;
    let mut sumsq = 0.0;
    let mut count = 0usize;
    for i in 0..topo.num_nodes() {
        if topo.is_sink(i) {
            continue;
        }
        sum += state.q[i];
        sumsq += state.q[i] * state.q[i];
        count += 1;
    }
    let mean = if count == 0 { 0.0 } else { sum / count as f64 };
    let var = if count == 0 {
        0.0
    } else {
        (sumsq / count as f64 - mean * mean).max(0.0)
    };
    StepRecord {
        step: state.step,
        mean_queue: mean,
        std_queue: var.sqrt(),
        active_fraction: control.active_fraction(topo),
        sink_throughput: throughput,
        residual_z_arrival: diag.across_node_z(crate::dynamics::Process::Arrival, topo),
        residual_z_departure: diag.across_node_z(crate::dynamics::Process::Departure, topo),
        per_node: per_node_ids.iter().map(|&i| state.q[i as usize]).collect(),
    }
}

/// Run whichever engine the config selects.
pub fn run(cfg: &SimConfig) -> Result<Trajectory, EngineError> {
    match cfg.mode {
        Mode::Coupled => run_coupled(cfg),
        Mode::MeanField => crate::meanfield::run_meanfield(cfg),
    }
}

/// Relative drift of the mean-queue series: |mean(last window) -
/// mean(previous window)| / mean(entire series). Zero for a constant
/// series; a series still growing linearly scores 2 window / K.
pub fn stabilization_stat(traj: &Trajectory, window: usize) -> Result<f64, EngineError> {
    let steps = traj.records.len().saturating_sub(1) as u64;
    if window == 0 || steps < 2 * window as u64 {
        return Err(EngineError::WindowTooLarge {
            window,
            needed: 2 * window as u64,
            steps,
        });
    }
    let series = traj.mean_queue_series();
    let len = series.len();
    let last = &series[len - window..];
    let previous = &series[len - 2 * window..len - window];
    let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
    let overall = mean(&series);
    if overall == 0.0 {
        return Ok(0.0);
    }
    Ok((mean(last) - mean(previous)).abs() / overall)
}

/// Aligned mean-queue series plus summary rows for several runs.
#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub labels: Vec<String>,
    pub steps: Vec<u64>,
    pub mean_queues: Vec<Vec<f64>>,
    pub summaries: Vec<RunSummary>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub label: String,
    pub final_mean_queue: f64,
    pub plateau: f64,
    pub stabilization: Option<f64>,
    pub sink_throughput: f64,
    pub truncation_events: u64,
}

/// Window used for plateau and drift summaries when K allows it.
pub const SUMMARY_WINDOW: usize = 100;

pub fn summarize(label: &str, traj: &Trajectory) -> RunSummary {
    RunSummary {
        label: label.to_string(),
        final_mean_queue: traj.final_mean_queue(),
        plateau: traj.plateau(SUMMARY_WINDOW),
        stabilization: stabilization_stat(traj, SUMMARY_WINDOW).ok(),
        sink_throughput: traj.final_throughput(),
        truncation_events: traj.truncation_events,
    }
}

/// Run every config and align their trajectories. All runs must share
/// the node count and step count.
pub fn compare_runs(configs: &[(String, SimConfig)]) -> Result<Comparison, EngineError> {
    if configs.len() < 2 {
        return Err(EngineError::NotEnoughRuns);
    }
    for cfg in configs {
        cfg.1.validate()?;
    }
    let n0 = configs[0].1.node_count();
    let k0 = configs[0].1.steps;
    for (idx, (_, cfg)) in configs.iter().enumerate().skip(1) {
        if cfg.node_count() != n0 || cfg.steps != k0 {
            return Err(EngineError::ShapeMismatch {
                idx,
                n0,
                k0,
                n: cfg.node_count(),
                k: cfg.steps,
            });
        }
    }
    let mut comparison = Comparison {
        labels: Vec::new(),
        steps: (0..=k0).collect(),
        mean_queues: Vec::new(),
        summaries: Vec::new(),
    };
    for (label, cfg) in configs {
        let traj = run(cfg)?;
        comparison.labels.push(label.clone());
        comparison.mean_queues.push(traj.mean_queue_series());
        comparison.summaries.push(summarize(label, &traj));
    }
    Ok(comparison)
}
