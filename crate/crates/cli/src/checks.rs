//! Built-in oracle checks behind `backsim validate`.
//!
//! Each check pits an implementation path against an independent route:
//! the cooperative scheduler against exhaustive search over all 2^N
//! schedules, the samplers against their analytic moments, the coupled
//! stepper against exact conservation, and the flow sampling against its
//! compensators. The `Fault` hook deliberately breaks the scheduler under
//! test so the suite can prove it would catch a regression.

use backsim_core::config::SimConfig;
use backsim_core::dynamics::{
    service_rate, step_coupled, GlobalParams, Process, QueueState, ResidualDiagnostics,
    RoutingMode, StepContext,
};
use backsim_core::engine::run_coupled;
use backsim_core::schedulers::{backpressure_weight, cooperative_schedule, ControlVector};
use backsim_core::stochastic::{
    draw_node_params, sample_poisson, sample_uniform, NodeParams, ParamRanges, Purpose, RngStream,
    StreamKey,
};
use backsim_core::topology::{uniform_routing, NodeId, Topology};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    /// Make the scheduler under test transmit on zero-weight ties.
    FlipTieBreak,
}

pub struct CheckResult {
    pub name: &'static str,
    pub pass: bool,
    pub detail: String,
}

pub fn run_all(trials: usize, seed: u64, fault: Option<Fault>) -> Vec<CheckResult> {
    vec![
        scheduler_oracle(trials, seed, fault),
        poisson_moments(seed),
        uniform_moments(seed),
        conservation(seed),
        residuals(seed),
    ]
}

/// Random DAG on n nodes: edges go to higher ids only, every non-sink has
/// an out-edge, the last node is the sink.
fn random_dag(rng: &mut RngStream, n: usize) -> Topology {
    let mut edges = Vec::new();
    for i in 0..n - 1 {
        let mut has_edge = false;
        for j in i + 1..n {
            if rng.next_f64() < 0.4 {
                edges.push((i as u32, j as u32));
                has_edge = true;
            }
        }
        if !has_edge {
            let j = i + 1 + (rng.next_u64() as usize % (n - i - 1));
            edges.push((i as u32, j as u32));
        }
    }
    Topology::from_edges(n, edges, [(n - 1) as u32]).expect("generated DAG is well-formed")
}

/// Cooperative scheduler vs exhaustive search over every schedule, on
/// random DAG instances with up to 12 nodes and queues in [0, 50).
pub fn scheduler_oracle(trials: usize, seed: u64, fault: Option<Fault>) -> CheckResult {
    let mut rng = RngStream::new(seed, StreamKey::new(0, 0, Purpose::ControlPick, 1));
    let global = GlobalParams::new(0.01, 0.7, 1.0).expect("valid params");
    let mut worst_rel = 0.0f64;
    for trial in 0..trials {
        let n = 4 + (rng.next_u64() as usize % 9); // 4..=12 nodes
        let topo = random_dag(&mut rng, n);
        let weights = uniform_routing(&topo);
        // Every tenth trial uses constant queues so zero-weight ties are
        // actually exercised.
        let tie_trial = trial % 10 == 9;
        let q: Vec<f64> = (0..n)
            .map(|i| {
                if topo.is_sink(i) {
                    0.0
                } else if tie_trial {
                    10.0
                } else {
                    rng.next_f64() * 50.0
                }
            })
            .collect();
        let state = QueueState { q, step: 0 };
        let params = NodeParams {
            lambda: vec![0.3; n],
            base_rate: (0..n).map(|_| 1.0 + 4.0 * rng.next_f64()).collect(),
        };

        // Candidate under test (optionally faulted).
        let candidate = match fault {
            None => cooperative_schedule(&state, &topo, &weights, &params, &global),
            Some(Fault::FlipTieBreak) => ControlVector::from_fn(&topo, |i| {
                backpressure_weight(NodeId(i as u32), &state, &topo, &weights, &params, &global)
                    >= 0.0
            }),
        };

        // Exhaustive search over the hypercube, computed from scratch.
        let mut best = f64::NEG_INFINITY;
        for mask in 0u64..(1 << n) {
            let mut objective = 0.0;
            for i in 0..n {
                if mask >> i & 1 == 0 || topo.is_sink(i) {
                    continue;
                }
                let deg = topo.out_neighbors(i).len() as f64;
                let mu = service_rate(params.base_rate[i], global.alpha, state.q[i]);
                for &j in topo.out_neighbors(i) {
                    objective += (state.q[i] - state.q[j.index()]) / deg * mu;
                }
            }
            if objective > best {
                best = objective;
            }
        }
        let candidate_objective: f64 = (0..n)
            .filter(|&i| candidate.is_on(i))
            .map(|i| backpressure_weight(NodeId(i as u32), &state, &topo, &weights, &params, &global))
            .sum();
        let rel = (candidate_objective - best).abs() / best.abs().max(1.0);
        worst_rel = worst_rel.max(rel);
        if rel > 1e-9 {
            return CheckResult {
                name: "scheduler-oracle",
                pass: false,
                detail: format!(
                    "trial {trial}: objective {candidate_objective} vs exhaustive {best}"
                ),
            };
        }

        // The canonical maximizer transmits exactly on positive weight.
        let canonical = cooperative_schedule(&state, &topo, &weights, &params, &global);
        if candidate != canonical {
            return CheckResult {
                name: "scheduler-oracle",
                pass: false,
                detail: format!("trial {trial}: schedule differs from the canonical tie-break"),
            };
        }
    }
    CheckResult {
        name: "scheduler-oracle",
        pass: true,
        detail: format!("{trials} trials, worst relative gap {worst_rel:.2e}"),
    }
}

fn poisson_moments(seed: u64) -> CheckResult {
    let draws = 200_000usize;
    let mut detail = String::new();
    for (idx, mean) in [0.1f64, 1.0, 10.0].into_iter().enumerate() {
        let mut stream = RngStream::new(seed, StreamKey::new(idx, 0, Purpose::Arrival, 2));
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for _ in 0..draws {
            let x = sample_poisson(&mut stream, mean).expect("valid mean") as f64;
            sum += x;
            sumsq += x * x;
        }
        let nf = draws as f64;
        let sample_mean = sum / nf;
        let sample_var = sumsq / nf - sample_mean * sample_mean;
        let se_mean = (mean / nf).sqrt();
        let se_var = ((2.0 * mean * mean + mean) / nf).sqrt();
        if (sample_mean - mean).abs() > 4.0 * se_mean {
            return CheckResult {
                name: "poisson-moments",
                pass: false,
                detail: format!("mean({mean}): sample mean {sample_mean} outside 4 SE"),
            };
        }
        if (sample_var - mean).abs() > 4.0 * se_var {
            return CheckResult {
                name: "poisson-moments",
                pass: false,
                detail: format!("mean({mean}): sample variance {sample_var} outside 4 SE"),
            };
        }
        detail.push_str(&format!("mean {mean}: ok; "));
    }
    CheckResult {
        name: "poisson-moments",
        pass: true,
        detail: format!("{draws} draws per mean, {detail}"),
    }
}

fn uniform_moments(seed: u64) -> CheckResult {
    let draws = 200_000usize;
    for (idx, (lo, hi)) in [(0.1f64, 0.5f64), (1.0, 5.0)].into_iter().enumerate() {
        let mut stream = RngStream::new(seed, StreamKey::new(idx, 1, Purpose::LambdaDraw, 3));
        let mut sum = 0.0;
        for _ in 0..draws {
            let x = sample_uniform(&mut stream, lo, hi).expect("valid bounds");
            if !(lo..hi).contains(&x) {
                return CheckResult {
                    name: "uniform-moments",
                    pass: false,
                    detail: format!("draw {x} outside [{lo}, {hi})"),
                };
            }
            sum += x;
        }
        let mean = sum / draws as f64;
        let expected = (lo + hi) / 2.0;
        let se = (hi - lo) / (12.0f64 * draws as f64).sqrt();
        if (mean - expected).abs() > 4.0 * se {
            return CheckResult {
                name: "uniform-moments",
                pass: false,
                detail: format!("U[{lo},{hi}): mean {mean} vs {expected} outside 4 SE"),
            };
        }
    }
    CheckResult {
        name: "uniform-moments",
        pass: true,
        detail: format!("{draws} draws per range, means within 4 SE"),
    }
}

fn conservation(seed: u64) -> CheckResult {
    let mut cfg = SimConfig::defaults(backsim_core::Mode::Coupled);
    cfg.rows = 6;
    cfg.cols = 6;
    cfg.steps = 300;
    cfg.beta = 0.0;
    cfg.seed = seed;
    cfg.routing = RoutingMode::SenderConserving;
    let traj = match run_coupled(&cfg) {
        Ok(t) => t,
        Err(e) => {
            return CheckResult {
                name: "conservation",
                pass: false,
                detail: format!("run failed: {e}"),
            }
        }
    };
    // Replay the arrivals independently to close the balance.
    let topo = backsim_core::topology::build_directed_grid(6, 6).expect("grid");
    let weights = uniform_routing(&topo);
    let params = draw_node_params(seed, 36, &cfg.ranges()).expect("ranges");
    let global = cfg.global_params();
    let ctx = StepContext {
        topo: &topo,
        weights: &weights,
        node_params: &params,
        global: &global,
        routing: cfg.routing,
    };
    let mut state = QueueState::zeros(36);
    let mut control = cooperative_schedule(&state, &topo, &weights, &params, &global);
    let mut arrivals = 0.0;
    for _ in 0..cfg.steps {
        let (next, flows) = step_coupled(&state, &control, &ctx, seed).expect("step");
        arrivals += flows.arrivals.iter().sum::<u64>() as f64;
        state = next;
        control = cooperative_schedule(&state, &topo, &weights, &params, &global);
    }
    let buffered: f64 = state.q.iter().sum();
    let err = (buffered + traj.final_throughput() - arrivals).abs();
    CheckResult {
        name: "conservation",
        pass: err <= 1e-6,
        detail: format!("|buffered + delivered - arrivals| = {err:.3e}"),
    }
}

fn residuals(seed: u64) -> CheckResult {
    // High starting queues keep every departure below availability, so
    // the compensators apply to untruncated Poisson counts.
    let topo = backsim_core::topology::build_directed_grid(5, 5).expect("grid");
    let weights = uniform_routing(&topo);
    let ranges = ParamRanges::new(0.1, 0.5, 1.0, 5.0).expect("ranges");
    let params = draw_node_params(seed ^ 0xA5A5, 25, &ranges).expect("params");
    let global = GlobalParams::new(0.01, 0.7, 1.0).expect("params");
    let ctx = StepContext {
        topo: &topo,
        weights: &weights,
        node_params: &params,
        global: &global,
        routing: RoutingMode::SenderConserving,
    };
    let mut state = QueueState {
        q: vec![1000.0; 25],
        step: 0,
    };
    state.q[24] = 0.0;
    let control = ControlVector::from_fn(&topo, |_| true);
    let mut diag = ResidualDiagnostics::new(25);
    let mut truncations = 0u64;
    for _ in 0..600 {
        let (next, flows) = step_coupled(&state, &control, &ctx, seed).expect("step");
        truncations += flows.truncation_events;
        diag.push(&state, &control, &flows, &ctx);
        state = next;
    }
    if truncations > 0 {
        return CheckResult {
            name: "residuals",
            pass: false,
            detail: format!("{truncations} truncation events; compensators do not apply"),
        };
    }
    let z_a = diag.across_node_z(Process::Arrival, &topo);
    let z_d = diag.across_node_z(Process::Departure, &topo);
    let z_f = diag.across_node_z(Process::Forward, &topo);
    let pass = z_a.abs() < 3.0 && z_d.abs() < 3.0 && z_f.abs() < 3.0;
    CheckResult {
        name: "residuals",
        pass,
        detail: format!("z_arrival {z_a:.2}, z_departure {z_d:.2}, z_forward {z_f:.2}"),
    }
}
