//! Browser bindings: run the simulator in the page and hand trajectories
//! back as typed arrays for plotting. Everything is single-threaded here
//! (the core's `parallel` feature is off), and the same seed gives the
//! same curves as the native CLI.

use wasm_bindgen::prelude::*;

use backsim_core::config::{Mode, SimConfig};
use backsim_core::engine;

#[allow(clippy::too_many_arguments)]
fn meanfield_config(
    nodes: u32,
    samples: u32,
    steps: u32,
    alpha: f64,
    beta: f64,
    lambda_min: f64,
    lambda_max: f64,
    m_min: f64,
    m_max: f64,
    seed: u32,
    estimator: &str,
    control_rule: &str,
) -> Result<SimConfig, String> {
    let mut cfg = SimConfig::defaults(Mode::MeanField);
    cfg.n = Some(nodes as usize);
    cfg.samples = samples as usize;
    cfg.steps = steps as u64;
    cfg.alpha = alpha;
    cfg.beta = beta;
    cfg.lambda_min = lambda_min;
    cfg.lambda_max = lambda_max;
    cfg.m_min = m_min;
    cfg.m_max = m_max;
    cfg.seed = seed as u64;
    cfg.estimator = estimator.parse()?;
    cfg.control_rule = control_rule.parse()?;
    cfg.validate().map_err(|e| e.to_string())?;
    Ok(cfg)
}

#[allow(clippy::too_many_arguments)]
fn coupled_config(
    rows: u32,
    cols: u32,
    steps: u32,
    scheduler: &str,
    routing: &str,
    alpha: f64,
    beta: f64,
    seed: u32,
) -> Result<SimConfig, String> {
    let mut cfg = SimConfig::defaults(Mode::Coupled);
    cfg.rows = rows as usize;
    cfg.cols = cols as usize;
    cfg.steps = steps as u64;
    cfg.alpha = alpha;
    cfg.beta = beta;
    cfg.seed = seed as u64;
    cfg.scheduler = scheduler.parse()?;
    cfg.routing = routing.parse()?;
    cfg.validate().map_err(|e| e.to_string())?;
    Ok(cfg)
}

#[allow(clippy::too_many_arguments)]
fn meanfield_series_impl(
    nodes: u32,
    samples: u32,
    steps: u32,
    alpha: f64,
    beta: f64,
    lambda_min: f64,
    lambda_max: f64,
    m_min: f64,
    m_max: f64,
    seed: u32,
    estimator: &str,
    control_rule: &str,
) -> Result<Vec<f64>, String> {
    let cfg = meanfield_config(
        nodes, samples, steps, alpha, beta, lambda_min, lambda_max, m_min, m_max, seed, estimator,
        control_rule,
    )?;
    let traj = engine::run(&cfg).map_err(|e| e.to_string())?;
    Ok(traj.mean_queue_series())
}

#[allow(clippy::too_many_arguments)]
fn coupled_series_impl(
    rows: u32,
    cols: u32,
    steps: u32,
    scheduler: &str,
    routing: &str,
    alpha: f64,
    beta: f64,
    seed: u32,
) -> Result<Vec<f64>, String> {
    let cfg = coupled_config(rows, cols, steps, scheduler, routing, alpha, beta, seed)?;
    let traj = engine::run(&cfg).map_err(|e| e.to_string())?;
    Ok(traj.mean_queue_series())
}

#[allow(clippy::too_many_arguments)]
fn grid_final_queues_impl(
    rows: u32,
    cols: u32,
    steps: u32,
    scheduler: &str,
    routing: &str,
    alpha: f64,
    beta: f64,
    seed: u32,
) -> Result<Vec<f64>, String> {
    let mut cfg = coupled_config(rows, cols, steps, scheduler, routing, alpha, beta, seed)?;
    cfg.per_node = true;
    cfg.per_node_limit = (rows * cols) as usize;
    let traj = engine::run(&cfg).map_err(|e| e.to_string())?;
    Ok(traj
        .records
        .last()
        .map(|r| r.per_node.clone())
        .unwrap_or_default())
}

/// Cross-node mean queue of a mean-field ensemble run, one value per step
/// (steps + 1 values).
#[wasm_bindgen]
#[allow(clippy::too_many_arguments)]
pub fn meanfield_series(
    nodes: u32,
    samples: u32,
    steps: u32,
    alpha: f64,
    beta: f64,
    lambda_min: f64,
    lambda_max: f64,
    m_min: f64,
    m_max: f64,
    seed: u32,
    estimator: &str,
    control_rule: &str,
) -> Result<Vec<f64>, JsError> {
    meanfield_series_impl(
        nodes, samples, steps, alpha, beta, lambda_min, lambda_max, m_min, m_max, seed, estimator,
        control_rule,
    )
    .map_err(|e| JsError::new(&e))
}

/// Cross-node mean queue of a coupled grid run under the chosen
/// scheduler.
#[wasm_bindgen]
#[allow(clippy::too_many_arguments)]
pub fn coupled_series(
    rows: u32,
    cols: u32,
    steps: u32,
    scheduler: &str,
    routing: &str,
    alpha: f64,
    beta: f64,
    seed: u32,
) -> Result<Vec<f64>, JsError> {
    coupled_series_impl(rows, cols, steps, scheduler, routing, alpha, beta, seed)
        .map_err(|e| JsError::new(&e))
}

/// Final per-node queues of a coupled grid run, row-major, for the
/// heatmap (rows * cols values).
#[wasm_bindgen]
#[allow(clippy::too_many_arguments)]
pub fn grid_final_queues(
    rows: u32,
    cols: u32,
    steps: u32,
    scheduler: &str,
    routing: &str,
    alpha: f64,
    beta: f64,
    seed: u32,
) -> Result<Vec<f64>, JsError> {
    grid_final_queues_impl(rows, cols, steps, scheduler, routing, alpha, beta, seed)
        .map_err(|e| JsError::new(&e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn series_lengths_match_steps() {
        let series = meanfield_series_impl(
            20, 10, 50, 0.01, 0.7, 0.1, 0.5, 1.0, 5.0, 7, "per-sample", "representative",
        )
        .unwrap();
        assert_eq!(series.len(), 51);
        let grid =
            grid_final_queues_impl(4, 4, 30, "coop", "sender-conserving", 0.01, 0.7, 7).unwrap();
        assert_eq!(grid.len(), 16);
    }

    #[test]
    fn bad_inputs_surface_as_errors() {
        assert!(meanfield_series_impl(
            20, 10, 50, 0.01, 1.7, 0.1, 0.5, 1.0, 5.0, 7, "per-sample", "representative"
        )
        .is_err());
        assert!(coupled_series_impl(4, 4, 30, "nope", "sender-conserving", 0.01, 0.7, 7).is_err());
    }
}
