//! JSON summaries. The run summary embeds the fully-resolved config as a
//! string map; feeding that map back through the config parser reproduces
//! the run (and its CSV) exactly.

use std::path::Path;

use serde_json::{json, Map, Value};

use backsim_core::config::SimConfig;
use backsim_core::engine::{summarize, Comparison, Trajectory, SUMMARY_WINDOW};

fn config_object(cfg: &SimConfig) -> Value {
    let mut map = Map::new();
    for (key, value) in cfg.to_pairs() {
        map.insert(key, Value::String(value));
    }
    Value::Object(map)
}

fn option_f64(v: Option<f64>) -> Value {
    v.map(|x| json!(x)).unwrap_or(Value::Null)
}

pub fn run_summary_json(cfg: &SimConfig, traj: &Trajectory, wall_sec: f64, csv_path: &Path) -> String {
    let s = summarize(cfg.scheduler.as_str(), traj);
    let value = json!({
        "config": config_object(cfg),
        "steps_recorded": traj.records.len(),
        "final_mean_queue": s.final_mean_queue,
        "plateau": s.plateau,
        "stabilization_stat": option_f64(s.stabilization),
        "stabilization_window": SUMMARY_WINDOW,
        "sink_throughput": s.sink_throughput,
        "truncation_events": s.truncation_events,
        "residual_z_arrival": traj.residual_z_arrival,
        "residual_z_departure": traj.residual_z_departure,
        "wall_clock_sec": wall_sec,
        "trajectory_csv": csv_path.display().to_string(),
        "notes": "mean_queue/std_queue are cross-node statistics over non-sink nodes",
    });
    format!("{:#}\n", value)
}

pub fn comparison_json(runs: &[(String, SimConfig)], cmp: &Comparison, wall_sec: f64) -> String {
    let entries: Vec<Value> = runs
        .iter()
        .zip(&cmp.summaries)
        .map(|((label, cfg), s)| {
            json!({
                "label": label,
                "config": config_object(cfg),
                "final_mean_queue": s.final_mean_queue,
                "plateau": s.plateau,
                "stabilization_stat": option_f64(s.stabilization),
                "sink_throughput": s.sink_throughput,
                "truncation_events": s.truncation_events,
            })
        })
        .collect();
    let value = json!({
        "runs": entries,
        "stabilization_window": SUMMARY_WINDOW,
        "wall_clock_sec": wall_sec,
    });
    format!("{:#}\n", value)
}

/// Extract the embedded config map from a summary JSON document.
pub fn config_pairs_from_summary(text: &str) -> Result<Vec<(String, String)>, String> {
    let value: Value = serde_json::from_str(text).map_err(|e| e.to_string())?;
    let obj = value
        .get("config")
        .and_then(Value::as_object)
        .ok_or("summary has no `config` object")?;
    Ok(obj
        .iter()
        .map(|(k, v)| {
            (
                k.clone(),
                v.as_str().map(str::to_string).unwrap_or_else(|| v.to_string()),
            )
        })
        .collect())
}
