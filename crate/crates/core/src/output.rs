//! Bit-exact text output for trajectories and comparisons.
//!
//! Floating-point values are printed with 9 significant digits in
//! scientific notation, always with `.` as the decimal separator and LF
//! line endings, so equal trajectories serialize to byte-identical files
//! on any platform. The `mean_queue`/`std_queue` columns are cross-node
//! statistics over non-sink nodes (sink queues are pinned at zero and
//! would bias them).

use crate::engine::{Comparison, Trajectory};

/// 9 significant digits, locale-independent.
pub fn fmt_sig9(x: f64) -> String {
    format!("{x:.8e}")
}

/// Aggregate trajectory CSV: one header row, then one row per recorded
/// step, plus one `q<id>` column per recorded node when per-node
/// recording is on.
pub fn trajectory_csv(traj: &Trajectory) -> String {
    let mut text = String::from("step,mean_queue,std_queue,active_fraction,sink_throughput");
    for id in &traj.per_node_ids {
        text.push_str(&format!(",q{id}"));
    }
    text.push('\n');
    for r in &traj.records {
        text.push_str(&format!(
            "{},{},{},{},{}",
            r.step,
            fmt_sig9(r.mean_queue),
            fmt_sig9(r.std_queue),
            fmt_sig9(r.active_fraction),
            fmt_sig9(r.sink_throughput),
        ));
        for v in &r.per_node {
            text.push(',');
            text.push_str(&fmt_sig9(*v));
        }
        text.push('\n');
    }
    text
}

/// Comparison CSV: aligned mean-queue columns, one per run label.
pub fn comparison_csv(cmp: &Comparison) -> String {
    let mut text = String::from("step");
    for label in &cmp.labels {
        text.push_str(&format!(",mean_queue_{label}"));
    }
    text.push('\n');
    for (idx, step) in cmp.steps.iter().enumerate() {
        text.push_str(&step.to_string());
        for series in &cmp.mean_queues {
            text.push(',');
            text.push_str(&fmt_sig9(series[idx]));
        }
        text.push('\n');
    }
    text
}
