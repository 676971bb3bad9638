//! `backsim`: experiment harness for the backpressure scheduling
//! simulator.
//!
//! Subcommands: `simulate` (one run, CSV + JSON outputs), `compare`
//! (aligned runs), `validate` (built-in oracle checks), `topology` (dump
//! a grid edge list). The worker count is capped by the `SIM_THREADS`
//! environment variable; output is byte-identical for any value of it.

use backsim_cli::{checks, summary};

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use backsim_core::config::{parse_kv_text, SimConfig};
use backsim_core::engine::{self, compare_runs, summarize};
use backsim_core::output::{comparison_csv, trajectory_csv};
use backsim_core::topology::build_directed_grid;

#[derive(Parser)]
#[command(name = "backsim", version, about = "Backpressure scheduling simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one simulation; writes trajectory.csv and summary.json.
    Simulate(SimulateArgs),
    /// Run several configurations and write aligned mean-queue columns.
    Compare(CompareArgs),
    /// Run the built-in oracle checks; nonzero exit on any failure.
    Validate(ValidateArgs),
    /// Print a directed grid in edge-list form.
    Topology(TopologyArgs),
}

/// Flag overrides shared by simulate and compare; each maps onto one
/// config key and takes precedence over the config file.
#[derive(Args, Clone)]
struct Overrides {
    /// Master seed (default fixed, so runs reproduce).
    #[arg(long)]
    seed: Option<u64>,
    /// Engine: coupled or meanfield.
    #[arg(long)]
    mode: Option<String>,
    /// Scheduler: coop, br, mft, on or off.
    #[arg(long)]
    scheduler: Option<String>,
    /// Mean-field flow estimator: per-sample or ensemble-mean.
    #[arg(long)]
    estimator: Option<String>,
    /// Mean-field control rule: representative or majority.
    #[arg(long = "control-rule")]
    control_rule: Option<String>,
    /// Routing mode: sender-conserving or paper-literal.
    #[arg(long)]
    routing: Option<String>,
    /// Grid rows (coupled engine).
    #[arg(long)]
    rows: Option<usize>,
    /// Grid columns (coupled engine).
    #[arg(long)]
    cols: Option<usize>,
    /// Node count (mean-field engine).
    #[arg(long = "N")]
    n: Option<usize>,
    /// Steps to simulate.
    #[arg(long = "K")]
    k: Option<u64>,
    /// Ensemble samples per node.
    #[arg(long = "M")]
    m: Option<usize>,
    /// Record per-node queue columns (capped by per-node-limit).
    #[arg(long = "per-node")]
    per_node: bool,
    /// Load the coupled topology from an edge-list file.
    #[arg(long = "topology-file")]
    topology_file: Option<PathBuf>,
}

impl Overrides {
    fn pairs(&self) -> Vec<(String, String)> {
        let staged = [
            ("seed", self.seed.map(|v| v.to_string())),
            ("mode", self.mode.clone()),
            ("scheduler", self.scheduler.clone()),
            ("estimator", self.estimator.clone()),
            ("control-rule", self.control_rule.clone()),
            ("routing", self.routing.clone()),
            ("rows", self.rows.map(|v| v.to_string())),
            ("cols", self.cols.map(|v| v.to_string())),
            ("N", self.n.map(|v| v.to_string())),
            ("K", self.k.map(|v| v.to_string())),
            ("M", self.m.map(|v| v.to_string())),
            ("per-node", self.per_node.then(|| "true".to_string())),
            (
                "topology-file",
                self.topology_file
                    .as_ref()
                    .map(|p| p.to_string_lossy().into_owned()),
            ),
        ];
        staged
            .into_iter()
            .filter_map(|(k, v)| v.map(|v| (k.to_string(), v)))
            .collect()
    }
}

#[derive(Args)]
struct SimulateArgs {
    /// Config file (flat `key = value` lines); flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    over: Overrides,
    /// Directory for trajectory.csv and summary.json.
    #[arg(long = "out-dir", default_value = "out")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct CompareArgs {
    /// Config file; repeat the flag to compare several files.
    #[arg(long = "config")]
    configs: Vec<PathBuf>,
    /// Compare these schedulers on the shared base config.
    #[arg(long, value_delimiter = ',')]
    schedulers: Vec<String>,
    #[command(flatten)]
    over: Overrides,
    /// Directory for compare.csv and compare_summary.json.
    #[arg(long = "out-dir", default_value = "out")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct ValidateArgs {
    /// Trials for the scheduler oracle check.
    #[arg(long, default_value_t = 100)]
    trials: usize,
    /// Master seed for the checks.
    #[arg(long, default_value_t = backsim_core::DEFAULT_SEED)]
    seed: u64,
    /// Test hook: inject a known fault so the checks must fail.
    #[arg(long = "inject-fault", hide = true)]
    inject_fault: Option<String>,
}

#[derive(Args)]
struct TopologyArgs {
    #[arg(long, default_value_t = 10)]
    rows: usize,
    #[arg(long, default_value_t = 10)]
    cols: usize,
    /// Write to a file instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    init_thread_pool();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(args) => simulate(args),
        Command::Compare(args) => compare(args),
        Command::Validate(args) => return validate(args),
        Command::Topology(args) => topology(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

/// Cap the worker pool from SIM_THREADS. Results never depend on the
/// worker count; the cap only bounds CPU use.
fn init_thread_pool() {
    if let Ok(raw) = std::env::var("SIM_THREADS") {
        match raw.parse::<usize>() {
            Ok(n) if n >= 1 => {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
            _ => eprintln!("warning: ignoring invalid SIM_THREADS value `{raw}`"),
        }
    }
}

type CliError = Box<dyn std::error::Error>;

fn load_config(file: Option<&Path>, over: &Overrides) -> Result<SimConfig, CliError> {
    let mut pairs: Vec<(String, String)> = Vec::new();
    if let Some(path) = file {
        let text = fs::read_to_string(path)
            .map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
        pairs.extend(parse_kv_text(&text)?);
    }
    pairs.extend(over.pairs());
    Ok(SimConfig::from_pairs(
        pairs.iter().map(|(k, v)| (k.as_str(), v.as_str())),
    )?)
}

fn simulate(args: SimulateArgs) -> Result<(), CliError> {
    let cfg = load_config(args.config.as_deref(), &args.over)?;
    let started = Instant::now();
    let traj = engine::run(&cfg)?;
    let wall = started.elapsed().as_secs_f64();

    fs::create_dir_all(&args.out_dir)?;
    let csv_path = args.out_dir.join("trajectory.csv");
    fs::write(&csv_path, trajectory_csv(&traj))?;
    let summary_path = args.out_dir.join("summary.json");
    fs::write(
        &summary_path,
        summary::run_summary_json(&cfg, &traj, wall, &csv_path),
    )?;

    let s = summarize(cfg.scheduler.as_str(), &traj);
    println!("wrote {}", csv_path.display());
    println!("wrote {}", summary_path.display());
    println!(
        "final mean queue {:.6}, plateau {:.6}, stabilization {}, truncations {}",
        s.final_mean_queue,
        s.plateau,
        s.stabilization
            .map(|v| format!("{v:.6}"))
            .unwrap_or_else(|| "n/a".into()),
        s.truncation_events,
    );
    Ok(())
}

fn compare(args: CompareArgs) -> Result<(), CliError> {
    let mut runs: Vec<(String, SimConfig)> = Vec::new();
    if !args.schedulers.is_empty() {
        if args.configs.len() > 1 {
            return Err("--schedulers takes at most one base --config".into());
        }
        for s in &args.schedulers {
            let mut over = args.over.clone();
            over.scheduler = Some(s.clone());
            runs.push((s.clone(), load_config(args.configs.first().map(|p| p.as_path()), &over)?));
        }
    } else {
        for path in &args.configs {
            let label = path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| path.display().to_string());
            runs.push((label, load_config(Some(path), &args.over)?));
        }
    }
    if runs.len() < 2 {
        return Err("compare needs at least two runs (use --schedulers or repeat --config)".into());
    }

    let started = Instant::now();
    let cmp = compare_runs(&runs)?;
    let wall = started.elapsed().as_secs_f64();

    fs::create_dir_all(&args.out_dir)?;
    let csv_path = args.out_dir.join("compare.csv");
    fs::write(&csv_path, comparison_csv(&cmp))?;
    let summary_path = args.out_dir.join("compare_summary.json");
    fs::write(&summary_path, summary::comparison_json(&runs, &cmp, wall))?;

    println!("wrote {}", csv_path.display());
    println!("wrote {}", summary_path.display());
    for s in &cmp.summaries {
        println!(
            "{}: final mean queue {:.6}, plateau {:.6}, stabilization {}, throughput {:.3}",
            s.label,
            s.final_mean_queue,
            s.plateau,
            s.stabilization
                .map(|v| format!("{v:.6}"))
                .unwrap_or_else(|| "n/a".into()),
            s.sink_throughput,
        );
    }
    Ok(())
}

fn validate(args: ValidateArgs) -> ExitCode {
    let fault = match args.inject_fault.as_deref() {
        None => None,
        Some("tie-break") => Some(checks::Fault::FlipTieBreak),
        Some(other) => {
            eprintln!("error: unknown fault `{other}` (expected tie-break)");
            return ExitCode::FAILURE;
        }
    };
    let results = checks::run_all(args.trials, args.seed, fault);
    let mut all_pass = true;
    for r in &results {
        println!(
            "check {}: {} ({})",
            r.name,
            if r.pass { "PASS" } else { "FAIL" },
            r.detail
        );
        all_pass &= r.pass;
    }
    if all_pass {
        println!("all {} checks passed", results.len());
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn topology(args: TopologyArgs) -> Result<(), CliError> {
    let topo = build_directed_grid(args.rows, args.cols)?;
    let text = topo.to_edge_list_text();
    match args.out {
        Some(path) => {
            fs::write(&path, text)?;
            println!("wrote {}", path.display());
        }
        None => print!("{text}"),
    }
    Ok(())
}
