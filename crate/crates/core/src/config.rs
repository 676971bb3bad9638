//! Run configuration: the flat `key = value` text format, defaults,
//! validation and the canonical key set shared by config files, CLI flag
//! overrides and summary echoes.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::dynamics::{GlobalParams, RoutingMode};
use crate::meanfield::{ControlRule, EstimatorMode};
use crate::schedulers::SchedulerKind;
use crate::stochastic::ParamRanges;

/// Master seed used when none is given, so default runs reproduce.
pub const DEFAULT_SEED: u64 = 0xBACC_5EED;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("missing required key `mode` (coupled or meanfield)")]
    MissingMode,
    #[error("unknown config key `{key}`")]
    UnknownKey { key: String },
    #[error("invalid value for `{key}`: `{value}` ({reason})")]
    InvalidValue {
        key: String,
        value: String,
        reason: String,
    },
    #[error("`{key}` out of range: {value} (expected {expected})")]
    OutOfRange {
        key: String,
        value: String,
        expected: String,
    },
    #[error("config line {line}: {reason}")]
    Line { line: usize, reason: String },
    #[error("{0}")]
    Conflict(String),
}

/// Which engine a run uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Coupled,
    MeanField,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Coupled => "coupled",
            Mode::MeanField => "meanfield",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "coupled" => Ok(Mode::Coupled),
            "meanfield" => Ok(Mode::MeanField),
            other => Err(format!(
                "unknown mode `{other}` (expected coupled or meanfield)"
            )),
        }
    }
}

/// Fully-resolved run configuration. Defaults mirror the reference
/// parameter table: a 10x10 grid, K = 1000 unit steps, M = 100 samples,
/// arrival rates U[0.1, 0.5), base service rates U[1, 5), alpha = 0.01,
/// beta = 0.7.
#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub mode: Mode,
    pub rows: usize,
    pub cols: usize,
    /// Node count for the mean-field engine; defaults to rows * cols.
    pub n: Option<usize>,
    /// Steps to simulate (K).
    pub steps: u64,
    pub dt: f64,
    /// Ensemble samples per node (M).
    pub samples: usize,
    pub scheduler: SchedulerKind,
    pub estimator: EstimatorMode,
    pub control_rule: ControlRule,
    pub routing: RoutingMode,
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub m_min: f64,
    pub m_max: f64,
    pub alpha: f64,
    pub beta: f64,
    pub seed: u64,
    pub per_node: bool,
    pub per_node_limit: usize,
    pub topology_file: Option<String>,
}

impl SimConfig {
    /// Table defaults with the given mode; the scheduler defaults to the
    /// cooperative policy for the coupled engine and the threshold rule
    /// for the ensemble engine.
    pub fn defaults(mode: Mode) -> Self {
        Self {
            mode,
            rows: 10,
            cols: 10,
            n: None,
            steps: 1000,
            dt: 1.0,
            samples: 100,
            scheduler: match mode {
                Mode::Coupled => SchedulerKind::CooperativeBp,
                Mode::MeanField => SchedulerKind::MeanFieldThreshold,
            },
            estimator: EstimatorMode::PerSample,
            control_rule: ControlRule::RandomRepresentative,
            routing: RoutingMode::SenderConserving,
            lambda_min: 0.1,
            lambda_max: 0.5,
            m_min: 1.0,
            m_max: 5.0,
            alpha: 0.01,
            beta: 0.7,
            seed: DEFAULT_SEED,
            per_node: false,
            per_node_limit: 1000,
            topology_file: None,
        }
    }

    pub fn ranges(&self) -> ParamRanges {
        ParamRanges {
            lambda_min: self.lambda_min,
            lambda_max: self.lambda_max,
            m_min: self.m_min,
            m_max: self.m_max,
        }
    }

    pub fn global_params(&self) -> GlobalParams {
        GlobalParams {
            alpha: self.alpha,
            beta: self.beta,
            dt: self.dt,
        }
    }

    /// Node count of the run (for the coupled engine, the grid size; an
    /// explicit topology file may override it at build time).
    pub fn node_count(&self) -> usize {
        self.n.unwrap_or(self.rows * self.cols)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let range_err = |key: &str, value: f64, expected: &str| ConfigError::OutOfRange {
            key: key.into(),
            value: value.to_string(),
            expected: expected.into(),
        };
        if !self.alpha.is_finite() || !(0.0..=1.0).contains(&self.alpha) {
            return Err(range_err("alpha", self.alpha, "[0, 1]"));
        }
        if !self.beta.is_finite() || !(0.0..=1.0).contains(&self.beta) {
            return Err(range_err("beta", self.beta, "[0, 1]"));
        }
        if !self.dt.is_finite() || self.dt <= 0.0 {
            return Err(range_err("dt", self.dt, "> 0"));
        }
        if !self.lambda_min.is_finite() || self.lambda_min < 0.0 || self.lambda_min > self.lambda_max {
            return Err(range_err(
                "lambda-min",
                self.lambda_min,
                "0 <= lambda-min <= lambda-max",
            ));
        }
        if !self.lambda_max.is_finite() {
            return Err(range_err("lambda-max", self.lambda_max, "finite"));
        }
        if !self.m_min.is_finite() || self.m_min < 0.0 || self.m_min > self.m_max {
            return Err(range_err("m-min", self.m_min, "0 <= m-min <= m-max"));
        }
        if !self.m_max.is_finite() || self.m_max > crate::stochastic::MAX_BASE_RATE {
            return Err(range_err(
                "m-max",
                self.m_max,
                &format!("<= {}", crate::stochastic::MAX_BASE_RATE),
            ));
        }
        match self.mode {
            Mode::Coupled => {
                if self.n.is_some() {
                    return Err(ConfigError::Conflict(
                        "key `N` sets the mean-field node count; the coupled engine takes \
                         rows/cols or a topology file"
                            .into(),
                    ));
                }
                if self.topology_file.is_none() && (self.rows * self.cols) < 2 {
                    return Err(ConfigError::Conflict(format!(
                        "coupled grid needs at least 2 nodes, got {} x {}",
                        self.rows, self.cols
                    )));
                }
                if self.scheduler == SchedulerKind::MeanFieldThreshold {
                    return Err(ConfigError::Conflict(
                        "scheduler `mft` needs mode=meanfield (it reads the ensemble mean)".into(),
                    ));
                }
            }
            Mode::MeanField => {
                if self.samples == 0 {
                    return Err(ConfigError::Conflict(
                        "mean-field mode needs M >= 1 samples".into(),
                    ));
                }
                if self.node_count() == 0 {
                    return Err(ConfigError::Conflict(
                        "mean-field mode needs at least one node".into(),
                    ));
                }
                if matches!(
                    self.scheduler,
                    SchedulerKind::CooperativeBp | SchedulerKind::BestResponseBp
                ) {
                    return Err(ConfigError::Conflict(format!(
                        "scheduler `{}` reads neighbor queues and needs mode=coupled",
                        self.scheduler
                    )));
                }
                if self.topology_file.is_some() {
                    return Err(ConfigError::Conflict(
                        "topology-file applies to the coupled engine only".into(),
                    ));
                }
            }
        }
        if self.per_node && self.per_node_limit == 0 {
            return Err(ConfigError::Conflict(
                "per-node recording needs per-node-limit >= 1".into(),
            ));
        }
        Ok(())
    }

    /// Build a validated config from ordered key-value pairs; later pairs
    /// override earlier ones, so flag overrides append after file pairs.
    pub fn from_pairs<'a>(
        pairs: impl IntoIterator<Item = (&'a str, &'a str)>,
    ) -> Result<Self, ConfigError> {
        let mut mode: Option<Mode> = None;
        let mut scheduler: Option<SchedulerKind> = None;
        let mut staged: Vec<(String, String)> = Vec::new();
        for (key, value) in pairs {
            match key {
                "mode" => mode = Some(parse_value(key, value)?),
                "scheduler" => scheduler = Some(parse_value(key, value)?),
                _ => staged.push((key.to_string(), value.to_string())),
            }
        }
        let mode = mode.ok_or(ConfigError::MissingMode)?;
        let mut cfg = Self::defaults(mode);
        if let Some(s) = scheduler {
            cfg.scheduler = s;
        }
        for (key, value) in &staged {
            cfg.apply(key, value)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn apply(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        match key {
            "rows" => self.rows = parse_value(key, value)?,
            "cols" => self.cols = parse_value(key, value)?,
            "N" => self.n = Some(parse_value(key, value)?),
            "K" => self.steps = parse_value(key, value)?,
            "dt" => self.dt = parse_value(key, value)?,
            "M" => self.samples = parse_value(key, value)?,
            "estimator" => self.estimator = parse_value(key, value)?,
            "control-rule" => self.control_rule = parse_value(key, value)?,
            "routing" => self.routing = parse_value(key, value)?,
            "lambda-min" => self.lambda_min = parse_value(key, value)?,
            "lambda-max" => self.lambda_max = parse_value(key, value)?,
            "m-min" => self.m_min = parse_value(key, value)?,
            "m-max" => self.m_max = parse_value(key, value)?,
            "alpha" => self.alpha = parse_value(key, value)?,
            "beta" => self.beta = parse_value(key, value)?,
            "seed" => self.seed = parse_value(key, value)?,
            "per-node" => self.per_node = parse_value(key, value)?,
            "per-node-limit" => self.per_node_limit = parse_value(key, value)?,
            "topology-file" => self.topology_file = Some(value.to_string()),
            other => {
                return Err(ConfigError::UnknownKey {
                    key: other.to_string(),
                })
            }
        }
        Ok(())
    }

    /// The fully-resolved configuration as canonical key-value pairs;
    /// feeding them back through [`SimConfig::from_pairs`] reproduces the
    /// config exactly.
    pub fn to_pairs(&self) -> Vec<(String, String)> {
        let mut pairs = vec![
            ("mode".into(), self.mode.to_string()),
            ("rows".into(), self.rows.to_string()),
            ("cols".into(), self.cols.to_string()),
        ];
        if let Some(n) = self.n {
            pairs.push(("N".into(), n.to_string()));
        }
        pairs.extend([
            ("K".into(), self.steps.to_string()),
            ("dt".into(), self.dt.to_string()),
            ("M".into(), self.samples.to_string()),
            ("scheduler".into(), self.scheduler.to_string()),
            ("estimator".into(), self.estimator.to_string()),
            ("control-rule".into(), self.control_rule.to_string()),
            ("routing".into(), self.routing.to_string()),
            ("lambda-min".into(), self.lambda_min.to_string()),
            ("lambda-max".into(), self.lambda_max.to_string()),
            ("m-min".into(), self.m_min.to_string()),
            ("m-max".into(), self.m_max.to_string()),
            ("alpha".into(), self.alpha.to_string()),
            ("beta".into(), self.beta.to_string()),
            ("seed".into(), self.seed.to_string()),
            ("per-node".into(), self.per_node.to_string()),
            ("per-node-limit".into(), self.per_node_limit.to_string()),
        ]);
        if let Some(path) = &self.topology_file {
            pairs.push(("topology-file".into(), path.clone()));
        }
        pairs
    }
}

fn parse_value<T>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T: FromStr,
    T::Err: fmt::Display,
{
    value.parse().map_err(|e: T::Err| ConfigError::InvalidValue {
        key: key.to_string(),
        value: value.to_string(),
        reason: e.to_string(),
    })
}

/// Parse the flat config text: one `key = value` per line, `#` starts a
/// comment, blank lines ignored.
pub fn parse_kv_text(text: &str) -> Result<Vec<(String, String)>, ConfigError> {
    let mut pairs = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| ConfigError::Line {
            line: idx + 1,
            reason: format!("expected `key = value`, got `{line}`"),
        })?;
        let key = key.trim();
        let value = value.trim();
        if key.is_empty() || value.is_empty() {
            return Err(ConfigError::Line {
                line: idx + 1,
                reason: "empty key or value".into(),
            });
        }
        pairs.push((key.to_string(), value.to_string()));
    }
    Ok(pairs)
}
