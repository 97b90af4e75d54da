//! Experiment configuration and the self-contained result record.
//!
//! A configuration is one flat JSON object. Unset optional fields fall back to
//! per-experiment defaults, see the `*_values` accessors.

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::channel::MAX_FIRST_ORDER_STEP;
use crate::fock::DEFAULT_TAIL_TOL;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    ChannelCheck,
    Stationarity,
    EnergyLagrangian,
    Minimality,
    Boundary,
    Benchmark,
    Search,
}

impl Experiment {
    pub const ALL: [Experiment; 7] = [
        Experiment::ChannelCheck,
        Experiment::Stationarity,
        Experiment::EnergyLagrangian,
        Experiment::Minimality,
        Experiment::Boundary,
        Experiment::Benchmark,
        Experiment::Search,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Experiment::ChannelCheck => "channel-check",
            Experiment::Stationarity => "stationarity",
            Experiment::EnergyLagrangian => "energy-lagrangian",
            Experiment::Minimality => "minimality",
            Experiment::Boundary => "boundary",
            Experiment::Benchmark => "benchmark",
            Experiment::Search => "search",
        }
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Experiment {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Experiment::ALL
            .into_iter()
            .find(|e| e.name() == s)
            .ok_or_else(|| format!("unknown experiment `{s}`"))
    }
}

/// Tolerance names accepted in the `tolerances` map, with defaults.
pub const TOLERANCE_DEFAULTS: [(&str, f64); 5] = [
    ("violation_margin", 1e-6),
    ("grad_tol", 1e-9),
    ("entropy_tol", 1e-10),
    ("tol_second_order", 1e-8),
    ("ratio_spread", 0.1),
];

fn default_gamma() -> f64 {
    1.0
}
fn default_seeds() -> usize {
    50
}
fn default_output_dir() -> PathBuf {
    PathBuf::from("results")
}
fn default_tail_tol() -> f64 {
    DEFAULT_TAIL_TOL
}
fn default_steps() -> usize {
    8
}
fn default_nodes() -> usize {
    crate::channel::DEFAULT_QUADRATURE_NODES
}
fn default_max_iters() -> usize {
    500
}
fn default_trials() -> usize {
    200
}
fn default_t_step() -> f64 {
    1e-4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d: Option<usize>,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt_list: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta_e: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s0_list: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta_list: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon_list: Option<Vec<f64>>,
    #[serde(default = "default_seeds")]
    pub seeds: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub master_seed: Option<u64>,
    #[serde(default)]
    pub seed_start: u64,
    #[serde(default)]
    pub tolerances: BTreeMap<String, f64>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default = "default_tail_tol")]
    pub tail_tol: f64,
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default = "default_nodes")]
    pub quadrature_nodes: usize,
    #[serde(default)]
    pub allow_large_step: bool,
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default = "default_t_step")]
    pub t_step: f64,
}

/// One violated constraint, tied to the offending field.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfigIssue {
    pub field: String,
    pub message: String,
}

impl fmt::Display for ConfigIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

impl ExperimentConfig {
    /// All defaults for `experiment`.
    pub fn new(experiment: Experiment) -> Self {
        serde_json::from_value(serde_json::json!({ "experiment": experiment })).expect("defaults parse")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Working dimension; defaults keep the default state families' tails
    /// below the default tail tolerance.
    pub fn dim(&self) -> usize {
        self.d.unwrap_or(match self.experiment {
            Experiment::ChannelCheck | Experiment::Stationarity | Experiment::Benchmark => 40,
            Experiment::EnergyLagrangian | Experiment::Minimality => 30,
            Experiment::Boundary | Experiment::Search => 12,
        })
    }

    pub fn dt_values(&self) -> Vec<f64> {
        if let Some(list) = &self.dt_list {
            return list.clone();
        }
        match (self.dt, self.experiment) {
            (Some(dt), _) => vec![dt],
            (None, Experiment::Boundary) => vec![1e-3, 1e-4, 1e-5],
            (None, Experiment::Stationarity) => vec![1e-3, 5e-4],
            (None, _) => vec![1e-3],
        }
    }

    pub fn s0_values(&self) -> Vec<f64> {
        if let Some(list) = &self.s0_list {
            return list.clone();
        }
        match self.s0 {
            Some(s0) => vec![s0],
            None => vec![0.2, 0.5, 1.0],
        }
    }

    pub fn beta_values(&self) -> Vec<f64> {
        self.beta_list.clone().unwrap_or_else(|| match self.experiment {
            Experiment::Stationarity => vec![1.0],
            _ => vec![0.5, 1.0, 2.0],
        })
    }

    pub fn epsilon_values(&self) -> Vec<f64> {
        self.epsilon_list.clone().unwrap_or_else(|| vec![1e-3, 1e-5, 1e-7])
    }

    pub fn delta_e_value(&self) -> f64 {
        self.delta_e.unwrap_or(0.3)
    }

    /// Named tolerance, falling back to [`TOLERANCE_DEFAULTS`].
    pub fn tolerance(&self, name: &str) -> f64 {
        self.tolerances.get(name).copied().unwrap_or_else(|| {
            TOLERANCE_DEFAULTS
                .iter()
                .find(|(n, _)| *n == name)
                .map(|(_, v)| *v)
                .unwrap_or_else(|| panic!("no default for tolerance `{name}`"))
        })
    }

    /// Every violated constraint; empty means valid.
    pub fn validate(&self) -> Vec<ConfigIssue> {
        let mut issues = Vec::new();
        let mut push = |field: &str, message: String| {
            issues.push(ConfigIssue {
                field: field.to_string(),
                message,
            })
        };
        let d = self.dim();
        if d < 2 {
            push("d", format!("need d >= 2, got {d}"));
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            push("gamma", format!("must be positive, got {}", self.gamma));
        }
        if self.dt.is_some() && self.dt_list.is_some() {
            push("dt", "set either dt or dt_list, not both".to_string());
        }
        if self.s0.is_some() && self.s0_list.is_some() {
            push("s0", "set either s0 or s0_list, not both".to_string());
        }
        let dts = self.dt_values();
        if dts.is_empty() {
            push("dt_list", "empty".to_string());
        }
        for &dt in &dts {
            if !(dt >= 0.0 && dt.is_finite()) {
                push("dt", format!("must be non-negative, got {dt}"));
            } else if !self.allow_large_step && self.gamma * dt > MAX_FIRST_ORDER_STEP {
                push(
                    "dt",
                    format!(
                        "gamma*dt = {} exceeds {MAX_FIRST_ORDER_STEP}, outside first-order validity (set allow_large_step to override)",
                        self.gamma * dt
                    ),
                );
            }
        }
        if self.experiment == Experiment::Boundary {
            if dts.windows(2).any(|w| !(w[1] < w[0])) || dts.len() < 3 {
                push("dt_list", "need at least 3 strictly decreasing values".to_string());
            } else if dts[0] / dts[dts.len() - 1] < 100.0 * (1.0 - 1e-12) {
                push("dt_list", "values must span at least two decades".to_string());
            }
            if dts.contains(&0.0) {
                push("dt_list", "values must be positive".to_string());
            }
        }
        let max = (d.max(1) as f64).ln();
        for s0 in self.s0_values() {
            if s0 >= max {
                push("s0", format!("s0 = {s0} exceeds max entropy ln d = {max:.6}"));
            } else if !(s0 > 0.0) {
                push("s0", format!("must be positive, got {s0}"));
            }
        }
        if self.beta_values().iter().any(|b| !(*b > 0.0)) {
            push("beta_list", "values must be positive".to_string());
        }
        if self.epsilon_values().iter().any(|e| !(*e > 0.0 && *e <= 1.0)) {
            push("epsilon_list", "values must lie in (0, 1]".to_string());
        }
        if let Some(de) = self.delta_e {
            if !(de >= 0.0 && de.is_finite()) {
                push("delta_e", format!("must be non-negative, got {de}"));
            }
        }
        if self.experiment == Experiment::Search && self.seeds == 0 {
            push("seeds", "need at least one seed".to_string());
        }
        if !(self.tail_tol > 0.0) {
            push("tail_tol", format!("must be positive, got {}", self.tail_tol));
        }
        if self.steps == 0 {
            push("steps", "need at least one integrator step".to_string());
        }
        if self.quadrature_nodes == 0 {
            push("quadrature_nodes", "need at least one node".to_string());
        }
        if self.max_iters == 0 {
            push("max_iters", "need at least one iteration".to_string());
        }
        if self.experiment == Experiment::Minimality {
            if self.trials == 0 {
                push("trials", "need at least one trial".to_string());
            }
            if !(self.t_step > 0.0 && self.t_step < 0.5) {
                push("t_step", format!("must lie in (0, 0.5), got {}", self.t_step));
            }
        }
        for (name, value) in &self.tolerances {
            if !TOLERANCE_DEFAULTS.iter().any(|(n, _)| n == name) {
                push("tolerances", format!("unknown tolerance `{name}`"));
            } else if name != "violation_margin" && !(*value > 0.0) {
                push("tolerances", format!("`{name}` must be positive, got {value}"));
            } else if !value.is_finite() {
                push("tolerances", format!("`{name}` must be finite"));
            }
        }
        issues
    }
}

/// Population tails and renormalization drifts observed during a run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TruncationDiagnostics {
    pub tail_tol: f64,
    pub tail_populations: Vec<f64>,
    pub renormalization_drifts: Vec<f64>,
}

impl TruncationDiagnostics {
    pub fn new(tail_tol: f64) -> Self {
        TruncationDiagnostics {
            tail_tol,
            ..Default::default()
        }
    }

    pub fn max_tail(&self) -> f64 {
        self.tail_populations.iter().cloned().fold(0.0, f64::max)
    }
}

/// Self-contained record of one run: together with the binary of the same
/// version, `config` reproduces it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub tool: String,
    pub version: String,
    pub experiment: Experiment,
    pub master_seed: u64,
    pub timestamp: String,
    pub wall_time_s: f64,
    pub config: ExperimentConfig,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<serde_json::Value>>,
    pub metrics: serde_json::Value,
    pub diagnostics: TruncationDiagnostics,
    pub finding: bool,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        for e in Experiment::ALL {
            let cfg = ExperimentConfig::new(e);
            assert!(cfg.validate().is_empty(), "{e}: {:?}", cfg.validate());
        }
    }

    #[test]
    fn flags_entropy_above_max() {
        let mut cfg = ExperimentConfig::new(Experiment::Benchmark);
        cfg.d = Some(8);
        cfg.s0 = Some(3.0);
        let issues = cfg.validate();
        assert_eq!(issues.len(), 1);
        assert!(issues[0].message.contains("exceeds max entropy"));
    }

    #[test]
    fn flags_large_step_without_override() {
        let mut cfg = ExperimentConfig::new(Experiment::Benchmark);
        cfg.dt = Some(0.5);
        assert_eq!(cfg.validate()[0].field, "dt");
        cfg.allow_large_step = true;
        assert!(cfg.validate().is_empty());
    }

    #[test]
    fn rejects_unknown_fields_and_tolerances() {
        assert!(ExperimentConfig::from_json(r#"{"experiment":"search","bogus":1}"#).is_err());
        let cfg = ExperimentConfig::from_json(r#"{"experiment":"search","tolerances":{"nope":1.0}}"#).unwrap();
        assert_eq!(cfg.validate()[0].field, "tolerances");
    }

    #[test]
    fn round_trips() {
        let mut cfg = ExperimentConfig::new(Experiment::Search);
        cfg.master_seed = Some(7);
        cfg.tolerances.insert("violation_margin".into(), -1.0);
        let back = ExperimentConfig::from_json(&cfg.to_json()).unwrap();
        assert_eq!(back, cfg);
        assert!(back.validate().is_empty());
    }

    #[test]
    fn experiment_names_parse() {
        for e in Experiment::ALL {
            assert_eq!(e.name().parse::<Experiment>().unwrap(), e);
        }
        assert!("nope".parse::<Experiment>().is_err());
    }
}
