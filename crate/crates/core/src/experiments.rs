//! Runners behind the command-line subcommands. Each returns a table (the
//! CSV payload), structured metrics, and truncation diagnostics.

use serde::Serialize;
use serde_json::{json, Value};

use crate::channel::{self, NoiseParams, Propagator, QuadratureGrid};
use crate::config::{Experiment, ExperimentConfig, TruncationDiagnostics};
use crate::error::{LabError, Result};
use crate::fock::{derive_seed, energy, random_density_matrix, DensityMatrix, FockSpace, ThermalSpec};
use crate::optimizer::{self, OptimizerOptions, SearchConfig};
use crate::variational::{self, MinimalityConfig};

/// One CSV cell.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum Cell {
    Float(f64),
    Int(u64),
    Text(String),
}

impl Cell {
    /// Floats with 17 significant digits, so values round-trip exactly.
    pub fn to_csv(&self) -> String {
        match self {
            Cell::Float(x) => format!("{x:.16e}"),
            Cell::Int(n) => n.to_string(),
            Cell::Text(s) => s.clone(),
        }
    }

    pub fn to_json(&self) -> Value {
        serde_json::to_value(self).expect("cell serializes")
    }
}

impl From<f64> for Cell {
    fn from(x: f64) -> Self {
        Cell::Float(x)
    }
}

impl From<usize> for Cell {
    fn from(n: usize) -> Self {
        Cell::Int(n as u64)
    }
}

impl From<u64> for Cell {
    fn from(n: u64) -> Self {
        Cell::Int(n)
    }
}

impl From<&str> for Cell {
    fn from(s: &str) -> Self {
        Cell::Text(s.to_string())
    }
}

impl From<String> for Cell {
    fn from(s: String) -> Self {
        Cell::Text(s)
    }
}

impl From<bool> for Cell {
    fn from(b: bool) -> Self {
        Cell::Text(b.to_string())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutput {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
    pub metrics: Value,
    pub diagnostics: TruncationDiagnostics,
    /// A scientific finding that should raise an alarm (confirmed
    /// counterexample or minimality violation).
    pub finding: bool,
}

impl ExperimentOutput {
    fn new(columns: &[&str], tail_tol: f64) -> Self {
        ExperimentOutput {
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
            metrics: Value::Null,
            diagnostics: TruncationDiagnostics::new(tail_tol),
            finding: false,
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.columns.join(",");
        out.push('\n');
        for row in &self.rows {
            let cells: Vec<String> = row.iter().map(Cell::to_csv).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }
}

/// Column names of each experiment's CSV table.
pub fn columns(experiment: Experiment) -> &'static [&'static str] {
    match experiment {
        Experiment::ChannelCheck => &["check", "value", "tolerance", "pass"],
        Experiment::Stationarity => &[
            "state",
            "dt",
            "residual",
            "scaled_residual",
            "u",
            "c",
            "conditioning",
            "tail_population",
        ],
        Experiment::EnergyLagrangian => &["state", "residual", "inv_mu", "c_hat", "branch", "tail_population"],
        Experiment::Minimality => &[
            "beta",
            "d",
            "trials",
            "violations",
            "min_scaled_change",
            "displacement_first_order",
            "linear_energy_change",
            "finite_energy_change",
        ],
        Experiment::Boundary => &["dt", "gamma_dt", "delta_s", "ratio"],
        Experiment::Benchmark => &["s0", "dt", "d", "beta", "s_out"],
        Experiment::Search => &[
            "d",
            "dt",
            "s0",
            "seed_index",
            "seed",
            "s_out",
            "benchmark",
            "gap",
            "status",
            "iterations",
            "fingerprint",
        ],
    }
}

/// Runs `cfg.experiment` with the resolved master seed.
pub fn run(cfg: &ExperimentConfig, master_seed: u64) -> Result<ExperimentOutput> {
    if let Some(issue) = cfg.validate().into_iter().next() {
        return Err(LabError::InvalidParameter {
            name: "config",
            reason: issue.to_string(),
        });
    }
    match cfg.experiment {
        Experiment::ChannelCheck => channel_check(cfg),
        Experiment::Stationarity => stationarity(cfg, master_seed),
        Experiment::EnergyLagrangian => energy_lagrangian(cfg, master_seed),
        Experiment::Minimality => minimality(cfg, master_seed),
        Experiment::Boundary => boundary(cfg),
        Experiment::Benchmark => benchmark(cfg),
        Experiment::Search => search(cfg, master_seed),
    }
}

fn params(cfg: &ExperimentConfig, dt: f64) -> Result<NoiseParams> {
    if cfg.allow_large_step {
        NoiseParams::with_large_step(cfg.gamma, dt)
    } else {
        NoiseParams::new(cfg.gamma, dt)
    }
}

fn space(cfg: &ExperimentConfig, d: usize) -> Result<FockSpace> {
    FockSpace::new(d, cfg.tail_tol)
}

fn channel_check(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    let mut out = ExperimentOutput::new(columns(cfg.experiment), cfg.tail_tol);
    let s = space(cfg, cfg.dim())?;
    let de = cfg.delta_e_value();
    let k = cfg.quadrature_nodes;
    let vacuum = DensityMatrix::vacuum(s);
    let mut check = |name: &str, value: f64, tol: f64| {
        out.rows
            .push(vec![name.into(), value.into(), tol.into(), (value <= tol).into()]);
    };

    let (phi, diag) = channel::additive_noise_channel_with_diagnostics(&vacuum, &QuadratureGrid::new(de, k)?)?;
    let expected = ThermalSpec::from_mean_occupation(de, s)?.state();
    check("thermal_closure_distance", phi.trace_distance(&expected), 1e-8);

    let (first, d1) =
        channel::additive_noise_channel_with_diagnostics(&vacuum, &QuadratureGrid::new(2.0 * de / 3.0, k)?)?;
    let (second, d2) = channel::additive_noise_channel_with_diagnostics(&first, &QuadratureGrid::new(de / 3.0, k)?)?;
    check("semigroup_defect", second.trace_distance(&phi), 1e-7);

    let dt = cfg.dt_values()[0];
    let p = params(cfg, dt)?;
    let thermal = ThermalSpec::new(1.0, s)?.state();
    let th = channel::th_first_order(&thermal, &p)?;
    check(
        "energy_drift_error",
        (energy(&th) - energy(&thermal) - p.gamma_dt()).abs(),
        1e-9,
    );
    check("trace_defect", (th.trace() - 1.0).abs(), 1e-12);

    out.diagnostics.renormalization_drifts = vec![diag.trace_drift, d1.trace_drift, d2.trace_drift];
    out.diagnostics.tail_populations = vec![
        diag.tail_population,
        d1.tail_population,
        d2.tail_population,
        thermal.tail_population(),
    ];
    out.metrics = json!({ "delta_e": de, "nodes_per_axis": k, "d": s.dim() });
    Ok(out)
}

/// Thermal states for `beta_values`, then `seeds` random full-rank states.
fn probe_states(cfg: &ExperimentConfig, s: FockSpace, master_seed: u64) -> Result<Vec<(String, DensityMatrix)>> {
    let mut states = Vec::new();
    for beta in cfg.beta_values() {
        states.push((format!("thermal:{beta}"), ThermalSpec::new(beta, s)?.state()));
    }
    for i in 0..cfg.seeds as u64 {
        let index = cfg.seed_start + i;
        let seed = derive_seed(master_seed, index);
        states.push((format!("random:{index}"), random_density_matrix(seed, s, s.dim())?));
    }
    Ok(states)
}

fn stationarity(cfg: &ExperimentConfig, master_seed: u64) -> Result<ExperimentOutput> {
    let mut out = ExperimentOutput::new(columns(cfg.experiment), cfg.tail_tol);
    let s = space(cfg, cfg.dim())?;
    let dts = cfg.dt_values();
    let mut scaling = Vec::new();
    for (label, rho) in probe_states(cfg, s, master_seed)? {
        let mut residuals = Vec::new();
        for &dt in &dts {
            let fit = variational::sigma_residual(&rho, &params(cfg, dt)?)?;
            residuals.push(fit.residual_norm);
            out.rows.push(vec![
                label.clone().into(),
                dt.into(),
                fit.residual_norm.into(),
                fit.scaled_residual.unwrap_or(f64::NAN).into(),
                fit.multiplier("u").unwrap_or(f64::NAN).into(),
                fit.multiplier("c").unwrap_or(f64::NAN).into(),
                fit.conditioning.into(),
                fit.tail_population.into(),
            ]);
        }
        out.diagnostics.tail_populations.push(rho.tail_population());
        let shrink: Vec<f64> = residuals.windows(2).map(|w| w[0] / w[1]).collect();
        let lx: Vec<f64> = dts.iter().map(|dt| (dt * cfg.gamma).ln()).collect();
        let ly: Vec<f64> = residuals.iter().map(|r| r.ln()).collect();
        let (exponent, _, _) = variational::linear_fit(&lx, &ly);
        scaling.push(json!({ "state": label, "shrink_ratios": shrink, "fitted_exponent": exponent }));
    }
    out.metrics = json!({ "d": s.dim(), "scaling": scaling });
    Ok(out)
}

fn energy_lagrangian(cfg: &ExperimentConfig, master_seed: u64) -> Result<ExperimentOutput> {
    let mut out = ExperimentOutput::new(columns(cfg.experiment), cfg.tail_tol);
    let s = space(cfg, cfg.dim())?;
    let p = params(cfg, cfg.dt_values()[0])?;
    let mut thermal_max: f64 = 0.0;
    let mut random_min = f64::INFINITY;
    for (label, rho) in probe_states(cfg, s, master_seed)? {
        let fit = variational::energy_lagrangian_residual(&rho, &p)?;
        if label.starts_with("thermal") {
            thermal_max = thermal_max.max(fit.residual_norm);
        } else {
            random_min = random_min.min(fit.residual_norm);
        }
        let branch = serde_json::to_value(fit.branch).expect("branch serializes");
        out.rows.push(vec![
            label.into(),
            fit.residual_norm.into(),
            fit.multiplier("inv_mu").unwrap_or(f64::NAN).into(),
            fit.multiplier("c_hat").unwrap_or(f64::NAN).into(),
            branch.as_str().unwrap_or("none").into(),
            fit.tail_population.into(),
        ]);
        out.diagnostics.tail_populations.push(rho.tail_population());
    }
    out.metrics = json!({
        "d": s.dim(),
        "max_thermal_residual": thermal_max,
        "min_random_residual": random_min,
        "separation_orders": (random_min / thermal_max).log10(),
    });
    Ok(out)
}

fn minimality(cfg: &ExperimentConfig, master_seed: u64) -> Result<ExperimentOutput> {
    let mut out = ExperimentOutput::new(columns(cfg.experiment), cfg.tail_tol);
    let p = params(cfg, cfg.dt_values()[0])?;
    let mut reports = Vec::new();
    for beta in cfg.beta_values() {
        let d = cfg.d.unwrap_or_else(|| MinimalityConfig::auto_dim(beta));
        let mut mc = MinimalityConfig::new(beta, d);
        mc.trials = cfg.trials;
        mc.t_step = cfg.t_step;
        mc.seed = master_seed;
        mc.tol_second_order = cfg.tolerance("tol_second_order");
        mc.propagator = Propagator::Exact { steps: cfg.steps };
        let r = variational::minimality_perturbation_check(&mc, &p)?;
        out.rows.push(vec![
            beta.into(),
            d.into(),
            r.trials.len().into(),
            r.violations.into(),
            r.min_scaled_change.into(),
            r.displacement.first_order_change.into(),
            r.displacement.linear_energy_change.into(),
            r.displacement.finite_energy_change.into(),
        ]);
        out.diagnostics.tail_populations.push(r.tail_population);
        out.finding |= r.violations > 0;
        reports.push(json!({
            "beta": beta,
            "d": d,
            "violations": r.violations,
            "min_scaled_change": r.min_scaled_change,
            "input_entropy": r.input_entropy,
            "output_entropy": r.output_entropy,
            "displacement": r.displacement,
        }));
    }
    out.metrics = json!({ "reports": reports });
    Ok(out)
}

fn boundary(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    let mut out = ExperimentOutput::new(columns(cfg.experiment), cfg.tail_tol);
    let d = cfg.dim();
    let dts = cfg.dt_values();
    let report = variational::boundary_delta_s_scaling(cfg.gamma, &dts, d, cfg.steps)?;
    for (dt, ratio) in dts.iter().zip(&report.quantity) {
        let x = cfg.gamma * dt;
        out.rows.push(vec![
            (*dt).into(),
            x.into(),
            (ratio * -x * x.ln()).into(),
            (*ratio).into(),
        ]);
    }
    let s = space(cfg, d)?;
    let rate = variational::boundary_rate(&DensityMatrix::vacuum(s), cfg.gamma, &cfg.epsilon_values())?;
    out.metrics = json!({
        "d": d,
        "ratio_spread": report.spread(),
        "ratio_spread_ok": report.spread() <= cfg.tolerance("ratio_spread"),
        "delta_s_loglog_slope": report.fitted_exponent,
        "rate_scaling": rate,
    });
    Ok(out)
}

fn benchmark(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    let mut out = ExperimentOutput::new(columns(cfg.experiment), cfg.tail_tol);
    let s = space(cfg, cfg.dim())?;
    let mut results = Vec::new();
    for s0 in cfg.s0_values() {
        for &dt in &cfg.dt_values() {
            let b = optimizer::thermal_benchmark(s0, &params(cfg, dt)?, s, cfg.steps)?;
            out.rows.push(vec![
                s0.into(),
                dt.into(),
                s.dim().into(),
                b.beta.into(),
                b.s_out.into(),
            ]);
            out.diagnostics
                .tail_populations
                .push(ThermalSpec::new(b.beta, s)?.state().tail_population());
            results.push(b);
        }
    }
    out.metrics = json!({ "benchmarks": results });
    Ok(out)
}

/// The optimizer and grid settings a search config implies.
pub fn search_config(cfg: &ExperimentConfig, master_seed: u64) -> SearchConfig {
    let mut sc = SearchConfig::new(
        cfg.dim(),
        cfg.gamma,
        cfg.dt_values()[0],
        cfg.s0_values(),
        cfg.seeds,
        master_seed,
    );
    sc.dt_list = cfg.dt_values();
    sc.seed_start = cfg.seed_start;
    sc.violation_margin = cfg.tolerance("violation_margin");
    sc.tail_tol = cfg.tail_tol;
    sc.steps = cfg.steps;
    sc.options = OptimizerOptions {
        max_iters: cfg.max_iters,
        grad_tol: cfg.tolerance("grad_tol"),
        entropy_tol: cfg.tolerance("entropy_tol"),
        propagator: Propagator::Exact { steps: cfg.steps },
        ..OptimizerOptions::default()
    };
    sc
}

fn search(cfg: &ExperimentConfig, master_seed: u64) -> Result<ExperimentOutput> {
    let mut out = ExperimentOutput::new(columns(cfg.experiment), cfg.tail_tol);
    let report = optimizer::counterexample_search(&search_config(cfg, master_seed))?;
    for r in &report.runs {
        let status = serde_json::to_value(r.status).expect("status serializes");
        out.rows.push(vec![
            r.d.into(),
            r.dt.into(),
            r.s0.into(),
            r.seed_index.map_or(Cell::from("thermal"), Cell::from),
            r.seed.map_or(Cell::from(""), Cell::from),
            r.s_out.into(),
            r.benchmark.into(),
            r.gap.into(),
            status.as_str().unwrap_or("").into(),
            r.iterations.into(),
            r.fingerprint.clone().into(),
        ]);
        out.diagnostics.tail_populations.push(r.tail_population);
    }
    out.finding = report.confirmed_violations() > 0;
    out.metrics = serde_json::to_value(&report).expect("report serializes");
    Ok(out)
}
