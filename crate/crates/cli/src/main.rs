use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{anyhow, bail, Context};
use chrono::Utc;
use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand};
use moe_lab_core::config::{Experiment, ExperimentConfig, ResultRecord};
use moe_lab_core::experiments;
use moe_lab_core::LabError;
use serde_json::Value;

const SEED_ENV: &str = "MOE_LAB_SEED";

/// Exit statuses.
mod status {
    pub const OK: u8 = 0;
    pub const IO: u8 = 1;
    pub const CONFIG: u8 = 2;
    pub const NUMERICAL: u8 = 3;
    pub const FINDING: u8 = 4;
}

#[derive(Parser, Debug)]
#[command(
    name = "moe-lab",
    version,
    about = "Numerical experiments on the bosonic additive-noise channel"
)]
struct Cli {
    /// Worker threads for parallel sweeps (default: one per core).
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Log progress to stderr (repeat for more detail).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Quadrature channel closure, semigroup and first-order drift checks.
    ChannelCheck(RunArgs),
    /// Sigma-system residuals of thermal and random states.
    Stationarity(RunArgs),
    /// Energy-constrained stationarity residuals and fitted multipliers.
    EnergyLagrangian(RunArgs),
    /// Second-order minimality probes around thermal states.
    Minimality(RunArgs),
    /// Entropy growth of the vacuum as the step shrinks.
    Boundary(RunArgs),
    /// Thermal output entropy at fixed input entropy.
    Benchmark(RunArgs),
    /// Random-restart search for states beating the thermal benchmark.
    Search(RunArgs),
    /// Run an experiment given by name.
    Run {
        #[arg(value_parser = parse_experiment)]
        experiment: Experiment,
        #[command(flatten)]
        args: RunArgs,
    },
    /// List every violated constraint of a configuration; exit 0 iff valid.
    Validate {
        /// Configuration file (same as --config).
        path: Option<PathBuf>,
        /// Experiment to assume when the file does not name one.
        #[arg(long, value_parser = parse_experiment)]
        experiment: Option<Experiment>,
        #[command(flatten)]
        args: RunArgs,
    },
}

fn parse_experiment(s: &str) -> Result<Experiment, String> {
    s.parse()
}

/// Configuration file plus per-field overrides. Flags win over the file.
#[derive(Args, Debug, Default, Clone)]
struct RunArgs {
    /// JSON configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Fock-space dimension.
    #[arg(long)]
    d: Option<usize>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long, conflicts_with = "dt_list")]
    dt: Option<f64>,
    /// Comma-separated step sizes.
    #[arg(long, value_delimiter = ',')]
    dt_list: Option<Vec<f64>>,
    /// Added energy of the displacement channel.
    #[arg(long)]
    delta_e: Option<f64>,
    /// Input entropy.
    #[arg(long, conflicts_with = "s0_list")]
    s0: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    s0_list: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    beta_list: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    epsilon_list: Option<Vec<f64>>,
    /// Random states or restarts per grid point.
    #[arg(long)]
    seeds: Option<usize>,
    /// Master seed (falls back to the file, then MOE_LAB_SEED, then 0).
    #[arg(long)]
    master_seed: Option<u64>,
    #[arg(long)]
    seed_start: Option<u64>,
    /// Named tolerance override, e.g. `--tolerance violation_margin=1e-7`.
    #[arg(long = "tolerance", value_parser = parse_tolerance)]
    tolerances: Vec<(String, f64)>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    tail_tol: Option<f64>,
    /// RK4 steps of the integrated map.
    #[arg(long)]
    steps: Option<usize>,
    /// Gauss-Hermite nodes per axis.
    #[arg(long)]
    quadrature_nodes: Option<usize>,
    /// Accept gamma*dt above the first-order limit.
    #[arg(long)]
    allow_large_step: bool,
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    t_step: Option<f64>,
}

fn parse_tolerance(s: &str) -> Result<(String, f64), String> {
    let (name, value) = s
        .split_once('=')
        .ok_or_else(|| format!("expected NAME=VALUE, got `{s}`"))?;
    let value = value.parse::<f64>().map_err(|e| format!("`{value}`: {e}"))?;
    Ok((name.trim().to_string(), value))
}

/// Failure carrying the exit status it maps to.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl Failure {
    fn config(error: anyhow::Error) -> Self {
        Failure {
            code: status::CONFIG,
            error,
        }
    }

    fn io(error: anyhow::Error) -> Self {
        Failure {
            code: status::IO,
            error,
        }
    }
}

impl From<LabError> for Failure {
    fn from(e: LabError) -> Self {
        let code = match e {
            LabError::InvalidParameter { .. } | LabError::Unreachable { .. } => status::CONFIG,
            _ => status::NUMERICAL,
        };
        Failure { code, error: e.into() }
    }
}

fn load_config(
    experiment: Option<Experiment>,
    args: &RunArgs,
    path: Option<&Path>,
) -> anyhow::Result<ExperimentConfig> {
    let mut doc = match path {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            serde_json::from_str::<Value>(&text).with_context(|| format!("parsing {}", path.display()))?
        }
        None => Value::Object(Default::default()),
    };
    let obj = doc
        .as_object_mut()
        .ok_or_else(|| anyhow!("configuration must be a JSON object"))?;
    match (experiment, obj.get("experiment")) {
        (Some(e), Some(found)) => {
            if found.as_str() != Some(e.name()) {
                bail!("experiment: file names {found}, command line asks for `{e}`");
            }
        }
        (Some(e), None) => {
            obj.insert("experiment".into(), Value::from(e.name()));
        }
        (None, Some(_)) => {}
        (None, None) => bail!("experiment: not given in the file or with --experiment"),
    }
    let mut cfg: ExperimentConfig = serde_json::from_value(doc).context("invalid configuration")?;
    apply_overrides(&mut cfg, args);
    Ok(cfg)
}

fn apply_overrides(cfg: &mut ExperimentConfig, a: &RunArgs) {
    if let Some(d) = a.d {
        cfg.d = Some(d);
    }
    if let Some(g) = a.gamma {
        cfg.gamma = g;
    }
    if let Some(dt) = a.dt {
        cfg.dt = Some(dt);
        cfg.dt_list = None;
    }
    if let Some(list) = &a.dt_list {
        cfg.dt_list = Some(list.clone());
        cfg.dt = None;
    }
    if let Some(de) = a.delta_e {
        cfg.delta_e = Some(de);
    }
    if let Some(s0) = a.s0 {
        cfg.s0 = Some(s0);
        cfg.s0_list = None;
    }
    if let Some(list) = &a.s0_list {
        cfg.s0_list = Some(list.clone());
        cfg.s0 = None;
    }
    if let Some(list) = &a.beta_list {
        cfg.beta_list = Some(list.clone());
    }
    if let Some(list) = &a.epsilon_list {
        cfg.epsilon_list = Some(list.clone());
    }
    if let Some(n) = a.seeds {
        cfg.seeds = n;
    }
    if let Some(s) = a.master_seed {
        cfg.master_seed = Some(s);
    }
    if let Some(s) = a.seed_start {
        cfg.seed_start = s;
    }
    for (name, value) in &a.tolerances {
        cfg.tolerances.insert(name.clone(), *value);
    }
    if let Some(dir) = &a.output_dir {
        cfg.output_dir = dir.clone();
    }
    if let Some(t) = a.tail_tol {
        cfg.tail_tol = t;
    }
    if let Some(n) = a.steps {
        cfg.steps = n;
    }
    if let Some(n) = a.quadrature_nodes {
        cfg.quadrature_nodes = n;
    }
    if a.allow_large_step {
        cfg.allow_large_step = true;
    }
    if let Some(n) = a.max_iters {
        cfg.max_iters = n;
    }
    if let Some(n) = a.trials {
        cfg.trials = n;
    }
    if let Some(t) = a.t_step {
        cfg.t_step = t;
    }
}

/// Flag (already merged into `cfg`), then file, then environment, then 0.
fn resolve_seed(cfg: &ExperimentConfig) -> anyhow::Result<u64> {
    if let Some(seed) = cfg.master_seed {
        return Ok(seed);
    }
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .with_context(|| format!("{SEED_ENV}=`{v}` is not an unsigned integer")),
        Err(_) => Ok(0),
    }
}

fn validated(experiment: Option<Experiment>, args: &RunArgs, path: Option<&Path>) -> Result<ExperimentConfig, Failure> {
    let cfg = load_config(experiment, args, path).map_err(Failure::config)?;
    let issues = cfg.validate();
    if issues.is_empty() {
        return Ok(cfg);
    }
    let list: Vec<String> = issues.iter().map(|i| format!("  {i}")).collect();
    Err(Failure::config(anyhow!("invalid configuration:\n{}", list.join("\n"))))
}

fn output_paths(dir: &Path, experiment: Experiment) -> (PathBuf, PathBuf) {
    let stamp = Utc::now().format("%Y%m%dT%H%M%S%.3fZ").to_string();
    let mut n = 0;
    loop {
        let stem = if n == 0 {
            format!("{experiment}-{stamp}")
        } else {
            format!("{experiment}-{stamp}-{n}")
        };
        let csv = dir.join(format!("{stem}.csv"));
        let json = dir.join(format!("{stem}.json"));
        if !csv.exists() && !json.exists() {
            return (csv, json);
        }
        n += 1;
    }
}

fn execute(experiment: Experiment, args: &RunArgs) -> Result<u8, Failure> {
    let mut cfg = validated(Some(experiment), args, args.config.as_deref())?;
    let seed = resolve_seed(&cfg).map_err(Failure::config)?;
    cfg.master_seed = Some(seed);
    log::info!("running {experiment} with master seed {seed}");

    let started = Instant::now();
    let out = experiments::run(&cfg, seed)?;
    let wall_time_s = started.elapsed().as_secs_f64();

    let record = ResultRecord {
        tool: env!("CARGO_PKG_NAME").to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        experiment,
        master_seed: seed,
        timestamp: Utc::now().to_rfc3339(),
        wall_time_s,
        config: cfg.clone(),
        columns: out.columns.clone(),
        rows: out
            .rows
            .iter()
            .map(|r| r.iter().map(|c| c.to_json()).collect())
            .collect(),
        metrics: out.metrics.clone(),
        diagnostics: out.diagnostics.clone(),
        finding: out.finding,
    };

    fs::create_dir_all(&cfg.output_dir)
        .with_context(|| format!("creating {}", cfg.output_dir.display()))
        .map_err(Failure::io)?;
    let (csv_path, json_path) = output_paths(&cfg.output_dir, experiment);
    fs::write(&csv_path, out.to_csv())
        .with_context(|| format!("writing {}", csv_path.display()))
        .map_err(Failure::io)?;
    let json = serde_json::to_string_pretty(&record).map_err(|e| Failure::io(e.into()))?;
    fs::write(&json_path, json + "\n")
        .with_context(|| format!("writing {}", json_path.display()))
        .map_err(Failure::io)?;

    print!("{}", out.to_csv());
    println!(
        "wrote {} and {} ({wall_time_s:.2}s)",
        csv_path.display(),
        json_path.display()
    );
    if out.diagnostics.max_tail() > cfg.tail_tol {
        log::warn!(
            "largest top-level population {:.3e} exceeds tail_tol {:.1e}; consider a larger d",
            out.diagnostics.max_tail(),
            cfg.tail_tol
        );
    }
    if out.finding {
        eprintln!(
            "finding: {experiment} reported a violation, see {}",
            json_path.display()
        );
        return Ok(status::FINDING);
    }
    Ok(status::OK)
}

fn validate(path: Option<&Path>, experiment: Option<Experiment>, args: &RunArgs) -> Result<u8, Failure> {
    let path = path.or(args.config.as_deref());
    let cfg = validated(experiment, args, path)?;
    println!("{}: configuration is valid", cfg.experiment);
    Ok(status::OK)
}

fn schema_help() -> String {
    let mut text = String::from("CSV schema (one header row; floats printed with 17 significant digits):\n");
    for e in Experiment::ALL {
        text.push_str(&format!("  {:<18} {}\n", e.name(), experiments::columns(e).join(",")));
    }
    text.push_str(&format!(
        "\nOutputs go to <output_dir>/<experiment>-<timestamp>.csv and .json.\n\
         Master seed: --master-seed, else the config file, else ${SEED_ENV}, else 0.\n\
         Exit status: 0 success, 1 I/O error, 2 invalid configuration, 3 numerical failure, 4 finding.\n"
    ));
    text
}

fn main() -> ExitCode {
    let matches = Cli::command().after_long_help(schema_help()).get_matches();
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(cli) => cli,
        Err(e) => e.exit(),
    };

    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: thread pool: {e}");
            return ExitCode::from(status::CONFIG);
        }
    }

    let result = match &cli.command {
        Command::ChannelCheck(a) => execute(Experiment::ChannelCheck, a),
        Command::Stationarity(a) => execute(Experiment::Stationarity, a),
        Command::EnergyLagrangian(a) => execute(Experiment::EnergyLagrangian, a),
        Command::Minimality(a) => execute(Experiment::Minimality, a),
        Command::Boundary(a) => execute(Experiment::Boundary, a),
        Command::Benchmark(a) => execute(Experiment::Benchmark, a),
        Command::Search(a) => execute(Experiment::Search, a),
        Command::Run { experiment, args } => execute(*experiment, args),
        Command::Validate { path, experiment, args } => validate(path.as_deref(), *experiment, args),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}
