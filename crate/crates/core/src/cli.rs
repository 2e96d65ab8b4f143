//! Command-line harness: `run`, `compare` and `reduce`.
//!
//! Exit codes: 0 success, 1 configuration error, 2 numerical failure,
//! 3 I/O error, 4 comparison over threshold.

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use thiserror::Error;

use crate::classical::{forward_euler, rk4, rmse, IntegrationError, Trace, TraceError, TraceMeta};
use crate::dae::{pantelides_reduce, parse_model, to_explicit_ode, DaeError, DaeSystem};
use crate::powsys::{build_generic_dae, Case, ModelKind, PowsysError, Scenario, SystemData};
use crate::qsolve::{integrate, QuantumConfig, MAX_EPSILON};

/// Explicit-ODE size of the generic WSCC model in the reference formulation.
pub const WSCC_REFERENCE_STATES: usize = 45;

/// Environment variable overriding the data directory.
pub const DATA_ENV: &str = "QDAE_DATA";

/// Default `compare` thresholds per variable.
pub const DEFAULT_THRESHOLDS: [(&str, f64); 2] = [("delta", 0.001), ("w", 0.0018)];

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Numerical(String),
    #[error("{0}")]
    Io(String),
    #[error("{0}")]
    Threshold(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Numerical(_) => 2,
            CliError::Io(_) => 3,
            CliError::Threshold(_) => 4,
        }
    }
}

impl From<PowsysError> for CliError {
    fn from(e: PowsysError) -> Self {
        match e {
            PowsysError::Io { .. } => CliError::Io(e.to_string()),
            PowsysError::Dae(ref d) | PowsysError::PowerFlow(ref d) if numerical(d) => {
                CliError::Numerical(e.to_string())
            }
            PowsysError::SingularNetwork => CliError::Numerical(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}

impl From<DaeError> for CliError {
    fn from(e: DaeError) -> Self {
        if numerical(&e) {
            CliError::Numerical(e.to_string())
        } else {
            CliError::Config(e.to_string())
        }
    }
}

fn numerical(e: &DaeError) -> bool {
    matches!(
        e,
        DaeError::Structural { .. }
            | DaeError::Singular { .. }
            | DaeError::Newton { .. }
            | DaeError::NonFinite
            | DaeError::Unsupported(_)
    )
}

fn io_error(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

#[derive(Debug, Parser)]
#[command(name = "qdae", version, about = "Classical and emulated-quantum power-system simulation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Integrate a model under a scenario and write its trace.
    Run(RunArgs),
    /// Per-variable RMSE between two traces on the same grid.
    Compare(CompareArgs),
    /// Index-reduce a DAE and list the explicit ODE.
    Reduce(ReduceArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    ClassicalEuler,
    ClassicalRk4,
    Quantum,
}

impl Method {
    fn label(self) -> &'static str {
        match self {
            Method::ClassicalEuler => "classical-euler",
            Method::ClassicalRk4 => "classical-rk4",
            Method::Quantum => "quantum",
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    /// smib | wscc-internal | wscc-dae | path to a model file.
    #[arg(long)]
    pub model: Option<String>,
    /// Scenario id under `<data>/scenarios/` or a TOML path.
    #[arg(long)]
    pub scenario: Option<String>,
    #[arg(long, value_enum, default_value_t = Method::ClassicalEuler)]
    pub method: Method,
    #[arg(long, allow_negative_numbers = true)]
    pub dt: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub tmax: Option<f64>,
    #[arg(long, allow_negative_numbers = true, default_value_t = QuantumConfig::default().epsilon)]
    pub eps: f64,
    #[arg(long = "taylor-k", default_value_t = QuantumConfig::default().taylor_order)]
    pub taylor_k: usize,
    #[arg(long = "clock-qubits", default_value_t = QuantumConfig::default().clock_qubits)]
    pub clock_qubits: u32,
    /// Trace CSV; the manifest goes next to it.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args)]
pub struct CompareArgs {
    pub first: PathBuf,
    pub second: PathBuf,
    /// Comma-separated variables; all shared columns by default.
    #[arg(long, value_delimiter = ',')]
    pub variables: Vec<String>,
    /// Applies to every variable, replacing the defaults.
    #[arg(long, allow_negative_numbers = true)]
    pub threshold: Option<f64>,
    /// Report CSV; printed to stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct ReduceArgs {
    /// Model file path or `wscc-dae`.
    pub model: String,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Fully resolved run settings, written verbatim as the manifest.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub model: String,
    pub scenario: String,
    pub scenario_source: String,
    pub data_dir: String,
    pub method: Method,
    pub dt: f64,
    pub tmax: f64,
    pub eps: f64,
    pub taylor_k: usize,
    pub clock_qubits: u32,
    pub out: PathBuf,
    pub manifest: PathBuf,
    pub seed: u64,
    #[serde(skip)]
    scenario_value: Scenario,
}

/// Bundled data unless `QDAE_DATA` points elsewhere.
pub fn data_dir() -> PathBuf {
    std::env::var_os(DATA_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| Path::new(env!("CARGO_MANIFEST_DIR")).join("data"))
}

impl RunConfig {
    pub fn resolve(args: &RunArgs) -> Result<Self, CliError> {
        let dir = data_dir();
        let (mut scenario, source) = match &args.scenario {
            None => (Scenario::steady("steady", 20.0), "built-in".to_string()),
            Some(id) => {
                let direct = Path::new(id);
                let path = if direct.is_file() {
                    direct.to_path_buf()
                } else {
                    dir.join("scenarios").join(format!("{id}.toml"))
                };
                if !path.is_file() {
                    return Err(CliError::Config(format!(
                        "scenario `{id}` not found (looked for {})",
                        path.display()
                    )));
                }
                (Scenario::load(&path)?, path.display().to_string())
            }
        };
        let model = args
            .model
            .clone()
            .or_else(|| scenario.model.clone())
            .ok_or_else(|| CliError::Config("no --model given and the scenario names none".into()))?;
        if let Some(dt) = args.dt {
            scenario.step = dt;
        }
        if let Some(t) = args.tmax {
            scenario.horizon = t;
        }
        let (dt, tmax) = (scenario.step, scenario.horizon);
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(CliError::Config(format!("--dt must be positive, got {dt}")));
        }
        if tmax.is_nan() || tmax < dt {
            return Err(CliError::Config(format!("--tmax ({tmax}) must be at least --dt ({dt})")));
        }
        if !(args.eps > 0.0 && args.eps <= MAX_EPSILON) {
            return Err(CliError::Config(format!(
                "--eps must lie in (0, {MAX_EPSILON}], got {}",
                args.eps
            )));
        }
        if args.taylor_k == 0 || !(1..=40).contains(&args.clock_qubits) {
            return Err(CliError::Config("--taylor-k must be >= 1 and --clock-qubits in 1..=40".into()));
        }
        let out = args
            .out
            .clone()
            .unwrap_or_else(|| PathBuf::from(format!("{}-{}.csv", scenario.name, args.method.label())));
        let manifest = out.with_extension("manifest.toml");
        Ok(RunConfig {
            model,
            scenario: scenario.name.clone(),
            scenario_source: source,
            data_dir: dir.display().to_string(),
            method: args.method,
            dt,
            tmax,
            eps: args.eps,
            taylor_k: args.taylor_k,
            clock_qubits: args.clock_qubits,
            out,
            manifest,
            seed: args.seed,
            scenario_value: scenario,
        })
    }

    pub fn quantum(&self) -> QuantumConfig {
        QuantumConfig {
            epsilon: self.eps,
            taylor_order: self.taylor_k,
            clock_qubits: self.clock_qubits,
        }
    }

    /// Model and scenario instantiated for integration.
    pub fn case(&self) -> Result<Case, CliError> {
        let kind: ModelKind = self.model.parse().expect("infallible");
        let data = match kind {
            ModelKind::WsccInternal | ModelKind::WsccDae => {
                SystemData::load(&Path::new(&self.data_dir).join("wscc9.toml"))?
            }
            _ => SystemData::wscc9(),
        };
        let mut scenario = self.scenario_value.clone();
        scenario.step = self.dt;
        scenario.horizon = self.tmax;
        Ok(Case::prepare(&kind, &scenario, &data)?)
    }
}

/// Integrates, then writes the trace and manifest. A numerical failure
/// still flushes the partial trace.
pub fn run(cfg: &RunConfig) -> Result<Trace, CliError> {
    let case = cfg.case()?;
    let result = match cfg.method {
        Method::ClassicalEuler => forward_euler(&case.ode, &case.z0, case.dt, case.tmax, &case.events),
        Method::ClassicalRk4 => rk4(&case.ode, &case.z0, case.dt, case.tmax, &case.events),
        Method::Quantum => {
            integrate(&case.ode, &case.z0, case.dt, case.tmax, &case.events, &cfg.quantum())
                .map(|r| r.trace)
        }
    };
    let (mut trace, failure) = match result {
        Ok(t) => (t, None),
        Err(IntegrationError { trace, time, reason }) => {
            (*trace, Some(format!("integration aborted at t = {time}: {reason}")))
        }
    };
    trace.meta = TraceMeta {
        method: cfg.method.label().into(),
        dt: cfg.dt,
        scenario: cfg.scenario.clone(),
    };
    write_trace(&cfg.out, &trace)?;
    write_manifest(cfg, trace.len(), failure.as_deref())?;
    match failure {
        Some(reason) => Err(CliError::Numerical(reason)),
        None => Ok(trace),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| io_error(parent, e))?;
    }
    File::create(path).map(BufWriter::new).map_err(|e| io_error(path, e))
}

fn write_trace(path: &Path, trace: &Trace) -> Result<(), CliError> {
    let mut w = create(path)?;
    trace.write_csv(&mut w).map_err(|e| io_error(path, e))?;
    w.flush().map_err(|e| io_error(path, e))
}

fn write_manifest(cfg: &RunConfig, rows: usize, failure: Option<&str>) -> Result<(), CliError> {
    #[derive(Serialize)]
    struct Manifest<'a> {
        #[serde(flatten)]
        config: &'a RunConfig,
        rows: usize,
        status: &'a str,
    }
    let text = toml::to_string(&Manifest {
        config: cfg,
        rows,
        status: failure.unwrap_or("ok"),
    })
    .map_err(|e| CliError::Config(format!("manifest: {e}")))?;
    let mut w = create(&cfg.manifest)?;
    w.write_all(text.as_bytes())
        .and_then(|_| w.flush())
        .map_err(|e| io_error(&cfg.manifest, e))
}

fn read_trace(path: &Path) -> Result<Trace, CliError> {
    let file = File::open(path).map_err(|e| io_error(path, e))?;
    Trace::read_csv(BufReader::new(file), TraceMeta::default()).map_err(|e| match e {
        TraceError::Csv { .. } => CliError::Config(format!("{}: {e}", path.display())),
        other => CliError::Io(format!("{}: {other}", path.display())),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub variable: String,
    pub rmse: f64,
    pub threshold: Option<f64>,
}

impl ComparisonRow {
    pub fn passes(&self) -> bool {
        self.threshold.is_none_or(|t| self.rmse <= t)
    }
}

/// RMSE per variable; grid mismatch is a numerical error.
pub fn compare_traces(
    a: &Trace,
    b: &Trace,
    variables: &[String],
    threshold: Option<f64>,
) -> Result<Vec<ComparisonRow>, CliError> {
    let names: Vec<String> = if variables.is_empty() {
        a.names.iter().filter(|n| b.names.contains(n)).cloned().collect()
    } else {
        variables.to_vec()
    };
    names
        .into_iter()
        .map(|v| {
            let value = rmse(a, b, &v).map_err(|e| match e {
                TraceError::GridMismatch => CliError::Numerical(e.to_string()),
                other => CliError::Config(other.to_string()),
            })?;
            let limit = threshold.or_else(|| {
                DEFAULT_THRESHOLDS
                    .iter()
                    .find(|(n, _)| *n == v)
                    .map(|(_, t)| *t)
            });
            Ok(ComparisonRow {
                variable: v,
                rmse: value,
                threshold: limit,
            })
        })
        .collect()
}

pub fn compare(args: &CompareArgs) -> Result<Vec<ComparisonRow>, CliError> {
    let (a, b) = (read_trace(&args.first)?, read_trace(&args.second)?);
    let rows = compare_traces(&a, &b, &args.variables, args.threshold)?;
    let mut report = String::from("variable,rmse,threshold,status\n");
    for r in &rows {
        let limit = r.threshold.map(|t| format!("{t:e}")).unwrap_or_default();
        let status = if r.passes() { "ok" } else { "exceeded" };
        report.push_str(&format!("{},{:.16e},{limit},{status}\n", r.variable, r.rmse));
    }
    match &args.out {
        Some(path) => {
            let mut w = create(path)?;
            w.write_all(report.as_bytes())
                .and_then(|_| w.flush())
                .map_err(|e| io_error(path, e))?;
        }
        None => print!("{report}"),
    }
    let over: Vec<&str> = rows.iter().filter(|r| !r.passes()).map(|r| r.variable.as_str()).collect();
    if over.is_empty() {
        Ok(rows)
    } else {
        Err(CliError::Threshold(format!("RMSE over threshold for {}", over.join(", "))))
    }
}

/// Reduced-system listing in model-file syntax. Derived equations carry
/// their lineage as comments and the explicit-ODE variables close the file.
pub fn reduction_listing(original: &DaeSystem) -> Result<String, CliError> {
    let reduced = pantelides_reduce(original)?;
    let ode = to_explicit_ode(&reduced)?;
    let mut out = String::new();
    for (name, value) in &reduced.parameters {
        out.push_str(&format!("param {name} = {value}\n"));
    }
    for (name, value) in reduced.states.iter().zip(&reduced.state_init) {
        out.push_str(&format!("state {name} = {value}\n"));
    }
    for (name, value) in reduced.algebraics.iter().zip(&reduced.algebraic_guess) {
        out.push_str(&format!("alg {name} = {value}\n"));
    }
    for (name, f) in reduced.states.iter().zip(&reduced.f) {
        out.push_str(&format!("eq der({name}) = {f}\n"));
    }
    for (label, g) in reduced.g_labels.iter().zip(&reduced.g) {
        out.push_str(&format!("eq 0 = {g}  # {label}\n"));
    }
    let labels = reduced.equation_labels();
    let first_derived = reduced.states.len() + reduced.g.len();
    for (i, d) in reduced.derived.iter().enumerate() {
        out.push_str(&format!(
            "# derived, round {}, from {}: {}\n",
            d.round,
            labels[d.parent],
            labels[first_derived + i]
        ));
        out.push_str(&format!("#   0 = {}\n", d.residual));
    }
    for (y, chain) in reduced.algebraics.iter().zip(reduced.constraint_families()) {
        let top = labels[*chain.last().expect("non-empty")].clone();
        out.push_str(&format!("# promoted der({y}) from {top}\n"));
    }
    out.push_str(&format!(
        "# explicit ODE: {} variables ({} differential + {} algebraic)\n",
        ode.dim(),
        reduced.states.len(),
        reduced.algebraics.len()
    ));
    out.push_str(&format!("# variables: {}\n", ode.variables().join(" ")));
    Ok(out)
}

pub fn reduce(args: &ReduceArgs) -> Result<String, CliError> {
    let dae = if args.model == "wscc-dae" {
        let data = SystemData::load(&data_dir().join("wscc9.toml"))?;
        build_generic_dae(&data)?.dae
    } else {
        let path = Path::new(&args.model);
        let text = std::fs::read_to_string(path).map_err(|e| io_error(path, e))?;
        parse_model(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
    };
    let mut listing = reduction_listing(&dae)?;
    if args.model == "wscc-dae" {
        listing.push_str(&format!("# reference formulation: {WSCC_REFERENCE_STATES} variables\n"));
    }
    match &args.out {
        Some(path) => {
            let mut w = create(path)?;
            w.write_all(listing.as_bytes())
                .and_then(|_| w.flush())
                .map_err(|e| io_error(path, e))?;
        }
        None => print!("{listing}"),
    }
    Ok(listing)
}

/// Parses arguments, dispatches and maps the outcome to an exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let outcome = match &cli.command {
        Command::Run(a) => RunConfig::resolve(a).and_then(|cfg| {
            let trace = run(&cfg)?;
            println!("{} rows -> {}", trace.len(), cfg.out.display());
            Ok(())
        }),
        Command::Compare(a) => compare(a).map(|_| ()),
        Command::Reduce(a) => reduce(a).map(|listing| {
            if a.out.is_some() {
                for line in listing.lines().filter(|l| l.starts_with("# explicit") || l.starts_with("# reference")) {
                    println!("{}", line.trim_start_matches("# "));
                }
            }
        }),
    };
    match outcome {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
