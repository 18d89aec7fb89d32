//! Command-line front end: `run`, `verify` and `bench`.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::io::Write;
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::{Duration, Instant};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::baselines::{brute_force_optimal, priority_plan, BaselineError, ORACLE_MAX_HORIZON};
use crate::netmodel::{
    parse_map, parse_scenario, scenario_map_name, NetError, RoadNetwork, Tick, TravellerSpec,
    WorldConfig,
};
use crate::plan::{validate_plan, validate_solution, SolutionSet, Validation};
use crate::protocol::{
    serve_worker, EngineConfig, EngineError, EngineState, TcpTransport, Termination, Transport,
};

pub const EXIT_OK: u8 = 0;
pub const EXIT_INPUT: u8 = 1;
pub const EXIT_FAILURE: u8 = 2;

pub const METRICS_HEADER: [&str; 9] = [
    "scenario",
    "n_travellers",
    "rounds",
    "total_cost",
    "makespan",
    "ct_nodes_expanded",
    "messages_sent",
    "wall_ms",
    "peak_alloc_estimate",
];

const CONNECT_PATIENCE: Duration = Duration::from_secs(30);

#[derive(Parser, Debug)]
#[command(
    name = "demapf",
    version,
    about = "Negotiated path finding for spatially extended agents"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Solve a scenario and write solution.json and metrics.csv.
    Run(RunArgs),
    /// Check a solution file against its scenario.
    Verify(VerifyArgs),
    /// Run every scenario of a suite with several solvers; CSV on stdout.
    Bench(BenchArgs),
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Solver {
    Demapf,
    Priority,
    Oracle,
}

impl fmt::Display for Solver {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Solver::Demapf => "demapf",
            Solver::Priority => "priority",
            Solver::Oracle => "oracle",
        })
    }
}

#[derive(Copy, Clone, Debug, Default, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransportMode {
    #[default]
    Local,
    Tcp,
}

#[derive(Args, Debug)]
pub struct RunArgs {
    #[arg(long)]
    pub map: Option<PathBuf>,
    #[arg(long)]
    pub scen: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub transport: Option<TransportMode>,
    /// Hub address that workers connect to.
    #[arg(long)]
    pub listen: Option<String>,
    /// Run as a worker of the hub at this address.
    #[arg(long)]
    pub connect: Option<String>,
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
    #[arg(long, value_enum, default_value_t = Solver::Demapf)]
    pub solver: Solver,
    #[arg(long)]
    pub max_rounds: Option<u64>,
    /// Also write router allocation traces and constraint-tree dumps.
    #[arg(long)]
    pub trace: bool,
}

#[derive(Args, Debug)]
pub struct VerifyArgs {
    #[arg(long)]
    pub solution: PathBuf,
    #[arg(long)]
    pub map: PathBuf,
    #[arg(long)]
    pub scen: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    #[arg(long)]
    pub suite: PathBuf,
    #[arg(
        long,
        value_enum,
        value_delimiter = ',',
        default_value = "demapf,priority"
    )]
    pub solvers: Vec<Solver>,
    #[arg(long, default_value_t = 1)]
    pub repeat: usize,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TransportConfig {
    pub mode: TransportMode,
    pub listen: Option<String>,
    pub connect: Option<String>,
    /// Worker processes the hub waits for.
    pub workers: Option<usize>,
}

/// Engine config file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub t_min: Tick,
    pub edge_length: u32,
    pub node_length: u32,
    pub default_speed_limit: Option<u32>,
    pub max_rounds: Option<u64>,
    pub transport: TransportConfig,
    pub parallel: bool,
    /// Accepted for compatibility; every run is deterministic.
    pub seedless: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        let world = WorldConfig::default();
        RunConfig {
            t_min: world.t_min,
            edge_length: world.edge_length,
            node_length: world.node_length,
            default_speed_limit: world.default_speed_limit,
            max_rounds: None,
            transport: TransportConfig::default(),
            parallel: false,
            seedless: true,
        }
    }
}

impl RunConfig {
    pub fn world(&self) -> WorldConfig {
        WorldConfig {
            edge_length: self.edge_length,
            node_length: self.node_length,
            t_min: self.t_min,
            default_speed_limit: self.default_speed_limit,
        }
    }

    pub fn engine(&self) -> EngineConfig {
        EngineConfig {
            t_min: self.t_min,
            max_rounds: self.max_rounds,
            parallel: self.parallel,
            trace: false,
        }
    }

    pub fn load(path: Option<&Path>) -> Result<RunConfig, CliError> {
        let cfg = match path {
            None => RunConfig::default(),
            Some(p) => serde_json::from_str(&read(p)?)
                .map_err(|e| CliError::Input(format!("{}: {e}", p.display())))?,
        };
        cfg.world().validate()?;
        if cfg.max_rounds == Some(0) {
            return Err(CliError::Input("max_rounds must be at least 1".into()));
        }
        Ok(cfg)
    }
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error("{0}")]
    Failed(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Input(_) | CliError::Net(_) => EXIT_INPUT,
            CliError::Engine(_) | CliError::Failed(_) => EXIT_FAILURE,
        }
    }
}

fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn write(path: &Path, contents: &str) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

/// Peak resident set size in KiB, read from `/proc/self/status`; 0 where
/// unavailable.
pub fn peak_rss_kib() -> u64 {
    fs::read_to_string("/proc/self/status")
        .ok()
        .and_then(|s| {
            s.lines()
                .find_map(|l| l.strip_prefix("VmHWM:"))
                .and_then(|v| v.split_whitespace().next()?.parse().ok())
        })
        .unwrap_or(0)
}

pub fn load_instance(
    map: &Path,
    scen: &Path,
    cfg: &RunConfig,
) -> Result<(RoadNetwork, Vec<TravellerSpec>), CliError> {
    let net = parse_map(&read(map)?, &cfg.world())?;
    let specs = parse_scenario(&read(scen)?, &net)?;
    if specs.is_empty() {
        return Err(CliError::Input(format!(
            "{}: no travellers",
            scen.display()
        )));
    }
    Ok((net, specs))
}

/// Result of one solver run.
#[derive(Clone, Debug)]
pub struct SolveReport {
    pub solution: Option<SolutionSet>,
    /// JSON description of a failed run.
    pub failure: Option<serde_json::Value>,
    pub skipped: bool,
    pub rounds: u64,
    pub ct_nodes_expanded: u64,
    pub messages_sent: u64,
    pub wall_ms: f64,
    pub trace: Vec<String>,
    pub trees: Vec<serde_json::Value>,
}

impl SolveReport {
    fn empty() -> SolveReport {
        SolveReport {
            solution: None,
            failure: None,
            skipped: false,
            rounds: 0,
            ct_nodes_expanded: 0,
            messages_sent: 0,
            wall_ms: 0.0,
            trace: Vec::new(),
            trees: Vec::new(),
        }
    }
}

fn baseline_report(result: Result<SolutionSet, BaselineError>, started: Instant) -> SolveReport {
    let mut report = SolveReport::empty();
    report.wall_ms = started.elapsed().as_secs_f64() * 1e3;
    match result {
        Ok(s) => report.solution = Some(s),
        Err(BaselineError::TooLarge { .. }) => report.skipped = true,
        Err(e) => report.failure = Some(serde_json::json!({ "error": e.to_string() })),
    }
    report
}

fn engine_report(mut engine: EngineState, started: Instant) -> Result<SolveReport, CliError> {
    let outcome = engine.run()?;
    let mut report = SolveReport::empty();
    report.wall_ms = started.elapsed().as_secs_f64() * 1e3;
    let metrics = engine.metrics();
    report.rounds = metrics.rounds;
    report.ct_nodes_expanded = metrics.ct_nodes_expanded;
    report.messages_sent = metrics.messages_sent;
    report.trace = engine.trace().to_vec();
    report.trees = engine
        .summaries()
        .iter()
        .filter_map(|s| s.tree.clone())
        .collect();
    match outcome {
        Termination::Solved(s) => report.solution = Some(s),
        Termination::Failed(f) => {
            report.failure = Some(serde_json::to_value(&f).expect("report serializes"))
        }
    }
    Ok(report)
}

/// Solves in this process.
pub fn solve(
    solver: Solver,
    net: &Arc<RoadNetwork>,
    specs: &[TravellerSpec],
    cfg: &RunConfig,
    trace: bool,
) -> Result<SolveReport, CliError> {
    let started = Instant::now();
    match solver {
        Solver::Priority => Ok(baseline_report(
            priority_plan(specs, net, cfg.t_min),
            started,
        )),
        Solver::Oracle => Ok(baseline_report(
            brute_force_optimal(specs, net, cfg.t_min, ORACLE_MAX_HORIZON),
            started,
        )),
        Solver::Demapf => {
            let mut engine_cfg = cfg.engine();
            engine_cfg.trace = trace;
            let engine = EngineState::local(net.clone(), specs.to_vec(), engine_cfg)?;
            engine_report(engine, started)
        }
    }
}

pub fn metrics_row(scenario: &str, n: usize, report: &SolveReport, peak: u64) -> Vec<String> {
    let (cost, makespan) = report
        .solution
        .as_ref()
        .map(|s| (s.cost.to_string(), s.makespan().to_string()))
        .unwrap_or_default();
    vec![
        scenario.to_string(),
        n.to_string(),
        report.rounds.to_string(),
        cost,
        makespan,
        report.ct_nodes_expanded.to_string(),
        report.messages_sent.to_string(),
        format!("{:.3}", report.wall_ms),
        peak.to_string(),
    ]
}

fn csv_error(e: csv::Error) -> CliError {
    CliError::Input(format!("csv: {e}"))
}

fn cmd_run(args: &RunArgs) -> Result<u8, CliError> {
    let mut cfg = RunConfig::load(args.config.as_deref())?;
    if let Some(m) = args.transport {
        cfg.transport.mode = m;
    }
    if let Some(l) = &args.listen {
        cfg.transport.listen = Some(l.clone());
    }
    if let Some(c) = &args.connect {
        cfg.transport.connect = Some(c.clone());
    }
    if let Some(w) = args.workers {
        cfg.transport.workers = Some(w);
    }
    if let Some(r) = args.max_rounds {
        if r == 0 {
            return Err(CliError::Input("--max-rounds must be at least 1".into()));
        }
        cfg.max_rounds = Some(r);
    }

    if cfg.transport.mode == TransportMode::Tcp && args.map.is_none() {
        let addr = cfg
            .transport
            .connect
            .clone()
            .ok_or_else(|| CliError::Input("worker mode needs --connect".into()))?;
        let mut transport = TcpTransport::connect(addr.as_str(), CONNECT_PATIENCE)
            .map_err(|e| CliError::Input(format!("connect {addr}: {e}")))?;
        serve_worker(&mut transport)?;
        return Ok(EXIT_OK);
    }

    let (map, scen) = match (&args.map, &args.scen) {
        (Some(m), Some(s)) => (m, s),
        _ => return Err(CliError::Input("--map and --scen are required".into())),
    };
    let (net, specs) = load_instance(map, scen, &cfg)?;
    let net = Arc::new(net);
    fs::create_dir_all(&args.out_dir)
        .map_err(|e| CliError::Input(format!("{}: {e}", args.out_dir.display())))?;

    let report = if cfg.transport.mode == TransportMode::Tcp {
        if args.solver != Solver::Demapf {
            return Err(CliError::Input(
                "the tcp transport only runs the demapf solver".into(),
            ));
        }
        let addr = cfg
            .transport
            .listen
            .clone()
            .unwrap_or_else(|| "127.0.0.1:0".into());
        let listener =
            TcpListener::bind(&addr).map_err(|e| CliError::Input(format!("listen {addr}: {e}")))?;
        let bound = listener
            .local_addr()
            .map_err(|e| CliError::Input(format!("listen {addr}: {e}")))?;
        eprintln!("listening on {bound}");
        let _ = std::io::stderr().flush();
        let workers = cfg.transport.workers.unwrap_or(1);
        let transports: Vec<Box<dyn Transport>> = TcpTransport::accept(&listener, workers)
            .map_err(EngineError::from)?
            .into_iter()
            .map(|t| Box::new(t) as Box<dyn Transport>)
            .collect();
        let started = Instant::now();
        let mut engine_cfg = cfg.engine();
        engine_cfg.trace = args.trace;
        let engine = EngineState::distributed(net.clone(), specs.clone(), engine_cfg, transports)?;
        engine_report(engine, started)?
    } else {
        solve(args.solver, &net, &specs, &cfg, args.trace)?
    };

    let scenario = scen
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let mut w = csv::Writer::from_path(args.out_dir.join("metrics.csv")).map_err(csv_error)?;
    w.write_record(METRICS_HEADER).map_err(csv_error)?;
    w.write_record(metrics_row(&scenario, specs.len(), &report, peak_rss_kib()))
        .map_err(csv_error)?;
    w.flush()
        .map_err(|e| CliError::Input(format!("metrics.csv: {e}")))?;

    if args.trace {
        write(
            &args.out_dir.join("trace.log"),
            &(report.trace.join("\n") + "\n"),
        )?;
        let trees = serde_json::to_string_pretty(&report.trees).expect("trees serialize");
        write(&args.out_dir.join("ct.json"), &trees)?;
    }
    if let Some(solution) = &report.solution {
        write(&args.out_dir.join("solution.json"), &solution.to_json())?;
        eprintln!(
            "solved {} travellers: cost {}, makespan {}, {} rounds",
            specs.len(),
            solution.cost,
            solution.makespan(),
            report.rounds
        );
        return Ok(EXIT_OK);
    }
    let failure = report
        .failure
        .unwrap_or_else(|| serde_json::json!({ "error": "instance too large for the solver" }));
    let text = serde_json::to_string_pretty(&failure).expect("report serializes");
    write(&args.out_dir.join("failure.json"), &text)?;
    eprintln!("no solution:\n{text}");
    Ok(EXIT_FAILURE)
}

fn cmd_verify(args: &VerifyArgs) -> Result<u8, CliError> {
    let cfg = RunConfig::load(args.config.as_deref())?;
    let (net, specs) = load_instance(&args.map, &args.scen, &cfg)?;
    let text = read(&args.solution)?;
    let solution: SolutionSet = serde_json::from_str(&text)
        .map_err(|e| CliError::Input(format!("{}: {e}", args.solution.display())))?;
    let by_id: HashMap<_, _> = specs.iter().map(|s| (s.id, s)).collect();
    for plan in &solution.plans {
        if !by_id.contains_key(&plan.traveller) {
            return Err(CliError::Input(format!(
                "solution names unknown traveller {}",
                plan.traveller
            )));
        }
    }
    for spec in &specs {
        let mut plans = solution.plans.iter().filter(|p| p.traveller == spec.id);
        match (plans.next(), plans.next()) {
            (None, _) => return Err(CliError::Failed(format!("no plan for {}", spec.id))),
            (Some(_), Some(_)) => {
                return Err(CliError::Failed(format!("two plans for {}", spec.id)))
            }
            (Some(plan), None) => validate_plan(plan, spec, &net)
                .map_err(|e| CliError::Failed(format!("plan of {}: {e}", spec.id)))?,
        }
    }
    if let Validation::Conflict {
        location,
        first,
        second,
    } = validate_solution(&solution, cfg.t_min)
    {
        return Err(CliError::Failed(format!(
            "conflict at {location}: {} holds {}..{}, {} holds {}..{} (t_min {})",
            first.0,
            first.1.entry,
            first.1.exit,
            second.0,
            second.1.entry,
            second.1.exit,
            cfg.t_min
        )));
    }
    let recomputed = SolutionSet::new(solution.plans.clone(), &specs, &net).cost;
    if recomputed != solution.cost {
        return Err(CliError::Failed(format!(
            "recorded cost {} differs from the plans' cost {recomputed}",
            solution.cost
        )));
    }
    println!(
        "valid: {} plans, cost {}",
        solution.plans.len(),
        solution.cost
    );
    Ok(EXIT_OK)
}

pub const BENCH_HEADER: [&str; 8] = [
    "scenario",
    "solver",
    "n_travellers",
    "status",
    "cost",
    "makespan",
    "rounds",
    "wall_ms",
];

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    match values.len() {
        0 => 0.0,
        n if n % 2 == 1 => values[n / 2],
        n => (values[n / 2 - 1] + values[n / 2]) / 2.0,
    }
}

fn bench_instance(
    scen: &Path,
    cfg: &RunConfig,
) -> Result<(Arc<RoadNetwork>, Vec<TravellerSpec>), CliError> {
    let text = read(scen)?;
    let name = scenario_map_name(&text)
        .ok_or_else(|| CliError::Input(format!("{}: no map named", scen.display())))?;
    let dir = scen.parent().unwrap_or(Path::new("."));
    let map = [
        dir.join(name),
        dir.join(Path::new(name).file_name().unwrap_or_default()),
    ]
    .into_iter()
    .find(|p| p.is_file())
    .ok_or_else(|| CliError::Input(format!("{}: map {name} not found", scen.display())))?;
    let (net, specs) = load_instance(&map, scen, cfg)?;
    Ok((Arc::new(net), specs))
}

fn cmd_bench(args: &BenchArgs) -> Result<u8, CliError> {
    let cfg = RunConfig::load(args.config.as_deref())?;
    if args.repeat == 0 {
        return Err(CliError::Input("--repeat must be at least 1".into()));
    }
    let mut scens: Vec<PathBuf> = fs::read_dir(&args.suite)
        .map_err(|e| CliError::Input(format!("{}: {e}", args.suite.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "scen"))
        .collect();
    scens.sort();
    let mut out = csv::Writer::from_writer(std::io::stdout());
    out.write_record(BENCH_HEADER).map_err(csv_error)?;
    for scen in &scens {
        let (net, specs) = bench_instance(scen, &cfg)?;
        let name = scen
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        for &solver in &args.solvers {
            let mut times = Vec::new();
            let mut outcomes = Vec::new();
            for _ in 0..args.repeat {
                let r = solve(solver, &net, &specs, &cfg, false)?;
                times.push(r.wall_ms);
                outcomes.push(r);
            }
            let first = &outcomes[0];
            let costs: Vec<_> = outcomes
                .iter()
                .map(|r| r.solution.as_ref().map(|s| s.cost))
                .collect();
            let status = if first.skipped {
                "skipped(size)"
            } else if costs.iter().any(|c| *c != costs[0]) {
                "unstable"
            } else if first.solution.is_some() {
                "ok"
            } else {
                "failed"
            };
            let (cost, makespan) = first
                .solution
                .as_ref()
                .map(|s| (s.cost.to_string(), s.makespan().to_string()))
                .unwrap_or_default();
            out.write_record([
                name.clone(),
                solver.to_string(),
                specs.len().to_string(),
                status.to_string(),
                cost,
                makespan,
                first.rounds.to_string(),
                format!("{:.3}", median(&mut times)),
            ])
            .map_err(csv_error)?;
        }
    }
    out.flush()
        .map_err(|e| CliError::Input(format!("stdout: {e}")))?;
    Ok(EXIT_OK)
}

/// Parses `args` (program name first) and runs the command.
pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_INPUT } else { EXIT_OK });
        }
    };
    let result = match &cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Verify(a) => cmd_verify(a),
        Command::Bench(a) => cmd_bench(a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
