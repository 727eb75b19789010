//! `deconflict`: scenario generation, planning, simulation, sweeps and
//! reports from the command line.

mod chart;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use deconflict::gen::{generate_scenario, GenSpec};
use deconflict::io::{self, MetricsRow, ScenarioFile};
use deconflict::metrics::{
    fit_trend, measure, run_scenario, sweep, FixedParams, RunMode, SweepSpec, SweptParam, TrendModel,
};
use deconflict::planner::{plan, plan_receding, verify_plan, Horizon, PlanRequest, ScpSettings, SeparationMode};
use deconflict::sim::{ChStrategy, FailureKind};
use deconflict::Error;

const EXIT_MALFORMED: u8 = 1;
const EXIT_INFEASIBLE: u8 = 2;
const EXIT_EXHAUSTED: u8 = 3;
const EXIT_SOLVER: u8 = 4;

/// Tolerance for plan verification, meters and meters per second.
const VERIFY_TOL: f64 = 1e-6;

#[derive(Parser)]
#[command(name = "deconflict", version, about = "Multi-UAV trajectory deconfliction toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a random scenario file
    Gen(GenArgs),
    /// Plan a scenario and verify the plan
    Plan(PlanArgs),
    /// Fly one mission with GPS error and report its metrics
    Simulate(SimulateArgs),
    /// Run a Monte-Carlo parameter sweep
    Sweep(SweepArgs),
    /// Summarize a sweep CSV: statistics, trend fits and charts
    Report(ReportArgs),
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, default_value_t = 10)]
    uavs: usize,
    /// Area surface in square meters (square area)
    #[arg(long, default_value_t = 10_000.0)]
    area: f64,
    /// GPS error radius of every UAV, meters
    #[arg(long, default_value_t = 5.0)]
    gps_error: f64,
    #[arg(long, default_value_t = 15.0)]
    v_max: f64,
    #[arg(long, default_value_t = 1.0)]
    dt: f64,
    #[arg(long, default_value_t = 20)]
    slots: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Endpoint standard deviation as a fraction of the side
    #[arg(long, default_value_t = 0.25)]
    sigma_fraction: f64,
    /// Allow overlapping starts or goals (baseline-only scenarios)
    #[arg(long)]
    no_endpoint_separation: bool,
    #[arg(short, long)]
    out: PathBuf,
}

#[derive(Args)]
struct PlanArgs {
    scenario: PathBuf,
    #[arg(long, default_value = "signed-l1")]
    mode: SeparationMode,
    /// `full` or `receding:H`
    #[arg(long, default_value = "full", value_parser = parse_horizon)]
    horizon: Horizon,
    #[arg(short, long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    run_id: u64,
    /// Iteration cap of each QP solve
    #[arg(long)]
    max_iterations: Option<usize>,
}

#[derive(Args)]
struct SimulateArgs {
    scenario: PathBuf,
    /// baseline, literal, signed-l1 or scp
    #[arg(long, default_value = "signed-l1")]
    mode: RunMode,
    #[arg(long, default_value = "max-energy")]
    strategy: ChStrategy,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "full", value_parser = parse_horizon)]
    horizon: Horizon,
    /// Reported positions and velocities per slot
    #[arg(long)]
    log: Option<PathBuf>,
    /// One-row metrics CSV
    #[arg(long)]
    metrics: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    /// uavs, area or gps-error
    #[arg(long)]
    param: SweptParam,
    #[arg(long, value_delimiter = ',', required = true)]
    values: Vec<f64>,
    #[arg(long, default_value_t = 30)]
    runs: usize,
    #[arg(long, default_value = "signed-l1")]
    mode: RunMode,
    #[arg(long, default_value_t = FixedParams::default().num_uavs)]
    uavs: usize,
    #[arg(long, default_value_t = FixedParams::default().area_surface)]
    area: f64,
    #[arg(long, default_value_t = FixedParams::default().gps_error)]
    gps_error: f64,
    #[arg(long, default_value_t = FixedParams::default().v_max)]
    v_max: f64,
    #[arg(long, default_value_t = FixedParams::default().dt)]
    dt: f64,
    #[arg(long, default_value_t = FixedParams::default().num_slots)]
    slots: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Require separated endpoints; defaults to on for avoidance modes only
    #[arg(long)]
    endpoint_separation: Option<bool>,
    #[arg(long, default_value_t = 0.25)]
    sigma_fraction: f64,
    #[arg(long, default_value = "max-energy")]
    strategy: ChStrategy,
    #[arg(long, default_value = "full", value_parser = parse_horizon)]
    horizon: Horizon,
    /// Worker threads (defaults to one per core)
    #[arg(long, env = "DECONFLICT_THREADS")]
    threads: Option<usize>,
    #[arg(short, long)]
    out: PathBuf,
    /// Also write one chart per metric into this directory
    #[arg(long)]
    chart: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    input: PathBuf,
    /// Directory for the charts
    #[arg(long)]
    out_dir: PathBuf,
}

fn parse_horizon(s: &str) -> Result<Horizon, String> {
    if s == "full" {
        return Ok(Horizon::Full);
    }
    match s.strip_prefix("receding:").map(str::parse::<usize>) {
        Some(Ok(h)) if h >= 1 => Ok(Horizon::Receding(h)),
        _ => Err(format!("expected `full` or `receding:H` with H >= 1, got {s:?}")),
    }
}

/// Maps a failure to the documented exit codes.
fn exit_code(err: &anyhow::Error) -> u8 {
    let Some(e) = err.chain().find_map(|c| c.downcast_ref::<Error>()) else {
        return EXIT_MALFORMED;
    };
    match e {
        Error::ScenarioInfeasible(_) | Error::DegenerateReferencePair(..) => EXIT_INFEASIBLE,
        Error::GenerationExhausted(_) => EXIT_EXHAUSTED,
        Error::SolverFailure { .. } => EXIT_SOLVER,
        _ => EXIT_MALFORMED,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_MALFORMED) } else { ExitCode::SUCCESS };
        }
    };
    let outcome = match cli.command {
        Command::Gen(a) => cmd_gen(a),
        Command::Plan(a) => cmd_plan(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Report(a) => cmd_report(a),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn load_scenario(path: &Path) -> anyhow::Result<ScenarioFile> {
    ScenarioFile::load(path).with_context(|| format!("loading {}", path.display()))
}

fn cmd_gen(a: GenArgs) -> anyhow::Result<ExitCode> {
    let spec = GenSpec {
        num_uavs: a.uavs,
        area_surface: a.area,
        gps_error: a.gps_error,
        v_max: a.v_max,
        dt: a.dt,
        num_slots: a.slots,
        seed: a.seed,
        sigma_fraction: a.sigma_fraction,
        endpoint_separation: !a.no_endpoint_separation,
    };
    let scenario = generate_scenario(&spec)?;
    let file = ScenarioFile { scenario, endpoint_separation: spec.endpoint_separation };
    file.save(&a.out)?;
    println!(
        "wrote {} UAVs in a {:.1} x {:.1} m area to {}",
        file.scenario.num_uavs(),
        file.scenario.area_width,
        file.scenario.area_height,
        a.out.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_plan(a: PlanArgs) -> anyhow::Result<ExitCode> {
    let file = load_scenario(&a.scenario)?;
    let sc = &file.scenario;
    let request = PlanRequest::new(sc, a.mode).with_horizon(a.horizon);
    let mut settings = ScpSettings::default();
    if let Some(n) = a.max_iterations {
        settings.qp.max_iter = n;
    }
    let swarm = match a.horizon {
        Horizon::Full => plan(&request, &settings)?,
        Horizon::Receding(_) => plan_receding(&request, &settings)?,
    };
    let report = verify_plan(&swarm, sc, VERIFY_TOL)?;
    io::write_atomic(&a.out, &io::plan_csv(&io::plan_rows(a.run_id, &swarm.trajectories))?)?;

    let literal = a.mode == SeparationMode::Literal;
    let mark = |ok: bool| if ok { "ok" } else { "FAILED" };
    println!("mode {}, {} UAVs, {} slots, objective {:.6}", a.mode, sc.num_uavs(), sc.num_slots, swarm.objective_value);
    println!(
        "separation  {:<6} min slack {:.3e} m{}",
        mark(report.separation_ok),
        report.min_separation_slack,
        if literal { " (not enforced in literal mode)" } else { "" }
    );
    println!("endpoints   {:<6} max error {:.3e} m", mark(report.endpoints_ok), report.max_endpoint_error);
    println!("velocity    {:<6} max excess {:.3e} m/s", mark(report.velocity_ok), report.max_velocity_excess);
    println!("kinematics  {:<6} max error {:.3e} m", mark(report.kinematics_ok), report.max_kinematic_error);
    let st = &swarm.solver_stats;
    println!("solver: {} solves, {} iterations, {:.3} s", st.solves, st.iterations, st.wall_time_s);
    let passed = report.endpoints_ok && report.velocity_ok && report.kinematics_ok && (literal || report.separation_ok);
    println!("verification {}", if passed { "PASSED" } else { "FAILED" });
    Ok(if passed { ExitCode::SUCCESS } else { ExitCode::from(EXIT_INFEASIBLE) })
}

fn cmd_simulate(a: SimulateArgs) -> anyhow::Result<ExitCode> {
    let file = load_scenario(&a.scenario)?;
    let sc = &file.scenario;
    let log = run_scenario(sc, a.mode, a.strategy, a.horizon, a.seed)?;
    let m = measure(&log, sc)?;
    if let Some(path) = &a.log {
        io::write_atomic(path, &io::plan_csv(&io::plan_rows(a.seed, &log.trajectories()))?)?;
    }
    if let Some(path) = &a.metrics {
        let row = MetricsRow {
            run_id: a.seed.to_string(),
            swept_param: SweptParam::NumUavs.name().into(),
            value: sc.num_uavs() as f64,
            pair_slot_collisions: m.pair_slot_collisions as f64,
            distinct_pair_collisions: m.distinct_pair_collisions as f64,
            mean_extra_distance: m.mean_extra_distance,
            total_planning_time_s: m.total_planning_time_s,
            completed: u64::from(m.completed),
        };
        io::write_atomic(path, &io::metrics_csv(&[row])?)?;
    }
    println!("mode {}, {} UAVs, cluster head {}", a.mode, sc.num_uavs(), log.cluster_head);
    println!("pair-slot collisions     {}", m.pair_slot_collisions);
    println!("distinct pair collisions {}", m.distinct_pair_collisions);
    println!("mean extra distance      {:.3} m", m.mean_extra_distance);
    println!("planning time            {:.3} s", m.total_planning_time_s);
    println!("completed                {}", m.completed);
    if let Some(f) = &log.failure {
        eprintln!("mission stopped at slot {}: {}", f.slot, f.message);
        return Ok(ExitCode::from(match f.kind {
            FailureKind::Solver => EXIT_SOLVER,
            FailureKind::Infeasible => EXIT_INFEASIBLE,
        }));
    }
    Ok(if m.completed { ExitCode::SUCCESS } else { ExitCode::from(EXIT_INFEASIBLE) })
}

fn cmd_sweep(a: SweepArgs) -> anyhow::Result<ExitCode> {
    let mut spec = SweepSpec::new(a.param, a.values, a.mode);
    spec.fixed = FixedParams {
        num_uavs: a.uavs,
        area_surface: a.area,
        gps_error: a.gps_error,
        dt: a.dt,
        num_slots: a.slots,
        v_max: a.v_max,
    };
    spec.runs_per_point = a.runs;
    spec.base_seed = a.seed;
    if let Some(sep) = a.endpoint_separation {
        spec.endpoint_separation = sep;
    }
    spec.sigma_fraction = a.sigma_fraction;
    spec.strategy = a.strategy;
    spec.horizon = a.horizon;
    spec.threads = a.threads;
    let result = sweep(&spec)?;
    let rows = io::sweep_rows(&result);
    io::write_atomic(&a.out, &io::metrics_csv(&rows)?)?;
    let failed = result.rows.iter().filter(|r| !r.metrics.completed).count();
    println!("wrote {} runs over {} values to {} ({failed} incomplete)", result.rows.len(), result.summaries.len(), a.out.display());
    if let Some(dir) = &a.chart {
        write_charts(dir, &summarize(&rows)?)?;
    }
    Ok(ExitCode::SUCCESS)
}

type Metric = (&'static str, &'static str, fn(&MetricsRow) -> f64);

const METRICS: [Metric; 4] = [
    ("pair_slot_collisions", "pair-slot collisions", |r| r.pair_slot_collisions),
    ("distinct_pair_collisions", "distinct pair collisions", |r| r.distinct_pair_collisions),
    ("mean_extra_distance", "mean extra distance (m)", |r| r.mean_extra_distance),
    ("total_planning_time_s", "planning time (s)", |r| r.total_planning_time_s),
];

/// Statistics of one swept value, recomputed from the raw rows.
struct ValueStats {
    value: f64,
    runs: usize,
    completed: usize,
    mean: [f64; 4],
    std_dev: [f64; 4],
}

struct Summary {
    param: String,
    values: Vec<ValueStats>,
}

fn summarize(rows: &[MetricsRow]) -> anyhow::Result<Summary> {
    let raw: Vec<&MetricsRow> = rows.iter().filter(|r| !r.is_aggregate()).collect();
    let Some(first) = raw.first() else { bail!(Error::Parse("sweep CSV has no run rows".into())) };
    let param = first.swept_param.clone();
    if raw.iter().any(|r| r.swept_param != param) {
        bail!(Error::Parse("sweep CSV mixes swept parameters".into()));
    }
    let mut order: Vec<f64> = Vec::new();
    for r in &raw {
        if !order.iter().any(|v| v.to_bits() == r.value.to_bits()) {
            order.push(r.value);
        }
    }
    let values = order
        .into_iter()
        .map(|value| {
            let mine: Vec<&&MetricsRow> = raw.iter().filter(|r| r.value.to_bits() == value.to_bits()).collect();
            let done: Vec<&&MetricsRow> = mine.iter().copied().filter(|r| r.completed == 1).collect();
            let n = done.len();
            let mut mean = [f64::NAN; 4];
            let mut std_dev = [0.0; 4];
            for (j, (_, _, pick)) in METRICS.iter().enumerate() {
                if n > 0 {
                    mean[j] = done.iter().map(|r| pick(r)).sum::<f64>() / n as f64;
                }
                if n > 1 {
                    let ss: f64 = done.iter().map(|r| (pick(r) - mean[j]).powi(2)).sum();
                    std_dev[j] = (ss / (n - 1) as f64).sqrt();
                }
            }
            ValueStats { value, runs: mine.len(), completed: n, mean, std_dev }
        })
        .collect();
    Ok(Summary { param, values })
}

fn write_charts(dir: &Path, summary: &Summary) -> anyhow::Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    for (j, (key, title, _)) in METRICS.iter().enumerate() {
        let points: Vec<chart::Point> = summary
            .values
            .iter()
            .map(|v| chart::Point { x: v.value, mean: v.mean[j], std_dev: v.std_dev[j] })
            .collect();
        let svg = chart::line_chart(&format!("{title} vs {}", summary.param), &summary.param, title, &points);
        let path = dir.join(format!("{}_{key}.svg", summary.param));
        io::write_atomic(&path, svg.as_bytes())?;
    }
    Ok(())
}

fn cmd_report(a: ReportArgs) -> anyhow::Result<ExitCode> {
    let data = std::fs::read(&a.input).with_context(|| format!("reading {}", a.input.display()))?;
    let rows = io::read_metrics_csv(&data)?;
    let summary = summarize(&rows)?;
    write_charts(&a.out_dir, &summary)?;
    println!("swept parameter: {}", summary.param);
    for (j, (key, _, _)) in METRICS.iter().enumerate() {
        println!("\n{key}");
        println!("{:>12} {:>5} {:>9} {:>14} {:>14}", "value", "runs", "completed", "mean", "std dev");
        for v in &summary.values {
            println!("{:>12} {:>5} {:>9} {:>14.6} {:>14.6}", v.value, v.runs, v.completed, v.mean[j], v.std_dev[j]);
        }
        let (xs, ys): (Vec<f64>, Vec<f64>) =
            summary.values.iter().filter(|v| v.mean[j].is_finite()).map(|v| (v.value, v.mean[j])).unzip();
        for model in [TrendModel::Linear, TrendModel::Quadratic] {
            let name = if model == TrendModel::Linear { "linear" } else { "quadratic" };
            match fit_trend(&xs, &ys, model) {
                Ok(fit) => {
                    let coef: Vec<String> = fit.coefficients.iter().map(|c| format!("{c:.6e}")).collect();
                    println!("  {name:<9} R^2 = {:.6}  coefficients [{}]", fit.r_squared, coef.join(", "));
                }
                Err(e) => println!("  {name:<9} not fitted: {e}"),
            }
        }
    }
    println!("\ncharts written to {}", a.out_dir.display());
    Ok(ExitCode::SUCCESS)
}
