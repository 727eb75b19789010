//! Per-run metrics, parameter sweeps and trend fits.

use nalgebra::{DMatrix, DVector};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::gen::{generate_scenario, GenSpec};
use crate::model::{extra_distance, Scenario};
use crate::planner::{Horizon, SeparationMode};
use crate::sim::{count_overlap_events, run_baseline, run_mission, ChStrategy, MissionConfig, MissionLog};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunMetrics {
    pub pair_slot_collisions: usize,
    pub distinct_pair_collisions: usize,
    /// NaN for runs that did not complete.
    pub mean_extra_distance: f64,
    pub total_extra_distance: f64,
    pub total_planning_time_s: f64,
    pub completed: bool,
}

impl RunMetrics {
    fn failed() -> Self {
        Self {
            pair_slot_collisions: 0,
            distinct_pair_collisions: 0,
            mean_extra_distance: f64::NAN,
            total_extra_distance: f64::NAN,
            total_planning_time_s: 0.0,
            completed: false,
        }
    }
}

/// Distance to the goal accepted when measuring extra distance.
const EXTRA_DISTANCE_EPS: f64 = 0.5;

pub fn measure(log: &MissionLog, scenario: &Scenario) -> Result<RunMetrics> {
    let k = scenario.num_uavs();
    if log.states.is_empty() || log.states.len() > scenario.num_slots + 1 {
        return Err(Error::MismatchedLog(format!(
            "{} logged slots for a {}-slot mission",
            log.states.len(),
            scenario.num_slots
        )));
    }
    if log.states.iter().any(|s| s.len() != k) {
        return Err(Error::MismatchedLog(format!("log does not hold {k} UAVs at every slot")));
    }
    if log.overlap_events.iter().any(|&(slot, a, b)| a >= b || b >= k || slot >= log.states.len()) {
        return Err(Error::MismatchedLog("overlap event outside the logged range".into()));
    }
    let (pair_slot_collisions, distinct_pair_collisions) = count_overlap_events(log);
    let total_extra_distance = if log.completed {
        let mut total = 0.0;
        for (traj, spec) in log.trajectories().iter().zip(&scenario.uavs) {
            total += extra_distance(traj, spec, EXTRA_DISTANCE_EPS)
                .map_err(|e| Error::MismatchedLog(e.to_string()))?;
        }
        total
    } else {
        f64::NAN
    };
    Ok(RunMetrics {
        pair_slot_collisions,
        distinct_pair_collisions,
        mean_extra_distance: total_extra_distance / k as f64,
        total_extra_distance,
        total_planning_time_s: log.total_planning_time_s(),
        completed: log.completed,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SweptParam {
    NumUavs,
    AreaSurface,
    GpsError,
}

impl SweptParam {
    pub fn name(self) -> &'static str {
        match self {
            Self::NumUavs => "uavs",
            Self::AreaSurface => "area",
            Self::GpsError => "gps-error",
        }
    }
}

impl std::str::FromStr for SweptParam {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uavs" | "num-uavs" => Ok(Self::NumUavs),
            "area" | "area-surface" => Ok(Self::AreaSurface),
            "gps-error" | "gps" => Ok(Self::GpsError),
            _ => Err(Error::Parse(format!("unknown sweep parameter {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunMode {
    /// Straight lines, no planning.
    Baseline,
    Avoidance(SeparationMode),
}

impl std::str::FromStr for RunMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        if s == "baseline" {
            Ok(Self::Baseline)
        } else {
            s.parse().map(Self::Avoidance)
        }
    }
}

impl std::fmt::Display for RunMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Baseline => f.write_str("baseline"),
            Self::Avoidance(m) => m.fmt(f),
        }
    }
}

/// Parameters held constant across a sweep; the swept one is overridden.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixedParams {
    pub num_uavs: usize,
    pub area_surface: f64,
    pub gps_error: f64,
    pub dt: f64,
    pub num_slots: usize,
    pub v_max: f64,
}

impl Default for FixedParams {
    fn default() -> Self {
        Self { num_uavs: 50, area_surface: 10_000.0, gps_error: 5.0, dt: 1.0, num_slots: 20, v_max: 15.0 }
    }
}

#[derive(Debug, Clone)]
pub struct SweepSpec {
    pub param: SweptParam,
    pub values: Vec<f64>,
    pub fixed: FixedParams,
    pub runs_per_point: usize,
    pub mode: RunMode,
    pub base_seed: u64,
    pub endpoint_separation: bool,
    pub sigma_fraction: f64,
    pub strategy: ChStrategy,
    pub horizon: Horizon,
    /// Worker threads; `None` uses the global pool.
    pub threads: Option<usize>,
}

impl SweepSpec {
    /// Defaults: 30 runs per point; endpoint separation only for avoidance
    /// runs, which need it to be feasible.
    pub fn new(param: SweptParam, values: Vec<f64>, mode: RunMode) -> Self {
        Self {
            param,
            values,
            fixed: FixedParams::default(),
            runs_per_point: 30,
            mode,
            base_seed: 0,
            endpoint_separation: mode != RunMode::Baseline,
            sigma_fraction: 0.25,
            strategy: ChStrategy::MaxEnergy,
            horizon: Horizon::Full,
            threads: None,
        }
    }

    fn check(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidSweep(m.into()));
        if self.values.is_empty() {
            return bad("no values");
        }
        if self.values.windows(2).any(|w| !(w[0] < w[1])) {
            return bad("values must be strictly increasing");
        }
        if self.runs_per_point == 0 {
            return bad("runs per point must be at least 1");
        }
        if self.param == SweptParam::NumUavs && self.values.iter().any(|v| v.fract() != 0.0 || *v < 1.0) {
            return bad("UAV counts must be positive integers");
        }
        if self.values.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return bad("values must be positive");
        }
        Ok(())
    }

    pub fn gen_spec(&self, value: f64, seed: u64) -> GenSpec {
        let f = &self.fixed;
        let mut g = GenSpec {
            num_uavs: f.num_uavs,
            area_surface: f.area_surface,
            gps_error: f.gps_error,
            v_max: f.v_max,
            dt: f.dt,
            num_slots: f.num_slots,
            seed,
            sigma_fraction: self.sigma_fraction,
            endpoint_separation: self.endpoint_separation,
        };
        match self.param {
            SweptParam::NumUavs => g.num_uavs = value as usize,
            SweptParam::AreaSurface => g.area_surface = value,
            SweptParam::GpsError => g.gps_error = value,
        }
        g
    }
}

/// Seed of one run, a function of the base seed and the run's position
/// only, so results do not depend on scheduling.
pub fn run_seed(base_seed: u64, value_index: usize, run_index: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(base_seed);
    rng.set_stream(((value_index as u64) << 32) | run_index as u64);
    rng.next_u64()
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub value_index: usize,
    pub run_index: usize,
    pub value: f64,
    pub seed: u64,
    pub metrics: RunMetrics,
    pub failure: Option<String>,
}

/// The numeric metric fields, used for means and deviations.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MetricValues {
    pub pair_slot_collisions: f64,
    pub distinct_pair_collisions: f64,
    pub mean_extra_distance: f64,
    pub total_extra_distance: f64,
    pub total_planning_time_s: f64,
}

impl MetricValues {
    fn of(m: &RunMetrics) -> Self {
        Self {
            pair_slot_collisions: m.pair_slot_collisions as f64,
            distinct_pair_collisions: m.distinct_pair_collisions as f64,
            mean_extra_distance: m.mean_extra_distance,
            total_extra_distance: m.total_extra_distance,
            total_planning_time_s: m.total_planning_time_s,
        }
    }

    fn as_array(&self) -> [f64; 5] {
        [
            self.pair_slot_collisions,
            self.distinct_pair_collisions,
            self.mean_extra_distance,
            self.total_extra_distance,
            self.total_planning_time_s,
        ]
    }

    fn from_array(a: [f64; 5]) -> Self {
        Self {
            pair_slot_collisions: a[0],
            distinct_pair_collisions: a[1],
            mean_extra_distance: a[2],
            total_extra_distance: a[3],
            total_planning_time_s: a[4],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointSummary {
    pub value: f64,
    pub runs: usize,
    pub completed: usize,
    /// Over completed runs; NaN when none completed.
    pub mean: MetricValues,
    /// Sample standard deviation over completed runs; 0 below two runs.
    pub std_dev: MetricValues,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub param: SweptParam,
    pub rows: Vec<RunRecord>,
    pub summaries: Vec<PointSummary>,
}

impl SweepResult {
    pub fn means(&self, pick: impl Fn(&MetricValues) -> f64) -> Vec<f64> {
        self.summaries.iter().map(|s| pick(&s.mean)).collect()
    }

    pub fn values(&self) -> Vec<f64> {
        self.summaries.iter().map(|s| s.value).collect()
    }
}

/// Mean and sample standard deviation of each metric over the completed
/// rows of each value, in the order of `values`. Rows are summed in run
/// order whatever order they are given in.
pub fn aggregate(values: &[f64], rows: &[RunRecord]) -> Vec<PointSummary> {
    let mut rows: Vec<&RunRecord> = rows.iter().collect();
    rows.sort_by_key(|r| (r.value_index, r.run_index));
    values
        .iter()
        .enumerate()
        .map(|(vi, &value)| {
            let mine: Vec<&RunRecord> = rows.iter().copied().filter(|r| r.value_index == vi).collect();
            let done: Vec<[f64; 5]> =
                mine.iter().filter(|r| r.metrics.completed).map(|r| MetricValues::of(&r.metrics).as_array()).collect();
            let n = done.len();
            let mut mean = [f64::NAN; 5];
            let mut sd = [0.0; 5];
            if n > 0 {
                for j in 0..5 {
                    mean[j] = done.iter().map(|a| a[j]).sum::<f64>() / n as f64;
                    if n > 1 {
                        let ss: f64 = done.iter().map(|a| (a[j] - mean[j]).powi(2)).sum();
                        sd[j] = (ss / (n - 1) as f64).sqrt();
                    }
                }
            }
            PointSummary {
                value,
                runs: mine.len(),
                completed: n,
                mean: MetricValues::from_array(mean),
                std_dev: MetricValues::from_array(sd),
            }
        })
        .collect()
}

/// One mission on a given scenario. GPS draws come from a stream of `seed`
/// separate from the one the generator uses.
pub fn run_scenario(
    scenario: &Scenario,
    mode: RunMode,
    strategy: ChStrategy,
    horizon: Horizon,
    seed: u64,
) -> Result<MissionLog> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    match mode {
        RunMode::Baseline => run_baseline(scenario, strategy, &mut rng),
        RunMode::Avoidance(mode) => {
            let config = MissionConfig { horizon, strategy, ..MissionConfig::new(mode) };
            run_mission(scenario, &config, &mut rng)
        }
    }
}

fn execute_run(spec: &SweepSpec, value_index: usize, run_index: usize) -> RunRecord {
    let value = spec.values[value_index];
    let seed = run_seed(spec.base_seed, value_index, run_index);
    let record = |metrics, failure| RunRecord { value_index, run_index, value, seed, metrics, failure };
    let scenario = match generate_scenario(&spec.gen_spec(value, seed)) {
        Ok(s) => s,
        Err(e) => return record(RunMetrics::failed(), Some(e.to_string())),
    };
    let log = run_scenario(&scenario, spec.mode, spec.strategy, spec.horizon, seed);
    match log.and_then(|log| Ok((measure(&log, &scenario)?, log.failure.map(|f| f.message)))) {
        Ok((metrics, failure)) => record(metrics, failure),
        Err(e) => record(RunMetrics::failed(), Some(e.to_string())),
    }
}

/// Runs every (value, run) pair, in parallel, and aggregates. Individual
/// run failures become incomplete rows.
pub fn sweep(spec: &SweepSpec) -> Result<SweepResult> {
    spec.check()?;
    let jobs: Vec<(usize, usize)> =
        (0..spec.values.len()).flat_map(|v| (0..spec.runs_per_point).map(move |r| (v, r))).collect();
    let run_all = || jobs.par_iter().map(|&(v, r)| execute_run(spec, v, r)).collect::<Vec<_>>();
    let mut rows = match spec.threads {
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .map_err(|e| Error::InvalidSweep(e.to_string()))?
            .install(run_all),
        None => run_all(),
    };
    rows.sort_by_key(|r| (r.value_index, r.run_index));
    let summaries = aggregate(&spec.values, &rows);
    Ok(SweepResult { param: spec.param, rows, summaries })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrendModel {
    Linear,
    Quadratic,
}

impl TrendModel {
    pub fn degree(self) -> usize {
        match self {
            Self::Linear => 1,
            Self::Quadratic => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrendFit {
    /// Highest power first.
    pub coefficients: Vec<f64>,
    pub r_squared: f64,
}

impl TrendFit {
    pub fn eval(&self, x: f64) -> f64 {
        self.coefficients.iter().fold(0.0, |acc, c| acc * x + c)
    }
}

/// Least-squares polynomial fit. Needs 3 points for a line and 4 for a
/// parabola, so that the fit is never trivially exact.
pub fn fit_trend(xs: &[f64], ys: &[f64], model: TrendModel) -> Result<TrendFit> {
    let degree = model.degree();
    let needed = degree + 2;
    if xs.len() != ys.len() {
        return Err(Error::DimensionMismatch(format!("{} xs for {} ys", xs.len(), ys.len())));
    }
    if xs.len() < needed {
        return Err(Error::InsufficientPoints { needed, got: xs.len() });
    }
    // Fit in centered, scaled coordinates u = (x - m) / s for conditioning.
    let n = xs.len();
    let m = xs.iter().sum::<f64>() / n as f64;
    let s = xs.iter().map(|x| (x - m).abs()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let design = DMatrix::from_fn(n, degree + 1, |i, j| ((xs[i] - m) / s).powi(j as i32));
    let rhs = DVector::from_column_slice(ys);
    let coef_u = design
        .clone()
        .svd(true, true)
        .solve(&rhs, 1e-12)
        .map_err(|e| Error::InvalidSweep(format!("least squares failed: {e}")))?;
    let fitted = &design * &coef_u;
    let mean_y = ys.iter().sum::<f64>() / n as f64;
    let ss_res: f64 = ys.iter().zip(fitted.iter()).map(|(y, f)| (y - f).powi(2)).sum();
    let ss_tot: f64 = ys.iter().map(|y| (y - mean_y).powi(2)).sum();
    let r_squared = if ss_tot == 0.0 { 1.0 } else { 1.0 - ss_res / ss_tot };

    // Expand Σ a_j ((x - m)/s)^j into powers of x (ascending, then reversed).
    let mut ascending = vec![0.0; degree + 1];
    let mut power = vec![1.0]; // coefficients of ((x - m)/s)^j, ascending
    for j in 0..=degree {
        for (i, p) in power.iter().enumerate() {
            ascending[i] += coef_u[j] * p;
        }
        let mut next = vec![0.0; power.len() + 1];
        for (i, p) in power.iter().enumerate() {
            next[i + 1] += p / s;
            next[i] -= p * m / s;
        }
        power = next;
    }
    ascending.reverse();
    Ok(TrendFit { coefficients: ascending, r_squared })
}
