//! Trajectory planning: builds the swarm QP in one of three separation
//! encodings, solves it and extracts plans.
//!
//! * `Literal` keeps the published pairwise auxiliary rows. They never
//!   exclude a configuration (see [`literal_feasibility_probe`]), so plans in
//!   this mode carry no separation guarantee.
//! * `SignedL1` fixes, per pair and slot, the quadrant of the displacement
//!   from a reference plan and requires its L1 norm to reach `√2·d`, which
//!   implies Euclidean distance `d`.
//! * `Scp` linearizes the distance constraint around the reference and
//!   re-solves until the plan stops moving. Each iterate is feasible.

mod build;
mod layout;

use std::borrow::Cow;
use std::time::Instant;

pub use build::{build_model, PlanModel};
pub use layout::{AuxComponent, Component, VariableLayout};

use crate::geom::Vec2;
use crate::model::{pairs, Scenario, SolverStats, SwarmPlan, Trajectory};
use crate::qp::{solve, solve_warm, CscMatrix, QpProblem, QpSettings, QpSolution, QpStatus};
use crate::{Error, Result};
use build::{literal_rows, primal_from_plan, Coord, RowBuilder};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum SeparationMode {
    Literal,
    SignedL1,
    Scp,
}

impl std::str::FromStr for SeparationMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "literal" => Ok(Self::Literal),
            "signedl1" | "l1" => Ok(Self::SignedL1),
            "scp" => Ok(Self::Scp),
            _ => Err(Error::Parse(format!("unknown separation mode {s:?}"))),
        }
    }
}

impl std::fmt::Display for SeparationMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Literal => "literal",
            Self::SignedL1 => "signed-l1",
            Self::Scp => "scp",
        })
    }
}

/// Weight of the squared distance between a receding window's last planned
/// position and its waypoint, relative to the squared step lengths.
pub const RECEDING_TERMINAL_WEIGHT: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Horizon {
    Full,
    /// Window of this many slots, clipped at the final slot.
    Receding(usize),
}

/// What to do when two UAVs coincide in the reference plan, leaving the
/// separating direction undefined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DegenerateDirectionRule {
    /// Perpendicular to the pair's relative motion through the meeting
    /// point, so the two pass on opposite sides. Falls back to `PairRank`
    /// when they do not move relative to each other.
    #[default]
    RelativeVelocity,
    /// Fixed angle `2π·rank/P` from the pair's rank in the pair order.
    PairRank,
    /// Report [`Error::DegenerateReferencePair`].
    Disabled,
}

#[derive(Debug, Clone)]
pub struct PlanRequest<'a> {
    pub scenario: &'a Scenario,
    pub mode: SeparationMode,
    pub horizon: Horizon,
    pub start_slot: usize,
    /// Positions at `start_slot`.
    pub current_positions: Vec<Vec2>,
    /// Added to every required center distance, meters.
    pub safety_margin: f64,
    /// Sides of the polygon approximating the speed disc.
    pub polygon_sides: usize,
    pub degenerate_rule: DegenerateDirectionRule,
}

impl<'a> PlanRequest<'a> {
    pub const DEFAULT_SAFETY_MARGIN: f64 = 1e-3;
    pub const DEFAULT_POLYGON_SIDES: usize = 16;

    /// Full-horizon request from the scenario's start positions.
    pub fn new(scenario: &'a Scenario, mode: SeparationMode) -> Self {
        Self {
            scenario,
            mode,
            horizon: Horizon::Full,
            start_slot: 0,
            current_positions: scenario.uavs.iter().map(|u| u.start).collect(),
            safety_margin: Self::DEFAULT_SAFETY_MARGIN,
            polygon_sides: Self::DEFAULT_POLYGON_SIDES,
            degenerate_rule: DegenerateDirectionRule::default(),
        }
    }

    /// Request that replans from `positions` at `slot`.
    pub fn from_state(scenario: &'a Scenario, mode: SeparationMode, slot: usize, positions: Vec<Vec2>) -> Self {
        Self { start_slot: slot, current_positions: positions, ..Self::new(scenario, mode) }
    }

    pub fn with_horizon(mut self, horizon: Horizon) -> Self {
        self.horizon = horizon;
        self
    }

    pub(crate) fn check(&self) -> Result<()> {
        let k = self.scenario.num_uavs();
        if k == 0 {
            return Err(Error::EmptySwarm);
        }
        if self.start_slot >= self.scenario.num_slots {
            return Err(Error::InvalidScenario(format!(
                "start slot {} is not before the final slot {}",
                self.start_slot, self.scenario.num_slots
            )));
        }
        if self.current_positions.len() != k {
            return Err(Error::DimensionMismatch(format!(
                "{} current positions for {k} UAVs",
                self.current_positions.len()
            )));
        }
        if self.current_positions.iter().any(|p| !p.is_finite()) {
            return Err(Error::InvalidScenario("non-finite current position".into()));
        }
        if self.horizon == Horizon::Receding(0) {
            return Err(Error::InvalidScenario("receding window must cover at least one slot".into()));
        }
        if self.polygon_sides < 3 {
            return Err(Error::InvalidScenario("speed polygon needs at least 3 sides".into()));
        }
        if !(self.safety_margin >= 0.0 && self.safety_margin.is_finite()) {
            return Err(Error::InvalidScenario("safety margin must be finite and non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct ScpSettings {
    pub max_outer: usize,
    /// Stop once no position moves more than this between iterates, meters.
    pub convergence_tol: f64,
    pub qp: QpSettings,
}

impl Default for ScpSettings {
    fn default() -> Self {
        Self { max_outer: 20, convergence_tol: 1e-3, qp: QpSettings::default() }
    }
}

/// Every UAV moves from its start to its goal in equal steps.
pub fn straight_line_reference(scenario: &Scenario) -> SwarmPlan {
    let starts: Vec<Vec2> = scenario.uavs.iter().map(|u| u.start).collect();
    straight_line_from(scenario, 0, &starts)
}

/// Equal steps from `positions` at `slot` to the goals at the final slot.
pub fn straight_line_from(scenario: &Scenario, slot: usize, positions: &[Vec2]) -> SwarmPlan {
    let remaining = scenario.num_slots.saturating_sub(slot);
    let trajectories = scenario
        .uavs
        .iter()
        .zip(positions)
        .map(|(u, &p)| {
            let pts = (0..=remaining)
                .map(|i| if i == remaining { u.goal } else { p.lerp(u.goal, i as f64 / remaining as f64) })
                .collect();
            Trajectory::from_positions(u.id, slot, pts, scenario.dt)
        })
        .collect();
    SwarmPlan::from_trajectories(trajectories, SolverStats::default())
}

/// Plans from the straight-line reference.
pub fn plan(request: &PlanRequest<'_>, settings: &ScpSettings) -> Result<SwarmPlan> {
    plan_with_reference(request, settings, None)
}

/// Plans using `reference` (which must cover the request window) to pick
/// separating directions and to warm-start the solver. Falls back to the
/// straight line from the current positions.
pub fn plan_with_reference(
    request: &PlanRequest<'_>,
    settings: &ScpSettings,
    reference: Option<&SwarmPlan>,
) -> Result<SwarmPlan> {
    let started = Instant::now();
    request.check()?;
    let sc = request.scenario;
    sc.validate().map_err(|e| Error::ScenarioInfeasible(e.to_string()))?;
    if settings.max_outer == 0 || !(settings.convergence_tol > 0.0) {
        return Err(Error::InvalidScenario("SCP needs max_outer >= 1 and convergence_tol > 0".into()));
    }
    let reference = covering_reference(sc, request, reference);
    let reference: &SwarmPlan = &reference;
    let mut stats = SolverStats::default();

    let mut plan = match request.mode {
        SeparationMode::Literal | SeparationMode::SignedL1 => {
            let model = build_model(request, Some(reference))?;
            let x0 = primal_from_plan(&model, reference);
            let y0 = vec![0.0; model.problem.m()];
            let warm = x0.as_deref().map(|x| (x, y0.as_slice()));
            let sol = solve_model(&model, &settings.qp, warm, &mut stats)?;
            extract(request, &model, &sol)
        }
        SeparationMode::Scp => {
            let mut current = reference.clone();
            let mut last: Option<QpSolution> = None;
            for _ in 0..settings.max_outer {
                let model = build_model(request, Some(&current))?;
                let x0 = primal_from_plan(&model, &current);
                let zeros = vec![0.0; model.problem.m()];
                let warm = match (&last, &x0) {
                    (Some(s), _) => Some((s.x.as_slice(), s.y.as_slice())),
                    (None, Some(x)) => Some((x.as_slice(), zeros.as_slice())),
                    (None, None) => None,
                };
                let sol = solve_model(&model, &settings.qp, warm, &mut stats)?;
                let next = extract(request, &model, &sol);
                let change = max_position_change(&next, &current, model.start_slot + 1, model.end_slot);
                current = next;
                last = Some(sol);
                if change < settings.convergence_tol {
                    break;
                }
            }
            current
        }
    };

    if request.mode != SeparationMode::Literal {
        let slack = window_separation_slack(&plan, sc);
        if !(slack > 0.0) {
            return Err(Error::ScenarioInfeasible(format!(
                "planned trajectories overlap (worst center-distance slack {slack:.3e} m)"
            )));
        }
    }
    stats.wall_time_s = started.elapsed().as_secs_f64();
    plan.solver_stats = stats;
    Ok(plan)
}

/// Full-mission plan under a receding horizon: plans a window from every
/// slot and commits its first step, as a replanning mission with exact
/// positioning would.
pub fn plan_receding(request: &PlanRequest<'_>, settings: &ScpSettings) -> Result<SwarmPlan> {
    let sc = request.scenario;
    if request.start_slot != 0 {
        return Err(Error::DimensionMismatch("receding plans start at slot 0".into()));
    }
    let mut positions: Vec<Vec<Vec2>> = vec![request.current_positions.clone()];
    let mut stats = SolverStats::default();
    let mut previous: Option<SwarmPlan> = None;
    for slot in 0..sc.num_slots {
        let window = PlanRequest {
            start_slot: slot,
            current_positions: positions[slot].clone(),
            ..request.clone()
        };
        let plan = plan_with_reference(&window, settings, previous.as_ref())?;
        stats.solves += plan.solver_stats.solves;
        stats.iterations += plan.solver_stats.iterations;
        stats.primal_residual = plan.solver_stats.primal_residual;
        stats.dual_residual = plan.solver_stats.dual_residual;
        stats.wall_time_s += plan.solver_stats.wall_time_s;
        positions.push(plan.trajectories.iter().map(|t| t.positions[1]).collect());
        previous = Some(plan);
    }
    let trajectories = sc
        .uavs
        .iter()
        .enumerate()
        .map(|(k, u)| Trajectory::from_positions(u.id, 0, positions.iter().map(|p| p[k]).collect(), sc.dt))
        .collect();
    Ok(SwarmPlan::from_trajectories(trajectories, stats))
}

/// A reference over slots `start_slot..=F`: the given plan where it covers
/// a slot, continued in a straight line to the goal beyond its end, and the
/// straight line from the current positions when it is absent or starts
/// too late.
fn covering_reference<'p>(sc: &Scenario, request: &PlanRequest<'_>, reference: Option<&'p SwarmPlan>) -> Cow<'p, SwarmPlan> {
    let start = request.start_slot;
    let f = sc.num_slots;
    let usable = reference.filter(|r| r.num_uavs() == sc.num_uavs() && r.start_slot() <= start && r.end_slot() >= start);
    let Some(r) = usable else {
        return Cow::Owned(straight_line_from(sc, start, &request.current_positions));
    };
    if r.end_slot() >= f {
        return Cow::Borrowed(r);
    }
    let trajectories = r
        .trajectories
        .iter()
        .zip(&sc.uavs)
        .map(|(t, u)| {
            let (end, last) = (t.end_slot(), t.last());
            let remaining = (f - end) as f64;
            let pts = (start..=f)
                .map(|slot| match t.at_slot(slot) {
                    Some(p) => p,
                    None if slot == f => u.goal,
                    None => last.lerp(u.goal, (slot - end) as f64 / remaining),
                })
                .collect();
            Trajectory::from_positions(t.uav_id, start, pts, sc.dt)
        })
        .collect();
    Cow::Owned(SwarmPlan::from_trajectories(trajectories, SolverStats::default()))
}

fn solve_model(
    model: &PlanModel,
    settings: &QpSettings,
    warm: Option<(&[f64], &[f64])>,
    stats: &mut SolverStats,
) -> Result<QpSolution> {
    let sol = solve_warm(&model.problem, settings, warm)?;
    stats.solves += 1;
    stats.iterations += sol.iterations;
    stats.primal_residual = sol.primal_residual;
    stats.dual_residual = sol.dual_residual;
    match sol.status {
        QpStatus::Solved => Ok(sol),
        QpStatus::PrimalInfeasible => {
            Err(Error::ScenarioInfeasible("the trajectory model has no feasible point".into()))
        }
        status => Err(Error::SolverFailure { status, iterations: sol.iterations }),
    }
}

/// Reads positions out of a solution. Velocities are re-derived from the
/// positions so the kinematic relation holds exactly, and final positions
/// are snapped to the goals.
fn extract(request: &PlanRequest<'_>, model: &PlanModel, sol: &QpSolution) -> SwarmPlan {
    let sc = request.scenario;
    let layout = &model.layout;
    let trajectories = (0..layout.num_uavs)
        .map(|k| {
            let mut pts = Vec::with_capacity(layout.num_steps + 1);
            pts.push(request.current_positions[k]);
            for step in 0..layout.num_steps {
                pts.push(Vec2::new(
                    sol.x[layout.var(k, step, Component::X)],
                    sol.x[layout.var(k, step, Component::Y)],
                ));
            }
            if model.end_slot == sc.num_slots {
                *pts.last_mut().unwrap() = sc.uavs[k].goal;
            }
            Trajectory::from_positions(sc.uavs[k].id, model.start_slot, pts, sc.dt)
        })
        .collect();
    SwarmPlan::from_trajectories(trajectories, SolverStats::default())
}

fn max_position_change(a: &SwarmPlan, b: &SwarmPlan, first: usize, last: usize) -> f64 {
    let mut worst = 0.0f64;
    for (ta, tb) in a.trajectories.iter().zip(&b.trajectories) {
        for slot in first..=last {
            match (ta.at_slot(slot), tb.at_slot(slot)) {
                (Some(p), Some(q)) => worst = worst.max(p.distance(q)),
                _ => return f64::INFINITY,
            }
        }
    }
    worst
}

/// Smallest `distance - (r_k + r_l)` over all pairs and the slots after the
/// plan's first one; `+∞` without pairs.
fn window_separation_slack(plan: &SwarmPlan, sc: &Scenario) -> f64 {
    let mut worst = f64::INFINITY;
    for (k, l) in pairs(plan.num_uavs()) {
        let need = sc.uavs[k].gps_error_radius + sc.uavs[l].gps_error_radius;
        let (a, b) = (&plan.trajectories[k], &plan.trajectories[l]);
        for (pa, pb) in a.positions.iter().zip(&b.positions).skip(1) {
            worst = worst.min(pa.distance(*pb) - need);
        }
    }
    worst
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VerificationReport {
    pub separation_ok: bool,
    pub endpoints_ok: bool,
    pub velocity_ok: bool,
    pub kinematics_ok: bool,
    /// Smallest center distance minus the sum of radii (`+∞` for one UAV).
    pub min_separation_slack: f64,
    pub max_endpoint_error: f64,
    /// Largest `‖v‖ - v_max` (negative when every slot is under the cap).
    pub max_velocity_excess: f64,
    pub max_kinematic_error: f64,
}

impl VerificationReport {
    pub fn all_ok(&self) -> bool {
        self.separation_ok && self.endpoints_ok && self.velocity_ok && self.kinematics_ok
    }
}

/// Checks a full-mission plan against the scenario.
pub fn verify_plan(plan: &SwarmPlan, scenario: &Scenario, eps: f64) -> Result<VerificationReport> {
    let k = scenario.num_uavs();
    let f = scenario.num_slots;
    if plan.num_uavs() != k {
        return Err(Error::DimensionMismatch(format!("plan has {} UAVs, scenario has {k}", plan.num_uavs())));
    }
    for (i, t) in plan.trajectories.iter().enumerate() {
        if t.start_slot != 0 || t.positions.len() != f + 1 || t.velocities.len() != f {
            return Err(Error::DimensionMismatch(format!(
                "trajectory {i} covers slots {}..={} with {} positions, expected 0..={f}",
                t.start_slot,
                t.end_slot(),
                t.positions.len()
            )));
        }
    }
    let mut endpoint = 0.0f64;
    let mut excess = f64::NEG_INFINITY;
    let mut kin = 0.0f64;
    for (t, u) in plan.trajectories.iter().zip(&scenario.uavs) {
        endpoint = endpoint.max(t.first().distance(u.start)).max(t.last().distance(u.goal));
        for (i, v) in t.velocities.iter().enumerate() {
            excess = excess.max(v.norm() - u.v_max);
            kin = kin.max((t.positions[i] + *v * scenario.dt).distance(t.positions[i + 1]));
        }
    }
    let mut slack = f64::INFINITY;
    for (a, b) in pairs(k) {
        let need = scenario.uavs[a].gps_error_radius + scenario.uavs[b].gps_error_radius;
        for (pa, pb) in plan.trajectories[a].positions.iter().zip(&plan.trajectories[b].positions) {
            slack = slack.min(pa.distance(*pb) - need);
        }
    }
    let ok = |v: f64| v <= eps;
    Ok(VerificationReport {
        separation_ok: slack > 0.0,
        endpoints_ok: ok(endpoint),
        velocity_ok: excess <= eps,
        kinematics_ok: ok(kin),
        min_separation_slack: slack,
        max_endpoint_error: endpoint,
        max_velocity_excess: excess,
        max_kinematic_error: kin,
    })
}

/// Whether the literal pairwise rows admit auxiliary values for the given
/// fixed positions. Solved as a feasibility QP over the auxiliaries alone.
///
/// # Panics
/// If `positions` and `radii` differ in length.
pub fn literal_feasibility_probe(positions: &[Vec2], radii: &[f64]) -> bool {
    assert_eq!(positions.len(), radii.len(), "one radius per position");
    let num_pairs = crate::model::num_pairs(positions.len());
    if num_pairs == 0 {
        return true;
    }
    let n = 2 * num_pairs;
    let mut rows = RowBuilder::default();
    for (pair, (k, l)) in pairs(positions.len()).enumerate() {
        let fixed = |p: Vec2| [Coord::Fixed(p.x), Coord::Fixed(p.y)];
        literal_rows(&mut rows, fixed(positions[k]), fixed(positions[l]), [2 * pair, 2 * pair + 1], radii[k] + radii[l]);
    }
    let (a, lower, upper) = rows.finish(n);
    let problem = QpProblem::new(CscMatrix::identity(n), vec![0.0; n], a, lower, upper);
    matches!(solve(&problem, &QpSettings::default()), Ok(s) if s.status == QpStatus::Solved)
}

#[cfg(test)]
mod tests;
