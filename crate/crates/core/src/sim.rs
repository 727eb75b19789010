//! Slot-by-slot mission execution: the cluster head replans from the
//! current GPS readings every slot and commands one step; the baseline flies
//! straight lines without coordination.
//!
//! Execution model: each UAV tracks its commanded waypoints in GPS
//! coordinates, so the reported position follows the commanded velocity
//! exactly. The true position is then some point inside the GPS error disc
//! around the reported one, redrawn every slot. Overlaps are counted on the
//! reported discs.

use std::time::Instant;

use rand::Rng;

use crate::geom::{disc_overlap, sample_true_position, SafetyDisc, Vec2};
use crate::model::{pairs, Scenario, SolverStats, Trajectory, UavSpec};
use crate::planner::{
    plan_with_reference, straight_line_reference, DegenerateDirectionRule, Horizon, PlanRequest, ScpSettings,
    SeparationMode,
};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ChStrategy {
    #[default]
    MaxEnergy,
    /// Picks the UAV with the largest compute capacity.
    MinResponseTime,
}

impl std::str::FromStr for ChStrategy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "max-energy" => Ok(Self::MaxEnergy),
            "min-response" | "min-response-time" => Ok(Self::MinResponseTime),
            _ => Err(Error::Parse(format!("unknown cluster-head strategy {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UavState {
    pub reported_pos: Vec2,
    pub true_pos: Vec2,
    /// Velocity flown during the slot that ended here (zero at slot 0).
    pub velocity: Vec2,
    pub slot: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FailureKind {
    Infeasible,
    Solver,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MissionFailure {
    pub slot: usize,
    pub kind: FailureKind,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MissionLog {
    /// `states[slot][uav]`
    pub states: Vec<Vec<UavState>>,
    /// Planning wall time spent at each slot before moving.
    pub planning_time_s: Vec<f64>,
    /// `(slot, k, l)` with `k < l`.
    pub overlap_events: Vec<(usize, usize, usize)>,
    pub cluster_head: usize,
    pub completed: bool,
    pub failure: Option<MissionFailure>,
    pub solver_stats: SolverStats,
}

impl MissionLog {
    pub fn num_uavs(&self) -> usize {
        self.states.first().map_or(0, Vec::len)
    }

    pub fn total_planning_time_s(&self) -> f64 {
        self.planning_time_s.iter().sum()
    }

    /// Reported-position trajectory of each UAV over the logged slots.
    pub fn trajectories(&self) -> Vec<Trajectory> {
        (0..self.num_uavs())
            .map(|k| Trajectory {
                uav_id: k,
                start_slot: 0,
                positions: self.states.iter().map(|s| s[k].reported_pos).collect(),
                velocities: self.states.iter().skip(1).map(|s| s[k].velocity).collect(),
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct MissionConfig {
    pub mode: SeparationMode,
    pub horizon: Horizon,
    pub strategy: ChStrategy,
    /// Distance to the goal under which a UAV counts as arrived.
    pub eps_goal: f64,
    pub safety_margin: f64,
    pub degenerate_rule: DegenerateDirectionRule,
    pub scp: ScpSettings,
}

impl MissionConfig {
    pub fn new(mode: SeparationMode) -> Self {
        Self {
            mode,
            horizon: Horizon::Full,
            strategy: ChStrategy::default(),
            eps_goal: 0.5,
            safety_margin: PlanRequest::DEFAULT_SAFETY_MARGIN,
            degenerate_rule: DegenerateDirectionRule::default(),
            scp: ScpSettings::default(),
        }
    }
}

/// Ties go to the lowest id.
pub fn elect_cluster_head(uavs: &[UavSpec], strategy: ChStrategy) -> Result<usize> {
    let key = |u: &UavSpec| match strategy {
        ChStrategy::MaxEnergy => u.energy,
        ChStrategy::MinResponseTime => u.compute_capacity,
    };
    let mut best: Option<&UavSpec> = None;
    for u in uavs {
        if best.is_none_or(|b| key(u) > key(b) || (key(u) == key(b) && u.id < b.id)) {
            best = Some(u);
        }
    }
    best.map(|u| u.id).ok_or(Error::EmptySwarm)
}

fn initial_states<R: Rng + ?Sized>(scenario: &Scenario, rng: &mut R) -> Vec<UavState> {
    scenario
        .uavs
        .iter()
        .map(|u| UavState {
            reported_pos: u.start,
            true_pos: sample_true_position(u.start, u.gps_error_radius, rng),
            velocity: Vec2::ZERO,
            slot: 0,
        })
        .collect()
}

fn overlaps_at(scenario: &Scenario, slot: usize, states: &[UavState], out: &mut Vec<(usize, usize, usize)>) {
    for (k, l) in pairs(states.len()) {
        let a = SafetyDisc::new(states[k].reported_pos, scenario.uavs[k].gps_error_radius);
        let b = SafetyDisc::new(states[l].reported_pos, scenario.uavs[l].gps_error_radius);
        if disc_overlap(&a, &b) {
            out.push((slot, k, l));
        }
    }
}

/// Moves every UAV by its velocity for one slot and redraws true positions.
fn step<R: Rng + ?Sized>(scenario: &Scenario, prev: &[UavState], velocities: &[Vec2], rng: &mut R) -> Vec<UavState> {
    prev.iter()
        .zip(velocities)
        .zip(&scenario.uavs)
        .map(|((s, &v), u)| {
            let reported = s.reported_pos + v * scenario.dt;
            UavState {
                reported_pos: reported,
                true_pos: sample_true_position(reported, u.gps_error_radius, rng),
                velocity: v,
                slot: s.slot + 1,
            }
        })
        .collect()
}

fn arrived(scenario: &Scenario, states: &[UavState], eps_goal: f64) -> bool {
    states.iter().zip(&scenario.uavs).all(|(s, u)| s.reported_pos.distance(u.goal) <= eps_goal)
}

/// Runs the replanning loop. Invariant violations are reported before any
/// planning as [`Error::ScenarioInfeasible`]; a planner failure mid-mission
/// ends the log at that slot with `completed = false` and `failure` set.
pub fn run_mission<R: Rng + ?Sized>(scenario: &Scenario, config: &MissionConfig, rng: &mut R) -> Result<MissionLog> {
    scenario.validate().map_err(|e| Error::ScenarioInfeasible(e.to_string()))?;
    let cluster_head = elect_cluster_head(&scenario.uavs, config.strategy)?;
    let f = scenario.num_slots;
    let mut states = vec![initial_states(scenario, rng)];
    let mut planning_time_s = Vec::with_capacity(f);
    let mut overlap_events = Vec::new();
    let mut stats = SolverStats::default();
    let mut failure = None;
    let mut previous = None;
    overlaps_at(scenario, 0, &states[0], &mut overlap_events);

    for slot in 0..f {
        let current = states.last().expect("initial state");
        let request = PlanRequest {
            horizon: config.horizon,
            safety_margin: config.safety_margin,
            degenerate_rule: config.degenerate_rule,
            ..PlanRequest::from_state(scenario, config.mode, slot, current.iter().map(|s| s.reported_pos).collect())
        };
        let started = Instant::now();
        let planned = plan_with_reference(&request, &config.scp, previous.as_ref());
        planning_time_s.push(started.elapsed().as_secs_f64());
        let plan = match planned {
            Ok(p) => p,
            Err(e) => {
                let kind = match e {
                    Error::SolverFailure { .. } => FailureKind::Solver,
                    _ => FailureKind::Infeasible,
                };
                failure = Some(MissionFailure { slot, kind, message: e.to_string() });
                break;
            }
        };
        stats.solves += plan.solver_stats.solves;
        stats.iterations += plan.solver_stats.iterations;
        stats.primal_residual = plan.solver_stats.primal_residual;
        stats.dual_residual = plan.solver_stats.dual_residual;
        stats.wall_time_s += plan.solver_stats.wall_time_s;
        let velocities: Vec<Vec2> = plan.trajectories.iter().map(|t| t.velocities[0]).collect();
        let next = step(scenario, current, &velocities, rng);
        overlaps_at(scenario, slot + 1, &next, &mut overlap_events);
        states.push(next);
        previous = Some(plan);
    }

    let completed = failure.is_none() && arrived(scenario, states.last().unwrap(), config.eps_goal);
    Ok(MissionLog { states, planning_time_s, overlap_events, cluster_head, completed, failure, solver_stats: stats })
}

/// Every UAV flies its straight line at constant speed; no planning.
/// Only field-level checks are applied, so endpoints may be crowded.
pub fn run_baseline<R: Rng + ?Sized>(scenario: &Scenario, strategy: ChStrategy, rng: &mut R) -> Result<MissionLog> {
    scenario.validate_basic()?;
    let cluster_head = elect_cluster_head(&scenario.uavs, strategy)?;
    let reference = straight_line_reference(scenario);
    let f = scenario.num_slots;
    let mut states = vec![initial_states(scenario, rng)];
    let mut overlap_events = Vec::new();
    overlaps_at(scenario, 0, &states[0], &mut overlap_events);
    for slot in 0..f {
        let velocities: Vec<Vec2> = reference.trajectories.iter().map(|t| t.velocities[slot]).collect();
        let next = step(scenario, states.last().unwrap(), &velocities, rng);
        overlaps_at(scenario, slot + 1, &next, &mut overlap_events);
        states.push(next);
    }
    let completed = arrived(scenario, states.last().unwrap(), 0.5);
    Ok(MissionLog {
        states,
        planning_time_s: vec![0.0; f],
        overlap_events,
        cluster_head,
        completed,
        failure: None,
        solver_stats: SolverStats::default(),
    })
}

/// `(pair-slot events, distinct pairs)`.
pub fn count_overlap_events(log: &MissionLog) -> (usize, usize) {
    let mut distinct: Vec<(usize, usize)> = log.overlap_events.iter().map(|&(_, k, l)| (k, l)).collect();
    distinct.sort_unstable();
    distinct.dedup();
    (log.overlap_events.len(), distinct.len())
}
