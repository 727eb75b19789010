//! Scenario description, per-UAV trajectories and the distance measures
//! computed from them.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{angle_distance, bearing_to_goal, heading_angle, Vec2};

/// One UAV of the swarm: mission endpoints, GPS error radius, speed limit,
/// and the attributes used to elect the cluster head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UavSpec {
    pub id: usize,
    pub start: Vec2,
    pub goal: Vec2,
    pub gps_error_radius: f64,
    pub v_max: f64,
    pub energy: f64,
    pub compute_capacity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub area_width: f64,
    pub area_height: f64,
    pub dt: f64,
    pub num_slots: usize,
    pub seed: u64,
    pub uavs: Vec<UavSpec>,
}

impl Scenario {
    pub fn num_uavs(&self) -> usize {
        self.uavs.len()
    }

    pub fn mission_time(&self) -> f64 {
        self.dt * self.num_slots as f64
    }

    fn inside(&self, p: Vec2) -> bool {
        p.is_finite() && p.x >= 0.0 && p.y >= 0.0 && p.x <= self.area_width && p.y <= self.area_height
    }

    /// Field-level checks only: positive sizes, ids, endpoints inside the
    /// area. Used for baseline runs that do not need separated endpoints.
    pub fn validate_basic(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidScenario(msg));
        if !(self.area_width > 0.0 && self.area_height > 0.0) {
            return bad("area dimensions must be positive".into());
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad("dt must be positive".into());
        }
        if self.num_slots == 0 {
            return bad("num_slots must be at least 1".into());
        }
        if self.uavs.is_empty() {
            return bad("scenario has no UAVs".into());
        }
        for (k, u) in self.uavs.iter().enumerate() {
            if u.id != k {
                return bad(format!("UAV at index {k} has id {}", u.id));
            }
            if !(u.gps_error_radius > 0.0 && u.gps_error_radius.is_finite()) {
                return bad(format!("UAV {k}: gps_error_radius must be positive"));
            }
            if !(u.v_max > 0.0 && u.v_max.is_finite()) {
                return bad(format!("UAV {k}: v_max must be positive"));
            }
            if !(u.energy >= 0.0) || !(u.compute_capacity > 0.0) {
                return bad(format!("UAV {k}: energy must be >= 0 and compute_capacity > 0"));
            }
            if !self.inside(u.start) || !self.inside(u.goal) {
                return bad(format!("UAV {k}: start or goal outside the area"));
            }
        }
        Ok(())
    }

    /// Full invariant check: basic fields, strictly separated starts and
    /// goals, and every goal reachable at `v_max` within the mission time.
    pub fn validate(&self) -> Result<()> {
        self.validate_basic()?;
        for (k, u) in self.uavs.iter().enumerate() {
            let reach = u.v_max * self.mission_time();
            if u.start.distance(u.goal) > reach {
                return Err(Error::InvalidScenario(format!(
                    "UAV {k}: goal is {:.3} m away but only {reach:.3} m is reachable",
                    u.start.distance(u.goal)
                )));
            }
        }
        for (k, l) in pairs(self.num_uavs()) {
            let (a, b) = (&self.uavs[k], &self.uavs[l]);
            let safety = a.gps_error_radius + b.gps_error_radius;
            if a.start.distance(b.start) <= safety {
                return Err(Error::InvalidScenario(format!(
                    "starts of UAVs {k} and {l} are within {safety} m"
                )));
            }
            if a.goal.distance(b.goal) <= safety {
                return Err(Error::InvalidScenario(format!(
                    "goals of UAVs {k} and {l} are within {safety} m"
                )));
            }
        }
        Ok(())
    }
}

/// Unordered pairs `(k, l)` with `k < l`, in lexicographic order. The
/// position of a pair in this sequence is its rank.
pub fn pairs(k: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..k).flat_map(move |a| (a + 1..k).map(move |b| (a, b)))
}

pub fn num_pairs(k: usize) -> usize {
    k * k.saturating_sub(1) / 2
}

/// Positions of one UAV at slots `start_slot ..= start_slot + velocities.len()`.
/// `velocities[i]` is applied during the slot that ends at `positions[i + 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub uav_id: usize,
    pub start_slot: usize,
    pub positions: Vec<Vec2>,
    pub velocities: Vec<Vec2>,
}

impl Trajectory {
    /// Builds a trajectory from positions, deriving velocities by finite
    /// differences so that the kinematic relation holds to rounding.
    pub fn from_positions(uav_id: usize, start_slot: usize, positions: Vec<Vec2>, dt: f64) -> Self {
        let velocities = positions.windows(2).map(|w| (w[1] - w[0]) * (1.0 / dt)).collect();
        Self { uav_id, start_slot, positions, velocities }
    }

    pub fn num_steps(&self) -> usize {
        self.velocities.len()
    }

    pub fn end_slot(&self) -> usize {
        self.start_slot + self.num_steps()
    }

    pub fn first(&self) -> Vec2 {
        self.positions[0]
    }

    pub fn last(&self) -> Vec2 {
        *self.positions.last().expect("trajectory has at least one position")
    }

    /// Position at an absolute slot index, if covered.
    pub fn at_slot(&self, slot: usize) -> Option<Vec2> {
        slot.checked_sub(self.start_slot).and_then(|i| self.positions.get(i).copied())
    }

    /// Worst violation of `p[t] = p[t-1] + v[t] dt`, relative to the
    /// magnitude of the positions involved.
    pub fn kinematic_error(&self, dt: f64) -> f64 {
        self.velocities
            .iter()
            .enumerate()
            .map(|(i, v)| {
                let pred = self.positions[i] + *v * dt;
                let scale = 1.0 + self.positions[i + 1].norm().max(self.positions[i].norm());
                pred.distance(self.positions[i + 1]) / scale
            })
            .fold(0.0, f64::max)
    }

    /// Sum of squared step lengths, the planner's cost for this UAV.
    pub fn squared_step_cost(&self) -> f64 {
        self.positions.windows(2).map(|w| (w[1] - w[0]).norm_sq()).sum()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SolverStats {
    pub solves: usize,
    pub iterations: usize,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SwarmPlan {
    pub trajectories: Vec<Trajectory>,
    pub objective_value: f64,
    pub solver_stats: SolverStats,
}

impl SwarmPlan {
    pub fn from_trajectories(trajectories: Vec<Trajectory>, solver_stats: SolverStats) -> Self {
        let objective_value = trajectories.iter().map(Trajectory::squared_step_cost).sum();
        Self { trajectories, objective_value, solver_stats }
    }

    pub fn num_uavs(&self) -> usize {
        self.trajectories.len()
    }

    pub fn start_slot(&self) -> usize {
        self.trajectories.first().map_or(0, |t| t.start_slot)
    }

    pub fn end_slot(&self) -> usize {
        self.trajectories.first().map_or(0, Trajectory::end_slot)
    }
}

pub fn traveled_distance(traj: &Trajectory) -> f64 {
    traj.positions.windows(2).map(|w| w[0].distance(w[1])).sum()
}

/// Path length in excess of the straight start-to-goal chord.
pub fn extra_distance(traj: &Trajectory, spec: &UavSpec, eps: f64) -> Result<f64> {
    let gap = traj.last().distance(spec.goal).max(traj.first().distance(spec.start));
    if gap > eps {
        return Err(Error::EndpointMismatch { uav: spec.id, gap });
    }
    Ok(traveled_distance(traj) - spec.start.distance(spec.goal))
}

/// Sum over slots of the angle between the commanded heading and the bearing
/// to the goal. Slots that do not move, or that start on the goal, add 0.
pub fn deviation_objective(traj: &Trajectory, goal: Vec2) -> f64 {
    traj.velocities
        .iter()
        .zip(&traj.positions)
        .map(|(v, &p)| {
            if *v == Vec2::ZERO {
                return 0.0;
            }
            match bearing_to_goal(p, goal) {
                Ok(bearing) => angle_distance(heading_angle(*v), bearing),
                Err(_) => 0.0,
            }
        })
        .sum()
}
