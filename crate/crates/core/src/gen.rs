//! Random scenarios: square area, endpoints from a normal distribution
//! centered on the area and truncated to it.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::geom::Vec2;
use crate::model::{Scenario, UavSpec};
use crate::planner::PlanRequest;
use crate::{Error, Result};

/// Rejected draws tolerated before giving up on a spec.
pub const MAX_REJECTIONS: usize = 10_000;

#[derive(Debug, Clone, PartialEq)]
pub struct GenSpec {
    pub num_uavs: usize,
    /// Square meters; the area is a square of side `√area_surface`.
    pub area_surface: f64,
    /// GPS error radius shared by all UAVs, meters.
    pub gps_error: f64,
    pub v_max: f64,
    pub dt: f64,
    pub num_slots: usize,
    pub seed: u64,
    /// Standard deviation of endpoint coordinates as a fraction of the side.
    pub sigma_fraction: f64,
    /// Require starts (and goals) to be pairwise farther apart than the sum
    /// of their radii. Dense baseline sweeps need this off.
    pub endpoint_separation: bool,
}

impl Default for GenSpec {
    fn default() -> Self {
        Self {
            num_uavs: 10,
            area_surface: 10_000.0,
            gps_error: 5.0,
            v_max: 15.0,
            dt: 1.0,
            num_slots: 20,
            seed: 0,
            sigma_fraction: 0.25,
            endpoint_separation: true,
        }
    }
}

impl GenSpec {
    pub fn side(&self) -> f64 {
        self.area_surface.sqrt()
    }

    /// Farthest goal the planner can reach: the speed cap is an inscribed
    /// polygon, slightly inside the disc of radius `v_max`.
    pub fn reach(&self) -> f64 {
        let sides = PlanRequest::DEFAULT_POLYGON_SIDES as f64;
        self.v_max * (PI / sides).cos() * self.num_slots as f64 * self.dt * (1.0 - 1e-9)
    }

    fn check(&self) -> Result<()> {
        let positive = [self.area_surface, self.gps_error, self.v_max, self.dt, self.sigma_fraction];
        if self.num_uavs == 0 || self.num_slots == 0 || positive.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::InvalidScenario(format!("generator parameters must be positive: {self:?}")));
        }
        Ok(())
    }
}

pub fn generate_scenario(spec: &GenSpec) -> Result<Scenario> {
    spec.check()?;
    let side = spec.side();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let normal = Normal::new(side / 2.0, side * spec.sigma_fraction).expect("positive sigma");
    let coord = |rng: &mut ChaCha8Rng| loop {
        let v = normal.sample(rng);
        if (0.0..=side).contains(&v) {
            return v;
        }
    };
    let reach = spec.reach();
    let min_gap = 2.0 * spec.gps_error;
    let mut uavs: Vec<UavSpec> = Vec::with_capacity(spec.num_uavs);
    let mut rejections = 0;
    while uavs.len() < spec.num_uavs {
        let start = Vec2::new(coord(&mut rng), coord(&mut rng));
        let goal = Vec2::new(coord(&mut rng), coord(&mut rng));
        let crowded = spec.endpoint_separation
            && uavs.iter().any(|u| u.start.distance(start) <= min_gap || u.goal.distance(goal) <= min_gap);
        if start.distance(goal) > reach || crowded {
            rejections += 1;
            if rejections > MAX_REJECTIONS {
                return Err(Error::GenerationExhausted(rejections));
            }
            continue;
        }
        uavs.push(UavSpec {
            id: uavs.len(),
            start,
            goal,
            gps_error_radius: spec.gps_error,
            v_max: spec.v_max,
            energy: rng.random_range(50.0..100.0),
            compute_capacity: rng.random_range(1.0..10.0),
        });
    }
    Ok(Scenario {
        area_width: side,
        area_height: side,
        dt: spec.dt,
        num_slots: spec.num_slots,
        seed: spec.seed,
        uavs,
    })
}
