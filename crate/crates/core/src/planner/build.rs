use std::f64::consts::{PI, SQRT_2};

use crate::geom::Vec2;
use crate::model::{pairs, Scenario, SwarmPlan};
use crate::qp::{CscMatrix, QpProblem};
use crate::{Error, Result};

use super::layout::{AuxComponent, Component, VariableLayout};
use super::{DegenerateDirectionRule, PlanRequest, SeparationMode};

/// Sparse constraint rows `lower <= a·x + constant <= upper`, constants
/// folded into the bounds.
#[derive(Debug, Default)]
pub(crate) struct RowBuilder {
    triplets: Vec<(usize, usize, f64)>,
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl RowBuilder {
    pub(crate) fn push(&mut self, terms: &[(usize, f64)], constant: f64, lower: f64, upper: f64) {
        let row = self.lower.len();
        self.triplets.extend(terms.iter().map(|&(c, v)| (row, c, v)));
        self.lower.push(lower - constant);
        self.upper.push(upper - constant);
    }

    pub(crate) fn len(&self) -> usize {
        self.lower.len()
    }

    pub(crate) fn finish(self, n: usize) -> (CscMatrix, Vec<f64>, Vec<f64>) {
        (CscMatrix::from_triplets(self.lower.len(), n, &self.triplets), self.lower, self.upper)
    }
}

/// A coordinate of a UAV at some slot: either a decision variable or a
/// constant (the state at the window start).
#[derive(Debug, Clone, Copy)]
pub(crate) enum Coord {
    Var(usize),
    Fixed(f64),
}

/// Appends `coef · (a - b)` to a linear expression.
fn diff_terms(a: Coord, b: Coord, coef: f64, terms: &mut Vec<(usize, f64)>, constant: &mut f64) {
    match a {
        Coord::Var(i) => terms.push((i, coef)),
        Coord::Fixed(v) => *constant += coef * v,
    }
    match b {
        Coord::Var(i) => terms.push((i, -coef)),
        Coord::Fixed(v) => *constant -= coef * v,
    }
}

/// Rows of the literal pairwise encoding for one pair at one slot:
/// `X̂ <= ΔX`, `X̂ <= -ΔX`, the same for `Ŷ`, then
/// `-X̂ - Ŷ >= (r_k + r_l)²`, `-X̂ >= 1`, `-Ŷ >= 1`, with `ΔX = X_l - X_k`.
pub(crate) fn literal_rows(
    rows: &mut RowBuilder,
    pk: [Coord; 2],
    pl: [Coord; 2],
    aux: [usize; 2],
    radius_sum: f64,
) {
    let inf = f64::INFINITY;
    for axis in 0..2 {
        for sign in [1.0, -1.0] {
            // aux - sign·(p_l - p_k) <= 0
            let mut terms = vec![(aux[axis], 1.0)];
            let mut constant = 0.0;
            diff_terms(pl[axis], pk[axis], -sign, &mut terms, &mut constant);
            rows.push(&terms, constant, -inf, 0.0);
        }
    }
    rows.push(&[(aux[0], -1.0), (aux[1], -1.0)], 0.0, radius_sum * radius_sum, inf);
    rows.push(&[(aux[0], -1.0)], 0.0, 1.0, inf);
    rows.push(&[(aux[1], -1.0)], 0.0, 1.0, inf);
}

/// Output of model construction.
#[derive(Debug, Clone)]
pub struct PlanModel {
    pub problem: QpProblem,
    pub layout: VariableLayout,
    /// Constant part of the model objective, so that
    /// `problem.objective(x) + objective_offset` is the path cost (plus the
    /// waypoint penalty for windows that end before the goal slot).
    pub objective_offset: f64,
    pub separation_rows: usize,
    pub start_slot: usize,
    pub end_slot: usize,
}

impl PlanModel {
    pub fn num_steps(&self) -> usize {
        self.layout.num_steps
    }
}

/// Last slot covered by a request.
pub(crate) fn window_end(request: &PlanRequest<'_>) -> usize {
    let f = request.scenario.num_slots;
    match request.horizon {
        super::Horizon::Full => f,
        super::Horizon::Receding(h) => (request.start_slot + h).min(f),
    }
}

/// Where a UAV should be at the end of the window: the goal if it falls
/// inside the window, otherwise the point on the segment to the goal reached
/// at uniform pace.
pub(crate) fn window_target(scenario: &Scenario, start_slot: usize, end_slot: usize, current: Vec2, goal: Vec2) -> Vec2 {
    let remaining = scenario.num_slots - start_slot;
    if end_slot == scenario.num_slots {
        goal
    } else {
        current.lerp(goal, (end_slot - start_slot) as f64 / remaining as f64)
    }
}

/// Sign pair `(s_x, s_y)` whose diagonal is closest to `u`. Zero components
/// borrow from the other axis, turning counter-clockwise from `u`.
pub(crate) fn diagonal_signs(u: Vec2) -> (f64, f64) {
    let sgn = |v: f64| if v > 0.0 { 1.0 } else { -1.0 };
    let sx = if u.x != 0.0 { sgn(u.x) } else { -sgn(u.y) };
    let sy = if u.y != 0.0 { sgn(u.y) } else { sgn(u.x) };
    (sx, sy)
}

/// Separating direction for pair `(k, l)` at `slot` from the reference plan.
fn reference_direction(
    reference: &SwarmPlan,
    k: usize,
    l: usize,
    pair_rank: usize,
    num_pairs: usize,
    slot: usize,
    rule: DegenerateDirectionRule,
) -> Result<Vec2> {
    let at = |i: usize, s: usize| reference.trajectories[i].at_slot(s);
    let (pk, pl) = match (at(k, slot), at(l, slot)) {
        (Some(a), Some(b)) => (a, b),
        _ => return Err(Error::DimensionMismatch(format!("reference plan does not cover slot {slot}"))),
    };
    let d = pk - pl;
    let scale = 1.0 + pk.norm().max(pl.norm());
    if d.norm() > 1e-9 * scale {
        return Ok(d * (1.0 / d.norm()));
    }
    match rule {
        DegenerateDirectionRule::Disabled => Err(Error::DegenerateReferencePair(k, l, slot)),
        DegenerateDirectionRule::PairRank => Ok(Vec2::from_polar(1.0, 2.0 * PI * pair_rank as f64 / num_pairs as f64)),
        DegenerateDirectionRule::RelativeVelocity => {
            // Rotate the relative motion through the meeting point by +90°;
            // swapping k and l flips both the motion and the direction, so
            // the constraint is the same for either labelling.
            let motion = |i: usize| {
                let here = at(i, slot).expect("checked above");
                let before = slot.checked_sub(1).and_then(|s| at(i, s)).unwrap_or(here);
                at(i, slot + 1).unwrap_or(here) - before
            };
            let w = motion(k) - motion(l);
            if w.norm() > 1e-9 * scale {
                Ok(w.perp() * (1.0 / w.norm()))
            } else {
                Ok(Vec2::from_polar(1.0, 2.0 * PI * pair_rank as f64 / num_pairs as f64))
            }
        }
    }
}

/// Builds the QP for one planning window.
pub fn build_model(request: &PlanRequest<'_>, reference: Option<&SwarmPlan>) -> Result<PlanModel> {
    request.check()?;
    let sc = request.scenario;
    let k_count = sc.num_uavs();
    let start = request.start_slot;
    let end = window_end(request);
    let h = end - start;
    let dt = sc.dt;
    let with_aux = request.mode == SeparationMode::Literal;
    let layout = VariableLayout::new(k_count, h, with_aux);
    let n = layout.num_vars();
    let needs_reference = matches!(request.mode, SeparationMode::SignedL1 | SeparationMode::Scp);
    let reference = match (needs_reference, reference) {
        (true, None) => return Err(Error::MissingReference),
        (true, Some(r)) => {
            if r.num_uavs() != k_count {
                return Err(Error::DimensionMismatch(format!(
                    "reference has {} UAVs, scenario has {k_count}",
                    r.num_uavs()
                )));
            }
            Some(r)
        }
        _ => None,
    };

    // Objective: sum of squared steps, P = 2·L with L the path Laplacian,
    // start positions enter through q and the constant offset.
    let mut p_trip = Vec::with_capacity(k_count * h * 6);
    let mut q = vec![0.0; n];
    let mut offset = 0.0;
    for k in 0..k_count {
        let cur = request.current_positions[k];
        for (comp, c) in [(Component::X, cur.x), (Component::Y, cur.y)] {
            for step in 0..h {
                let i = layout.var(k, step, comp);
                let diag = if step + 1 < h { 4.0 } else { 2.0 };
                p_trip.push((i, i, diag));
                if step + 1 < h {
                    let j = layout.var(k, step + 1, comp);
                    p_trip.push((i, j, -2.0));
                    p_trip.push((j, i, -2.0));
                }
            }
            q[layout.var(k, 0, comp)] = -2.0 * c;
            offset += c * c;
        }
    }
    let p = CscMatrix::from_triplets(n, n, &p_trip);

    let coord = |k: usize, slot: usize, comp: Component| -> Coord {
        if slot == start {
            let c = request.current_positions[k];
            Coord::Fixed(if comp == Component::X { c.x } else { c.y })
        } else {
            Coord::Var(layout.var(k, slot - start - 1, comp))
        }
    };

    let mut rows = RowBuilder::default();
    // Kinematics: p(t) - p(t-1) - dt·v(t) = 0
    for k in 0..k_count {
        for step in 0..h {
            let slot = start + step + 1;
            for (pc, vc) in [(Component::X, Component::Vx), (Component::Y, Component::Vy)] {
                let mut terms = vec![(layout.var(k, step, vc), -dt)];
                let mut constant = 0.0;
                diff_terms(coord(k, slot, pc), coord(k, slot - 1, pc), 1.0, &mut terms, &mut constant);
                rows.push(&terms, constant, 0.0, 0.0);
            }
        }
    }
    // Terminal position: pinned to the goal when it is inside the window,
    // otherwise pulled towards the waypoint by a quadratic penalty. Pinning
    // waypoints would make windows infeasible whenever two of them fall
    // within each other's safety distance.
    let mut p_terminal = Vec::new();
    for k in 0..k_count {
        let u = &sc.uavs[k];
        let target = window_target(sc, start, end, request.current_positions[k], u.goal);
        let (ix, iy) = (layout.var(k, h - 1, Component::X), layout.var(k, h - 1, Component::Y));
        if end == sc.num_slots {
            rows.push(&[(ix, 1.0)], 0.0, target.x, target.x);
            rows.push(&[(iy, 1.0)], 0.0, target.y, target.y);
        } else {
            let w = super::RECEDING_TERMINAL_WEIGHT;
            for (i, c) in [(ix, target.x), (iy, target.y)] {
                p_terminal.push((i, i, 2.0 * w));
                q[i] -= 2.0 * w * c;
                offset += w * c * c;
            }
        }
    }
    let p = if p_terminal.is_empty() {
        p
    } else {
        p_trip.extend(p_terminal);
        CscMatrix::from_triplets(n, n, &p_trip)
    };
    // Speed cap: inscribed regular polygon of the velocity disc
    let sides = request.polygon_sides;
    let apothem = (PI / sides as f64).cos();
    let normals: Vec<Vec2> = (0..sides).map(|j| Vec2::from_polar(1.0, (2 * j + 1) as f64 * PI / sides as f64)).collect();
    for k in 0..k_count {
        let bound = sc.uavs[k].v_max * apothem;
        for step in 0..h {
            let vx = layout.var(k, step, Component::Vx);
            let vy = layout.var(k, step, Component::Vy);
            for nrm in &normals {
                rows.push(&[(vx, nrm.x), (vy, nrm.y)], 0.0, f64::NEG_INFINITY, bound);
            }
        }
    }
    // Separation
    let sep_start = rows.len();
    let num_pairs = layout.num_pairs();
    for (pair, (k, l)) in pairs(k_count).enumerate() {
        let radius_sum = sc.uavs[k].gps_error_radius + sc.uavs[l].gps_error_radius;
        for step in 0..h {
            let slot = start + step + 1;
            let pk = [coord(k, slot, Component::X), coord(k, slot, Component::Y)];
            let pl = [coord(l, slot, Component::X), coord(l, slot, Component::Y)];
            match request.mode {
                SeparationMode::Literal => {
                    let aux = [layout.aux(pair, step, AuxComponent::X), layout.aux(pair, step, AuxComponent::Y)];
                    literal_rows(&mut rows, pk, pl, aux, radius_sum);
                }
                SeparationMode::SignedL1 | SeparationMode::Scp => {
                    let r = reference.expect("checked above");
                    let u = reference_direction(r, k, l, pair, num_pairs, slot, request.degenerate_rule)?;
                    let (nrm, threshold) = if request.mode == SeparationMode::SignedL1 {
                        let (sx, sy) = diagonal_signs(u);
                        (Vec2::new(sx, sy), SQRT_2 * (radius_sum + request.safety_margin))
                    } else {
                        (u, radius_sum + request.safety_margin)
                    };
                    let mut terms = Vec::with_capacity(4);
                    let mut constant = 0.0;
                    diff_terms(pk[0], pl[0], nrm.x, &mut terms, &mut constant);
                    diff_terms(pk[1], pl[1], nrm.y, &mut terms, &mut constant);
                    let mut lower = threshold;
                    if slot == sc.num_slots {
                        // Both goals are pinned and the scenario guarantees
                        // they are separated; the halfspace may still cut
                        // them off, so relax it to the pinned value.
                        let d = sc.uavs[k].goal - sc.uavs[l].goal;
                        lower = lower.min(nrm.dot(d));
                    }
                    rows.push(&terms, constant, lower, f64::INFINITY);
                }
            }
        }
    }
    let separation_rows = rows.len() - sep_start;
    let (a, lower, upper) = rows.finish(n);
    Ok(PlanModel {
        problem: QpProblem::new(p, q, a, lower, upper),
        layout,
        objective_offset: offset,
        separation_rows,
        start_slot: start,
        end_slot: end,
    })
}

/// Primal point of the model matching a plan over the same window; used as
/// a solver warm start.
pub(crate) fn primal_from_plan(model: &PlanModel, plan: &SwarmPlan) -> Option<Vec<f64>> {
    let layout = &model.layout;
    let mut x = vec![0.0; layout.num_vars()];
    for (k, traj) in plan.trajectories.iter().enumerate().take(layout.num_uavs) {
        for step in 0..layout.num_steps {
            let slot = model.start_slot + step + 1;
            let idx = slot.checked_sub(traj.start_slot)?;
            let p = *traj.positions.get(idx)?;
            let v = *traj.velocities.get(idx - 1)?;
            x[layout.var(k, step, Component::X)] = p.x;
            x[layout.var(k, step, Component::Y)] = p.y;
            x[layout.var(k, step, Component::Vx)] = v.x;
            x[layout.var(k, step, Component::Vy)] = v.y;
        }
    }
    Some(x)
}
