use super::*;
use crate::model::extra_distance;
use crate::model::tests::{scenario, uav};
use crate::qp::QpSettings;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const MODES: [SeparationMode; 3] = [SeparationMode::Literal, SeparationMode::SignedL1, SeparationMode::Scp];

fn head_on() -> Scenario {
    scenario(vec![uav(0, (0.0, 0.0), (100.0, 0.0), 5.0, 10.0), uav(1, (100.0, 0.0), (0.0, 0.0), 5.0, 10.0)], 20, 1.0)
}

fn min_center_distance(plan: &SwarmPlan) -> f64 {
    let mut d = f64::INFINITY;
    for (k, l) in pairs(plan.num_uavs()) {
        for (a, b) in plan.trajectories[k].positions.iter().zip(&plan.trajectories[l].positions) {
            d = d.min(a.distance(*b));
        }
    }
    d
}

#[test]
fn straight_line_subdivides_equally() {
    let sc = scenario(vec![uav(0, (0.0, 0.0), (100.0, 0.0), 1.0, 20.0)], 10, 1.0);
    let plan = straight_line_reference(&sc);
    let xs: Vec<f64> = plan.trajectories[0].positions.iter().map(|p| p.x).collect();
    for (i, x) in xs.iter().enumerate() {
        assert!((x - 10.0 * i as f64).abs() < 1e-12);
    }
    assert!(extra_distance(&plan.trajectories[0], &sc.uavs[0], 1e-9).unwrap().abs() < 1e-9);

    let still = scenario(vec![uav(0, (5.0, 5.0), (5.0, 5.0), 1.0, 20.0)], 4, 1.0);
    let plan = straight_line_reference(&still);
    assert!(plan.trajectories[0].positions.iter().all(|&p| p == Vec2::new(5.0, 5.0)));
    assert!(plan.trajectories[0].velocities.iter().all(|&v| v == Vec2::ZERO));
}

#[test]
fn variable_and_row_counts() {
    let sc = scenario(vec![uav(0, (0.0, 0.0), (30.0, 0.0), 1.0, 20.0), uav(1, (0.0, 50.0), (30.0, 50.0), 1.0, 20.0)], 3, 1.0);
    let reference = straight_line_reference(&sc);
    let lit = build_model(&PlanRequest::new(&sc, SeparationMode::Literal), None).unwrap();
    assert_eq!(lit.problem.n(), 30);
    assert_eq!(lit.separation_rows, 7 * 3);
    let l1 = build_model(&PlanRequest::new(&sc, SeparationMode::SignedL1), Some(&reference)).unwrap();
    assert_eq!(l1.problem.n(), 24);
    assert_eq!(l1.separation_rows, 3);
    assert!(matches!(
        build_model(&PlanRequest::new(&sc, SeparationMode::Scp), None),
        Err(Error::MissingReference)
    ));
}

#[test]
fn single_uav_plan_is_the_straight_line() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..5 {
        let s = (rng.random_range(0.0..200.0), rng.random_range(0.0..200.0));
        let g = (rng.random_range(0.0..200.0), rng.random_range(0.0..200.0));
        let sc = scenario(vec![uav(0, s, g, 5.0, 30.0)], 12, 1.0);
        let reference = straight_line_reference(&sc);
        for mode in MODES {
            let m = build_model(&PlanRequest::new(&sc, mode), Some(&reference)).unwrap();
            assert_eq!(m.separation_rows, 0);
            let plan = plan(&PlanRequest::new(&sc, mode), &ScpSettings::default()).unwrap();
            for (p, q) in plan.trajectories[0].positions.iter().zip(&reference.trajectories[0].positions) {
                assert!((p.x - q.x).abs() < 1e-6 && (p.y - q.y).abs() < 1e-6, "{mode}: {p:?} vs {q:?}");
            }
        }
    }
}

#[test]
fn single_uav_example_moves_at_constant_speed() {
    let sc = scenario(vec![uav(0, (0.0, 0.0), (30.0, 40.0), 1.0, 20.0)], 5, 1.0);
    let plan = plan(&PlanRequest::new(&sc, SeparationMode::SignedL1), &ScpSettings::default()).unwrap();
    let t = &plan.trajectories[0];
    assert!(extra_distance(t, &sc.uavs[0], 1e-6).unwrap().abs() < 1e-6);
    for v in &t.velocities {
        assert!((v.norm() - 10.0).abs() < 1e-6);
    }
}

#[test]
fn head_on_pair_is_deconflicted() {
    let sc = head_on();
    for mode in [SeparationMode::SignedL1, SeparationMode::Scp] {
        let plan = plan(&PlanRequest::new(&sc, mode), &ScpSettings::default()).unwrap();
        let report = verify_plan(&plan, &sc, 1e-6).unwrap();
        assert!(report.all_ok(), "{mode}: {report:?}");
        assert!(min_center_distance(&plan) >= 10.0 + 1e-3 - 1e-6, "{mode}: {}", min_center_distance(&plan));
    }
}

#[test]
fn head_on_reference_is_degenerate_without_a_rule() {
    let sc = head_on();
    let mut req = PlanRequest::new(&sc, SeparationMode::SignedL1);
    req.degenerate_rule = DegenerateDirectionRule::Disabled;
    let err = build_model(&req, Some(&straight_line_reference(&sc))).unwrap_err();
    assert!(matches!(err, Error::DegenerateReferencePair(0, 1, 10)), "{err:?}");
}

#[test]
fn close_goals_are_infeasible() {
    let sc = scenario(vec![uav(0, (0.0, 0.0), (50.0, 50.0), 5.0, 20.0), uav(1, (100.0, 0.0), (55.0, 50.0), 5.0, 20.0)], 10, 1.0);
    for mode in MODES {
        assert!(matches!(plan(&PlanRequest::new(&sc, mode), &ScpSettings::default()), Err(Error::ScenarioInfeasible(_))));
    }
}

#[test]
fn verification_examples() {
    let sc = scenario(vec![uav(0, (0.0, 0.0), (30.0, 40.0), 1.0, 20.0)], 5, 1.0);
    let mut plan = straight_line_reference(&sc);
    let report = verify_plan(&plan, &sc, 1e-6).unwrap();
    assert!(report.all_ok());
    assert_eq!(report.min_separation_slack, f64::INFINITY);

    plan.trajectories[0].positions[2].x += 2e-6;
    let report = verify_plan(&plan, &sc, 1e-6).unwrap();
    assert!(!report.kinematics_ok);
    assert!(report.separation_ok && report.endpoints_ok && report.velocity_ok);

    let crossing = scenario(vec![uav(0, (0.0, 0.0), (100.0, 100.0), 5.0, 20.0), uav(1, (100.0, 0.0), (0.0, 100.0), 5.0, 20.0)], 10, 1.0);
    let report = verify_plan(&straight_line_reference(&crossing), &crossing, 1e-6).unwrap();
    assert!(!report.separation_ok);
    assert!((report.min_separation_slack + 10.0).abs() < 1e-9);

    let short = straight_line_reference(&scenario(sc.uavs.clone(), 4, 1.0));
    assert!(matches!(verify_plan(&short, &sc, 1e-6), Err(Error::DimensionMismatch(_))));
}

/// Checks the explicit witness `X̂ = Ŷ = -(r_k + r_l)²` against each literal
/// row, written out independently of the model builder.
fn witness_satisfies_literal_rows(pk: Vec2, pl: Vec2, radius_sum: f64) -> bool {
    let w = -(radius_sum * radius_sum).max(1.0);
    let (dx, dy) = (pl.x - pk.x, pl.y - pk.y);
    w <= dx.min(-dx) && w <= dy.min(-dy) && -w - w >= radius_sum * radius_sum && -w >= 1.0
}

#[test]
fn literal_rows_admit_overlapping_pairs() {
    let overlapping = [Vec2::new(0.0, 0.0), Vec2::new(1.0, 0.0)];
    assert!(witness_satisfies_literal_rows(overlapping[0], overlapping[1], 10.0));
    assert!(literal_feasibility_probe(&overlapping, &[5.0, 5.0]));
    let apart = [Vec2::new(0.0, 0.0), Vec2::new(100.0, 0.0)];
    assert!(literal_feasibility_probe(&apart, &[5.0, 5.0]));
    assert!(literal_feasibility_probe(&[Vec2::new(1.0, 1.0)], &[5.0]));
}

#[test]
fn objective_matches_solver_value() {
    let sc = head_on();
    let settings = QpSettings::default();
    let reference = straight_line_reference(&sc);
    let req = PlanRequest::new(&sc, SeparationMode::SignedL1);
    let model = build_model(&req, Some(&reference)).unwrap();
    let sol = crate::qp::solve(&model.problem, &settings).unwrap();
    let plan = plan_with_reference(&req, &ScpSettings::default(), Some(&reference)).unwrap();
    let solver_value = sol.objective + model.objective_offset;
    assert!((plan.objective_value - solver_value).abs() <= 1e-6 * solver_value.abs());
    // straight line cost: 20 steps of 5 m each, per UAV
    let straight = straight_line_reference(&sc).objective_value;
    assert!((straight - 2.0 * 20.0 * 25.0).abs() < 1e-9);
    assert!(plan.objective_value > straight);
}

fn random_scenario(seed: u64, k: usize) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let uavs = (0..k)
            .map(|i| {
                let mut pt = || (rng.random_range(0.0..200.0), rng.random_range(0.0..200.0));
                uav(i, pt(), pt(), 5.0, 15.0)
            })
            .collect();
        let sc = scenario(uavs, 20, 1.0);
        if sc.validate().is_ok() {
            return sc;
        }
    }
}

#[test]
fn permuting_uavs_permutes_the_plan() {
    for seed in 0..3 {
        let sc = random_scenario(seed, 5);
        let perm = [3usize, 0, 4, 1, 2];
        let mut permuted = sc.clone();
        permuted.uavs = perm.iter().enumerate().map(|(new, &old)| UavSpecExt::with_id(&sc.uavs[old], new)).collect();
        for mode in [SeparationMode::SignedL1, SeparationMode::Scp] {
            let a = plan(&PlanRequest::new(&sc, mode), &ScpSettings::default()).unwrap();
            let b = plan(&PlanRequest::new(&permuted, mode), &ScpSettings::default()).unwrap();
            for (new, &old) in perm.iter().enumerate() {
                for (p, q) in b.trajectories[new].positions.iter().zip(&a.trajectories[old].positions) {
                    assert!(p.distance(*q) < 1e-4, "seed {seed} {mode}: {p:?} vs {q:?}");
                }
            }
        }
    }
}

trait UavSpecExt {
    fn with_id(&self, id: usize) -> Self;
}

impl UavSpecExt for crate::model::UavSpec {
    fn with_id(&self, id: usize) -> Self {
        Self { id, ..self.clone() }
    }
}

#[test]
fn scaling_the_scene_scales_the_plan() {
    let sc = random_scenario(7, 4);
    let c = 2.5;
    let mut big = sc.clone();
    big.area_width *= c;
    big.area_height *= c;
    for u in &mut big.uavs {
        u.start = u.start * c;
        u.goal = u.goal * c;
        u.gps_error_radius *= c;
        u.v_max *= c;
    }
    let req = PlanRequest::new(&sc, SeparationMode::SignedL1);
    let mut big_req = PlanRequest::new(&big, SeparationMode::SignedL1);
    big_req.safety_margin *= c;
    let a = plan(&req, &ScpSettings::default()).unwrap();
    let b = plan(&big_req, &ScpSettings::default()).unwrap();
    assert!((b.objective_value - c * c * a.objective_value).abs() <= 1e-6 * b.objective_value);
    for (ta, tb) in a.trajectories.iter().zip(&b.trajectories) {
        for (p, q) in ta.positions.iter().zip(&tb.positions) {
            assert!((*p * c).distance(*q) < 1e-4 * c);
        }
    }
}

#[test]
fn receding_window_to_the_end_matches_full_horizon() {
    let sc = random_scenario(11, 4);
    let base = plan(&PlanRequest::new(&sc, SeparationMode::SignedL1), &ScpSettings::default()).unwrap();
    let s = 6;
    let state: Vec<Vec2> = base.trajectories.iter().map(|t| t.positions[s]).collect();
    for mode in [SeparationMode::SignedL1, SeparationMode::Scp] {
        let full = PlanRequest::from_state(&sc, mode, s, state.clone());
        let receding = full.clone().with_horizon(Horizon::Receding(sc.num_slots - s));
        let a = plan_with_reference(&full, &ScpSettings::default(), Some(&base)).unwrap();
        let b = plan_with_reference(&receding, &ScpSettings::default(), Some(&base)).unwrap();
        assert_eq!(a.start_slot(), s);
        for (ta, tb) in a.trajectories.iter().zip(&b.trajectories) {
            for (p, q) in ta.positions.iter().zip(&tb.positions) {
                assert!(p.distance(*q) < 1e-6);
            }
        }
    }
}

#[test]
fn short_receding_window_heads_for_the_waypoint() {
    // one UAV: the free end settles where the straight path cost 
    // |e - s|²/H balances the penalty w·|e - waypoint|², on the segment
    let sc = scenario(vec![uav(0, (0.0, 0.0), (190.0, 0.0), 5.0, 15.0)], 20, 1.0);
    let req = PlanRequest::new(&sc, SeparationMode::SignedL1).with_horizon(Horizon::Receding(5));
    let p = plan(&req, &ScpSettings::default()).unwrap();
    assert_eq!(p.end_slot(), 5);
    let (h, w, waypoint) = (5.0, RECEDING_TERMINAL_WEIGHT, 190.0 * 5.0 / 20.0);
    let expected = w * waypoint / (1.0 / h + w);
    let t = &p.trajectories[0];
    assert!((t.last().x - expected).abs() < 1e-6 && t.last().y.abs() < 1e-6, "{:?} vs {expected}", t.last());
    for (i, q) in t.positions.iter().enumerate() {
        assert!((q.x - expected * i as f64 / h).abs() < 1e-6);
    }
}

#[test]
fn random_swarms_are_separated() {
    for seed in 20..26 {
        let sc = random_scenario(seed, 6);
        for mode in [SeparationMode::SignedL1, SeparationMode::Scp] {
            let plan = plan(&PlanRequest::new(&sc, mode), &ScpSettings::default()).unwrap();
            let report = verify_plan(&plan, &sc, 1e-4).unwrap();
            assert!(report.all_ok(), "seed {seed} {mode}: {report:?}");
        }
    }
}

#[test]
fn receding_plan_commits_first_steps_and_verifies() {
    let sc = random_scenario(13, 5);
    for mode in [SeparationMode::SignedL1, SeparationMode::Scp] {
        let req = PlanRequest::new(&sc, mode).with_horizon(Horizon::Receding(4));
        let p = plan_receding(&req, &ScpSettings::default()).unwrap();
        assert_eq!((p.start_slot(), p.end_slot()), (0, sc.num_slots));
        let report = verify_plan(&p, &sc, 1e-6).unwrap();
        assert!(report.all_ok(), "{mode}: {report:?}");
        assert!(p.solver_stats.solves >= sc.num_slots);
    }
    let late = PlanRequest { start_slot: 1, ..PlanRequest::new(&sc, SeparationMode::SignedL1) };
    assert!(matches!(plan_receding(&late, &ScpSettings::default()), Err(Error::DimensionMismatch(_))));
}
