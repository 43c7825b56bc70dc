use super::*;
use crate::dynamics::{rollout, stack_states};
use crate::frame::fixtures::straight_map;
use crate::frame::VehicleTrack;
use crate::model::ModelConfig;
use crate::types::{Slot, SystemControl, VehicleParams, VehicleState};
use approx::assert_abs_diff_eq;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn cfg(n: usize) -> Config {
    Config {
        horizon: n,
        history: 5,
        map_waypoints: 3,
        relinearize_passes: 0,
        ..Config::default()
    }
}

/// Observation frame with constant-speed histories ending at the given states.
pub(crate) fn obs(ego: VehicleState, svs: &[(Slot, VehicleState)], history: usize, waypoints: usize) -> Frame {
    let dt = 0.1;
    let track = |slot: Slot, x: VehicleState| {
        let h = history as isize;
        VehicleTrack {
            slot,
            present: true,
            params: VehicleParams::default(),
            history: (0..h)
                .map(|k| {
                    let back = (h - 1 - k) as f64 * dt;
                    [x.s - x.v * back, x.y, x.v, 0.0, x.psi]
                })
                .collect(),
            future: vec![],
            map: straight_map(waypoints, 2.0, 3.5, [true, true, true]),
        }
    };
    let vehicles = Slot::ALL
        .iter()
        .map(|&slot| {
            if slot == Slot::Ego {
                return track(slot, ego);
            }
            match svs.iter().find(|(s, _)| *s == slot) {
                Some((_, x)) => track(slot, *x),
                None => VehicleTrack::absent(slot),
            }
        })
        .collect();
    Frame {
        frame_id: "obs".into(),
        dt,
        vehicles,
    }
}

fn weights(c: &Config, v_des: f64, y_des: f64) -> CostWeights {
    CostWeights::from_config(c, [0.0, v_des, y_des, 0.0])
}

fn full_cost(p: &DMatrix<f64>, q: &DVector<f64>, z: &DVector<f64>, offset: f64) -> f64 {
    0.5 * z.dot(&(p * z)) + q.dot(z) + offset
}

fn stacked_z(states: &[SystemState], u: &[ControlInput]) -> DVector<f64> {
    let x = stack_states(states);
    let u = stack_ego_controls(u);
    DVector::from_iterator(x.len() + u.len(), x.iter().chain(u.iter()).copied())
}

#[test]
fn cost_fixtures() {
    let zero = CostWeights {
        q: [0.0; 4],
        r: [0.0; 2],
        x_des: [1.0, 2.0, 3.0, 4.0],
    };
    let (p, q) = build_cost(&zero, 3, 2);
    assert!(p.iter().all(|v| *v == 0.0) && q.iter().all(|v| *v == 0.0));

    let w = CostWeights {
        q: [0.0, 1.0, 0.0, 0.0],
        r: [0.0; 2],
        x_des: [0.0, 20.0, 0.0, 0.0],
    };
    let (p, q) = build_cost(&w, 3, 1);
    let at = |v: f64| vec![SystemState::new(VehicleState::new(0.0, v, 0.0, 0.0), vec![]); 4];
    let u = vec![ControlInput::ZERO; 3];
    assert_abs_diff_eq!(full_cost(&p, &q, &stacked_z(&at(20.0), &u), cost_offset(&w, 3)), 0.0, epsilon = 1e-12);
    assert_abs_diff_eq!(full_cost(&p, &q, &stacked_z(&at(22.0), &u), cost_offset(&w, 3)), 6.0, epsilon = 1e-12);
    assert_abs_diff_eq!(plan_cost(&w, &at(22.0), &u), 6.0, epsilon = 1e-12);
}

#[test]
fn theta_mapping_follows_term_semantics() {
    let c = Config {
        theta_1: 1.0,
        theta_2: 2.0,
        theta_3: 3.0,
        theta_4: 4.0,
        theta_5: 5.0,
        theta_6: 6.0,
        ..Config::default()
    };
    let w = CostWeights::from_config(&c, [0.0; 4]);
    assert_eq!(w.q, [1.0, 2.0, 4.0, 5.0]);
    assert_eq!(w.r, [3.0, 6.0]);
    // Surrounding blocks carry no weight.
    let (p, _) = build_cost(&w, 2, 3);
    for k in 0..2 {
        for i in 4..12 {
            assert_eq!(p[(k * 12 + i, k * 12 + i)], 0.0);
        }
    }
}

fn random_stage(rng: &mut ChaCha8Rng, n: usize) -> (Frame, Vec<LearnedBlocks>, Reactions, Vec<ControlInput>) {
    let ego = VehicleState::new(0.0, rng.random_range(10.0..25.0), rng.random_range(0.0..7.0), rng.random_range(-0.05..0.05));
    let sv = |ds: f64, rng: &mut ChaCha8Rng| VehicleState::new(ds, rng.random_range(10.0..25.0), rng.random_range(0.0..7.0), 0.0);
    let f = obs(ego, &[(Slot::Front, sv(30.0, rng)), (Slot::LeftRear, sv(-20.0, rng))], 5, 3);
    let mask = f.mask();
    let mut blocks = Vec::new();
    for _ in 0..n {
        let mut b = LearnedBlocks::zero();
        for p in crate::dynamics::present_pairs(&mask) {
            b.c.insert(p, DMatrix::from_fn(4, 4, |_, _| rng.random_range(-0.3..0.3)));
            b.b.insert(p, DMatrix::from_fn(4, 2, |_, _| rng.random_range(-0.3..0.3)));
        }
        blocks.push(b);
    }
    let u_surr = (0..n)
        .map(|_| (0..6).map(|i| mask[i + 1].then(|| ControlInput::new(rng.random_range(-1.0..1.0), rng.random_range(-0.02..0.02)))).collect())
        .collect();
    let u_ego = (0..n).map(|_| ControlInput::new(rng.random_range(-2.0..2.0), rng.random_range(-0.05..0.05))).collect();
    (f, blocks, u_surr, u_ego)
}

#[test]
fn social_constraint_accepts_rollouts() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..10 {
        let n = rng.random_range(1..=8);
        let (f, blocks, u_surr, u_ego) = random_stage(&mut rng, n);
        let x_t = f.current_state();
        let seq: Vec<_> = blocks.iter().map(|b| assemble_step(&x_t, &f.params(), b).unwrap()).collect();
        let sd = stack_horizon(&seq, &x_t, &f.previous_state(), f.dt);
        let ego: Vec<SystemControl> = u_ego.iter().map(|u| SystemControl::ego_only(*u, 6)).collect();
        let surr: Vec<SystemControl> = u_surr.iter().map(|u| SystemControl::surr_only(u)).collect();
        let states = rollout(&x_t, &f.previous_state(), &seq, &ego, &surr, f.dt);
        let (a, b) = build_social_constraint(&sd, &stack_surr_controls(&u_surr));
        let r = &a * stacked_z(&states, &u_ego) - &b;
        assert!(r.amax() < 1e-10, "residual {}", r.amax());

        // The first block row pins X_0 to the measured state.
        let mut z = stacked_z(&states, &u_ego);
        z[0] += 1.0;
        let r = &a * &z - &b;
        assert_abs_diff_eq!(r[0], -1.0, epsilon = 1e-12);
    }
}

#[test]
fn physics_only_constraint_is_kinematic_rollout() {
    let f = obs(VehicleState::new(0.0, 15.0, 1.0, 0.02), &[(Slot::Front, VehicleState::new(30.0, 12.0, 1.0, 0.0))], 5, 3);
    let c = cfg(4);
    let st = stage(&f, &Predictor::Physics, &c, &[ControlInput::ZERO; 4]).unwrap();
    let u = vec![ControlInput::new(1.0, 0.01), ControlInput::new(-0.5, 0.0), ControlInput::ZERO, ControlInput::new(2.0, -0.02)];
    let x = st.sd.unstack(&st.sd.solve(&stack_ego_controls(&u), &st.u_surr_vec));
    let lin = crate::kinematics::linearize(15.0, &VehicleParams::default());
    let mut ego = f.current_state().ego;
    for (k, uk) in u.iter().enumerate() {
        ego = crate::kinematics::discrete_step(&ego, uk, &lin, f.dt);
        assert_abs_diff_eq!(x[k + 1].ego.s, ego.s, epsilon = 1e-12);
        assert_abs_diff_eq!(x[k + 1].ego.y, ego.y, epsilon = 1e-12);
        // Zero reactions: the front vehicle holds its speed.
        assert_abs_diff_eq!(x[k + 1].vehicle(1).unwrap().v, 12.0, epsilon = 1e-12);
    }
}

#[test]
fn binary_heuristic_fixtures() {
    let e = |s: f64| VehicleState::new(s, 20.0, 1.75, 0.0);
    let ahead: Vec<SystemState> = (0..4).map(|k| SystemState::new(e(2.0 * k as f64), vec![Some(VehicleState::new(30.0 + 2.0 * k as f64, 20.0, 1.75, 0.0))])).collect();
    assert_eq!(fix_collision_binaries(&ahead, 10.0, 2.0), vec![vec![false; 3]]);
    let abreast: Vec<SystemState> = (0..4).map(|k| SystemState::new(e(2.0 * k as f64), vec![Some(VehicleState::new(2.0 * k as f64, 20.0, 5.25, 0.0))])).collect();
    assert_eq!(fix_collision_binaries(&abreast, 10.0, 2.0), vec![vec![true; 3]]);
    let absent = vec![SystemState::new(e(0.0), vec![None]); 3];
    assert_eq!(fix_collision_binaries(&absent, 10.0, 2.0), vec![Vec::<bool>::new()]);
}

#[test]
fn collision_row_fixtures() {
    let c = Config::default();
    let nominal: Vec<SystemState> = (0..3)
        .map(|k| SystemState::new(VehicleState::new(k as f64, 20.0, 0.0, 0.0), vec![Some(VehicleState::new(30.0 + k as f64, 20.0, 0.5, 0.0))]))
        .collect();
    let rows = build_collision_constraints(&vec![vec![false, true]], &nominal, &c);
    assert_eq!(rows.len(), 4);
    let (lon0, lat0, lon1, lat1) = (rows[0], rows[1], rows[2], rows[3]);
    assert!(lon0.active && lon0.longitudinal && lon0.sign == 1.0 && lon0.bound == 10.0);
    assert!(!lat0.active && lat0.bound == 2.0 - 1e4);
    assert!(!lon1.active && lon1.bound == 10.0 - 1e4);
    assert!(lat1.active && lat1.bound == 2.0);
    // A deactivated row holds for any separation up to 1000 m.
    let far: Vec<SystemState> = (0..3)
        .map(|_| SystemState::new(VehicleState::new(1000.0, 0.0, 0.0, 0.0), vec![Some(VehicleState::new(0.0, 0.0, 0.0, 0.0))]))
        .collect();
    assert!(lon1.margin(&far) >= 0.0 && lat0.margin(&far) >= 0.0);
}

#[test]
fn at_target_without_traffic_stays_put() {
    let c = cfg(5);
    let f = obs(VehicleState::new(0.0, 20.0, 1.75, 0.0), &[], 5, 3);
    let w = weights(&c, 20.0, 1.75);
    let r = plan(&f, &Predictor::Physics, &c, &w, None).unwrap();
    assert_eq!(r.status, PlanStatus::Optimal);
    assert!(r.objective.abs() < 1e-8);
    for u in &r.u_ego {
        assert!(u.accel.abs() < 1e-4 && u.steer.abs() < 1e-4);
    }
}

#[test]
fn speed_tracking_matches_closed_form() {
    let c = Config {
        theta_1: 0.0,
        theta_2: 1.0,
        theta_3: 1.0,
        theta_4: 0.0,
        theta_5: 0.0,
        theta_6: 0.0,
        ..cfg(5)
    };
    let (v0, v_des, dt, n) = (15.0, 17.0, 0.1, 5);
    let f = obs(VehicleState::new(0.0, v0, 1.75, 0.0), &[], 5, 3);
    let r = plan(&f, &Predictor::Physics, &c, &weights(&c, v_des, 0.0), None).unwrap();
    assert_eq!(r.status, PlanStatus::Optimal);

    // v_k = v0 + dt * sum_{i<k} a_i; minimize 0.5 sum_{k<n} (v_k - v_des)^2 + 0.5 |a|^2.
    let l = DMatrix::from_fn(n, n, |k, i| if i < k { dt } else { 0.0 });
    let e = DVector::from_element(n, v0 - v_des);
    let h = l.transpose() * &l + DMatrix::identity(n, n);
    let a = h.lu().solve(&(-(l.transpose() * e))).unwrap();
    for k in 0..n {
        assert_abs_diff_eq!(r.u_ego[k].accel, a[k], epsilon = 1e-5);
        assert!(r.u_ego[k].accel <= c.a_max + 1e-9);
    }
    for k in 1..=n {
        assert!(r.x_pred[k].ego.v >= r.x_pred[k - 1].ego.v - 1e-9);
    }
}

#[test]
fn leader_gap_is_kept() {
    let c = Config { theta_2: 1.0, ..cfg(10) };
    let f = obs(VehicleState::new(0.0, 20.0, 1.75, 0.0), &[(Slot::Front, VehicleState::new(14.0, 15.0, 1.75, 0.0))], 5, 3);
    let r = plan(&f, &Predictor::Physics, &c, &weights(&c, 25.0, 1.75), None).unwrap();
    assert_eq!(r.status, PlanStatus::Optimal);
    assert!(!r.used_enumeration);
    assert!(r.binaries[0].iter().all(|b| !b));
    for k in 1..=10 {
        let gap = r.x_pred[k].vehicle(1).unwrap().s - r.x_pred[k].ego.s;
        assert!(gap >= 10.0 - 1e-6, "step {k}: gap {gap}");
    }
    assert!(r.min_separation_margin() >= -1e-6);
    assert!(r.dynamics_residual < 1e-9);
}

fn micro_model(n: usize) -> Model {
    let c = Config {
        embed_dim: 8,
        heads: 2,
        encoder_layers: 1,
        decoder_layers: 1,
        modalities: 2,
        ..cfg(n)
    };
    Model::new(ModelConfig::from_config(&c), 4).unwrap()
}

#[test]
fn joint_prediction_equals_sequential_rollout() {
    let c = Config {
        relinearize_passes: 1,
        ..cfg(6)
    };
    let model = micro_model(6);
    let f = obs(
        VehicleState::new(0.0, 20.0, 5.25, 0.0),
        &[(Slot::Front, VehicleState::new(40.0, 18.0, 5.25, 0.0)), (Slot::RightRear, VehicleState::new(-25.0, 22.0, 1.75, 0.0))],
        5,
        3,
    );
    let r = plan(&f, &Predictor::Learned(&model), &c, &weights(&c, 22.0, 1.75), None).unwrap();
    assert_eq!(r.x_pred[0], f.current_state());
    // Reference rollout with the reactions queried for the final stage's nominal plan.
    let (blocks, u_surr) = Predictor::Learned(&model).predict(&f, &r.nominal_u).unwrap();
    assert_eq!(u_surr, r.u_surr);
    let x_t = f.current_state();
    let seq: Vec<_> = blocks.iter().map(|b| assemble_step(&x_t, &f.params(), b).unwrap()).collect();
    let ego: Vec<SystemControl> = r.u_ego.iter().map(|u| SystemControl::ego_only(*u, 6)).collect();
    let surr: Vec<SystemControl> = u_surr.iter().map(|u| SystemControl::surr_only(u)).collect();
    let states = rollout(&x_t, &f.previous_state(), &seq, &ego, &surr, f.dt);
    let diff = (stack_states(&states) - stack_states(&r.x_pred)).amax();
    assert!(diff < 1e-6, "joint vs sequential {diff}");
}

#[test]
fn scaling_weights_keeps_argmin() {
    let c = cfg(8);
    let f = obs(VehicleState::new(0.0, 18.0, 1.75, 0.01), &[(Slot::Front, VehicleState::new(25.0, 16.0, 1.75, 0.0))], 5, 3);
    let w = weights(&c, 24.0, 5.25);
    let mut w2 = w;
    w2.q.iter_mut().for_each(|v| *v *= 4.0);
    w2.r.iter_mut().for_each(|v| *v *= 4.0);
    let a = plan(&f, &Predictor::Physics, &c, &w, None).unwrap();
    let b = plan(&f, &Predictor::Physics, &c, &w2, None).unwrap();
    for (x, y) in a.u_ego.iter().zip(&b.u_ego) {
        assert_abs_diff_eq!(x.accel, y.accel, epsilon = 1e-4);
        assert_abs_diff_eq!(x.steer, y.steer, epsilon = 1e-4);
    }
}

#[test]
fn unavoidable_conflict_degrades_to_braking() {
    let c = cfg(3);
    let f = obs(VehicleState::new(0.0, 20.0, 1.75, 0.0), &[(Slot::Front, VehicleState::new(3.0, 0.0, 1.75, 0.0))], 5, 3);
    let r = plan(&f, &Predictor::Physics, &c, &weights(&c, 20.0, 1.75), None).unwrap();
    assert_eq!(r.status, PlanStatus::Degraded);
    assert!(r.u_ego.iter().all(|u| *u == ControlInput::new(c.a_min, 0.0)));
    assert!(r.dynamics_residual < 1e-9);
}

#[test]
fn warm_start_is_no_worse_than_cold_start() {
    let c = cfg(8);
    let f = obs(VehicleState::new(0.0, 18.0, 5.25, 0.0), &[(Slot::Front, VehicleState::new(30.0, 17.0, 5.25, 0.0))], 5, 3);
    let w = weights(&c, 22.0, 1.75);
    let cold = plan(&f, &Predictor::Physics, &c, &w, None).unwrap();
    let warm = plan(&f, &Predictor::Physics, &c, &w, Some(&cold)).unwrap();
    assert!(warm.objective <= cold.objective + 1e-6);
    for u in warm.u_ego.iter().chain(&cold.u_ego) {
        assert!(u.accel >= c.a_min - 1e-6 && u.accel <= c.a_max + 1e-6);
        assert!(u.steer.abs() <= c.steer_max + 1e-6);
    }
}

#[test]
fn heuristic_is_not_beaten_by_enumeration_on_small_instances() {
    let c = cfg(3);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..8 {
        let ego = VehicleState::new(0.0, rng.random_range(12.0..25.0), 1.75, 0.0);
        let sv = VehicleState::new(rng.random_range(-30.0..30.0), rng.random_range(12.0..25.0), rng.random_range(0.0..7.0), 0.0);
        let f = obs(ego, &[(Slot::Front, sv)], 5, 3);
        let w = weights(&c, rng.random_range(15.0..25.0), rng.random_range(0.0..7.0));
        let r = plan(&f, &Predictor::Physics, &c, &w, None).unwrap();
        let all = enumerate_assignments(&f, &Predictor::Physics, &c, &w, &[ControlInput::ZERO; 3]).unwrap();
        assert_eq!(all.len(), 8);
        if r.status == PlanStatus::Optimal {
            for o in all.iter().filter(|o| o.status == QpStatus::Optimal) {
                assert!(o.objective >= r.objective - 1e-4, "{} < {}", o.objective, r.objective);
            }
        } else {
            assert!(all.iter().all(|o| o.status != QpStatus::Optimal));
        }
    }
}

#[test]
fn plan_record_round_trips() {
    let c = cfg(4);
    let f = obs(VehicleState::new(0.0, 18.0, 1.75, 0.0), &[(Slot::Front, VehicleState::new(30.0, 17.0, 1.75, 0.0))], 5, 3);
    let r = plan(&f, &Predictor::Physics, &c, &weights(&c, 20.0, 1.75), None).unwrap();
    let rec = r.to_record();
    let text = serde_json::to_string(&rec).unwrap();
    let back: PlanRecord = serde_json::from_str(&text).unwrap();
    assert_eq!(back, rec);
    assert_eq!(rec.x_pred.len(), 5);
    assert_eq!(rec.binaries[0].len(), 4);
}

#[test]
fn model_horizon_must_match() {
    let model = micro_model(4);
    let c = cfg(6);
    let f = obs(VehicleState::new(0.0, 18.0, 1.75, 0.0), &[], 5, 3);
    assert!(plan(&f, &Predictor::Learned(&model), &c, &weights(&c, 20.0, 1.75), None).is_err());
}
