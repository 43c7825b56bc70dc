//! Browser bindings: bicycle rollouts, IDM response curves and a single MPC plan.
//! Every function returns a JSON string.

use serde::Serialize;
use socialmpc::kinematics::{discrete_step, linearize, rk4_step};
use socialmpc::planner::Predictor;
use socialmpc::sim::idm::{idm_accel, IdmParams};
use socialmpc::sim::{mpc_cycle, Scenario, World};
use socialmpc::{Config, ControlInput, VehicleParams, VehicleState};
use wasm_bindgen::prelude::*;

fn to_js<T: Serialize>(v: &T) -> Result<String, JsError> {
    serde_json::to_string(v).map_err(|e| JsError::new(&e.to_string()))
}

fn js_err(e: impl std::fmt::Display) -> JsError {
    JsError::new(&e.to_string())
}

#[derive(Serialize)]
struct Rollouts {
    /// `[s, y]` per step.
    exact: Vec<[f64; 2]>,
    linear: Vec<[f64; 2]>,
    max_gap: f64,
}

/// Nonlinear bicycle (RK4) against the model linearized at the initial speed, under a
/// constant control.
#[wasm_bindgen]
pub fn rollout_compare(v0: f64, accel: f64, steer: f64, seconds: f64) -> Result<String, JsError> {
    let p = VehicleParams::default();
    let dt = 0.1;
    let lin = linearize(v0, &p);
    let u = ControlInput::new(accel, steer);
    let mut a = VehicleState::new(0.0, v0, 0.0, 0.0);
    let mut b = a;
    let mut r = Rollouts { exact: vec![[0.0, 0.0]], linear: vec![[0.0, 0.0]], max_gap: 0.0 };
    for _ in 0..(seconds / dt).round() as usize {
        a = rk4_step(&a, &u, &p, dt).map_err(js_err)?;
        b = discrete_step(&b, &u, &lin, dt);
        r.exact.push([a.s, a.y]);
        r.linear.push([b.s, b.y]);
        r.max_gap = r.max_gap.max(((a.s - b.s).powi(2) + (a.y - b.y).powi(2)).sqrt());
    }
    to_js(&r)
}

/// IDM acceleration against bumper gap for a follower at `v` behind a leader at `v_lead`.
#[wasm_bindgen]
pub fn idm_curve(v: f64, v_lead: f64, v0: f64, t_headway: f64) -> Result<String, JsError> {
    let p = IdmParams { v0, t_headway, ..IdmParams::default() };
    let pts: Vec<[f64; 2]> = (1..=120)
        .map(|k| {
            let gap = k as f64;
            [gap, idm_accel(v, Some((v_lead, gap)), &p)]
        })
        .collect();
    let free = idm_accel(v, None, &p);
    to_js(&serde_json::json!({ "points": pts, "free_road": free }))
}

#[derive(Serialize)]
struct PlanView {
    status: String,
    objective: f64,
    lane_width: f64,
    lanes: usize,
    /// Predicted `[s, y]` of the ego, then one list per surrounding slot.
    ego: Vec<[f64; 2]>,
    others: Vec<Vec<[f64; 2]>>,
    accel: Vec<f64>,
    steer: Vec<f64>,
    min_margin: f64,
}

/// Populates the off-ramp road at demand `vc` and plans the ego once with physics-only
/// predictions.
#[wasm_bindgen]
pub fn plan_scene(vc: f64, seed: u32, ego_lane: usize) -> Result<String, JsError> {
    let cfg = Config::default();
    let scn = Scenario {
        vc_ratio: vc,
        seed: seed as u64,
        ego_lane,
        ..Scenario::default()
    };
    scn.validate().map_err(js_err)?;
    let world = World::new(&scn, cfg.dt, true).map_err(js_err)?;
    let res = mpc_cycle(&world, &Predictor::Physics, &cfg, &scn, None).map_err(js_err)?;
    let n_surr = res.x_pred[0].surr.len();
    let others = (0..n_surr)
        .map(|i| res.x_pred.iter().filter_map(|x| x.surr[i].map(|v| [v.s, v.y])).collect())
        .collect();
    to_js(&PlanView {
        status: format!("{:?}", res.status).to_lowercase(),
        objective: res.objective,
        lane_width: scn.lane_width,
        lanes: scn.lanes,
        ego: res.x_pred.iter().map(|x| [x.ego.s, x.ego.y]).collect(),
        others,
        accel: res.u_ego.iter().map(|u| u.accel).collect(),
        steer: res.u_ego.iter().map(|u| u.steer).collect(),
        min_margin: res.min_separation_margin(),
    })
}
