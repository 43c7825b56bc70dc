use socialmpc_wasm::{idm_curve, plan_scene, rollout_compare};

#[test]
fn straight_rollouts_agree() {
    let r: serde_json::Value = serde_json::from_str(&rollout_compare(20.0, 0.0, 0.0, 3.0).unwrap()).unwrap();
    assert_eq!(r["exact"].as_array().unwrap().len(), 31);
    assert!(r["max_gap"].as_f64().unwrap() < 1e-9);
}

#[test]
fn idm_curve_rises_with_gap() {
    let r: serde_json::Value = serde_json::from_str(&idm_curve(20.0, 20.0, 30.0, 1.5).unwrap()).unwrap();
    let a: Vec<f64> = r["points"].as_array().unwrap().iter().map(|p| p[1].as_f64().unwrap()).collect();
    assert!(a.windows(2).all(|w| w[1] >= w[0]));
}

#[test]
fn plan_scene_gives_a_full_plan() {
    let r: serde_json::Value = serde_json::from_str(&plan_scene(0.4, 1, 2).unwrap()).unwrap();
    assert_eq!(r["ego"].as_array().unwrap().len(), 51);
    assert_eq!(r["accel"].as_array().unwrap().len(), 50);
}
