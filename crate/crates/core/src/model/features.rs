//! Conversion of frames and ego plans into normalized network inputs.

use crate::frame::{Frame, MAP_FEATURES};
use crate::tensor::Tensor;
use crate::types::ControlInput;

pub(crate) const TRACK_IN: usize = 5;
/// Waypoint features plus a one-hot lane id.
pub(crate) const MAP_IN: usize = MAP_FEATURES + 3;

const S_SCALE: f64 = 50.0;
const Y_SCALE: f64 = 4.0;
const V_SCALE: f64 = 30.0;
const A_SCALE: f64 = 3.0;
const PSI_SCALE: f64 = 0.2;
const MAP_X_SCALE: f64 = 40.0;

/// Normalization of (accel, steer) for ego-plan inputs and reaction outputs.
pub const CONTROL_SCALE: [f64; 2] = [3.0, 0.05];

/// `T_h x 5` history of vehicle `i`, positions relative to the ego's current position.
pub(crate) fn track_features(frame: &Frame, i: usize) -> Tensor {
    let ego_now = frame.vehicles[0].history.last().expect("ego history");
    let (s0, y0) = (ego_now[0], ego_now[1]);
    let hist = &frame.vehicles[i].history;
    let mut data = Vec::with_capacity(hist.len() * TRACK_IN);
    for p in hist {
        data.extend_from_slice(&[
            (p[0] - s0) / S_SCALE,
            (p[1] - y0) / Y_SCALE,
            p[2] / V_SCALE,
            p[3] / A_SCALE,
            p[4] / PSI_SCALE,
        ]);
    }
    Tensor::constant(&[hist.len(), TRACK_IN], data)
}

/// `3W x 7` map tokens of vehicle `i` (current, left, right lanes) and the per-token
/// lane-exists flags. Tokens of absent lanes are all zero.
pub(crate) fn map_features(frame: &Frame, i: usize, waypoints: usize) -> (Tensor, Vec<bool>) {
    let map = &frame.vehicles[i].map;
    let flags = map.lane_flags();
    let mut data = Vec::with_capacity(3 * waypoints * MAP_IN);
    let mut exists = Vec::with_capacity(3 * waypoints);
    for (lane_idx, lane) in map.lanes().iter().enumerate() {
        for w in 0..waypoints {
            match lane.get(w).filter(|_| flags[lane_idx]) {
                Some(wp) => {
                    let mut onehot = [0.0; 3];
                    onehot[lane_idx] = 1.0;
                    data.extend_from_slice(&[wp[0] / MAP_X_SCALE, wp[1] / Y_SCALE, wp[2] / PSI_SCALE, wp[3]]);
                    data.extend_from_slice(&onehot);
                    exists.push(true);
                }
                None => {
                    data.extend_from_slice(&[0.0; MAP_IN]);
                    exists.push(false);
                }
            }
        }
    }
    (Tensor::constant(&[3 * waypoints, MAP_IN], data), exists)
}

/// `N x 2` normalized ego plan.
pub(crate) fn plan_features(plan: &[ControlInput]) -> Tensor {
    let data = plan
        .iter()
        .flat_map(|u| [u.accel / CONTROL_SCALE[0], u.steer / CONTROL_SCALE[1]])
        .collect();
    Tensor::constant(&[plan.len(), 2], data)
}
