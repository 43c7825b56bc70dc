//! Held-out prediction scoring against ground truth and a constant-velocity baseline.

use serde::{Deserialize, Serialize};

use crate::dynamics::{assemble_step, rollout, LearnedBlocks};
use crate::error::Result;
use crate::frame::Frame;
use crate::metrics::{ade, fde, Trajectory};
use crate::model::Model;
use crate::types::{ControlInput, SystemControl, SystemState};

use super::infer_ego_controls;

fn surr_paths(states: &[SystemState], mask: &[bool]) -> Vec<Trajectory> {
    (1..mask.len())
        .filter(|&i| mask[i])
        .map(|i| {
            states[1..]
                .iter()
                .map(|x| {
                    let v = x.vehicle(i).expect("present slot");
                    [v.s, v.y]
                })
                .collect()
        })
        .collect()
}

/// Rolls the frame forward with the matrices linearized at the current state.
pub(crate) fn rollout_frozen(frame: &Frame, blocks: &[LearnedBlocks], u_ego: &[ControlInput], u_surr: &[Vec<Option<ControlInput>>]) -> Result<Vec<SystemState>> {
    let x_t = frame.current_state();
    let params = frame.params();
    let n_surr = frame.n_surr();
    let seq = blocks
        .iter()
        .map(|b| assemble_step(&x_t, &params, b))
        .collect::<Result<Vec<_>>>()?;
    let ego: Vec<SystemControl> = u_ego.iter().map(|u| SystemControl::ego_only(*u, n_surr)).collect();
    let surr: Vec<SystemControl> = u_surr.iter().map(|u| SystemControl::surr_only(u)).collect();
    Ok(rollout(&x_t, &frame.previous_state(), &seq, &ego, &surr, frame.dt))
}

/// Ground-truth `(s, y)` futures of the present surrounding vehicles.
pub fn ground_truth_trajectories(frame: &Frame) -> Vec<Trajectory> {
    frame.vehicles[1..]
        .iter()
        .filter(|t| t.present)
        .map(|t| t.future.iter().map(|p| [p[0], p[1]]).collect())
        .collect()
}

/// Model prediction for the present surrounding vehicles, most likely modality,
/// with the ego following its ground-truth controls.
pub fn predicted_trajectories(model: &Model, frame: &Frame, v_floor: f64) -> Result<Vec<Trajectory>> {
    let u_ego = infer_ego_controls(frame, v_floor);
    let pred = model.predict(frame, &u_ego)?;
    let states = rollout_frozen(frame, &pred.blocks, &u_ego, &pred.u_surr)?;
    Ok(surr_paths(&states, &frame.mask()))
}

/// Surrounding vehicles holding their current speed and heading.
pub fn constant_velocity_trajectories(frame: &Frame) -> Result<Vec<Trajectory>> {
    let n = frame.horizon();
    let blocks = vec![LearnedBlocks::zero(); n];
    let u_ego = vec![ControlInput::ZERO; n];
    let u_surr = vec![vec![None; frame.n_surr()]; n];
    let states = rollout_frozen(frame, &blocks, &u_ego, &u_surr)?;
    Ok(surr_paths(&states, &frame.mask()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionScores {
    /// Frames that had at least one surrounding vehicle.
    pub frames: usize,
    /// ADE at every horizon step `1..=N`, averaged over frames.
    pub model_ade: Vec<f64>,
    pub model_fde: f64,
    pub cv_ade: Vec<f64>,
    pub cv_fde: f64,
}

pub fn evaluate_predictions(model: &Model, frames: &[&Frame], v_floor: f64) -> Result<PredictionScores> {
    let n = model.config().horizon;
    let mut s = PredictionScores {
        frames: 0,
        model_ade: vec![0.0; n],
        model_fde: 0.0,
        cv_ade: vec![0.0; n],
        cv_fde: 0.0,
    };
    for f in frames {
        let gt = ground_truth_trajectories(f);
        if gt.is_empty() {
            continue;
        }
        let pred = predicted_trajectories(model, f, v_floor)?;
        let cv = constant_velocity_trajectories(f)?;
        for k in 0..n {
            s.model_ade[k] += ade(&pred, &gt, k + 1)?;
            s.cv_ade[k] += ade(&cv, &gt, k + 1)?;
        }
        s.model_fde += fde(&pred, &gt)?;
        s.cv_fde += fde(&cv, &gt)?;
        s.frames += 1;
    }
    let d = s.frames.max(1) as f64;
    for v in s.model_ade.iter_mut().chain(s.cv_ade.iter_mut()) {
        *v /= d;
    }
    s.model_fde /= d;
    s.cv_fde /= d;
    Ok(s)
}
