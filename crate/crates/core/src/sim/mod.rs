//! Closed-loop off-ramp simulator: IDM/MOBIL traffic, the ego planners and the synthetic
//! dataset generator.

mod dataset;
mod episode;
mod frames;
pub mod idm;
mod world;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use dataset::{episode_frames, episode_scenario, generate_dataset, simulate_traffic, DatasetOptions};
pub use episode::{
    lane_change_events, mpc_cycle, read_episode, run_episode, write_episode, EgoPlanner, EpisodeLog, EpisodeSummary, LaneChangeEvent, Outcome, PasDriver, PlanStats, StepLog,
};
pub use frames::{lane_map, neighbor_slots, observation_frame, window_frame, SENSING_RANGE};
pub use idm::{idm_accel, mobil_decide, IdmParams, LaneContext, LaneDecision, MobilParams, MobilVehicle};
pub use world::{footprints_overlap, LaneChange, Road, Track, Vehicle, VehicleSnapshot, World, DECISION_STEPS, EGO_ID, LANE_CHANGE_S};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Style {
    Normal,
    Aggressive,
}

impl Style {
    pub fn idm(self) -> IdmParams {
        match self {
            Style::Normal => IdmParams::default(),
            Style::Aggressive => IdmParams {
                t_headway: 0.9,
                a_max: 2.5,
                ..IdmParams::default()
            },
        }
    }

    pub fn mobil(self) -> MobilParams {
        match self {
            Style::Normal => MobilParams::default(),
            Style::Aggressive => MobilParams {
                politeness: 0.1,
                threshold: 0.05,
                ..MobilParams::default()
            },
        }
    }
}

/// Off-ramp scenario. Lane 0 is the rightmost lane; the ramp leaves from `target_lane`
/// between `ramp_start` and `ramp_end`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Scenario {
    pub lanes: usize,
    pub lane_width: f64,
    pub length: f64,
    pub ramp_start: f64,
    pub ramp_end: f64,
    /// Demand over capacity.
    pub vc_ratio: f64,
    /// Lane capacity, veh/h.
    pub capacity: f64,
    pub style: Style,
    pub horizon_s: f64,
    pub seed: u64,
    pub ego_lane: usize,
    pub target_lane: usize,
    pub ego_s: f64,
    pub ego_v: f64,
    pub ego_v_des: f64,
    /// Mean and spread of surrounding desired speeds, m/s.
    pub sv_speed: f64,
    pub sv_speed_sd: f64,
    /// Time the ego spends lane keeping before its planner takes over, s.
    pub warmup_s: f64,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            lanes: 3,
            lane_width: 3.5,
            length: 800.0,
            ramp_start: 350.0,
            ramp_end: 500.0,
            vc_ratio: 0.6,
            capacity: 2200.0,
            style: Style::Normal,
            horizon_s: 60.0,
            seed: 0,
            ego_lane: 2,
            target_lane: 0,
            ego_s: 100.0,
            ego_v: 20.0,
            ego_v_des: 25.0,
            sv_speed: 25.0,
            sv_speed_sd: 2.5,
            warmup_s: 4.0,
        }
    }
}

impl Scenario {
    pub fn from_toml_str(text: &str) -> Result<Scenario> {
        let scn: Scenario = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        scn.validate()?;
        Ok(scn)
    }

    pub fn load(path: &Path) -> Result<Scenario> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    pub fn road(&self) -> Road {
        Road {
            lanes: self.lanes,
            lane_width: self.lane_width,
            length: self.length,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(format!("scenario: {m}")));
        if self.lanes == 0 || self.lanes > 8 || !(self.lane_width > 0.0) || !(self.length > 0.0) {
            return fail("road needs 1..=8 lanes and positive width and length");
        }
        if !(0.0 <= self.ramp_start && self.ramp_start < self.ramp_end && self.ramp_end <= self.length) {
            return fail("off-ramp window must lie within the road");
        }
        if self.target_lane >= self.lanes || self.ego_lane >= self.lanes {
            return fail("ego and target lanes must exist");
        }
        if !(self.ego_s >= 0.0 && self.ego_s < self.ramp_end) {
            return fail("ego must start before the ramp end");
        }
        if !(self.vc_ratio >= 0.0 && self.capacity > 0.0) {
            return fail("vc_ratio must be non-negative and capacity positive");
        }
        if !(self.horizon_s > 0.0 && self.warmup_s >= 0.0 && self.warmup_s < self.horizon_s) {
            return fail("horizon must be positive and exceed the warmup");
        }
        if !(self.ego_v >= 0.0 && self.ego_v_des > 0.0 && self.sv_speed > 0.0 && self.sv_speed_sd >= 0.0) {
            return fail("speeds must be positive");
        }
        Ok(())
    }
}
