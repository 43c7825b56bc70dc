//! Training/inference samples and their JSON Lines file format.
//!
//! One frame per line:
//!
//! ```text
//! {"frame_id": "...", "dt": 0.1, "vehicles": [
//!    {"slot": "ego", "present": true, "params": {...},
//!     "history": [[s, y, v, a, psi], ...], "future": [[s, y, v, a, psi], ...],
//!     "map": {"current": [[x, y, heading, exists], ...], "left": [...], "right": [...]}},
//!    ...]}
//! ```
//!
//! Vehicles appear in canonical slot order (ego, FV, RV, LFV, LRV, RFV, RRV). Absent slots
//! carry `"present": false` and empty tracks.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::Config;
use crate::error::{Error, Result};
use crate::types::{Slot, SystemState, VehicleParams, VehicleState};

/// Per-step trajectory features: s, y, v, a, psi.
pub const TRACK_FEATURES: usize = 5;
/// Per-waypoint map features: local x, local y, lane heading, lane-exists flag.
pub const MAP_FEATURES: usize = 4;

pub type TrackPoint = [f64; TRACK_FEATURES];
pub type Waypoint = [f64; MAP_FEATURES];

pub fn track_point_state(p: &TrackPoint) -> VehicleState {
    VehicleState::new(p[0], p[2], p[1], p[4])
}

/// Current, left and right lane polylines in the vehicle's local frame.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LaneMap {
    pub current: Vec<Waypoint>,
    pub left: Vec<Waypoint>,
    pub right: Vec<Waypoint>,
}

impl LaneMap {
    pub fn lanes(&self) -> [&[Waypoint]; 3] {
        [&self.current, &self.left, &self.right]
    }

    /// Whether each of (current, left, right) exists.
    pub fn lane_flags(&self) -> [bool; 3] {
        self.lanes()
            .map(|lane| lane.first().is_some_and(|w| w[3] > 0.5))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleTrack {
    pub slot: Slot,
    pub present: bool,
    pub params: VehicleParams,
    pub history: Vec<TrackPoint>,
    pub future: Vec<TrackPoint>,
    pub map: LaneMap,
}

impl VehicleTrack {
    pub fn absent(slot: Slot) -> Self {
        Self {
            slot,
            present: false,
            params: VehicleParams::default(),
            history: Vec::new(),
            future: Vec::new(),
            map: LaneMap::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub frame_id: String,
    pub dt: f64,
    pub vehicles: Vec<VehicleTrack>,
}

/// Dimensions every frame in a dataset must share.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FrameDims {
    pub history: usize,
    pub horizon: usize,
    pub waypoints: usize,
}

impl From<&Config> for FrameDims {
    fn from(cfg: &Config) -> Self {
        Self {
            history: cfg.history,
            horizon: cfg.horizon,
            waypoints: cfg.map_waypoints,
        }
    }
}

impl Frame {
    pub fn validate(&self, dims: FrameDims) -> Result<()> {
        let err = |message: String| Error::Schema {
            frame_id: self.frame_id.clone(),
            message,
        };
        if !(self.dt > 0.0) {
            return Err(err(format!("dt must be positive, got {}", self.dt)));
        }
        if self.vehicles.len() != Slot::ALL.len() {
            return Err(err(format!(
                "expected {} vehicle slots, got {}",
                Slot::ALL.len(),
                self.vehicles.len()
            )));
        }
        for (track, slot) in self.vehicles.iter().zip(Slot::ALL) {
            if track.slot != slot {
                return Err(err(format!("slot {} out of canonical order (expected {slot})", track.slot)));
            }
            if !track.present {
                if slot == Slot::Ego {
                    return Err(err("ego must be present".into()));
                }
                if !track.history.is_empty() || !track.future.is_empty() {
                    return Err(err(format!("absent slot {slot} carries track data")));
                }
                continue;
            }
            track.params.validate().map_err(|e| err(format!("{slot}: {e}")))?;
            if track.history.len() != dims.history {
                return Err(err(format!(
                    "{slot}: history length {} != {}",
                    track.history.len(),
                    dims.history
                )));
            }
            if track.future.len() != dims.horizon {
                return Err(err(format!(
                    "{slot}: future length {} != {}",
                    track.future.len(),
                    dims.horizon
                )));
            }
            for (name, lane) in ["current", "left", "right"].iter().zip(track.map.lanes()) {
                if lane.len() != dims.waypoints {
                    return Err(err(format!(
                        "{slot}: {name} lane has {} waypoints, expected {}",
                        lane.len(),
                        dims.waypoints
                    )));
                }
            }
            if !track.map.lane_flags()[0] {
                return Err(err(format!("{slot}: current lane must exist")));
            }
            let finite = track
                .history
                .iter()
                .chain(&track.future)
                .all(|p| p.iter().all(|x| x.is_finite()));
            if !finite {
                return Err(err(format!("{slot}: non-finite track value")));
            }
        }
        Ok(())
    }

    pub fn n_surr(&self) -> usize {
        self.vehicles.len() - 1
    }

    pub fn mask(&self) -> Vec<bool> {
        self.vehicles.iter().map(|v| v.present).collect()
    }

    pub fn params(&self) -> Vec<VehicleParams> {
        self.vehicles.iter().map(|v| v.params).collect()
    }

    fn state_from(&self, pick: impl Fn(&VehicleTrack) -> &TrackPoint) -> SystemState {
        let ego = track_point_state(pick(&self.vehicles[0]));
        let surr = self.vehicles[1..]
            .iter()
            .map(|t| t.present.then(|| track_point_state(pick(t))))
            .collect();
        SystemState::new(ego, surr)
    }

    /// System state at history index `k` (the last index is the current time).
    pub fn history_state(&self, k: usize) -> SystemState {
        self.state_from(|t| &t.history[k])
    }

    pub fn current_state(&self) -> SystemState {
        let last = self.vehicles[0].history.len() - 1;
        self.history_state(last)
    }

    pub fn previous_state(&self) -> SystemState {
        let last = self.vehicles[0].history.len() - 1;
        self.history_state(last - 1)
    }

    /// Ground-truth system state `k + 1` steps ahead of the current time.
    pub fn future_state(&self, k: usize) -> SystemState {
        self.state_from(|t| &t.future[k])
    }

    pub fn horizon(&self) -> usize {
        self.vehicles[0].future.len()
    }
}

/// Reads a JSON Lines frame file, validating each frame against `dims`.
pub fn load_frames(path: &Path, dims: FrameDims) -> Result<Vec<Frame>> {
    let reader = BufReader::new(File::open(path)?);
    let mut frames = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let frame: Frame = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        frame.validate(dims)?;
        frames.push(frame);
    }
    Ok(frames)
}

pub fn write_frames<'a>(path: &Path, frames: impl IntoIterator<Item = &'a Frame>) -> Result<usize> {
    let mut out = BufWriter::new(File::create(path)?);
    let mut count = 0;
    for frame in frames {
        serde_json::to_writer(&mut out, frame)?;
        out.write_all(b"\n")?;
        count += 1;
    }
    out.flush()?;
    Ok(count)
}
