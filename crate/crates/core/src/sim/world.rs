//! Multi-lane straight road with IDM/MOBIL traffic and an optional externally driven ego.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal};
use serde::{Deserialize, Serialize};

use super::idm::{mobil_decide, LaneContext, LaneDecision, MobilParams, MobilVehicle};
use super::{IdmParams, Scenario};
use crate::error::Result;
use crate::frame::TrackPoint;
use crate::kinematics::rk4_step;
use crate::seed::stream_rng;
use crate::types::{ControlInput, VehicleParams, VehicleState};

/// Duration of a surrounding-vehicle lane change, s.
pub const LANE_CHANGE_S: f64 = 3.0;
/// Steps between lane-change decisions of one vehicle.
pub const DECISION_STEPS: usize = 10;
pub const EGO_ID: u32 = 0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Road {
    pub lanes: usize,
    pub lane_width: f64,
    pub length: f64,
}

impl Road {
    /// Lane 0 is the rightmost; `y` grows to the left.
    pub fn center(&self, lane: usize) -> f64 {
        (lane as f64 + 0.5) * self.lane_width
    }

    pub fn lane_of(&self, y: f64) -> usize {
        ((y / self.lane_width).floor().max(0.0) as usize).min(self.lanes - 1)
    }

    /// Bit mask of the lanes the lateral interval `[y - half, y + half]` touches.
    pub fn lanes_touched(&self, y: f64, half: f64) -> u32 {
        let lo = self.lane_of(y - half);
        let hi = self.lane_of(y + half);
        (lo..=hi).fold(0, |m, l| m | 1 << l)
    }

    pub fn on_road(&self, y: f64) -> bool {
        y >= 0.0 && y <= self.lanes as f64 * self.lane_width
    }
}

/// Quintic lateral move between two lane centers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LaneChange {
    pub from: usize,
    pub to: usize,
    pub y0: f64,
    pub y1: f64,
    pub elapsed: f64,
    pub duration: f64,
}

impl LaneChange {
    pub fn new(from: usize, to: usize, y0: f64, y1: f64, duration: f64) -> Self {
        Self {
            from,
            to,
            y0,
            y1,
            elapsed: 0.0,
            duration,
        }
    }

    /// Lateral position and rate at `t` seconds into the move.
    pub fn lateral(&self, t: f64) -> (f64, f64) {
        let tau = (t / self.duration).clamp(0.0, 1.0);
        let d = self.y1 - self.y0;
        let shape = tau.powi(3) * (10.0 - 15.0 * tau + 6.0 * tau * tau);
        let rate = 30.0 * tau * tau * (1.0 - tau).powi(2) / self.duration;
        (self.y0 + d * shape, d * rate)
    }

    pub fn done(&self) -> bool {
        self.elapsed >= self.duration - 1e-9
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Vehicle {
    pub id: u32,
    pub state: VehicleState,
    /// Acceleration applied over the last step.
    pub accel: f64,
    pub params: VehicleParams,
    pub idm: IdmParams,
    pub change: Option<LaneChange>,
}

impl Vehicle {
    pub fn is_ego(&self) -> bool {
        self.id == EGO_ID
    }

    pub fn as_mobil(&self) -> MobilVehicle {
        MobilVehicle {
            s: self.state.s,
            v: self.state.v,
            length: self.params.length,
            idm: self.idm,
        }
    }

    fn corners(&self) -> [[f64; 2]; 4] {
        let (c, s) = (self.state.psi.cos(), self.state.psi.sin());
        let (hl, hw) = (0.5 * self.params.length, 0.5 * self.params.width);
        [(hl, hw), (hl, -hw), (-hl, -hw), (-hl, hw)]
            .map(|(a, b)| [self.state.s + a * c - b * s, self.state.y + a * s + b * c])
    }
}

/// Oriented-rectangle overlap (separating axis test).
pub fn footprints_overlap(a: &Vehicle, b: &Vehicle) -> bool {
    let reach = 0.5 * (a.params.length + b.params.length + a.params.width + b.params.width);
    if (a.state.s - b.state.s).abs() > reach || (a.state.y - b.state.y).abs() > reach {
        return false;
    }
    let (ca, cb) = (a.corners(), b.corners());
    for psi in [a.state.psi, b.state.psi] {
        for axis in [[psi.cos(), psi.sin()], [-psi.sin(), psi.cos()]] {
            let proj = |pts: &[[f64; 2]; 4]| {
                pts.iter().map(|p| p[0] * axis[0] + p[1] * axis[1]).fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| (lo.min(x), hi.max(x)))
            };
            let (a_lo, a_hi) = proj(&ca);
            let (b_lo, b_hi) = proj(&cb);
            if a_hi <= b_lo || b_hi <= a_lo {
                return false;
            }
        }
    }
    true
}

/// One vehicle at one step, as logged.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleSnapshot {
    pub id: u32,
    pub s: f64,
    pub y: f64,
    pub v: f64,
    pub a: f64,
    pub psi: f64,
}

impl VehicleSnapshot {
    pub fn track_point(&self) -> TrackPoint {
        [self.s, self.y, self.v, self.a, self.psi]
    }
}

/// Contiguous per-vehicle track starting at `first_step`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Track {
    pub first_step: usize,
    pub points: Vec<TrackPoint>,
}

impl Track {
    pub fn at(&self, step: usize) -> Option<&TrackPoint> {
        step.checked_sub(self.first_step).and_then(|k| self.points.get(k))
    }

    pub fn covers(&self, from: usize, to: usize) -> bool {
        from >= self.first_step && to < self.first_step + self.points.len()
    }
}

pub struct World {
    pub road: Road,
    pub dt: f64,
    pub step: usize,
    /// Ego (when present) first, then surrounding vehicles by ascending id.
    pub vehicles: Vec<Vehicle>,
    pub tracks: BTreeMap<u32, Track>,
    pub spawned: usize,
    mobil: MobilParams,
    sv_idm: IdmParams,
    speed: Normal<f64>,
    speed_clip: (f64, f64),
    arrival: Option<Exp<f64>>,
    next_arrival: Vec<f64>,
    pending: Vec<usize>,
    next_id: u32,
    traits_rng: ChaCha8Rng,
    spawn_rng: ChaCha8Rng,
}

impl World {
    /// Populated road at the scenario's demand. `ego` places the ego at its spawn state.
    pub fn new(scn: &Scenario, dt: f64, ego: bool) -> Result<World> {
        let road = scn.road();
        let per_lane = scn.vc_ratio * scn.capacity / 3600.0;
        let arrival = (per_lane > 0.0).then(|| Exp::new(per_lane).expect("positive rate"));
        let mut spawn_rng = stream_rng(scn.seed, "spawn");
        let next_arrival = (0..road.lanes)
            .map(|_| arrival.as_ref().map_or(f64::INFINITY, |d| d.sample(&mut spawn_rng)))
            .collect();
        let mut w = World {
            road,
            dt,
            step: 0,
            vehicles: Vec::new(),
            tracks: BTreeMap::new(),
            spawned: 0,
            mobil: scn.style.mobil(),
            sv_idm: scn.style.idm(),
            speed: Normal::new(scn.sv_speed, scn.sv_speed_sd).map_err(|e| crate::Error::Config(e.to_string()))?,
            speed_clip: (0.7 * scn.sv_speed, 1.3 * scn.sv_speed),
            arrival,
            next_arrival,
            pending: vec![0; road.lanes],
            next_id: EGO_ID + 1,
            traits_rng: stream_rng(scn.seed, "scenario"),
            spawn_rng,
        };
        if ego {
            w.vehicles.push(Vehicle {
                id: EGO_ID,
                state: VehicleState::new(scn.ego_s, scn.ego_v, road.center(scn.ego_lane), 0.0),
                accel: 0.0,
                params: VehicleParams::default(),
                idm: IdmParams {
                    v0: scn.ego_v_des,
                    ..IdmParams::default()
                },
                change: None,
            });
        }
        if per_lane > 0.0 {
            w.populate(scn, per_lane, ego);
        }
        w.record();
        Ok(w)
    }

    fn populate(&mut self, scn: &Scenario, per_lane: f64, ego: bool) {
        let mean_spacing = scn.sv_speed / per_lane;
        let spacing = Exp::new(1.0 / mean_spacing).expect("positive spacing");
        let len = VehicleParams::default().length;
        for lane in 0..self.road.lanes {
            let mut s = self.road.length - 0.5 * mean_spacing * self.traits_rng.random::<f64>();
            let mut lead_v = f64::INFINITY;
            while s > 0.0 {
                let idm = self.draw_idm();
                let v = idm.v0.min(lead_v);
                let clear_of_ego = !ego || lane != scn.ego_lane || (s - scn.ego_s).abs() > 50.0;
                if clear_of_ego {
                    self.push_sv(lane, s, v, idm);
                    lead_v = v;
                }
                let min_gap = len + idm.s0 + v * idm.t_headway;
                s -= spacing.sample(&mut self.traits_rng).max(min_gap);
            }
        }
        self.sort();
    }

    fn draw_idm(&mut self) -> IdmParams {
        let v0 = self.speed.sample(&mut self.traits_rng).clamp(self.speed_clip.0, self.speed_clip.1);
        IdmParams { v0, ..self.sv_idm }
    }

    fn push_sv(&mut self, lane: usize, s: f64, v: f64, idm: IdmParams) {
        self.vehicles.push(Vehicle {
            id: self.next_id,
            state: VehicleState::new(s, v, self.road.center(lane), 0.0),
            accel: 0.0,
            params: VehicleParams::default(),
            idm,
            change: None,
        });
        self.next_id += 1;
    }

    fn sort(&mut self) {
        self.vehicles.sort_by_key(|v| v.id);
    }

    pub fn time(&self) -> f64 {
        self.step as f64 * self.dt
    }

    pub fn ego(&self) -> Option<&Vehicle> {
        self.vehicles.first().filter(|v| v.is_ego())
    }

    pub fn ego_mut(&mut self) -> Option<&mut Vehicle> {
        self.vehicles.first_mut().filter(|v| v.is_ego())
    }

    /// Lanes a vehicle occupies: its lateral extent plus the target of an ongoing change.
    pub fn lane_mask(&self, v: &Vehicle) -> u32 {
        let m = self.road.lanes_touched(v.state.y, 0.5 * v.params.width);
        match &v.change {
            Some(c) => m | 1 << c.to | 1 << c.from,
            None => m,
        }
    }

    /// Nearest vehicle ahead of `idx` (and behind, when `ahead` is false) among those
    /// sharing a lane with `mask`.
    pub fn nearest(&self, idx: usize, mask: u32, ahead: bool) -> Option<usize> {
        let me = &self.vehicles[idx];
        let mut best: Option<(f64, usize)> = None;
        for (j, o) in self.vehicles.iter().enumerate() {
            if j == idx || self.lane_mask(o) & mask == 0 {
                continue;
            }
            let ds = o.state.s - me.state.s;
            let d = if ahead { ds } else { -ds };
            // Exact ties: the higher index counts as ahead.
            if (d > 0.0 || (d == 0.0 && (j > idx) == ahead)) && best.is_none_or(|(bd, _)| d < bd) {
                best = Some((d, j));
            }
        }
        best.map(|(_, j)| j)
    }

    fn gap(&self, follower: usize, leader: usize) -> f64 {
        let (f, l) = (&self.vehicles[follower], &self.vehicles[leader]);
        l.state.s - f.state.s - 0.5 * (l.params.length + f.params.length)
    }

    /// IDM acceleration of vehicle `idx` behind its leader in `mask`.
    pub fn idm_accel_in(&self, idx: usize, mask: u32) -> f64 {
        let me = &self.vehicles[idx];
        let leader = self.nearest(idx, mask, true).map(|j| (self.vehicles[j].state.v, self.gap(idx, j)));
        super::idm::idm_accel(me.state.v, leader, &me.idm)
    }

    /// Leader and follower of `idx` in `lane`.
    pub fn lane_context(&self, idx: usize, lane: usize) -> LaneContext {
        let mask = 1 << lane;
        LaneContext {
            leader: self.nearest(idx, mask, true).map(|j| self.vehicles[j].as_mobil()),
            follower: self.nearest(idx, mask, false).map(|j| self.vehicles[j].as_mobil()),
        }
    }

    /// MOBIL decision for a vehicle centered in `lane`, with a per-side bias.
    pub fn lane_decision(&self, idx: usize, lane: usize, bias: [f64; 2]) -> LaneDecision {
        let left = (lane + 1 < self.road.lanes).then(|| self.lane_context(idx, lane + 1));
        let right = (lane > 0).then(|| self.lane_context(idx, lane - 1));
        mobil_decide(
            &self.vehicles[idx].as_mobil(),
            &self.lane_context(idx, lane),
            left.as_ref(),
            right.as_ref(),
            &self.mobil,
            bias,
        )
    }

    pub fn mobil_params(&self) -> &MobilParams {
        &self.mobil
    }

    /// Advances one step. Surrounding vehicles act on the current snapshot; the ego (if
    /// present) applies `ego_u` through the nonlinear bicycle model.
    pub fn advance(&mut self, ego_u: Option<ControlInput>) -> Result<()> {
        let accels: Vec<f64> = (0..self.vehicles.len())
            .map(|i| {
                let v = &self.vehicles[i];
                if v.is_ego() {
                    0.0
                } else {
                    self.idm_accel_in(i, self.lane_mask(v))
                }
            })
            .collect();
        for i in 0..self.vehicles.len() {
            let v = &self.vehicles[i];
            if v.is_ego() || v.change.is_some() || (self.step + v.id as usize) % DECISION_STEPS != 0 {
                continue;
            }
            let lane = self.road.lane_of(v.state.y);
            let to = match self.lane_decision(i, lane, [0.0, 0.0]) {
                LaneDecision::Stay => continue,
                LaneDecision::Left => lane + 1,
                LaneDecision::Right => lane - 1,
            };
            let (y0, y1) = (v.state.y, self.road.center(to));
            self.vehicles[i].change = Some(LaneChange::new(lane, to, y0, y1, LANE_CHANGE_S));
        }
        let dt = self.dt;
        for (v, &a) in self.vehicles.iter_mut().zip(&accels) {
            if v.is_ego() {
                let u = ego_u.unwrap_or(ControlInput::ZERO);
                // Never integrate through a standstill.
                let u = ControlInput::new(u.accel.max(-v.state.v / dt), u.steer);
                v.state = rk4_step(&v.state, &u, &v.params, dt)?;
                v.state.v = v.state.v.max(0.0);
                v.accel = u.accel;
                continue;
            }
            let v_old = v.state.v;
            let v_new = v_old + a * dt;
            let ds = if v_new < 0.0 { v_old * v_old / (2.0 * -a) } else { 0.5 * (v_old + v_new) * dt };
            let v_new = v_new.max(0.0);
            v.state.s += ds;
            v.state.v = v_new;
            v.accel = (v_new - v_old) / dt;
            if let Some(c) = &mut v.change {
                c.elapsed += dt;
                let (y, y_rate) = c.lateral(c.elapsed);
                v.state.y = y;
                v.state.psi = y_rate.atan2(v_new.max(1.0));
                if c.done() {
                    v.state.y = c.y1;
                    v.state.psi = 0.0;
                    v.change = None;
                }
            }
        }
        let length = self.road.length;
        self.vehicles.retain(|v| v.is_ego() || v.state.s <= length);
        self.step += 1;
        self.spawn();
        self.record();
        Ok(())
    }

    fn spawn(&mut self) {
        let Some(arrival) = self.arrival else { return };
        let t = self.time();
        for lane in 0..self.road.lanes {
            while self.next_arrival[lane] <= t {
                self.pending[lane] += 1;
                self.next_arrival[lane] += arrival.sample(&mut self.spawn_rng);
            }
            if self.pending[lane] == 0 {
                continue;
            }
            let idm = self.draw_idm_spawn();
            let len = VehicleParams::default().length;
            let last = self
                .vehicles
                .iter()
                .filter(|v| self.lane_mask(v) & (1 << lane) != 0)
                .min_by(|a, b| a.state.s.total_cmp(&b.state.s));
            let v = last.map_or(idm.v0, |l| idm.v0.min(l.state.v));
            let clear = last.is_none_or(|l| l.state.s - 0.5 * (l.params.length + len) >= idm.s0 + v * idm.t_headway);
            if clear {
                self.pending[lane] -= 1;
                self.spawned += 1;
                self.push_sv(lane, 0.0, v, idm);
            }
        }
    }

    /// Spawn traits come from the spawn stream so that demand does not shift the
    /// initial population.
    fn draw_idm_spawn(&mut self) -> IdmParams {
        let v0 = self.speed.sample(&mut self.spawn_rng).clamp(self.speed_clip.0, self.speed_clip.1);
        IdmParams { v0, ..self.sv_idm }
    }

    fn record(&mut self) {
        let step = self.step;
        for v in &self.vehicles {
            let p = [v.state.s, v.state.y, v.state.v, v.accel, v.state.psi];
            self.tracks
                .entry(v.id)
                .or_insert_with(|| Track {
                    first_step: step,
                    points: Vec::new(),
                })
                .points
                .push(p);
        }
    }

    pub fn snapshot(&self) -> Vec<VehicleSnapshot> {
        self.vehicles
            .iter()
            .map(|v| VehicleSnapshot {
                id: v.id,
                s: v.state.s,
                y: v.state.y,
                v: v.state.v,
                a: v.accel,
                psi: v.state.psi,
            })
            .collect()
    }

    /// First overlapping pair, by id.
    pub fn collision(&self) -> Option<(u32, u32)> {
        for i in 0..self.vehicles.len() {
            for j in i + 1..self.vehicles.len() {
                if footprints_overlap(&self.vehicles[i], &self.vehicles[j]) {
                    return Some((self.vehicles[i].id, self.vehicles[j].id));
                }
            }
        }
        None
    }
}
