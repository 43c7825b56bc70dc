//! Car-following (IDM) and lane-change decisions (MOBIL).

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IdmParams {
    /// Desired speed, m/s.
    pub v0: f64,
    /// Desired time headway, s.
    pub t_headway: f64,
    /// Jam distance, m.
    pub s0: f64,
    pub a_max: f64,
    /// Comfortable deceleration, m/s^2 (positive).
    pub b: f64,
    pub delta: f64,
    /// Emergency deceleration bound, m/s^2 (positive).
    pub b_max: f64,
}

impl Default for IdmParams {
    fn default() -> Self {
        Self {
            v0: 30.0,
            t_headway: 1.5,
            s0: 2.0,
            a_max: 1.5,
            b: 2.0,
            delta: 4.0,
            b_max: 9.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MobilParams {
    pub politeness: f64,
    /// Incentive threshold, m/s^2.
    pub threshold: f64,
    /// Deceleration the new follower must not exceed, m/s^2 (positive).
    pub b_safe: f64,
}

impl Default for MobilParams {
    fn default() -> Self {
        Self {
            politeness: 0.3,
            threshold: 0.2,
            b_safe: 4.0,
        }
    }
}

/// IDM acceleration. `leader` is `(v_lead, bumper gap)`; a non-positive gap returns
/// `-b_max`. The result is clamped to `[-b_max, a_max]`.
pub fn idm_accel(v: f64, leader: Option<(f64, f64)>, p: &IdmParams) -> f64 {
    let free = 1.0 - (v / p.v0).powf(p.delta);
    let a = match leader {
        None => p.a_max * free,
        Some((_, gap)) if gap <= 0.0 => return -p.b_max,
        Some((v_lead, gap)) => {
            let dv = v - v_lead;
            let s_star = p.s0 + (v * p.t_headway + v * dv / (2.0 * (p.a_max * p.b).sqrt())).max(0.0);
            p.a_max * (free - (s_star / gap).powi(2))
        }
    };
    a.clamp(-p.b_max, p.a_max)
}

/// A vehicle as seen by the lane-change model: center position, speed, length and its
/// own car-following parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MobilVehicle {
    pub s: f64,
    pub v: f64,
    pub length: f64,
    pub idm: IdmParams,
}

impl MobilVehicle {
    fn gap_to(&self, leader: &MobilVehicle) -> f64 {
        leader.s - self.s - 0.5 * (leader.length + self.length)
    }

    /// IDM acceleration behind `leader`.
    pub fn accel_behind(&self, leader: Option<&MobilVehicle>) -> f64 {
        idm_accel(self.v, leader.map(|l| (l.v, self.gap_to(l))), &self.idm)
    }
}

/// Nearest leader and follower of the deciding vehicle in one lane.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LaneContext {
    pub leader: Option<MobilVehicle>,
    pub follower: Option<MobilVehicle>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LaneDecision {
    Stay,
    Left,
    Right,
}

/// Incentive of moving into `target`, or `None` when the move is unsafe.
pub fn mobil_incentive(me: &MobilVehicle, current: &LaneContext, target: &LaneContext, p: &MobilParams) -> Option<f64> {
    if let Some(l) = &target.leader {
        if me.gap_to(l) <= 0.0 {
            return None;
        }
    }
    let mut gain_others = 0.0;
    if let Some(n) = &target.follower {
        if n.gap_to(me) <= 0.0 {
            return None;
        }
        let a_new = n.accel_behind(Some(me));
        if a_new < -p.b_safe {
            return None;
        }
        gain_others += a_new - n.accel_behind(target.leader.as_ref());
    }
    if let Some(o) = &current.follower {
        gain_others += o.accel_behind(current.leader.as_ref()) - o.accel_behind(Some(me));
    }
    let own = me.accel_behind(target.leader.as_ref()) - me.accel_behind(current.leader.as_ref());
    Some(own + p.politeness * gain_others)
}

/// Lane decision with an extra per-side incentive `bias` (left, right); a side of
/// `None` does not exist. Equal incentives resolve to `Stay`.
pub fn mobil_decide(
    me: &MobilVehicle,
    current: &LaneContext,
    left: Option<&LaneContext>,
    right: Option<&LaneContext>,
    p: &MobilParams,
    bias: [f64; 2],
) -> LaneDecision {
    let score = |lane: Option<&LaneContext>, b: f64| {
        lane.and_then(|l| mobil_incentive(me, current, l, p))
            .map(|x| x + b)
            .filter(|x| *x > p.threshold)
    };
    match (score(left, bias[0]), score(right, bias[1])) {
        (Some(l), Some(r)) if l > r => LaneDecision::Left,
        (Some(l), Some(r)) if r > l => LaneDecision::Right,
        (Some(_), Some(_)) => LaneDecision::Stay,
        (Some(_), None) => LaneDecision::Left,
        (None, Some(_)) => LaneDecision::Right,
        (None, None) => LaneDecision::Stay,
    }
}
