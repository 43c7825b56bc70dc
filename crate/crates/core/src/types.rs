//! Vehicle-level and system-level state and control types.

use std::f64::consts::FRAC_PI_2;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of state components per vehicle: (s, v, y, psi).
pub const STATE_DIM: usize = 4;
/// Number of control components per vehicle: (a, delta_f).
pub const CONTROL_DIM: usize = 2;

/// Longitudinal/lateral state of one vehicle in Frenet coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct VehicleState {
    pub s: f64,
    pub v: f64,
    pub y: f64,
    pub psi: f64,
}

impl VehicleState {
    pub const fn new(s: f64, v: f64, y: f64, psi: f64) -> Self {
        Self { s, v, y, psi }
    }

    pub fn to_array(self) -> [f64; STATE_DIM] {
        [self.s, self.v, self.y, self.psi]
    }

    pub fn from_array(a: [f64; STATE_DIM]) -> Self {
        Self::new(a[0], a[1], a[2], a[3])
    }

    pub fn from_slice(a: &[f64]) -> Self {
        Self::new(a[0], a[1], a[2], a[3])
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.v >= 0.0) {
            return Err(Error::Domain(format!("negative speed {}", self.v)));
        }
        if !(self.psi.abs() <= FRAC_PI_2) {
            return Err(Error::Domain(format!("heading {} outside [-pi/2, pi/2]", self.psi)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ControlInput {
    /// Longitudinal acceleration, m/s^2.
    pub accel: f64,
    /// Front-wheel steering angle, rad.
    pub steer: f64,
}

impl ControlInput {
    pub const ZERO: ControlInput = ControlInput {
        accel: 0.0,
        steer: 0.0,
    };

    pub const fn new(accel: f64, steer: f64) -> Self {
        Self { accel, steer }
    }

    pub fn to_array(self) -> [f64; CONTROL_DIM] {
        [self.accel, self.steer]
    }
}

/// Geometry of a single vehicle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleParams {
    /// Center of gravity to front axle, m.
    pub l_f: f64,
    /// Center of gravity to rear axle, m.
    pub l_r: f64,
    pub length: f64,
    pub width: f64,
}

impl Default for VehicleParams {
    fn default() -> Self {
        Self {
            l_f: 1.4,
            l_r: 1.4,
            length: 4.8,
            width: 1.8,
        }
    }
}

impl VehicleParams {
    pub fn wheelbase(&self) -> f64 {
        self.l_f + self.l_r
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.l_f > 0.0 && self.l_r > 0.0) {
            return Err(Error::Domain(format!(
                "axle distances must be positive (l_f={}, l_r={})",
                self.l_f, self.l_r
            )));
        }
        if !(self.length > 0.0 && self.width > 0.0) {
            return Err(Error::Domain("vehicle footprint must be positive".into()));
        }
        Ok(())
    }
}

/// Relative role of a vehicle around the ego.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Slot {
    #[serde(rename = "ego")]
    Ego,
    #[serde(rename = "FV")]
    Front,
    #[serde(rename = "RV")]
    Rear,
    #[serde(rename = "LFV")]
    LeftFront,
    #[serde(rename = "LRV")]
    LeftRear,
    #[serde(rename = "RFV")]
    RightFront,
    #[serde(rename = "RRV")]
    RightRear,
}

impl Slot {
    /// Canonical order: ego followed by the six surrounding slots.
    pub const ALL: [Slot; 7] = [
        Slot::Ego,
        Slot::Front,
        Slot::Rear,
        Slot::LeftFront,
        Slot::LeftRear,
        Slot::RightFront,
        Slot::RightRear,
    ];

    pub const SURROUNDING: [Slot; 6] = [
        Slot::Front,
        Slot::Rear,
        Slot::LeftFront,
        Slot::LeftRear,
        Slot::RightFront,
        Slot::RightRear,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Slot::Ego => "ego",
            Slot::Front => "FV",
            Slot::Rear => "RV",
            Slot::LeftFront => "LFV",
            Slot::LeftRear => "LRV",
            Slot::RightFront => "RFV",
            Slot::RightRear => "RRV",
        }
    }

    pub fn index(self) -> usize {
        Slot::ALL.iter().position(|s| *s == self).unwrap()
    }
}

impl fmt::Display for Slot {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Ego state plus surrounding vehicles; `None` marks an absent slot.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemState {
    pub ego: VehicleState,
    pub surr: Vec<Option<VehicleState>>,
}

impl SystemState {
    pub fn new(ego: VehicleState, surr: Vec<Option<VehicleState>>) -> Self {
        Self { ego, surr }
    }

    pub fn n_surr(&self) -> usize {
        self.surr.len()
    }

    pub fn n_vehicles(&self) -> usize {
        self.surr.len() + 1
    }

    pub fn dim(&self) -> usize {
        STATE_DIM * self.n_vehicles()
    }

    /// Vehicle `i` in stacked order (0 is the ego).
    pub fn vehicle(&self, i: usize) -> Option<VehicleState> {
        if i == 0 {
            Some(self.ego)
        } else {
            self.surr[i - 1]
        }
    }

    /// Presence per stacked vehicle, ego first.
    pub fn mask(&self) -> Vec<bool> {
        std::iter::once(true)
            .chain(self.surr.iter().map(Option::is_some))
            .collect()
    }

    /// Stacked `4(n+1)` vector. Absent slots are written as zeros; pair with [`mask`](Self::mask).
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.dim());
        out.extend_from_slice(&self.ego.to_array());
        for v in &self.surr {
            match v {
                Some(v) => out.extend_from_slice(&v.to_array()),
                None => out.extend_from_slice(&[0.0; STATE_DIM]),
            }
        }
        out
    }

    pub fn from_flat(flat: &[f64], mask: &[bool]) -> Self {
        assert_eq!(flat.len(), STATE_DIM * mask.len(), "flat/mask length mismatch");
        let ego = VehicleState::from_slice(&flat[..STATE_DIM]);
        let surr = mask[1..]
            .iter()
            .enumerate()
            .map(|(i, &present)| {
                present.then(|| VehicleState::from_slice(&flat[STATE_DIM * (i + 1)..]))
            })
            .collect();
        Self { ego, surr }
    }
}

/// Stacked control vector `2(n+1)`.
///
/// Built through [`SystemControl::ego_only`] or [`SystemControl::surr_only`] so that the
/// ego-control instance never carries surrounding blocks and vice versa.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemControl {
    values: Vec<f64>,
}

impl SystemControl {
    pub fn zeros(n_surr: usize) -> Self {
        Self {
            values: vec![0.0; CONTROL_DIM * (n_surr + 1)],
        }
    }

    pub fn ego_only(u: ControlInput, n_surr: usize) -> Self {
        let mut c = Self::zeros(n_surr);
        c.values[0] = u.accel;
        c.values[1] = u.steer;
        c
    }

    /// Surrounding controls; absent slots contribute zero blocks.
    pub fn surr_only(u: &[Option<ControlInput>]) -> Self {
        let mut c = Self::zeros(u.len());
        for (i, ui) in u.iter().enumerate() {
            if let Some(ui) = ui {
                c.values[CONTROL_DIM * (i + 1)] = ui.accel;
                c.values[CONTROL_DIM * (i + 1) + 1] = ui.steer;
            }
        }
        c
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn ego(&self) -> ControlInput {
        ControlInput::new(self.values[0], self.values[1])
    }

    pub fn is_ego_only(&self) -> bool {
        self.values[CONTROL_DIM..].iter().all(|&x| x == 0.0)
    }

    pub fn is_surr_only(&self) -> bool {
        self.values[..CONTROL_DIM].iter().all(|&x| x == 0.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flatten_round_trip_preserves_mask() {
        let x = SystemState::new(
            VehicleState::new(1.0, 2.0, 3.0, 0.1),
            vec![Some(VehicleState::new(5.0, 6.0, 7.0, -0.1)), None],
        );
        let flat = x.flatten();
        assert_eq!(flat.len(), 12);
        assert_eq!(&flat[8..], &[0.0; 4]);
        assert_eq!(SystemState::from_flat(&flat, &x.mask()), x);
    }

    #[test]
    fn control_blocks_are_disjoint() {
        let e = SystemControl::ego_only(ControlInput::new(1.0, 0.1), 2);
        assert!(e.is_ego_only());
        let s = SystemControl::surr_only(&[Some(ControlInput::new(0.5, 0.0)), None]);
        assert!(s.is_surr_only());
        assert_eq!(s.as_slice(), &[0.0, 0.0, 0.5, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn state_invariants() {
        assert!(VehicleState::new(0.0, -1.0, 0.0, 0.0).validate().is_err());
        assert!(VehicleState::new(0.0, 1.0, 0.0, 2.0).validate().is_err());
        assert!(VehicleState::new(0.0, 1.0, 0.0, 0.2).validate().is_ok());
        assert!(VehicleParams { l_f: 0.0, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn slot_order_is_canonical() {
        let names: Vec<_> = Slot::ALL.iter().map(|s| s.as_str()).collect();
        assert_eq!(names, ["ego", "FV", "RV", "LFV", "LRV", "RFV", "RRV"]);
        assert_eq!(Slot::RightRear.index(), 6);
    }
}
