//! Socially-aware motion planning with physics-informed, data-driven interaction dynamics.
//!
//! The crate couples a linearized kinematic bicycle model for every vehicle with learned
//! cross-vehicle interaction blocks, predicts those blocks with a small transformer
//! encoder-decoder, and plans the ego vehicle with a quadratic-program MPC inside a
//! deterministic closed-loop traffic simulator.

pub mod config;
pub mod dynamics;
pub mod error;
pub mod frame;
pub mod kinematics;
pub mod metrics;
pub mod model;
pub mod planner;
pub mod qp;
pub mod seed;
pub mod sim;
pub mod tensor;
pub mod training;
pub mod types;

pub use config::{validate_config, Config};
pub use error::{Error, Result};
pub use frame::{load_frames, write_frames, Frame, FrameDims, LaneMap, VehicleTrack};
pub use types::{ControlInput, Slot, SystemControl, SystemState, VehicleParams, VehicleState};
