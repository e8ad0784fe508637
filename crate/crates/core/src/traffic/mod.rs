//! Microscopic car-following simulation with emulated induction loops.

pub mod benchmark;
mod detector;
mod idm;
mod network;
mod sim;

pub use detector::{read_detector, DetectorStats};
pub use idm::{idm_acceleration, DrivingConfig, DrivingPreset, Leader, EMERGENCY_DECEL, VEHICLE_LENGTH};
pub use network::{Detector, Edge, EdgeId, RoadNetwork};
pub use sim::{
    ballistic, time_to_cover, Demand, Fleet, Flow, Simulation, Snapshot, Trajectory, VehicleSample, VehicleState,
    DEFAULT_DT,
};
