//! Deterministic four-way-intersection world: geometry, vehicle kinematics,
//! IDM control, sensor-noise injection, and robustness evaluation.

pub mod geometry;
pub mod idm;
pub mod noise;
pub mod outcome;
pub mod runner;
pub mod vehicle;

pub use geometry::{Branch, Crossing, Route, SimError, WorldGeometry, BRANCHES};
pub use idm::{idm_accel_against, idm_acceleration, resolve_obstacles, IdmParams, ObservedVehicle};
pub use noise::{NoiseSequence, FLAT_DIM, HORIZON, NOISE_DIM};
pub use outcome::{
    read_outcomes, robustness_of, write_outcomes, write_outcomes_csv, OutcomeWriter, SimOutcome,
    Snapshot,
};
pub use runner::{
    observe, run_simulation, step_along_route, step_planar, tangential_speed, EgoContext,
    EgoPolicy, IdmEgo, SimParams,
};
pub use vehicle::{
    approach_progress, draw_initial_state, InitialState, Scenario, SpawnRanges, VehicleState,
};
