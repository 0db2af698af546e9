//! Pose estimation for a six string-encoder Stewart-platform head tracker.
//!
//! Six draw-wire encoders connect a helmet to an imaging ring. This crate
//! turns their string lengths into the helmet's 6-DOF pose and ships a
//! simulator plus the homing, offset-calibration, registration and
//! accuracy-evaluation workflows built on it.

pub mod calibration;
pub mod cli;
pub mod config;
pub mod encoder;
pub mod geometry;
pub mod kinematics;
pub mod registration;
pub mod scenario;
pub mod simulator;
pub mod telemetry;

pub use geometry::{matrix_to_pose, pose_to_matrix, transform_point, PlatformGeometry, Pose, RigidTransform};
pub use kinematics::{forward_kinematics, inverse_jacobian, inverse_kinematics, LegLengths, SolveResult, SolverConfig};
