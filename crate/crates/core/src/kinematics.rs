//! Inverse kinematics, the inverse Jacobian and the iterative forward
//! kinematics solver.
//!
//! The solver iterates `X_{k+1} = X_k + J(L_k) (L_m - L_k)` where `J` is the
//! pseudo-inverse of the inverse Jacobian evaluated at `X_k`. Poses are
//! updated directly in (mm, mm, mm, deg, deg, deg) coordinates.

use nalgebra::{Matrix6, Vector6};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{euler_to_rotation, rot_x, rot_y, rot_z, PlatformGeometry, Pose, LEG_COUNT};

/// Legs shorter than this (mm) are treated as coincident attachment points.
pub const DEGENERATE_LENGTH_MM: f64 = 1e-9;
/// Inverse Jacobians with a larger 2-norm condition number are rejected.
pub const MAX_CONDITION_NUMBER: f64 = 1e12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum KinematicsError {
    #[error("leg {leg} has degenerate length {length_mm:e} mm")]
    DegenerateLeg { leg: usize, length_mm: f64 },
    #[error("singular configuration (condition number {condition:e})")]
    SingularConfiguration { condition: f64 },
    #[error(
        "forward kinematics did not converge after {} iterations (residual {:.6} mm)",
        .0.iterations, .0.residual
    )]
    NoConvergence(SolveResult),
    #[error("leg length {index} is not strictly positive: {value}")]
    NonPositiveLength { index: usize, value: f64 },
    #[error("invalid solver configuration: {0}")]
    InvalidConfig(String),
}

/// Six string lengths in mm, all strictly positive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 6]", into = "[f64; 6]")]
pub struct LegLengths([f64; LEG_COUNT]);

impl LegLengths {
    pub fn new(lengths: [f64; LEG_COUNT]) -> Result<Self, KinematicsError> {
        for (index, &value) in lengths.iter().enumerate() {
            if !(value > 0.0) || !value.is_finite() {
                return Err(KinematicsError::NonPositiveLength { index, value });
            }
        }
        Ok(Self(lengths))
    }

    pub fn as_array(&self) -> &[f64; LEG_COUNT] {
        &self.0
    }

    pub fn to_vector(&self) -> Vector6<f64> {
        Vector6::from_column_slice(&self.0)
    }

    pub fn get(&self, leg: usize) -> f64 {
        self.0[leg]
    }
}

impl TryFrom<[f64; 6]> for LegLengths {
    type Error = KinematicsError;
    fn try_from(v: [f64; 6]) -> Result<Self, Self::Error> {
        Self::new(v)
    }
}

impl From<LegLengths> for [f64; 6] {
    fn from(l: LegLengths) -> Self {
        l.0
    }
}

/// How the inverse Jacobian is evaluated inside the solver.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JacobianMode {
    #[default]
    Analytic,
    FiniteDifference,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    /// Stop once `||L_m - L_k||` falls below this, mm.
    pub length_tolerance: f64,
    /// Maximum number of inverse-kinematics evaluations.
    pub max_iterations: u32,
    /// Tikhonov factor lambda; singular values are inverted as s / (s^2 + lambda^2).
    pub damping: f64,
    /// Central-difference step (mm or deg) for the numeric Jacobian.
    pub finite_difference_step: f64,
    pub jacobian: JacobianMode,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            length_tolerance: 0.01,
            max_iterations: 50,
            damping: 0.0,
            finite_difference_step: 1e-4,
            jacobian: JacobianMode::Analytic,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<(), KinematicsError> {
        if !(self.length_tolerance > 0.0) {
            return Err(KinematicsError::InvalidConfig("length_tolerance must be > 0".into()));
        }
        if self.max_iterations < 1 {
            return Err(KinematicsError::InvalidConfig("max_iterations must be >= 1".into()));
        }
        if !(self.damping >= 0.0) {
            return Err(KinematicsError::InvalidConfig("damping must be >= 0".into()));
        }
        if !(self.finite_difference_step > 0.0) {
            return Err(KinematicsError::InvalidConfig(
                "finite_difference_step must be > 0".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolveResult {
    pub pose: Pose,
    /// Number of inverse-kinematics evaluations, counting the initial guess.
    pub iterations: u32,
    /// Final `||L_m - L_k||`, mm.
    pub residual: f64,
    pub converged: bool,
}

pub fn inverse_kinematics(geom: &PlatformGeometry, pose: &Pose) -> Result<LegLengths, KinematicsError> {
    let t = pose.to_matrix();
    let mut out = [0.0; LEG_COUNT];
    for (leg, (b, h)) in geom.base_points.iter().zip(&geom.helmet_points).enumerate() {
        let length = (t.transform_point(h) - b).norm();
        if !(length >= DEGENERATE_LENGTH_MM) {
            return Err(KinematicsError::DegenerateLeg { leg, length_mm: length });
        }
        out[leg] = length;
    }
    Ok(LegLengths(out))
}

/// Partial derivatives of the six leg lengths with respect to
/// (x, y, z, roll, pitch, yaw). Units: mm/mm for the first three columns,
/// mm/deg for the angular ones.
pub fn inverse_jacobian(geom: &PlatformGeometry, pose: &Pose) -> Result<Matrix6<f64>, KinematicsError> {
    let jac = inverse_jacobian_unchecked(geom, pose)?;
    check_condition(&jac)?;
    Ok(jac)
}

fn inverse_jacobian_unchecked(geom: &PlatformGeometry, pose: &Pose) -> Result<Matrix6<f64>, KinematicsError> {
    let (rz, ry, rx) = (rot_z(pose.roll), rot_y(pose.pitch), rot_x(pose.yaw));
    let rot = rz * ry * rx;
    let k = std::f64::consts::PI / 180.0;
    // d/dtheta R(theta) = R(theta) * [axis]x for each elementary rotation.
    let skew_z = nalgebra::Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0);
    let skew_y = nalgebra::Matrix3::new(0.0, 0.0, 1.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0);
    let skew_x = nalgebra::Matrix3::new(0.0, 0.0, 0.0, 0.0, 0.0, -1.0, 0.0, 1.0, 0.0);
    let d_roll = rz * skew_z * ry * rx;
    let d_pitch = rz * ry * skew_y * rx;
    let d_yaw = rot * skew_x;

    let translation = pose.translation();
    let mut jac = Matrix6::zeros();
    for (leg, (b, h)) in geom.base_points.iter().zip(&geom.helmet_points).enumerate() {
        let v = rot * h + translation - b;
        let length = v.norm();
        if !(length >= DEGENERATE_LENGTH_MM) {
            return Err(KinematicsError::DegenerateLeg { leg, length_mm: length });
        }
        let u = v / length;
        jac[(leg, 0)] = u.x;
        jac[(leg, 1)] = u.y;
        jac[(leg, 2)] = u.z;
        jac[(leg, 3)] = u.dot(&(d_roll * h)) * k;
        jac[(leg, 4)] = u.dot(&(d_pitch * h)) * k;
        jac[(leg, 5)] = u.dot(&(d_yaw * h)) * k;
    }
    Ok(jac)
}

/// Central finite differences of [`inverse_kinematics`].
pub fn numeric_inverse_jacobian(
    geom: &PlatformGeometry,
    pose: &Pose,
    step: f64,
) -> Result<Matrix6<f64>, KinematicsError> {
    let base = pose.to_array();
    let mut jac = Matrix6::zeros();
    for col in 0..6 {
        let mut plus = base;
        let mut minus = base;
        plus[col] += step;
        minus[col] -= step;
        let lp = inverse_kinematics(geom, &Pose::from_array(plus))?;
        let lm = inverse_kinematics(geom, &Pose::from_array(minus))?;
        for row in 0..LEG_COUNT {
            jac[(row, col)] = (lp.0[row] - lm.0[row]) / (2.0 * step);
        }
    }
    Ok(jac)
}

pub fn condition_number(m: &Matrix6<f64>) -> f64 {
    let sv = m.singular_values();
    let max = sv.max();
    let min = sv.min();
    if min <= 0.0 || !min.is_finite() {
        f64::INFINITY
    } else {
        max / min
    }
}

fn check_condition(m: &Matrix6<f64>) -> Result<(), KinematicsError> {
    let condition = condition_number(m);
    if !(condition <= MAX_CONDITION_NUMBER) {
        return Err(KinematicsError::SingularConfiguration { condition });
    }
    Ok(())
}

/// SVD pseudo-inverse with optional Tikhonov damping.
pub fn pseudo_inverse(m: &Matrix6<f64>, damping: f64) -> Matrix6<f64> {
    let svd = m.svd(true, true);
    let u = svd.u.expect("u requested");
    let v_t = svd.v_t.expect("v_t requested");
    let max = svd.singular_values.max();
    let cutoff = max * f64::EPSILON * 6.0;
    let lambda2 = damping * damping;
    let inv = svd.singular_values.map(|s| {
        if lambda2 > 0.0 {
            s / (s * s + lambda2)
        } else if s > cutoff {
            1.0 / s
        } else {
            0.0
        }
    });
    v_t.transpose() * Matrix6::from_diagonal(&inv) * u.transpose()
}

fn residual_norm(measured: &LegLengths, estimate: &LegLengths) -> f64 {
    (measured.to_vector() - estimate.to_vector()).norm()
}

/// Solves for the pose that produces `measured`, starting at `initial_guess`.
///
/// Returns `NoConvergence` carrying the lowest-residual pose seen when the
/// iteration limit is reached or the iterate leaves the finite domain.
pub fn forward_kinematics(
    geom: &PlatformGeometry,
    measured: &LegLengths,
    initial_guess: &Pose,
    config: &SolverConfig,
) -> Result<SolveResult, KinematicsError> {
    config.validate()?;
    let mut pose = *initial_guess;
    let mut best: Option<SolveResult> = None;
    let target = measured.to_vector();

    let mut spent = 0;
    for iteration in 1..=config.max_iterations {
        spent = iteration;
        let estimate = match inverse_kinematics(geom, &pose) {
            Ok(l) => l,
            Err(e) if iteration == 1 => return Err(e),
            Err(_) => break,
        };
        let residual = residual_norm(measured, &estimate);
        let current = SolveResult {
            pose,
            iterations: iteration,
            residual,
            converged: false,
        };
        if best.map_or(true, |b| residual < b.residual) {
            best = Some(current);
        }
        if residual < config.length_tolerance {
            return Ok(SolveResult {
                converged: true,
                ..current
            });
        }
        if iteration == config.max_iterations {
            break;
        }
        let jac = match config.jacobian {
            JacobianMode::Analytic => inverse_jacobian(geom, &pose)?,
            JacobianMode::FiniteDifference => {
                let j = numeric_inverse_jacobian(geom, &pose, config.finite_difference_step)?;
                check_condition(&j)?;
                j
            }
        };
        let step = pseudo_inverse(&jac, config.damping) * (target - estimate.to_vector());
        let next = Pose::from_array(std::array::from_fn(|i| pose.to_array()[i] + step[i]));
        if !next.is_finite() {
            break;
        }
        pose = next;
    }

    let best = best.expect("at least one iteration ran");
    Err(KinematicsError::NoConvergence(SolveResult {
        iterations: spent,
        ..best
    }))
}

/// Unit vectors along each leg, from base to helmet attachment.
pub fn leg_directions(geom: &PlatformGeometry, pose: &Pose) -> Result<[nalgebra::Vector3<f64>; 6], KinematicsError> {
    let rot = euler_to_rotation(pose.roll, pose.pitch, pose.yaw);
    let t = pose.translation();
    let mut out = [nalgebra::Vector3::zeros(); 6];
    for (leg, (b, h)) in geom.base_points.iter().zip(&geom.helmet_points).enumerate() {
        let v = rot * h + t - b;
        let n = v.norm();
        if !(n >= DEGENERATE_LENGTH_MM) {
            return Err(KinematicsError::DegenerateLeg { leg, length_mm: n });
        }
        out[leg] = v / n;
    }
    Ok(out)
}
