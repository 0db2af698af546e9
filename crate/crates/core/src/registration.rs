//! Base/robot frame registration from one simultaneous pose pair.
//!
//! Notation: `base_to_helmet` is the helmet pose measured by the encoders in
//! the imaging-ring (base) frame, `helmet_to_robot` is the robot frame
//! expressed in the helmet frame (the inverse of the tool pose the robot
//! reports). Their product `base_to_robot` stays constant while the base
//! does not move.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{matrix_to_pose, GeometryError, Point3, Pose, RigidTransform};

#[derive(Debug, Error)]
pub enum RegistrationError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("stored chain is inconsistent: |base_to_robot - base_to_helmet * helmet_to_robot| = {0:e}")]
    Inconsistent(f64),
    #[error("chain file: {0}")]
    Json(#[from] serde_json::Error),
    #[error("chain file: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameChain {
    pub base_to_robot: RigidTransform,
    pub base_to_helmet: RigidTransform,
    pub helmet_to_robot: RigidTransform,
    /// Acquisition time of the pose pair, microseconds on the caller's clock.
    pub acquired_at_us: u64,
}

pub fn register(base_to_helmet: &RigidTransform, helmet_to_robot: &RigidTransform) -> FrameChain {
    register_at(base_to_helmet, helmet_to_robot, 0)
}

pub fn register_at(
    base_to_helmet: &RigidTransform,
    helmet_to_robot: &RigidTransform,
    acquired_at_us: u64,
) -> FrameChain {
    FrameChain {
        base_to_robot: base_to_helmet.compose(helmet_to_robot),
        base_to_helmet: *base_to_helmet,
        helmet_to_robot: *helmet_to_robot,
        acquired_at_us,
    }
}

impl FrameChain {
    /// `inverse(base_to_helmet_now) * base_to_robot`.
    pub fn helmet_to_robot_now(&self, base_to_helmet_now: &RigidTransform) -> RigidTransform {
        base_to_helmet_now.inverse().compose(&self.base_to_robot)
    }

    /// Helmet origin in robot coordinates, mm.
    pub fn helmet_position_in_robot(&self, base_to_helmet_now: &RigidTransform) -> Point3 {
        self.helmet_to_robot_now(base_to_helmet_now).inverse().translation
    }

    pub fn consistency_error(&self) -> f64 {
        let c = self.base_to_helmet.compose(&self.helmet_to_robot);
        (c.rotation - self.base_to_robot.rotation)
            .amax()
            .max((c.translation - self.base_to_robot.translation).amax())
    }

    pub fn to_json(&self) -> String {
        let doc = ChainDocument {
            base_to_robot: self.base_to_robot.to_row_major(),
            acquisition: Acquisition {
                base_to_helmet: self.base_to_helmet.to_row_major(),
                helmet_to_robot: self.helmet_to_robot.to_row_major(),
                timestamp_us: self.acquired_at_us,
            },
        };
        serde_json::to_string_pretty(&doc).expect("chain serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, RegistrationError> {
        let doc: ChainDocument = serde_json::from_str(text)?;
        let chain = FrameChain {
            base_to_robot: RigidTransform::from_row_major(&doc.base_to_robot)?,
            base_to_helmet: RigidTransform::from_row_major(&doc.acquisition.base_to_helmet)?,
            helmet_to_robot: RigidTransform::from_row_major(&doc.acquisition.helmet_to_robot)?,
            acquired_at_us: doc.acquisition.timestamp_us,
        };
        let err = chain.consistency_error();
        if !(err <= 1e-9) {
            return Err(RegistrationError::Inconsistent(err));
        }
        Ok(chain)
    }

    pub fn load(path: &std::path::Path) -> Result<Self, RegistrationError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<(), RegistrationError> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }
}

pub fn encoder_pose_in_robot_frame(
    chain: &FrameChain,
    base_to_helmet_now: &RigidTransform,
) -> Result<Pose, GeometryError> {
    matrix_to_pose(&chain.helmet_to_robot_now(base_to_helmet_now))
}

#[derive(Debug, Serialize, Deserialize)]
struct ChainDocument {
    base_to_robot: [[f64; 4]; 4],
    acquisition: Acquisition,
}

#[derive(Debug, Serialize, Deserialize)]
struct Acquisition {
    base_to_helmet: [[f64; 4]; 4],
    helmet_to_robot: [[f64; 4]; 4],
    timestamp_us: u64,
}
