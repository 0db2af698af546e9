//! Platform geometry, the Euler-angle pose type and rigid-transform algebra.
//!
//! Angles are exposed in degrees. The rotation convention is intrinsic Z-Y-X
//! with the helmet-tracker naming: `roll` rotates about z, `pitch` about y and
//! `yaw` about x, so `R = Rz(roll) * Ry(pitch) * Rx(yaw)`.

use nalgebra::{Matrix3, Matrix4, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Number of legs (strings) of the platform.
pub const LEG_COUNT: usize = 6;

/// A point or vector in millimetres.
pub type Point3 = Vector3<f64>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    /// Pitch is at +/-90 deg. The carried pose uses the yaw = 0 convention.
    #[error("gimbal lock: pitch {pitch_deg:.9} deg is at the Euler singularity", pitch_deg = pose.pitch)]
    GimbalLock { pose: Pose },
    #[error("rotation matrix is not orthonormal (deviation {0:e})")]
    NotOrthonormal(f64),
    #[error("expected {expected} {what}, found {found}")]
    WrongPointCount {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("invalid workspace limits: {0}")]
    InvalidWorkspace(String),
}

/// Symmetric per-axis workspace limits around the nominal pose.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Workspace {
    pub translation_mm: f64,
    pub rotation_deg: f64,
}

impl Default for Workspace {
    fn default() -> Self {
        Self {
            translation_mm: 10.0,
            rotation_deg: 10.0,
        }
    }
}

impl Workspace {
    pub fn contains(&self, pose: &Pose) -> bool {
        let t = self.translation_mm + 1e-9;
        let r = self.rotation_deg + 1e-9;
        pose.x.abs() <= t
            && pose.y.abs() <= t
            && pose.z.abs() <= t
            && pose.roll.abs() <= r
            && pose.pitch.abs() <= r
            && pose.yaw.abs() <= r
    }
}

/// Attachment points of the six strings. Leg `i` joins `base_points[i]`
/// (imaging-ring frame) to `helmet_points[i]` (helmet frame).
#[derive(Debug, Clone, PartialEq)]
pub struct PlatformGeometry {
    pub base_points: [Point3; LEG_COUNT],
    pub helmet_points: [Point3; LEG_COUNT],
    pub workspace: Workspace,
}

/// Base attachment points of the reference build, mm.
pub const DEFAULT_BASE_POINTS: [[f64; 3]; LEG_COUNT] = [
    [121.39, 48.35, 73.67],
    [-18.82, 129.30, 73.67],
    [-102.56, 80.95, 73.67],
    [-102.56, -80.95, 73.67],
    [-18.82, -129.30, 73.67],
    [121.39, -48.35, 73.67],
];

/// Helmet attachment points of the reference build, mm.
pub const DEFAULT_HELMET_POINTS: [[f64; 3]; LEG_COUNT] = [
    [96.99, 66.70, 42.06],
    [9.27, 117.35, 42.06],
    [-106.26, 50.64, 42.06],
    [-106.26, -50.64, 42.06],
    [9.27, -117.35, 42.06],
    [96.99, -66.70, 42.06],
];

impl Default for PlatformGeometry {
    fn default() -> Self {
        Self::from_arrays(DEFAULT_BASE_POINTS, DEFAULT_HELMET_POINTS, Workspace::default())
    }
}

impl PlatformGeometry {
    pub fn from_arrays(
        base: [[f64; 3]; LEG_COUNT],
        helmet: [[f64; 3]; LEG_COUNT],
        workspace: Workspace,
    ) -> Self {
        Self {
            base_points: base.map(Point3::from),
            helmet_points: helmet.map(Point3::from),
            workspace,
        }
    }

    pub fn from_slices(
        base: &[[f64; 3]],
        helmet: &[[f64; 3]],
        workspace: Workspace,
    ) -> Result<Self, GeometryError> {
        let base: [[f64; 3]; LEG_COUNT] =
            base.try_into()
                .map_err(|_| GeometryError::WrongPointCount {
                    what: "base points",
                    expected: LEG_COUNT,
                    found: base.len(),
                })?;
        let helmet: [[f64; 3]; LEG_COUNT] =
            helmet
                .try_into()
                .map_err(|_| GeometryError::WrongPointCount {
                    what: "helmet points",
                    expected: LEG_COUNT,
                    found: helmet.len(),
                })?;
        let ok = |v: f64| v.is_finite() && v > 0.0;
        if !ok(workspace.translation_mm) || !ok(workspace.rotation_deg) {
            return Err(GeometryError::InvalidWorkspace(format!("{workspace:?}")));
        }
        Ok(Self::from_arrays(base, helmet, workspace))
    }
}

/// 6-DOF pose: translation in mm, angles in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    /// Rotation about z.
    pub roll: f64,
    /// Rotation about y.
    pub pitch: f64,
    /// Rotation about x.
    pub yaw: f64,
}

impl Pose {
    pub const IDENTITY: Pose = Pose {
        x: 0.0,
        y: 0.0,
        z: 0.0,
        roll: 0.0,
        pitch: 0.0,
        yaw: 0.0,
    };

    pub fn new(x: f64, y: f64, z: f64, roll: f64, pitch: f64, yaw: f64) -> Self {
        Self {
            x,
            y,
            z,
            roll,
            pitch,
            yaw,
        }
    }

    /// Parameter vector in the order (x, y, z, roll, pitch, yaw).
    pub fn to_array(&self) -> [f64; 6] {
        [self.x, self.y, self.z, self.roll, self.pitch, self.yaw]
    }

    pub fn from_array(a: [f64; 6]) -> Self {
        Self::new(a[0], a[1], a[2], a[3], a[4], a[5])
    }

    pub fn translation(&self) -> Point3 {
        Point3::new(self.x, self.y, self.z)
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }

    pub fn to_matrix(&self) -> RigidTransform {
        pose_to_matrix(self)
    }

    /// Pose whose matrix is `matrix(self) * matrix(other)`.
    pub fn compose(&self, other: &Pose) -> Result<Pose, GeometryError> {
        matrix_to_pose(&self.to_matrix().compose(&other.to_matrix()))
    }
}

pub fn rot_x(deg: f64) -> Matrix3<f64> {
    let (s, c) = deg.to_radians().sin_cos();
    Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
}

pub fn rot_y(deg: f64) -> Matrix3<f64> {
    let (s, c) = deg.to_radians().sin_cos();
    Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

pub fn rot_z(deg: f64) -> Matrix3<f64> {
    let (s, c) = deg.to_radians().sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

/// Rotation matrix for (roll, pitch, yaw) in degrees.
pub fn euler_to_rotation(roll: f64, pitch: f64, yaw: f64) -> Matrix3<f64> {
    rot_z(roll) * rot_y(pitch) * rot_x(yaw)
}

/// Rigid transform `p -> rotation * p + translation`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Point3,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::IDENTITY
    }
}

impl RigidTransform {
    pub const IDENTITY: RigidTransform = RigidTransform {
        rotation: Matrix3::new(1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0),
        translation: Vector3::new(0.0, 0.0, 0.0),
    };

    pub fn new(rotation: Matrix3<f64>, translation: Point3) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn from_translation(t: Point3) -> Self {
        Self::new(Matrix3::identity(), t)
    }

    pub fn from_rotation(r: Matrix3<f64>) -> Self {
        Self::new(r, Point3::zeros())
    }

    /// `self * other`: apply `other` first.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        let rt = self.rotation.transpose();
        RigidTransform {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    pub fn transform_point(&self, p: &Point3) -> Point3 {
        self.rotation * p + self.translation
    }

    /// Largest entry of `R^T R - I`, plus the determinant's distance from 1.
    pub fn orthonormality_error(&self) -> f64 {
        let d = self.rotation.transpose() * self.rotation - Matrix3::identity();
        d.amax().max((self.rotation.determinant() - 1.0).abs())
    }

    pub fn to_homogeneous(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    /// Row-major 4x4 matrix.
    pub fn to_row_major(&self) -> [[f64; 4]; 4] {
        let m = self.to_homogeneous();
        std::array::from_fn(|r| std::array::from_fn(|c| m[(r, c)]))
    }

    /// Builds from a row-major 4x4 matrix. The bottom row must be (0,0,0,1)
    /// and the rotation block orthonormal within 1e-6.
    pub fn from_row_major(m: &[[f64; 4]; 4]) -> Result<Self, GeometryError> {
        let bottom = (m[3][0].abs() + m[3][1].abs() + m[3][2].abs() + (m[3][3] - 1.0).abs()) as f64;
        let t = RigidTransform {
            rotation: Matrix3::from_fn(|r, c| m[r][c]),
            translation: Point3::new(m[0][3], m[1][3], m[2][3]),
        };
        let err = t.orthonormality_error().max(bottom);
        if !(err <= 1e-6) {
            return Err(GeometryError::NotOrthonormal(err));
        }
        Ok(t)
    }
}

impl std::ops::Mul for RigidTransform {
    type Output = RigidTransform;
    fn mul(self, rhs: RigidTransform) -> RigidTransform {
        self.compose(&rhs)
    }
}

pub fn pose_to_matrix(pose: &Pose) -> RigidTransform {
    RigidTransform {
        rotation: euler_to_rotation(pose.roll, pose.pitch, pose.yaw),
        translation: pose.translation(),
    }
}

/// Pitch within this many degrees of +/-90 counts as gimbal lock.
pub const GIMBAL_LOCK_TOLERANCE_DEG: f64 = 1e-7;

/// Extracts the pose from a rigid transform; pitch is returned in [-90, 90].
///
/// At gimbal lock only `roll - yaw` (pitch = +90) or `roll + yaw`
/// (pitch = -90) is observable; the returned error carries the pose with
/// `yaw = 0`.
pub fn matrix_to_pose(t: &RigidTransform) -> Result<Pose, GeometryError> {
    let err = t.orthonormality_error();
    if !(err <= 1e-6) {
        return Err(GeometryError::NotOrthonormal(err));
    }
    let r = &t.rotation;
    let sp = (-r[(2, 0)]).clamp(-1.0, 1.0);
    let pitch = sp.asin().to_degrees();
    let (x, y, z) = (t.translation.x, t.translation.y, t.translation.z);
    if 90.0 - pitch.abs() <= GIMBAL_LOCK_TOLERANCE_DEG {
        // yaw = 0: R = Rz(roll) Ry(+-90), so the first row's y entry is -sin(roll).
        let roll = (-r[(0, 1)]).atan2(r[(1, 1)]).to_degrees();
        let pitch = 90.0f64.copysign(pitch);
        return Err(GeometryError::GimbalLock {
            pose: Pose::new(x, y, z, roll, pitch, 0.0),
        });
    }
    let roll = r[(1, 0)].atan2(r[(0, 0)]).to_degrees();
    let yaw = r[(2, 1)].atan2(r[(2, 2)]).to_degrees();
    Ok(Pose::new(x, y, z, roll, pitch, yaw))
}

pub fn transform_point(t: &RigidTransform, p: &Point3) -> Point3 {
    t.transform_point(p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    // Independent oracle: explicit element formulas for each axis rotation.
    fn oracle_rz(a: f64) -> [[f64; 3]; 3] {
        let (s, c) = a.to_radians().sin_cos();
        [[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]]
    }
    fn oracle_ry(a: f64) -> [[f64; 3]; 3] {
        let (s, c) = a.to_radians().sin_cos();
        [[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]]
    }
    fn oracle_rx(a: f64) -> [[f64; 3]; 3] {
        let (s, c) = a.to_radians().sin_cos();
        [[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]]
    }
    fn oracle_mul(a: [[f64; 3]; 3], b: [[f64; 3]; 3]) -> [[f64; 3]; 3] {
        let mut out = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                for k in 0..3 {
                    out[i][j] += a[i][k] * b[k][j];
                }
            }
        }
        out
    }

    #[test]
    fn identity_pose_is_identity_transform() {
        let t = pose_to_matrix(&Pose::IDENTITY);
        assert_eq!(t, RigidTransform::IDENTITY);
    }

    #[test]
    fn quarter_turn_roll_maps_x_to_y() {
        let t = pose_to_matrix(&Pose::new(0.0, 0.0, 0.0, 90.0, 0.0, 0.0));
        let p = t.transform_point(&Point3::x());
        assert_abs_diff_eq!(p, Point3::y(), epsilon = 1e-12);
        assert_eq!(t.translation, Point3::zeros());
    }

    #[test]
    fn matrix_matches_axis_product_oracle() {
        let t = pose_to_matrix(&Pose::new(1.0, 2.0, 3.0, 10.0, 20.0, 30.0));
        let expected = oracle_mul(oracle_mul(oracle_rz(10.0), oracle_ry(20.0)), oracle_rx(30.0));
        for i in 0..3 {
            for j in 0..3 {
                assert_abs_diff_eq!(t.rotation[(i, j)], expected[i][j], epsilon = 1e-14);
            }
        }
        assert_eq!(t.translation, Point3::new(1.0, 2.0, 3.0));
    }

    #[test]
    fn identity_matrix_to_zero_pose() {
        assert_eq!(matrix_to_pose(&RigidTransform::IDENTITY).unwrap(), Pose::IDENTITY);
    }

    #[test]
    fn pitch_ninety_is_gimbal_lock() {
        let t = pose_to_matrix(&Pose::new(1.0, 0.0, 0.0, 25.0, 90.0, 0.0));
        match matrix_to_pose(&t) {
            Err(GeometryError::GimbalLock { pose }) => {
                assert_eq!(pose.yaw, 0.0);
                assert_eq!(pose.pitch, 90.0);
                assert_abs_diff_eq!(pose.roll, 25.0, epsilon = 1e-9);
                assert_abs_diff_eq!(pose.to_matrix().rotation, t.rotation, epsilon = 1e-9);
            }
            other => panic!("expected gimbal lock, got {other:?}"),
        }
        let t = pose_to_matrix(&Pose::new(0.0, 0.0, 0.0, 10.0, -90.0, 15.0));
        match matrix_to_pose(&t) {
            Err(GeometryError::GimbalLock { pose }) => {
                assert_abs_diff_eq!(pose.to_matrix().rotation, t.rotation, epsilon = 1e-9);
            }
            other => panic!("expected gimbal lock, got {other:?}"),
        }
    }

    #[test]
    fn non_orthonormal_rejected() {
        let mut t = RigidTransform::IDENTITY;
        t.rotation[(0, 0)] = 1.01;
        assert!(matches!(matrix_to_pose(&t), Err(GeometryError::NotOrthonormal(_))));
    }

    #[test]
    fn transform_point_cases() {
        let p = Point3::new(1.0, 2.0, 3.0);
        assert_eq!(RigidTransform::IDENTITY.transform_point(&p), p);
        let t = RigidTransform::from_translation(Point3::new(10.0, 0.0, 0.0));
        assert_eq!(t.transform_point(&Point3::zeros()), Point3::new(10.0, 0.0, 0.0));
        let r = RigidTransform::from_rotation(rot_z(90.0));
        assert_abs_diff_eq!(r.transform_point(&Point3::x()), Point3::y(), epsilon = 1e-12);
    }

    #[test]
    fn default_geometry_matches_reference_table() {
        // Reference attachment coordinates (mm), typed out independently of the constants.
        let table = [
            ((121.39, 48.35, 73.67), (96.99, 66.70, 42.06)),
            ((-18.82, 129.30, 73.67), (9.27, 117.35, 42.06)),
            ((-102.56, 80.95, 73.67), (-106.26, 50.64, 42.06)),
            ((-102.56, -80.95, 73.67), (-106.26, -50.64, 42.06)),
            ((-18.82, -129.30, 73.67), (9.27, -117.35, 42.06)),
            ((121.39, -48.35, 73.67), (96.99, -66.70, 42.06)),
        ];
        let g = PlatformGeometry::default();
        for (i, (b, h)) in table.iter().enumerate() {
            assert_eq!(g.base_points[i], Point3::new(b.0, b.1, b.2), "B{}", i + 1);
            assert_eq!(g.helmet_points[i], Point3::new(h.0, h.1, h.2), "H{}", i + 1);
        }
    }

    #[test]
    fn default_geometry_is_mirror_symmetric_about_xz() {
        let g = PlatformGeometry::default();
        for (a, b) in [(0, 5), (1, 4), (2, 3)] {
            for pts in [&g.base_points, &g.helmet_points] {
                assert_abs_diff_eq!(pts[a].x, pts[b].x, epsilon = 1e-9);
                assert_abs_diff_eq!(pts[a].y, -pts[b].y, epsilon = 1e-9);
                assert_abs_diff_eq!(pts[a].z, pts[b].z, epsilon = 1e-9);
            }
        }
        assert!(g.base_points.iter().all(|p| p.z == 73.67));
        assert!(g.helmet_points.iter().all(|p| p.z == 42.06));
    }

    #[test]
    fn wrong_point_count_rejected() {
        let err = PlatformGeometry::from_slices(
            &DEFAULT_BASE_POINTS[..5],
            &DEFAULT_HELMET_POINTS,
            Workspace::default(),
        )
        .unwrap_err();
        assert!(matches!(err, GeometryError::WrongPointCount { found: 5, .. }));
    }

    #[test]
    fn row_major_round_trip() {
        let t = pose_to_matrix(&Pose::new(4.0, -2.0, 7.5, 12.0, -33.0, 71.0));
        let back = RigidTransform::from_row_major(&t.to_row_major()).unwrap();
        assert_eq!(back, t);
        let mut bad = t.to_row_major();
        bad[3][0] = 0.5;
        assert!(RigidTransform::from_row_major(&bad).is_err());
    }

    fn pose_strategy(max_pitch: f64) -> impl Strategy<Value = Pose> {
        (
            -100.0..100.0f64,
            -100.0..100.0f64,
            -100.0..100.0f64,
            -180.0..180.0f64,
            -max_pitch..max_pitch,
            -180.0..180.0f64,
        )
            .prop_map(|(x, y, z, r, p, w)| Pose::new(x, y, z, r, p, w))
    }

    fn angle_diff(a: f64, b: f64) -> f64 {
        let d = (a - b).rem_euclid(360.0);
        d.min(360.0 - d)
    }

    proptest! {
        #[test]
        fn pose_matrix_round_trip(p in pose_strategy(80.0)) {
            let back = matrix_to_pose(&pose_to_matrix(&p)).unwrap();
            prop_assert!((back.x - p.x).abs() < 1e-9);
            prop_assert!((back.y - p.y).abs() < 1e-9);
            prop_assert!((back.z - p.z).abs() < 1e-9);
            prop_assert!(angle_diff(back.roll, p.roll) < 1e-9);
            prop_assert!((back.pitch - p.pitch).abs() < 1e-9);
            prop_assert!(angle_diff(back.yaw, p.yaw) < 1e-9);
        }

        #[test]
        fn rotation_is_orthonormal(p in pose_strategy(90.0)) {
            let t = pose_to_matrix(&p);
            prop_assert!(t.orthonormality_error() < 1e-12);
        }

        #[test]
        fn composition_is_consistent(p in pose_strategy(60.0), q in pose_strategy(60.0)) {
            let pq = p.to_matrix().compose(&q.to_matrix());
            if let Ok(c) = p.compose(&q) {
                let m = c.to_matrix();
                prop_assert!((m.rotation - pq.rotation).amax() < 1e-9);
                prop_assert!((m.translation - pq.translation).amax() < 1e-9);
            }
        }

        #[test]
        fn composition_is_associative(a in pose_strategy(89.0), b in pose_strategy(89.0), c in pose_strategy(89.0)) {
            let (a, b, c) = (a.to_matrix(), b.to_matrix(), c.to_matrix());
            let l = (a * b) * c;
            let r = a * (b * c);
            prop_assert!((l.rotation - r.rotation).amax() < 1e-12);
            prop_assert!((l.translation - r.translation).amax() < 1e-9);
        }

        #[test]
        fn inverse_cancels(a in pose_strategy(89.0)) {
            let t = a.to_matrix();
            let id = t.inverse() * t;
            prop_assert!((id.rotation - Matrix3::identity()).amax() < 1e-12);
            prop_assert!(id.translation.amax() < 1e-12);
        }

        #[test]
        fn transform_preserves_distances(a in pose_strategy(89.0),
                                         p in prop::array::uniform3(-200.0..200.0f64),
                                         q in prop::array::uniform3(-200.0..200.0f64)) {
            let t = a.to_matrix();
            let (p, q) = (Point3::from(p), Point3::from(q));
            let d0 = (p - q).norm();
            let d1 = (t.transform_point(&p) - t.transform_point(&q)).norm();
            prop_assert!((d0 - d1).abs() < 1e-9);
        }
    }
}
