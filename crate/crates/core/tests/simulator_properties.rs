use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use stringpose::encoder::EncoderSpec;
use stringpose::geometry::{PlatformGeometry, Pose};
use stringpose::kinematics::{forward_kinematics, inverse_jacobian, LegLengths, SolverConfig};
use stringpose::simulator::{actual_pose, simulate_measurement, DeviationModel};

fn workspace_pose() -> impl Strategy<Value = Pose> {
    (
        -10.0..10.0f64,
        -10.0..10.0f64,
        -10.0..10.0f64,
        -10.0..10.0f64,
        -10.0..10.0f64,
        -10.0..10.0f64,
    )
        .prop_map(|(x, y, z, r, p, w)| Pose::new(x, y, z, r, p, w))
}

proptest! {
    #[test]
    fn matching_offset_recovers_commanded_pose(pose in workspace_pose(), shortening in 0.0..6.0f64, seed in any::<u64>()) {
        let g = PlatformGeometry::default();
        prop_assume!(inverse_jacobian(&g, &pose).unwrap().determinant() > 0.5);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = simulate_measurement(&g, &pose, &DeviationModel::ideal(shortening), &EncoderSpec::default(), &mut rng).unwrap();
        let corrected = LegLengths::new(m.lengths.as_array().map(|l| l + shortening)).unwrap();
        let r = forward_kinematics(&g, &corrected, &Pose::IDENTITY, &SolverConfig::default()).unwrap();
        prop_assert!((r.pose.translation() - pose.translation()).norm() <= 0.1);
    }

    #[test]
    fn tcp_error_preserves_orientation_and_moves_by_chord(pose in workspace_pose(), c in -5.0..5.0f64) {
        let model = DeviationModel { tcp_z_error_mm: c, ..DeviationModel::ideal(0.0) };
        let a = actual_pose(&pose, &model);
        prop_assert!((a.roll - pose.roll).abs() < 1e-9);
        prop_assert!((a.pitch - pose.pitch).abs() < 1e-9);
        prop_assert!((a.yaw - pose.yaw).abs() < 1e-9);
        let shift = (a.translation() - pose.translation()).norm();
        prop_assert!(shift <= c.abs() * 2.0 + 1e-9);
    }

    #[test]
    fn same_seed_same_measurement(pose in workspace_pose(), seed in any::<u64>()) {
        let g = PlatformGeometry::default();
        let model = DeviationModel { count_noise_std: 2.0, ..DeviationModel::ideal(3.0) };
        let spec = EncoderSpec::default();
        let a = simulate_measurement(&g, &pose, &model, &spec, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let b = simulate_measurement(&g, &pose, &model, &spec, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        prop_assert_eq!(a.counts, b.counts);
    }
}
