use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use stringpose::geometry::{PlatformGeometry, Pose};
use stringpose::kinematics::inverse_kinematics;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_stringpose"))
}

fn scenario(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("data/scenarios").join(name)
}

fn run(cmd: &mut Command) -> Output {
    cmd.output().expect("spawn stringpose")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn solve_recovers_pose_from_lengths() {
    let pose = Pose::new(2.0, -3.0, 1.5, 4.0, -2.0, 6.0);
    let l = inverse_kinematics(&PlatformGeometry::default(), &pose).unwrap();
    let csv: Vec<String> = l.as_array().iter().map(|v| format!("{v:.9}")).collect();
    let out = run(bin().args(["solve", "--lengths", &csv.join(",")]));
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = stdout(&out);
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "index,x,y,z,roll,pitch,yaw,iterations,residual_mm,status"
    );
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    let got: Vec<f64> = row[1..7].iter().map(|v| v.parse().unwrap()).collect();
    for (g, e) in got.iter().zip(pose.to_array()) {
        assert!((g - e).abs() < 1e-3, "{got:?}");
    }
    assert_eq!(row[9], "ok");
}

#[test]
fn solve_reports_no_convergence_with_exit_1() {
    let out = run(bin().args(["solve", "--lengths", "1,1,1,300,300,300", "--max-iterations", "3"]));
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("residual"));
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(run(bin().args(["solve"])).status.code(), Some(2));
    assert_eq!(run(bin().args(["frobnicate"])).status.code(), Some(2));
    let out = run(bin().args(["calibrate", "--samples", "x.csv", "--grid", "6:-2:0.5"]));
    assert_eq!(out.status.code(), Some(2));
    let out = run(bin().args(["evaluate", "--output-dir", "o", "--scenario", "/nonexistent/scenario.json"]));
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn simulate_then_calibrate_finds_shortening() {
    let dir = tempfile::tempdir().unwrap();
    let samples = dir.path().join("samples.csv");
    let sweep = dir.path().join("sweep.csv");
    let out = run(bin()
        .args(["simulate", "--scenario"])
        .arg(scenario("calibration.json"))
        .arg("--output")
        .arg(&samples));
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("samples.csv.manifest.json").exists());

    let out = run(bin().arg("calibrate").arg("--samples").arg(&samples).arg("--output").arg(&sweep));
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout(&out).contains("best_offset_mm"));
    let text = std::fs::read_to_string(&sweep).unwrap();
    assert!(text.starts_with("offset_mm,rms_mm,max_mm"));
    let best = text
        .lines()
        .find_map(|l| l.strip_prefix("# best_offset_mm="))
        .unwrap()
        .parse::<f64>()
        .unwrap();
    assert!((best - 3.0).abs() <= 0.5);

    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("sweep.csv.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["subcommand"], "calibrate");
}

#[test]
fn evaluate_writes_artifacts_deterministically() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        let out = run(bin()
            .args(["evaluate", "--scenario"])
            .arg(scenario("tcp_error.json"))
            .arg("--output-dir")
            .arg(d.path()));
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    }
    for f in ["accuracy_table.csv", "accuracy_points.csv", "accuracy_errors.svg"] {
        let x = std::fs::read(a.path().join(f)).unwrap();
        let y = std::fs::read(b.path().join(f)).unwrap();
        assert!(!x.is_empty());
        assert_eq!(x, y, "{f}");
    }
    let table = std::fs::read_to_string(a.path().join("accuracy_table.csv")).unwrap();
    assert!(table.starts_with("displacement,X,Y,Z,Roll,Pitch,Yaw"));
    assert!(a.path().join("manifest.json").exists());
}

#[test]
fn home_reports_every_channel() {
    let out = run(bin().args(["home", "--scenario"]).arg(scenario("ideal.json")));
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = stdout(&out);
    let rows: Vec<&str> = text.lines().skip(1).collect();
    assert_eq!(rows.len(), 6);
    for r in rows {
        let err: f64 = r.rsplit(',').next().unwrap().parse().unwrap();
        assert!(err.abs() <= 1.0 / 60.0, "{r}");
    }
}
