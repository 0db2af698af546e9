//! Software stand-in for the positioning robot and the six string encoders.
//!
//! Error mechanisms reproduced here: a constant per-string shortening (the
//! string rides on the edge of its guide channel), count quantization,
//! optional Gaussian count noise, and a tool-centre-point error along the
//! tool z axis that turns commanded x/y-axis rotations into parasitic
//! translations.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calibration::CalibrationSample;
use crate::encoder::EncoderSpec;
use crate::geometry::{
    matrix_to_pose, pose_to_matrix, GeometryError, PlatformGeometry, Point3, Pose, RigidTransform, Workspace,
    LEG_COUNT,
};
use crate::kinematics::{forward_kinematics, inverse_kinematics, KinematicsError, LegLengths, SolverConfig};
use crate::registration::{register, FrameChain};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("leg {leg} length {length_mm:.3} mm is outside the encoder range [0, {range_mm}] mm")]
    OutOfRange { leg: usize, length_mm: f64, range_mm: f64 },
    #[error("invalid motion script: {0}")]
    InvalidScript(String),
    #[error("invalid deviation model: {0}")]
    InvalidModel(String),
    #[error("registration failed: {0}")]
    Registration(String),
    #[error(transparent)]
    Kinematics(#[from] KinematicsError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeviationModel {
    /// Every reading is this much shorter than the centre-to-centre length, mm.
    pub fixed_shortening_mm: f64,
    /// Standard deviation of additive count noise, counts.
    pub count_noise_std: f64,
    /// Tool-centre-point error along the tool z axis, mm.
    pub tcp_z_error_mm: f64,
}

impl Default for DeviationModel {
    fn default() -> Self {
        Self {
            fixed_shortening_mm: 3.0,
            count_noise_std: 0.0,
            tcp_z_error_mm: 0.0,
        }
    }
}

impl DeviationModel {
    pub fn ideal(shortening_mm: f64) -> Self {
        Self {
            fixed_shortening_mm: shortening_mm,
            count_noise_std: 0.0,
            tcp_z_error_mm: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if !self.fixed_shortening_mm.is_finite() {
            return Err(SimError::InvalidModel("fixed_shortening_mm must be finite".into()));
        }
        if !(self.count_noise_std >= 0.0 && self.count_noise_std.is_finite()) {
            return Err(SimError::InvalidModel("count_noise_std must be >= 0".into()));
        }
        if !self.tcp_z_error_mm.is_finite() {
            return Err(SimError::InvalidModel("tcp_z_error_mm must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
    Z,
    Roll,
    Pitch,
    Yaw,
}

impl Axis {
    pub const ALL: [Axis; 6] = [Axis::X, Axis::Y, Axis::Z, Axis::Roll, Axis::Pitch, Axis::Yaw];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn label(self) -> &'static str {
        match self {
            Axis::X => "X",
            Axis::Y => "Y",
            Axis::Z => "Z",
            Axis::Roll => "Roll",
            Axis::Pitch => "Pitch",
            Axis::Yaw => "Yaw",
        }
    }

    pub fn is_rotation(self) -> bool {
        matches!(self, Axis::Roll | Axis::Pitch | Axis::Yaw)
    }

    /// Pose displaced by `amount` (mm or deg) along this axis only.
    pub fn displacement(self, amount: f64) -> Pose {
        let mut a = [0.0; 6];
        a[self.index()] = amount;
        Pose::from_array(a)
    }
}

/// One commanded helmet pose, relative to the nominal pose.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MotionPoint {
    Axis { axis: Axis, displacement: f64 },
    Pose { pose: Pose },
}

impl MotionPoint {
    pub fn pose(&self) -> Pose {
        match *self {
            MotionPoint::Axis { axis, displacement } => axis.displacement(displacement),
            MotionPoint::Pose { pose } => pose,
        }
    }

    pub fn axis(&self) -> Option<(Axis, f64)> {
        match *self {
            MotionPoint::Axis { axis, displacement } => Some((axis, displacement)),
            MotionPoint::Pose { .. } => None,
        }
    }
}

fn default_dwell_ms() -> u32 {
    100
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotionScript {
    pub points: Vec<MotionPoint>,
    /// Time spent at each point, ms.
    #[serde(default = "default_dwell_ms")]
    pub dwell_ms: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub version: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
}

/// The packaged 66-point calibration motion set.
pub const CALIBRATION_66_JSON: &str = include_str!("../data/calibration_66.json");

impl MotionScript {
    pub fn new(points: Vec<MotionPoint>) -> Self {
        Self {
            points,
            dwell_ms: default_dwell_ms(),
            version: None,
            description: None,
        }
    }

    /// One axis at a time from `-limit` to `+limit` in `step` increments.
    pub fn axis_sweep(limit: f64, step: f64) -> Self {
        let n = (limit / step).round() as i64;
        let points = Axis::ALL
            .iter()
            .flat_map(|&axis| {
                (-n..=n).map(move |k| MotionPoint::Axis {
                    axis,
                    displacement: k as f64 * step,
                })
            })
            .collect();
        Self::new(points)
    }

    /// +/-10 mm or deg per axis in 1 mm or deg increments (126 points).
    pub fn accuracy_protocol() -> Self {
        Self::axis_sweep(10.0, 1.0)
    }

    pub fn calibration_66() -> Self {
        serde_json::from_str(CALIBRATION_66_JSON).expect("packaged calibration script parses")
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "accuracy" => Some(Self::accuracy_protocol()),
            "calibration66" => Some(Self::calibration_66()),
            _ => None,
        }
    }

    pub fn validate(&self, workspace: &Workspace) -> Result<(), SimError> {
        if self.points.is_empty() {
            return Err(SimError::InvalidScript("script has no points".into()));
        }
        for (i, p) in self.points.iter().enumerate() {
            let pose = p.pose();
            if !pose.is_finite() || !workspace.contains(&pose) {
                return Err(SimError::InvalidScript(format!(
                    "point {i} ({pose:?}) is outside the workspace"
                )));
            }
        }
        Ok(())
    }
}

/// Helmet pose the robot actually produces for a commanded pose.
///
/// The robot rotates about its configured TCP, which sits `tcp_z_error_mm`
/// along the helmet z axis away from the helmet origin.
pub fn actual_pose(commanded: &Pose, model: &DeviationModel) -> Pose {
    if model.tcp_z_error_mm == 0.0 {
        return *commanded;
    }
    let cmd = pose_to_matrix(commanded);
    let c = Point3::new(0.0, 0.0, model.tcp_z_error_mm);
    let actual = RigidTransform::new(cmd.rotation, cmd.translation + c - cmd.rotation * c);
    matrix_to_pose(&actual).unwrap_or(*commanded)
}

/// Quantized encoder readings for one static pose.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Measurement {
    /// Absolute counts (length * counts_per_mm, rounded).
    pub counts: [i64; LEG_COUNT],
    pub lengths: LegLengths,
}

/// Readings for the physical pose `pose`: centre-to-centre length minus the
/// shortening, plus optional count noise, rounded to whole counts.
pub fn simulate_measurement<R: Rng + ?Sized>(
    geom: &PlatformGeometry,
    pose: &Pose,
    model: &DeviationModel,
    spec: &EncoderSpec,
    rng: &mut R,
) -> Result<Measurement, SimError> {
    let ideal = inverse_kinematics(geom, pose)?;
    let noise = if model.count_noise_std > 0.0 {
        Some(Normal::new(0.0, model.count_noise_std).map_err(|e| SimError::InvalidModel(e.to_string()))?)
    } else {
        None
    };
    let mut counts = [0i64; LEG_COUNT];
    let mut lengths = [0.0; LEG_COUNT];
    for leg in 0..LEG_COUNT {
        let length_mm = ideal.get(leg) - model.fixed_shortening_mm;
        check_range(leg, length_mm, spec)?;
        let n = noise.map_or(0.0, |d| d.sample(rng));
        counts[leg] = (length_mm * spec.counts_per_mm + n).round() as i64;
        lengths[leg] = counts[leg] as f64 / spec.counts_per_mm;
    }
    let lengths = LegLengths::new(lengths).map_err(|_| SimError::OutOfRange {
        leg: lengths.iter().position(|l| *l <= 0.0).unwrap_or(0),
        length_mm: 0.0,
        range_mm: spec.range_mm,
    })?;
    Ok(Measurement { counts, lengths })
}

fn check_range(leg: usize, length_mm: f64, spec: &EncoderSpec) -> Result<(), SimError> {
    if !(0.0..=spec.range_mm).contains(&length_mm) {
        return Err(SimError::OutOfRange {
            leg,
            length_mm,
            range_mm: spec.range_mm,
        });
    }
    Ok(())
}

/// Samples for the offset sweep: readings come from the robot's actual
/// pose, ground truth is the commanded pose in the base frame.
pub fn generate_calibration_samples<R: Rng + ?Sized>(
    geom: &PlatformGeometry,
    model: &DeviationModel,
    script: &MotionScript,
    spec: &EncoderSpec,
    rng: &mut R,
) -> Result<Vec<CalibrationSample>, SimError> {
    model.validate()?;
    script.validate(&geom.workspace)?;
    script
        .points
        .iter()
        .map(|p| {
            let cmd = p.pose();
            let m = simulate_measurement(geom, &actual_pose(&cmd, model), model, spec, rng)?;
            Ok(CalibrationSample {
                measured_lengths: m.lengths,
                ground_truth_pose: cmd,
            })
        })
        .collect()
}

/// Pose of the robot base in the imaging-ring frame used when a scenario
/// does not specify one.
pub const DEFAULT_ROBOT_BASE: Pose = Pose {
    x: 0.0,
    y: -320.0,
    z: -260.0,
    roll: 90.0,
    pitch: 0.0,
    yaw: 0.0,
};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProtocolOptions {
    /// Calibration offset added to every reading before FK, mm.
    pub offset_mm: f64,
    pub robot_base: Pose,
    pub encoder: EncoderSpec,
}

impl Default for ProtocolOptions {
    fn default() -> Self {
        Self {
            offset_mm: 3.0,
            robot_base: DEFAULT_ROBOT_BASE,
            encoder: EncoderSpec::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PointStatus {
    Ok,
    NoConvergence,
    Failed(String),
}

impl PointStatus {
    pub fn label(&self) -> &str {
        match self {
            PointStatus::Ok => "ok",
            PointStatus::NoConvergence => "no_convergence",
            PointStatus::Failed(_) => "failed",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointResult {
    pub index: usize,
    pub point: MotionPoint,
    /// Commanded helmet pose in the base frame (what the robot reports).
    pub commanded: Pose,
    pub measured: Option<LegLengths>,
    /// FK pose in the base frame after the offset.
    pub estimated: Option<Pose>,
    /// Helmet origin in robot coordinates, from the encoders.
    pub p_enc: Option<Point3>,
    /// Helmet origin in robot coordinates, as reported by the robot.
    pub p_rob: Point3,
    /// |p_enc - p_rob|, mm.
    pub error_mm: Option<f64>,
    pub iterations: u32,
    pub status: PointStatus,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AccuracyReport {
    pub chain: FrameChain,
    pub points: Vec<PointResult>,
}

/// Runs a motion script the way the bench experiment does: register the
/// robot and encoder frames once at the nominal pose, then at each point
/// read the strings, add the offset, solve FK from the nominal pose and
/// compare helmet positions in robot coordinates.
pub fn run_accuracy_protocol<R: Rng + ?Sized>(
    geom: &PlatformGeometry,
    model: &DeviationModel,
    script: &MotionScript,
    config: &SolverConfig,
    options: &ProtocolOptions,
    rng: &mut R,
) -> Result<AccuracyReport, SimError> {
    model.validate()?;
    script.validate(&geom.workspace)?;
    let robot_base = pose_to_matrix(&options.robot_base);
    let robot_from_base = robot_base.inverse();
    let solve = |lengths: &LegLengths| {
        let adjusted = LegLengths::new(lengths.as_array().map(|l| l + options.offset_mm))?;
        forward_kinematics(geom, &adjusted, &Pose::IDENTITY, config)
    };

    let nominal = Pose::IDENTITY;
    let m0 = simulate_measurement(geom, &actual_pose(&nominal, model), model, &options.encoder, rng)?;
    let fk0 = solve(&m0.lengths).map_err(|e| SimError::Registration(e.to_string()))?;
    let tool_pose0 = robot_from_base.compose(&pose_to_matrix(&nominal));
    let chain = register(&pose_to_matrix(&fk0.pose), &tool_pose0.inverse());

    let mut points = Vec::with_capacity(script.points.len());
    for (index, point) in script.points.iter().enumerate() {
        let commanded = point.pose();
        let p_rob = robot_from_base.compose(&pose_to_matrix(&commanded)).translation;
        let mut r = PointResult {
            index,
            point: *point,
            commanded,
            measured: None,
            estimated: None,
            p_enc: None,
            p_rob,
            error_mm: None,
            iterations: 0,
            status: PointStatus::Ok,
        };
        match simulate_measurement(geom, &actual_pose(&commanded, model), model, &options.encoder, rng) {
            Err(e) => r.status = PointStatus::Failed(e.to_string()),
            Ok(m) => {
                r.measured = Some(m.lengths);
                match solve(&m.lengths) {
                    Ok(sol) => {
                        let p_enc = chain.helmet_position_in_robot(&pose_to_matrix(&sol.pose));
                        r.estimated = Some(sol.pose);
                        r.iterations = sol.iterations;
                        r.error_mm = Some((p_enc - p_rob).norm());
                        r.p_enc = Some(p_enc);
                    }
                    Err(KinematicsError::NoConvergence(best)) => {
                        r.status = PointStatus::NoConvergence;
                        r.iterations = best.iterations;
                        r.estimated = Some(best.pose);
                    }
                    Err(e) => r.status = PointStatus::Failed(e.to_string()),
                }
            }
        }
        points.push(r);
    }
    Ok(AccuracyReport { chain, points })
}

/// Per-axis error table: one row per displacement value, one column per
/// axis, plus an RMS row.
#[derive(Debug, Clone, PartialEq)]
pub struct AccuracyTable {
    pub displacements: Vec<f64>,
    pub cells: Vec<[Option<f64>; 6]>,
    pub rms: [Option<f64>; 6],
}

impl AccuracyTable {
    pub fn column(&self, axis: Axis) -> Vec<(f64, Option<f64>)> {
        self.displacements
            .iter()
            .zip(&self.cells)
            .map(|(d, row)| (*d, row[axis.index()]))
            .collect()
    }

    pub fn to_csv_string(&self) -> String {
        let mut s = String::from("displacement,X,Y,Z,Roll,Pitch,Yaw\n");
        let cell = |v: &Option<f64>| v.map_or_else(|| "NA".to_string(), |e| format!("{e:.4}"));
        for (d, row) in self.displacements.iter().zip(&self.cells) {
            s.push_str(&format!("{d}"));
            for c in row {
                s.push(',');
                s.push_str(&cell(c));
            }
            s.push('\n');
        }
        s.push_str("RMS");
        for c in &self.rms {
            s.push(',');
            s.push_str(&cell(c));
        }
        s.push('\n');
        s
    }
}

impl AccuracyReport {
    pub fn failed_points(&self) -> usize {
        self.points.iter().filter(|p| p.status != PointStatus::Ok).count()
    }

    /// Single-axis points only; combined-axis poses stay in the per-point log.
    pub fn table(&self) -> AccuracyTable {
        let mut displacements: Vec<f64> = self
            .points
            .iter()
            .filter_map(|p| p.point.axis().map(|(_, d)| d))
            .collect();
        displacements.sort_by(f64::total_cmp);
        displacements.dedup();
        let mut cells = vec![[None; 6]; displacements.len()];
        let mut sums = [(0.0, 0usize); 6];
        for p in &self.points {
            let (Some((axis, d)), Some(e)) = (p.point.axis(), p.error_mm) else {
                continue;
            };
            let row = displacements.iter().position(|v| *v == d).expect("displacement listed");
            if cells[row][axis.index()].is_none() {
                cells[row][axis.index()] = Some(e);
                sums[axis.index()].0 += e * e;
                sums[axis.index()].1 += 1;
            }
        }
        let rms = sums.map(|(s, n)| (n > 0).then(|| (s / n as f64).sqrt()));
        AccuracyTable {
            displacements,
            cells,
            rms,
        }
    }

    pub fn points_csv_string(&self) -> String {
        let mut s = String::from(
            "index,axis,displacement,cmd_x,cmd_y,cmd_z,cmd_roll,cmd_pitch,cmd_yaw,\
             L1,L2,L3,L4,L5,L6,est_x,est_y,est_z,est_roll,est_pitch,est_yaw,\
             enc_x,enc_y,enc_z,rob_x,rob_y,rob_z,error_mm,iterations,status\n",
        );
        let na = |n: usize| vec!["NA"; n].join(",");
        for p in &self.points {
            let (axis, disp) = p
                .point
                .axis()
                .map_or(("combined".to_string(), "NA".to_string()), |(a, d)| {
                    (a.label().to_string(), format!("{d}"))
                });
            let c = p.commanded;
            s.push_str(&format!(
                "{},{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},",
                p.index, axis, disp, c.x, c.y, c.z, c.roll, c.pitch, c.yaw
            ));
            match &p.measured {
                Some(l) => {
                    let v: Vec<String> = l.as_array().iter().map(|x| format!("{x:.6}")).collect();
                    s.push_str(&v.join(","));
                }
                None => s.push_str(&na(6)),
            }
            s.push(',');
            match &p.estimated {
                Some(e) => {
                    let v: Vec<String> = e.to_array().iter().map(|x| format!("{x:.6}")).collect();
                    s.push_str(&v.join(","));
                }
                None => s.push_str(&na(6)),
            }
            s.push(',');
            match &p.p_enc {
                Some(e) => s.push_str(&format!("{:.6},{:.6},{:.6}", e.x, e.y, e.z)),
                None => s.push_str(&na(3)),
            }
            s.push_str(&format!(",{:.6},{:.6},{:.6},", p.p_rob.x, p.p_rob.y, p.p_rob.z));
            match p.error_mm {
                Some(e) => s.push_str(&format!("{e:.6}")),
                None => s.push_str("NA"),
            }
            s.push_str(&format!(",{},{}\n", p.iterations, p.status.label()));
        }
        s
    }
}

const CURVE_COLORS: [&str; 6] = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b"];

impl AccuracyTable {
    /// |dP| against displacement, one polyline per axis.
    pub fn error_curves_svg(&self) -> String {
        let (w, h, left, right, top, bottom) = (640.0, 400.0, 60.0, 110.0, 20.0, 50.0);
        let d_min = self.displacements.first().copied().unwrap_or(-1.0);
        let d_max = self.displacements.last().copied().unwrap_or(1.0);
        let d_span = if d_max > d_min { d_max - d_min } else { 1.0 };
        let e_max = self
            .cells
            .iter()
            .flatten()
            .flatten()
            .fold(0.0f64, |a, &b| a.max(b))
            .max(1e-3);
        let e_top = nice_ceiling(e_max);
        let px = |d: f64| left + (d - d_min) / d_span * (w - left - right);
        let py = |e: f64| h - bottom - e / e_top * (h - top - bottom);

        let mut s = format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\" font-family=\"sans-serif\" font-size=\"12\">\n"
        );
        s.push_str(&format!(
            "<rect x=\"0\" y=\"0\" width=\"{w}\" height=\"{h}\" fill=\"white\"/>\n<line x1=\"{left}\" y1=\"{0:.1}\" x2=\"{1:.1}\" y2=\"{0:.1}\" stroke=\"black\"/>\n<line x1=\"{left}\" y1=\"{top}\" x2=\"{left}\" y2=\"{0:.1}\" stroke=\"black\"/>\n",
            h - bottom,
            w - right
        ));
        for k in 0..=4 {
            let e = e_top * k as f64 / 4.0;
            s.push_str(&format!(
                "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\">{e:.3}</text>\n",
                left - 6.0,
                py(e) + 4.0
            ));
        }
        for d in [d_min, (d_min + d_max) / 2.0, d_max] {
            s.push_str(&format!(
                "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{d}</text>\n",
                px(d),
                h - bottom + 16.0
            ));
        }
        s.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">displacement (mm or deg)</text>\n",
            (left + w - right) / 2.0,
            h - 10.0
        ));
        s.push_str(&format!(
            "<text x=\"14\" y=\"{:.1}\" text-anchor=\"middle\" transform=\"rotate(-90 14 {:.1})\">|dP| (mm)</text>\n",
            h / 2.0,
            h / 2.0
        ));
        for axis in Axis::ALL {
            let color = CURVE_COLORS[axis.index()];
            let pts: Vec<String> = self
                .column(axis)
                .into_iter()
                .filter_map(|(d, e)| e.map(|e| format!("{:.1},{:.1}", px(d), py(e))))
                .collect();
            if !pts.is_empty() {
                s.push_str(&format!(
                    "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{}\"/>\n",
                    pts.join(" ")
                ));
            }
            let ly = top + 10.0 + 18.0 * axis.index() as f64;
            s.push_str(&format!(
                "<line x1=\"{0:.1}\" y1=\"{ly:.1}\" x2=\"{1:.1}\" y2=\"{ly:.1}\" stroke=\"{color}\" stroke-width=\"2\"/><text x=\"{2:.1}\" y=\"{3:.1}\">{4}</text>\n",
                w - right + 10.0,
                w - right + 30.0,
                w - right + 36.0,
                ly + 4.0,
                axis.label()
            ));
        }
        s.push_str("</svg>\n");
        s
    }
}

fn nice_ceiling(v: f64) -> f64 {
    let mag = 10f64.powf(v.log10().floor());
    [1.0, 2.0, 2.5, 5.0, 10.0]
        .iter()
        .map(|m| m * mag)
        .find(|c| *c >= v)
        .unwrap_or(10.0 * mag)
}

// ---------------------------------------------------------------------------
// Count streams

/// Scripted homing retraction: every string is pulled in quickly, creeps one
/// count per sample across its first index pulse, then returns.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HomingProfile {
    pub fast_speed_mm_s: f64,
    /// Creep starts this far above the first index and ends this far below.
    pub creep_margin_mm: f64,
    /// Hold at the starting lengths after the return, ms.
    pub settle_ms: u32,
}

impl Default for HomingProfile {
    fn default() -> Self {
        Self {
            fast_speed_mm_s: 40.0,
            creep_margin_mm: 0.5,
            settle_ms: 100,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Homing,
    Motion,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimedPose {
    pub time_us: u64,
    pub pose: Pose,
}

/// One sample of all six channels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StreamSample {
    pub time_us: u64,
    pub phase: Phase,
    /// Counts since power-on (the first sample is zero).
    pub raw_counts: [i64; LEG_COUNT],
    pub deltas: [i64; LEG_COUNT],
    /// An index position was reached during the step into this sample.
    pub index: [bool; LEG_COUNT],
    /// Physical string length, mm (before quantization).
    pub truth_lengths: [f64; LEG_COUNT],
    /// Commanded pose during motion samples.
    pub truth_pose: Option<Pose>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CountStream {
    pub samples: Vec<StreamSample>,
}

impl CountStream {
    pub fn motion_start(&self) -> Option<usize> {
        self.samples.iter().position(|s| s.phase == Phase::Motion)
    }

    pub fn index_events(&self, channel: usize) -> usize {
        self.samples.iter().filter(|s| s.index[channel]).count()
    }

    /// Per-channel view as `(delta, index)` events.
    pub fn channel_events(&self, channel: usize) -> Vec<crate::encoder::CountEvent> {
        self.samples
            .iter()
            .map(|s| crate::encoder::CountEvent {
                delta: s.deltas[channel],
                index: s.index[channel],
            })
            .collect()
    }
}

/// A sample to be encoded: time, physical lengths, phase and optional pose.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LengthSample {
    pub time_us: u64,
    pub lengths: [f64; LEG_COUNT],
    pub phase: Phase,
    pub truth_pose: Option<Pose>,
}

/// Encodes physical string lengths as counts and index events.
///
/// An index event fires on the step that reaches or passes an index count
/// (first index plus k * spacing for every pulse inside the range).
pub fn emit_length_stream(
    samples: &[LengthSample],
    specs: &[EncoderSpec; LEG_COUNT],
) -> Result<CountStream, SimError> {
    let index_counts: Vec<Vec<i64>> = specs
        .iter()
        .map(|s| {
            let c0 = s.length_to_counts(s.first_index_length_mm);
            (0..s.index_pulses_in_range() as i64)
                .map(|k| c0 + k * s.index_spacing_counts)
                .collect()
        })
        .collect();

    let mut out = Vec::with_capacity(samples.len());
    let mut first = [0i64; LEG_COUNT];
    let mut prev = [0i64; LEG_COUNT];
    for (n, s) in samples.iter().enumerate() {
        let mut abs = [0i64; LEG_COUNT];
        for leg in 0..LEG_COUNT {
            check_range(leg, s.lengths[leg], &specs[leg])?;
            abs[leg] = specs[leg].length_to_counts(s.lengths[leg]);
        }
        if n == 0 {
            first = abs;
            prev = abs;
        }
        let mut index = [false; LEG_COUNT];
        let mut deltas = [0i64; LEG_COUNT];
        for leg in 0..LEG_COUNT {
            let (a, b) = (prev[leg], abs[leg]);
            deltas[leg] = b - a;
            index[leg] = index_counts[leg]
                .iter()
                .any(|&c| (a < b && a < c && c <= b) || (b < a && b <= c && c < a));
        }
        out.push(StreamSample {
            time_us: s.time_us,
            phase: s.phase,
            raw_counts: std::array::from_fn(|i| abs[i] - first[i]),
            deltas,
            index,
            truth_lengths: s.lengths,
            truth_pose: s.truth_pose,
        });
        prev = abs;
    }
    Ok(CountStream { samples: out })
}

/// Per-sample lengths of the homing retraction, starting and ending at
/// `start` (mm). Channels that finish early hold their start length.
pub fn homing_segment(
    start: &[f64; LEG_COUNT],
    specs: &[EncoderSpec; LEG_COUNT],
    rate_hz: f64,
    profile: &HomingProfile,
) -> Vec<[f64; LEG_COUNT]> {
    let fast_step = profile.fast_speed_mm_s / rate_hz;
    let tracks: Vec<Vec<f64>> = (0..LEG_COUNT)
        .map(|leg| {
            let spec = &specs[leg];
            let cpm = spec.counts_per_mm;
            let idx = spec.length_to_counts(spec.first_index_length_mm);
            let margin = ((profile.creep_margin_mm * cpm).ceil() as i64).max((2.0 * fast_step * cpm).ceil() as i64);
            let creep_top = idx + margin;
            let creep_bottom = (idx - margin).max(0);
            let mut track = Vec::new();
            let mut l = start[leg];
            let top_mm = creep_top as f64 / cpm;
            if l > top_mm {
                while l - fast_step > top_mm {
                    l -= fast_step;
                    track.push(l);
                }
                track.push(top_mm);
            }
            let from = spec.length_to_counts(l).min(creep_top);
            for c in (creep_bottom..from).rev() {
                track.push(c as f64 / cpm);
            }
            let mut l = track.last().copied().unwrap_or(start[leg]);
            while l + fast_step < start[leg] {
                l += fast_step;
                track.push(l);
            }
            track.push(start[leg]);
            track
        })
        .collect();
    let len = tracks.iter().map(Vec::len).max().unwrap_or(0);
    let settle = ((profile.settle_ms as f64) * rate_hz / 1000.0).round() as usize;
    (0..len + settle)
        .map(|n| std::array::from_fn(|leg| tracks[leg].get(n).copied().unwrap_or(start[leg])))
        .collect()
}

/// Physical string lengths for a pose: centre-to-centre length minus the
/// shortening, no quantization.
pub fn physical_lengths(
    geom: &PlatformGeometry,
    pose: &Pose,
    model: &DeviationModel,
) -> Result<[f64; LEG_COUNT], SimError> {
    let l = inverse_kinematics(geom, &actual_pose(pose, model))?;
    Ok(l.as_array().map(|v| v - model.fixed_shortening_mm))
}

/// Homing retraction from the first trajectory pose followed by the
/// trajectory itself, as a count stream at `rate_hz`. Count noise is not
/// applied to streams.
pub fn emit_count_stream(
    geom: &PlatformGeometry,
    trajectory: &[TimedPose],
    model: &DeviationModel,
    specs: &[EncoderSpec; LEG_COUNT],
    rate_hz: f64,
    homing: &HomingProfile,
) -> Result<CountStream, SimError> {
    model.validate()?;
    let first = trajectory
        .first()
        .ok_or_else(|| SimError::InvalidScript("empty trajectory".into()))?;
    let start = physical_lengths(geom, &first.pose, model)?;
    let period_us = 1e6 / rate_hz;
    let homing = homing_segment(&start, specs, rate_hz, homing);
    let homing_us = (homing.len() as f64 * period_us).round() as u64;
    let mut samples: Vec<LengthSample> = homing
        .iter()
        .enumerate()
        .map(|(n, l)| LengthSample {
            time_us: (n as f64 * period_us).round() as u64,
            lengths: *l,
            phase: Phase::Homing,
            truth_pose: None,
        })
        .collect();
    for tp in trajectory {
        samples.push(LengthSample {
            time_us: homing_us + tp.time_us,
            lengths: physical_lengths(geom, &tp.pose, model)?,
            phase: Phase::Motion,
            truth_pose: Some(tp.pose),
        });
    }
    emit_length_stream(&samples, specs)
}

/// Nominal hold followed by every script point, each held for the dwell time.
pub fn script_trajectory(script: &MotionScript, rate_hz: f64) -> Vec<TimedPose> {
    let per_point = ((script.dwell_ms as f64) * rate_hz / 1000.0).round().max(1.0) as usize;
    let period_us = 1e6 / rate_hz;
    std::iter::once(Pose::IDENTITY)
        .chain(script.points.iter().map(MotionPoint::pose))
        .flat_map(|p| std::iter::repeat(p).take(per_point))
        .enumerate()
        .map(|(n, pose)| TimedPose {
            time_us: (n as f64 * period_us).round() as u64,
            pose,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::{home_all, EncoderChannel};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn specs(first: [f64; 6]) -> [EncoderSpec; 6] {
        first.map(|f| {
            let s = EncoderSpec::default();
            EncoderSpec::with_first_index(s.length_to_counts(f) as f64 / s.counts_per_mm)
        })
    }

    #[test]
    fn identity_pass_through_is_quantized_ik() {
        let g = PlatformGeometry::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let spec = EncoderSpec::default();
        let m = simulate_measurement(&g, &Pose::IDENTITY, &DeviationModel::ideal(0.0), &spec, &mut rng).unwrap();
        let ik = inverse_kinematics(&g, &Pose::IDENTITY).unwrap();
        for leg in 0..6 {
            assert_eq!(m.lengths.get(leg), (ik.get(leg) * 60.0).round() / 60.0);
            assert!((m.lengths.get(leg) - ik.get(leg)).abs() <= 0.5 / 60.0 + 1e-12);
        }
    }

    #[test]
    fn shortening_lowers_every_leg() {
        let g = PlatformGeometry::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let spec = EncoderSpec::default();
        let m = simulate_measurement(&g, &Pose::IDENTITY, &DeviationModel::ideal(3.0), &spec, &mut rng).unwrap();
        let ik = inverse_kinematics(&g, &Pose::IDENTITY).unwrap();
        for leg in 0..6 {
            assert_eq!(m.lengths.get(leg), ((ik.get(leg) - 3.0) * 60.0).round() / 60.0);
        }
    }

    #[test]
    fn overlong_leg_is_out_of_range() {
        let g = PlatformGeometry::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let spec = EncoderSpec::default();
        let far = Pose::new(0.0, 0.0, -300.0, 0.0, 0.0, 0.0);
        assert!(matches!(
            simulate_measurement(&g, &far, &DeviationModel::ideal(0.0), &spec, &mut rng),
            Err(SimError::OutOfRange { .. })
        ));
    }

    #[test]
    fn tcp_error_leaves_translations_and_roll_alone() {
        let m = DeviationModel {
            tcp_z_error_mm: 2.0,
            ..DeviationModel::ideal(0.0)
        };
        let t = Pose::new(3.0, -2.0, 1.0, 0.0, 0.0, 0.0);
        assert_eq!(actual_pose(&t, &m), t);
        let r = actual_pose(&Axis::Roll.displacement(10.0), &m);
        assert!(r.translation().norm() < 1e-12);
        let p = actual_pose(&Axis::Pitch.displacement(10.0), &m);
        // chord of a 2 mm radius swept through 10 degrees
        let chord = 2.0 * 2.0 * (5.0f64).to_radians().sin();
        assert!((p.translation().norm() - chord).abs() < 1e-9);
    }

    #[test]
    fn calibration_fixture_shape() {
        let s = MotionScript::calibration_66();
        assert_eq!(s.points.len(), 66);
        assert_eq!(s.version, Some(1));
        s.validate(&Workspace::default()).unwrap();
        assert_eq!(s.points.iter().filter(|p| p.axis().is_none()).count(), 5);
    }

    #[test]
    fn accuracy_script_shape() {
        let s = MotionScript::accuracy_protocol();
        assert_eq!(s.points.len(), 126);
        assert!(MotionScript::new(vec![MotionPoint::Axis { axis: Axis::X, displacement: 11.0 }])
            .validate(&Workspace::default())
            .is_err());
    }

    #[test]
    fn ideal_protocol_is_quantization_limited() {
        let g = PlatformGeometry::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let report = run_accuracy_protocol(
            &g,
            &DeviationModel::ideal(3.0),
            &MotionScript::accuracy_protocol(),
            &SolverConfig::default(),
            &ProtocolOptions::default(),
            &mut rng,
        )
        .unwrap();
        assert_eq!(report.failed_points(), 0);
        for p in &report.points {
            assert!(p.error_mm.unwrap() <= 0.05, "{p:?}");
        }
        let table = report.table();
        assert_eq!(table.displacements.len(), 21);
        let zero = table.displacements.iter().position(|d| *d == 0.0).unwrap();
        for e in table.cells[zero] {
            assert!(e.unwrap() <= 1.0 / 60.0);
        }
        let csv = table.to_csv_string();
        assert_eq!(csv.lines().count(), 23);
        let svg = table.error_curves_svg();
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        assert_eq!(svg.matches("<polyline").count(), 6);
        assert!(csv.starts_with("displacement,X,Y,Z,Roll,Pitch,Yaw\n-10,"));
    }

    #[test]
    fn static_stream_has_no_motion_deltas() {
        let g = PlatformGeometry::default();
        let sp = specs([12.0, 13.0, 14.0, 15.0, 16.0, 17.0]);
        let traj: Vec<TimedPose> = (0..50)
            .map(|n| TimedPose { time_us: n * 1000, pose: Pose::IDENTITY })
            .collect();
        let s = emit_count_stream(&g, &traj, &DeviationModel::ideal(3.0), &sp, 1000.0, &HomingProfile::default()).unwrap();
        let start = s.motion_start().unwrap();
        assert!(s.samples[start..].iter().all(|x| x.deltas == [0; 6]));
        assert_eq!(s.samples[0].raw_counts, [0; 6]);
    }

    #[test]
    fn counts_integrate_to_lengths() {
        let g = PlatformGeometry::default();
        let sp = specs([12.0, 13.0, 14.0, 15.0, 16.0, 17.0]);
        let traj = script_trajectory(&MotionScript::axis_sweep(4.0, 2.0), 200.0);
        let s = emit_count_stream(&g, &traj, &DeviationModel::ideal(3.0), &sp, 200.0, &HomingProfile::default()).unwrap();
        let mut acc = [0i64; 6];
        let origin: [i64; 6] = std::array::from_fn(|i| sp[i].length_to_counts(s.samples[0].truth_lengths[i]));
        for x in &s.samples {
            for leg in 0..6 {
                acc[leg] += x.deltas[leg];
                assert_eq!(acc[leg], x.raw_counts[leg]);
                assert_eq!(origin[leg] + acc[leg], sp[leg].length_to_counts(x.truth_lengths[leg]));
            }
        }
    }

    #[test]
    fn retraction_homes_to_within_one_count() {
        let g = PlatformGeometry::default();
        let sp = specs([11.3, 14.9, 18.2, 12.7, 16.4, 19.5]);
        let traj = script_trajectory(&MotionScript::axis_sweep(10.0, 5.0), 100.0);
        let stream = emit_count_stream(&g, &traj, &DeviationModel::ideal(3.0), &sp, 100.0, &HomingProfile::default()).unwrap();
        let start = stream.motion_start().unwrap();
        let mut chans = sp.map(EncoderChannel::new);
        let traces: [Vec<_>; 6] = std::array::from_fn(|c| stream.channel_events(c)[..start].to_vec());
        home_all(&mut chans, &traces).unwrap();
        for s in &stream.samples[start..] {
            for leg in 0..6 {
                chans[leg].feed_counts(s.deltas[leg], s.index[leg]);
                let err = (chans[leg].absolute_length().unwrap() - s.truth_lengths[leg]).abs();
                assert!(err <= 1.0 / 60.0, "leg {leg} err {err}");
            }
        }
    }

    #[test]
    fn full_range_sweep_sees_three_index_pulses() {
        let sp = specs([15.0, 16.0, 17.0, 18.0, 19.0, 20.0]);
        let samples: Vec<LengthSample> = (0..=4000)
            .map(|n| LengthSample {
                time_us: n * 1000,
                lengths: [n as f64 * 0.05; 6],
                phase: Phase::Motion,
                truth_pose: None,
            })
            .collect();
        let s = emit_length_stream(&samples, &sp).unwrap();
        for c in 0..6 {
            assert_eq!(s.index_events(c), 3);
        }
    }

    #[test]
    fn noise_never_lowers_protocol_rms() {
        let g = PlatformGeometry::default();
        let script = MotionScript::axis_sweep(10.0, 2.0);
        let mean_rms = |std: f64| -> f64 {
            let model = DeviationModel {
                count_noise_std: std,
                ..DeviationModel::ideal(3.0)
            };
            let total: f64 = (0..20)
                .map(|seed| {
                    let mut rng = ChaCha8Rng::seed_from_u64(seed);
                    let r = run_accuracy_protocol(
                        &g,
                        &model,
                        &script,
                        &SolverConfig::default(),
                        &ProtocolOptions::default(),
                        &mut rng,
                    )
                    .unwrap();
                    let e: Vec<f64> = r.points.iter().filter_map(|p| p.error_mm).collect();
                    (e.iter().map(|v| v * v).sum::<f64>() / e.len() as f64).sqrt()
                })
                .sum();
            total / 20.0
        };
        let levels = [0.0, 0.5, 1.0, 2.0, 4.0];
        let rms: Vec<f64> = levels.iter().map(|&s| mean_rms(s)).collect();
        for w in rms.windows(2) {
            assert!(w[1] >= w[0], "{rms:?}");
        }
    }
}
