//! String-length offset calibration.
//!
//! Every string reads short by roughly the same amount because it rides on
//! the edge of its guide channel. A single shared offset is added to all six
//! readings before forward kinematics; the sweep scores candidate offsets by
//! the translation error against ground truth and keeps the one with the
//! smallest maximum error (RMS breaks ties).

use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{PlatformGeometry, Pose};
use crate::kinematics::{forward_kinematics, KinematicsError, LegLengths, SolverConfig};

#[derive(Debug, Error)]
pub enum CalibrationError {
    #[error("offset {offset_mm} mm makes leg {index} non-positive ({value} mm)")]
    NonPositiveLength { index: usize, value: f64, offset_mm: f64 },
    #[error("sweep failed: {failed} of {total} (sample, offset) pairs diverged")]
    SweepFailed { failed: usize, total: usize },
    #[error("sweep needs at least one {0}")]
    Empty(&'static str),
    #[error(transparent)]
    Kinematics(#[from] KinematicsError),
    #[error("sample CSV: {0}")]
    Csv(#[from] csv::Error),
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSample {
    pub measured_lengths: LegLengths,
    /// Ground-truth helmet pose in the encoder base frame.
    pub ground_truth_pose: Pose,
}

pub fn apply_offset(lengths: &LegLengths, offset_mm: f64) -> Result<LegLengths, CalibrationError> {
    let adjusted = lengths.as_array().map(|l| l + offset_mm);
    LegLengths::new(adjusted).map_err(|_| {
        let (index, value) = adjusted
            .iter()
            .copied()
            .enumerate()
            .find(|(_, v)| !(*v > 0.0))
            .unwrap_or((0, f64::NAN));
        CalibrationError::NonPositiveLength { index, value, offset_mm }
    })
}

/// Translation and rotation disagreement of one sample at one offset.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleError {
    /// |dP|, mm.
    pub translation_mm: f64,
    /// Largest absolute Euler-angle difference, deg. Reported only.
    pub rotation_deg: f64,
    pub iterations: u32,
}

pub fn evaluate_sample(
    sample: &CalibrationSample,
    offset_mm: f64,
    geom: &PlatformGeometry,
    config: &SolverConfig,
) -> Result<SampleError, CalibrationError> {
    let adjusted = apply_offset(&sample.measured_lengths, offset_mm)?;
    let result = forward_kinematics(geom, &adjusted, &Pose::IDENTITY, config)?;
    let truth = &sample.ground_truth_pose;
    let est = result.pose;
    Ok(SampleError {
        translation_mm: (est.translation() - truth.translation()).norm(),
        rotation_deg: (est.roll - truth.roll)
            .abs()
            .max((est.pitch - truth.pitch).abs())
            .max((est.yaw - truth.yaw).abs()),
        iterations: result.iterations,
    })
}

/// |dP| for one sample at one offset, seeded from the nominal pose.
pub fn position_error(
    sample: &CalibrationSample,
    offset_mm: f64,
    geom: &PlatformGeometry,
    config: &SolverConfig,
) -> Result<f64, CalibrationError> {
    evaluate_sample(sample, offset_mm, geom, config).map(|e| e.translation_mm)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepRow {
    pub offset_mm: f64,
    pub rms_mm: f64,
    pub max_mm: f64,
    pub rotation_rms_deg: f64,
    /// Samples that converged and entered the metrics.
    pub evaluated: usize,
    pub failed: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationSweep {
    pub rows: Vec<SweepRow>,
    pub best_offset_mm: f64,
    pub failed_pairs: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepOptions {
    /// Largest tolerated fraction of diverging (sample, offset) pairs.
    pub max_failure_fraction: f64,
}

impl Default for SweepOptions {
    fn default() -> Self {
        Self {
            max_failure_fraction: 0.1,
        }
    }
}

/// `start, start + step, ..., end` (inclusive within half a step).
pub fn offset_grid(start: f64, end: f64, step: f64) -> Vec<f64> {
    assert!(step > 0.0, "offset grid step must be positive");
    let n = ((end - start) / step + 0.5).floor() as i64;
    (0..=n.max(0))
        .map(|i| {
            let v = start + i as f64 * step;
            (v * 1e9).round() / 1e9
        })
        .collect()
}

pub fn default_offset_grid() -> Vec<f64> {
    offset_grid(-2.0, 6.0, 0.5)
}

pub fn run_sweep(
    samples: &[CalibrationSample],
    offsets: &[f64],
    geom: &PlatformGeometry,
    config: &SolverConfig,
) -> Result<CalibrationSweep, CalibrationError> {
    run_sweep_with(samples, offsets, geom, config, &SweepOptions::default())
}

pub fn run_sweep_with(
    samples: &[CalibrationSample],
    offsets: &[f64],
    geom: &PlatformGeometry,
    config: &SolverConfig,
    options: &SweepOptions,
) -> Result<CalibrationSweep, CalibrationError> {
    if offsets.is_empty() {
        return Err(CalibrationError::Empty("offset"));
    }
    if samples.is_empty() {
        return Err(CalibrationError::Empty("sample"));
    }
    config.validate()?;

    let rows: Vec<SweepRow> = offsets
        .par_iter()
        .map(|&offset_mm| {
            let errors: Vec<Option<SampleError>> = samples
                .iter()
                .map(|s| evaluate_sample(s, offset_mm, geom, config).ok())
                .collect();
            let ok: Vec<SampleError> = errors.iter().flatten().copied().collect();
            let failed = errors.len() - ok.len();
            let (rms_mm, max_mm, rotation_rms_deg) = if ok.is_empty() {
                (f64::NAN, f64::NAN, f64::NAN)
            } else {
                let n = ok.len() as f64;
                let sq: f64 = ok.iter().map(|e| e.translation_mm * e.translation_mm).sum();
                let rot: f64 = ok.iter().map(|e| e.rotation_deg * e.rotation_deg).sum();
                let max = ok.iter().map(|e| e.translation_mm).fold(0.0, f64::max);
                ((sq / n).sqrt(), max, (rot / n).sqrt())
            };
            SweepRow {
                offset_mm,
                rms_mm,
                max_mm,
                rotation_rms_deg,
                evaluated: ok.len(),
                failed,
            }
        })
        .collect();

    let failed_pairs: usize = rows.iter().map(|r| r.failed).sum();
    let total = samples.len() * offsets.len();
    if failed_pairs as f64 > options.max_failure_fraction * total as f64 {
        return Err(CalibrationError::SweepFailed {
            failed: failed_pairs,
            total,
        });
    }
    if failed_pairs > 0 {
        log::warn!("{failed_pairs} of {total} (sample, offset) pairs diverged and were excluded");
    }

    let best = rows
        .iter()
        .filter(|r| r.evaluated > 0)
        .min_by(|a, b| {
            a.max_mm
                .total_cmp(&b.max_mm)
                .then(a.rms_mm.total_cmp(&b.rms_mm))
        })
        .ok_or(CalibrationError::SweepFailed {
            failed: failed_pairs,
            total,
        })?;

    Ok(CalibrationSweep {
        best_offset_mm: best.offset_mm,
        rows,
        failed_pairs,
    })
}

impl CalibrationSweep {
    /// `offset_mm,rms_mm,max_mm` rows followed by a `# best_offset_mm=` line.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "offset_mm,rms_mm,max_mm")?;
        for r in &self.rows {
            writeln!(out, "{:.6},{:.6},{:.6}", r.offset_mm, r.rms_mm, r.max_mm)?;
        }
        writeln!(out, "# best_offset_mm={:.6}", self.best_offset_mm)
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("ascii")
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct SampleRecord {
    #[serde(rename = "L1")]
    l1: f64,
    #[serde(rename = "L2")]
    l2: f64,
    #[serde(rename = "L3")]
    l3: f64,
    #[serde(rename = "L4")]
    l4: f64,
    #[serde(rename = "L5")]
    l5: f64,
    #[serde(rename = "L6")]
    l6: f64,
    x: f64,
    y: f64,
    z: f64,
    roll: f64,
    pitch: f64,
    yaw: f64,
}

pub fn read_samples_csv<R: Read>(reader: R) -> Result<Vec<CalibrationSample>, CalibrationError> {
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(reader);
    let mut out = Vec::new();
    for rec in rdr.deserialize() {
        let r: SampleRecord = rec?;
        out.push(CalibrationSample {
            measured_lengths: LegLengths::new([r.l1, r.l2, r.l3, r.l4, r.l5, r.l6])?,
            ground_truth_pose: Pose::new(r.x, r.y, r.z, r.roll, r.pitch, r.yaw),
        });
    }
    Ok(out)
}

/// Fixed-precision writer so identical samples give identical bytes.
pub fn write_samples_csv<W: Write>(mut out: W, samples: &[CalibrationSample]) -> std::io::Result<()> {
    writeln!(out, "L1,L2,L3,L4,L5,L6,x,y,z,roll,pitch,yaw")?;
    for s in samples {
        let l = s.measured_lengths.as_array();
        let p = s.ground_truth_pose;
        writeln!(
            out,
            "{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.9},{:.9},{:.9},{:.9},{:.9},{:.9}",
            l[0], l[1], l[2], l[3], l[4], l[5], p.x, p.y, p.z, p.roll, p.pitch, p.yaw
        )?;
    }
    Ok(())
}
