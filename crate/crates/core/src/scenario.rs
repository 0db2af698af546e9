//! Scenario files: a geometry reference, a deviation model, a motion script
//! and a seed, plus the knobs the workflows built on them need.
//!
//! ```json
//! { "geometry": "default_geometry.json",
//!   "deviation": {"fixed_shortening_mm": 3.0, "tcp_z_error_mm": 2.0},
//!   "script": "accuracy",
//!   "seed": 7 }
//! ```
//!
//! `geometry` is resolved relative to the scenario file; omitted means the
//! packaged default. `script` is a preset name (`accuracy`,
//! `calibration66`) or an inline motion script.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calibration::CalibrationSample;
use crate::config::{ConfigError, SystemConfig};
use crate::encoder::{EncoderReference, EncoderSpec};
use crate::geometry::{PlatformGeometry, Pose, LEG_COUNT};
use crate::kinematics::SolverConfig;
use crate::simulator::{
    emit_count_stream, generate_calibration_samples, run_accuracy_protocol, script_trajectory, AccuracyReport,
    CountStream, DeviationModel, HomingProfile, MotionScript, ProtocolOptions, SimError, DEFAULT_ROBOT_BASE,
};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid scenario JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unknown motion script preset {0:?} (expected accuracy or calibration66)")]
    UnknownPreset(String),
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Sim(#[from] SimError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScriptSpec {
    Preset(String),
    Inline(MotionScript),
}

impl Default for ScriptSpec {
    fn default() -> Self {
        ScriptSpec::Preset("accuracy".into())
    }
}

fn default_offset() -> f64 {
    3.0
}

fn default_robot_base() -> Pose {
    DEFAULT_ROBOT_BASE
}

fn default_first_index_range() -> [f64; 2] {
    [10.0, 20.0]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioDocument {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub geometry: Option<PathBuf>,
    #[serde(default)]
    pub deviation: DeviationModel,
    #[serde(default)]
    pub script: ScriptSpec,
    #[serde(default)]
    pub seed: u64,
    /// Calibration offset applied before FK, mm.
    #[serde(default = "default_offset")]
    pub offset_mm: f64,
    /// Robot base pose in the base frame.
    #[serde(default = "default_robot_base")]
    pub robot_base: Pose,
    /// Counts per mm, range and index spacing shared by all six encoders.
    #[serde(default)]
    pub encoder: EncoderSpec,
    #[serde(default)]
    pub homing: HomingProfile,
    /// First-index lengths are drawn from this interval when the geometry
    /// file carries no encoder references.
    #[serde(default = "default_first_index_range")]
    pub first_index_range_mm: [f64; 2],
}

/// A validated scenario with its geometry and script resolved.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub document: ScenarioDocument,
    pub geometry: PlatformGeometry,
    pub script: MotionScript,
    pub encoders: [EncoderSpec; LEG_COUNT],
    /// Resolved geometry path, if one was given.
    pub geometry_path: Option<PathBuf>,
}

impl Scenario {
    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text, path.parent())
    }

    pub fn from_json(text: &str, base_dir: Option<&Path>) -> Result<Self, ScenarioError> {
        let doc: ScenarioDocument = serde_json::from_str(text)?;
        Self::from_document(doc, base_dir)
    }

    pub fn from_document(document: ScenarioDocument, base_dir: Option<&Path>) -> Result<Self, ScenarioError> {
        let geometry_path = document.geometry.as_ref().map(|g| match base_dir {
            Some(d) if g.is_relative() => d.join(g),
            _ => g.clone(),
        });
        let config = SystemConfig::load_or_default(geometry_path.as_deref())?;
        let script = match &document.script {
            ScriptSpec::Preset(name) => {
                MotionScript::preset(name).ok_or_else(|| ScenarioError::UnknownPreset(name.clone()))?
            }
            ScriptSpec::Inline(s) => s.clone(),
        };
        document.deviation.validate()?;
        script.validate(&config.geometry.workspace)?;
        document
            .encoder
            .validate()
            .map_err(|e| ScenarioError::Invalid(e.to_string()))?;
        if !document.offset_mm.is_finite() {
            return Err(ScenarioError::Invalid("offset_mm must be finite".into()));
        }
        let [lo, hi] = document.first_index_range_mm;
        if !(lo.is_finite() && hi.is_finite() && 0.0 <= lo && lo <= hi && hi <= document.encoder.range_mm) {
            return Err(ScenarioError::Invalid(format!(
                "first_index_range_mm [{lo}, {hi}] must lie inside the encoder range"
            )));
        }
        let refs = config
            .encoders
            .unwrap_or_else(|| draw_references(&document.encoder, [lo, hi], document.seed));
        let encoders = refs.map(|r| EncoderSpec {
            first_index_length_mm: r.first_index_length_mm,
            ..document.encoder
        });
        Ok(Self {
            geometry: config.geometry,
            script,
            encoders,
            geometry_path,
            document,
        })
    }

    pub fn seed(&self) -> u64 {
        self.document.seed
    }

    pub fn rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.document.seed)
    }

    pub fn protocol_options(&self) -> ProtocolOptions {
        ProtocolOptions {
            offset_mm: self.document.offset_mm,
            robot_base: self.document.robot_base,
            encoder: self.document.encoder,
        }
    }

    pub fn references(&self) -> [EncoderReference; LEG_COUNT] {
        self.encoders.map(|s| EncoderReference {
            first_index_length_mm: s.first_index_length_mm,
        })
    }

    pub fn calibration_samples(&self) -> Result<Vec<CalibrationSample>, ScenarioError> {
        Ok(generate_calibration_samples(
            &self.geometry,
            &self.document.deviation,
            &self.script,
            &self.document.encoder,
            &mut self.rng(),
        )?)
    }

    pub fn accuracy_report(&self, solver: &SolverConfig) -> Result<AccuracyReport, ScenarioError> {
        Ok(run_accuracy_protocol(
            &self.geometry,
            &self.document.deviation,
            &self.script,
            solver,
            &self.protocol_options(),
            &mut self.rng(),
        )?)
    }

    /// Homing retraction, a nominal hold, then each script point for its
    /// dwell time, sampled at `rate_hz`.
    pub fn count_stream(&self, rate_hz: f64) -> Result<CountStream, ScenarioError> {
        if !(rate_hz > 0.0 && rate_hz.is_finite()) {
            return Err(ScenarioError::Invalid(format!("rate {rate_hz} Hz must be positive")));
        }
        Ok(emit_count_stream(
            &self.geometry,
            &script_trajectory(&self.script, rate_hz),
            &self.document.deviation,
            &self.encoders,
            rate_hz,
            &self.document.homing,
        )?)
    }
}

/// First-index lengths drawn uniformly from `range`, snapped to the count grid.
pub fn draw_references(spec: &EncoderSpec, range: [f64; 2], seed: u64) -> [EncoderReference; LEG_COUNT] {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_1dec_0de5);
    std::array::from_fn(|_| {
        let l = if range[1] > range[0] {
            rng.gen_range(range[0]..range[1])
        } else {
            range[0]
        };
        EncoderReference {
            first_index_length_mm: spec.length_to_counts(l) as f64 / spec.counts_per_mm,
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_scenario_uses_defaults() {
        let s = Scenario::from_json("{}", None).unwrap();
        assert_eq!(s.geometry, PlatformGeometry::default());
        assert_eq!(s.script.points.len(), 126);
        assert_eq!(s.document.offset_mm, 3.0);
        for e in &s.encoders {
            assert!((10.0..=20.0).contains(&e.first_index_length_mm));
            assert_eq!((e.first_index_length_mm * 60.0).round() / 60.0, e.first_index_length_mm);
        }
    }

    #[test]
    fn references_follow_seed() {
        let a = Scenario::from_json(r#"{"seed": 1}"#, None).unwrap();
        let b = Scenario::from_json(r#"{"seed": 1}"#, None).unwrap();
        let c = Scenario::from_json(r#"{"seed": 2}"#, None).unwrap();
        assert_eq!(a.encoders, b.encoders);
        assert_ne!(a.encoders, c.encoders);
    }

    #[test]
    fn inline_script_and_preset() {
        let s = Scenario::from_json(
            r#"{"script": {"points": [{"axis": "pitch", "displacement": 5}], "dwell_ms": 20}}"#,
            None,
        )
        .unwrap();
        assert_eq!(s.script.points.len(), 1);
        assert_eq!(s.script.dwell_ms, 20);
        let c = Scenario::from_json(r#"{"script": "calibration66"}"#, None).unwrap();
        assert_eq!(c.script.points.len(), 66);
    }

    #[test]
    fn bad_scenarios_rejected() {
        assert!(matches!(Scenario::from_json(r#"{"script": "nope"}"#, None), Err(ScenarioError::UnknownPreset(_))));
        assert!(matches!(Scenario::from_json(r#"{"bogus": 1}"#, None), Err(ScenarioError::Json(_))));
        assert!(Scenario::from_json(r#"{"deviation": {"count_noise_std": -1}}"#, None).is_err());
        assert!(Scenario::from_json(r#"{"first_index_range_mm": [30, 10]}"#, None).is_err());
        assert!(Scenario::from_json(
            r#"{"script": {"points": [{"axis": "x", "displacement": 12}]}}"#,
            None
        )
        .is_err());
        assert!(matches!(
            Scenario::from_json(r#"{"geometry": "/nonexistent/geometry.json"}"#, None),
            Err(ScenarioError::Config(_))
        ));
    }

    #[test]
    fn packaged_scenarios_load() {
        let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("data/scenarios");
        for name in ["ideal.json", "tcp_error.json", "calibration.json", "noisy.json"] {
            Scenario::load(&dir.join(name)).unwrap_or_else(|e| panic!("{name}: {e}"));
        }
    }
}
