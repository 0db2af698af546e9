//! JSON configuration: platform geometry plus optional encoder homing
//! references.
//!
//! ```json
//! { "base_points": [[x,y,z], ...6], "helmet_points": [[x,y,z], ...6],
//!   "workspace": {"translation_mm": 10, "rotation_deg": 10},
//!   "encoders": [{"first_index_length_mm": 14.2}, ...6] }
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::encoder::EncoderReference;
use crate::geometry::{GeometryError, PlatformGeometry, Workspace, LEG_COUNT};

/// The packaged default geometry document.
pub const DEFAULT_GEOMETRY_JSON: &str = include_str!("../data/default_geometry.json");

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid config JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("expected {LEG_COUNT} encoder entries, found {0}")]
    EncoderCount(usize),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigDocument {
    base_points: Vec<[f64; 3]>,
    helmet_points: Vec<[f64; 3]>,
    #[serde(default)]
    workspace: Workspace,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    encoders: Option<Vec<EncoderReference>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SystemConfig {
    pub geometry: PlatformGeometry,
    pub encoders: Option<[EncoderReference; LEG_COUNT]>,
}

impl Default for SystemConfig {
    fn default() -> Self {
        Self {
            geometry: PlatformGeometry::default(),
            encoders: None,
        }
    }
}

impl SystemConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let doc: ConfigDocument = serde_json::from_str(text)?;
        let geometry = PlatformGeometry::from_slices(&doc.base_points, &doc.helmet_points, doc.workspace)?;
        let encoders = match doc.encoders {
            None => None,
            Some(v) => Some(
                <[EncoderReference; LEG_COUNT]>::try_from(v.as_slice())
                    .map_err(|_| ConfigError::EncoderCount(v.len()))?,
            ),
        };
        Ok(Self { geometry, encoders })
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    /// Loads `path`, or the packaged default when `None`.
    pub fn load_or_default(path: Option<&Path>) -> Result<Self, ConfigError> {
        match path {
            Some(p) => Self::load(p),
            None => Self::from_json(DEFAULT_GEOMETRY_JSON),
        }
    }

    pub fn to_json(&self) -> String {
        let g = &self.geometry;
        let doc = ConfigDocument {
            base_points: g.base_points.iter().map(|p| [p.x, p.y, p.z]).collect(),
            helmet_points: g.helmet_points.iter().map(|p| [p.x, p.y, p.z]).collect(),
            workspace: g.workspace,
            encoders: self.encoders.map(|e| e.to_vec()),
        };
        serde_json::to_string_pretty(&doc).expect("config serializes")
    }
}
