//! Versioned JSON results document. Every timing field name ends in `_ms`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::eoe::WeightStats;
use crate::error::{Error, Location, Result};
use crate::geometry::PoseError;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResultsDocument {
    pub schema_version: u32,
    pub command: String,
    /// Effective configuration after defaults were applied.
    pub config: serde_json::Value,
    pub cells: Vec<CellResult>,
    /// Files the command wrote, relative to its output directory.
    #[serde(default)]
    pub artifacts: Vec<String>,
    #[serde(default)]
    pub timing: Option<TimingReport>,
    pub total_ms: f64,
}

impl ResultsDocument {
    pub fn new(command: impl Into<String>, config: serde_json::Value) -> Self {
        ResultsDocument {
            schema_version: SCHEMA_VERSION,
            command: command.into(),
            config,
            cells: Vec::new(),
            artifacts: Vec::new(),
            timing: None,
            total_ms: 0.0,
        }
    }
}

/// One (algorithm, EOE mode) cell of the experiment matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CellResult {
    pub algorithm: String,
    pub eoe: bool,
    pub pairs: Vec<PairResult>,
    /// Compounded sensor poses in the first frame, row-major 3x4.
    pub trajectory: Vec<[f64; 12]>,
    pub mean_rotation_error: Option<f64>,
    pub median_rotation_error: Option<f64>,
    pub mean_translation_error: Option<f64>,
    pub median_translation_error: Option<f64>,
    /// Error of the last compounded pose against the compounded ground truth.
    pub drift: Option<PoseError>,
    pub failures: usize,
    pub elapsed_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairResult {
    /// Frame whose coordinates the estimate maps into.
    pub target: usize,
    pub source: usize,
    pub transform: Option<[f64; 12]>,
    pub ground_truth: Option<[f64; 12]>,
    pub error: Option<PoseError>,
    pub converged: bool,
    pub base_iterations: usize,
    pub outer_iterations: usize,
    pub outer: Vec<OuterStats>,
    pub failure: Option<String>,
    pub elapsed_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OuterStats {
    pub iteration: usize,
    pub base_iterations: usize,
    pub delta: PoseError,
    pub source_weights: WeightStats,
    pub target_weights: Option<WeightStats>,
}

/// Median weight computation time per cloud size and a linear fit through it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimingReport {
    pub samples: Vec<TimingSample>,
    pub slope_per_point_ms: f64,
    pub intercept_ms: f64,
    pub r_squared: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimingSample {
    pub points: usize,
    pub median_ms: f64,
}

pub fn write_result(path: impl AsRef<Path>, doc: &ResultsDocument) -> Result<()> {
    let path = path.as_ref();
    let text = serde_json::to_string_pretty(doc).map_err(|e| Error::Json {
        path: path.to_path_buf(),
        source: e,
    })?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

/// Reads a results document, rejecting missing or unknown schema versions.
pub fn read_result(path: impl AsRef<Path>) -> Result<ResultsDocument> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let json = |e| Error::Json {
        path: path.to_path_buf(),
        source: e,
    };
    let value: serde_json::Value = serde_json::from_str(&text).map_err(json)?;
    match value.get("schema_version").and_then(|v| v.as_u64()) {
        None => return Err(Error::parse(path, Location::Line(1), "missing schema_version")),
        Some(v) if v != SCHEMA_VERSION as u64 => {
            return Err(Error::parse(path, Location::Line(1), format!("unsupported schema_version {v}")))
        }
        Some(_) => {}
    }
    serde_json::from_value(value).map_err(json)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::RigidTransform;
    use nalgebra::Vector3;

    fn sample() -> ResultsDocument {
        let t = RigidTransform::from_euler_zyx(0.123456789, -0.3, 1e-7, Vector3::new(1.0 / 3.0, -2.5e-9, 7.0));
        let stats = WeightStats {
            min: 0.25,
            mean: 0.8,
            fraction_downweighted: 0.4,
        };
        let mut doc = ResultsDocument::new("register", serde_json::json!({"seed": 1}));
        doc.cells.push(CellResult {
            algorithm: "icp".into(),
            eoe: true,
            pairs: vec![PairResult {
                target: 0,
                source: 1,
                transform: Some(t.to_row_major_3x4()),
                ground_truth: None,
                error: Some(PoseError {
                    rotation_error: 0.5,
                    translation_error: 0.01,
                    gimbal_lock: false,
                }),
                converged: true,
                base_iterations: 12,
                outer_iterations: 2,
                outer: vec![OuterStats {
                    iteration: 1,
                    base_iterations: 12,
                    delta: PoseError {
                        rotation_error: 0.1,
                        translation_error: 0.0,
                        gimbal_lock: false,
                    },
                    source_weights: stats,
                    target_weights: Some(stats),
                }],
                failure: None,
                elapsed_ms: 3.5,
            }],
            trajectory: vec![RigidTransform::identity().to_row_major_3x4(), t.to_row_major_3x4()],
            mean_rotation_error: Some(0.5),
            median_rotation_error: Some(0.5),
            mean_translation_error: Some(0.01),
            median_translation_error: Some(0.01),
            drift: None,
            failures: 0,
            elapsed_ms: 4.0,
        });
        doc
    }

    #[test]
    fn round_trip_preserves_transforms() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.json");
        let doc = sample();
        write_result(&path, &doc).unwrap();
        let back = read_result(&path).unwrap();
        let a = doc.cells[0].pairs[0].transform.unwrap();
        let b = back.cells[0].pairs[0].transform.unwrap();
        assert!(a.iter().zip(&b).all(|(x, y)| (x - y).abs() <= 1e-12));
        assert_eq!(back, doc);
    }

    #[test]
    fn missing_version_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.json");
        fs::write(&path, r#"{"command":"register","config":{},"cells":[],"total_ms":0}"#).unwrap();
        assert!(read_result(&path).unwrap_err().to_string().contains("schema_version"));
        fs::write(&path, r#"{"schema_version":99,"command":"register","config":{},"cells":[],"total_ms":0}"#).unwrap();
        assert!(read_result(&path).is_err());
    }

    #[test]
    fn empty_cells_is_valid() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.json");
        write_result(&path, &ResultsDocument::new("register", serde_json::json!({}))).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(v["cells"], serde_json::json!([]));
        assert!(read_result(&path).unwrap().cells.is_empty());
        fs::write(&path, r#"{"schema_version":1,"command":"synth","config":{},"cells":[],"total_ms":0}"#).unwrap();
        assert!(read_result(&path).unwrap().artifacts.is_empty());
    }
}
