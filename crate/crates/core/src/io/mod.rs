//! File formats: PLY, XYZ text, KITTI scans/poses/calibration, dataset
//! manifests and the results document.

mod kitti;
mod ply;
mod results;

use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Location, Result};
use crate::geometry::{Point, PointCloud, RigidTransform};

pub use kitti::{
    read_kitti_bin, read_kitti_calib, read_kitti_poses, velodyne_relative, write_kitti_bin, write_kitti_poses,
    KittiScan,
};
pub use ply::{read_ply, write_ply};
pub use results::{
    read_result, write_result, CellResult, OuterStats, PairResult, ResultsDocument, TimingReport, TimingSample,
    SCHEMA_VERSION,
};

/// Reads whitespace-separated `x y z [intensity]` rows. Lines starting with
/// `#` are comments.
pub fn read_xyz(path: impl AsRef<Path>) -> Result<PointCloud> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut points = Vec::new();
    let mut intensity = Vec::new();
    let mut columns = None;
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let at = Location::Line(i + 1);
        let values = line
            .split(|c: char| c.is_whitespace() || c == ',')
            .filter(|t| !t.is_empty())
            .map(|t| t.parse::<f64>().map_err(|_| Error::parse(path, at, format!("invalid number '{t}'"))))
            .collect::<Result<Vec<_>>>()?;
        if !(3..=4).contains(&values.len()) {
            return Err(Error::parse(path, at, format!("expected 3 or 4 values, found {}", values.len())));
        }
        if *columns.get_or_insert(values.len()) != values.len() {
            return Err(Error::parse(path, at, "inconsistent column count"));
        }
        if !values.iter().all(|v| v.is_finite()) {
            return Err(Error::parse(path, at, "non-finite value"));
        }
        points.push(Point::new(values[0], values[1], values[2]));
        if values.len() == 4 {
            intensity.push(values[3]);
        }
    }
    let intensity = (columns == Some(4)).then_some(intensity);
    PointCloud::with_intensity(points, intensity)
}

/// Writes `x y z [intensity]` rows with round-trip precision.
pub fn write_xyz(path: impl AsRef<Path>, cloud: &PointCloud) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::with_capacity(cloud.len() * 64);
    for (i, p) in cloud.points().iter().enumerate() {
        out.push_str(&format!("{:?} {:?} {:?}", p.x, p.y, p.z));
        if let Some(v) = cloud.intensity() {
            out.push_str(&format!(" {:?}", v[i]));
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Uniform sample of `n` points without replacement, in original order.
/// Returns the cloud unchanged when it already has at most `n` points.
pub fn downsample_random(cloud: &PointCloud, n: usize, seed: u64) -> PointCloud {
    if cloud.len() <= n {
        return cloud.clone();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut indices = rand::seq::index::sample(&mut rng, cloud.len(), n).into_vec();
    indices.sort_unstable();
    cloud.select(&indices)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrameFormat {
    Ply,
    Xyz,
    KittiBin,
}

impl FrameFormat {
    pub fn read(self, path: &Path) -> Result<PointCloud> {
        match self {
            FrameFormat::Ply => read_ply(path),
            FrameFormat::Xyz => read_xyz(path),
            FrameFormat::KittiBin => read_kitti_bin(path).map(|s| s.cloud),
        }
    }
}

fn default_stride() -> usize {
    1
}

/// An ordered frame list. Relative paths resolve against the manifest's
/// directory when loaded with [`DatasetManifest::load`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub frames: Vec<PathBuf>,
    pub format: FrameFormat,
    /// Sensor poses in a common world frame, one line per frame.
    #[serde(default)]
    pub poses: Option<PathBuf>,
    /// KITTI calibration file; when set, `poses` are camera poses and are
    /// converted to Velodyne relative motion.
    #[serde(default)]
    pub calib: Option<PathBuf>,
    #[serde(default = "default_stride")]
    pub stride: usize,
    #[serde(default)]
    pub downsample: Option<usize>,
    #[serde(default)]
    pub rng_seed: u64,
}

impl DatasetManifest {
    pub fn validate(&self) -> Result<()> {
        if self.frames.is_empty() {
            return Err(Error::InvalidParameter("manifest lists no frames".into()));
        }
        if self.stride == 0 {
            return Err(Error::InvalidParameter("manifest stride must be at least 1".into()));
        }
        if self.downsample == Some(0) {
            return Err(Error::InvalidParameter("downsample target must be at least 1".into()));
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut manifest: DatasetManifest = serde_json::from_str(&text).map_err(|e| Error::Json {
            path: path.to_path_buf(),
            source: e,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        manifest.frames.iter_mut().for_each(resolve);
        manifest.poses.iter_mut().for_each(resolve);
        manifest.calib.iter_mut().for_each(resolve);
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    /// Frame indices visited under the stride.
    pub fn frame_indices(&self) -> Vec<usize> {
        (0..self.frames.len()).step_by(self.stride.max(1)).collect()
    }

    /// Reads frame `i`, downsampled if requested. The downsample seed mixes
    /// in the frame index so frames are sampled independently.
    pub fn load_frame(&self, i: usize) -> Result<PointCloud> {
        let cloud = self.format.read(&self.frames[i])?;
        Ok(match self.downsample {
            Some(n) => downsample_random(&cloud, n, self.rng_seed ^ (i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)),
            None => cloud,
        })
    }

    /// Ground-truth transforms mapping frame `j` into frame `i`, for each
    /// requested `(i, j)` pair, or `None` without a pose file.
    pub fn ground_truth(&self, pairs: &[(usize, usize)]) -> Result<Option<Vec<RigidTransform>>> {
        let Some(poses_path) = &self.poses else {
            return Ok(None);
        };
        let poses = read_kitti_poses(poses_path)?;
        if poses.len() < self.frames.len() {
            return Err(Error::InvalidParameter(format!(
                "{} has {} poses for {} frames",
                poses_path.display(),
                poses.len(),
                self.frames.len()
            )));
        }
        let calib = self.calib.as_ref().map(read_kitti_calib).transpose()?;
        Ok(Some(
            pairs
                .iter()
                .map(|&(i, j)| match &calib {
                    Some(tr) => velodyne_relative(&poses[i], &poses[j], tr),
                    None => poses[i].inverse().compose(&poses[j]),
                })
                .collect(),
        ))
    }
}
