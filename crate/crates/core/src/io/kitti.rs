//! KITTI odometry files: Velodyne scans, ground-truth poses and the
//! Velodyne-to-camera calibration.

use std::fs;
use std::path::Path;

use crate::error::{Error, Location, Result};
use crate::geometry::{Point, PointCloud, RigidTransform};

const RECORD: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct KittiScan {
    pub cloud: PointCloud,
    /// Records dropped because a coordinate was NaN or infinite.
    pub dropped: usize,
}

/// Reads packed `(x, y, z, intensity)` little-endian `f32` records.
pub fn read_kitti_bin(path: impl AsRef<Path>) -> Result<KittiScan> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() % RECORD != 0 {
        return Err(Error::parse(
            path,
            Location::Byte((bytes.len() - bytes.len() % RECORD) as u64),
            format!("file size {} is not a multiple of {RECORD}", bytes.len()),
        ));
    }
    let mut points = Vec::with_capacity(bytes.len() / RECORD);
    let mut intensity = Vec::with_capacity(bytes.len() / RECORD);
    let mut dropped = 0;
    for rec in bytes.chunks_exact(RECORD) {
        let f = |i: usize| f32::from_le_bytes(rec[4 * i..4 * i + 4].try_into().unwrap()) as f64;
        let p = Point::new(f(0), f(1), f(2));
        if p.iter().all(|c| c.is_finite()) {
            points.push(p);
            intensity.push(f(3));
        } else {
            dropped += 1;
        }
    }
    Ok(KittiScan {
        cloud: PointCloud::with_intensity(points, Some(intensity))?,
        dropped,
    })
}

/// Writes a cloud as KITTI records (coordinates rounded to `f32`; missing
/// intensity is written as 0).
pub fn write_kitti_bin(path: impl AsRef<Path>, cloud: &PointCloud) -> Result<()> {
    let path = path.as_ref();
    let mut out = Vec::with_capacity(cloud.len() * RECORD);
    for (i, p) in cloud.points().iter().enumerate() {
        for c in p.iter() {
            out.extend_from_slice(&(*c as f32).to_le_bytes());
        }
        let v = cloud.intensity().map_or(0.0, |v| v[i]);
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// One pose per non-empty line: 12 reals, row-major `[R | t]`.
pub fn read_kitti_poses(path: impl AsRef<Path>) -> Result<Vec<RigidTransform>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_poses(path, &text)
}

fn parse_poses(path: &Path, text: &str) -> Result<Vec<RigidTransform>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, line)| parse_row_major(path, i + 1, line.split_whitespace()))
        .collect()
}

fn parse_row_major<'a>(path: &Path, line: usize, tokens: impl Iterator<Item = &'a str>) -> Result<RigidTransform> {
    let at = Location::Line(line);
    let values = tokens
        .map(|t| t.parse::<f64>().map_err(|_| Error::parse(path, at, format!("invalid number '{t}'"))))
        .collect::<Result<Vec<_>>>()?;
    let values: [f64; 12] = values
        .as_slice()
        .try_into()
        .map_err(|_| Error::parse(path, at, format!("expected 12 values, found {}", values.len())))?;
    RigidTransform::from_row_major_3x4(&values).map_err(|e| Error::parse(path, at, e.to_string()))
}

/// Writes poses in the same 12-value format.
pub fn write_kitti_poses(path: impl AsRef<Path>, poses: &[RigidTransform]) -> Result<()> {
    let path = path.as_ref();
    let text: String = poses
        .iter()
        .map(|p| {
            let row: Vec<String> = p.to_row_major_3x4().iter().map(|v| format!("{v:e}")).collect();
            row.join(" ") + "\n"
        })
        .collect();
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Velodyne-to-camera extrinsic (`Tr:` line of a sequence `calib.txt`).
pub fn read_kitti_calib(path: impl AsRef<Path>) -> Result<RigidTransform> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    for (i, line) in text.lines().enumerate() {
        if let Some(rest) = line.strip_prefix("Tr:") {
            return parse_row_major(path, i + 1, rest.split_whitespace());
        }
    }
    Err(Error::parse(path, Location::Line(0), "no 'Tr:' entry"))
}

/// Relative Velodyne motion mapping scan `j` into scan `i`, given camera
/// poses of both frames and the Velodyne-to-camera extrinsic.
pub fn velodyne_relative(cam_i: &RigidTransform, cam_j: &RigidTransform, velo_to_cam: &RigidTransform) -> RigidTransform {
    velo_to_cam
        .inverse()
        .compose(&cam_i.inverse())
        .compose(cam_j)
        .compose(velo_to_cam)
}
