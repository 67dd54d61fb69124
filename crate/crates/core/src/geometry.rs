//! Point clouds, rigid transforms, sensor view frusta and pose error metrics.

use std::f64::consts::{FRAC_PI_2, PI, TAU};

use nalgebra::{Matrix3, Rotation3, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Point = Vector3<f64>;

/// Orthonormality drift that is accepted without correction.
pub const ORTHO_EXACT_TOL: f64 = 1e-9;
/// Orthonormality drift beyond which a rotation is rejected outright.
pub const ORTHO_REJECT_TOL: f64 = 1e-3;

/// An ordered set of 3D points (meters) with optional per-point intensity.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud {
    points: Vec<Point>,
    intensity: Option<Vec<f64>>,
}

impl PointCloud {
    pub fn new(points: Vec<Point>) -> Result<Self> {
        Self::with_intensity(points, None)
    }

    pub fn with_intensity(points: Vec<Point>, intensity: Option<Vec<f64>>) -> Result<Self> {
        if let Some(i) = points.iter().position(|p| !p.iter().all(|c| c.is_finite())) {
            return Err(Error::InvalidCloud(format!("point {i} has a non-finite coordinate")));
        }
        if let Some(values) = &intensity {
            if values.len() != points.len() {
                return Err(Error::InvalidCloud(format!(
                    "intensity length {} does not match point count {}",
                    values.len(),
                    points.len()
                )));
            }
        }
        Ok(Self { points, intensity })
    }

    pub fn from_xyz(coords: &[[f64; 3]]) -> Result<Self> {
        Self::new(coords.iter().map(|c| Point::new(c[0], c[1], c[2])).collect())
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn intensity(&self) -> Option<&[f64]> {
        self.intensity.as_deref()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Keeps the points at `indices` (in the given order), with their attributes.
    pub fn select(&self, indices: &[usize]) -> PointCloud {
        PointCloud {
            points: indices.iter().map(|&i| self.points[i]).collect(),
            intensity: self
                .intensity
                .as_ref()
                .map(|v| indices.iter().map(|&i| v[i]).collect()),
        }
    }

    pub fn centroid(&self) -> Option<Point> {
        if self.points.is_empty() {
            return None;
        }
        let sum = self.points.iter().fold(Point::zeros(), |acc, p| acc + p);
        Some(sum / self.points.len() as f64)
    }

    /// Axis-aligned bounding box as (min, max).
    pub fn bounds(&self) -> Option<(Point, Point)> {
        let first = *self.points.first()?;
        Some(self.points.iter().fold((first, first), |(lo, hi), p| {
            (lo.inf(p), hi.sup(p))
        }))
    }

    pub(crate) fn map_points(&self, f: impl Fn(&Point) -> Point + Sync + Send) -> PointCloud {
        PointCloud {
            points: self.points.par_iter().map(f).collect(),
            intensity: self.intensity.clone(),
        }
    }
}

/// A proper rigid motion `z -> R z + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Builds a transform, re-orthonormalizing rotations that drifted past
    /// [`ORTHO_EXACT_TOL`] and rejecting those past [`ORTHO_REJECT_TOL`].
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        if !rotation.iter().chain(translation.iter()).all(|v| v.is_finite()) {
            return Err(Error::InvalidTransform("non-finite entry".into()));
        }
        let (drift, det) = orthonormality_drift(&rotation);
        if drift <= ORTHO_EXACT_TOL && (det - 1.0).abs() <= ORTHO_EXACT_TOL {
            return Ok(Self { rotation, translation });
        }
        if drift > ORTHO_REJECT_TOL || (det - 1.0).abs() > ORTHO_REJECT_TOL {
            return Err(Error::InvalidTransform(format!(
                "rotation is not orthonormal (max |R^T R - I| = {drift:.3e}, det = {det:.6})"
            )));
        }
        Ok(Self {
            rotation: polar_rotation(&rotation),
            translation,
        })
    }

    pub fn from_translation(translation: Vector3<f64>) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation,
        }
    }

    /// Rotation of `angle` radians about `axis` followed by `translation`.
    pub fn from_axis_angle(axis: Vector3<f64>, angle: f64, translation: Vector3<f64>) -> Self {
        let rotation = if axis.norm() == 0.0 {
            Matrix3::identity()
        } else {
            *Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(axis), angle).matrix()
        };
        Self { rotation, translation }
    }

    /// Intrinsic Z-Y-X (yaw, pitch, roll) angles in radians.
    pub fn from_euler_zyx(yaw: f64, pitch: f64, roll: f64, translation: Vector3<f64>) -> Self {
        let rotation = *Rotation3::from_euler_angles(roll, pitch, yaw).matrix();
        Self { rotation, translation }
    }

    /// Row-major 3x4 `[R | t]`.
    pub fn from_row_major_3x4(values: &[f64; 12]) -> Result<Self> {
        let rotation = Matrix3::new(
            values[0], values[1], values[2], values[4], values[5], values[6], values[8], values[9], values[10],
        );
        Self::new(rotation, Vector3::new(values[3], values[7], values[11]))
    }

    pub fn to_row_major_3x4(&self) -> [f64; 12] {
        let r = &self.rotation;
        let t = &self.translation;
        [
            r[(0, 0)], r[(0, 1)], r[(0, 2)], t[0],
            r[(1, 0)], r[(1, 1)], r[(1, 2)], t[1],
            r[(2, 0)], r[(2, 1)], r[(2, 2)], t[2],
        ]
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn apply_point(&self, p: &Point) -> Point {
        self.rotation * p + self.translation
    }

    /// Applies the transform to every point, preserving order and attributes.
    pub fn apply(&self, cloud: &PointCloud) -> PointCloud {
        cloud.map_points(|p| self.apply_point(p))
    }

    /// `(R^T, -R^T t)`.
    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// The transform `z -> self(other(z))`.
    pub fn compose(&self, other: &RigidTransform) -> Self {
        let rotation = self.rotation * other.rotation;
        let translation = self.rotation * other.translation + self.translation;
        let (drift, det) = orthonormality_drift(&rotation);
        let rotation = if drift > ORTHO_EXACT_TOL || (det - 1.0).abs() > ORTHO_EXACT_TOL {
            polar_rotation(&rotation)
        } else {
            rotation
        };
        Self { rotation, translation }
    }

    /// Rotation angle of this transform in radians, in `[0, pi]`.
    pub fn rotation_angle(&self) -> f64 {
        rotation_angle(&self.rotation)
    }

    /// Intrinsic Z-Y-X Euler angles `(yaw, pitch, roll)` in radians, plus a
    /// gimbal-lock flag.
    pub fn euler_zyx(&self) -> (f64, f64, f64, bool) {
        euler_zyx(&self.rotation)
    }
}

fn orthonormality_drift(r: &Matrix3<f64>) -> (f64, f64) {
    let drift = (r.transpose() * r - Matrix3::identity()).abs().max();
    (drift, r.determinant())
}

/// Nearest rotation matrix (orthogonal polar factor with det +1).
fn polar_rotation(m: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = m.svd(true, true);
    let u = svd.u.expect("svd u");
    let v_t = svd.v_t.expect("svd v_t");
    let mut r = u * v_t;
    if r.determinant() < 0.0 {
        let mut u = u;
        u.column_mut(2).neg_mut();
        r = u * v_t;
    }
    r
}

/// Angle of a rotation matrix, from its trace and skew part.
fn rotation_angle(r: &Matrix3<f64>) -> f64 {
    let cos2 = r.trace() - 1.0;
    let sin2 = Vector3::new(
        r[(2, 1)] - r[(1, 2)],
        r[(0, 2)] - r[(2, 0)],
        r[(1, 0)] - r[(0, 1)],
    )
    .norm();
    sin2.atan2(cos2)
}

const GIMBAL_TOL: f64 = 1e-6;

fn euler_zyx(r: &Matrix3<f64>) -> (f64, f64, f64, bool) {
    let pitch = (-r[(2, 0)]).clamp(-1.0, 1.0).asin();
    if (pitch.abs() - FRAC_PI_2).abs() < GIMBAL_TOL {
        // Yaw and roll are coupled; put everything into yaw.
        let yaw = (-r[(0, 1)]).atan2(r[(1, 1)]);
        return (yaw, pitch, 0.0, true);
    }
    let yaw = r[(1, 0)].atan2(r[(0, 0)]);
    let roll = r[(2, 1)].atan2(r[(2, 2)]);
    (yaw, pitch, roll, false)
}

/// Sensor view frustum: range limits (meters) and full horizontal/vertical
/// opening angles (radians). The sensor looks along `+x` with `+z` up.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensorFov {
    pub psi_min: f64,
    #[serde(with = "unbounded")]
    pub psi_max: f64,
    pub psi_x: f64,
    pub psi_y: f64,
}

impl SensorFov {
    pub fn new(psi_min: f64, psi_max: f64, psi_x: f64, psi_y: f64) -> Result<Self> {
        let fov = Self {
            psi_min,
            psi_max,
            psi_x,
            psi_y,
        };
        fov.validate()?;
        Ok(fov)
    }

    /// Symmetric frustum with the given opening angles in degrees.
    pub fn from_degrees(psi_min: f64, psi_max: f64, horizontal_deg: f64, vertical_deg: f64) -> Result<Self> {
        // Full openings map exactly onto the validated upper bounds.
        let radians = |deg: f64, full_deg: f64, full: f64| if deg == full_deg { full } else { deg.to_radians() };
        Self::new(psi_min, psi_max, radians(horizontal_deg, 360.0, TAU), radians(vertical_deg, 180.0, PI))
    }

    /// A field of view that encloses all of space.
    pub fn full_sphere() -> Self {
        Self {
            psi_min: 0.0,
            psi_max: f64::INFINITY,
            psi_x: TAU,
            psi_y: PI,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.psi_min.is_finite() && self.psi_min >= 0.0) {
            return Err(Error::InvalidFov(format!("psi_min must be finite and >= 0, got {}", self.psi_min)));
        }
        if self.psi_max.is_nan() || self.psi_max <= self.psi_min {
            return Err(Error::InvalidFov(format!(
                "psi_max ({}) must exceed psi_min ({})",
                self.psi_max, self.psi_min
            )));
        }
        if !(self.psi_x > 0.0 && self.psi_x <= TAU) {
            return Err(Error::InvalidFov(format!("psi_x must be in (0, 2pi], got {}", self.psi_x)));
        }
        if !(self.psi_y > 0.0 && self.psi_y <= PI) {
            return Err(Error::InvalidFov(format!("psi_y must be in (0, pi], got {}", self.psi_y)));
        }
        Ok(())
    }
}

mod unbounded {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(value: &f64, s: S) -> Result<S::Ok, S::Error> {
        if value.is_infinite() {
            s.serialize_none()
        } else {
            s.serialize_f64(*value)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

/// Rotation error in degrees and translation error in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseError {
    pub rotation_error: f64,
    pub translation_error: f64,
    #[serde(default)]
    pub gimbal_lock: bool,
}

/// Rotation angle of `R_a^T R_b` in degrees and `|t_a - t_b|`.
pub fn transform_delta(a: &RigidTransform, b: &RigidTransform) -> PoseError {
    let relative = if a.rotation == b.rotation {
        Matrix3::identity()
    } else {
        a.rotation.transpose() * b.rotation
    };
    PoseError {
        rotation_error: rotation_angle(&relative).to_degrees(),
        translation_error: (a.translation - b.translation).norm(),
        gimbal_lock: false,
    }
}

/// Mean absolute intrinsic Z-Y-X Euler angle of `R_gt^T R_est` (degrees) and
/// `|t_est - t_gt|`.
pub fn pose_error_euler(estimate: &RigidTransform, ground_truth: &RigidTransform) -> PoseError {
    let relative = if estimate.rotation == ground_truth.rotation {
        Matrix3::identity()
    } else {
        ground_truth.rotation.transpose() * estimate.rotation
    };
    let (yaw, pitch, roll, gimbal_lock) = euler_zyx(&relative);
    PoseError {
        rotation_error: (yaw.abs() + pitch.abs() + roll.abs()).to_degrees() / 3.0,
        translation_error: (estimate.translation - ground_truth.translation).norm(),
        gimbal_lock,
    }
}
