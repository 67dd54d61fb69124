//! Weighted closed-form rigid alignment of corresponded points (Horn's
//! quaternion method).

use nalgebra::{Matrix3, Matrix4, Quaternion, SymmetricEigen, UnitQuaternion, Vector3};

use crate::error::{Error, Result};
use crate::geometry::{Point, PointCloud, RigidTransform};

/// A matched pair: source point index, target point index, weight in
/// `[0, 1]` and squared distance (m^2) at matching time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correspondence {
    pub source: usize,
    pub target: usize,
    pub weight: f64,
    pub sq_dist: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CorrespondenceSet {
    pairs: Vec<Correspondence>,
}

impl CorrespondenceSet {
    /// Checks weight range and source uniqueness. Index ranges are checked
    /// against the clouds in [`weighted_horn`].
    pub fn new(pairs: Vec<Correspondence>) -> Result<Self> {
        for (i, p) in pairs.iter().enumerate() {
            if !(0.0..=1.0).contains(&p.weight) {
                return Err(Error::InvalidParameter(format!("pair {i} has weight {} outside [0, 1]", p.weight)));
            }
            if !(p.sq_dist >= 0.0) {
                return Err(Error::InvalidParameter(format!("pair {i} has squared distance {}", p.sq_dist)));
            }
        }
        let mut sources: Vec<usize> = pairs.iter().map(|p| p.source).collect();
        sources.sort_unstable();
        if sources.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidParameter("duplicate source index in correspondences".into()));
        }
        Ok(Self { pairs })
    }

    /// Skips validation; callers guarantee the invariants.
    pub(crate) fn from_valid(pairs: Vec<Correspondence>) -> Self {
        Self { pairs }
    }

    pub fn pairs(&self) -> &[Correspondence] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Number of pairs with positive weight.
    pub fn effective_len(&self) -> usize {
        self.pairs.iter().filter(|p| p.weight > 0.0).count()
    }

    pub fn into_pairs(self) -> Vec<Correspondence> {
        self.pairs
    }
}

/// Relative threshold on the scatter spectrum below which the weighted
/// source configuration counts as collinear.
pub const RANK_TOL: f64 = 1e-12;

/// Rigid transform minimizing `sum w_i |R src_i + t - dst_i|^2`.
pub fn weighted_horn(src: &PointCloud, dst: &PointCloud, corr: &CorrespondenceSet) -> Result<RigidTransform> {
    let pairs: Vec<(Point, Point, f64)> = corr
        .pairs()
        .iter()
        .filter(|p| p.weight > 0.0)
        .map(|p| {
            let s = src.points().get(p.source);
            let d = dst.points().get(p.target);
            match (s, d) {
                (Some(s), Some(d)) => Ok((*s, *d, p.weight)),
                _ => Err(Error::InvalidParameter(format!(
                    "correspondence ({}, {}) out of range",
                    p.source, p.target
                ))),
            }
        })
        .collect::<Result<_>>()?;
    horn_from_pairs(&pairs)
}

/// Horn's method over explicit `(source, target, weight)` triples. Pairs
/// with zero weight are skipped.
pub fn horn_from_pairs(pairs: &[(Point, Point, f64)]) -> Result<RigidTransform> {
    let effective = pairs.iter().filter(|p| p.2 > 0.0).count();
    if effective < 3 {
        return Err(Error::DegenerateCorrespondences { effective });
    }

    let mut total = 0.0;
    let mut sum_src = Vector3::zeros();
    let mut sum_dst = Vector3::zeros();
    for (s, d, w) in pairs.iter().filter(|p| p.2 > 0.0) {
        total += w;
        sum_src += s * *w;
        sum_dst += d * *w;
    }
    let c_src = sum_src / total;
    let c_dst = sum_dst / total;

    let mut scatter = Matrix3::zeros();
    let mut cross = Matrix3::zeros();
    for (s, d, w) in pairs.iter().filter(|p| p.2 > 0.0) {
        let a = s - c_src;
        let b = d - c_dst;
        scatter += (a * a.transpose()) * (*w / total);
        cross += (a * b.transpose()) * (*w / total);
    }

    let mut spectrum = SymmetricEigen::new(scatter).eigenvalues;
    spectrum.as_mut_slice().sort_by(|a, b| b.total_cmp(a));
    let singular_values = [spectrum[0], spectrum[1], spectrum[2]];
    if !(spectrum[1] > RANK_TOL * spectrum[0]) {
        return Err(Error::RankDeficient { singular_values });
    }

    // A target with no spread carries no rotational information.
    let rotation = if cross.norm() <= RANK_TOL * scatter.norm() {
        Matrix3::identity()
    } else {
        horn_rotation(&cross)
    };
    if rotation.determinant() < 0.0 {
        return Err(Error::Reflection);
    }
    let translation = c_dst - rotation * c_src;
    RigidTransform::new(rotation, translation)
}

/// Rotation from the cross-covariance `S = sum w a b^T` via the dominant
/// eigenvector of Horn's symmetric 4x4 matrix.
fn horn_rotation(s: &Matrix3<f64>) -> Matrix3<f64> {
    let (sxx, sxy, sxz) = (s[(0, 0)], s[(0, 1)], s[(0, 2)]);
    let (syx, syy, syz) = (s[(1, 0)], s[(1, 1)], s[(1, 2)]);
    let (szx, szy, szz) = (s[(2, 0)], s[(2, 1)], s[(2, 2)]);
    #[rustfmt::skip]
    let n = Matrix4::new(
        sxx + syy + szz, syz - szy,       szx - sxz,       sxy - syx,
        syz - szy,       sxx - syy - szz, sxy + syx,       szx + sxz,
        szx - sxz,       sxy + syx,       -sxx + syy - szz, syz + szy,
        sxy - syx,       szx + sxz,       syz + szy,       -sxx - syy + szz,
    );
    let eig = SymmetricEigen::new(n);
    let best = eig.eigenvalues.imax();
    let q = eig.eigenvectors.column(best);
    let quat = UnitQuaternion::from_quaternion(Quaternion::new(q[0], q[1], q[2], q[3]));
    *quat.to_rotation_matrix().matrix()
}
