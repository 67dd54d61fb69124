//! Gaussian mixture registration: EM model fitting, EM rigid registration
//! against a fixed model, and field-of-view reweighting of the model.

use std::ops::AddAssign;

use nalgebra::{Cholesky, Matrix3, Matrix6, SymmetricEigen, Vector3, Vector6};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::eoe::{calc_omega_weights, OverlapWeights, PenaltyConstants};
use crate::error::{Error, Result};
use crate::geometry::{transform_delta, Point, PointCloud, RigidTransform, SensorFov};
use crate::icp::SKIP_WEIGHT;
use crate::registration::{IterationRecord, RegistrationResult};

/// Smallest admissible covariance eigenvalue (m^2).
pub const VARIANCE_FLOOR: f64 = 1e-6;
const FIT_MAX_ITERATIONS: usize = 100;
const FIT_REL_TOL: f64 = 1e-6;
const LOG_2PI: f64 = 1.837_877_066_409_345_5;

/// Component count used when none is configured: `ceil(n / 100)` clamped
/// to `[8, 256]`.
pub fn default_components(n: usize) -> usize {
    n.div_ceil(100).clamp(8, 256)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMixture {
    pub weights: Vec<f64>,
    pub means: Vec<Point>,
    pub covariances: Vec<Matrix3<f64>>,
    /// Mixing weight of the uniform outlier component.
    pub outlier_weight: f64,
    /// Density of the uniform outlier component (1 / bounding-box volume).
    pub outlier_density: f64,
}

impl GaussianMixture {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Rescales the component weights so that `outlier_weight + sum = 1`.
    pub fn with_outlier_weight(mut self, outlier_weight: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&outlier_weight) {
            return Err(Error::InvalidParameter(format!("outlier weight must be in [0, 1), got {outlier_weight}")));
        }
        let sum: f64 = self.weights.iter().sum();
        let scale = (1.0 - outlier_weight) / sum;
        self.weights.iter_mut().for_each(|w| *w *= scale);
        self.outlier_weight = outlier_weight;
        Ok(self)
    }

    pub fn total_weight(&self) -> f64 {
        self.outlier_weight + self.weights.iter().sum::<f64>()
    }

    fn components(&self) -> Result<Vec<Component>> {
        self.means
            .iter()
            .zip(&self.covariances)
            .zip(&self.weights)
            .map(|((mean, cov), &weight)| Component::new(*mean, cov, weight))
            .collect()
    }

    /// Observed-data log-likelihood of `cloud` under the model.
    pub fn log_likelihood(&self, cloud: &PointCloud) -> Result<f64> {
        let comps = self.components()?;
        Ok(cloud
            .points()
            .iter()
            .map(|p| log_sum_exp(&self.log_terms(&comps, p)))
            .sum())
    }

    fn log_terms(&self, comps: &[Component], p: &Point) -> Vec<f64> {
        let mut terms: Vec<f64> = comps.iter().map(|c| c.log_weighted_density(p)).collect();
        if self.outlier_weight > 0.0 {
            terms.push(self.outlier_weight.ln() + self.outlier_density.ln());
        }
        terms
    }
}

struct Component {
    mean: Point,
    chol: Cholesky<f64, nalgebra::U3>,
    log_norm: f64,
    precision: Matrix3<f64>,
}

impl Component {
    fn new(mean: Point, cov: &Matrix3<f64>, weight: f64) -> Result<Self> {
        let chol = Cholesky::new(*cov).ok_or_else(|| Error::InvalidParameter("covariance is not positive definite".into()))?;
        let log_det = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        Ok(Self {
            mean,
            chol,
            log_norm: weight.ln() - 0.5 * (3.0 * LOG_2PI + log_det),
            precision: chol.inverse(),
        })
    }

    fn log_weighted_density(&self, p: &Point) -> f64 {
        let diff = p - self.mean;
        let y = self.chol.l().solve_lower_triangular(&diff).expect("triangular solve");
        self.log_norm - 0.5 * y.norm_squared()
    }
}

fn log_sum_exp(terms: &[f64]) -> f64 {
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + terms.iter().map(|t| (t - max).exp()).sum::<f64>().ln()
}

fn floor_covariance(cov: Matrix3<f64>) -> Matrix3<f64> {
    let cov = (cov + cov.transpose()) * 0.5;
    let eig = SymmetricEigen::new(cov);
    if eig.eigenvalues.min() >= VARIANCE_FLOOR {
        return cov;
    }
    let clamped = eig.eigenvalues.map(|v| v.max(VARIANCE_FLOOR));
    eig.eigenvectors * Matrix3::from_diagonal(&clamped) * eig.eigenvectors.transpose()
}

/// Posterior component memberships, one row per point. The last column is
/// the outlier component.
#[derive(Debug, Clone, PartialEq)]
pub struct Responsibilities {
    columns: usize,
    values: Vec<f64>,
}

impl Responsibilities {
    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks(self.columns)
    }

    pub fn columns(&self) -> usize {
        self.columns
    }
}

/// E-step of the model against `cloud`.
pub fn responsibilities(model: &GaussianMixture, cloud: &PointCloud) -> Result<Responsibilities> {
    let comps = model.components()?;
    let k = model.len();
    let values: Vec<f64> = cloud
        .points()
        .par_iter()
        .flat_map_iter(|p| {
            let mut row = row_posteriors(model, &comps, p);
            if model.outlier_weight <= 0.0 {
                row.push(0.0);
            }
            debug_assert_eq!(row.len(), k + 1);
            row
        })
        .collect();
    Ok(Responsibilities { columns: k + 1, values })
}

fn row_posteriors(model: &GaussianMixture, comps: &[Component], p: &Point) -> Vec<f64> {
    let terms = model.log_terms(comps, p);
    let lse = log_sum_exp(&terms);
    if lse == f64::NEG_INFINITY {
        let mut row = vec![0.0; terms.len()];
        *row.last_mut().expect("non-empty") = 1.0;
        return row;
    }
    terms.iter().map(|t| (t - lse).exp()).collect()
}

/// EM fit of a `k`-component mixture (no outlier component).
pub fn fit_gmm(cloud: &PointCloud, k: usize, seed: u64) -> Result<GaussianMixture> {
    Ok(fit_gmm_traced(cloud, k, seed)?.0)
}

/// [`fit_gmm`] that also returns the log-likelihood after every E-step.
pub fn fit_gmm_traced(cloud: &PointCloud, k: usize, seed: u64) -> Result<(GaussianMixture, Vec<f64>)> {
    if k == 0 {
        return Err(Error::InvalidParameter("component count must be >= 1".into()));
    }
    if cloud.len() < k {
        return Err(Error::TooFewPoints { have: cloud.len(), need: k });
    }
    let points = cloud.points();
    let n = points.len();
    let (lo, hi) = cloud.bounds().expect("non-empty");
    let extent = (hi - lo).map(|e| e.max(1e-3));
    let outlier_density = 1.0 / (extent[0] * extent[1] * extent[2]);

    let centers = kmeans_pp(points, k, seed);
    let mut resp = vec![0.0; n * k];
    for (i, p) in points.iter().enumerate() {
        let nearest = (0..k)
            .min_by(|&a, &b| (p - centers[a]).norm_squared().total_cmp(&(p - centers[b]).norm_squared()))
            .expect("k >= 1");
        resp[i * k + nearest] = 1.0;
    }
    let mut model = m_step(points, &resp, k, outlier_density);
    let mut trace = Vec::new();

    for _ in 0..FIT_MAX_ITERATIONS {
        let comps = model.components()?;
        let rows: Vec<(Vec<f64>, f64)> = points
            .par_iter()
            .map(|p| {
                let terms = model.log_terms(&comps, p);
                let lse = log_sum_exp(&terms);
                (terms.iter().map(|t| (t - lse).exp()).collect(), lse)
            })
            .collect();
        let ll: f64 = rows.iter().map(|r| r.1).sum();
        let done = trace
            .last()
            .is_some_and(|&prev: &f64| (ll - prev) <= FIT_REL_TOL * prev.abs());
        trace.push(ll);
        if done {
            break;
        }
        for (i, (row, _)) in rows.iter().enumerate() {
            resp[i * k..(i + 1) * k].copy_from_slice(row);
        }
        model = m_step(points, &resp, k, outlier_density);
    }
    Ok((model, trace))
}

fn m_step(points: &[Point], resp: &[f64], k: usize, outlier_density: f64) -> GaussianMixture {
    let n = points.len();
    let global_mean = points.iter().fold(Point::zeros(), |a, p| a + p) / n as f64;
    let global_cov = floor_covariance(
        points
            .iter()
            .fold(Matrix3::zeros(), |a, p| a + (p - global_mean) * (p - global_mean).transpose())
            / n as f64,
    );

    let mut weights = Vec::with_capacity(k);
    let mut means = Vec::with_capacity(k);
    let mut covariances = Vec::with_capacity(k);
    for c in 0..k {
        let mass: f64 = (0..n).map(|i| resp[i * k + c]).sum();
        if mass <= f64::MIN_POSITIVE {
            weights.push(0.0);
            means.push(global_mean);
            covariances.push(global_cov);
            continue;
        }
        let mean = (0..n).fold(Point::zeros(), |a, i| a + points[i] * resp[i * k + c]) / mass;
        let cov = (0..n).fold(Matrix3::zeros(), |a, i| {
            let d = points[i] - mean;
            a + d * d.transpose() * resp[i * k + c]
        }) / mass;
        weights.push(mass / n as f64);
        means.push(mean);
        covariances.push(floor_covariance(cov));
    }
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
    GaussianMixture {
        weights,
        means,
        covariances,
        outlier_weight: 0.0,
        outlier_density,
    }
}

fn kmeans_pp(points: &[Point], k: usize, seed: u64) -> Vec<Point> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers = vec![points[rng.random_range(0..points.len())]];
    let mut d2: Vec<f64> = points.iter().map(|p| (p - centers[0]).norm_squared()).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total <= 0.0 {
            rng.random_range(0..points.len())
        } else {
            let mut target = rng.random_range(0.0..total);
            let mut pick = points.len() - 1;
            for (i, d) in d2.iter().enumerate() {
                if target < *d {
                    pick = i;
                    break;
                }
                target -= d;
            }
            pick
        };
        let c = points[next];
        centers.push(c);
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min((p - c).norm_squared());
        }
    }
    centers
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GmmParams {
    /// `None` uses [`default_components`].
    pub components: Option<usize>,
    pub outlier_weight: f64,
    pub max_iterations: usize,
    /// Degrees.
    pub convergence_rot: f64,
    /// Meters.
    pub convergence_trans: f64,
    pub seed: u64,
}

impl Default for GmmParams {
    fn default() -> Self {
        Self {
            components: None,
            outlier_weight: 0.05,
            max_iterations: 200,
            convergence_rot: 0.01,
            convergence_trans: 1e-4,
            seed: 0,
        }
    }
}

impl GmmParams {
    pub fn validate(&self) -> Result<()> {
        if self.components == Some(0) {
            return Err(Error::InvalidParameter("components must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.outlier_weight) {
            return Err(Error::InvalidParameter(format!("outlier_weight must be in [0, 1), got {}", self.outlier_weight)));
        }
        if self.max_iterations == 0 || !(self.convergence_rot > 0.0 && self.convergence_trans > 0.0) {
            return Err(Error::InvalidParameter("iteration limit and convergence thresholds must be positive".into()));
        }
        Ok(())
    }
}

/// EM registration of `moving` onto a fixed model.
///
/// The M-step keeps the full component covariances: the expected
/// complete-data log-likelihood is a sum of per-point quadratics in the
/// moved point, minimized over the pose by damped Gauss-Newton.
pub fn register_gmm(
    model: &GaussianMixture,
    moving: &PointCloud,
    ext_weights: Option<&OverlapWeights>,
    init: &RigidTransform,
    params: &GmmParams,
) -> Result<RegistrationResult> {
    params.validate()?;
    if moving.len() < 3 {
        return Err(Error::TooFewPoints { have: moving.len(), need: 3 });
    }
    if let Some(w) = ext_weights {
        if w.len() != moving.len() {
            return Err(Error::InvalidParameter(format!(
                "weight count {} does not match cloud size {}",
                w.len(),
                moving.len()
            )));
        }
    }
    let comps = model.components()?;
    let active: Vec<(usize, f64)> = (0..moving.len())
        .map(|i| (i, ext_weights.map_or(1.0, |w| w.weights[i])))
        .filter(|&(_, w)| w >= SKIP_WEIGHT)
        .collect();
    if active.is_empty() {
        return Err(Error::NoOverlapSupport);
    }

    let mut transform = *init;
    let mut trace = Vec::with_capacity(params.max_iterations);
    let mut converged = false;
    let mut final_rmsd = f64::NAN;

    for _ in 0..params.max_iterations {
        // E-step: per point, the responsibility-weighted precision `A` and
        // precision-weighted mean term `b` of the expected complete-data
        // objective `sum_i y_i^T A_i y_i - 2 b_i^T y_i`.
        let quadratics: Vec<PointQuadratic> = active
            .par_iter()
            .map(|&(i, w)| {
                let x = transform.apply_point(&moving.points()[i]);
                let terms = model.log_terms(&comps, &x);
                let lse = log_sum_exp(&terms);
                let mut q = PointQuadratic {
                    x,
                    a: Matrix3::zeros(),
                    b: Vector3::zeros(),
                    mean: x,
                    inlier: 0.0,
                    log_lik: w * lse,
                };
                if lse > f64::NEG_INFINITY {
                    let mut weighted_mean = Vector3::zeros();
                    for (c, t) in comps.iter().zip(&terms) {
                        let g = (t - lse).exp();
                        q.inlier += g;
                        q.a += c.precision * (w * g);
                        q.b += c.precision * c.mean * (w * g);
                        weighted_mean += c.mean * g;
                    }
                    if q.inlier > 0.0 {
                        q.mean = weighted_mean / q.inlier;
                    }
                    q.inlier *= w;
                }
                q
            })
            .collect();

        let support: f64 = quadratics.iter().map(|q| q.inlier).sum();
        if !(support > 1e-12) {
            return Err(Error::NoModelSupport);
        }
        let total_w: f64 = active.iter().map(|a| a.1).sum();
        let mean_ll = quadratics.iter().map(|q| q.log_lik).sum::<f64>() / total_w;

        // M-step: minimize the objective over rigid motions.
        let step = minimize_quadratics(&quadratics);
        transform = step.compose(&transform);

        let wd: f64 = quadratics
            .iter()
            .map(|q| q.inlier * (step.apply_point(&q.x) - q.mean).norm_squared())
            .sum();
        final_rmsd = (wd / support).sqrt();
        trace.push(IterationRecord {
            transform,
            objective: -mean_ll,
            effective_pairs: quadratics.iter().filter(|q| q.inlier > 0.0).count(),
        });

        let delta = transform_delta(&step, &RigidTransform::identity());
        if delta.rotation_error < params.convergence_rot && delta.translation_error < params.convergence_trans {
            converged = true;
            break;
        }
    }

    Ok(RegistrationResult {
        transform,
        iterations: trace.len(),
        converged,
        final_rmsd,
        trace,
    })
}

struct PointQuadratic {
    x: Point,
    a: Matrix3<f64>,
    b: Vector3<f64>,
    mean: Point,
    inlier: f64,
    log_lik: f64,
}

const M_STEP_MAX_ITERATIONS: usize = 10;

fn quadratic_objective(qs: &[PointQuadratic], step: &RigidTransform) -> f64 {
    qs.iter()
        .map(|q| {
            let y = step.apply_point(&q.x);
            y.dot(&(q.a * y)) - 2.0 * q.b.dot(&y)
        })
        .sum()
}

/// Gauss-Newton over `(rotation vector, translation)` on the fixed E-step
/// objective, with step halving so the objective never increases.
fn minimize_quadratics(qs: &[PointQuadratic]) -> RigidTransform {
    let mut step = RigidTransform::identity();
    let mut value = quadratic_objective(qs, &step);
    for _ in 0..M_STEP_MAX_ITERATIONS {
        let mut h = Matrix6::<f64>::zeros();
        let mut g = Vector6::<f64>::zeros();
        for q in qs {
            let y = step.apply_point(&q.x);
            let r = q.a * y - q.b;
            // d y = -[y]x d(theta) + d(t)
            let skew = -y.cross_matrix();
            let a_skew = q.a * skew;
            h.fixed_view_mut::<3, 3>(0, 0).add_assign(skew.transpose() * a_skew);
            h.fixed_view_mut::<3, 3>(0, 3).add_assign(a_skew.transpose());
            h.fixed_view_mut::<3, 3>(3, 0).add_assign(a_skew);
            h.fixed_view_mut::<3, 3>(3, 3).add_assign(q.a);
            g.fixed_rows_mut::<3>(0).add_assign(skew.transpose() * r);
            g.fixed_rows_mut::<3>(3).add_assign(r);
        }
        let scale = h.diagonal().amax();
        if !(scale > 0.0) {
            break;
        }
        let Ok(p) = h.svd(true, true).solve(&(-g), 1e-12 * scale) else {
            break;
        };
        let mut alpha = 1.0;
        let mut accepted = false;
        for _ in 0..8 {
            let theta = Vector3::new(p[0], p[1], p[2]) * alpha;
            let t = Vector3::new(p[3], p[4], p[5]) * alpha;
            let update = RigidTransform::from_axis_angle(theta, theta.norm(), t);
            let candidate = update.compose(&step);
            let v = quadratic_objective(qs, &candidate);
            if v <= value {
                let gain = value - v;
                step = candidate;
                value = v;
                accepted = gain > 1e-15 * value.abs().max(1.0);
                break;
            }
            alpha *= 0.5;
        }
        if !accepted || p.norm() < 1e-12 {
            break;
        }
    }
    step
}

/// Multiplies each component weight by the overlap weight of its mean seen
/// from a sensor at `pose` with view `fov`, then renormalizes all weights
/// (outlier included) to sum to one.
pub fn reweight_model(
    model: &GaussianMixture,
    fov: &SensorFov,
    pose: &RigidTransform,
    penalties: &PenaltyConstants,
) -> Result<GaussianMixture> {
    let means = PointCloud::new(model.means.clone())?;
    let omega = calc_omega_weights(&means, pose, fov, penalties)?;
    if omega.weights.iter().all(|&w| w == 1.0) {
        return Ok(model.clone());
    }
    let scaled: Vec<f64> = model.weights.iter().zip(&omega.weights).map(|(p, w)| p * w).collect();
    let inlier: f64 = scaled.iter().sum();
    if !(inlier > 0.0) {
        return Err(Error::ModelOutsideOverlap);
    }
    let total = model.outlier_weight + inlier;
    Ok(GaussianMixture {
        weights: scaled.iter().map(|w| w / total).collect(),
        outlier_weight: model.outlier_weight / total,
        ..model.clone()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;
    use rand_distr::{Distribution, Normal};

    fn blob(rng: &mut impl Rng, center: Point, sigma: f64, n: usize) -> Vec<Point> {
        let normal = Normal::new(0.0, sigma).unwrap();
        (0..n)
            .map(|_| center + Vector3::new(normal.sample(rng), normal.sample(rng), normal.sample(rng)))
            .collect()
    }

    #[test]
    fn default_component_rule() {
        assert_eq!(default_components(10), 8);
        assert_eq!(default_components(2_001), 21);
        assert_eq!(default_components(1_000_000), 256);
    }

    #[test]
    fn single_component_is_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pts = blob(&mut rng, Point::new(1.0, -2.0, 0.5), 0.3, 500);
        let cloud = PointCloud::new(pts.clone()).unwrap();
        let m = fit_gmm(&cloud, 1, 9).unwrap();
        let mean = pts.iter().fold(Point::zeros(), |a, p| a + p) / 500.0;
        let cov = pts.iter().fold(Matrix3::zeros(), |a, p| a + (p - mean) * (p - mean).transpose()) / 500.0;
        assert!((m.means[0] - mean).abs().max() < 1e-9);
        assert!((m.covariances[0] - cov).abs().max() < 1e-9);
        assert!((m.weights[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn separates_two_blobs() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = Point::new(-2.0, 0.0, 0.0);
        let b = Point::new(2.0, 1.0, 0.5);
        let mut pts = blob(&mut rng, a, 0.2, 1000);
        pts.extend(blob(&mut rng, b, 0.2, 1000));
        let m = fit_gmm(&PointCloud::new(pts).unwrap(), 2, 3).unwrap();
        for c in [a, b] {
            let d = m.means.iter().map(|m| (m - c).norm()).fold(f64::INFINITY, f64::min);
            assert!(d < 0.05, "{d}");
        }
    }

    #[test]
    fn too_few_points() {
        let cloud = PointCloud::from_xyz(&[[0.0; 3], [1.0; 3]]).unwrap();
        assert!(matches!(fit_gmm(&cloud, 3, 0), Err(Error::TooFewPoints { .. })));
    }

    #[test]
    fn fit_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let cloud = PointCloud::new(blob(&mut rng, Point::zeros(), 1.0, 400)).unwrap();
        assert_eq!(fit_gmm(&cloud, 5, 11).unwrap(), fit_gmm(&cloud, 5, 11).unwrap());
    }

    #[test]
    fn responsibilities_rows_are_distributions() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let cloud = PointCloud::new(blob(&mut rng, Point::zeros(), 1.0, 300)).unwrap();
        let m = fit_gmm(&cloud, 4, 1).unwrap().with_outlier_weight(0.05).unwrap();
        assert!((m.total_weight() - 1.0).abs() < 1e-9);
        let probe = PointCloud::new(blob(&mut rng, Point::new(0.5, 0.0, 0.0), 3.0, 200)).unwrap();
        let r = responsibilities(&m, &probe).unwrap();
        assert_eq!(r.columns(), 5);
        for row in r.rows() {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!(row.iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn register_sampled_points_stays_at_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut pts = blob(&mut rng, Point::new(-1.0, 0.0, 0.0), 0.08, 600);
        pts.extend(blob(&mut rng, Point::new(1.0, 0.5, 0.0), 0.05, 600));
        pts.extend(blob(&mut rng, Point::new(0.0, -1.0, 0.7), 0.06, 600));
        let cloud = PointCloud::new(pts).unwrap();
        let model = fit_gmm(&cloud, 3, 2).unwrap().with_outlier_weight(0.05).unwrap();
        let moving = PointCloud::new(model_samples(&model, &mut rng, 60_000)).unwrap();
        let res = register_gmm(&model, &moving, None, &RigidTransform::identity(), &GmmParams::default()).unwrap();
        let d = transform_delta(&res.transform, &RigidTransform::identity());
        assert!(d.rotation_error < 0.1 && d.translation_error < 1e-3, "{d:?}");
    }

    fn model_samples(model: &GaussianMixture, rng: &mut impl Rng, n: usize) -> Vec<Point> {
        let normal = Normal::new(0.0, 1.0).unwrap();
        (0..n)
            .map(|_| {
                let mut u = rng.random_range(0.0..model.weights.iter().sum::<f64>());
                let mut k = model.len() - 1;
                for (i, w) in model.weights.iter().enumerate() {
                    if u < *w {
                        k = i;
                        break;
                    }
                    u -= w;
                }
                let l = Cholesky::new(model.covariances[k]).unwrap().l();
                model.means[k] + l * Vector3::new(normal.sample(rng), normal.sample(rng), normal.sample(rng))
            })
            .collect()
    }

    #[test]
    fn single_component_recovers_pure_translation() {
        // One isotropic component fixes translation only; start and stay at
        // zero rotation by matching the centroid.
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let pts = blob(&mut rng, Point::new(0.3, 0.2, -0.1), 0.5, 800);
        let cloud = PointCloud::new(pts).unwrap();
        let model = fit_gmm(&cloud, 1, 0).unwrap();
        let shift = Vector3::new(0.4, -0.25, 0.1);
        let moving = RigidTransform::from_translation(-shift).apply(&cloud);
        let res = register_gmm(&model, &moving, None, &RigidTransform::identity(), &GmmParams::default()).unwrap();
        assert!((res.transform.translation() - shift).norm() < 1e-9);
    }

    #[test]
    fn unit_weights_match_no_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let cloud = PointCloud::new(blob(&mut rng, Point::zeros(), 0.5, 400)).unwrap();
        let model = fit_gmm(&cloud, 4, 0).unwrap().with_outlier_weight(0.05).unwrap();
        let init = RigidTransform::from_euler_zyx(0.1, 0.0, 0.0, Vector3::new(0.05, 0.0, 0.0));
        let a = register_gmm(&model, &cloud, None, &init, &GmmParams::default()).unwrap();
        let b = register_gmm(&model, &cloud, Some(&OverlapWeights::ones(cloud.len())), &init, &GmmParams::default()).unwrap();
        assert_eq!(a, b);
    }

    fn two_component_model() -> GaussianMixture {
        GaussianMixture {
            weights: vec![0.5, 0.5],
            means: vec![Point::new(1.0, 0.0, 0.0), Point::new(20.0, 0.0, 0.0)],
            covariances: vec![Matrix3::identity() * 0.01; 2],
            outlier_weight: 0.0,
            outlier_density: 1.0,
        }
    }

    #[test]
    fn reweight_full_sphere_is_identity() {
        let m = two_component_model();
        let r = reweight_model(&m, &SensorFov::full_sphere(), &RigidTransform::identity(), &PenaltyConstants::default()).unwrap();
        assert_eq!(r, m);
    }

    #[test]
    fn reweight_range_violation() {
        let m = two_component_model();
        let fov = SensorFov::new(0.0, 10.0, std::f64::consts::TAU, PI).unwrap();
        let k = PenaltyConstants::default();
        let r = reweight_model(&m, &fov, &RigidTransform::identity(), &k).unwrap();
        let w = k.k1 * (-k.k2 * k.k0).exp();
        assert!((r.weights[0] - 1.0 / (1.0 + w)).abs() < 1e-15);
        assert!((r.weights[1] - w / (1.0 + w)).abs() < 1e-15);
    }

    #[test]
    fn reweight_preserves_simplex() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for trial in 0..20 {
            let cloud = PointCloud::new(blob(&mut rng, Point::new(2.0, 0.0, 0.0), 1.5, 300)).unwrap();
            let m = fit_gmm(&cloud, 6, trial).unwrap().with_outlier_weight(0.05).unwrap();
            let fov = SensorFov::from_degrees(0.1, 3.0, 60.0, 40.0).unwrap();
            let pose = RigidTransform::from_euler_zyx(rng.random_range(-1.0..1.0), 0.0, 0.0, Vector3::zeros());
            let r = reweight_model(&m, &fov, &pose, &PenaltyConstants::default()).unwrap();
            assert!((r.total_weight() - 1.0).abs() < 1e-9);
        }
    }
}
