//! Expected overlap estimation.
//!
//! Overlap between two views is represented as a likelihood field: every
//! point is projected into the other sensor's frame, accumulates a penalty
//! `xi` for each field-of-view bound it violates, and gets weight
//! `k1 * exp(-k2 * xi)` (or exactly 1 when `xi = 0`). The outer loop
//! alternates between registering with the current weights and recomputing
//! the weights from the new pose estimate.

use std::f64::consts::{FRAC_PI_2, PI, TAU};
use std::time::Instant;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{transform_delta, Point, PointCloud, PoseError, RigidTransform, SensorFov};
use crate::gmm::reweight_model;
use crate::registration::{BaseRegistrar, RegistrationResult};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PenaltyConstants {
    /// Penalty added for a range violation.
    pub k0: f64,
    /// Weight scale for penalized points, in `(0, 1]`.
    pub k1: f64,
    /// Exponential decay rate of the weight in the penalty.
    pub k2: f64,
    /// Penalize points above the view (small polar angle `phi`) with
    /// `(pi/2 - psi_y/2) - phi` instead of the default
    /// `(pi/2 + psi_y/2) - phi`, which jumps to `psi_y` at the boundary.
    pub corrected_vertical: bool,
}

impl Default for PenaltyConstants {
    fn default() -> Self {
        Self {
            k0: 1.0,
            k1: 1.0,
            k2: 5.0,
            corrected_vertical: false,
        }
    }
}

impl PenaltyConstants {
    pub fn validate(&self) -> Result<()> {
        if !(self.k0 > 0.0 && self.k1 > 0.0 && self.k1 <= 1.0 && self.k2 > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "penalty constants need k0 > 0, k1 in (0, 1], k2 > 0; got ({}, {}, {})",
                self.k0, self.k1, self.k2
            )));
        }
        Ok(())
    }

    /// Weight for an accumulated penalty.
    pub fn weight(&self, xi: f64) -> f64 {
        if xi > 0.0 {
            self.k1 * (-self.k2 * xi).exp()
        } else {
            1.0
        }
    }
}

/// Per-point overlap weights with the penalties that produced them.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct OverlapWeights {
    pub weights: Vec<f64>,
    pub penalties: Vec<f64>,
}

impl OverlapWeights {
    pub fn ones(n: usize) -> Self {
        Self {
            weights: vec![1.0; n],
            penalties: vec![0.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn is_neutral(&self) -> bool {
        self.weights.iter().all(|&w| w == 1.0)
    }

    pub fn stats(&self) -> WeightStats {
        let n = self.weights.len().max(1) as f64;
        WeightStats {
            min: self.weights.iter().copied().fold(f64::INFINITY, f64::min),
            mean: self.weights.iter().sum::<f64>() / n,
            fraction_downweighted: self.weights.iter().filter(|&&w| w < 1.0).count() as f64 / n,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightStats {
    pub min: f64,
    pub mean: f64,
    pub fraction_downweighted: f64,
}

/// Field-of-view penalty of a point `local` already expressed in the
/// sensor frame.
pub fn fov_penalty(local: &Point, fov: &SensorFov, k: &PenaltyConstants) -> f64 {
    let d = local.norm();
    if d == 0.0 {
        return k.k0;
    }
    let mut theta = local[1].atan2(local[0]);
    if theta < 0.0 {
        theta += TAU;
    }
    let phi = (local[2] / d).clamp(-1.0, 1.0).acos();

    let mut xi = 0.0;
    if d < fov.psi_min || d > fov.psi_max {
        xi += k.k0;
    }
    let half_x = fov.psi_x / 2.0;
    if theta > half_x && theta < TAU - half_x {
        xi += (theta - half_x).min(TAU - half_x - theta);
    }
    let half_y = fov.psi_y / 2.0;
    if 2.0 * phi > PI + fov.psi_y {
        xi += phi - (FRAC_PI_2 + half_y);
    }
    if 2.0 * phi < PI - fov.psi_y {
        xi += if k.corrected_vertical {
            (FRAC_PI_2 - half_y) - phi
        } else {
            -phi + (FRAC_PI_2 + half_y)
        };
    }
    xi
}

/// Overlap weights of `cloud` seen by a sensor whose pose in the cloud's
/// frame is `pose`. Each point is mapped to `R^T (z - t)` and penalized
/// against `fov`.
pub fn calc_omega_weights(
    cloud: &PointCloud,
    pose: &RigidTransform,
    fov: &SensorFov,
    k: &PenaltyConstants,
) -> Result<OverlapWeights> {
    fov.validate()?;
    k.validate()?;
    let rt = pose.rotation().transpose();
    let t = *pose.translation();
    let (weights, penalties) = cloud
        .points()
        .par_iter()
        .map(|z| {
            let xi = fov_penalty(&(rt * (z - t)), fov, k);
            (k.weight(xi), xi)
        })
        .unzip();
    Ok(OverlapWeights { weights, penalties })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EoeSchedule {
    pub max_outer_iterations: usize,
    /// Degrees.
    pub delta_rot_threshold: f64,
    /// Meters.
    pub delta_trans_threshold: f64,
    /// Weight the target cloud (or model) as well as the source.
    pub symmetric: bool,
}

impl Default for EoeSchedule {
    fn default() -> Self {
        Self {
            max_outer_iterations: 30,
            delta_rot_threshold: 0.05,
            delta_trans_threshold: 1e-3,
            symmetric: true,
        }
    }
}

impl EoeSchedule {
    pub fn validate(&self) -> Result<()> {
        if self.max_outer_iterations == 0 || !(self.delta_rot_threshold > 0.0 && self.delta_trans_threshold > 0.0) {
            return Err(Error::InvalidParameter("EOE schedule needs positive iteration count and thresholds".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OuterIteration {
    pub iteration: usize,
    pub base_iterations: usize,
    /// Change of the pose estimate relative to the previous outer iteration.
    pub delta: PoseError,
    /// Statistics of the source weights used in this iteration's base run.
    pub source_weights: WeightStats,
    pub target_weights: Option<WeightStats>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EoeResult {
    /// The last base registration run; its transform is the final estimate.
    pub registration: RegistrationResult,
    pub outer_iterations: usize,
    pub converged: bool,
    pub outer_trace: Vec<OuterIteration>,
    /// Weights computed from the final estimate.
    pub source_weights: OverlapWeights,
    pub target_weights: OverlapWeights,
}

/// Wraps `base` in the overlap estimation loop.
///
/// `source` is seen by a sensor with `fov_source`, `target` by one with
/// `fov_target`; the estimated transform maps source coordinates into the
/// target frame, which makes it the source sensor's pose in the target frame.
#[allow(clippy::too_many_arguments)]
pub fn eoe_register(
    source: &PointCloud,
    target: &PointCloud,
    base: &BaseRegistrar,
    fov_source: &SensorFov,
    fov_target: &SensorFov,
    k: &PenaltyConstants,
    schedule: &EoeSchedule,
    init: &RigidTransform,
) -> Result<EoeResult> {
    base.validate()?;
    fov_source.validate()?;
    fov_target.validate()?;
    k.validate()?;
    schedule.validate()?;

    let model = base.prepare(target)?;
    let mut source_w = OverlapWeights::ones(source.len());
    let mut target_w = OverlapWeights::ones(target.len());
    let mut estimate = *init;
    let mut last: Option<RegistrationResult> = None;
    let mut outer_trace = Vec::new();
    let mut converged = false;

    for iteration in 1..=schedule.max_outer_iterations {
        let src_arg = (!source_w.is_neutral()).then_some(&source_w);
        let tgt_arg = (schedule.symmetric && !target_w.is_neutral()).then_some(&target_w);
        let reweighted = match (&model, tgt_arg) {
            (Some(m), Some(_)) => Some(
                reweight_model(m, fov_source, &estimate, k)
                    .map_err(|e| wrap(iteration, e))?,
            ),
            _ => None,
        };
        let run = base.register_weighted(
            source,
            target,
            reweighted.as_ref().or(model.as_ref()),
            src_arg,
            tgt_arg,
            &estimate,
        );
        let run = match run {
            Ok(r) => r,
            Err(Error::NoOverlapSupport | Error::NoModelSupport) if last.is_some() => break,
            Err(e) => return Err(wrap(iteration, e)),
        };

        let next_source = calc_omega_weights(source, &run.transform.inverse(), fov_target, k)?;
        let next_target = if schedule.symmetric {
            calc_omega_weights(target, &run.transform, fov_source, k)?
        } else {
            OverlapWeights::ones(target.len())
        };

        let delta = transform_delta(&estimate, &run.transform);
        outer_trace.push(OuterIteration {
            iteration,
            base_iterations: run.iterations,
            delta,
            source_weights: source_w.stats(),
            target_weights: schedule.symmetric.then(|| target_w.stats()),
        });

        // The weights reached a fixed point: the next run would see the same
        // overlap estimate.
        let fixed_point = next_source.weights == source_w.weights && next_target.weights == target_w.weights;
        let small_step = iteration > 1
            && delta.rotation_error < schedule.delta_rot_threshold
            && delta.translation_error < schedule.delta_trans_threshold;

        estimate = run.transform;
        last = Some(run);
        source_w = next_source;
        target_w = next_target;
        if fixed_point || small_step {
            converged = true;
            break;
        }
    }

    let registration = last.expect("at least one outer iteration ran");
    Ok(EoeResult {
        registration,
        outer_iterations: outer_trace.len(),
        converged,
        outer_trace,
        source_weights: source_w,
        target_weights: target_w,
    })
}

fn wrap(iteration: usize, e: Error) -> Error {
    Error::OuterIteration {
        iteration,
        source: Box::new(e),
    }
}

/// Median wall time (milliseconds) of [`calc_omega_weights`] on `n` random
/// points, for each `n` in `sizes`, over `trials` runs.
pub fn weight_timing_probe(sizes: &[usize], trials: usize, seed: u64) -> Result<Vec<(usize, f64)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let fov = SensorFov::from_degrees(0.5, 80.0, 90.0, 30.0)?;
    let k = PenaltyConstants::default();
    sizes
        .iter()
        .map(|&n| {
            if n == 0 {
                return Err(Error::InvalidParameter("probe size must be >= 1".into()));
            }
            let cloud = PointCloud::new(
                (0..n)
                    .map(|_| Vector3::new(rng.random_range(-50.0..50.0), rng.random_range(-50.0..50.0), rng.random_range(-5.0..5.0)))
                    .collect(),
            )?;
            let pose = RigidTransform::from_euler_zyx(rng.random_range(-PI..PI), 0.0, 0.0, Vector3::new(rng.random_range(-5.0..5.0), 0.0, 0.0));
            let mut times: Vec<f64> = (0..trials.max(1))
                .map(|_| {
                    let start = Instant::now();
                    let w = calc_omega_weights(&cloud, &pose, &fov, &k).expect("valid probe inputs");
                    std::hint::black_box(&w);
                    start.elapsed().as_secs_f64() * 1e3
                })
                .collect();
            times.sort_by(f64::total_cmp);
            Ok((n, times[times.len() / 2]))
        })
        .collect()
}

/// Least-squares line `y = slope x + intercept` with its R^2.
pub fn linear_fit(samples: &[(f64, f64)]) -> (f64, f64, f64) {
    let n = samples.len() as f64;
    let mx = samples.iter().map(|s| s.0).sum::<f64>() / n;
    let my = samples.iter().map(|s| s.1).sum::<f64>() / n;
    let sxx: f64 = samples.iter().map(|s| (s.0 - mx).powi(2)).sum();
    let sxy: f64 = samples.iter().map(|s| (s.0 - mx) * (s.1 - my)).sum();
    let syy: f64 = samples.iter().map(|s| (s.1 - my).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    (slope, intercept, r2)
}
