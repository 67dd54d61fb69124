//! ICP-family registrars: plain, trimmed, fractional and IRLS.
//!
//! Every variant accepts optional external per-point weights. A source point
//! whose weight falls below [`SKIP_WEIGHT`] is never matched. Target weights
//! gate the nearest-neighbor index the same way and scale the pair weight.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::align::{horn_from_pairs, Correspondence, CorrespondenceSet};
use crate::eoe::OverlapWeights;
use crate::error::{Error, Result};
use crate::geometry::{transform_delta, PointCloud, RigidTransform};
use crate::kdtree::NnIndex;
use crate::registration::{IterationRecord, RegistrationResult};

/// External weights below this are treated as zero.
pub const SKIP_WEIGHT: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RobustKernel {
    Welsch,
    Cauchy,
    Huber,
}

impl RobustKernel {
    /// Influence weight at residual `r` for the given `scale`.
    pub fn weight(self, r: f64, scale: f64) -> f64 {
        match self {
            RobustKernel::Welsch => (-(r * r) / (scale * scale)).exp(),
            RobustKernel::Cauchy => 1.0 / (1.0 + r * r / (scale * scale)),
            RobustKernel::Huber => {
                if r <= scale {
                    1.0
                } else {
                    scale / r
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum IcpVariant {
    Plain,
    Trimmed {
        keep_fraction: f64,
    },
    Fractional {
        lambda: f64,
    },
    /// `scale: None` means three times the median residual of the first
    /// matching step.
    Irls {
        kernel: RobustKernel,
        #[serde(default)]
        scale: Option<f64>,
    },
}

impl IcpVariant {
    pub fn trimmed() -> Self {
        IcpVariant::Trimmed { keep_fraction: 0.85 }
    }

    pub fn fractional() -> Self {
        IcpVariant::Fractional { lambda: 3.0 }
    }

    pub fn irls() -> Self {
        IcpVariant::Irls {
            kernel: RobustKernel::Welsch,
            scale: None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            IcpVariant::Plain => "icp",
            IcpVariant::Trimmed { .. } => "tricp",
            IcpVariant::Fractional { .. } => "ficp",
            IcpVariant::Irls { .. } => "irls_icp",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IcpParams {
    pub max_iterations: usize,
    /// Degrees.
    pub convergence_rot: f64,
    /// Meters.
    pub convergence_trans: f64,
    /// `None` is unbounded.
    pub max_match_distance: Option<f64>,
    pub variant: IcpVariant,
}

impl Default for IcpParams {
    fn default() -> Self {
        Self {
            max_iterations: 50,
            convergence_rot: 0.01,
            convergence_trans: 1e-4,
            max_match_distance: None,
            variant: IcpVariant::Plain,
        }
    }
}

impl IcpParams {
    pub fn with_variant(variant: IcpVariant) -> Self {
        Self {
            variant,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        if self.max_iterations == 0 {
            return bad("max_iterations must be positive".into());
        }
        if !(self.convergence_rot > 0.0 && self.convergence_trans > 0.0) {
            return bad("convergence thresholds must be positive".into());
        }
        if let Some(d) = self.max_match_distance {
            if !(d > 0.0) {
                return bad(format!("max_match_distance must be positive, got {d}"));
            }
        }
        match self.variant {
            IcpVariant::Trimmed { keep_fraction: f } if !(f > 0.0 && f <= 1.0) => {
                bad(format!("keep_fraction must be in (0, 1], got {f}"))
            }
            IcpVariant::Fractional { lambda } if !(lambda >= 0.0) => bad(format!("lambda must be >= 0, got {lambda}")),
            IcpVariant::Irls { scale: Some(s), .. } if !(s > 0.0) => bad(format!("IRLS scale must be positive, got {s}")),
            _ => Ok(()),
        }
    }
}

/// Keeps the `ceil(f N)` pairs with the smallest squared distance. Ties at
/// the cut go to the lower source index. Output is ordered by distance.
pub fn trim_pairs(corr: &CorrespondenceSet, keep_fraction: f64) -> CorrespondenceSet {
    if corr.is_empty() {
        return CorrespondenceSet::default();
    }
    let keep = ((keep_fraction * corr.len() as f64).ceil() as usize).clamp(1, corr.len());
    let mut pairs = corr.pairs().to_vec();
    sort_by_distance(&mut pairs);
    pairs.truncate(keep);
    CorrespondenceSet::from_valid(pairs)
}

fn sort_by_distance(pairs: &mut [Correspondence]) {
    pairs.sort_by(|a, b| a.sq_dist.total_cmp(&b.sq_dist).then(a.source.cmp(&b.source)));
}

/// Fractional-RMSD selection: evaluates `RMSD(k) / f^lambda` for every
/// prefix `k = 3..=N` of the distance-sorted pairs (`f = k / N`) and keeps
/// the minimizing prefix. Returns the prefix and its fraction.
pub fn ficp_select(corr: &CorrespondenceSet, lambda: f64) -> Result<(CorrespondenceSet, f64)> {
    let n = corr.len();
    if n < 3 {
        return Err(Error::DegenerateCorrespondences { effective: n });
    }
    let mut pairs = corr.pairs().to_vec();
    sort_by_distance(&mut pairs);

    let mut best: Option<(usize, f64)> = None;
    let mut sum_w = 0.0;
    let mut sum_wd = 0.0;
    for (k, p) in pairs.iter().enumerate() {
        sum_w += p.weight;
        sum_wd += p.weight * p.sq_dist;
        let count = k + 1;
        if count < 3 || sum_w <= 0.0 {
            continue;
        }
        let score = frmsd(sum_wd / sum_w, count, n, lambda);
        // `<=` prefers the larger fraction among equal scores.
        if best.is_none_or(|(_, s)| score <= s) {
            best = Some((count, score));
        }
    }
    let (count, score) = best.ok_or(Error::NoOverlapSupport)?;
    debug_assert!(self_consistent(&pairs, n, lambda, score));
    pairs.truncate(count);
    Ok((CorrespondenceSet::from_valid(pairs), count as f64 / n as f64))
}

fn frmsd(mean_sq: f64, count: usize, n: usize, lambda: f64) -> f64 {
    let f = count as f64 / n as f64;
    mean_sq.sqrt() / f.powf(lambda)
}

fn self_consistent(sorted: &[Correspondence], n: usize, lambda: f64, chosen: f64) -> bool {
    (3..=n).all(|k| {
        let prefix = &sorted[..k];
        let w: f64 = prefix.iter().map(|p| p.weight).sum();
        if w <= 0.0 {
            return true;
        }
        let wd: f64 = prefix.iter().map(|p| p.weight * p.sq_dist).sum();
        chosen <= frmsd(wd / w, k, n, lambda) * (1.0 + 1e-12)
    })
}

/// Multiplies each pair weight by the kernel influence at residual
/// `r = sqrt(sq_dist)`.
pub fn irls_weights(corr: &CorrespondenceSet, kernel: RobustKernel, scale: f64) -> CorrespondenceSet {
    CorrespondenceSet::from_valid(
        corr.pairs()
            .iter()
            .map(|p| Correspondence {
                weight: p.weight * kernel.weight(p.sq_dist.sqrt(), scale),
                ..*p
            })
            .collect(),
    )
}

/// Registers `source` onto `target`, starting from `init`.
pub fn register_icp(
    source: &PointCloud,
    target: &PointCloud,
    params: &IcpParams,
    ext_weights: Option<&OverlapWeights>,
    init: &RigidTransform,
) -> Result<RegistrationResult> {
    register_icp_gated(source, target, params, ext_weights, None, init)
}

/// [`register_icp`] with additional target-side weights.
pub fn register_icp_gated(
    source: &PointCloud,
    target: &PointCloud,
    params: &IcpParams,
    source_weights: Option<&OverlapWeights>,
    target_weights: Option<&OverlapWeights>,
    init: &RigidTransform,
) -> Result<RegistrationResult> {
    params.validate()?;
    for (cloud, weights) in [(source, source_weights), (target, target_weights)] {
        if cloud.len() < 3 {
            return Err(Error::TooFewPoints { have: cloud.len(), need: 3 });
        }
        if let Some(w) = weights {
            if w.len() != cloud.len() {
                return Err(Error::InvalidParameter(format!(
                    "weight count {} does not match cloud size {}",
                    w.len(),
                    cloud.len()
                )));
            }
        }
    }
    let weight_of = |weights: Option<&OverlapWeights>, i: usize| weights.map_or(1.0, |w| w.weights[i]);

    let active_targets: Vec<usize> = (0..target.len())
        .filter(|&j| weight_of(target_weights, j) >= SKIP_WEIGHT)
        .collect();
    let active_sources: Vec<usize> = (0..source.len())
        .filter(|&i| weight_of(source_weights, i) >= SKIP_WEIGHT)
        .collect();
    if active_targets.is_empty() || active_sources.is_empty() {
        return Err(Error::NoOverlapSupport);
    }
    let index = NnIndex::build_subset(target, &active_targets)?;
    let max_sq = params.max_match_distance.map_or(f64::INFINITY, |d| d * d);

    let mut transform = *init;
    let mut trace = Vec::with_capacity(params.max_iterations);
    let mut converged = false;
    let mut irls_scale = None;

    for _ in 0..params.max_iterations {
        let moved: Vec<_> = active_sources
            .par_iter()
            .map(|&i| transform.apply_point(&source.points()[i]))
            .collect();
        let matches: Vec<Correspondence> = active_sources
            .par_iter()
            .zip(moved.par_iter())
            .filter_map(|(&i, p)| {
                let (j, sq_dist) = index.nearest_squared(p);
                (sq_dist <= max_sq).then(|| Correspondence {
                    source: i,
                    target: j,
                    weight: weight_of(source_weights, i) * weight_of(target_weights, j),
                    sq_dist,
                })
            })
            .collect();
        let corr = CorrespondenceSet::from_valid(matches);

        let corr = match params.variant {
            IcpVariant::Plain => corr,
            IcpVariant::Trimmed { keep_fraction } => trim_pairs(&corr, keep_fraction),
            IcpVariant::Fractional { lambda } => ficp_select(&corr, lambda)?.0,
            IcpVariant::Irls { kernel, scale } => {
                let s = *irls_scale.get_or_insert_with(|| scale.unwrap_or_else(|| auto_scale(&corr)));
                irls_weights(&corr, kernel, s)
            }
        };
        let effective = corr.effective_len();
        if effective == 0 {
            return Err(Error::NoOverlapSupport);
        }

        let triples: Vec<_> = corr
            .pairs()
            .iter()
            .map(|p| (transform.apply_point(&source.points()[p.source]), target.points()[p.target], p.weight))
            .collect();
        let step = horn_from_pairs(&triples)?;
        transform = step.compose(&transform);

        let (wd, w) = triples.iter().fold((0.0, 0.0), |(wd, w), (s, d, wt)| {
            (wd + wt * (step.apply_point(s) - d).norm_squared(), w + wt)
        });
        trace.push(IterationRecord {
            transform,
            objective: wd / w,
            effective_pairs: effective,
        });

        let delta = transform_delta(&step, &RigidTransform::identity());
        if delta.rotation_error < params.convergence_rot && delta.translation_error < params.convergence_trans {
            converged = true;
            break;
        }
    }

    let final_rmsd = trace.last().map_or(f64::NAN, |r| r.objective.sqrt());
    Ok(RegistrationResult {
        transform,
        iterations: trace.len(),
        converged,
        final_rmsd,
        trace,
    })
}

fn auto_scale(corr: &CorrespondenceSet) -> f64 {
    let mut d: Vec<f64> = corr.pairs().iter().map(|p| p.sq_dist.sqrt()).collect();
    if d.is_empty() {
        return 1.0;
    }
    let mid = d.len() / 2;
    let (_, median, _) = d.select_nth_unstable_by(mid, f64::total_cmp);
    (3.0 * *median).max(1e-9)
}
