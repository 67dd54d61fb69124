//! Shared result types and the handle used to drive any base registrar.

use serde::{Deserialize, Serialize};

use crate::eoe::OverlapWeights;
use crate::error::Result;
use crate::geometry::{PointCloud, RigidTransform};
use crate::gmm::{self, GaussianMixture, GmmParams};
use crate::icp::{self, IcpParams};

#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub transform: RigidTransform,
    pub objective: f64,
    pub effective_pairs: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegistrationResult {
    /// Maps source coordinates into the target frame.
    pub transform: RigidTransform,
    pub iterations: usize,
    pub converged: bool,
    pub final_rmsd: f64,
    pub trace: Vec<IterationRecord>,
}

/// A base registration algorithm that accepts external per-point weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum BaseRegistrar {
    Icp(IcpParams),
    Gmm(GmmParams),
}

impl BaseRegistrar {
    pub fn validate(&self) -> Result<()> {
        match self {
            BaseRegistrar::Icp(p) => p.validate(),
            BaseRegistrar::Gmm(p) => p.validate(),
        }
    }

    /// Short display name, e.g. `icp`, `tricp`, `gmm`.
    pub fn name(&self) -> &'static str {
        match self {
            BaseRegistrar::Icp(p) => p.variant.name(),
            BaseRegistrar::Gmm(_) => "gmm",
        }
    }

    /// Fits the target model when the registrar needs one.
    pub fn prepare(&self, target: &PointCloud) -> Result<Option<GaussianMixture>> {
        match self {
            BaseRegistrar::Icp(_) => Ok(None),
            BaseRegistrar::Gmm(p) => {
                let k = p.components.unwrap_or_else(|| gmm::default_components(target.len()));
                let model = gmm::fit_gmm(target, k.min(target.len()), p.seed)?;
                Ok(Some(model.with_outlier_weight(p.outlier_weight)?))
            }
        }
    }

    /// Runs the registrar once without external weights.
    pub fn register(&self, source: &PointCloud, target: &PointCloud, init: &RigidTransform) -> Result<RegistrationResult> {
        let model = self.prepare(target)?;
        self.register_weighted(source, target, model.as_ref(), None, None, init)
    }

    /// One registration run. `target_weights` gate target points for ICP;
    /// GMM callers pass an already reweighted `model` instead.
    pub fn register_weighted(
        &self,
        source: &PointCloud,
        target: &PointCloud,
        model: Option<&GaussianMixture>,
        source_weights: Option<&OverlapWeights>,
        target_weights: Option<&OverlapWeights>,
        init: &RigidTransform,
    ) -> Result<RegistrationResult> {
        match self {
            BaseRegistrar::Icp(p) => icp::register_icp_gated(source, target, p, source_weights, target_weights, init),
            BaseRegistrar::Gmm(p) => {
                let model = match model {
                    Some(m) => m.clone(),
                    None => self.prepare(target)?.expect("gmm model"),
                };
                gmm::register_gmm(&model, source, source_weights, init, p)
            }
        }
    }
}
