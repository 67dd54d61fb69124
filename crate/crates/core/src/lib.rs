//! Rigid point cloud registration with expected overlap estimation.
//!
//! A sensor only sees what lies inside its field of view. When two scans
//! overlap partially, points outside the other sensor's view have no true
//! counterpart and pull a registration off. This crate estimates, per point,
//! how likely it is to lie in the shared view under the current pose
//! estimate, and feeds those weights into ICP variants or GMM registration
//! in an outer loop until the weights and pose settle.
//!
//! ```
//! use overlap_reg::{eoe_register, synthetic_bunny, BaseRegistrar, EoeSchedule, IcpParams,
//!     PenaltyConstants, RigidTransform, SensorFov};
//! use nalgebra::Vector3;
//!
//! let target = synthetic_bunny(2000, 7);
//! let truth = RigidTransform::from_euler_zyx(0.05, 0.0, 0.0, Vector3::new(0.02, 0.0, 0.0));
//! let source = truth.inverse().apply(&target);
//! let fov = SensorFov::full_sphere();
//! let result = eoe_register(
//!     &source,
//!     &target,
//!     &BaseRegistrar::Icp(IcpParams::default()),
//!     &fov,
//!     &fov,
//!     &PenaltyConstants::default(),
//!     &EoeSchedule::default(),
//!     &RigidTransform::identity(),
//! )
//! .unwrap();
//! assert!(result.registration.final_rmsd < 1e-3);
//! ```

// `!(x > 0.0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod align;
pub mod eoe;
pub mod error;
pub mod geometry;
pub mod gmm;
pub mod icp;
pub mod io;
pub mod kdtree;
pub mod registration;
pub mod sim;

pub use align::{horn_from_pairs, weighted_horn, Correspondence, CorrespondenceSet};
pub use eoe::{
    calc_omega_weights, eoe_register, fov_penalty, linear_fit, weight_timing_probe, EoeResult, EoeSchedule,
    OuterIteration, OverlapWeights, PenaltyConstants, WeightStats,
};
pub use error::{Error, Location, Result};
pub use geometry::{pose_error_euler, transform_delta, Point, PointCloud, PoseError, RigidTransform, SensorFov};
pub use gmm::{fit_gmm, reweight_model, responsibilities, GaussianMixture, GmmParams, Responsibilities};
pub use icp::{register_icp, IcpParams, IcpVariant, RobustKernel};
pub use kdtree::NnIndex;
pub use registration::{BaseRegistrar, IterationRecord, RegistrationResult};
pub use sim::{
    look_at_pose, make_sequence, overlap_fraction, simulate_view, synthetic_bunny, OrbitPreset, Sequence,
    SimulatedView, ViewSpec,
};

/// Keeps the guide's snippets compiling and passing.
#[cfg(doctest)]
mod guide {
    #[doc = include_str!("../../../book/src/introduction.md")]
    struct Introduction;
    #[doc = include_str!("../../../book/src/geometry.md")]
    struct Geometry;
    #[doc = include_str!("../../../book/src/overlap-weights.md")]
    struct OverlapWeights;
    #[doc = include_str!("../../../book/src/registration.md")]
    struct Registration;
    #[doc = include_str!("../../../book/src/overlap-loop.md")]
    struct OverlapLoop;
    #[doc = include_str!("../../../book/src/simulation.md")]
    struct Simulation;
    #[doc = include_str!("../../../book/src/datasets.md")]
    struct Datasets;
    #[doc = include_str!("../../../book/src/cli.md")]
    struct Cli;
    #[doc = include_str!("../../../book/src/results-schema.md")]
    struct ResultsSchema;
}
