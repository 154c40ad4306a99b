//! Fundamental-matrix estimation and its uncertainty machinery: the
//! normalized 8-point solver, motion recovery by essential-matrix
//! decomposition with cheirality voting, first-order covariance propagation
//! from pixel noise to the model and the motion, and Sampson residuals with
//! covariance.

mod covariance;
mod decompose;
mod eight_point;
mod sampson;

pub use covariance::{cov_f_overdetermined, cov_p, householder_basis, theta_partials};
pub use decompose::{decompose_to_motion, decompose_to_motion_lenient, DecompositionCandidates};
pub use eight_point::{estimate_f_8point, normalization_transforms, NormalizationTransform};
pub use sampson::{
    fundamental_jacobian_motion, sampson_correction, sampson_model_jacobian,
    sampson_point_jacobian, sampson_residual, scalar_sampson_distance_squared, MotionContext,
};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FmatrixError {
    #[error("the 8-point solver needs exactly 8 correspondences, got {0}")]
    WrongSampleCount(usize),
    #[error("degenerate minimal sample (design-matrix singular value ratio {0:e})")]
    DegenerateSample(f64),
    #[error("ill-conditioned sample geometry: covariance normal matrix not invertible")]
    IllConditionedSample,
    #[error("cheirality vote tie between decomposition candidates")]
    CheiralityTie,
    #[error("no decomposition candidate received any cheirality vote")]
    NoCheiralityVotes,
    #[error(
        "motion Jacobian rank-deficient beyond the two gauge directions (sv ratio {0:e})"
    )]
    RankDeficientMotionJacobian(f64),
    #[error("point at both epipoles: Sampson correction undefined (|J_e|^2 = {0:e})")]
    EpipoleDegenerate(f64),
}
