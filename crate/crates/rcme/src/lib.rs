//! Robust two-view camera motion estimation.
//!
//! Given putative point correspondences between two calibrated views, the
//! estimators in this crate recover the relative camera motion (unit
//! quaternion + unit-baseline translation) while rejecting outlier matches.
//! Three sampling-consensus variants share one iteration skeleton:
//!
//! * `Standard` — the classic fixed-threshold RANSAC baseline,
//! * `Prcme` — adds covariance propagation, an uncertainty-aware inlier
//!   test, and a differential-entropy model quality test,
//! * `Rcme` — additionally verifies each hypothesis against its own minimal
//!   sample before scoring (and can therefore report an explicit
//!   detect-fail instead of an unreliable solution).
//!
//! All numerical code is generic over the scalar type through
//! [`scalar::Scalar`]; `f64` aliases are exported at the crate root.

pub mod engine;
pub mod fmatrix;
pub mod io;
pub mod refine;
pub mod scalar;
pub mod stats;
pub mod synth;
pub mod types;

pub use scalar::Scalar;
pub use engine::{EngineConfig, EstimationOutcome, Variant};
pub use types::{
    CameraMotion, Correspondence, FundamentalModel, Intrinsics, NoiseModel, SampsonResidual,
};

/// `f64` instantiations of the core types.
pub type Intrinsics64 = types::Intrinsics<f64>;
pub type Correspondence64 = types::Correspondence<f64>;
pub type NoiseModel64 = types::NoiseModel<f64>;
pub type FundamentalModel64 = types::FundamentalModel<f64>;
pub type CameraMotion64 = types::CameraMotion<f64>;
pub type SampsonResidual64 = types::SampsonResidual<f64>;
pub type EngineConfig64 = engine::EngineConfig<f64>;
pub type SceneConfig64 = synth::SceneConfig<f64>;
