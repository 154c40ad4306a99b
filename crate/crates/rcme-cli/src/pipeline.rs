//! End-to-end single-pair pipeline: run the configured consensus engine,
//! refine the selected model by bundle adjustment, and apply the
//! support-consistency failure metric.

use rcme::engine::{self, DetectFailReason, EngineConfig, EstimationOutcome};
use rcme::refine::{self, LmConfig};
use rcme::types::{CameraMotion, Correspondence, Intrinsics, NoiseModel};

#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub engine: EngineConfig<f64>,
    /// Failure-metric ratio threshold.
    pub kappa: f64,
    pub lm: LmConfig<f64>,
}

impl PipelineConfig {
    pub fn new(engine: EngineConfig<f64>) -> Self {
        Self {
            engine,
            kappa: 0.5,
            lm: LmConfig::default(),
        }
    }
}

#[derive(Debug, Clone)]
#[allow(clippy::large_enum_variant)]
pub enum PipelineOutcome {
    DetectFail {
        reason: DetectFailReason,
    },
    Success {
        /// Refined (post-MLE) motion.
        motion: CameraMotion<f64>,
        /// Engine output before refinement.
        pre_motion: CameraMotion<f64>,
        inlier_indices: Vec<usize>,
        candidate_count: usize,
        /// Inliers consistent with the pre-refinement motion.
        n_before: usize,
        /// Inliers consistent with the refined motion.
        n_after: usize,
        /// Support-consistency verdict (the failure metric).
        metric_failed: bool,
    },
}

impl PipelineOutcome {
    pub fn is_detect_fail(&self) -> bool {
        matches!(self, PipelineOutcome::DetectFail { .. })
    }
}

/// Runs engine, refinement, and metric on one correspondence set.
pub fn estimate_motion(
    correspondences: &[Correspondence<f64>],
    intrinsics: &Intrinsics<f64>,
    noise: &NoiseModel<f64>,
    config: &PipelineConfig,
) -> anyhow::Result<PipelineOutcome> {
    let result = engine::run(correspondences, intrinsics, noise, &config.engine)?;
    let EstimationOutcome::Success {
        motion: pre_motion,
        inlier_indices,
        candidate_count,
    } = result.outcome
    else {
        let EstimationOutcome::DetectFail { reason } = result.outcome else {
            unreachable!()
        };
        return Ok(PipelineOutcome::DetectFail { reason });
    };

    let inliers: Vec<Correspondence<f64>> =
        inlier_indices.iter().map(|&i| correspondences[i]).collect();
    let alpha = config.engine.alpha;
    match refine::refine_and_score(
        &pre_motion,
        &inliers,
        intrinsics,
        noise,
        alpha,
        config.kappa,
        &config.lm,
    ) {
        Ok(refined) => Ok(PipelineOutcome::Success {
            motion: refined.motion,
            pre_motion,
            inlier_indices,
            candidate_count,
            n_before: refined.n_before,
            n_after: refined.n_after,
            metric_failed: refined.failed,
        }),
        // a selected model whose support cannot even be triangulated is a
        // failed recovery, not an error
        Err(refine::RefineError::TooFewInliers(_)) => {
            let metric = refine::failure_metric(
                &pre_motion,
                &pre_motion,
                &inliers,
                intrinsics,
                noise,
                alpha,
                config.kappa,
            );
            Ok(PipelineOutcome::Success {
                motion: pre_motion.clone(),
                pre_motion,
                inlier_indices,
                candidate_count,
                n_before: metric.n_before,
                n_after: 0,
                metric_failed: true,
            })
        }
        Err(e) => Err(e.into()),
    }
}
