//! The sampling-consensus estimators. Three variants share one iteration
//! skeleton:
//!
//! * [`Variant::Standard`] — fixed-threshold RANSAC over the scalar Sampson
//!   distance, best model by inlier count; always outputs its best model.
//! * [`Variant::Prcme`] — propagates the model covariance into every
//!   residual, finds inliers by a 3-DoF Mahalanobis test, scores them by
//!   differential entropy, and admits a model to the candidate set only if
//!   the inlier set passes the Z quality test and a size condition.
//! * [`Variant::Rcme`] — additionally requires each hypothesis to be
//!   consistent with its own minimal sample before it may enter the
//!   candidate set.
//!
//! The covariance-aware variants return an explicit detect-fail when the
//! candidate set stays empty, instead of an unreliable best-effort motion.
//!
//! Detect-fail is the designed response to poor input, and it dominates
//! outcomes sooner than one might expect: hypotheses come from minimal
//! 8-point samples, so at an outlier ratio `w` only about `N (1-w)^8`
//! iterations draw an all-inlier sample (≈3 of 200 at 40% outliers), and
//! the consistence and quality gates reject a further large share of those
//! because first-order covariances understate the dispersion of
//! minimal-sample estimates (the rotation/translation-confounding
//! direction of the decomposed motion is several times wider in practice
//! than its linearized prediction). Workloads with generous inlier ratios
//! (the keyframe-selection regime) keep the candidate set populated;
//! heavily contaminated ones trade coverage for the guarantee that an
//! output, when produced, survived every test.

use nalgebra::{Matrix3, SVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::fmatrix::{
    cov_f_overdetermined, cov_p, decompose_to_motion, decompose_to_motion_lenient,
    estimate_f_8point, FmatrixError, MotionContext,
};
use crate::scalar::{cast, Scalar};
use crate::stats::{gaussian_diff_entropy, mean_and_std, SignificanceConfig};
use crate::types::{
    vector_to_matrix, CameraMotion, Correspondence, Intrinsics, MotionCovariance, NoiseModel,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EngineError {
    #[error("invalid engine config: {0}")]
    InvalidConfig(&'static str),
    #[error("statistics setup failed: {0}")]
    Stats(#[from] crate::stats::StatsError),
}

/// Which estimator to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    Standard,
    Prcme,
    Rcme,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Standard => "standard",
            Variant::Prcme => "prcme",
            Variant::Rcme => "rcme",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "standard" => Ok(Variant::Standard),
            "prcme" => Ok(Variant::Prcme),
            "rcme" => Ok(Variant::Rcme),
            other => Err(format!("unknown variant '{other}' (expected standard|prcme|rcme)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EngineConfig<T: Scalar> {
    pub variant: Variant,
    /// Maximum iteration count N; every iteration runs unless early
    /// termination triggers.
    pub max_iters: usize,
    pub alpha: T,
    /// Entropy threshold of the inlier quality test, in nats.
    pub mu: T,
    /// Conservative coefficient of the size condition, in [0.5, 1].
    pub lambda: T,
    /// Prior inlier ratio seeding the running estimate.
    pub omega_prior: T,
    /// Early termination: stop as soon as an accepted candidate's mean
    /// entropy drops below this value. Disabled by default.
    pub early_term_entropy: Option<T>,
    pub rng_seed: u64,
    /// Replaces the `Phi^-1(1 - alpha)` comparison threshold of the Z test
    /// (e.g. with `-Phi^-1(1 - alpha)` for the conventional one-sided
    /// form).
    pub z_thresh_override: Option<T>,
}

impl<T: Scalar> EngineConfig<T> {
    pub fn new(variant: Variant) -> Self {
        Self {
            variant,
            max_iters: 200,
            alpha: cast(0.05),
            mu: cast(-3.53),
            lambda: cast(0.7),
            omega_prior: cast(0.5),
            early_term_entropy: None,
            rng_seed: 0,
            z_thresh_override: None,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.rng_seed = seed;
        self
    }

    fn validate(&self) -> Result<(), EngineError> {
        if self.max_iters == 0 {
            return Err(EngineError::InvalidConfig("max_iters must be >= 1"));
        }
        if !(self.alpha > T::zero() && self.alpha < T::one()) {
            return Err(EngineError::InvalidConfig("alpha must lie in (0, 1)"));
        }
        if !(self.lambda >= cast(0.5) && self.lambda <= T::one()) {
            return Err(EngineError::InvalidConfig("lambda must lie in [0.5, 1]"));
        }
        if !(self.omega_prior > T::zero() && self.omega_prior <= T::one()) {
            return Err(EngineError::InvalidConfig("omega_prior must lie in (0, 1]"));
        }
        if !self.mu.finite() {
            return Err(EngineError::InvalidConfig("mu must be finite"));
        }
        Ok(())
    }
}

/// A model admitted to the candidate set.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateModel<T: Scalar> {
    pub motion: CameraMotion<T>,
    pub inlier_indices: Vec<usize>,
    /// Differential entropy of each inlier's residual covariance.
    pub scores: Vec<T>,
    /// Signed mean of the scores.
    pub psi: T,
    /// Sample standard deviation of the scores (n-1 denominator).
    pub s: T,
    /// Z statistic of the quality test.
    pub z: T,
    /// Iteration that produced the model.
    pub iteration: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DetectFailReason {
    EmptyCandidateSet,
    TooFewCorrespondences,
}

/// Final outcome of a run.
///
/// `Standard` outputs its best model whenever at least one iteration
/// instantiated one (on non-degenerate input, always), so it reports
/// `DetectFail` only for too few correspondences.
#[derive(Debug, Clone, PartialEq)]
#[allow(clippy::large_enum_variant)]
pub enum EstimationOutcome<T: Scalar> {
    Success {
        motion: CameraMotion<T>,
        inlier_indices: Vec<usize>,
        candidate_count: usize,
    },
    DetectFail {
        reason: DetectFailReason,
    },
}

impl<T: Scalar> EstimationOutcome<T> {
    pub fn is_success(&self) -> bool {
        matches!(self, EstimationOutcome::Success { .. })
    }
}

/// Why an iteration ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IterationOutcome {
    DegenerateSample,
    CheiralityFailure,
    CovarianceFailure,
    ConsistenceFail,
    QualityFailZ,
    QualityFailSize,
    TooFewInliers,
    Accepted,
    /// Standard variant: model instantiated and its support counted.
    Evaluated,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord<T: Scalar> {
    pub iteration: usize,
    pub outcome: IterationOutcome,
    pub n_inliers: Option<usize>,
    pub psi: Option<T>,
    pub z: Option<T>,
    pub consistence_pass: Option<bool>,
    /// Running inlier-ratio estimate after this iteration.
    pub omega: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Diagnostics<T: Scalar> {
    pub records: Vec<IterationRecord<T>>,
    pub candidates: Vec<CandidateModel<T>>,
    pub omega_final: T,
    pub early_terminated: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimationResult<T: Scalar> {
    pub outcome: EstimationOutcome<T>,
    pub diagnostics: Diagnostics<T>,
}

/// Draws 8 distinct indices uniformly without replacement; deterministic
/// for a given RNG state. `None` when fewer than 8 correspondences exist.
pub fn sample_minimal<R: rand::Rng>(n: usize, rng: &mut R) -> Option<Vec<usize>> {
    if n < 8 {
        return None;
    }
    Some(rand::seq::index::sample(rng, n, 8).into_vec())
}

/// The per-iteration RNG: an independent, reproducible stream per
/// `(seed, iteration)` pair, identical across variants so paired
/// comparisons sample the same minimal sets.
pub fn iteration_rng(seed: u64, iteration: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(iteration as u64 + 1);
    rng
}

/// Checks every instantiating sample against the hypothesis: all of them
/// must pass the 3-DoF Mahalanobis test (inclusive threshold). A sample at
/// an epipole fails the test.
pub fn sample_consistence_test<T: Scalar>(
    ctx: &MotionContext<T>,
    samples: &[Correspondence<T>],
    chi2_thresh_3dof: T,
) -> bool {
    samples.iter().all(|c| match ctx.residual(c) {
        Ok(r) => r.mahal <= chi2_thresh_3dof,
        Err(_) => false,
    })
}

/// Classifies every correspondence against the hypothesis and scores the
/// inliers by the differential entropy of their residual covariances.
/// Epipole-degenerate points are excluded; a degenerate covariance
/// determinant scores negative infinity.
pub fn find_and_score_inliers<T: Scalar>(
    ctx: &MotionContext<T>,
    correspondences: &[Correspondence<T>],
    chi2_thresh_3dof: T,
) -> (Vec<usize>, Vec<T>) {
    let mut inliers = Vec::new();
    let mut scores = Vec::new();
    for (i, c) in correspondences.iter().enumerate() {
        let Ok(r) = ctx.residual(c) else { continue };
        if r.mahal <= chi2_thresh_3dof {
            inliers.push(i);
            scores.push(
                gaussian_diff_entropy(&r.cov_delta).unwrap_or_else(|_| T::neg_infinity()),
            );
        }
    }
    (inliers, scores)
}

/// Outcome of the inlier quality test.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QualityOutcome<T: Scalar> {
    pub pass_z: bool,
    pub pass_size: bool,
    pub psi: T,
    pub s: T,
    /// NaN when the score variance is zero or not finite (the documented
    /// convention then compares `psi` against `mu` directly).
    pub z: T,
}

impl<T: Scalar> QualityOutcome<T> {
    pub fn pass(&self) -> bool {
        self.pass_z && self.pass_size
    }
}

/// Tests whether an inlier set is both high-quality (Z test on the mean
/// entropy against `mu`) and large enough (`n_j / n >= lambda * omega_p`,
/// inclusive). Fewer than two scores fail the test outright; zero score
/// variance passes the Z criterion iff `psi <= mu`.
pub fn inlier_quality_test<T: Scalar>(
    scores: &[T],
    n_total: usize,
    omega_p: T,
    config: &EngineConfig<T>,
    z_thresh: T,
) -> QualityOutcome<T> {
    let n_j = scores.len();
    let (psi, s) = mean_and_std(scores);
    let size_ratio = cast::<T>(n_j as f64) / cast::<T>(n_total as f64);
    let pass_size = size_ratio >= config.lambda * omega_p;
    if n_j < 2 {
        return QualityOutcome {
            pass_z: false,
            pass_size,
            psi,
            s,
            z: T::nan(),
        };
    }
    if s > T::zero() && s.finite() && psi.finite() {
        let z = (psi - config.mu) / (s / cast::<T>(n_j as f64).sqrt());
        QualityOutcome {
            pass_z: z <= z_thresh,
            pass_size,
            psi,
            s,
            z,
        }
    } else {
        // degenerate spread: fall back to the direct mean comparison
        QualityOutcome {
            pass_z: psi <= config.mu,
            pass_size,
            psi,
            s,
            z: T::nan(),
        }
    }
}

struct OmegaTracker<T: Scalar> {
    omega: T,
    n_total: T,
}

impl<T: Scalar> OmegaTracker<T> {
    fn new(prior: T, n: usize) -> Self {
        Self {
            omega: prior,
            n_total: cast(n as f64),
        }
    }
    fn update(&mut self, n_inliers: usize) -> T {
        self.omega = self.omega.max(cast::<T>(n_inliers as f64) / self.n_total);
        self.omega
    }
}

/// Runs the configured estimator over the correspondences.
///
/// All `max_iters` iterations execute (failed sub-steps consume their
/// iteration) unless early termination triggers. The returned diagnostics
/// record one entry per iteration plus the admitted candidate set; results
/// are bitwise reproducible for a fixed config.
pub fn run<T: Scalar>(
    correspondences: &[Correspondence<T>],
    intrinsics: &Intrinsics<T>,
    noise: &NoiseModel<T>,
    config: &EngineConfig<T>,
) -> Result<EstimationResult<T>, EngineError> {
    config.validate()?;
    let sig = SignificanceConfig::from_alpha(config.alpha)?;
    let z_thresh = config.z_thresh_override.unwrap_or(sig.z_thresh);
    let n = correspondences.len();

    let empty_diag = |records: Vec<IterationRecord<T>>, omega: T| Diagnostics {
        records,
        candidates: Vec::new(),
        omega_final: omega,
        early_terminated: false,
    };
    if n < 8 {
        return Ok(EstimationResult {
            outcome: EstimationOutcome::DetectFail {
                reason: DetectFailReason::TooFewCorrespondences,
            },
            diagnostics: empty_diag(Vec::new(), config.omega_prior),
        });
    }

    match config.variant {
        Variant::Standard => run_standard(correspondences, intrinsics, noise, config, &sig),
        Variant::Prcme | Variant::Rcme => {
            run_quality_aware(correspondences, intrinsics, noise, config, &sig, z_thresh)
        }
    }
}

fn run_standard<T: Scalar>(
    correspondences: &[Correspondence<T>],
    intrinsics: &Intrinsics<T>,
    noise: &NoiseModel<T>,
    config: &EngineConfig<T>,
    sig: &SignificanceConfig<T>,
) -> Result<EstimationResult<T>, EngineError> {
    let n = correspondences.len();
    let dist_thresh = noise.sigma * noise.sigma * sig.chi2_thresh_1dof;
    let mut omega = OmegaTracker::new(config.omega_prior, n);
    let mut records = Vec::with_capacity(config.max_iters);
    let mut evaluated = 0usize;
    struct Best<T: Scalar> {
        count: usize,
        f: SVector<T, 9>,
        inliers: Vec<usize>,
        sample_indices: Vec<usize>,
    }
    let mut best: Option<Best<T>> = None;

    for j in 0..config.max_iters {
        let mut rng = iteration_rng(config.rng_seed, j);
        let indices = sample_minimal(n, &mut rng).expect("n >= 8 checked by caller");
        let samples: Vec<_> = indices.iter().map(|&i| correspondences[i]).collect();
        let f = match estimate_f_8point(&samples) {
            Ok(f) => f,
            Err(_) => {
                records.push(IterationRecord {
                    iteration: j,
                    outcome: IterationOutcome::DegenerateSample,
                    n_inliers: None,
                    psi: None,
                    z: None,
                    consistence_pass: None,
                    omega: omega.omega,
                });
                continue;
            }
        };
        let fm = vector_to_matrix(&f);
        let inliers = standard_inliers(&fm, correspondences, dist_thresh);
        evaluated += 1;
        let omega_now = omega.update(inliers.len());
        let better = match &best {
            None => true,
            Some(b) => inliers.len() > b.count,
        };
        if better {
            best = Some(Best {
                count: inliers.len(),
                f,
                inliers: inliers.clone(),
                sample_indices: indices,
            });
        }
        records.push(IterationRecord {
            iteration: j,
            outcome: IterationOutcome::Evaluated,
            n_inliers: Some(inliers.len()),
            psi: None,
            z: None,
            consistence_pass: None,
            omega: omega_now,
        });
    }

    let outcome = match best {
        None => EstimationOutcome::DetectFail {
            reason: DetectFailReason::EmptyCandidateSet,
        },
        Some(b) => {
            // cheirality votes over the full inlier set; tie-break
            // deterministically (the baseline always outputs a motion)
            let vote_set: Vec<_> = if b.inliers.is_empty() {
                b.sample_indices.iter().map(|&i| correspondences[i]).collect()
            } else {
                b.inliers.iter().map(|&i| correspondences[i]).collect()
            };
            let (q, t, _) = decompose_to_motion_lenient(&b.f, intrinsics, &vote_set);
            let sample: Vec<_> = b.sample_indices.iter().map(|&i| correspondences[i]).collect();
            let cov = cov_f_overdetermined(&sample, &b.f, noise)
                .ok()
                .and_then(|cov_f| cov_p(&b.f, &cov_f, &q, &t, intrinsics).ok())
                .unwrap_or_else(MotionCovariance::zeros);
            EstimationOutcome::Success {
                motion: CameraMotion { q, t, cov_p: cov },
                inlier_indices: b.inliers,
                candidate_count: evaluated,
            }
        }
    };
    Ok(EstimationResult {
        outcome,
        diagnostics: Diagnostics {
            records,
            candidates: Vec::new(),
            omega_final: omega.omega,
            early_terminated: false,
        },
    })
}

/// Fixed-threshold inlier test of the baseline: squared first-order Sampson
/// distance against `sigma^2 F_1^-1(1 - alpha)`.
fn standard_inliers<T: Scalar>(
    f: &Matrix3<T>,
    correspondences: &[Correspondence<T>],
    dist_thresh: T,
) -> Vec<usize> {
    correspondences
        .iter()
        .enumerate()
        .filter_map(|(i, c)| match sampson_distance_squared(f, c) {
            Ok(d2) if d2 <= dist_thresh => Some(i),
            _ => None,
        })
        .collect()
}

fn sampson_distance_squared<T: Scalar>(
    f: &Matrix3<T>,
    c: &Correspondence<T>,
) -> Result<T, FmatrixError> {
    crate::fmatrix::scalar_sampson_distance_squared(f, c)
}

fn run_quality_aware<T: Scalar>(
    correspondences: &[Correspondence<T>],
    intrinsics: &Intrinsics<T>,
    noise: &NoiseModel<T>,
    config: &EngineConfig<T>,
    sig: &SignificanceConfig<T>,
    z_thresh: T,
) -> Result<EstimationResult<T>, EngineError> {
    let n = correspondences.len();
    let mut omega = OmegaTracker::new(config.omega_prior, n);
    let mut records = Vec::with_capacity(config.max_iters);
    let mut candidates: Vec<CandidateModel<T>> = Vec::new();
    let mut early_terminated = false;

    for j in 0..config.max_iters {
        let mut rng = iteration_rng(config.rng_seed, j);
        let indices = sample_minimal(n, &mut rng).expect("n >= 8 checked by caller");
        let samples: Vec<_> = indices.iter().map(|&i| correspondences[i]).collect();

        let mut record = IterationRecord {
            iteration: j,
            outcome: IterationOutcome::DegenerateSample,
            n_inliers: None,
            psi: None,
            z: None,
            consistence_pass: None,
            omega: omega.omega,
        };

        let step = (|| -> Result<(CameraMotion<T>, MotionContext<T>), IterationOutcome> {
            let f = estimate_f_8point(&samples).map_err(|_| IterationOutcome::DegenerateSample)?;
            let (q, t, _) = decompose_to_motion(&f, intrinsics, &samples)
                .map_err(|_| IterationOutcome::CheiralityFailure)?;
            let cov_f = cov_f_overdetermined(&samples, &f, noise)
                .map_err(|_| IterationOutcome::CovarianceFailure)?;
            let cov = cov_p(&f, &cov_f, &q, &t, intrinsics)
                .map_err(|_| IterationOutcome::CovarianceFailure)?;
            let ctx = MotionContext::new(&q, &t, &cov, intrinsics, noise);
            Ok((CameraMotion { q, t, cov_p: cov }, ctx))
        })();

        let (motion, ctx) = match step {
            Ok(pair) => pair,
            Err(outcome) => {
                record.outcome = outcome;
                records.push(record);
                continue;
            }
        };

        // consistence gate (RCME only); the inlier count still feeds the
        // running ratio below so paired variants see identical omega
        let consistence = match config.variant {
            Variant::Rcme => {
                let pass = sample_consistence_test(&ctx, &samples, sig.chi2_thresh_3dof);
                record.consistence_pass = Some(pass);
                pass
            }
            _ => true,
        };

        let (inliers, scores) = find_and_score_inliers(&ctx, correspondences, sig.chi2_thresh_3dof);
        let n_j = inliers.len();
        record.n_inliers = Some(n_j);
        record.omega = omega.update(n_j);

        let quality = inlier_quality_test(&scores, n, omega.omega, config, z_thresh);
        record.psi = Some(quality.psi);
        record.z = Some(quality.z);

        if !consistence {
            record.outcome = IterationOutcome::ConsistenceFail;
            records.push(record);
            continue;
        }
        if n_j < 2 {
            record.outcome = IterationOutcome::TooFewInliers;
            records.push(record);
            continue;
        }
        if !quality.pass_z {
            record.outcome = IterationOutcome::QualityFailZ;
            records.push(record);
            continue;
        }
        if !quality.pass_size {
            record.outcome = IterationOutcome::QualityFailSize;
            records.push(record);
            continue;
        }

        record.outcome = IterationOutcome::Accepted;
        let psi = quality.psi;
        candidates.push(CandidateModel {
            motion,
            inlier_indices: inliers,
            scores,
            psi,
            s: quality.s,
            z: quality.z,
            iteration: j,
        });
        records.push(record);

        if let Some(thresh) = config.early_term_entropy {
            if psi < thresh {
                early_terminated = true;
                break;
            }
        }
    }

    let outcome = if candidates.is_empty() {
        EstimationOutcome::DetectFail {
            reason: DetectFailReason::EmptyCandidateSet,
        }
    } else {
        // minimum mean entropy; ties resolve to the earliest iteration
        let best = candidates
            .iter()
            .enumerate()
            .min_by(|(_, a), (_, b)| {
                a.psi
                    .partial_cmp(&b.psi)
                    .unwrap_or(std::cmp::Ordering::Equal)
            })
            .map(|(i, _)| i)
            .expect("non-empty candidate set");
        let chosen = &candidates[best];
        EstimationOutcome::Success {
            motion: chosen.motion.clone(),
            inlier_indices: chosen.inlier_indices.clone(),
            candidate_count: candidates.len(),
        }
    };

    Ok(EstimationResult {
        outcome,
        diagnostics: Diagnostics {
            records,
            candidates,
            omega_final: omega.omega,
            early_terminated,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate, generate_unstructured, PointDistribution, SceneConfig};

    fn canonical(seed: u64, outliers: f64) -> (SceneConfig<f64>, crate::synth::Scene<f64>) {
        let mut c = SceneConfig::<f64>::canonical();
        c.outlier_ratio = outliers;
        c.rng_seed = seed;
        let s = generate(&c).unwrap();
        (c, s)
    }

    #[test]
    fn sample_minimal_full_set_when_n_is_8() {
        let mut rng = iteration_rng(1, 0);
        let mut idx = sample_minimal(8, &mut rng).unwrap();
        idx.sort_unstable();
        assert_eq!(idx, vec![0, 1, 2, 3, 4, 5, 6, 7]);
        assert!(sample_minimal(7, &mut rng).is_none());
    }

    #[test]
    fn sample_minimal_is_deterministic_per_stream() {
        let a = sample_minimal(100, &mut iteration_rng(42, 3)).unwrap();
        let b = sample_minimal(100, &mut iteration_rng(42, 3)).unwrap();
        let c = sample_minimal(100, &mut iteration_rng(42, 4)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn sample_minimal_is_uniform() {
        let n = 100usize;
        let draws = 100_000usize;
        let mut counts = vec![0usize; n];
        for j in 0..draws {
            let mut rng = iteration_rng(7, j);
            for i in sample_minimal(n, &mut rng).unwrap() {
                counts[i] += 1;
            }
        }
        let p = 8.0 / n as f64;
        let expect = draws as f64 * p;
        let sd = (draws as f64 * p * (1.0 - p)).sqrt();
        for (i, &c) in counts.iter().enumerate() {
            assert!(
                (c as f64 - expect).abs() < 5.0 * sd,
                "index {i} drawn {c} times (expect {expect:.0} +/- {:.0})",
                5.0 * sd
            );
        }
    }

    #[test]
    fn quality_test_hand_example_passes_z() {
        let config = EngineConfig::<f64>::new(Variant::Rcme);
        let q = inlier_quality_test(&[-4.0, -4.0, -4.0, -2.0], 8, 0.5, &config, 1.6448536269514722);
        assert!((q.z - 0.06).abs() < 1e-12);
        assert!(q.pass_z);
        assert!(q.pass_size); // 4/8 >= 0.7 * 0.5
    }

    #[test]
    fn quality_size_boundary_is_inclusive() {
        let mut config = EngineConfig::<f64>::new(Variant::Rcme);
        config.lambda = 0.5;
        // n_j/n = 4/8 = 0.5 exactly equals lambda * omega with omega = 1.0
        let q = inlier_quality_test(&[-9.0, -9.1, -8.9, -9.05], 8, 1.0, &config, 1.645);
        assert!(q.pass_size);
        // one fewer inlier fails
        let q = inlier_quality_test(&[-9.0, -9.1, -8.9], 8, 1.0, &config, 1.645);
        assert!(!q.pass_size);
    }

    #[test]
    fn quality_strongly_negative_mean_passes() {
        let config = EngineConfig::<f64>::new(Variant::Rcme);
        let q = inlier_quality_test(&[-30.0, -31.0, -29.5, -30.2], 8, 0.5, &config, 1.645);
        assert!(q.pass_z && q.z < 0.0);
    }

    #[test]
    fn quality_zero_variance_convention() {
        let config = EngineConfig::<f64>::new(Variant::Rcme);
        let below = inlier_quality_test(&[-5.0, -5.0, -5.0], 8, 0.1, &config, 1.645);
        assert!(below.pass_z && below.z.is_nan());
        let above = inlier_quality_test(&[-1.0, -1.0, -1.0], 8, 0.1, &config, 1.645);
        assert!(!above.pass_z);
        // scores exactly at mu: psi <= mu holds, so the convention passes
        let at = inlier_quality_test(&[-3.53, -3.53, -3.53], 8, 0.1, &config, 1.645);
        assert!(at.pass_z);
    }

    #[test]
    fn quality_single_score_fails() {
        let config = EngineConfig::<f64>::new(Variant::Rcme);
        let q = inlier_quality_test(&[-9.0], 8, 0.1, &config, 1.645);
        assert!(!q.pass());
    }

    #[test]
    fn config_validation() {
        let mut c = EngineConfig::<f64>::new(Variant::Rcme);
        c.lambda = 0.3;
        assert!(run(
            &generate(&SceneConfig::canonical()).unwrap().correspondences,
            &SceneConfig::<f64>::canonical().intrinsics,
            &NoiseModel::new(0.5).unwrap(),
            &c
        )
        .is_err());
    }

    #[test]
    fn too_few_correspondences_detect_fail() {
        let (config, scene) = canonical(1, 0.0);
        let result = run(
            &scene.correspondences[..5],
            &config.intrinsics,
            &NoiseModel::new(0.5).unwrap(),
            &EngineConfig::new(Variant::Rcme),
        )
        .unwrap();
        assert_eq!(
            result.outcome,
            EstimationOutcome::DetectFail {
                reason: DetectFailReason::TooFewCorrespondences
            }
        );
    }

    #[test]
    fn consistence_test_accepts_own_exact_model() {
        let mut c = SceneConfig::<f64>::canonical();
        c.sigma = 0.0;
        c.n_points = 8;
        c.rng_seed = 3;
        let scene = generate(&c).unwrap();
        let noise = NoiseModel::new(0.5).unwrap();
        let f = estimate_f_8point(&scene.correspondences).unwrap();
        let (q, t, _) = decompose_to_motion(&f, &c.intrinsics, &scene.correspondences).unwrap();
        let cov_f = cov_f_overdetermined(&scene.correspondences, &f, &noise).unwrap();
        let cov = cov_p(&f, &cov_f, &q, &t, &c.intrinsics).unwrap();
        let ctx = MotionContext::new(&q, &t, &cov, &c.intrinsics, &noise);
        let sig = SignificanceConfig::from_alpha(0.05).unwrap();
        assert!(sample_consistence_test(
            &ctx,
            &scene.correspondences,
            sig.chi2_thresh_3dof
        ));
    }

    #[test]
    fn consistence_test_rejects_gross_outlier_in_sample() {
        let mut c = SceneConfig::<f64>::canonical();
        c.sigma = 0.5;
        c.n_points = 8;
        c.rng_seed = 6;
        let scene = generate(&c).unwrap();
        let noise = NoiseModel::new(0.5).unwrap();
        let f = estimate_f_8point(&scene.correspondences).unwrap();
        let (q, t, _) = decompose_to_motion(&f, &c.intrinsics, &scene.correspondences).unwrap();
        let cov_f = cov_f_overdetermined(&scene.correspondences, &f, &noise).unwrap();
        let cov = cov_p(&f, &cov_f, &q, &t, &c.intrinsics).unwrap();
        let ctx = MotionContext::new(&q, &t, &cov, &c.intrinsics, &noise);
        let sig = SignificanceConfig::from_alpha(0.05).unwrap();
        // displace one sample far off its epipolar line
        let mut tampered = scene.correspondences.clone();
        tampered[4].xp.y += 100.0;
        assert!(!sample_consistence_test(
            &ctx,
            &tampered,
            sig.chi2_thresh_3dof
        ));
    }

    #[test]
    fn find_inliers_under_true_motion_recall_and_leakage() {
        let (config, scene) = canonical(17, 0.4);
        let noise = NoiseModel::new(0.5).unwrap();
        let ctx = MotionContext::new(
            &scene.motion.q,
            &scene.motion.t,
            &MotionCovariance::zeros(),
            &config.intrinsics,
            &noise,
        );
        let sig = SignificanceConfig::from_alpha(0.05).unwrap();
        let (inliers, scores) =
            find_and_score_inliers(&ctx, &scene.correspondences, sig.chi2_thresh_3dof);
        assert_eq!(inliers.len(), scores.len());
        let true_inliers: Vec<usize> = scene
            .inlier_labels
            .iter()
            .enumerate()
            .filter_map(|(i, &l)| l.then_some(i))
            .collect();
        let found: std::collections::HashSet<_> = inliers.iter().cloned().collect();
        let recall = true_inliers.iter().filter(|i| found.contains(i)).count() as f64
            / true_inliers.len() as f64;
        let leakage = inliers
            .iter()
            .filter(|&&i| !scene.inlier_labels[i])
            .count() as f64
            / scene.n_outliers() as f64;
        assert!(recall >= 0.90, "recall {recall}");
        assert!(leakage <= 0.05, "leakage {leakage}");
    }

    #[test]
    fn vanishing_noise_limit_keeps_only_exact_points() {
        // with zero motion covariance and sigma -> 0, the inlier set is
        // exactly the set of points on the epipolar variety
        let mut c = SceneConfig::<f64>::canonical();
        c.sigma = 0.0;
        c.n_points = 25;
        c.rng_seed = 14;
        let scene = generate(&c).unwrap();
        let mut correspondences = scene.correspondences.clone();
        for c in &mut correspondences[20..25] {
            c.xp.y += 0.5; // half-pixel displacement
        }
        let noise = NoiseModel::new(1e-9).unwrap();
        let ctx = MotionContext::new(
            &scene.motion.q,
            &scene.motion.t,
            &MotionCovariance::zeros(),
            &c.intrinsics,
            &noise,
        );
        let sig = SignificanceConfig::from_alpha(0.05).unwrap();
        let (inliers, _) = find_and_score_inliers(&ctx, &correspondences, sig.chi2_thresh_3dof);
        assert_eq!(inliers, (0..20).collect::<Vec<_>>());
    }

    #[test]
    fn oracle_soundness_from_labels() {
        // the generator's labels agree with the inlier test at the true
        // motion with zero motion covariance
        for seed in [5u64, 25, 125] {
            let mut c = SceneConfig::<f64>::canonical();
            c.outlier_ratio = 0.3;
            c.n_points = 2000;
            c.rng_seed = seed;
            let scene = generate(&c).unwrap();
            let config = c;
            let noise = NoiseModel::new(0.5).unwrap();
            let ctx = MotionContext::new(
                &scene.motion.q,
                &scene.motion.t,
                &MotionCovariance::zeros(),
                &config.intrinsics,
                &noise,
            );
            let sig = SignificanceConfig::from_alpha(0.05).unwrap();
            let (inliers, _) =
                find_and_score_inliers(&ctx, &scene.correspondences, sig.chi2_thresh_3dof);
            let found: std::collections::HashSet<_> = inliers.into_iter().collect();
            let true_count = scene.inlier_labels.iter().filter(|&&l| l).count();
            let recovered = scene
                .inlier_labels
                .iter()
                .enumerate()
                .filter(|(i, &l)| l && found.contains(i))
                .count();
            let rate = recovered as f64 / true_count as f64;
            assert!(rate >= 1.0 - 0.05 - 0.02, "seed {seed}: recovery rate {rate}");
        }
    }

    #[test]
    fn clean_scene_every_variant_succeeds_accurately() {
        let mut c = SceneConfig::<f64>::canonical();
        c.sigma = 0.0;
        c.rng_seed = 9;
        let scene = generate(&c).unwrap();
        let noise = NoiseModel::new(0.5).unwrap();
        for variant in [Variant::Standard, Variant::Prcme, Variant::Rcme] {
            let result = run(
                &scene.correspondences,
                &c.intrinsics,
                &noise,
                &EngineConfig::new(variant).with_seed(31),
            )
            .unwrap();
            let EstimationOutcome::Success { motion, inlier_indices, .. } = &result.outcome
            else {
                panic!("{variant:?} did not succeed");
            };
            let rot_err = motion.rotation_angle_to(&scene.motion);
            let t_err = motion.translation_angle_to(&scene.motion);
            assert!(rot_err < 0.5f64.to_radians(), "{variant:?} rot err {rot_err}");
            assert!(t_err < 1.0f64.to_radians(), "{variant:?} t err {t_err}");
            assert!(inlier_indices.len() >= 190, "{variant:?} inliers {}", inlier_indices.len());
        }
    }

    #[test]
    fn unstructured_input_detect_fails_rcme_but_not_standard() {
        let config = SceneConfig::<f64>::canonical();
        let cs = generate_unstructured(200, &config.intrinsics, 77);
        let noise = NoiseModel::new(0.5).unwrap();
        let rcme = run(
            &cs,
            &config.intrinsics,
            &noise,
            &EngineConfig::new(Variant::Rcme).with_seed(5),
        )
        .unwrap();
        assert_eq!(
            rcme.outcome,
            EstimationOutcome::DetectFail {
                reason: DetectFailReason::EmptyCandidateSet
            }
        );
        let standard = run(
            &cs,
            &config.intrinsics,
            &noise,
            &EngineConfig::new(Variant::Standard).with_seed(5),
        )
        .unwrap();
        assert!(standard.outcome.is_success());
    }

    #[test]
    fn identical_seed_reproduces_diagnostics_exactly() {
        let (config, scene) = canonical(41, 0.4);
        let noise = NoiseModel::new(0.5).unwrap();
        let cfg = EngineConfig::new(Variant::Rcme).with_seed(123);
        let a = run(&scene.correspondences, &config.intrinsics, &noise, &cfg).unwrap();
        let b = run(&scene.correspondences, &config.intrinsics, &noise, &cfg).unwrap();
        // structural equality would treat NaN Z statistics as unequal, so
        // compare the full debug rendering instead
        assert_eq!(format!("{a:?}"), format!("{b:?}"));
    }

    #[test]
    fn selection_returns_minimum_mean_entropy() {
        let (config, scene) = canonical(55, 0.3);
        let noise = NoiseModel::new(0.5).unwrap();
        let result = run(
            &scene.correspondences,
            &config.intrinsics,
            &noise,
            &EngineConfig::new(Variant::Rcme).with_seed(8),
        )
        .unwrap();
        let EstimationOutcome::Success { candidate_count, .. } = &result.outcome else {
            panic!("expected success");
        };
        assert_eq!(*candidate_count, result.diagnostics.candidates.len());
        let selected_psi = result
            .diagnostics
            .candidates
            .iter()
            .map(|c| c.psi)
            .fold(f64::INFINITY, f64::min);
        // the returned motion corresponds to the argmin
        let best = result
            .diagnostics
            .candidates
            .iter()
            .min_by(|a, b| a.psi.partial_cmp(&b.psi).unwrap())
            .unwrap();
        assert_eq!(best.psi, selected_psi);
        for c in &result.diagnostics.candidates {
            assert!(best.psi <= c.psi);
        }
    }

    #[test]
    fn rcme_candidates_subset_of_prcme_under_shared_seed() {
        for seed in [2u64, 12, 22] {
            let mut c = SceneConfig::<f64>::canonical();
            c.outlier_ratio = 0.4;
            c.distribution = PointDistribution::Clustered {
                n_clusters: 3,
                cluster_sigma_px: 40.0,
            };
            c.rng_seed = 900 + seed;
            let scene = generate(&c).unwrap();
            let noise = NoiseModel::new(0.5).unwrap();
            let rcme = run(
                &scene.correspondences,
                &c.intrinsics,
                &noise,
                &EngineConfig::new(Variant::Rcme).with_seed(seed),
            )
            .unwrap();
            let prcme = run(
                &scene.correspondences,
                &c.intrinsics,
                &noise,
                &EngineConfig::new(Variant::Prcme).with_seed(seed),
            )
            .unwrap();
            let rcme_iters: std::collections::HashSet<_> = rcme
                .diagnostics
                .candidates
                .iter()
                .map(|c| c.iteration)
                .collect();
            let prcme_iters: std::collections::HashSet<_> = prcme
                .diagnostics
                .candidates
                .iter()
                .map(|c| c.iteration)
                .collect();
            assert!(
                rcme_iters.is_subset(&prcme_iters),
                "seed {seed}: {rcme_iters:?} not within {prcme_iters:?}"
            );
            // identical omega traces (the consistence gate must not skew
            // the running ratio)
            let omegas_r: Vec<f64> = rcme.diagnostics.records.iter().map(|r| r.omega).collect();
            let omegas_p: Vec<f64> = prcme.diagnostics.records.iter().map(|r| r.omega).collect();
            assert_eq!(omegas_r, omegas_p);
        }
    }

    #[test]
    fn omega_never_decreases() {
        let (config, scene) = canonical(71, 0.4);
        let noise = NoiseModel::new(0.5).unwrap();
        let result = run(
            &scene.correspondences,
            &config.intrinsics,
            &noise,
            &EngineConfig::new(Variant::Rcme).with_seed(2),
        )
        .unwrap();
        let mut prev = 0.0f64;
        for r in &result.diagnostics.records {
            assert!(r.omega >= prev);
            prev = r.omega;
        }
        assert_eq!(prev, result.diagnostics.omega_final);
    }

    #[test]
    fn candidate_iterations_are_strictly_increasing() {
        let (config, scene) = canonical(81, 0.2);
        let noise = NoiseModel::new(0.5).unwrap();
        let result = run(
            &scene.correspondences,
            &config.intrinsics,
            &noise,
            &EngineConfig::new(Variant::Prcme).with_seed(4),
        )
        .unwrap();
        let iters: Vec<usize> = result
            .diagnostics
            .candidates
            .iter()
            .map(|c| c.iteration)
            .collect();
        assert!(iters.windows(2).all(|w| w[0] < w[1]));
        assert!(!iters.is_empty());
    }

    #[test]
    fn early_termination_stops_the_loop() {
        let (config, scene) = canonical(91, 0.0);
        let noise = NoiseModel::new(0.5).unwrap();
        let mut cfg = EngineConfig::new(Variant::Rcme).with_seed(6);
        cfg.early_term_entropy = Some(1.0e6); // any accepted candidate triggers
        let result = run(&scene.correspondences, &config.intrinsics, &noise, &cfg).unwrap();
        assert!(result.diagnostics.early_terminated);
        assert!(result.diagnostics.records.len() < cfg.max_iters);
        assert!(result.outcome.is_success());
    }
}
