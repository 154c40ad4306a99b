//! Motion recovery from a fundamental model: essential-matrix factorization
//! into the four (R, t) candidates and cheirality voting over the
//! instantiating sample.

use nalgebra::{Matrix3, SVector, Vector3, Vector4};

use super::FmatrixError;
use crate::refine::triangulate_rt_fast;
use crate::scalar::Scalar;
use crate::types::{quat_from_rotation, vector_to_matrix, Correspondence, Intrinsics};

/// The four rotation/translation candidates of an essential-matrix
/// factorization with their cheirality vote counts.
#[derive(Debug, Clone, PartialEq)]
pub struct DecompositionCandidates<T: Scalar> {
    pub candidates: [(Matrix3<T>, Vector3<T>); 4],
    /// Number of sample points triangulating in front of both cameras.
    pub votes: [usize; 4],
    pub selected: usize,
    /// Two leading singular values of `K^T F K` (their mean is the common
    /// scale of the corrected essential matrix; their gap measures how far
    /// the model is from a valid essential matrix).
    pub essential_singular_values: (T, T),
}

fn factor_candidates<T: Scalar>(
    f: &SVector<T, 9>,
    intrinsics: &Intrinsics<T>,
    samples: &[Correspondence<T>],
) -> DecompositionCandidates<T> {
    let k = intrinsics.matrix();
    let e = k.transpose() * vector_to_matrix(f) * k;
    let svd = e.svd(true, true);
    let mut u = svd.u.expect("requested U");
    let mut v_t = svd.v_t.expect("requested V^T");
    // proper rotations: the third column/row pairs with the zero singular
    // value, so flipping them leaves the factorization intact
    if u.determinant() < T::zero() {
        u.column_mut(2).neg_mut();
    }
    if v_t.determinant() < T::zero() {
        v_t.row_mut(2).neg_mut();
    }
    let w = Matrix3::new(
        T::zero(),
        -T::one(),
        T::zero(),
        T::one(),
        T::zero(),
        T::zero(),
        T::zero(),
        T::zero(),
        T::one(),
    );
    let r1 = u * w * v_t;
    let r2 = u * w.transpose() * v_t;
    let t_dir: Vector3<T> = u.column(2).into_owned();
    let candidates = [
        (r1, t_dir),
        (r1, -t_dir),
        (r2, t_dir),
        (r2, -t_dir),
    ];

    let mut votes = [0usize; 4];
    for (i, (r, t)) in candidates.iter().enumerate() {
        for c in samples {
            if let Some(p) = triangulate_rt_fast(c, r, t, intrinsics) {
                let depth2 = (r * p + t).z;
                if p.z > T::zero() && depth2 > T::zero() {
                    votes[i] += 1;
                }
            }
        }
    }
    let selected = votes
        .iter()
        .enumerate()
        .max_by_key(|(_, &v)| v)
        .map(|(i, _)| i)
        .unwrap_or(0);
    DecompositionCandidates {
        candidates,
        votes,
        selected,
        essential_singular_values: (svd.singular_values[0], svd.singular_values[1]),
    }
}

fn gauge_output<T: Scalar>(
    cands: &DecompositionCandidates<T>,
) -> (Vector4<T>, Vector3<T>) {
    let (r, t) = &cands.candidates[cands.selected];
    (quat_from_rotation(r), t.normalize())
}

/// Factors `E = K^T F K` into the four candidate motions, selects by
/// cheirality voting over `samples`, and returns the gauged `(q, t)`.
///
/// Errors when no candidate receives a vote or when the top vote count is
/// tied (the caller discards the iteration).
/// A gauged motion `(q, t)` with the candidate diagnostics it was selected
/// from.
pub type RecoveredMotion<T> = (Vector4<T>, Vector3<T>, DecompositionCandidates<T>);

pub fn decompose_to_motion<T: Scalar>(
    f: &SVector<T, 9>,
    intrinsics: &Intrinsics<T>,
    samples: &[Correspondence<T>],
) -> Result<RecoveredMotion<T>, FmatrixError> {
    let cands = factor_candidates(f, intrinsics, samples);
    let best = cands.votes[cands.selected];
    if best == 0 {
        return Err(FmatrixError::NoCheiralityVotes);
    }
    if cands.votes.iter().filter(|&&v| v == best).count() > 1 {
        return Err(FmatrixError::CheiralityTie);
    }
    let (q, t) = gauge_output(&cands);
    Ok((q, t, cands))
}

/// Like [`decompose_to_motion`] but total: vote ties (and the no-vote case)
/// resolve to the first candidate with the maximal count. Used for the
/// baseline estimator's final model, which must always produce an output.
pub fn decompose_to_motion_lenient<T: Scalar>(
    f: &SVector<T, 9>,
    intrinsics: &Intrinsics<T>,
    samples: &[Correspondence<T>],
) -> RecoveredMotion<T> {
    let cands = factor_candidates(f, intrinsics, samples);
    let (q, t) = gauge_output(&cands);
    (q, t, cands)
}

/// Angle in radians between a rotation matrix and the rotation of `q`.
#[cfg(test)]
fn rotation_angle<T: Scalar>(r: &Matrix3<T>, r_ref: &Matrix3<T>) -> T {
    let rel = r * r_ref.transpose();
    ((rel.trace() - T::one()) / crate::scalar::cast::<T>(2.0))
        .clamp(-T::one(), T::one())
        .acos()
}
