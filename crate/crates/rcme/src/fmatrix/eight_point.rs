//! Normalized 8-point fundamental-matrix solver.

use nalgebra::{Matrix3, SMatrix, SVector, Vector2};

use super::FmatrixError;
use crate::scalar::{cast, Scalar};
use crate::types::{matrix_to_vector, Correspondence};

/// Hartley similarity transforms for the two views: each maps its view's
/// sample centroid to the origin and the RMS distance to sqrt(2).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalizationTransform<T: Scalar> {
    pub t1: Matrix3<T>,
    pub t2: Matrix3<T>,
}

fn hartley_transform<T: Scalar>(points: &[Vector2<T>]) -> Matrix3<T> {
    let n = cast::<T>(points.len() as f64);
    let centroid = points.iter().fold(Vector2::zeros(), |a, p| a + p) / n;
    let rms = (points
        .iter()
        .map(|p| (p - centroid).norm_squared())
        .fold(T::zero(), |a, b| a + b)
        / n)
        .sqrt();
    let scale = if rms > T::zero() {
        cast::<T>(2.0).sqrt() / rms
    } else {
        T::one()
    };
    Matrix3::new(
        scale,
        T::zero(),
        -scale * centroid.x,
        T::zero(),
        scale,
        -scale * centroid.y,
        T::zero(),
        T::zero(),
        T::one(),
    )
}

/// Builds the per-view Hartley transforms for a sample.
pub fn normalization_transforms<T: Scalar>(
    samples: &[Correspondence<T>],
) -> NormalizationTransform<T> {
    let p1: Vec<_> = samples.iter().map(|c| c.x).collect();
    let p2: Vec<_> = samples.iter().map(|c| c.xp).collect();
    NormalizationTransform {
        t1: hartley_transform(&p1),
        t2: hartley_transform(&p2),
    }
}

/// Estimates the fundamental matrix from exactly 8 correspondences with the
/// normalized 8-point algorithm; returns the unit-norm row-stacked 9-vector.
///
/// The homogeneous system is solved through the SVD of the design matrix
/// (zero-padded to 9x9 so the full right-singular basis is available); the
/// rank-2 constraint is enforced in the normalized frame before
/// denormalizing with `T2^T F T1`.
///
/// Fails with [`FmatrixError::DegenerateSample`] when the design matrix has
/// two near-zero singular values (ratio below 1e-9), e.g. for duplicated
/// points or otherwise rank-deficient samples.
pub fn estimate_f_8point<T: Scalar>(
    samples: &[Correspondence<T>],
) -> Result<SVector<T, 9>, FmatrixError> {
    if samples.len() != 8 {
        return Err(FmatrixError::WrongSampleCount(samples.len()));
    }
    let norms = normalization_transforms(samples);

    let mut design = SMatrix::<T, 9, 9>::zeros();
    for (row, c) in samples.iter().enumerate() {
        let a = norms.t1 * c.x_h();
        let b = norms.t2 * c.xp_h();
        let (x, y) = (a.x, a.y);
        let (xp, yp) = (b.x, b.y);
        design[(row, 0)] = xp * x;
        design[(row, 1)] = xp * y;
        design[(row, 2)] = xp;
        design[(row, 3)] = yp * x;
        design[(row, 4)] = yp * y;
        design[(row, 5)] = yp;
        design[(row, 6)] = x;
        design[(row, 7)] = y;
        design[(row, 8)] = T::one();
    }
    // row 8 stays zero: the padding adds one exact null singular value, so
    // the solution vector is the last row of the full V^T
    let svd = design.svd(false, true);
    let sv = svd.singular_values;
    // sigma_8 collapsed relative to a significant sigma_7 means the null
    // space gained a dimension (e.g. a duplicated point): the sample cannot
    // pin down a model. An exactly planar sample instead drops sigma_7 and
    // sigma_8 to round-off together; it still yields one member of its
    // solution family and is left to the verification stages.
    let floor = cast::<T>(1e-12) * sv[0];
    if sv[6] > floor && sv[7] < cast::<T>(1e-9) * sv[6] {
        return Err(FmatrixError::DegenerateSample(
            (sv[7] / sv[6]).to_subset().unwrap_or(f64::NAN),
        ));
    }
    let v_t = svd.v_t.expect("requested V^T");
    let f_n = Matrix3::new(
        v_t[(8, 0)],
        v_t[(8, 1)],
        v_t[(8, 2)],
        v_t[(8, 3)],
        v_t[(8, 4)],
        v_t[(8, 5)],
        v_t[(8, 6)],
        v_t[(8, 7)],
        v_t[(8, 8)],
    );

    // rank-2 enforcement in the normalized frame
    let svd3 = f_n.svd(true, true);
    let u = svd3.u.expect("requested U");
    let vt3 = svd3.v_t.expect("requested V^T");
    let s = svd3.singular_values;
    let f_rank2 = u * Matrix3::from_diagonal(&nalgebra::Vector3::new(s[0], s[1], T::zero())) * vt3;

    let f_pix = norms.t2.transpose() * f_rank2 * norms.t1;
    let f = matrix_to_vector(&f_pix);
    Ok(f / f.norm())
}
