//! Domain types shared by all estimators: camera intrinsics, point
//! correspondences, the pixel noise model, fundamental-matrix and
//! camera-motion models with their covariances, and the quaternion /
//! rotation helpers they rely on.

use nalgebra::{Matrix3, Matrix4, SMatrix, SVector, Vector2, Vector3, Vector4};
use thiserror::Error;

use crate::scalar::{cast, Scalar};

/// Covariance matrix of the 7-vector camera motion (quaternion + translation).
pub type MotionCovariance<T> = SMatrix<T, 7, 7>;
/// Covariance matrix of the 9-vector fundamental model.
pub type ModelCovariance<T> = SMatrix<T, 9, 9>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TypeError {
    #[error("focal lengths must be positive, got fx={fx}, fy={fy}")]
    InvalidFocalLength { fx: f64, fy: f64 },
    #[error("noise sigma must be positive and finite, got {0}")]
    InvalidSigma(f64),
    #[error("coordinates must be finite")]
    NonFiniteCoordinate,
    #[error("model vector must have unit norm, got {0}")]
    NotUnitNorm(f64),
    #[error("reshaped fundamental matrix must have rank 2 (sigma3/sigma1 = {0:e})")]
    NotRankTwo(f64),
    #[error("covariance must be symmetric")]
    NotSymmetric,
    #[error("covariance must be positive semidefinite (min eigenvalue {0:e})")]
    NotPsd(f64),
    #[error("quaternion or translation has zero norm")]
    ZeroNorm,
}

/// Pinhole camera intrinsics. Assembles into the upper-triangular matrix
/// `K = [[fx, skew, cx], [0, fy, cy], [0, 0, 1]]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Intrinsics<T: Scalar> {
    pub fx: T,
    pub fy: T,
    pub cx: T,
    pub cy: T,
    pub skew: T,
}

impl<T: Scalar> Intrinsics<T> {
    pub fn new(fx: T, fy: T, cx: T, cy: T, skew: T) -> Result<Self, TypeError> {
        if fx <= T::zero() || fy <= T::zero() {
            return Err(TypeError::InvalidFocalLength {
                fx: fx.to_subset().unwrap_or(f64::NAN),
                fy: fy.to_subset().unwrap_or(f64::NAN),
            });
        }
        Ok(Self { fx, fy, cx, cy, skew })
    }

    /// Identity intrinsics (normalized image coordinates).
    pub fn identity() -> Self {
        Self {
            fx: T::one(),
            fy: T::one(),
            cx: T::zero(),
            cy: T::zero(),
            skew: T::zero(),
        }
    }

    pub fn matrix(&self) -> Matrix3<T> {
        Matrix3::new(
            self.fx,
            self.skew,
            self.cx,
            T::zero(),
            self.fy,
            self.cy,
            T::zero(),
            T::zero(),
            T::one(),
        )
    }

    /// Closed-form inverse of the upper-triangular K.
    pub fn inverse_matrix(&self) -> Matrix3<T> {
        let (fx, fy, cx, cy, s) = (self.fx, self.fy, self.cx, self.cy, self.skew);
        Matrix3::new(
            T::one() / fx,
            -s / (fx * fy),
            (s * cy - cx * fy) / (fx * fy),
            T::zero(),
            T::one() / fy,
            -cy / fy,
            T::zero(),
            T::zero(),
            T::one(),
        )
    }

    /// Projects a camera-frame point to pixel coordinates.
    pub fn project(&self, p: &Vector3<T>) -> Vector2<T> {
        let h = self.matrix() * p;
        Vector2::new(h.x / h.z, h.y / h.z)
    }
}

/// One point correspondence between two views, in pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correspondence<T: Scalar> {
    /// Pixel location in view 1.
    pub x: Vector2<T>,
    /// Pixel location in view 2.
    pub xp: Vector2<T>,
}

impl<T: Scalar> Correspondence<T> {
    pub fn new(x: Vector2<T>, xp: Vector2<T>) -> Self {
        Self { x, xp }
    }

    pub fn try_new(x: Vector2<T>, xp: Vector2<T>) -> Result<Self, TypeError> {
        let c = Self { x, xp };
        if !c.is_finite() {
            return Err(TypeError::NonFiniteCoordinate);
        }
        Ok(c)
    }

    pub fn is_finite(&self) -> bool {
        self.x.x.finite() && self.x.y.finite() && self.xp.x.finite() && self.xp.y.finite()
    }

    /// The stacked 4-vector `[x; xp]`.
    pub fn stacked(&self) -> Vector4<T> {
        Vector4::new(self.x.x, self.x.y, self.xp.x, self.xp.y)
    }

    /// Homogeneous view-1 point `[x; 1]`.
    pub fn x_h(&self) -> Vector3<T> {
        Vector3::new(self.x.x, self.x.y, T::one())
    }

    /// Homogeneous view-2 point `[xp; 1]`.
    pub fn xp_h(&self) -> Vector3<T> {
        Vector3::new(self.xp.x, self.xp.y, T::one())
    }
}

/// Isotropic Gaussian pixel-noise model: every coordinate of the stacked
/// 4-vector carries independent `N(0, sigma^2)` noise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseModel<T: Scalar> {
    pub sigma: T,
}

impl<T: Scalar> NoiseModel<T> {
    pub fn new(sigma: T) -> Result<Self, TypeError> {
        if !(sigma > T::zero() && sigma.finite()) {
            return Err(TypeError::InvalidSigma(sigma.to_subset().unwrap_or(f64::NAN)));
        }
        Ok(Self { sigma })
    }

    /// Per-correspondence covariance `sigma^2 * I4`.
    pub fn covariance(&self) -> Matrix4<T> {
        Matrix4::identity() * (self.sigma * self.sigma)
    }
}

/// Fundamental-matrix model: the unit 9-vector of row-stacked entries of F
/// together with its 9x9 covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct FundamentalModel<T: Scalar> {
    pub f: SVector<T, 9>,
    pub cov_f: ModelCovariance<T>,
}

impl<T: Scalar> FundamentalModel<T> {
    /// Validates the unit-norm gauge, the rank-2 constraint, and symmetry /
    /// positive semidefiniteness of the covariance (both up to round-off).
    pub fn new(f: SVector<T, 9>, cov_f: ModelCovariance<T>) -> Result<Self, TypeError> {
        let n = f.norm();
        if (n - T::one()).abs() > cast(1e-9) {
            return Err(TypeError::NotUnitNorm(n.to_subset().unwrap_or(f64::NAN)));
        }
        let svals = vector_to_matrix(&f).svd(false, false).singular_values;
        let ratio = svals[2] / svals[0];
        if ratio > cast(1e-12) {
            return Err(TypeError::NotRankTwo(ratio.to_subset().unwrap_or(f64::NAN)));
        }
        check_symmetric_psd(&cov_f)?;
        Ok(Self { f, cov_f })
    }

    /// The 3x3 fundamental matrix.
    pub fn matrix(&self) -> Matrix3<T> {
        vector_to_matrix(&self.f)
    }
}

/// Row-stacks a 3x3 matrix into a 9-vector.
pub fn matrix_to_vector<T: Scalar>(m: &Matrix3<T>) -> SVector<T, 9> {
    SVector::<T, 9>::from_row_slice(&[
        m[(0, 0)],
        m[(0, 1)],
        m[(0, 2)],
        m[(1, 0)],
        m[(1, 1)],
        m[(1, 2)],
        m[(2, 0)],
        m[(2, 1)],
        m[(2, 2)],
    ])
}

/// Inverse of [`matrix_to_vector`].
pub fn vector_to_matrix<T: Scalar>(v: &SVector<T, 9>) -> Matrix3<T> {
    Matrix3::new(v[0], v[1], v[2], v[3], v[4], v[5], v[6], v[7], v[8])
}

/// Relative camera motion: unit quaternion `q = (w, x, y, z)` with `w >= 0`,
/// unit-norm translation direction, and the 7x7 covariance of `[q; t]`.
///
/// The convention is `x2 = R(q) x1 + t` for a point expressed in the frames
/// of camera 1 and camera 2; the monocular scale ambiguity is fixed by
/// `|t| = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraMotion<T: Scalar> {
    pub q: Vector4<T>,
    pub t: Vector3<T>,
    pub cov_p: MotionCovariance<T>,
}

impl<T: Scalar> CameraMotion<T> {
    /// Builds a motion, normalizing `q` and `t` and applying the `w >= 0`
    /// sign gauge.
    pub fn new(
        q: Vector4<T>,
        t: Vector3<T>,
        cov_p: MotionCovariance<T>,
    ) -> Result<Self, TypeError> {
        let qn = q.norm();
        let tn = t.norm();
        if qn <= T::zero() || tn <= T::zero() {
            return Err(TypeError::ZeroNorm);
        }
        let mut q = q / qn;
        if q[0] < T::zero() {
            q = -q;
        }
        Ok(Self { q, t: t / tn, cov_p })
    }

    /// Identity rotation, translation along +x, zero covariance.
    pub fn identity_x() -> Self {
        Self {
            q: Vector4::new(T::one(), T::zero(), T::zero(), T::zero()),
            t: Vector3::new(T::one(), T::zero(), T::zero()),
            cov_p: MotionCovariance::zeros(),
        }
    }

    pub fn rotation(&self) -> Matrix3<T> {
        rotation_from_quat(&self.q)
    }

    /// Essential matrix `[t]x R(q)`.
    pub fn essential(&self) -> Matrix3<T> {
        skew(&self.t) * self.rotation()
    }

    /// Fundamental matrix in pixel units, `K^-T [t]x R K^-1`.
    pub fn fundamental(&self, intrinsics: &Intrinsics<T>) -> Matrix3<T> {
        let ki = intrinsics.inverse_matrix();
        ki.transpose() * self.essential() * ki
    }

    /// Rotation angle between two motions, in radians.
    pub fn rotation_angle_to(&self, other: &Self) -> T {
        let rel = self.rotation() * other.rotation().transpose();
        let c = ((rel.trace() - T::one()) / cast(2.0)).clamp(-T::one(), T::one());
        c.acos()
    }

    /// Angle between the two translation directions, in radians.
    pub fn translation_angle_to(&self, other: &Self) -> T {
        self.t.dot(&other.t).clamp(-T::one(), T::one()).acos()
    }
}

/// Sampson error vector of one correspondence against one motion, with its
/// first-order covariance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampsonResidual<T: Scalar> {
    /// The 4-vector correction moving the correspondence onto the epipolar
    /// variety (first order).
    pub delta: Vector4<T>,
    /// First-order covariance of `delta` (measurement + motion terms).
    pub cov_delta: Matrix4<T>,
    /// Squared Mahalanobis distance `delta^T cov_delta^-1 delta`.
    pub mahal: T,
    /// Condition number of the covariance over its numerically resolved
    /// eigenvalue range.
    pub cov_cond: T,
}

/// Skew-symmetric cross-product matrix `[v]x`.
pub fn skew<T: Scalar>(v: &Vector3<T>) -> Matrix3<T> {
    Matrix3::new(
        T::zero(),
        -v.z,
        v.y,
        v.z,
        T::zero(),
        -v.x,
        -v.y,
        v.x,
        T::zero(),
    )
}

/// Rotation matrix of a quaternion `(w, x, y, z)`.
///
/// Uses the scale-normalized form, so it is well defined and smooth for any
/// nonzero quaternion; the radial direction is an exact null direction of
/// its derivative, which the covariance propagation relies on.
pub fn rotation_from_quat<T: Scalar>(q: &Vector4<T>) -> Matrix3<T> {
    let (w, v) = (q[0], Vector3::new(q[1], q[2], q[3]));
    let n2 = q.norm_squared();
    let two = cast::<T>(2.0);
    let m = Matrix3::identity() * (w * w - v.norm_squared())
        + v * v.transpose() * two
        + skew(&v) * (two * w);
    m / n2
}

/// Derivative of `rotation_from_quat` with respect to each quaternion
/// component: `d vec(R) / d q_i` as four 3x3 matrices.
pub fn rotation_jacobian_quat<T: Scalar>(q: &Vector4<T>) -> [Matrix3<T>; 4] {
    let (w, v) = (q[0], Vector3::new(q[1], q[2], q[3]));
    let n2 = q.norm_squared();
    let two = cast::<T>(2.0);
    let numer = Matrix3::identity() * (w * w - v.norm_squared())
        + v * v.transpose() * two
        + skew(&v) * (two * w);

    let mut out = [Matrix3::zeros(); 4];
    // d/dw
    let dn_dw = Matrix3::identity() * (two * w) + skew(&v) * two;
    out[0] = (dn_dw * n2 - numer * (two * w)) / (n2 * n2);
    // d/dv_k
    for k in 0..3 {
        let mut e = Vector3::zeros();
        e[k] = T::one();
        let dn = Matrix3::identity() * (-two * v[k])
            + (e * v.transpose() + v * e.transpose()) * two
            + skew(&e) * (two * w);
        out[k + 1] = (dn * n2 - numer * (two * v[k])) / (n2 * n2);
    }
    out
}

/// Extracts the unit quaternion `(w, x, y, z)` of a rotation matrix, with
/// the `w >= 0` sign gauge.
pub fn quat_from_rotation<T: Scalar>(r: &Matrix3<T>) -> Vector4<T> {
    let rot = nalgebra::Rotation3::from_matrix_unchecked(*r);
    let uq = nalgebra::UnitQuaternion::from_rotation_matrix(&rot);
    let mut q = Vector4::new(uq.w, uq.i, uq.j, uq.k);
    if q[0] < T::zero() {
        q = -q;
    }
    q / q.norm()
}

/// Defect of the algebraic relation between a fundamental model and a camera
/// motion: `s * K^T F K - [t]x R(q)`, with the scale `s` eliminated in
/// closed form as the least-squares fit
/// `s = <K^T F K, [t]x R>_F / |K^T F K|_F^2`.
///
/// Exact decompositions yield the zero matrix; the result is invariant to
/// rescaling `f` by any positive constant.
pub fn theta_residual<T: Scalar>(
    f: &SVector<T, 9>,
    q: &Vector4<T>,
    t: &Vector3<T>,
    intrinsics: &Intrinsics<T>,
) -> Matrix3<T> {
    let k = intrinsics.matrix();
    let m = k.transpose() * vector_to_matrix(f) * k;
    let g = skew(t) * rotation_from_quat(q);
    let s = m.dot(&g) / m.norm_squared();
    m * s - g
}

/// Symmetry plus eigenvalue check for a covariance matrix: symmetric to
/// round-off and all eigenvalues `>= -1e-10 * lambda_max`.
fn check_symmetric_psd<T: Scalar, const N: usize>(
    cov: &SMatrix<T, N, N>,
) -> Result<(), TypeError> {
    let asym = (cov - cov.transpose()).norm();
    if asym > cast::<T>(1e-9) * (T::one() + cov.norm()) {
        return Err(TypeError::NotSymmetric);
    }
    let dyn_cov = nalgebra::DMatrix::from_fn(N, N, |i, j| cov[(i, j)]);
    let eig = dyn_cov.symmetric_eigenvalues();
    let lmax = eig.iter().cloned().fold(T::zero(), |a, b| a.max(b));
    let lmin = eig.iter().cloned().fold(T::zero(), |a, b| a.min(b));
    if lmin < -cast::<T>(1e-10) * lmax.max(T::one()) {
        return Err(TypeError::NotPsd(lmin.to_subset().unwrap_or(f64::NAN)));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn axis_angle_quat(axis: [f64; 3], angle: f64) -> Vector4<f64> {
        let a = Vector3::from_row_slice(&axis).normalize();
        let (s, c) = ((angle / 2.0).sin(), (angle / 2.0).cos());
        let mut q = Vector4::new(c, s * a.x, s * a.y, s * a.z);
        if q[0] < 0.0 {
            q = -q;
        }
        q
    }

    #[test]
    fn intrinsics_matrix_and_inverse() {
        let k = Intrinsics::new(500.0, 480.0, 320.0, 240.0, 0.3).unwrap();
        let prod = k.matrix() * k.inverse_matrix();
        assert_relative_eq!(prod, Matrix3::identity(), epsilon = 1e-12);
        assert!(Intrinsics::new(-1.0, 1.0, 0.0, 0.0, 0.0).is_err());
        assert!(Intrinsics::new(1.0, 0.0, 0.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn noise_covariance_is_exact_for_half_pixel_sigma() {
        let n = NoiseModel::new(0.5f64).unwrap();
        assert_eq!(n.covariance(), Matrix4::identity() * 0.25);
        assert!(NoiseModel::new(0.0f64).is_err());
        assert!(NoiseModel::new(f64::NAN).is_err());
    }

    #[test]
    fn correspondence_accessors() {
        let c = Correspondence::new(Vector2::new(1.0, 2.0), Vector2::new(3.0, 4.0));
        assert_eq!(c.stacked(), Vector4::new(1.0, 2.0, 3.0, 4.0));
        assert_eq!(c.x_h(), Vector3::new(1.0, 2.0, 1.0));
        assert_eq!(c.xp_h(), Vector3::new(3.0, 4.0, 1.0));
        assert!(
            Correspondence::try_new(Vector2::new(f64::NAN, 0.0), Vector2::new(0.0, 0.0)).is_err()
        );
    }

    #[test]
    fn rotation_is_orthonormal_with_unit_det() {
        let q = axis_angle_quat([0.3, -1.0, 0.5], 0.7);
        let r = rotation_from_quat(&q);
        assert_relative_eq!(r * r.transpose(), Matrix3::identity(), epsilon = 1e-13);
        assert_relative_eq!(r.determinant(), 1.0, epsilon = 1e-13);
    }

    #[test]
    fn rotation_jacobian_matches_finite_differences() {
        let q = axis_angle_quat([1.0, 0.4, -0.2], 0.9);
        let jac = rotation_jacobian_quat(&q);
        let h = 1e-6;
        for i in 0..4 {
            let mut qp = q;
            let mut qm = q;
            qp[i] += h;
            qm[i] -= h;
            let fd = (rotation_from_quat(&qp) - rotation_from_quat(&qm)) / (2.0 * h);
            assert_relative_eq!(jac[i], fd, epsilon = 1e-7);
        }
    }

    #[test]
    fn theta_is_zero_for_exact_decomposition_with_identity_k() {
        let q = axis_angle_quat([0.2, 1.0, 0.1], 0.1);
        let t = Vector3::new(1.0, 0.15, 0.1).normalize();
        let e = skew(&t) * rotation_from_quat(&q);
        let f = matrix_to_vector(&e).normalize();
        let theta = theta_residual(&f, &q, &t, &Intrinsics::identity());
        assert!(theta.norm() < 1e-12, "theta norm {}", theta.norm());
    }

    #[test]
    fn theta_is_zero_for_exact_decomposition_with_pixel_k() {
        let k = Intrinsics::new(500.0, 500.0, 320.0, 240.0, 0.0).unwrap();
        let q = axis_angle_quat([0.0, 1.0, 0.3], 0.08);
        let t = Vector3::new(0.8, -0.2, 0.3).normalize();
        let ki = k.inverse_matrix();
        let fpix = ki.transpose() * skew(&t) * rotation_from_quat(&q) * ki;
        let f = matrix_to_vector(&fpix).normalize();
        let theta = theta_residual(&f, &q, &t, &k);
        assert!(theta.norm() < 1e-10, "theta norm {}", theta.norm());
    }

    #[test]
    fn theta_detects_small_rotation_perturbation() {
        let q = axis_angle_quat([0.2, 1.0, 0.1], 0.1);
        let t = Vector3::new(1.0, 0.15, 0.1).normalize();
        let e = skew(&t) * rotation_from_quat(&q);
        let f = matrix_to_vector(&e).normalize();
        let q_pert = {
            let dq = axis_angle_quat([0.0, 0.0, 1.0], 1e-3);
            let r = rotation_from_quat(&q) * rotation_from_quat(&dq);
            quat_from_rotation(&r)
        };
        let theta = theta_residual(&f, &q_pert, &t, &Intrinsics::identity());
        assert!(theta.norm() > 1e-5, "theta norm {}", theta.norm());
    }

    #[test]
    fn motion_constructor_applies_gauges() {
        let m = CameraMotion::new(
            Vector4::new(-2.0, 0.0, 0.0, 0.0),
            Vector3::new(0.0, 3.0, 0.0),
            MotionCovariance::zeros(),
        )
        .unwrap();
        assert_relative_eq!(m.q, Vector4::new(1.0, 0.0, 0.0, 0.0), epsilon = 1e-15);
        assert_relative_eq!(m.t.norm(), 1.0, epsilon = 1e-15);
        assert!(CameraMotion::new(
            Vector4::zeros(),
            Vector3::new(1.0, 0.0, 0.0),
            MotionCovariance::zeros()
        )
        .is_err());
    }

    #[test]
    fn fundamental_model_validation() {
        let q = axis_angle_quat([0.2, 1.0, 0.1], 0.1);
        let t = Vector3::new(1.0, 0.15, 0.1).normalize();
        let e = skew(&t) * rotation_from_quat(&q);
        let f = matrix_to_vector(&e).normalize();
        assert!(FundamentalModel::new(f, ModelCovariance::zeros()).is_ok());
        // not unit norm
        assert!(matches!(
            FundamentalModel::new(f * 2.0, ModelCovariance::zeros()),
            Err(TypeError::NotUnitNorm(_))
        ));
        // full-rank matrix is rejected
        let full = matrix_to_vector(&Matrix3::<f64>::identity()).normalize();
        assert!(matches!(
            FundamentalModel::new(full, ModelCovariance::zeros()),
            Err(TypeError::NotRankTwo(_))
        ));
        // asymmetric covariance is rejected
        let mut cov = ModelCovariance::zeros();
        cov[(0, 1)] = 1.0;
        assert!(matches!(
            FundamentalModel::new(f, cov),
            Err(TypeError::NotSymmetric)
        ));
        // indefinite covariance is rejected
        let mut cov = ModelCovariance::identity();
        cov[(3, 3)] = -1.0;
        assert!(matches!(
            FundamentalModel::new(f, cov),
            Err(TypeError::NotPsd(_))
        ));
    }

    proptest! {
        #[test]
        fn quaternion_rotation_round_trip(
            ax in -1.0f64..1.0, ay in -1.0f64..1.0, az in 0.05f64..1.0,
            angle in 0.01f64..3.0,
        ) {
            let q = axis_angle_quat([ax, ay, az], angle);
            let r = rotation_from_quat(&q);
            let q2 = quat_from_rotation(&r);
            let d = (q - q2).norm().min((q + q2).norm());
            prop_assert!(d < 1e-9, "round trip error {}", d);
            prop_assert!(q2[0] >= 0.0);
        }

        #[test]
        fn theta_scale_invariant_in_f(
            scale in 0.1f64..10.0,
            angle in 0.02f64..0.5,
        ) {
            let q = axis_angle_quat([0.1, 0.9, -0.3], angle);
            let t = Vector3::new(0.7, 0.4, -0.2).normalize();
            let e = skew(&t) * rotation_from_quat(&q);
            let f = matrix_to_vector(&e).normalize();
            let k = Intrinsics::identity();
            let theta_unit = theta_residual(&f, &q, &t, &k);
            let theta_scaled = theta_residual(&(f * scale), &q, &t, &k);
            prop_assert!((theta_unit - theta_scaled).norm() < 1e-11);
            prop_assert!(theta_scaled.norm() < 1e-11);
        }
    }
}
