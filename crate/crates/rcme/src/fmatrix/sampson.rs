//! Sampson error vectors with first-order covariance.
//!
//! For one correspondence `X = [x; xp]` and a motion `p = (q, t)`, the
//! epipolar residual is `eps = xp_h^T F(p) x_h` with
//! `F(p) = K^-T [t]x R(q) K^-1`. The Sampson correction
//! `delta = J_e^T (J_e J_e^T)^-1 eps` (with `J_e = d eps / d X`) moves the
//! correspondence onto the epipolar variety to first order; its covariance
//! combines the measurement noise and the motion uncertainty:
//! `cov_delta = J_dX Sigma_X J_dX^T + J_dp Sigma_p J_dp^T`.

use nalgebra::{Matrix3, Matrix4, SMatrix, SVector, Vector3, Vector4};

use super::FmatrixError;
use crate::scalar::{cast, Scalar};
use crate::types::{
    matrix_to_vector, rotation_from_quat, rotation_jacobian_quat, skew, Correspondence,
    Intrinsics, MotionCovariance, NoiseModel, SampsonResidual,
};

/// Derivative of `vec(F(p))` (row-major) with respect to `p = (q, t)`.
pub fn fundamental_jacobian_motion<T: Scalar>(
    q: &Vector4<T>,
    t: &Vector3<T>,
    intrinsics: &Intrinsics<T>,
) -> SMatrix<T, 9, 7> {
    let k_inv = intrinsics.inverse_matrix();
    let k_inv_t = k_inv.transpose();
    let r = rotation_from_quat(q);
    let dr = rotation_jacobian_quat(q);
    let tx = skew(t);

    let mut out = SMatrix::<T, 9, 7>::zeros();
    for (i, dr_i) in dr.iter().enumerate() {
        let df = k_inv_t * tx * dr_i * k_inv;
        out.set_column(i, &matrix_to_vector(&df));
    }
    for i in 0..3 {
        let mut e = Vector3::zeros();
        e[i] = T::one();
        let df = k_inv_t * skew(&e) * r * k_inv;
        out.set_column(4 + i, &matrix_to_vector(&df));
    }
    out
}

/// Per-model quantities shared by every correspondence evaluated against
/// one motion hypothesis: the pixel-frame fundamental matrix, the
/// model-induced part of the residual covariance, and the noise level.
#[derive(Debug, Clone)]
pub struct MotionContext<T: Scalar> {
    f_pix: Matrix3<T>,
    /// `(dF/dp) Sigma_p (dF/dp)^T`, or `None` when `Sigma_p = 0`.
    cov_f_from_motion: Option<SMatrix<T, 9, 9>>,
    sigma2: T,
}

impl<T: Scalar> MotionContext<T> {
    pub fn new(
        q: &Vector4<T>,
        t: &Vector3<T>,
        cov_p: &MotionCovariance<T>,
        intrinsics: &Intrinsics<T>,
        noise: &NoiseModel<T>,
    ) -> Self {
        let k_inv = intrinsics.inverse_matrix();
        let f_pix = k_inv.transpose() * skew(t) * rotation_from_quat(q) * k_inv;
        let cov_f_from_motion = if cov_p.norm() > T::zero() {
            let df_dp = fundamental_jacobian_motion(q, t, intrinsics);
            Some(df_dp * cov_p * df_dp.transpose())
        } else {
            None
        };
        Self {
            f_pix,
            cov_f_from_motion,
            sigma2: noise.sigma * noise.sigma,
        }
    }

    /// The pixel-frame fundamental matrix of the motion.
    pub fn fundamental(&self) -> &Matrix3<T> {
        &self.f_pix
    }

    /// Scalar first-order Sampson distance `|eps| / |J_e|` of a
    /// correspondence, the classic point-to-epipolar measure used by the
    /// fixed-threshold baseline.
    pub fn sampson_distance_squared(&self, c: &Correspondence<T>) -> Result<T, FmatrixError> {
        let parts = SampsonParts::new(&self.f_pix, c)?;
        Ok(parts.eps * parts.eps / parts.n2)
    }

    /// Full Sampson residual with covariance and Mahalanobis distance.
    ///
    /// Both Jacobians factor as `g a^T + s D` with a sparse `D`, so the
    /// covariance congruences are assembled from a handful of small
    /// products rather than dense 4x9-by-9x9 chains; this is the per-point
    /// hot path of the whole estimator.
    pub fn residual(&self, c: &Correspondence<T>) -> Result<SampsonResidual<T>, FmatrixError> {
        let parts = SampsonParts::new(&self.f_pix, c)?;
        let f = &self.f_pix;
        let g = parts.g;
        let (eps, n2) = (parts.eps, parts.n2);
        let s = eps / n2;
        let k2 = cast::<T>(2.0) * eps / (n2 * n2);

        // measurement term: JX = g b^T + s Dx with the symmetric sparse
        // Dx = [[0, M], [M^T, 0]], M the upper-left 2x2 block of F
        let (m00, m01, m10, m11) = (f[(0, 0)], f[(0, 1)], f[(1, 0)], f[(1, 1)]);
        let dx_g = Vector4::new(
            m00 * g[2] + m10 * g[3],
            m01 * g[2] + m11 * g[3],
            m00 * g[0] + m01 * g[1],
            m10 * g[0] + m11 * g[1],
        );
        let b = g / n2 - dx_g * k2;
        let w = Vector4::new(
            m00 * b[2] + m10 * b[3],
            m01 * b[2] + m11 * b[3],
            m00 * b[0] + m01 * b[1],
            m10 * b[0] + m11 * b[1],
        );
        // Dx^2 is block diagonal: diag(M M^T, M^T M)
        let mmt = [
            m00 * m00 + m01 * m01,
            m00 * m10 + m01 * m11,
            m10 * m10 + m11 * m11,
        ];
        let mtm = [
            m00 * m00 + m10 * m10,
            m00 * m01 + m10 * m11,
            m01 * m01 + m11 * m11,
        ];
        let bb = b.norm_squared();
        let s2 = s * s;
        let mut cov = Matrix4::zeros();
        for i in 0..4 {
            for j in i..4 {
                let mut v = bb * g[i] * g[j] + s * (g[i] * w[j] + w[i] * g[j]);
                v += s2
                    * match (i, j) {
                        (0, 0) => mtm[0],
                        (0, 1) => mtm[1],
                        (1, 1) => mtm[2],
                        (2, 2) => mmt[0],
                        (2, 3) => mmt[1],
                        (3, 3) => mmt[2],
                        _ => T::zero(),
                    };
                cov[(i, j)] = v * self.sigma2;
            }
        }

        // model term: JF = g a^T + s Df with Df the sparse score-gradient
        // pattern; contributes a^T M a, Df M a, and Df M Df^T pieces
        if let Some(mcov) = &self.cov_f_from_motion {
            let x_h = c.x_h();
            let xp_h = c.xp_h();
            let mut a = SVector::<T, 9>::zeros();
            for i in 0..3 {
                for j in 0..3 {
                    a[3 * i + j] = xp_h[i] * x_h[j] / n2;
                }
            }
            // subtract k2 * Df^T g
            a[0] -= k2 * (xp_h[0] * g[0] + x_h[0] * g[2]);
            a[1] -= k2 * (xp_h[0] * g[1] + x_h[1] * g[2]);
            a[2] -= k2 * (x_h[2] * g[2]);
            a[3] -= k2 * (xp_h[1] * g[0] + x_h[0] * g[3]);
            a[4] -= k2 * (xp_h[1] * g[1] + x_h[1] * g[3]);
            a[5] -= k2 * (x_h[2] * g[3]);
            a[6] -= k2 * (xp_h[2] * g[0]);
            a[7] -= k2 * (xp_h[2] * g[1]);

            let u = mcov * a;
            let alpha = a.dot(&u);
            // v = Df u ; rows of Df pick (0,3,6), (1,4,7), (0,1,2), (3,4,5)
            let v = Vector4::new(
                xp_h[0] * u[0] + xp_h[1] * u[3] + xp_h[2] * u[6],
                xp_h[0] * u[1] + xp_h[1] * u[4] + xp_h[2] * u[7],
                x_h[0] * u[0] + x_h[1] * u[1] + x_h[2] * u[2],
                x_h[0] * u[3] + x_h[1] * u[4] + x_h[2] * u[5],
            );
            // rows of Df M (4x9), then Df M Df^T
            let mut dfm = [[T::zero(); 9]; 4];
            for col in 0..9 {
                dfm[0][col] = xp_h[0] * mcov[(0, col)]
                    + xp_h[1] * mcov[(3, col)]
                    + xp_h[2] * mcov[(6, col)];
                dfm[1][col] = xp_h[0] * mcov[(1, col)]
                    + xp_h[1] * mcov[(4, col)]
                    + xp_h[2] * mcov[(7, col)];
                dfm[2][col] =
                    x_h[0] * mcov[(0, col)] + x_h[1] * mcov[(1, col)] + x_h[2] * mcov[(2, col)];
                dfm[3][col] =
                    x_h[0] * mcov[(3, col)] + x_h[1] * mcov[(4, col)] + x_h[2] * mcov[(5, col)];
            }
            let df_dot = |row: &[T; 9], j: usize| -> T {
                match j {
                    0 => xp_h[0] * row[0] + xp_h[1] * row[3] + xp_h[2] * row[6],
                    1 => xp_h[0] * row[1] + xp_h[1] * row[4] + xp_h[2] * row[7],
                    2 => x_h[0] * row[0] + x_h[1] * row[1] + x_h[2] * row[2],
                    _ => x_h[0] * row[3] + x_h[1] * row[4] + x_h[2] * row[5],
                }
            };
            for i in 0..4 {
                for j in i..4 {
                    cov[(i, j)] += alpha * g[i] * g[j]
                        + s * (g[i] * v[j] + v[i] * g[j])
                        + s2 * df_dot(&dfm[i], j);
                }
            }
        }
        for i in 0..4 {
            for j in 0..i {
                cov[(i, j)] = cov[(j, i)];
            }
        }

        // the rank-3 singular regime only arises without a motion term
        let assume_full_rank = self.cov_f_from_motion.is_some();
        let (mahal, cond) = mahalanobis(&parts.delta, &cov, assume_full_rank);
        Ok(SampsonResidual {
            delta: parts.delta,
            cov_delta: cov,
            mahal,
            cov_cond: cond,
        })
    }
}

/// Squared Mahalanobis distance via a symmetric solve.
///
/// A Cholesky factorization serves the well-conditioned case (any run with
/// a nonzero motion covariance). When it fails the covariance is singular
/// to round-off -- with zero motion covariance it is rank 3 by
/// construction, the variety constraint removing one degree of freedom --
/// and the solve falls back to a symmetric eigendecomposition that treats
/// eigenvalues at or below the numerical-rank cutoff `4 eps lambda_max` as
/// exact nulls. Returns the distance and the condition number over the
/// resolved eigenvalue range.
fn mahalanobis<T: Scalar>(delta: &Vector4<T>, cov: &Matrix4<T>, try_cholesky: bool) -> (T, T) {
    if try_cholesky {
        if let Some(chol) = (*cov).cholesky() {
            let l = chol.l_dirty();
            let dmax = (0..4).fold(T::zero(), |a, i| a.max(l[(i, i)]));
            let dmin = (0..4).fold(dmax, |a, i| a.min(l[(i, i)]));
            // defer to the rank-revealing eigen path when the factorization
            // is singular to round-off (Cholesky can succeed spuriously
            // there)
            let well_conditioned =
                dmin > T::zero() && dmin > dmax * (T::default_epsilon() * cast(64.0)).sqrt();
            if well_conditioned {
                // forward-substitute y = L^-1 delta; mahal = |y|^2
                let mut y = *delta;
                for i in 0..4 {
                    for j in 0..i {
                        let yj = y[j];
                        y[i] -= l[(i, j)] * yj;
                    }
                    y[i] /= l[(i, i)];
                }
                let mahal = y.norm_squared();
                return (mahal.max(T::zero()), (dmax / dmin) * (dmax / dmin));
            }
        }
    }
    let eig = (*cov).symmetric_eigen();
    let lmax = eig.eigenvalues.iter().cloned().fold(T::zero(), |a, b| a.max(b));
    if lmax <= T::zero() {
        return (T::zero(), T::one());
    }
    let cutoff = lmax * T::default_epsilon() * cast(4.0);
    let mut mahal = T::zero();
    let mut lmin_kept = lmax;
    for i in 0..4 {
        let l = eig.eigenvalues[i];
        if l > cutoff {
            let proj = eig.eigenvectors.column(i).dot(delta);
            mahal += proj * proj / l;
            lmin_kept = lmin_kept.min(l);
        }
    }
    (mahal.max(T::zero()), lmax / lmin_kept)
}

/// Stateless pieces of the Sampson computation at one correspondence.
struct SampsonParts<T: Scalar> {
    eps: T,
    g: Vector4<T>,
    n2: T,
    delta: Vector4<T>,
}

impl<T: Scalar> SampsonParts<T> {
    fn new(f: &Matrix3<T>, c: &Correspondence<T>) -> Result<Self, FmatrixError> {
        let fx = f * c.x_h();
        let ftxp = f.transpose() * c.xp_h();
        let eps = c.xp_h().dot(&fx);
        let g = Vector4::new(ftxp.x, ftxp.y, fx.x, fx.y);
        let n2 = g.norm_squared();
        if n2 < cast(1e-15) {
            return Err(FmatrixError::EpipoleDegenerate(
                n2.to_subset().unwrap_or(f64::NAN),
            ));
        }
        let delta = g * (eps / n2);
        Ok(Self { eps, g, n2, delta })
    }

    /// `d delta / d X` (4x4), at the measured point.
    fn jacobian_wrt_point(&self, f: &Matrix3<T>) -> Matrix4<T> {
        // dg/dX has the 2x2 blocks of F in anti-diagonal position
        let dg_dx = Matrix4::new(
            T::zero(),
            T::zero(),
            f[(0, 0)],
            f[(1, 0)],
            T::zero(),
            T::zero(),
            f[(0, 1)],
            f[(1, 1)],
            f[(0, 0)],
            f[(0, 1)],
            T::zero(),
            T::zero(),
            f[(1, 0)],
            f[(1, 1)],
            T::zero(),
            T::zero(),
        );
        let scale = self.eps / self.n2;
        let gt_dg = self.g.transpose() * dg_dx; // 1x4
        self.g * self.g.transpose() / self.n2 + dg_dx * scale
            - self.g * gt_dg * (cast::<T>(2.0) * self.eps / (self.n2 * self.n2))
    }

    /// `d delta / d vec(F)` (4x9, row-major model vector), at the measured
    /// point.
    fn jacobian_wrt_model(&self, c: &Correspondence<T>) -> SMatrix<T, 4, 9> {
        let x_h = c.x_h();
        let xp_h = c.xp_h();

        // d eps / d F_ij = xp_i x_j
        let mut de_df = SMatrix::<T, 1, 9>::zeros();
        for i in 0..3 {
            for j in 0..3 {
                de_df[(0, 3 * i + j)] = xp_h[i] * x_h[j];
            }
        }
        // d g / d F: g1,g2 pick up xp rows, g3,g4 pick up x columns
        let mut dg_df = SMatrix::<T, 4, 9>::zeros();
        for i in 0..3 {
            dg_df[(0, 3 * i)] = xp_h[i];
            dg_df[(1, 3 * i + 1)] = xp_h[i];
        }
        for j in 0..3 {
            dg_df[(2, j)] = x_h[j];
            dg_df[(3, 3 + j)] = x_h[j];
        }
        let scale = self.eps / self.n2;
        let gt_dg = self.g.transpose() * dg_df; // 1x9
        self.g * de_df / self.n2 + dg_df * scale
            - self.g * gt_dg * (cast::<T>(2.0) * self.eps / (self.n2 * self.n2))
    }
}

/// Squared scalar Sampson distance `eps^2 / |J_e|^2` of one correspondence
/// against a fundamental matrix, in squared pixels.
pub fn scalar_sampson_distance_squared<T: Scalar>(
    f: &Matrix3<T>,
    c: &Correspondence<T>,
) -> Result<T, FmatrixError> {
    let parts = SampsonParts::new(f, c)?;
    Ok(parts.eps * parts.eps / parts.n2)
}

/// The raw Sampson correction vector of one correspondence against a
/// fundamental matrix (no covariance attached).
pub fn sampson_correction<T: Scalar>(
    f: &Matrix3<T>,
    c: &Correspondence<T>,
) -> Result<Vector4<T>, FmatrixError> {
    Ok(SampsonParts::new(f, c)?.delta)
}

/// `d delta / d X` of one correspondence at a fixed model (4x4).
pub fn sampson_point_jacobian<T: Scalar>(
    f: &Matrix3<T>,
    c: &Correspondence<T>,
) -> Result<Matrix4<T>, FmatrixError> {
    let parts = SampsonParts::new(f, c)?;
    Ok(parts.jacobian_wrt_point(f))
}

/// `d delta / d vec(F)` of one correspondence at a fixed model (4x9,
/// row-major model vector).
pub fn sampson_model_jacobian<T: Scalar>(
    f: &Matrix3<T>,
    c: &Correspondence<T>,
) -> Result<SMatrix<T, 4, 9>, FmatrixError> {
    let parts = SampsonParts::new(f, c)?;
    Ok(parts.jacobian_wrt_model(c))
}

/// `d delta / d vec(F)` of one correspondence at a fixed model: the rows of
/// the Jacobian of the Sampson-corrected measurement map used by the
/// overdetermined model covariance.
pub(crate) fn model_jacobian_at<T: Scalar>(
    f: &Matrix3<T>,
    c: &Correspondence<T>,
) -> Result<SMatrix<T, 4, 9>, FmatrixError> {
    let parts = SampsonParts::new(f, c)?;
    Ok(parts.jacobian_wrt_model(c))
}

/// Sampson residual of one correspondence against one motion.
///
/// Thin wrapper over [`MotionContext`]; when evaluating many
/// correspondences against the same motion, build the context once.
pub fn sampson_residual<T: Scalar>(
    c: &Correspondence<T>,
    q: &Vector4<T>,
    t: &Vector3<T>,
    cov_p: &MotionCovariance<T>,
    intrinsics: &Intrinsics<T>,
    noise: &NoiseModel<T>,
) -> Result<SampsonResidual<T>, FmatrixError> {
    MotionContext::new(q, t, cov_p, intrinsics, noise).residual(c)
}
