//! First-order covariance propagation: pixel noise -> fundamental model
//! (overdetermined 8-point parameterization) -> camera motion.

use nalgebra::{SMatrix, SVector, Vector3, Vector4};

use super::FmatrixError;
use crate::scalar::{cast, Scalar};
use crate::types::{
    matrix_to_vector, rotation_from_quat, rotation_jacobian_quat, skew, vector_to_matrix,
    Correspondence, Intrinsics, ModelCovariance, MotionCovariance, NoiseModel,
};

/// First 8 columns of the Householder matrix of the unit model vector: an
/// orthonormal basis of the hyperplane perpendicular to `f`.
pub fn householder_basis<T: Scalar>(f: &SVector<T, 9>) -> SMatrix<T, 9, 8> {
    let sign = if f[8] >= T::zero() { T::one() } else { -T::one() };
    let mut v = *f;
    v[8] += sign * f.norm();
    let h = SMatrix::<T, 9, 9>::identity() - v * v.transpose() * (cast::<T>(2.0) / v.norm_squared());
    h.fixed_view::<9, 8>(0, 0).into_owned()
}

/// Covariance of the 8-point model vector for the overdetermined
/// parameterization:
/// `Sigma_f = A (A^T (J^T Sigma_X^-1 J) A)^-1 A^T`,
/// with `A` the Householder tangent basis at `f` and `J` the Jacobian of the
/// Sampson-corrected measurement map over the instantiating sample (the
/// stack of `X_k - delta_k(f)`).
///
/// The result is symmetric PSD with `f` in its null space and scales as
/// `sigma^2`.
pub fn cov_f_overdetermined<T: Scalar>(
    samples: &[Correspondence<T>],
    f: &SVector<T, 9>,
    noise: &NoiseModel<T>,
) -> Result<ModelCovariance<T>, FmatrixError> {
    let fm = vector_to_matrix(f);
    // J^T J accumulated per sample; the correction map rows are -d delta/df,
    // and the sign cancels in the normal matrix
    let mut jtj = SMatrix::<T, 9, 9>::zeros();
    for c in samples {
        let j = super::sampson::model_jacobian_at(&fm, c)?;
        jtj += j.transpose() * j;
    }
    let sigma2 = noise.sigma * noise.sigma;
    let a = householder_basis(f);
    let inner = a.transpose() * jtj * a / sigma2;
    let inner_inv = inner
        .cholesky()
        .ok_or(FmatrixError::IllConditionedSample)?
        .inverse();
    let cov = a * inner_inv * a.transpose();
    Ok((cov + cov.transpose()) * cast::<T>(0.5))
}

/// Partial derivatives of the motion-consistency residual
/// `Theta(f, p) = s K^T F K - [t]x R(q)` (vectorized to 9 rows, row-major)
/// with respect to the model vector and the motion, with the least-squares
/// scale `s(f, p)` differentiated through.
pub fn theta_partials<T: Scalar>(
    f: &SVector<T, 9>,
    q: &Vector4<T>,
    t: &Vector3<T>,
    intrinsics: &Intrinsics<T>,
) -> (SMatrix<T, 9, 9>, SMatrix<T, 9, 7>) {
    let k = intrinsics.matrix();
    let m = matrix_to_vector(&(k.transpose() * vector_to_matrix(f) * k));

    // linear map f -> vec(K^T F K)
    let mut l = SMatrix::<T, 9, 9>::zeros();
    for idx in 0..9 {
        let mut basis = SVector::<T, 9>::zeros();
        basis[idx] = T::one();
        let col = matrix_to_vector(&(k.transpose() * vector_to_matrix(&basis) * k));
        l.set_column(idx, &col);
    }

    let r = rotation_from_quat(q);
    let g = matrix_to_vector(&(skew(t) * r));
    let mm = m.norm_squared();
    let mg = m.dot(&g);
    let s = mg / mm;

    // dTheta/df = s L + m (ds/df)^T
    let ds_df = (l.transpose() * g * mm - l.transpose() * m * (mg + mg)) / (mm * mm);
    let d_theta_df = l * s + m * ds_df.transpose();

    // dg/dp
    let mut dg_dp = SMatrix::<T, 9, 7>::zeros();
    let dr = rotation_jacobian_quat(q);
    let tx = skew(t);
    for (i, dr_i) in dr.iter().enumerate() {
        dg_dp.set_column(i, &matrix_to_vector(&(tx * dr_i)));
    }
    for i in 0..3 {
        let mut e = Vector3::zeros();
        e[i] = T::one();
        dg_dp.set_column(4 + i, &matrix_to_vector(&(skew(&e) * r)));
    }
    // dTheta/dp = m (ds/dp)^T - dg/dp
    let ds_dp = dg_dp.transpose() * m / mm;
    let d_theta_dp = m * ds_dp.transpose() - dg_dp;

    (d_theta_df, d_theta_dp)
}

/// Covariance of the recovered motion: `Sigma_p = J_p Sigma_f J_p^T` with
/// `J_p = -(dTheta/dp)^+ (dTheta/df)`.
///
/// The pseudo-inverse truncates the two smallest singular values of
/// `dTheta/dp`: on a consistent `(f, p)` pair these are the exact null
/// directions of the quaternion-scale and translation-scale gauges. A rank
/// deficit beyond those two directions is an error.
pub fn cov_p<T: Scalar>(
    f: &SVector<T, 9>,
    cov_f: &ModelCovariance<T>,
    q: &Vector4<T>,
    t: &Vector3<T>,
    intrinsics: &Intrinsics<T>,
) -> Result<MotionCovariance<T>, FmatrixError> {
    let (d_theta_df, d_theta_dp) = theta_partials(f, q, t, intrinsics);
    let svd = d_theta_dp.svd(true, true);
    let sv = svd.singular_values;
    if sv[4] < cast::<T>(1e-9) * sv[0] {
        return Err(FmatrixError::RankDeficientMotionJacobian(
            (sv[4] / sv[0]).to_subset().unwrap_or(f64::NAN),
        ));
    }
    let u = svd.u.expect("requested U");
    let v_t = svd.v_t.expect("requested V^T");
    let mut pinv = SMatrix::<T, 7, 9>::zeros();
    for i in 0..5 {
        pinv += v_t.row(i).transpose() * u.column(i).transpose() / sv[i];
    }
    let j_p = -pinv * d_theta_df;
    let cov = j_p * cov_f * j_p.transpose();
    Ok((cov + cov.transpose()) * cast::<T>(0.5))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fmatrix::{decompose_to_motion, estimate_f_8point};
    use crate::synth::{generate, SceneConfig};
    use crate::types::theta_residual;
    use nalgebra::Vector2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sample_scene(seed: u64, sigma: f64) -> (SceneConfig<f64>, crate::synth::Scene<f64>) {
        let mut config = SceneConfig::<f64>::canonical();
        config.sigma = sigma;
        config.n_points = 8;
        config.rng_seed = seed;
        let scene = generate(&config).unwrap();
        (config, scene)
    }

    #[test]
    fn householder_columns_are_orthonormal_and_perpendicular() {
        let f = SVector::<f64, 9>::from_row_slice(&[0.1, -0.4, 0.2, 0.7, 0.05, -0.3, 0.2, 0.1, 0.4])
            .normalize();
        let a = householder_basis(&f);
        let gram = a.transpose() * a;
        assert!((gram - SMatrix::<f64, 8, 8>::identity()).norm() < 1e-13);
        assert!((a.transpose() * f).norm() < 1e-13);
    }

    #[test]
    fn model_covariance_scales_with_noise_variance() {
        let (_, scene) = sample_scene(31, 0.0);
        let f = estimate_f_8point(&scene.correspondences).unwrap();
        let cov_quarter =
            cov_f_overdetermined(&scene.correspondences, &f, &NoiseModel::new(0.25).unwrap())
                .unwrap();
        let cov_half =
            cov_f_overdetermined(&scene.correspondences, &f, &NoiseModel::new(0.5).unwrap())
                .unwrap();
        let ratio = cov_half.norm() / cov_quarter.norm();
        assert!((ratio - 4.0).abs() < 0.04, "ratio {ratio}");
        assert!((cov_half - cov_quarter * 4.0).norm() < 1e-10 * cov_half.norm());
    }

    #[test]
    fn model_vector_lies_in_covariance_null_space() {
        let (_, scene) = sample_scene(32, 0.5);
        let f = estimate_f_8point(&scene.correspondences).unwrap();
        let cov = cov_f_overdetermined(&scene.correspondences, &f, &NoiseModel::new(0.5).unwrap())
            .unwrap();
        let quad = (f.transpose() * cov * f)[0].abs();
        assert!(quad < 1e-12 * cov.trace(), "f^T cov f = {quad:e}");
    }

    #[test]
    fn ill_conditioned_sample_is_signaled() {
        // all eight correspondences at nearly the same location
        let c = Correspondence::new(Vector2::new(100.0, 100.0), Vector2::new(101.0, 100.5));
        let samples = vec![c; 8];
        let f = SVector::<f64, 9>::from_row_slice(&[0.0, -0.3, 0.2, 0.3, 0.0, -0.5, -0.2, 0.5, 0.0])
            .normalize();
        assert!(matches!(
            cov_f_overdetermined(&samples, &f, &NoiseModel::new(0.5).unwrap()),
            Err(FmatrixError::IllConditionedSample)
        ));
    }

    #[test]
    fn theta_partials_match_finite_differences() {
        let (config, scene) = sample_scene(35, 0.4);
        let f = estimate_f_8point(&scene.correspondences).unwrap();
        let (q, t, _) = decompose_to_motion(&f, &config.intrinsics, &scene.correspondences).unwrap();
        let (d_f, d_p) = theta_partials(&f, &q, &t, &config.intrinsics);
        let h = 1e-6;
        let theta_vec = |f: &SVector<f64, 9>, q: &Vector4<f64>, t: &Vector3<f64>| {
            matrix_to_vector(&theta_residual(f, q, t, &config.intrinsics))
        };
        // the intrinsics amplify the model entries very unevenly; scale
        // each step so the perturbation is unit-sized in the K^T F K frame
        let k_mat = config.intrinsics.matrix();
        for i in 0..9 {
            let mut basis = SVector::<f64, 9>::zeros();
            basis[i] = 1.0;
            let amplification =
                (k_mat.transpose() * crate::types::vector_to_matrix(&basis) * k_mat).norm();
            let hi = h / amplification.max(1.0);
            let mut fp = f;
            let mut fm = f;
            fp[i] += hi;
            fm[i] -= hi;
            let fd = (theta_vec(&fp, &q, &t) - theta_vec(&fm, &q, &t)) / (2.0 * hi);
            let col = d_f.column(i);
            assert!(
                (col - fd).norm() / fd.norm().max(1e-8) < 1e-4,
                "dTheta/df col {i}"
            );
        }
        for i in 0..7 {
            let (mut qp, mut tp) = (q, t);
            let (mut qm, mut tm) = (q, t);
            if i < 4 {
                qp[i] += h;
                qm[i] -= h;
            } else {
                tp[i - 4] += h;
                tm[i - 4] -= h;
            }
            let fd = (theta_vec(&f, &qp, &tp) - theta_vec(&f, &qm, &tm)) / (2.0 * h);
            let col = d_p.column(i);
            assert!(
                (col - fd).norm() / fd.norm().max(1e-8) < 1e-4,
                "dTheta/dp col {i}"
            );
        }
    }

    #[test]
    fn zero_model_covariance_propagates_to_zero_motion_covariance() {
        let (config, scene) = sample_scene(40, 0.3);
        let f = estimate_f_8point(&scene.correspondences).unwrap();
        let (q, t, _) = decompose_to_motion(&f, &config.intrinsics, &scene.correspondences).unwrap();
        let cov = cov_p(&f, &ModelCovariance::zeros(), &q, &t, &config.intrinsics).unwrap();
        assert_eq!(cov, MotionCovariance::zeros());
    }

    #[test]
    fn motion_covariance_is_symmetric_psd() {
        let (config, scene) = sample_scene(41, 0.5);
        let f = estimate_f_8point(&scene.correspondences).unwrap();
        let (q, t, _) = decompose_to_motion(&f, &config.intrinsics, &scene.correspondences).unwrap();
        let cov_f = cov_f_overdetermined(&scene.correspondences, &f, &NoiseModel::new(0.5).unwrap())
            .unwrap();
        let cov = cov_p(&f, &cov_f, &q, &t, &config.intrinsics).unwrap();
        assert!((cov - cov.transpose()).norm() < 1e-12 * cov.norm().max(1.0));
        let eig = nalgebra::DMatrix::from_fn(7, 7, |i, j| cov[(i, j)]).symmetric_eigenvalues();
        let lmax = eig.iter().cloned().fold(0.0f64, f64::max);
        let lmin = eig.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(lmin > -1e-10 * lmax, "lmin {lmin:e} lmax {lmax:e}");
    }

    /// The propagated motion Jacobian agrees with central finite differences
    /// of the full decomposition map on exactly consistent (f, p) pairs.
    #[test]
    fn motion_jacobian_matches_decomposition_map() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let config = SceneConfig::<f64>::canonical();
        let k = &config.intrinsics;
        let mut worst = 0.0f64;
        for trial in 0..10 {
            // random consistent pair
            let axis = Vector3::new(
                rng.random::<f64>() - 0.5,
                rng.random::<f64>() - 0.5,
                rng.random::<f64>() - 0.5,
            )
            .normalize();
            let ang = 0.03 + 0.25 * rng.random::<f64>();
            let q0 = {
                let (s, c) = ((ang / 2.0).sin(), (ang / 2.0).cos());
                let mut q = Vector4::new(c, s * axis.x, s * axis.y, s * axis.z);
                if q[0] < 0.0 {
                    q = -q;
                }
                q
            };
            let t0 = Vector3::new(
                rng.random::<f64>() - 0.2,
                rng.random::<f64>() - 0.5,
                0.3 * (rng.random::<f64>() - 0.5),
            )
            .normalize();
            let mut scene_config = config.clone();
            scene_config.q_true = q0;
            scene_config.t_true = t0;
            scene_config.sigma = 0.0;
            scene_config.n_points = 8;
            scene_config.rng_seed = 1000 + trial;
            let scene = match generate(&scene_config) {
                Ok(s) => s,
                Err(_) => continue, // infeasible random geometry
            };
            let ki = k.inverse_matrix();
            let fm = ki.transpose() * skew(&t0) * rotation_from_quat(&q0) * ki;
            let f0 = matrix_to_vector(&fm).normalize();

            let (d_f, d_p) = theta_partials(&f0, &q0, &t0, k);
            let svd = d_p.svd(true, true);
            let sv = svd.singular_values;
            // both gauge directions are exactly null on consistent pairs
            assert!(sv[5] / sv[0] < 1e-8 && sv[6] / sv[0] < 1e-8, "svals {sv:?}");
            let u = svd.u.unwrap();
            let v_t = svd.v_t.unwrap();
            let mut pinv = SMatrix::<f64, 7, 9>::zeros();
            for i in 0..5 {
                pinv += v_t.row(i).transpose() * u.column(i).transpose() / sv[i];
            }
            let j_p = -pinv * d_f;

            let map = |f: &SVector<f64, 9>| -> SVector<f64, 7> {
                let (mut q, mut t, _) =
                    decompose_to_motion(f, k, &scene.correspondences).expect("decomposable");
                if q.dot(&q0) < 0.0 {
                    q = -q;
                }
                if t.dot(&t0) < 0.0 {
                    t = -t;
                }
                SVector::<f64, 7>::from_iterator(q.iter().chain(t.iter()).cloned())
            };
            let h = 1e-7;
            let mut fd = SMatrix::<f64, 7, 9>::zeros();
            for i in 0..9 {
                let mut fp = f0;
                let mut fm_ = f0;
                fp[i] += h;
                fm_[i] -= h;
                fd.set_column(i, &((map(&fp) - map(&fm_)) / (2.0 * h)));
            }
            let scale = fd.iter().cloned().fold(0.0f64, |a, b| a.max(b.abs()));
            let err = (j_p - fd).iter().cloned().fold(0.0f64, |a, b| a.max(b.abs())) / scale;
            worst = worst.max(err);
        }
        assert!(worst < 1e-4, "worst rel error {worst:e}");
    }
}
