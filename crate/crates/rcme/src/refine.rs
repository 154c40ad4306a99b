//! Model refinement: linear triangulation, maximum-likelihood motion
//! refinement by two-view bundle adjustment (Levenberg-Marquardt over the
//! motion and all inlier structure jointly, dense solve), and the
//! support-consistency failure metric comparing inlier counts before and
//! after refinement.

use nalgebra::{DMatrix, DVector, Matrix3, SMatrix, Vector2, Vector3, Vector4};
use thiserror::Error;

use crate::scalar::{cast, Scalar};
use crate::stats::chi2_inv_cdf;
use crate::types::{
    rotation_from_quat, skew, CameraMotion, Correspondence, Intrinsics, NoiseModel,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RefineError {
    #[error("triangulation degenerate: point at infinity or rank-deficient ray pencil")]
    PointAtInfinity,
    #[error("refinement needs at least 8 triangulable inliers, got {0}")]
    TooFewInliers(usize),
}

/// Levenberg-Marquardt settings for [`mle_refine`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LmConfig<T: Scalar> {
    pub max_iters: usize,
    /// Stop when an accepted step decreases the cost by less than this
    /// relative amount.
    pub rel_tol: T,
    pub lambda_init: T,
    pub lambda_factor: T,
    pub lambda_max: T,
    /// Costs at or below this value (noise-normalized squared pixels) count
    /// as exactly converged.
    pub cost_floor: T,
}

impl<T: Scalar> Default for LmConfig<T> {
    fn default() -> Self {
        Self {
            max_iters: 100,
            rel_tol: cast(1e-8),
            lambda_init: cast(1e-3),
            lambda_factor: cast(10.0),
            lambda_max: cast(1e10),
            cost_floor: cast(1e-14),
        }
    }
}

/// Output of [`mle_refine`].
#[derive(Debug, Clone, PartialEq)]
pub struct RefinedMotion<T: Scalar> {
    pub motion: CameraMotion<T>,
    /// Refined structure: index into the inlier slice plus the 3D point,
    /// for the inliers whose initial triangulation succeeded.
    pub points: Vec<(usize, Vector3<T>)>,
    pub initial_cost: T,
    pub final_cost: T,
    pub accepted_steps: usize,
}

/// Refinement outcome combined with the failure metric.
#[derive(Debug, Clone, PartialEq)]
pub struct RefinedSolution<T: Scalar> {
    pub motion: CameraMotion<T>,
    pub points3d: Vec<(usize, Vector3<T>)>,
    /// Inliers consistent with the pre-refinement motion.
    pub n_before: usize,
    /// Inliers consistent with the refined motion.
    pub n_after: usize,
    pub failed: bool,
}

/// Linear DLT triangulation under the cameras `K [I | 0]` and `K [R | t]`.
/// Returns `None` for degenerate ray pencils and points at infinity.
pub(crate) fn triangulate_rt<T: Scalar>(
    c: &Correspondence<T>,
    r: &Matrix3<T>,
    t: &Vector3<T>,
    intrinsics: &Intrinsics<T>,
) -> Option<Vector3<T>> {
    let k = intrinsics.matrix();
    let p2_rot = k * r;
    let p2_t = k * t;

    // rows of A: x * P.row(2) - P.row(0), y * P.row(2) - P.row(1) per view
    let mut a = SMatrix::<T, 4, 4>::zeros();
    let fill = |a: &mut SMatrix<T, 4, 4>, row: usize, coeff: T, prow: usize, rot: &Matrix3<T>, tr: &Vector3<T>| {
        for col in 0..3 {
            a[(row, col)] = coeff * rot[(2, col)] - rot[(prow, col)];
        }
        a[(row, 3)] = coeff * tr[2] - tr[prow];
    };
    fill(&mut a, 0, c.x.x, 0, &k, &Vector3::zeros());
    fill(&mut a, 1, c.x.y, 1, &k, &Vector3::zeros());
    fill(&mut a, 2, c.xp.x, 0, &p2_rot, &p2_t);
    fill(&mut a, 3, c.xp.y, 1, &p2_rot, &p2_t);

    let svd = a.svd(false, true);
    let sv = svd.singular_values;
    if sv[2] < cast::<T>(1e-9) * sv[0] {
        return None;
    }
    let v_t = svd.v_t.expect("requested V^T");
    let h = v_t.row(3);
    let w = h[3];
    let norm = (h[0] * h[0] + h[1] * h[1] + h[2] * h[2] + w * w).sqrt();
    if w.abs() < cast::<T>(1e-12) * norm {
        return None;
    }
    Some(Vector3::new(h[0] / w, h[1] / w, h[2] / w))
}

/// Linear DLT triangulation solved inhomogeneously (unit last homogeneous
/// coordinate) through 3x3 normal equations. Used for cheirality voting,
/// where only the depth signs matter and points near infinity may simply
/// abstain.
pub(crate) fn triangulate_rt_fast<T: Scalar>(
    c: &Correspondence<T>,
    r: &Matrix3<T>,
    t: &Vector3<T>,
    intrinsics: &Intrinsics<T>,
) -> Option<Vector3<T>> {
    let k = intrinsics.matrix();
    let p2_rot = k * r;
    let p2_t = k * t;

    let mut a = SMatrix::<T, 4, 3>::zeros();
    let mut b = SMatrix::<T, 4, 1>::zeros();
    let mut fill = |row: usize, coeff: T, prow: usize, rot: &Matrix3<T>, tr: &Vector3<T>| {
        for col in 0..3 {
            a[(row, col)] = coeff * rot[(2, col)] - rot[(prow, col)];
        }
        b[row] = tr[prow] - coeff * tr[2];
    };
    fill(0, c.x.x, 0, &k, &Vector3::zeros());
    fill(1, c.x.y, 1, &k, &Vector3::zeros());
    fill(2, c.xp.x, 0, &p2_rot, &p2_t);
    fill(3, c.xp.y, 1, &p2_rot, &p2_t);

    let ata = a.transpose() * a;
    let atb = a.transpose() * b;
    let chol = ata.cholesky()?;
    let x = chol.solve(&atb);
    let p = Vector3::new(x[0], x[1], x[2]);
    if !p.x.finite() || !p.y.finite() || !p.z.finite() {
        return None;
    }
    Some(p)
}

/// Triangulates one correspondence under the given motion; the 3D point is
/// expressed in the first camera frame and minimizes the algebraic DLT
/// error.
pub fn triangulate<T: Scalar>(
    c: &Correspondence<T>,
    motion: &CameraMotion<T>,
    intrinsics: &Intrinsics<T>,
) -> Result<Vector3<T>, RefineError> {
    triangulate_rt(c, &motion.rotation(), &motion.t, intrinsics).ok_or(RefineError::PointAtInfinity)
}

/// Derivative of the pixel projection `pi(K y)` with respect to the camera
/// point `y` (2x3), together with the projection itself.
fn projection_jacobian<T: Scalar>(
    k: &Matrix3<T>,
    y: &Vector3<T>,
) -> (Vector2<T>, SMatrix<T, 2, 3>) {
    let p = k * y;
    let inv_z = T::one() / p.z;
    let u = Vector2::new(p.x * inv_z, p.y * inv_z);
    let mut jac = SMatrix::<T, 2, 3>::zeros();
    for col in 0..3 {
        jac[(0, col)] = (k[(0, col)] - u.x * k[(2, col)]) * inv_z;
        jac[(1, col)] = (k[(1, col)] - u.y * k[(2, col)]) * inv_z;
    }
    (u, jac)
}

fn quat_mul<T: Scalar>(a: &Vector4<T>, b: &Vector4<T>) -> Vector4<T> {
    Vector4::new(
        a[0] * b[0] - a[1] * b[1] - a[2] * b[2] - a[3] * b[3],
        a[0] * b[1] + a[1] * b[0] + a[2] * b[3] - a[3] * b[2],
        a[0] * b[2] - a[1] * b[3] + a[2] * b[0] + a[3] * b[1],
        a[0] * b[3] + a[1] * b[2] - a[2] * b[1] + a[3] * b[0],
    )
}

fn quat_exp<T: Scalar>(theta: &Vector3<T>) -> Vector4<T> {
    let angle = theta.norm();
    if angle < cast(1e-12) {
        let half = *theta * cast::<T>(0.5);
        return Vector4::new(T::one(), half.x, half.y, half.z).normalize();
    }
    let half = angle * cast::<T>(0.5);
    let axis = theta / angle;
    Vector4::new(
        half.cos(),
        axis.x * half.sin(),
        axis.y * half.sin(),
        axis.z * half.sin(),
    )
}

struct BaState<T: Scalar> {
    q: Vector4<T>,
    t: Vector3<T>,
    points: Vec<Vector3<T>>,
}

impl<T: Scalar> BaState<T> {
    /// Applies a step `[d_theta; d_t; d_points]`, renormalizing the gauges:
    /// the quaternion through a local tangent update and the baseline by the
    /// joint (t, X) rescaling that leaves every reprojection unchanged.
    fn stepped(&self, dx: &DVector<T>) -> Self {
        let d_theta = Vector3::new(dx[0], dx[1], dx[2]);
        let q = {
            let mut q = quat_mul(&self.q, &quat_exp(&d_theta)).normalize();
            if q[0] < T::zero() {
                q = -q;
            }
            q
        };
        let t_new = self.t + Vector3::new(dx[3], dx[4], dx[5]);
        let scale = t_new.norm();
        let t = t_new / scale;
        let points = self
            .points
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let base = 6 + 3 * i;
                (p + Vector3::new(dx[base], dx[base + 1], dx[base + 2])) / scale
            })
            .collect();
        Self { q, t, points }
    }

    fn cost(&self, obs: &[Correspondence<T>], k: &Matrix3<T>, inv_var: T) -> T {
        let r = rotation_from_quat(&self.q);
        let mut acc = T::zero();
        for (c, p) in obs.iter().zip(&self.points) {
            let u1 = {
                let h = k * p;
                Vector2::new(h.x / h.z, h.y / h.z)
            };
            let y = r * p + self.t;
            let u2 = {
                let h = k * y;
                Vector2::new(h.x / h.z, h.y / h.z)
            };
            acc += (c.x - u1).norm_squared() + (c.xp - u2).norm_squared();
        }
        acc * inv_var
    }
}

/// Jointly refines the motion and all inlier 3D points by minimizing the
/// sum of squared reprojection errors in both views (weighted by the noise
/// variance), with a multiplicative-damping Levenberg-Marquardt loop and a
/// dense normal-equation solve.
///
/// `q` stays unit through local 3-parameter tangent updates; `t` is
/// renormalized to unit length after every step with the structure rescaled
/// jointly, so accepted costs are unaffected by the gauge. A step that
/// cannot decrease the cost even at maximal damping terminates the loop
/// with the best state found so far.
pub fn mle_refine<T: Scalar>(
    motion: &CameraMotion<T>,
    inliers: &[Correspondence<T>],
    intrinsics: &Intrinsics<T>,
    noise: &NoiseModel<T>,
    config: &LmConfig<T>,
) -> Result<RefinedMotion<T>, RefineError> {
    let mut used = Vec::new();
    let mut points = Vec::new();
    for (i, c) in inliers.iter().enumerate() {
        if let Some(p) = triangulate_rt(c, &motion.rotation(), &motion.t, intrinsics) {
            used.push(i);
            points.push(p);
        }
    }
    if points.len() < 8 {
        return Err(RefineError::TooFewInliers(points.len()));
    }
    let obs: Vec<Correspondence<T>> = used.iter().map(|&i| inliers[i]).collect();
    let k = intrinsics.matrix();
    let inv_var = T::one() / (noise.sigma * noise.sigma);

    let mut state = BaState {
        q: motion.q,
        t: motion.t,
        points,
    };
    let n = obs.len();
    let dim = 6 + 3 * n;
    let mut cost = state.cost(&obs, &k, inv_var);
    let initial_cost = cost;
    let mut lambda = config.lambda_init;
    let mut accepted_steps = 0usize;

    let mut hessian = DMatrix::<T>::zeros(dim, dim);
    let mut gradient = DVector::<T>::zeros(dim);
    let mut dirty = true;

    for _ in 0..config.max_iters {
        if cost <= config.cost_floor {
            break;
        }
        if dirty {
            hessian.fill(T::zero());
            gradient.fill(T::zero());
            let r = rotation_from_quat(&state.q);
            for (i, (c, p)) in obs.iter().zip(&state.points).enumerate() {
                let (u1, jac1) = projection_jacobian(&k, p);
                let r1 = c.x - u1;
                let a1 = -jac1; // d r1 / d X

                let y = r * p + state.t;
                let (u2, jac2) = projection_jacobian(&k, &y);
                let r2 = c.xp - u2;
                let a2 = -jac2 * r; // d r2 / d X
                let d_theta = jac2 * r * skew(p); // d r2 / d theta
                let d_t = -jac2; // d r2 / d t

                let base = 6 + 3 * i;
                // pose-pose block
                let mut b = SMatrix::<T, 2, 6>::zeros();
                b.fixed_view_mut::<2, 3>(0, 0).copy_from(&d_theta);
                b.fixed_view_mut::<2, 3>(0, 3).copy_from(&d_t);
                let btb = b.transpose() * b * inv_var;
                for rr in 0..6 {
                    for cc in 0..6 {
                        hessian[(rr, cc)] += btb[(rr, cc)];
                    }
                }
                // point-point block
                let ctc = (a1.transpose() * a1 + a2.transpose() * a2) * inv_var;
                for rr in 0..3 {
                    for cc in 0..3 {
                        hessian[(base + rr, base + cc)] += ctc[(rr, cc)];
                    }
                }
                // cross block
                let e = b.transpose() * a2 * inv_var;
                for rr in 0..6 {
                    for cc in 0..3 {
                        hessian[(rr, base + cc)] += e[(rr, cc)];
                        hessian[(base + cc, rr)] += e[(rr, cc)];
                    }
                }
                // gradient
                let gp = (b.transpose() * r2) * inv_var;
                for rr in 0..6 {
                    gradient[rr] += gp[rr];
                }
                let gx = (a1.transpose() * r1 + a2.transpose() * r2) * inv_var;
                for rr in 0..3 {
                    gradient[base + rr] += gx[rr];
                }
            }
            dirty = false;
        }

        // damped solve: (H + lambda I) dx = -g
        let mut damped = hessian.clone();
        for i in 0..dim {
            damped[(i, i)] += lambda;
        }
        let step = match damped.cholesky() {
            Some(chol) => chol.solve(&(-&gradient)),
            None => {
                lambda *= config.lambda_factor;
                if lambda > config.lambda_max {
                    break;
                }
                continue;
            }
        };
        let candidate = state.stepped(&step);
        let new_cost = candidate.cost(&obs, &k, inv_var);
        if new_cost < cost {
            let rel_decrease = (cost - new_cost) / cost;
            state = candidate;
            cost = new_cost;
            accepted_steps += 1;
            lambda = (lambda / config.lambda_factor).max(cast(1e-12));
            dirty = true;
            if rel_decrease < config.rel_tol {
                break;
            }
        } else {
            lambda *= config.lambda_factor;
            if lambda > config.lambda_max {
                break;
            }
        }
    }

    let motion_out = CameraMotion {
        q: state.q,
        t: state.t,
        cov_p: motion.cov_p,
    };
    Ok(RefinedMotion {
        motion: motion_out,
        points: used.into_iter().zip(state.points).collect(),
        initial_cost,
        final_cost: cost,
        accepted_steps,
    })
}

/// Outcome of the support-consistency failure metric.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FailureMetric<T: Scalar> {
    pub n_before: usize,
    pub n_after: usize,
    pub failed: bool,
    pub tau_squared: T,
}

fn huber<T: Scalar>(e2: T, tau2: T) -> T {
    if e2 <= tau2 {
        e2
    } else {
        cast::<T>(2.0) * tau2.sqrt() * e2.sqrt() - tau2
    }
}

fn count_consistent<T: Scalar>(
    motion: &CameraMotion<T>,
    inliers: &[Correspondence<T>],
    intrinsics: &Intrinsics<T>,
    tau2: T,
) -> usize {
    let r = rotation_from_quat(&motion.q);
    let k = intrinsics.matrix();
    let mut n = 0usize;
    for c in inliers {
        let Some(p) = triangulate_rt(c, &r, &motion.t, intrinsics) else {
            continue;
        };
        let e1 = {
            let h = k * p;
            (c.x - Vector2::new(h.x / h.z, h.y / h.z)).norm_squared()
        };
        let e2 = {
            let y = r * p + motion.t;
            let h = k * y;
            (c.xp - Vector2::new(h.x / h.z, h.y / h.z)).norm_squared()
        };
        if huber(e1.max(e2), tau2) < tau2 {
            n += 1;
        }
    }
    n
}

/// The failure-metric classification rule: failed iff no pre-refinement
/// support exists or `n_after / n_before <= kappa` (inclusive).
pub fn failure_classification<T: Scalar>(n_before: usize, n_after: usize, kappa: T) -> bool {
    if n_before == 0 {
        return true;
    }
    cast::<T>(n_after as f64) / cast::<T>(n_before as f64) <= kappa
}

/// Re-evaluates the fixed inlier set against the motions before and after
/// refinement and classifies the solution.
///
/// A point counts as consistent when the Huber value of its larger
/// per-view squared reprojection error (against its own triangulation under
/// the respective motion) stays below `tau^2 = sigma^2 F_2^-1(1 - alpha)`;
/// the solution has failed when `n_after / n_before <= kappa` (or when no
/// point is consistent to begin with).
pub fn failure_metric<T: Scalar>(
    pre_motion: &CameraMotion<T>,
    post_motion: &CameraMotion<T>,
    inliers: &[Correspondence<T>],
    intrinsics: &Intrinsics<T>,
    noise: &NoiseModel<T>,
    alpha: T,
    kappa: T,
) -> FailureMetric<T> {
    let tau2 = noise.sigma
        * noise.sigma
        * chi2_inv_cdf(2, T::one() - alpha).expect("alpha validated upstream");
    let n_before = count_consistent(pre_motion, inliers, intrinsics, tau2);
    let n_after = count_consistent(post_motion, inliers, intrinsics, tau2);
    FailureMetric {
        n_before,
        n_after,
        failed: failure_classification(n_before, n_after, kappa),
        tau_squared: tau2,
    }
}

/// Runs [`mle_refine`] followed by [`failure_metric`] on the same inlier
/// set.
pub fn refine_and_score<T: Scalar>(
    motion: &CameraMotion<T>,
    inliers: &[Correspondence<T>],
    intrinsics: &Intrinsics<T>,
    noise: &NoiseModel<T>,
    alpha: T,
    kappa: T,
    config: &LmConfig<T>,
) -> Result<RefinedSolution<T>, RefineError> {
    let refined = mle_refine(motion, inliers, intrinsics, noise, config)?;
    let metric = failure_metric(motion, &refined.motion, inliers, intrinsics, noise, alpha, kappa);
    Ok(RefinedSolution {
        motion: refined.motion,
        points3d: refined.points,
        n_before: metric.n_before,
        n_after: metric.n_after,
        failed: metric.failed,
    })
}
