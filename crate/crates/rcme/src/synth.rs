//! Synthetic two-view scene generation with ground truth. Serves both as
//! the correctness oracle for the estimator tests and as the benchmark
//! workload.
//!
//! Scenes are generated by sampling 3D points inside the first camera's
//! frustum, projecting them into both views, and corrupting them with
//! isotropic Gaussian pixel noise. Outliers replace the second-view point
//! with a uniform in-image point kept far enough from the true epipolar
//! line that the labels are unambiguous under the inlier test. The image
//! domain is `[0, 2*cx] x [0, 2*cy]` (principal point at the center).

use nalgebra::{Vector2, Vector3, Vector4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::scalar::{cast, Scalar};
use crate::types::{
    quat_from_rotation, rotation_from_quat, skew, CameraMotion, Correspondence, Intrinsics,
    MotionCovariance,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SynthError {
    #[error("outlier ratio must lie in [0, 1), got {0}")]
    InvalidOutlierRatio(f64),
    #[error("depth range must satisfy 0 < near < far")]
    InvalidDepthRange,
    #[error("sigma must be non-negative and finite")]
    InvalidSigma,
    #[error("scene infeasible: could not place points visible in both views")]
    InfeasibleScene,
}

/// Image-plane distribution of the generated feature locations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PointDistribution<T: Scalar> {
    /// Uniform over the image.
    Uniform,
    /// Gaussian clusters around uniformly placed centers; emulates the
    /// uneven feature coverage of low-texture or poorly lit scenes.
    Clustered { n_clusters: usize, cluster_sigma_px: T },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneConfig<T: Scalar> {
    pub n_points: usize,
    pub outlier_ratio: T,
    /// Pixel noise standard deviation applied during generation. May be
    /// zero for exact scenes (the estimator's assumed noise model is a
    /// separate input).
    pub sigma: T,
    /// Ground-truth motion `(q, t)`; `t` is normalized to unit length.
    pub q_true: Vector4<T>,
    pub t_true: Vector3<T>,
    pub intrinsics: Intrinsics<T>,
    pub depth_range: (T, T),
    pub distribution: PointDistribution<T>,
    pub rng_seed: u64,
}

impl<T: Scalar> SceneConfig<T> {
    /// Canonical test scene: 640x480 image with fx = fy = 500, a 5 degree
    /// rotation about a mixed axis, a mostly lateral unit baseline, and
    /// depths spanning 4-12 baseline units.
    pub fn canonical() -> Self {
        let axis = Vector3::new(cast::<T>(0.2), T::one(), cast::<T>(0.1)).normalize();
        let half = cast::<T>(5.0f64.to_radians() / 2.0);
        let q = Vector4::new(half.cos(), axis.x * half.sin(), axis.y * half.sin(), axis.z * half.sin());
        Self {
            n_points: 200,
            outlier_ratio: T::zero(),
            sigma: cast(0.5),
            q_true: q,
            t_true: Vector3::new(T::one(), cast(0.15), cast(0.1)).normalize(),
            intrinsics: Intrinsics::new(cast(500.0), cast(500.0), cast(320.0), cast(240.0), T::zero())
                .expect("valid canonical intrinsics"),
            depth_range: (cast(4.0), cast(12.0)),
            distribution: PointDistribution::Uniform,
            rng_seed: 0,
        }
    }
}

/// A generated scene: correspondences, per-point inlier labels, and the
/// ground-truth motion (zero covariance).
#[derive(Debug, Clone, PartialEq)]
pub struct Scene<T: Scalar> {
    pub correspondences: Vec<Correspondence<T>>,
    /// `true` marks an inlier.
    pub inlier_labels: Vec<bool>,
    pub motion: CameraMotion<T>,
    /// Ground-truth 3D points in the first camera frame (outlier entries
    /// keep the point that generated their first-view location).
    pub points: Vec<Vector3<T>>,
}

impl<T: Scalar> Scene<T> {
    pub fn n_outliers(&self) -> usize {
        self.inlier_labels.iter().filter(|&&l| !l).count()
    }
}

/// Draws a standard normal variate by the Box-Muller transform; generic via
/// an f64 draw so scenes are identical across scalar types.
pub(crate) fn std_normal<T: Scalar, R: Rng + ?Sized>(rng: &mut R) -> T {
    let u1: f64 = rng.random::<f64>().max(1e-300);
    let u2: f64 = rng.random::<f64>();
    cast((-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos())
}

fn validate<T: Scalar>(config: &SceneConfig<T>) -> Result<(), SynthError> {
    if !(config.outlier_ratio >= T::zero() && config.outlier_ratio < T::one()) {
        return Err(SynthError::InvalidOutlierRatio(
            config.outlier_ratio.to_subset().unwrap_or(f64::NAN),
        ));
    }
    if !(config.depth_range.0 > T::zero() && config.depth_range.1 > config.depth_range.0) {
        return Err(SynthError::InvalidDepthRange);
    }
    if !(config.sigma >= T::zero() && config.sigma.finite()) {
        return Err(SynthError::InvalidSigma);
    }
    Ok(())
}

const MAX_ATTEMPTS_PER_POINT: usize = 20_000;

struct Sampler<'a, T: Scalar> {
    config: &'a SceneConfig<T>,
    width: T,
    height: T,
    centers: Vec<Vector2<T>>,
}

impl<'a, T: Scalar> Sampler<'a, T> {
    fn new(config: &'a SceneConfig<T>, rng: &mut ChaCha8Rng) -> Self {
        let width = config.intrinsics.cx * cast(2.0);
        let height = config.intrinsics.cy * cast(2.0);
        let centers = match config.distribution {
            PointDistribution::Uniform => Vec::new(),
            PointDistribution::Clustered { n_clusters, .. } => (0..n_clusters.max(1))
                .map(|_| {
                    Vector2::new(
                        cast::<T>(rng.random::<f64>()) * width,
                        cast::<T>(rng.random::<f64>()) * height,
                    )
                })
                .collect(),
        };
        Self { config, width, height, centers }
    }

    fn in_bounds(&self, p: &Vector2<T>) -> bool {
        p.x >= T::zero() && p.x <= self.width && p.y >= T::zero() && p.y <= self.height
    }

    fn image_point(&self, rng: &mut ChaCha8Rng) -> Vector2<T> {
        match self.config.distribution {
            PointDistribution::Uniform => Vector2::new(
                cast::<T>(rng.random::<f64>()) * self.width,
                cast::<T>(rng.random::<f64>()) * self.height,
            ),
            PointDistribution::Clustered { cluster_sigma_px, .. } => {
                let c = self.centers[rng.random_range(0..self.centers.len())];
                Vector2::new(
                    c.x + std_normal::<T, _>(rng) * cluster_sigma_px,
                    c.y + std_normal::<T, _>(rng) * cluster_sigma_px,
                )
            }
        }
    }

    fn uniform_point(&self, rng: &mut ChaCha8Rng) -> Vector2<T> {
        Vector2::new(
            cast::<T>(rng.random::<f64>()) * self.width,
            cast::<T>(rng.random::<f64>()) * self.height,
        )
    }
}

/// Generates a scene with labeled inliers/outliers and ground-truth motion.
///
/// Exactly `round(outlier_ratio * n_points)` correspondences are outliers;
/// their second-view points are rejection-sampled to sit at least
/// `5 * sigma * sqrt(F3^-1(0.95))` pixels from the true epipolar line, so
/// label/test agreement is guaranteed with margin.
pub fn generate<T: Scalar>(config: &SceneConfig<T>) -> Result<Scene<T>, SynthError> {
    validate(config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    let sampler = Sampler::new(config, &mut rng);

    let k = config.intrinsics.matrix();
    let k_inv = config.intrinsics.inverse_matrix();
    let r = rotation_from_quat(&config.q_true);
    let t = config.t_true.normalize();
    let n = config.n_points;

    // true geometry
    let mut pts1 = Vec::with_capacity(n);
    let mut pts2 = Vec::with_capacity(n);
    let mut points3d = Vec::with_capacity(n);
    for _ in 0..n {
        let mut placed = false;
        for _ in 0..MAX_ATTEMPTS_PER_POINT {
            let u = sampler.image_point(&mut rng);
            if !sampler.in_bounds(&u) {
                continue;
            }
            let z = config.depth_range.0
                + cast::<T>(rng.random::<f64>()) * (config.depth_range.1 - config.depth_range.0);
            let x3 = k_inv * Vector3::new(u.x, u.y, T::one()) * z;
            let y3 = r * x3 + t;
            if y3.z <= cast(1e-6) {
                continue;
            }
            let v = Vector2::new(
                (k * y3).x / (k * y3).z,
                (k * y3).y / (k * y3).z,
            );
            if !sampler.in_bounds(&v) {
                continue;
            }
            pts1.push(u);
            pts2.push(v);
            points3d.push(x3);
            placed = true;
            break;
        }
        if !placed {
            return Err(SynthError::InfeasibleScene);
        }
    }

    // measurement noise
    let mut correspondences: Vec<Correspondence<T>> = (0..n)
        .map(|i| {
            let noise = |rng: &mut ChaCha8Rng| -> Vector2<T> {
                if config.sigma > T::zero() {
                    Vector2::new(
                        std_normal::<T, _>(rng) * config.sigma,
                        std_normal::<T, _>(rng) * config.sigma,
                    )
                } else {
                    Vector2::zeros()
                }
            };
            let n1 = noise(&mut rng);
            let n2 = noise(&mut rng);
            Correspondence::new(pts1[i] + n1, pts2[i] + n2)
        })
        .collect();

    // outliers
    let n_out = {
        let exact = config.outlier_ratio * cast::<T>(n as f64);
        (exact + cast(0.5)).floor().to_subset().unwrap_or(0.0) as usize
    };
    let mut labels = vec![true; n];
    let f_true = k_inv.transpose() * skew(&t) * r * k_inv;
    let margin = {
        let thresh = crate::stats::chi2_inv_cdf(3, cast::<T>(0.95))
            .expect("chi2 quantile at fixed probability");
        (cast::<T>(5.0) * config.sigma * thresh.sqrt()).max(cast(1e-6))
    };
    let outlier_indices = rand::seq::index::sample(&mut rng, n, n_out);
    for idx in outlier_indices.iter() {
        labels[idx] = false;
        let x_h = correspondences[idx].x_h();
        let line = f_true * x_h;
        let grad = (line.x * line.x + line.y * line.y).sqrt();
        let mut placed = false;
        for _ in 0..MAX_ATTEMPTS_PER_POINT {
            let v = sampler.uniform_point(&mut rng);
            let dist = (line.dot(&Vector3::new(v.x, v.y, T::one()))).abs() / grad;
            if dist >= margin {
                correspondences[idx].xp = v;
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(SynthError::InfeasibleScene);
        }
    }

    let motion = CameraMotion {
        q: quat_from_rotation(&r),
        t,
        cov_p: MotionCovariance::zeros(),
    };
    Ok(Scene { correspondences, inlier_labels: labels, motion, points: points3d })
}

/// Generates pure-chance correspondences: both views sampled independently
/// and uniformly over the image. No motion explains such data beyond
/// coincidence; this is the all-outlier stress input.
pub fn generate_unstructured<T: Scalar>(
    n: usize,
    intrinsics: &Intrinsics<T>,
    rng_seed: u64,
) -> Vec<Correspondence<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let width = intrinsics.cx * cast::<T>(2.0);
    let height = intrinsics.cy * cast::<T>(2.0);
    (0..n)
        .map(|_| {
            let mut p = || {
                Vector2::new(
                    cast::<T>(rng.random::<f64>()) * width,
                    cast::<T>(rng.random::<f64>()) * height,
                )
            };
            Correspondence::new(p(), p())
        })
        .collect()
}

/// Generates a scene whose 3D points all lie on one plane `n . X = d`
/// (camera-1 frame). Used to exercise scene-degenerate inputs.
pub fn generate_planar<T: Scalar>(
    config: &SceneConfig<T>,
    plane_normal: Vector3<T>,
    plane_d: T,
) -> Result<Scene<T>, SynthError> {
    validate(config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    let sampler = Sampler::new(config, &mut rng);
    let k = config.intrinsics.matrix();
    let k_inv = config.intrinsics.inverse_matrix();
    let r = rotation_from_quat(&config.q_true);
    let t = config.t_true.normalize();
    let nrm = plane_normal.normalize();

    let mut correspondences = Vec::with_capacity(config.n_points);
    let mut points3d = Vec::with_capacity(config.n_points);
    for _ in 0..config.n_points {
        let mut placed = false;
        for _ in 0..MAX_ATTEMPTS_PER_POINT {
            let u = sampler.image_point(&mut rng);
            if !sampler.in_bounds(&u) {
                continue;
            }
            let ray = k_inv * Vector3::new(u.x, u.y, T::one());
            let denom = nrm.dot(&ray);
            if denom.abs() < cast(1e-9) {
                continue;
            }
            let depth = plane_d / denom;
            if depth < config.depth_range.0 || depth > config.depth_range.1 {
                continue;
            }
            let x3 = ray * depth;
            let y3 = r * x3 + t;
            if y3.z <= cast(1e-6) {
                continue;
            }
            let h = k * y3;
            let v = Vector2::new(h.x / h.z, h.y / h.z);
            if !sampler.in_bounds(&v) {
                continue;
            }
            let noise = |rng: &mut ChaCha8Rng| -> Vector2<T> {
                if config.sigma > T::zero() {
                    Vector2::new(
                        std_normal::<T, _>(rng) * config.sigma,
                        std_normal::<T, _>(rng) * config.sigma,
                    )
                } else {
                    Vector2::zeros()
                }
            };
            let (n1, n2) = (noise(&mut rng), noise(&mut rng));
            correspondences.push(Correspondence::new(u + n1, v + n2));
            points3d.push(x3);
            placed = true;
            break;
        }
        if !placed {
            return Err(SynthError::InfeasibleScene);
        }
    }
    let motion = CameraMotion {
        q: quat_from_rotation(&r),
        t,
        cov_p: MotionCovariance::zeros(),
    };
    Ok(Scene {
        inlier_labels: vec![true; correspondences.len()],
        correspondences,
        motion,
        points: points3d,
    })
}

/// Generates correspondences under a pure rotation (no parallax): the
/// motion-degenerate case where the epipolar geometry is undefined.
pub fn generate_pure_rotation<T: Scalar>(
    config: &SceneConfig<T>,
) -> Result<Vec<Correspondence<T>>, SynthError> {
    validate(config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    let sampler = Sampler::new(config, &mut rng);
    let k = config.intrinsics.matrix();
    let k_inv = config.intrinsics.inverse_matrix();
    let h = k * rotation_from_quat(&config.q_true) * k_inv;

    let mut out = Vec::with_capacity(config.n_points);
    for _ in 0..config.n_points {
        let mut placed = false;
        for _ in 0..MAX_ATTEMPTS_PER_POINT {
            let u = sampler.image_point(&mut rng);
            if !sampler.in_bounds(&u) {
                continue;
            }
            let m = h * Vector3::new(u.x, u.y, T::one());
            if m.z <= cast(1e-9) {
                continue;
            }
            let v = Vector2::new(m.x / m.z, m.y / m.z);
            if !sampler.in_bounds(&v) {
                continue;
            }
            let noise = |rng: &mut ChaCha8Rng| -> Vector2<T> {
                if config.sigma > T::zero() {
                    Vector2::new(
                        std_normal::<T, _>(rng) * config.sigma,
                        std_normal::<T, _>(rng) * config.sigma,
                    )
                } else {
                    Vector2::zeros()
                }
            };
            let (n1, n2) = (noise(&mut rng), noise(&mut rng));
            out.push(Correspondence::new(u + n1, v + n2));
            placed = true;
            break;
        }
        if !placed {
            return Err(SynthError::InfeasibleScene);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn exact_outlier_count() {
        let mut config = SceneConfig::<f64>::canonical();
        config.outlier_ratio = 0.4;
        config.rng_seed = 7;
        let scene = generate(&config).unwrap();
        assert_eq!(scene.n_outliers(), 80);
        assert_eq!(scene.correspondences.len(), 200);
    }

    #[test]
    fn noiseless_scene_satisfies_epipolar_constraint_exactly() {
        let mut config = SceneConfig::<f64>::canonical();
        config.sigma = 0.0;
        config.rng_seed = 3;
        let scene = generate(&config).unwrap();
        let f = scene.motion.fundamental(&config.intrinsics);
        let f = f / f.norm();
        for c in &scene.correspondences {
            let eps = (c.xp_h().transpose() * f * c.x_h())[0];
            assert!(eps.abs() < 1e-10, "epipolar residual {eps}");
        }
    }

    #[test]
    fn true_projections_stay_in_bounds() {
        let mut config = SceneConfig::<f64>::canonical();
        config.sigma = 0.0;
        config.n_points = 500;
        config.rng_seed = 11;
        let scene = generate(&config).unwrap();
        for c in &scene.correspondences {
            assert!(c.x.x >= 0.0 && c.x.x <= 640.0 && c.x.y >= 0.0 && c.x.y <= 480.0);
            assert!(c.xp.x >= 0.0 && c.xp.x <= 640.0 && c.xp.y >= 0.0 && c.xp.y <= 480.0);
        }
    }

    #[test]
    fn outliers_clear_the_inlier_threshold_with_margin() {
        let mut config = SceneConfig::<f64>::canonical();
        config.outlier_ratio = 0.4;
        config.rng_seed = 19;
        let scene = generate(&config).unwrap();
        let f = scene.motion.fundamental(&config.intrinsics);
        let thresh = config.sigma * crate::stats::chi2_inv_cdf(3, 0.95f64).unwrap().sqrt();
        for (c, &inl) in scene.correspondences.iter().zip(&scene.inlier_labels) {
            if inl {
                continue;
            }
            let fx = f * c.x_h();
            let ftxp = f.transpose() * c.xp_h();
            let eps = c.xp_h().dot(&fx);
            let n2 = fx.x * fx.x + fx.y * fx.y + ftxp.x * ftxp.x + ftxp.y * ftxp.y;
            let sampson_dist = (eps * eps / n2).sqrt();
            assert!(
                sampson_dist > thresh,
                "outlier with sampson distance {sampson_dist} below {thresh}"
            );
        }
    }

    #[test]
    fn identical_seed_reproduces_scene_exactly() {
        let mut config = SceneConfig::<f64>::canonical();
        config.outlier_ratio = 0.25;
        config.distribution = PointDistribution::Clustered { n_clusters: 4, cluster_sigma_px: 40.0 };
        config.rng_seed = 424242;
        let a = generate(&config).unwrap();
        let b = generate(&config).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn infeasible_scene_is_rejected() {
        let mut config = SceneConfig::<f64>::canonical();
        // half-turn rotation: everything in front of camera 1 lands behind camera 2
        config.q_true = Vector4::new(0.0, 0.0, 1.0, 0.0);
        config.n_points = 4;
        assert_eq!(generate(&config), Err(SynthError::InfeasibleScene));
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut config = SceneConfig::<f64>::canonical();
        config.outlier_ratio = 1.0;
        assert!(matches!(generate(&config), Err(SynthError::InvalidOutlierRatio(_))));
        let mut config = SceneConfig::<f64>::canonical();
        config.depth_range = (5.0, 2.0);
        assert_eq!(generate(&config), Err(SynthError::InvalidDepthRange));
    }

    #[test]
    fn planar_scene_points_lie_on_the_plane() {
        let mut config = SceneConfig::<f64>::canonical();
        config.sigma = 0.0;
        config.n_points = 30;
        config.depth_range = (2.0, 50.0);
        let normal = Vector3::new(0.1, -0.2, 1.0);
        let d = 8.0;
        let scene = generate_planar(&config, normal, d).unwrap();
        let n_unit = normal.normalize();
        for p in &scene.points {
            assert_relative_eq!(n_unit.dot(p), d, epsilon = 1e-9);
        }
    }

    #[test]
    fn pure_rotation_matches_homography() {
        let mut config = SceneConfig::<f64>::canonical();
        config.sigma = 0.0;
        config.n_points = 25;
        let cs = generate_pure_rotation(&config).unwrap();
        let k = config.intrinsics.matrix();
        let h = k * rotation_from_quat(&config.q_true) * config.intrinsics.inverse_matrix();
        for c in &cs {
            let m = h * c.x_h();
            assert_relative_eq!(c.xp.x, m.x / m.z, epsilon = 1e-9);
            assert_relative_eq!(c.xp.y, m.y / m.z, epsilon = 1e-9);
        }
    }
}
