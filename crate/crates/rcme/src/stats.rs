//! Statistical primitives: chi-square and standard-normal inverse CDFs,
//! differential entropy of a 4-variate Gaussian, and the Z statistic of the
//! inlier quality test.
//!
//! The chi-square CDF is evaluated through the regularized lower incomplete
//! gamma function (series expansion for small arguments, Lentz continued
//! fraction otherwise) and inverted with a bracketed Newton iteration. The
//! normal CDF reuses the same incomplete-gamma machinery, so the quantile
//! functions share one numerically verified core.

use nalgebra::Matrix4;
use thiserror::Error;

use crate::scalar::{cast, Scalar};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("probability must lie strictly inside (0, 1), got {0}")]
    ProbabilityOutOfRange(f64),
    #[error("degrees of freedom must be >= 1")]
    InvalidDof,
    #[error("series/continued fraction failed to converge")]
    NoConvergence,
    #[error("covariance determinant must be positive, got {0:e}")]
    DegenerateCovariance(f64),
    #[error("Z statistic needs at least two scores, got {0}")]
    TooFewScores(usize),
    #[error("Z statistic undefined for zero score variance")]
    ZeroVariance,
}

/// Test thresholds derived from one significance level.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SignificanceConfig<T: Scalar> {
    pub alpha: T,
    /// `F_3^-1(1 - alpha)`: sample-consistence and inlier tests.
    pub chi2_thresh_3dof: T,
    /// `F_2^-1(1 - alpha)`: reprojection consistence threshold of the
    /// failure metric.
    pub chi2_thresh_2dof: T,
    /// `F_1^-1(1 - alpha)`: scalar Sampson-distance threshold of the
    /// baseline estimator.
    pub chi2_thresh_1dof: T,
    /// `Phi^-1(1 - alpha)`: inlier quality Z test.
    pub z_thresh: T,
}

impl<T: Scalar> SignificanceConfig<T> {
    pub fn from_alpha(alpha: T) -> Result<Self, StatsError> {
        if !(alpha > T::zero() && alpha < T::one()) {
            return Err(StatsError::ProbabilityOutOfRange(
                alpha.to_subset().unwrap_or(f64::NAN),
            ));
        }
        let p = T::one() - alpha;
        Ok(Self {
            alpha,
            chi2_thresh_3dof: chi2_inv_cdf(3, p)?,
            chi2_thresh_2dof: chi2_inv_cdf(2, p)?,
            chi2_thresh_1dof: chi2_inv_cdf(1, p)?,
            z_thresh: normal_inv_cdf(p)?,
        })
    }
}

const MAX_ITER: usize = 300;

/// Natural log of the gamma function, Lanczos approximation (g = 7, n = 9).
/// Valid for x > 0; relative accuracy around 1e-14 for the arguments used
/// here (x >= 1/2).
fn ln_gamma<T: Scalar>(x: T) -> T {
    const COEFFS: [f64; 8] = [
        676.5203681218851,
        -1259.1392167224028,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507343278686905,
        -0.13857109526572012,
        9.984_369_578_019_572e-6,
        1.5056327351493116e-7,
    ];
    let z = x - T::one();
    let mut acc = cast::<T>(0.999_999_999_999_809_9);
    for (i, &c) in COEFFS.iter().enumerate() {
        acc += cast::<T>(c) / (z + cast(i as f64 + 1.0));
    }
    let t = z + cast(7.5);
    cast::<T>(0.918_938_533_204_672_8) // ln sqrt(2 pi)
        + (z + cast(0.5)) * t.ln()
        - t
        + acc.ln()
}

/// Regularized lower incomplete gamma function `P(a, x)`; requires `a > 0`,
/// `x >= 0`.
pub(crate) fn gamma_p<T: Scalar>(a: T, x: T) -> Result<T, StatsError> {
    Ok(gamma_pq(a, x)?.0)
}

/// Regularized upper incomplete gamma function `Q(a, x) = 1 - P(a, x)`.
pub(crate) fn gamma_q<T: Scalar>(a: T, x: T) -> Result<T, StatsError> {
    Ok(gamma_pq(a, x)?.1)
}

fn gamma_pq<T: Scalar>(a: T, x: T) -> Result<(T, T), StatsError> {
    if x == T::zero() {
        return Ok((T::zero(), T::one()));
    }
    let log_prefactor = -x + a * x.ln() - ln_gamma(a);
    let prefactor = log_prefactor.exp();
    if x < a + T::one() {
        // series for P
        let mut term = T::one() / a;
        let mut sum = term;
        let mut ap = a;
        for _ in 0..MAX_ITER {
            ap += T::one();
            term *= x / ap;
            sum += term;
            if term.abs() < sum.abs() * T::default_epsilon() {
                let p = prefactor * sum;
                return Ok((p, T::one() - p));
            }
        }
        Err(StatsError::NoConvergence)
    } else {
        // Lentz continued fraction for Q
        let tiny = cast::<T>(1e-30);
        let mut b = x + T::one() - a;
        let mut c = T::one() / tiny;
        let mut d = T::one() / b;
        let mut h = d;
        for i in 1..=MAX_ITER {
            let an = -cast::<T>(i as f64) * (cast::<T>(i as f64) - a);
            b += cast(2.0);
            d = an * d + b;
            if d.abs() < tiny {
                d = tiny;
            }
            c = b + an / c;
            if c.abs() < tiny {
                c = tiny;
            }
            d = T::one() / d;
            let del = d * c;
            h *= del;
            if (del - T::one()).abs() < T::default_epsilon() {
                let q = prefactor * h;
                return Ok((T::one() - q, q));
            }
        }
        Err(StatsError::NoConvergence)
    }
}

/// CDF of the chi-square distribution with `dof` degrees of freedom.
pub fn chi2_cdf<T: Scalar>(dof: u32, x: T) -> Result<T, StatsError> {
    if dof == 0 {
        return Err(StatsError::InvalidDof);
    }
    if x <= T::zero() {
        return Ok(T::zero());
    }
    let half = cast::<T>(0.5);
    gamma_p(cast::<T>(dof as f64) * half, x * half)
}

fn chi2_pdf<T: Scalar>(dof: u32, x: T) -> T {
    if x <= T::zero() {
        return T::zero();
    }
    let a = cast::<T>(dof as f64 / 2.0);
    let half = cast::<T>(0.5);
    ((a - T::one()) * x.ln() - x * half - a * cast::<T>(2.0).ln() - ln_gamma(a)).exp()
}

/// Quantile of the chi-square distribution: the `x` with `F_dof(x) = p`.
///
/// Bracketed Newton iteration on the regularized incomplete gamma, seeded by
/// the Wilson-Hilferty approximation; converges to relative accuracy near
/// machine precision.
pub fn chi2_inv_cdf<T: Scalar>(dof: u32, p: T) -> Result<T, StatsError> {
    if dof == 0 {
        return Err(StatsError::InvalidDof);
    }
    if !(p > T::zero() && p < T::one()) {
        return Err(StatsError::ProbabilityOutOfRange(
            p.to_subset().unwrap_or(f64::NAN),
        ));
    }
    let k = cast::<T>(dof as f64);
    // Wilson-Hilferty start
    let z = normal_inv_cdf(p)?;
    let two_over_9k = cast::<T>(2.0) / (cast::<T>(9.0) * k);
    let v = T::one() - two_over_9k + z * two_over_9k.sqrt();
    let mut x = if v > T::zero() { k * v * v * v } else { k * cast(0.1) };
    if x <= T::zero() {
        x = cast(1e-3);
    }

    // establish a bracket [lo, hi]
    let mut lo = T::zero();
    let mut hi = x.max(k) * cast(2.0);
    for _ in 0..200 {
        if chi2_cdf(dof, hi)? > p {
            break;
        }
        hi *= cast(2.0);
    }

    let tol = T::default_epsilon() * cast(32.0);
    for _ in 0..MAX_ITER {
        let err = chi2_cdf(dof, x)? - p;
        if err > T::zero() {
            hi = hi.min(x);
        } else {
            lo = lo.max(x);
        }
        let d = chi2_pdf(dof, x);
        let mut next = if d > T::zero() { x - err / d } else { x };
        if !(next > lo && next < hi) || !next.finite() {
            next = (lo + hi) * cast(0.5);
        }
        let step = (next - x).abs();
        x = next;
        if step <= tol * x.max(T::one()) {
            break;
        }
    }
    Ok(x)
}

/// CDF of the standard normal distribution, evaluated through the
/// regularized incomplete gamma function.
pub fn normal_cdf<T: Scalar>(x: T) -> Result<T, StatsError> {
    let half = cast::<T>(0.5);
    let arg = x * x * half;
    if x >= T::zero() {
        Ok(half * (T::one() + gamma_p(half, arg)?))
    } else {
        Ok(half * gamma_q(half, arg)?)
    }
}

/// Quantile of the standard normal distribution.
///
/// Rational starting estimate refined by Newton steps against the
/// incomplete-gamma normal CDF; absolute accuracy near machine precision.
pub fn normal_inv_cdf<T: Scalar>(p: T) -> Result<T, StatsError> {
    if !(p > T::zero() && p < T::one()) {
        return Err(StatsError::ProbabilityOutOfRange(
            p.to_subset().unwrap_or(f64::NAN),
        ));
    }
    let half = cast::<T>(0.5);
    if p == half {
        return Ok(T::zero());
    }
    let tail = p.min(T::one() - p);
    // Abramowitz-Stegun 26.2.23 rational estimate for the upper tail.
    let t = (-cast::<T>(2.0) * tail.ln()).sqrt();
    let num = cast::<T>(2.515517) + t * (cast::<T>(0.802853) + t * cast::<T>(0.010328));
    let den = T::one()
        + t * (cast::<T>(1.432788) + t * (cast::<T>(0.189269) + t * cast::<T>(0.001308)));
    let mut x = t - num / den;
    if p < half {
        x = -x;
    }

    let inv_sqrt_2pi = cast::<T>(0.398_942_280_401_432_7);
    for _ in 0..8 {
        let err = normal_cdf(x)? - p;
        let pdf = inv_sqrt_2pi * (-x * x * half).exp();
        if pdf == T::zero() {
            break;
        }
        let step = err / pdf;
        x -= step;
        if step.abs() <= T::default_epsilon() * cast::<T>(8.0) * x.abs().max(T::one()) {
            break;
        }
    }
    Ok(x)
}

/// Differential entropy of a 4-variate Gaussian with the given covariance:
/// `0.5 * ln((2 pi)^4 e^4 |cov|)`, in nats.
pub fn gaussian_diff_entropy<T: Scalar>(cov: &Matrix4<T>) -> Result<T, StatsError> {
    let det = cov.determinant();
    if !(det > T::zero() && det.finite()) {
        return Err(StatsError::DegenerateCovariance(
            det.to_subset().unwrap_or(f64::NAN),
        ));
    }
    let two = cast::<T>(2.0);
    Ok(two * T::two_pi().ln() + two + det.ln() * cast(0.5))
}

/// Z statistic of the inlier quality test: `(psi - mu) / (s / sqrt(n))`
/// with `psi` the signed mean of the scores and `s` the sample standard
/// deviation (n-1 denominator).
///
/// Returns `(z, psi, s)`.
pub fn z_statistic<T: Scalar>(scores: &[T], mu: T) -> Result<(T, T, T), StatsError> {
    let n = scores.len();
    if n < 2 {
        return Err(StatsError::TooFewScores(n));
    }
    let nf = cast::<T>(n as f64);
    let psi = scores.iter().fold(T::zero(), |a, &b| a + b) / nf;
    let ss = scores
        .iter()
        .fold(T::zero(), |a, &b| a + (b - psi) * (b - psi));
    let s = (ss / (nf - T::one())).sqrt();
    if s <= T::zero() || !s.finite() {
        return Err(StatsError::ZeroVariance);
    }
    Ok(((psi - mu) / (s / nf.sqrt()), psi, s))
}

/// Signed mean and (n-1)-denominator standard deviation of a score vector.
/// Zero-variance vectors are allowed here; the quality test applies its own
/// convention for them.
pub fn mean_and_std<T: Scalar>(scores: &[T]) -> (T, T) {
    let nf = cast::<T>(scores.len() as f64);
    let psi = scores.iter().fold(T::zero(), |a, &b| a + b) / nf;
    if scores.len() < 2 {
        return (psi, T::zero());
    }
    let ss = scores
        .iter()
        .fold(T::zero(), |a, &b| a + (b - psi) * (b - psi));
    (psi, (ss / (nf - T::one())).sqrt())
}
