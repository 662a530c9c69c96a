//! Minimum-error threshold selection for a two-Gaussian mixture, and global
//! image binarization built on it.
//!
//! For a threshold T the misclassification error is
//!
//! E(T) = P1·E2(T) + P2·E1(T)
//!
//! where E1(T) is the fraction of object pixels at or below T and E2(T) the
//! fraction of background pixels above T. Setting dE/dT = 0 yields the
//! stationarity condition P1·p1(T) = P2·p2(T); taking logarithms turns it
//! into the quadratic
//!
//! A·T^2 + B·T + C = 0
//! A = sigma1^2 - sigma2^2
//! B = 2·(mu1·sigma2^2 - mu2·sigma1^2)
//! C = sigma1^2·mu2^2 - sigma2^2·mu1^2
//!     + 2·sigma1^2·sigma2^2·ln(sigma2·P1 / (sigma1·P2))
//!
//! With equal variances the quadratic degenerates and the threshold has the
//! closed form
//!
//! T = (mu1 + mu2)/2 + sigma^2/(mu1 - mu2) · ln(P2/P1)
//!
//! which reduces to the interval midpoint for equal priors.

use crate::error::{Error, Result};
use crate::image::{BinaryImage, GrayImage};
use crate::mixture::{validate_bimodal, BimodalMixture};

/// Variance difference below which the two sigmas count as equal.
const EQUAL_SIGMA_EPS: f64 = 1e-9;

/// Prior difference below which the two priors count as equal.
const EQUAL_PRIOR_EPS: f64 = 1e-12;

/// Slack when testing whether a root lies between the component means.
const ROOT_MARGIN: f64 = 1e-9;

/// Which solution path produced a threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ThresholdMethod {
    /// General case, root of the full quadratic.
    QuadraticRoot,
    /// Equal variances, closed-form solution with a prior correction.
    EqualSigma,
    /// Equal variances and equal priors, midpoint of the means.
    EqualPriorMidpoint,
}

/// Optimal threshold together with its expected error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThresholdResult {
    pub threshold: f64,
    /// Misclassified fraction E(T) at this threshold.
    pub expected_error: f64,
    pub method: ThresholdMethod,
}

/// Per-class and total misclassified fractions at a given threshold.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorBreakdown {
    /// E1(T): object pixels at or below the threshold.
    pub object_as_background: f64,
    /// E2(T): background pixels above the threshold.
    pub background_as_object: f64,
    /// E(T) = P1·E2(T) + P2·E1(T).
    pub total: f64,
}

/// Standard normal CDF.
#[inline]
fn std_normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

/// Standard normal upper tail Q(z) = 1 - CDF(z).
#[inline]
fn std_normal_tail(z: f64) -> f64 {
    0.5 * libm::erfc(z / std::f64::consts::SQRT_2)
}

/// Evaluate the misclassification error of a mixture at threshold `t`.
pub fn misclassification_error(m: &BimodalMixture, t: f64) -> ErrorBreakdown {
    let e1 = std_normal_cdf((t - m.object.mu) / m.object.sigma);
    let e2 = std_normal_tail((t - m.background.mu) / m.background.sigma);
    ErrorBreakdown {
        object_as_background: e1,
        background_as_object: e2,
        total: m.background.prior * e2 + m.object.prior * e1,
    }
}

/// Irreducible error of a mixture: the histogram mass shared by the two
/// weighted component densities, summed over the discrete levels.
pub fn overlap_error(m: &BimodalMixture) -> f64 {
    (0..crate::histogram::LEVELS)
        .map(|i| {
            let x = i as f64;
            m.background.weighted_density(x).min(m.object.weighted_density(x))
        })
        .sum()
}

/// Solve for the threshold between the component means that minimizes the
/// misclassification error.
///
/// Fails with [`Error::NoValidThreshold`] when the stationarity equation has
/// no real root, or no root between the means; the roots found, if any, ride
/// along for diagnostics.
pub fn solve_optimal(m: &BimodalMixture) -> Result<ThresholdResult> {
    let (bg, obj) = (&m.background, &m.object);
    if bg.mu >= obj.mu {
        return Err(Error::InvalidMixture(format!(
            "background mean {} not below object mean {}",
            bg.mu, obj.mu
        )));
    }
    let var1 = bg.sigma * bg.sigma;
    let var2 = obj.sigma * obj.sigma;
    let a = var1 - var2;

    if a.abs() < EQUAL_SIGMA_EPS {
        // Degenerate quadratic: closed-form threshold. The geometric mean of
        // the two (near-identical) variances stands in for sigma^2.
        let sigma_sq = bg.sigma * obj.sigma;
        let equal_priors = (bg.prior - obj.prior).abs() < EQUAL_PRIOR_EPS;
        let t = if equal_priors {
            0.5 * (bg.mu + obj.mu)
        } else {
            0.5 * (bg.mu + obj.mu)
                + sigma_sq / (bg.mu - obj.mu) * (obj.prior / bg.prior).ln()
        };
        if t < bg.mu - ROOT_MARGIN || t > obj.mu + ROOT_MARGIN {
            return Err(Error::NoValidThreshold { roots: Some((t, t)) });
        }
        let method = if equal_priors {
            ThresholdMethod::EqualPriorMidpoint
        } else {
            ThresholdMethod::EqualSigma
        };
        return Ok(ThresholdResult {
            threshold: t,
            expected_error: misclassification_error(m, t).total,
            method,
        });
    }

    let b = 2.0 * (bg.mu * var2 - obj.mu * var1);
    let c = var1 * obj.mu * obj.mu - var2 * bg.mu * bg.mu
        + 2.0 * var1 * var2 * ((obj.sigma * bg.prior) / (bg.sigma * obj.prior)).ln();
    let disc = b * b - 4.0 * a * c;
    if disc < 0.0 {
        return Err(Error::NoValidThreshold { roots: None });
    }

    // Citardauq-style evaluation: subtracting nearly equal quantities in the
    // textbook formula loses the root that matters when |A| is tiny.
    let q = -0.5 * (b + b.signum() * disc.sqrt());
    let r1 = q / a;
    let r2 = if q == 0.0 { r1 } else { c / q };
    let (lo, hi) = (r1.min(r2), r1.max(r2));

    let in_range = |t: f64| t >= bg.mu - ROOT_MARGIN && t <= obj.mu + ROOT_MARGIN;
    let candidates: Vec<f64> = if (lo - hi).abs() == 0.0 {
        vec![lo]
    } else {
        vec![lo, hi]
    };
    let mut best: Option<(f64, f64)> = None;
    for t in candidates.into_iter().filter(|&t| in_range(t)) {
        let e = misclassification_error(m, t).total;
        if best.map_or(true, |(_, be)| e < be) {
            best = Some((t, e));
        }
    }
    match best {
        Some((threshold, expected_error)) => Ok(ThresholdResult {
            threshold,
            expected_error,
            method: ThresholdMethod::QuadraticRoot,
        }),
        None => Err(Error::NoValidThreshold {
            roots: Some((lo, hi)),
        }),
    }
}

/// Classify every pixel against a threshold: 1 where the gray level exceeds
/// `t`, 0 otherwise.
pub fn binarize(image: &GrayImage, t: f64) -> BinaryImage {
    let pixels = image
        .pixels
        .iter()
        .map(|&p| u8::from(f64::from(p) > t))
        .collect();
    BinaryImage::new(image.width, image.height, pixels)
        .expect("binarize preserves the source geometry")
}

/// Whole-image pipeline: histogram, bimodality check, threshold, binarize.
pub fn global_binarize(
    image: &GrayImage,
    fit_tolerance: f64,
) -> Result<(BinaryImage, ThresholdResult)> {
    let h = crate::histogram::build_spatial(image, None)?;
    let mixture = validate_bimodal(&h, fit_tolerance).into_result()?;
    let result = solve_optimal(&mixture)?;
    Ok((binarize(image, result.threshold), result))
}
