//! Two-component Gaussian mixture model of a bimodal gray-level histogram.
//!
//! The darker component is the background, the brighter one the object; the
//! priors are the a-priori class probabilities and sum to 1. The mixture
//! density is
//!
//! p(x) = P1·p1(x) + P2·p2(x),  pi = N(mu_i, sigma_i)
//!
//! [`fit_bimodal`] estimates the five free parameters from a histogram with
//! an iterative split-and-refit scheme, [`fit_quality`] measures the
//! mean-square error between the fitted density and the normalized
//! histogram, and [`validate_bimodal`] combines both into an accept/reject
//! decision for the bimodality assumption.

use crate::error::{Error, Result};
use crate::global_threshold::solve_optimal;
use crate::histogram::{self, Histogram, LEVELS};

/// Lower bound on component standard deviations, in levels.
///
/// A class that collapses into a single bin still carries sub-quantization
/// spread; flooring sigma here keeps the threshold equation solvable.
pub const SIGMA_FLOOR: f64 = 0.25;

/// Default mean-square-error tolerance accepted by [`validate_bimodal`].
pub const DEFAULT_FIT_TOLERANCE: f64 = 1e-4;

/// Iteration cap for the split-and-refit loop.
const MAX_FIT_ITERATIONS: usize = 100;

/// Split movement (in levels) below which the fit counts as converged.
const FIT_CONVERGENCE: f64 = 0.5;

/// One Gaussian population: mean level, standard deviation, and prior.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianComponent {
    pub mu: f64,
    pub sigma: f64,
    pub prior: f64,
}

impl GaussianComponent {
    /// Normal density of this component at level `x` (without the prior).
    #[inline]
    pub fn density(&self, x: f64) -> f64 {
        let z = (x - self.mu) / self.sigma;
        (-0.5 * z * z).exp() / (self.sigma * (2.0 * std::f64::consts::PI).sqrt())
    }

    /// Density weighted by the component prior.
    #[inline]
    pub fn weighted_density(&self, x: f64) -> f64 {
        self.prior * self.density(x)
    }
}

/// Fitted two-component model; `background.mu < object.mu` by convention.
#[derive(Debug, Clone, PartialEq)]
pub struct BimodalMixture {
    pub background: GaussianComponent,
    pub object: GaussianComponent,
    /// Mean-square error against the source histogram, once evaluated.
    pub fit_error: Option<f64>,
}

impl BimodalMixture {
    /// Build a mixture, enforcing the model invariants.
    pub fn new(background: GaussianComponent, object: GaussianComponent) -> Result<Self> {
        for (name, c) in [("background", &background), ("object", &object)] {
            if !(c.sigma.is_finite() && c.sigma >= SIGMA_FLOOR) {
                return Err(Error::InvalidMixture(format!(
                    "{name} sigma {} below floor {SIGMA_FLOOR}",
                    c.sigma
                )));
            }
            if !(c.prior > 0.0 && c.prior < 1.0) {
                return Err(Error::InvalidMixture(format!(
                    "{name} prior {} outside (0,1)",
                    c.prior
                )));
            }
            if !c.mu.is_finite() {
                return Err(Error::InvalidMixture(format!("{name} mean is not finite")));
            }
        }
        if (background.prior + object.prior - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidMixture(format!(
                "priors {} + {} do not sum to 1",
                background.prior, object.prior
            )));
        }
        if background.mu >= object.mu {
            return Err(Error::InvalidMixture(format!(
                "background mean {} must be below object mean {}",
                background.mu, object.mu
            )));
        }
        Ok(BimodalMixture {
            background,
            object,
            fit_error: None,
        })
    }
}

/// Mixture density P1·p1(x) + P2·p2(x) at level `x`.
#[inline]
pub fn mixture_pdf(m: &BimodalMixture, x: f64) -> f64 {
    m.background.weighted_density(x) + m.object.weighted_density(x)
}

/// Fit a two-Gaussian mixture to a histogram by iterative split-and-refit.
///
/// Starting from the histogram mean, the histogram is split into a dark and
/// a bright class, each class yields (mass, mean, variance), and the optimal
/// threshold of the resulting mixture becomes the next split. The loop stops
/// when the split moves less than half a level. A class that empties, or a
/// split that never settles, means the histogram has no usable two-mode
/// structure.
pub fn fit_bimodal(h: &Histogram) -> Result<BimodalMixture> {
    if h.occupied_bins() < 2 {
        let last_split = h.mean().unwrap_or(0.0);
        return Err(Error::NotBimodal { last_split });
    }
    let mut split = h.mean()?;
    for _ in 0..MAX_FIT_ITERATIONS {
        let mixture = fit_at_split(h, split).map_err(|_| Error::NotBimodal { last_split: split })?;
        let next = match solve_optimal(&mixture) {
            Ok(result) => result.threshold,
            Err(_) => return Err(Error::NotBimodal { last_split: split }),
        };
        if (next - split).abs() < FIT_CONVERGENCE {
            return Ok(mixture);
        }
        split = next;
    }
    Err(Error::NotBimodal { last_split: split })
}

/// Class moments on both sides of `split`, assembled into a mixture.
fn fit_at_split(h: &Histogram, split: f64) -> Result<BimodalMixture> {
    let boundary = (split.floor() as i64).clamp(0, LEVELS as i64 - 2) as usize;
    let low = histogram::mean_and_variance(h, 0, boundary)?;
    let high = histogram::mean_and_variance(h, boundary + 1, LEVELS - 1)?;
    let background = GaussianComponent {
        mu: low.mean,
        sigma: low.variance.sqrt().max(SIGMA_FLOOR),
        prior: low.mass,
    };
    let object = GaussianComponent {
        mu: high.mean,
        sigma: high.variance.sqrt().max(SIGMA_FLOOR),
        // Written as a complement so the priors sum to 1 exactly.
        prior: 1.0 - low.mass,
    };
    BimodalMixture::new(background, object)
}

/// Mean-square error between the mixture density and the histogram.
///
/// M = (1/256) * sum_i [p(x_i) - h(x_i)]^2 with h normalized and p sampled
/// at the integer levels.
pub fn fit_quality(m: &BimodalMixture, h: &Histogram) -> Result<f64> {
    let normalized = histogram::normalize(h)?;
    let sum: f64 = normalized
        .iter()
        .enumerate()
        .map(|(i, &hv)| {
            let d = mixture_pdf(m, i as f64) - hv;
            d * d
        })
        .sum();
    Ok(sum / LEVELS as f64)
}

/// Outcome of a bimodality check.
#[derive(Debug, Clone)]
pub enum Validation {
    /// The histogram fits a two-Gaussian model within tolerance; the
    /// returned mixture carries the measured fit error.
    Accepted(BimodalMixture),
    Rejected(Rejection),
}

/// Why a histogram failed the bimodality check.
#[derive(Debug, Clone)]
pub enum Rejection {
    /// The fit never produced two populated classes.
    NotBimodal { last_split: f64 },
    /// The fit converged but does not describe the histogram well enough.
    QualityExceeded {
        mixture: BimodalMixture,
        measured: f64,
        tolerance: f64,
    },
}

impl Validation {
    pub fn is_accepted(&self) -> bool {
        matches!(self, Validation::Accepted(_))
    }

    /// Accepted mixture, or the rejection converted into an error.
    pub fn into_result(self) -> Result<BimodalMixture> {
        match self {
            Validation::Accepted(m) => Ok(m),
            Validation::Rejected(Rejection::NotBimodal { last_split }) => {
                Err(Error::NotBimodal { last_split })
            }
            Validation::Rejected(Rejection::QualityExceeded {
                measured, tolerance, ..
            }) => Err(Error::FitQualityExceeded {
                measured,
                tolerance,
            }),
        }
    }
}

/// Fit a mixture and accept it only if its fit error stays within
/// `tolerance`.
pub fn validate_bimodal(h: &Histogram, tolerance: f64) -> Validation {
    assert!(tolerance > 0.0, "tolerance must be positive, got {tolerance}");
    let mut mixture = match fit_bimodal(h) {
        Ok(m) => m,
        Err(Error::NotBimodal { last_split }) => {
            return Validation::Rejected(Rejection::NotBimodal { last_split })
        }
        // fit_bimodal only fails as NotBimodal on a nonempty histogram; an
        // empty histogram has zero occupied bins and lands there too.
        Err(_) => return Validation::Rejected(Rejection::NotBimodal { last_split: 0.0 }),
    };
    let measured = fit_quality(&mixture, h).expect("histogram validated nonempty during fit");
    if measured <= tolerance {
        mixture.fit_error = Some(measured);
        Validation::Accepted(mixture)
    } else {
        Validation::Rejected(Rejection::QualityExceeded {
            mixture,
            measured,
            tolerance,
        })
    }
}
