//! Per-pixel temporal thresholding.
//!
//! Instead of one spatial histogram per image, every pixel gets its own
//! 256-bin histogram of the values it took across a long frame stack. Each
//! temporal histogram is fitted and solved independently, producing a
//! threshold map, an expected-error map, and a flag map that together form
//! a calibration. Runtime classification then needs only one comparison per
//! pixel against the stored map, and the flag map points at sensor or
//! lighting areas that need fixing.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::global_threshold::solve_optimal;
use crate::histogram::{self, build_temporal};
use crate::image::{BinaryImage, FrameStack, GrayImage, Rect, ThresholdMap};
use crate::mixture::{fit_bimodal, SIGMA_FLOOR};

/// Default lower bound on the stack length used for calibration.
pub const DEFAULT_MIN_FRAMES: usize = 200;

/// Default per-pixel expected-error tolerance.
pub const DEFAULT_ERROR_TOLERANCE: f64 = 1e-4;

/// Distance, in single-mode standard deviations, between a non-bimodal
/// pixel's mean and its fallback threshold.
const FALLBACK_SIGMA_MULTIPLE: f64 = 4.0;

/// Per-pixel calibration outcome.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PixelFlag {
    /// Bimodal fit succeeded and the expected error is within tolerance.
    Ok,
    /// No two-mode structure; the pixel carries a fallback threshold.
    NotBimodal,
    /// Fit succeeded but the expected error exceeds the tolerance.
    ErrorAboveTolerance,
}

impl PixelFlag {
    /// Single-character code used by the flag-map file format.
    pub fn to_char(self) -> char {
        match self {
            PixelFlag::Ok => 'o',
            PixelFlag::NotBimodal => 'n',
            PixelFlag::ErrorAboveTolerance => 'e',
        }
    }

    pub fn from_char(c: char) -> Option<Self> {
        match c {
            'o' => Some(PixelFlag::Ok),
            'n' => Some(PixelFlag::NotBimodal),
            'e' => Some(PixelFlag::ErrorAboveTolerance),
            _ => None,
        }
    }
}

/// Everything retained after temporal calibration: three per-pixel maps and
/// the acquisition metadata. Per-pixel histograms are discarded once fitted,
/// so the stored state stays proportional to the pixel count.
#[derive(Debug, Clone)]
pub struct TemporalCalibration {
    pub threshold_map: ThresholdMap,
    /// Expected misclassification per pixel, in [0,1].
    pub error_map: Vec<f64>,
    pub flag_map: Vec<PixelFlag>,
    /// Conveyor speed the stack was captured at, when known.
    pub calibration_speed: Option<f64>,
    pub frames_used: usize,
}

impl TemporalCalibration {
    /// Assemble a calibration, checking that the maps share geometry.
    pub fn new(
        threshold_map: ThresholdMap,
        error_map: Vec<f64>,
        flag_map: Vec<PixelFlag>,
        calibration_speed: Option<f64>,
        frames_used: usize,
    ) -> Result<Self> {
        let len = threshold_map.values.len();
        if error_map.len() != len || flag_map.len() != len {
            return Err(Error::InvalidGeometry(format!(
                "map sizes disagree: {len} thresholds, {} errors, {} flags",
                error_map.len(),
                flag_map.len()
            )));
        }
        if let Some(bad) = error_map.iter().find(|e| !(0.0..=1.0).contains(*e)) {
            return Err(Error::InvalidGeometry(format!(
                "error map value {bad} outside [0,1]"
            )));
        }
        Ok(TemporalCalibration {
            threshold_map,
            error_map,
            flag_map,
            calibration_speed,
            frames_used,
        })
    }

    pub fn width(&self) -> usize {
        self.threshold_map.width
    }

    pub fn height(&self) -> usize {
        self.threshold_map.height
    }

    pub fn flag(&self, x: usize, y: usize) -> PixelFlag {
        self.flag_map[y * self.width() + x]
    }

    pub fn error(&self, x: usize, y: usize) -> f64 {
        self.error_map[y * self.width() + x]
    }
}

/// Result of one pixel's fit before flags are assigned: either a solved
/// threshold or the moments of a single-mode history.
enum PixelOutcome {
    Fitted { threshold: f64, error: f64, object_mu: f64 },
    SingleMode { mu: f64, sigma: f64 },
}

/// Expected misclassification charged to a fallback threshold: the tail
/// mass of the observed mode beyond the 4-sigma cut.
fn fallback_error() -> f64 {
    0.5 * libm::erfc(FALLBACK_SIGMA_MULTIPLE / std::f64::consts::SQRT_2)
}

/// Calibrate per-pixel thresholds from a frame stack.
///
/// Every pixel runs the same chain: temporal histogram, bimodal fit,
/// optimal threshold, expected error. Pixels without two-mode structure are
/// flagged and receive a fallback threshold 4 sigma outside their single
/// observed mode, on the side facing the rest of the image's object levels;
/// pixels whose expected error exceeds `error_tolerance` keep their solved
/// threshold but are flagged for attention.
///
/// A noisy pixel that never sees the object usually still admits a split of
/// its single noise mode into two shoulder components; such pixels surface
/// through the error flag (their expected error is enormous) rather than
/// the not-bimodal flag, which catches degenerate and non-convergent
/// histories.
pub fn calibrate(
    stack: &FrameStack,
    min_frames: usize,
    error_tolerance: f64,
) -> Result<TemporalCalibration> {
    if stack.frame_count() < min_frames {
        return Err(Error::InsufficientFrames {
            frames: stack.frame_count(),
            min_frames,
        });
    }
    let (width, height) = (stack.width, stack.height);
    let outcomes: Vec<PixelOutcome> = (0..width * height)
        .into_par_iter()
        .map(|idx| {
            let (x, y) = (idx % width, idx / width);
            let h = build_temporal(stack, x, y).expect("pixel index is in range");
            let fitted = fit_bimodal(&h).ok().and_then(|m| {
                solve_optimal(&m).ok().map(|r| PixelOutcome::Fitted {
                    threshold: r.threshold,
                    error: r.expected_error,
                    object_mu: m.object.mu,
                })
            });
            fitted.unwrap_or_else(|| {
                let stats = histogram::mean_and_variance(&h, 0, histogram::LEVELS - 1)
                    .expect("temporal histogram of a nonempty stack has samples");
                PixelOutcome::SingleMode {
                    mu: stats.mean,
                    sigma: stats.variance.sqrt().max(SIGMA_FLOOR),
                }
            })
        })
        .collect();

    // Fallback thresholds cut 4 sigma away from the single mode, on the
    // object side. Which side that is comes from the fitted pixels' object
    // means; a stack with no fitted pixel at all falls back to the grand
    // mean of the single modes.
    let mut object_mu_sum = 0.0;
    let mut object_mu_count = 0usize;
    let mut mode_mu_sum = 0.0;
    for o in &outcomes {
        match o {
            PixelOutcome::Fitted { object_mu, .. } => {
                object_mu_sum += object_mu;
                object_mu_count += 1;
            }
            PixelOutcome::SingleMode { mu, .. } => mode_mu_sum += mu,
        }
    }
    let reference = if object_mu_count > 0 {
        object_mu_sum / object_mu_count as f64
    } else {
        mode_mu_sum / outcomes.len() as f64
    };

    let mut thresholds = Vec::with_capacity(outcomes.len());
    let mut errors = Vec::with_capacity(outcomes.len());
    let mut flags = Vec::with_capacity(outcomes.len());
    for o in &outcomes {
        match *o {
            PixelOutcome::Fitted { threshold, error, .. } => {
                thresholds.push(threshold);
                errors.push(error);
                flags.push(if error <= error_tolerance {
                    PixelFlag::Ok
                } else {
                    PixelFlag::ErrorAboveTolerance
                });
            }
            PixelOutcome::SingleMode { mu, sigma } => {
                let t = if mu < reference {
                    mu + FALLBACK_SIGMA_MULTIPLE * sigma
                } else {
                    mu - FALLBACK_SIGMA_MULTIPLE * sigma
                };
                thresholds.push(t.clamp(0.0, 255.0));
                errors.push(fallback_error());
                flags.push(PixelFlag::NotBimodal);
            }
        }
    }
    TemporalCalibration::new(
        ThresholdMap::new(width, height, thresholds)?,
        errors,
        flags,
        stack.acquisition_speed,
        stack.frame_count(),
    )
}

/// Classify an image against a calibration: 1 where the pixel exceeds its
/// stored threshold. Flagged pixels classify like any other; callers decide
/// what to do with the flag map.
pub fn apply(calib: &TemporalCalibration, img: &GrayImage) -> Result<BinaryImage> {
    apply_map(&calib.threshold_map, img)
}

/// Classify an image against a bare threshold map, for maps that have been
/// transformed after calibration, such as speed rescaling.
pub fn apply_map(map: &ThresholdMap, img: &GrayImage) -> Result<BinaryImage> {
    if img.width != map.width || img.height != map.height {
        return Err(Error::GeometryMismatch {
            expected_width: map.width,
            expected_height: map.height,
            width: img.width,
            height: img.height,
        });
    }
    let pixels = img
        .pixels
        .iter()
        .zip(map.values.iter())
        .map(|(&p, &t)| u8::from(f64::from(p) > t))
        .collect();
    BinaryImage::new(img.width, img.height, pixels)
}

/// A connected patch of non-ok pixels: its bounding rectangle and size.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DefectArea {
    pub rect: Rect,
    pub pixel_count: usize,
}

/// Calibration quality summary: flag tallies, error-map extremes, and the
/// connected areas of non-ok pixels (runs on a single line, rectangles on
/// an array sensor).
#[derive(Debug, Clone)]
pub struct QualityReport {
    pub ok_count: usize,
    pub not_bimodal_count: usize,
    pub error_above_tolerance_count: usize,
    pub max_error: f64,
    pub mean_error: f64,
    pub defect_areas: Vec<DefectArea>,
}

/// Summarize a calibration for acceptance decisions and maintenance: which
/// sensor or lighting areas need work, and how much error remains.
pub fn quality_report(calib: &TemporalCalibration) -> QualityReport {
    let (width, height) = (calib.width(), calib.height());
    let mut ok = 0;
    let mut nb = 0;
    let mut eat = 0;
    for f in &calib.flag_map {
        match f {
            PixelFlag::Ok => ok += 1,
            PixelFlag::NotBimodal => nb += 1,
            PixelFlag::ErrorAboveTolerance => eat += 1,
        }
    }
    let max_error = calib.error_map.iter().copied().fold(0.0, f64::max);
    let mean_error = calib.error_map.iter().sum::<f64>() / calib.error_map.len() as f64;

    // Group non-ok pixels into 4-connected components and report each
    // component's bounding box. On a 1-row map these are exactly the
    // maximal runs.
    let mut defect_areas = Vec::new();
    let mut visited = vec![false; width * height];
    let is_defect = |idx: usize| calib.flag_map[idx] != PixelFlag::Ok;
    for start in 0..width * height {
        if visited[start] || !is_defect(start) {
            continue;
        }
        let mut queue = vec![start];
        visited[start] = true;
        let (mut min_x, mut max_x) = (width, 0usize);
        let (mut min_y, mut max_y) = (height, 0usize);
        let mut count = 0usize;
        while let Some(idx) = queue.pop() {
            let (x, y) = (idx % width, idx / width);
            min_x = min_x.min(x);
            max_x = max_x.max(x);
            min_y = min_y.min(y);
            max_y = max_y.max(y);
            count += 1;
            let mut push = |nx: usize, ny: usize| {
                let n = ny * width + nx;
                if !visited[n] && is_defect(n) {
                    visited[n] = true;
                    queue.push(n);
                }
            };
            if x > 0 {
                push(x - 1, y);
            }
            if x + 1 < width {
                push(x + 1, y);
            }
            if y > 0 {
                push(x, y - 1);
            }
            if y + 1 < height {
                push(x, y + 1);
            }
        }
        defect_areas.push(DefectArea {
            rect: Rect {
                x: min_x,
                y: min_y,
                width: max_x - min_x + 1,
                height: max_y - min_y + 1,
            },
            pixel_count: count,
        });
    }
    defect_areas.sort_by_key(|d| (d.rect.y, d.rect.x));

    QualityReport {
        ok_count: ok,
        not_bimodal_count: nb,
        error_above_tolerance_count: eat,
        max_error,
        mean_error,
        defect_areas,
    }
}

/// Misclassification rates of the two approaches on the same stack.
#[derive(Debug, Clone, Copy)]
pub struct ThresholdComparison {
    /// Threshold fitted once on the pooled spatial histogram of all frames.
    pub global_threshold: f64,
    /// Fraction of all pixel-frame samples the pooled-global threshold gets
    /// wrong.
    pub global_misclassified: f64,
    /// Same fraction for the per-pixel temporal calibration.
    pub temporal_misclassified: f64,
}

/// Measure one pooled global threshold against a temporal calibration on
/// the same stack, scoring both against ground-truth masks.
///
/// The global side pools every frame's spatial histogram into one and fits
/// it directly; a pooled histogram distorted by position-dependent effects
/// may still fit, it just thresholds badly, which is the point of the
/// comparison.
pub fn compare_with_global(
    stack: &FrameStack,
    truth: &[BinaryImage],
    min_frames: usize,
    error_tolerance: f64,
) -> Result<ThresholdComparison> {
    if truth.len() != stack.frame_count() {
        return Err(Error::InvalidGeometry(format!(
            "{} truth masks for {} frames",
            truth.len(),
            stack.frame_count()
        )));
    }
    let mut pooled = histogram::Histogram::new();
    for frame in &stack.frames {
        pooled.accumulate(&histogram::build_spatial(frame, None)?);
    }
    let global = solve_optimal(&fit_bimodal(&pooled)?)?;

    let calib = calibrate(stack, min_frames, error_tolerance)?;

    let samples = (stack.width * stack.height * stack.frame_count()) as f64;
    let mut global_wrong = 0usize;
    let mut temporal_wrong = 0usize;
    for (frame, mask) in stack.frames.iter().zip(truth) {
        let g = crate::global_threshold::binarize(frame, global.threshold);
        global_wrong += g.mismatch_count(mask)?;
        let t = apply(&calib, frame)?;
        temporal_wrong += t.mismatch_count(mask)?;
    }
    Ok(ThresholdComparison {
        global_threshold: global.threshold,
        global_misclassified: global_wrong as f64 / samples,
        temporal_misclassified: temporal_wrong as f64 / samples,
    })
}
