//! Conveyor-speed compensation of binarization thresholds.
//!
//! On a line-scan system the acquisition frequency follows the conveyor
//! speed, the frequency sets the sensor exposure time, and the exposure
//! time scales every observed intensity level. A calibration sweep measures
//! the optimal threshold at a handful of speeds; this module interpolates
//! those points into a threshold-vs-speed curve, compiles the curve into a
//! 256-entry breakpoint table for fast runtime lookup, and rescales stored
//! per-pixel threshold maps from their calibration speed to the running
//! speed.

use crate::error::{Error, Result};
use crate::histogram::LEVELS;
use crate::image::ThresholdMap;
use crate::temporal_threshold::TemporalCalibration;

/// Named intensity levels tracked by a calibration sweep alongside the
/// threshold, all measured at the same speed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LevelSet {
    pub object_min_plus: f64,
    pub object_max: f64,
    pub object_min_minus: f64,
    pub scene_min_plus: f64,
    pub scene_max: f64,
    pub scene_min_minus: f64,
}

/// One measurement of the calibration sweep: the optimal threshold at a
/// given conveyor speed, optionally with the full set of tracked levels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpeedCalibrationPoint {
    /// Conveyor speed in m/min.
    pub speed: f64,
    /// Optimal global temporal threshold measured at that speed.
    pub threshold: f64,
    pub levels: Option<LevelSet>,
}

/// Piecewise-linear curve through (x, y) knots, constant beyond the ends.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseLinear {
    xs: Vec<f64>,
    ys: Vec<f64>,
}

impl PiecewiseLinear {
    /// Build from at least two knots. Knots are sorted by x internally.
    ///
    /// Panics on fewer than two knots, non-finite coordinates, or duplicate
    /// x values; callers validate their data first.
    pub fn new(mut knots: Vec<(f64, f64)>) -> Self {
        assert!(knots.len() >= 2, "piecewise-linear curve needs at least 2 knots");
        assert!(
            knots.iter().all(|(x, y)| x.is_finite() && y.is_finite()),
            "piecewise-linear knots must be finite"
        );
        knots.sort_by(|a, b| a.0.total_cmp(&b.0));
        assert!(
            knots.windows(2).all(|w| w[0].0 < w[1].0),
            "piecewise-linear knots must have distinct x values"
        );
        PiecewiseLinear {
            xs: knots.iter().map(|k| k.0).collect(),
            ys: knots.iter().map(|k| k.1).collect(),
        }
    }

    pub fn min_x(&self) -> f64 {
        self.xs[0]
    }

    pub fn max_x(&self) -> f64 {
        *self.xs.last().expect("curve has knots")
    }

    pub fn knots(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.xs.iter().copied().zip(self.ys.iter().copied())
    }

    /// Interpolated value at `x`, clamped to the end values outside the
    /// knot range.
    pub fn eval(&self, x: f64) -> f64 {
        if x <= self.min_x() {
            return self.ys[0];
        }
        if x >= self.max_x() {
            return *self.ys.last().expect("curve has knots");
        }
        // partition_point finds the first knot strictly right of x.
        let hi = self.xs.partition_point(|&k| k <= x);
        let lo = hi - 1;
        let f = (x - self.xs[lo]) / (self.xs[hi] - self.xs[lo]);
        self.ys[lo] + f * (self.ys[hi] - self.ys[lo])
    }
}

/// Compiled speed-compensation table.
///
/// `entries[t]` holds the lowest speed at which the threshold falls to
/// `t + 0.5` or below, or `None` if no speed in the calibrated range gets
/// that low. Because the threshold-speed relation is monotone nonincreasing
/// these breakpoints support a binary search, which a refinement against
/// the calibration segments then turns into a real-valued threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeedThresholdTable {
    entries: [Option<f64>; LEVELS],
    points: Vec<SpeedCalibrationPoint>,
    curve: PiecewiseLinear,
}

impl SpeedThresholdTable {
    pub fn entries(&self) -> &[Option<f64>; LEVELS] {
        &self.entries
    }

    /// Calibration points, sorted by ascending speed.
    pub fn points(&self) -> &[SpeedCalibrationPoint] {
        &self.points
    }

    /// Calibrated speed range (V_min, V_max).
    pub fn speed_range(&self) -> (f64, f64) {
        (self.curve.min_x(), self.curve.max_x())
    }
}

fn validate_points(points: &[SpeedCalibrationPoint], required: usize) -> Result<()> {
    if points.len() < required {
        return Err(Error::InsufficientCalibration {
            points: points.len(),
            required,
        });
    }
    for (index, p) in points.iter().enumerate() {
        if !(p.speed.is_finite() && p.speed > 0.0) {
            return Err(Error::InvalidCalibrationPoint {
                index,
                message: format!("speed {} must be positive", p.speed),
            });
        }
        if !(p.threshold.is_finite() && p.threshold > 0.0 && p.threshold < 255.0) {
            return Err(Error::InvalidCalibrationPoint {
                index,
                message: format!("threshold {} outside (0, 255)", p.threshold),
            });
        }
    }
    Ok(())
}

/// Check for duplicate speeds and rising thresholds; indices in the errors
/// refer to the input order.
fn validate_ordering(points: &[SpeedCalibrationPoint]) -> Result<Vec<usize>> {
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| points[a].speed.total_cmp(&points[b].speed));
    for w in order.windows(2) {
        let (a, b) = (w[0], w[1]);
        if points[a].speed == points[b].speed {
            return Err(Error::DuplicateSpeed {
                speed: points[a].speed,
                row_a: a,
                row_b: b,
            });
        }
        if points[b].threshold > points[a].threshold {
            return Err(Error::NonMonotoneThresholds {
                row_a: a,
                row_b: b,
                threshold_a: points[a].threshold,
                threshold_b: points[b].threshold,
            });
        }
    }
    Ok(order)
}

/// Lowest x at which a nonincreasing piecewise-linear curve reaches
/// `target` or below, if it does within the knot range.
fn first_crossing(curve: &PiecewiseLinear, target: f64) -> Option<f64> {
    let knots: Vec<(f64, f64)> = curve.knots().collect();
    if knots[0].1 <= target {
        return Some(knots[0].0);
    }
    if knots.last().expect("curve has knots").1 > target {
        return None;
    }
    for w in knots.windows(2) {
        let ((x0, y0), (x1, y1)) = (w[0], w[1]);
        if y0 > target && y1 <= target {
            return Some(x0 + (y0 - target) / (y0 - y1) * (x1 - x0));
        }
    }
    unreachable!("a nonincreasing curve crossing below its start reaches every target once")
}

/// Compile calibration points into a speed-breakpoint table.
pub fn build_table(points: &[SpeedCalibrationPoint]) -> Result<SpeedThresholdTable> {
    validate_points(points, 2)?;
    let order = validate_ordering(points)?;
    let sorted: Vec<SpeedCalibrationPoint> = order.iter().map(|&i| points[i]).collect();
    let curve = PiecewiseLinear::new(sorted.iter().map(|p| (p.speed, p.threshold)).collect());
    let mut entries = [None; LEVELS];
    for (t, e) in entries.iter_mut().enumerate() {
        *e = first_crossing(&curve, t as f64 + 0.5);
    }
    Ok(SpeedThresholdTable {
        entries,
        points: sorted,
        curve,
    })
}

/// Threshold to use at conveyor speed `v`.
///
/// Speeds outside the calibrated range clamp to the nearest boundary. The
/// breakpoint table narrows the answer to an integer band with a binary
/// search; the calibration segments then refine it to a real value.
pub fn lookup(table: &SpeedThresholdTable, v: f64) -> f64 {
    let (v_min, v_max) = table.speed_range();
    let vc = v.clamp(v_min, v_max);
    // Smallest t whose breakpoint speed has been reached: the threshold at
    // vc lies within 0.5 of t. The predicate is monotone in t because the
    // entries fall (or vanish) as t shrinks.
    let reached = |t: usize| table.entries[t].is_some_and(|e| e <= vc);
    let mut lo = 0usize;
    let mut hi = LEVELS - 1;
    while lo < hi {
        let mid = (lo + hi) / 2;
        if reached(mid) {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    let refined = table.curve.eval(vc);
    debug_assert!(
        (refined - lo as f64).abs() <= 0.5 + 1e-9,
        "band {lo} disagrees with refined threshold {refined}"
    );
    refined
}

/// Rescale a calibrated threshold map from its calibration speed to speed
/// `v`, multiplying every entry by lookup(v) / lookup(calibration_speed).
/// Flags and errors of the source calibration are untouched; only the
/// returned map is scaled.
pub fn scale_threshold_map(
    calib: &TemporalCalibration,
    table: &SpeedThresholdTable,
    v: f64,
) -> Result<ThresholdMap> {
    let cal_speed = calib.calibration_speed.ok_or(Error::MissingCalibrationSpeed)?;
    let (v_min, v_max) = table.speed_range();
    if cal_speed < v_min || cal_speed > v_max {
        return Err(Error::CalibrationSpeedOutOfRange {
            speed: cal_speed,
            min: v_min,
            max: v_max,
        });
    }
    let ratio = lookup(table, v) / lookup(table, cal_speed);
    if !(ratio.is_finite() && ratio > 0.0) {
        return Err(Error::TableCorruption { ratio });
    }
    let values = calib
        .threshold_map
        .values
        .iter()
        .map(|t| (t * ratio).clamp(0.0, 255.0))
        .collect();
    ThresholdMap::new(calib.width(), calib.height(), values)
}

/// Spread of the ratio between one level column and the reference column.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RatioSummary {
    pub mean: f64,
    pub max_deviation: f64,
}

/// Diagnostic fit of the level-vs-speed structure of a calibration sweep:
/// how tightly each tracked level follows the object-min-plus reference
/// column, plus the threshold-vs-speed curve itself.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelSpeedModel {
    pub threshold: RatioSummary,
    pub object_max: RatioSummary,
    pub object_min_minus: RatioSummary,
    pub scene_min_plus: RatioSummary,
    pub scene_max: RatioSummary,
    pub scene_min_minus: RatioSummary,
    pub threshold_curve: PiecewiseLinear,
}

impl LevelSpeedModel {
    /// Ratio summaries paired with column names, for reporting.
    pub fn named_ratios(&self) -> [(&'static str, RatioSummary); 6] {
        [
            ("threshold", self.threshold),
            ("object_max", self.object_max),
            ("object_min_minus", self.object_min_minus),
            ("scene_min_plus", self.scene_min_plus),
            ("scene_max", self.scene_max),
            ("scene_min_minus", self.scene_min_minus),
        ]
    }
}

/// Summarize how each tracked level scales with speed relative to the
/// object-min-plus column. Used for calibration diagnostics only.
pub fn fit_level_speed_model(points: &[SpeedCalibrationPoint]) -> Result<LevelSpeedModel> {
    validate_points(points, 3)?;
    let order = validate_ordering(points)?;
    for (index, p) in points.iter().enumerate() {
        if p.levels.is_none() {
            return Err(Error::MissingLevelSet { index });
        }
    }
    let sorted: Vec<SpeedCalibrationPoint> = order.iter().map(|&i| points[i]).collect();

    let summarize = |value_of: &dyn Fn(&SpeedCalibrationPoint) -> f64| -> RatioSummary {
        let ratios: Vec<f64> = sorted
            .iter()
            .map(|p| value_of(p) / p.levels.expect("levels checked above").object_min_plus)
            .collect();
        let mean = ratios.iter().sum::<f64>() / ratios.len() as f64;
        let max_deviation = ratios
            .iter()
            .map(|r| (r - mean).abs())
            .fold(0.0, f64::max);
        RatioSummary { mean, max_deviation }
    };

    let curve = PiecewiseLinear::new(sorted.iter().map(|p| (p.speed, p.threshold)).collect());
    Ok(LevelSpeedModel {
        threshold: summarize(&|p| p.threshold),
        object_max: summarize(&|p| p.levels.expect("checked").object_max),
        object_min_minus: summarize(&|p| p.levels.expect("checked").object_min_minus),
        scene_min_plus: summarize(&|p| p.levels.expect("checked").scene_min_plus),
        scene_max: summarize(&|p| p.levels.expect("checked").scene_max),
        scene_min_minus: summarize(&|p| p.levels.expect("checked").scene_min_minus),
        threshold_curve: curve,
    })
}
