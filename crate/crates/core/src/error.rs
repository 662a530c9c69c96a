//! Crate-wide error type.
//!
//! Everything that can go wrong in the pipeline is a variant here: geometry
//! violations, degenerate histograms, fits that never become bimodal,
//! thresholds without a valid root, calibration-table problems, and file
//! format errors. Library functions return [`Result`]; nothing panics on
//! malformed input.

use std::path::PathBuf;

use thiserror::Error;

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A rectangular region does not lie fully inside the image.
    #[error(
        "region {x},{y} {width}x{height} out of bounds for a {image_width}x{image_height} image"
    )]
    RegionOutOfBounds {
        x: usize,
        y: usize,
        width: usize,
        height: usize,
        image_width: usize,
        image_height: usize,
    },

    /// A pixel coordinate outside the image or stack geometry.
    #[error("pixel ({x},{y}) out of bounds for a {width}x{height} image")]
    PixelOutOfBounds {
        x: usize,
        y: usize,
        width: usize,
        height: usize,
    },

    /// Image dimensions or pixel buffer length are inconsistent.
    #[error("invalid image geometry: {0}")]
    InvalidGeometry(String),

    /// A frame stack without frames cannot produce temporal statistics.
    #[error("frame stack is empty")]
    EmptyStack,

    /// An operation that needs samples got a histogram with total 0.
    #[error("histogram is empty")]
    EmptyHistogram,

    /// A bin range holds no samples, so class moments are undefined.
    #[error("no samples in bin range [{lo},{hi}]")]
    EmptyClass { lo: usize, hi: usize },

    /// The histogram could not be resolved into two populations.
    #[error("histogram is not bimodal (last split position {last_split:.3})")]
    NotBimodal { last_split: f64 },

    /// The mixture fits, but its mean-square error against the histogram
    /// exceeds the configured bimodality tolerance.
    #[error("fit quality {measured:.3e} exceeds tolerance {tolerance:.3e}")]
    FitQualityExceeded { measured: f64, tolerance: f64 },

    /// Mixture parameters violate the two-component model invariants.
    #[error("invalid mixture: {0}")]
    InvalidMixture(String),

    /// The threshold equation has no usable solution between the means.
    /// `roots` is `None` when the discriminant is negative.
    #[error("no valid threshold between the component means (roots {roots:?})")]
    NoValidThreshold { roots: Option<(f64, f64)> },

    /// Requested region size is outside the supported range.
    #[error(
        "invalid region size {region_width}x{region_height} for a \
         {image_width}x{image_height} image (minimum dimension {min_dim})"
    )]
    InvalidRegionSize {
        region_width: usize,
        region_height: usize,
        image_width: usize,
        image_height: usize,
        min_dim: usize,
    },

    /// Not a single region of the grid passed bimodality validation.
    #[error("no region passed bimodality validation")]
    NoValidRegion,

    /// A grid operation ran before every region received a threshold.
    #[error("region grid is not finalized (pending regions remain)")]
    UnfinalizedGrid,

    /// Too few frames for a trustworthy temporal calibration.
    #[error("stack has {frames} frames, calibration requires at least {min_frames}")]
    InsufficientFrames { frames: usize, min_frames: usize },

    /// Two objects that must share geometry do not.
    #[error("geometry mismatch: expected {expected_width}x{expected_height}, got {width}x{height}")]
    GeometryMismatch {
        expected_width: usize,
        expected_height: usize,
        width: usize,
        height: usize,
    },

    /// Speed calibration needs at least two points to interpolate.
    #[error("speed calibration needs at least {required} points, got {points}")]
    InsufficientCalibration { points: usize, required: usize },

    /// A calibration point violates its domain constraints.
    #[error("calibration point {index}: {message}")]
    InvalidCalibrationPoint { index: usize, message: String },

    /// Threshold-vs-speed data must be monotone nonincreasing.
    #[error(
        "thresholds are not monotone nonincreasing in speed \
         (rows {row_a} and {row_b}: {threshold_a} -> {threshold_b})"
    )]
    NonMonotoneThresholds {
        row_a: usize,
        row_b: usize,
        threshold_a: f64,
        threshold_b: f64,
    },

    /// Two calibration points share the same speed.
    #[error("duplicate calibration speed {speed} (rows {row_a} and {row_b})")]
    DuplicateSpeed { speed: f64, row_a: usize, row_b: usize },

    /// Level-model fitting needs the full level set on every point.
    #[error("calibration point {index} has no level set")]
    MissingLevelSet { index: usize },

    /// The speed table produced a nonsensical scaling ratio.
    #[error("speed table corruption: scaling ratio {ratio} is not positive")]
    TableCorruption { ratio: f64 },

    /// The calibration carries no acquisition speed, so it cannot be rescaled.
    #[error("calibration has no acquisition speed, cannot rescale")]
    MissingCalibrationSpeed,

    /// The calibration speed lies outside the table's calibrated range.
    #[error("calibration speed {speed} outside table range [{min}, {max}]")]
    CalibrationSpeedOutOfRange { speed: f64, min: f64, max: f64 },

    /// Scene model parameters are unusable for generation.
    #[error("invalid scene model: {0}")]
    InvalidModel(String),

    /// A file does not conform to its expected format. `offset` is the byte
    /// position at which parsing gave up.
    #[error("{path}: format error at byte {offset}: {message}")]
    Format {
        path: PathBuf,
        offset: u64,
        message: String,
    },

    /// A stack manifest references a frame that is missing or inconsistent.
    #[error("{path}: manifest error for frame '{frame}': {message}")]
    Manifest {
        path: PathBuf,
        frame: String,
        message: String,
    },

    /// An underlying I/O failure, annotated with the path involved.
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Attach a path to a raw I/O error.
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
