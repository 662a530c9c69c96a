//! Gray-level binarization for industrial inspection imagery.
//!
//! The crate models bimodal gray-level histograms as two-Gaussian mixtures
//! and derives minimum-error thresholds from the fitted model. On top of
//! that core it provides global, region-adaptive (dynamic), and per-pixel
//! temporal thresholding, conveyor-speed compensation of calibrated
//! threshold maps, a scene simulator for end-to-end validation, and file
//! formats plus a command-line front end for the whole toolchain.

pub mod dynamic_threshold;
pub mod error;
pub mod global_threshold;
pub mod histogram;
pub mod image;
pub mod io;
pub mod mixture;
pub mod sim;
pub mod speed;
pub mod temporal_threshold;

pub use dynamic_threshold::{
    dynamic_binarize, estimate_region_thresholds, fill_invalid_regions, interpolate_pixel_map,
    partition, threshold_at, Region, RegionGrid, RegionStatus, DEFAULT_REGION_ARRAY,
    DEFAULT_REGION_LINEAR, MIN_REGION_DIM,
};
pub use error::{Error, Result};
pub use temporal_threshold::{
    apply, apply_map, calibrate, compare_with_global, quality_report, DefectArea, PixelFlag,
    QualityReport, TemporalCalibration, ThresholdComparison, DEFAULT_ERROR_TOLERANCE,
    DEFAULT_MIN_FRAMES,
};
pub use global_threshold::{
    binarize, global_binarize, misclassification_error, overlap_error, solve_optimal,
    ErrorBreakdown, ThresholdMethod, ThresholdResult,
};
pub use histogram::{
    build_spatial, build_temporal, mean_and_variance, normalize, ClassStats, Histogram, LEVELS,
};
pub use image::{BinaryImage, FrameStack, GrayImage, Rect, ThresholdMap};
pub use io::{
    build_table_from_csv, read_binary_image, read_calibration, read_flags, read_manifest,
    read_pgm, read_speed_calibration, read_speed_table, read_stack, read_threshold_map,
    write_binary_image, write_calibration, write_flags, write_manifest, write_pgm,
    write_speed_calibration, write_speed_table, write_stack, write_threshold_map, Manifest,
};
pub use sim::{
    defect_band, gain_profile, generate_stack, linear_illumination, planted_truth, Occupancy,
    PlantedPixel, SceneModel, SpeedResponse, DEFAULT_OBJECT_FRACTION, REFERENCE_SPEED,
};
pub use speed::{
    build_table, fit_level_speed_model, lookup, scale_threshold_map, LevelSet, LevelSpeedModel,
    PiecewiseLinear, RatioSummary, SpeedCalibrationPoint, SpeedThresholdTable,
};
pub use mixture::{
    fit_bimodal, fit_quality, mixture_pdf, validate_bimodal, BimodalMixture, GaussianComponent,
    Rejection, Validation, DEFAULT_FIT_TOLERANCE, SIGMA_FLOOR,
};
