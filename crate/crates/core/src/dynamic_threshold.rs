//! Region-adaptive (dynamic) thresholding.
//!
//! The image is partitioned into regions of a prescribed size. Each region
//! with a credible two-mode histogram receives its own minimum-error
//! threshold; regions that fail the bimodality check inherit a value
//! interpolated from their neighbors. A second interpolation pass then
//! spreads the region thresholds into a smooth per-pixel threshold surface
//! T(x,y), and each pixel is classified against its own entry.

use crate::error::{Error, Result};
use crate::global_threshold::solve_optimal;
use crate::histogram::{build_spatial, Histogram};
use crate::image::{BinaryImage, GrayImage, Rect, ThresholdMap};
use crate::mixture::{validate_bimodal, Validation};

/// Smallest sensible region edge, except where the image itself is thinner.
pub const MIN_REGION_DIM: usize = 8;

/// Default region size for area (2-D) sensors.
pub const DEFAULT_REGION_ARRAY: (usize, usize) = (64, 64);

/// Default region size for line-scan (1-D) images.
pub const DEFAULT_REGION_LINEAR: (usize, usize) = (128, 1);

/// Weight of a diagonal neighbor relative to an orthogonal one, i.e. the
/// inverse of the center distance on the region lattice.
const DIAGONAL_WEIGHT: f64 = std::f64::consts::FRAC_1_SQRT_2;

/// Lifecycle of one region's threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RegionStatus {
    /// Not yet evaluated, or evaluated and found unusable.
    Pending,
    /// Threshold solved from the region's own histogram.
    Valid,
    /// Threshold filled in from neighboring regions.
    Interpolated,
}

/// One tile of the partition.
#[derive(Debug, Clone)]
pub struct Region {
    pub rect: Rect,
    pub histogram: Histogram,
    pub status: RegionStatus,
    pub threshold: Option<f64>,
}

/// Partition of an image into a lattice of regions.
#[derive(Debug, Clone)]
pub struct RegionGrid {
    pub image_width: usize,
    pub image_height: usize,
    /// Requested tile size; edge tiles may be clipped smaller.
    pub region_width: usize,
    pub region_height: usize,
    pub cols: usize,
    pub rows: usize,
    regions: Vec<Region>,
}

impl RegionGrid {
    pub fn region(&self, col: usize, row: usize) -> &Region {
        assert!(col < self.cols && row < self.rows, "region ({col},{row}) outside grid");
        &self.regions[row * self.cols + col]
    }

    /// Center of a region in pixel coordinates (fractional for even sizes).
    pub fn center(&self, col: usize, row: usize) -> (f64, f64) {
        let r = &self.region(col, row).rect;
        (
            r.x as f64 + (r.width as f64 - 1.0) / 2.0,
            r.y as f64 + (r.height as f64 - 1.0) / 2.0,
        )
    }

    /// True once every region carries a threshold.
    pub fn is_finalized(&self) -> bool {
        self.regions.iter().all(|r| r.threshold.is_some())
    }

    pub fn count_with_status(&self, status: RegionStatus) -> usize {
        self.regions.iter().filter(|r| r.status == status).count()
    }

    fn threshold_of(&self, col: usize, row: usize) -> f64 {
        self.region(col, row)
            .threshold
            .expect("caller checked finalization")
    }
}

/// Split an image into a grid of regions and compute each region's
/// histogram. Edge regions are clipped to the image boundary.
pub fn partition(img: &GrayImage, region_width: usize, region_height: usize) -> Result<RegionGrid> {
    let min_w = MIN_REGION_DIM.min(img.width);
    let min_h = MIN_REGION_DIM.min(img.height);
    if region_width < min_w
        || region_height < min_h
        || region_width > img.width
        || region_height > img.height
    {
        return Err(Error::InvalidRegionSize {
            region_width,
            region_height,
            image_width: img.width,
            image_height: img.height,
            min_dim: MIN_REGION_DIM,
        });
    }
    let cols = img.width.div_ceil(region_width);
    let rows = img.height.div_ceil(region_height);
    let mut regions = Vec::with_capacity(cols * rows);
    for row in 0..rows {
        for col in 0..cols {
            let x = col * region_width;
            let y = row * region_height;
            let rect = Rect {
                x,
                y,
                width: region_width.min(img.width - x),
                height: region_height.min(img.height - y),
            };
            let histogram = build_spatial(img, Some(rect))?;
            regions.push(Region {
                rect,
                histogram,
                status: RegionStatus::Pending,
                threshold: None,
            });
        }
    }
    Ok(RegionGrid {
        image_width: img.width,
        image_height: img.height,
        region_width,
        region_height,
        cols,
        rows,
        regions,
    })
}

/// Run the bimodality check and threshold solve on every region. Regions
/// that pass become `Valid`; the rest stay `Pending` for the fill stage.
pub fn estimate_region_thresholds(mut grid: RegionGrid, tolerance: f64) -> RegionGrid {
    for region in &mut grid.regions {
        if let Validation::Accepted(mixture) = validate_bimodal(&region.histogram, tolerance) {
            if let Ok(result) = solve_optimal(&mixture) {
                region.status = RegionStatus::Valid;
                region.threshold = Some(result.threshold);
            }
        }
    }
    grid
}

/// Give every pending region the inverse-distance-weighted mean of its
/// finalized 8-neighbors.
///
/// Pending clusters are filled wavefront-style: each pass reads only values
/// finalized in earlier passes and commits its results together, so the
/// outcome does not depend on scan order within a pass.
pub fn fill_invalid_regions(mut grid: RegionGrid) -> Result<RegionGrid> {
    if grid.count_with_status(RegionStatus::Valid) == 0 {
        return Err(Error::NoValidRegion);
    }
    while grid.count_with_status(RegionStatus::Pending) > 0 {
        let mut updates: Vec<(usize, f64)> = Vec::new();
        for row in 0..grid.rows {
            for col in 0..grid.cols {
                let idx = row * grid.cols + col;
                if grid.regions[idx].status != RegionStatus::Pending {
                    continue;
                }
                let mut weight_sum = 0.0;
                let mut value_sum = 0.0;
                for dr in -1i64..=1 {
                    for dc in -1i64..=1 {
                        if dr == 0 && dc == 0 {
                            continue;
                        }
                        let (nr, nc) = (row as i64 + dr, col as i64 + dc);
                        if nr < 0 || nc < 0 || nr >= grid.rows as i64 || nc >= grid.cols as i64 {
                            continue;
                        }
                        let neighbor = &grid.regions[nr as usize * grid.cols + nc as usize];
                        if let (RegionStatus::Valid | RegionStatus::Interpolated, Some(t)) =
                            (neighbor.status, neighbor.threshold)
                        {
                            let w = if dr * dc != 0 { DIAGONAL_WEIGHT } else { 1.0 };
                            weight_sum += w;
                            value_sum += w * t;
                        }
                    }
                }
                if weight_sum > 0.0 {
                    updates.push((idx, value_sum / weight_sum));
                }
            }
        }
        debug_assert!(
            !updates.is_empty(),
            "a grid with a valid region always exposes a fillable frontier"
        );
        for (idx, t) in updates {
            grid.regions[idx].status = RegionStatus::Interpolated;
            grid.regions[idx].threshold = Some(t);
        }
    }
    Ok(grid)
}

/// Threshold surface value at real pixel coordinates, by bilinear
/// interpolation between the four surrounding region centers. Coordinates
/// outside the hull of centers clamp to the nearest edge of the lattice.
pub fn threshold_at(grid: &RegionGrid, x: f64, y: f64) -> Result<f64> {
    if !grid.is_finalized() {
        return Err(Error::UnfinalizedGrid);
    }
    // Locate the lattice cell along one axis and the fractional position
    // inside it, clamping beyond the first and last centers.
    let locate = |count: usize, center_of: &dyn Fn(usize) -> f64, v: f64| -> (usize, f64) {
        if count == 1 || v <= center_of(0) {
            return (0, 0.0);
        }
        if v >= center_of(count - 1) {
            return (count - 2, 1.0);
        }
        let mut i = 0;
        while i + 2 < count && center_of(i + 1) <= v {
            i += 1;
        }
        let (a, b) = (center_of(i), center_of(i + 1));
        (i, (v - a) / (b - a))
    };
    let cx = |c: usize| grid.center(c, 0).0;
    let cy = |r: usize| grid.center(0, r).1;
    let (col, fx) = locate(grid.cols, &cx, x);
    let (row, fy) = locate(grid.rows, &cy, y);
    let col1 = (col + 1).min(grid.cols - 1);
    let row1 = (row + 1).min(grid.rows - 1);
    let t00 = grid.threshold_of(col, row);
    let t10 = grid.threshold_of(col1, row);
    let t01 = grid.threshold_of(col, row1);
    let t11 = grid.threshold_of(col1, row1);
    let top = t00 + fx * (t10 - t00);
    let bottom = t01 + fx * (t11 - t01);
    Ok(top + fy * (bottom - top))
}

/// Expand a finalized grid into a per-pixel threshold map.
pub fn interpolate_pixel_map(grid: &RegionGrid) -> Result<ThresholdMap> {
    if !grid.is_finalized() {
        return Err(Error::UnfinalizedGrid);
    }
    let mut values = Vec::with_capacity(grid.image_width * grid.image_height);
    for y in 0..grid.image_height {
        for x in 0..grid.image_width {
            values.push(threshold_at(grid, x as f64, y as f64)?);
        }
    }
    ThresholdMap::new(grid.image_width, grid.image_height, values)
}

/// Full dynamic pipeline: partition, per-region thresholds, neighbor fill,
/// per-pixel interpolation, classification.
pub fn dynamic_binarize(
    img: &GrayImage,
    region_width: usize,
    region_height: usize,
    tolerance: f64,
) -> Result<(BinaryImage, ThresholdMap)> {
    let grid = partition(img, region_width, region_height)?;
    let grid = estimate_region_thresholds(grid, tolerance);
    let grid = fill_invalid_regions(grid)?;
    let map = interpolate_pixel_map(&grid)?;
    let pixels = img
        .pixels
        .iter()
        .zip(map.values.iter())
        .map(|(&p, &t)| u8::from(f64::from(p) > t))
        .collect();
    let bin = BinaryImage::new(img.width, img.height, pixels)?;
    Ok((bin, map))
}
