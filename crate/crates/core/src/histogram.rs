//! 256-bin intensity histograms.
//!
//! Histograms are built spatially (over an image or a region of it) or
//! temporally (one pixel's values across a frame stack). The gray-level
//! histogram, normalized, is the empirical probability density the mixture
//! model is fitted against. Bin values are the integer levels 0..=255
//! themselves; the bin count is fixed at 256.

use crate::error::{Error, Result};
use crate::image::{FrameStack, GrayImage, Rect};

/// Number of representable gray levels; bins are the levels themselves.
pub const LEVELS: usize = 256;

/// Raw-count histogram over the 256 gray levels.
///
/// Counts are kept raw (not normalized) so histograms accumulated from
/// different sample sizes stay comparable; normalization is derived on
/// demand.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Histogram {
    counts: [u64; LEVELS],
    total: u64,
}

impl Default for Histogram {
    fn default() -> Self {
        Histogram::new()
    }
}

impl Histogram {
    /// Empty histogram.
    pub fn new() -> Self {
        Histogram {
            counts: [0; LEVELS],
            total: 0,
        }
    }

    /// Histogram from explicit per-bin counts.
    pub fn from_counts(counts: [u64; LEVELS]) -> Self {
        let total = counts.iter().sum();
        Histogram { counts, total }
    }

    /// Record one sample at `level`.
    #[inline]
    pub fn add(&mut self, level: u8) {
        self.counts[level as usize] += 1;
        self.total += 1;
    }

    /// Bin-wise accumulate another histogram (used to pool frames).
    pub fn accumulate(&mut self, other: &Histogram) {
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += *b;
        }
        self.total += other.total;
    }

    /// Per-bin sample counts.
    pub fn counts(&self) -> &[u64; LEVELS] {
        &self.counts
    }

    /// Count in a single bin.
    #[inline]
    pub fn count(&self, level: usize) -> u64 {
        self.counts[level]
    }

    /// Total number of samples.
    pub fn total(&self) -> u64 {
        self.total
    }

    /// Number of bins holding at least one sample.
    pub fn occupied_bins(&self) -> usize {
        self.counts.iter().filter(|&&c| c > 0).count()
    }

    /// Mean level over all samples.
    pub fn mean(&self) -> Result<f64> {
        Ok(mean_and_variance(self, 0, LEVELS - 1)?.mean)
    }
}

/// Weighted moments of a histogram slice.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassStats {
    /// Weighted mean level.
    pub mean: f64,
    /// Population variance (division by the class count, not count-1).
    pub variance: f64,
    /// Fraction of all samples that fall inside the range.
    pub mass: f64,
}

/// Histogram of an image, or of a rectangular region of it.
pub fn build_spatial(image: &GrayImage, region: Option<Rect>) -> Result<Histogram> {
    let mut h = Histogram::new();
    match region {
        None => {
            for &p in &image.pixels {
                h.add(p);
            }
        }
        Some(rect) => {
            rect.validate_within(image.width, image.height)?;
            for y in rect.y..rect.y + rect.height {
                let row = y * image.width;
                for &p in &image.pixels[row + rect.x..row + rect.x + rect.width] {
                    h.add(p);
                }
            }
        }
    }
    Ok(h)
}

/// Histogram of one pixel's values across every frame of a stack.
pub fn build_temporal(stack: &FrameStack, x: usize, y: usize) -> Result<Histogram> {
    if stack.frames.is_empty() {
        return Err(Error::EmptyStack);
    }
    if x >= stack.width || y >= stack.height {
        return Err(Error::PixelOutOfBounds {
            x,
            y,
            width: stack.width,
            height: stack.height,
        });
    }
    let idx = y * stack.width + x;
    let mut h = Histogram::new();
    for frame in &stack.frames {
        h.add(frame.pixels[idx]);
    }
    Ok(h)
}

/// Normalized histogram h(x_i) = counts[i] / total.
pub fn normalize(h: &Histogram) -> Result<[f64; LEVELS]> {
    if h.total == 0 {
        return Err(Error::EmptyHistogram);
    }
    let total = h.total as f64;
    let mut out = [0.0; LEVELS];
    for (o, &c) in out.iter_mut().zip(&h.counts) {
        *o = c as f64 / total;
    }
    Ok(out)
}

/// Weighted mean, population variance, and mass of the bins `lo..=hi`.
///
/// Mass is relative to the whole histogram, so the two classes of a split
/// histogram have masses that sum to 1.
pub fn mean_and_variance(h: &Histogram, lo: usize, hi: usize) -> Result<ClassStats> {
    assert!(lo <= hi && hi < LEVELS, "bin range [{lo},{hi}] out of order or out of bounds");
    if h.total == 0 {
        return Err(Error::EmptyHistogram);
    }
    let mut class_count: u64 = 0;
    let mut sum = 0.0;
    for (level, &c) in h.counts[lo..=hi].iter().enumerate() {
        class_count += c;
        sum += (lo + level) as f64 * c as f64;
    }
    if class_count == 0 {
        return Err(Error::EmptyClass { lo, hi });
    }
    let mean = sum / class_count as f64;
    let mut sq = 0.0;
    for (level, &c) in h.counts[lo..=hi].iter().enumerate() {
        let d = (lo + level) as f64 - mean;
        sq += d * d * c as f64;
    }
    let variance = sq / class_count as f64;
    Ok(ClassStats {
        mean,
        variance,
        mass: class_count as f64 / h.total as f64,
    })
}
