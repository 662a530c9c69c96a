//! Pixel containers shared by every stage of the pipeline.
//!
//! A [`GrayImage`] is an 8-bit intensity raster in row-major order; linear
//! (line-scan) images are ordinary images with `height == 1`. A
//! [`BinaryImage`] is the classification result, storing only 0 (background)
//! and 1 (object). A [`FrameStack`] is an ordered sequence of frames with
//! identical geometry, as produced by a camera watching a moving scene. A
//! [`ThresholdMap`] assigns every pixel its own real-valued threshold.

use crate::error::{Error, Result};

/// Rectangular image region, `x`/`y` top-left corner, in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rect {
    pub x: usize,
    pub y: usize,
    pub width: usize,
    pub height: usize,
}

impl Rect {
    /// Check that the rectangle is nonempty and fits inside `width`x`height`.
    pub fn validate_within(&self, width: usize, height: usize) -> Result<()> {
        let fits = self.width >= 1
            && self.height >= 1
            && self.x.checked_add(self.width).is_some_and(|r| r <= width)
            && self.y.checked_add(self.height).is_some_and(|b| b <= height);
        if fits {
            Ok(())
        } else {
            Err(Error::RegionOutOfBounds {
                x: self.x,
                y: self.y,
                width: self.width,
                height: self.height,
                image_width: width,
                image_height: height,
            })
        }
    }
}

/// 8-bit gray-level image, row-major, every value in [0,255] by construction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl GrayImage {
    /// Build an image from raw pixels, validating the geometry.
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        check_geometry(width, height, pixels.len())?;
        Ok(GrayImage {
            width,
            height,
            pixels,
        })
    }

    /// Constant image of the given size.
    pub fn filled(width: usize, height: usize, value: u8) -> Result<Self> {
        GrayImage::new(width, height, vec![value; width * height])
    }

    /// Pixel accessor; panics if (x,y) is outside the image.
    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        debug_assert!(x < self.width && y < self.height);
        self.pixels[y * self.width + x]
    }

    /// Number of pixels.
    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }
}

/// Two-valued classification image; pixels hold only 0 or 1.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl BinaryImage {
    /// Build a binary image, validating geometry and the 0/1 value domain.
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        check_geometry(width, height, pixels.len())?;
        if let Some(bad) = pixels.iter().find(|&&p| p > 1) {
            return Err(Error::InvalidGeometry(format!(
                "binary image contains value {bad}, only 0 and 1 are allowed"
            )));
        }
        Ok(BinaryImage {
            width,
            height,
            pixels,
        })
    }

    /// Pixel accessor; panics if (x,y) is outside the image.
    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        debug_assert!(x < self.width && y < self.height);
        self.pixels[y * self.width + x]
    }

    /// Count of pixels classified as object (value 1).
    pub fn count_ones(&self) -> usize {
        self.pixels.iter().filter(|&&p| p == 1).count()
    }

    /// Number of pixels where `self` and `other` disagree.
    pub fn mismatch_count(&self, other: &BinaryImage) -> Result<usize> {
        if self.width != other.width || self.height != other.height {
            return Err(Error::GeometryMismatch {
                expected_width: self.width,
                expected_height: self.height,
                width: other.width,
                height: other.height,
            });
        }
        Ok(self
            .pixels
            .iter()
            .zip(&other.pixels)
            .filter(|(a, b)| a != b)
            .count())
    }

    /// Fraction of pixels where `self` and `other` disagree.
    pub fn mismatch_fraction(&self, other: &BinaryImage) -> Result<f64> {
        Ok(self.mismatch_count(other)? as f64 / self.pixels.len() as f64)
    }
}

/// Ordered frames of identical geometry captured from the same scene.
///
/// `acquisition_speed` records the conveyor speed (m/min) the frames were
/// captured at, when known; speed compensation needs it to rescale
/// thresholds later.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameStack {
    pub width: usize,
    pub height: usize,
    pub frames: Vec<GrayImage>,
    pub acquisition_speed: Option<f64>,
}

impl FrameStack {
    /// Assemble a stack, validating that every frame shares one geometry.
    pub fn new(frames: Vec<GrayImage>, acquisition_speed: Option<f64>) -> Result<Self> {
        let first = frames.first().ok_or(Error::EmptyStack)?;
        let (width, height) = (first.width, first.height);
        for frame in &frames {
            if frame.width != width || frame.height != height {
                return Err(Error::GeometryMismatch {
                    expected_width: width,
                    expected_height: height,
                    width: frame.width,
                    height: frame.height,
                });
            }
        }
        Ok(FrameStack {
            width,
            height,
            frames,
            acquisition_speed,
        })
    }

    /// Number of frames L.
    pub fn frame_count(&self) -> usize {
        self.frames.len()
    }

    /// New stack restricted to `rect` of every frame, keeping frame order.
    pub fn crop(&self, rect: Rect) -> Result<FrameStack> {
        rect.validate_within(self.width, self.height)?;
        let frames = self
            .frames
            .iter()
            .map(|f| {
                let mut pixels = Vec::with_capacity(rect.width * rect.height);
                for y in rect.y..rect.y + rect.height {
                    let row = y * self.width;
                    pixels.extend_from_slice(&f.pixels[row + rect.x..row + rect.x + rect.width]);
                }
                GrayImage::new(rect.width, rect.height, pixels)
            })
            .collect::<Result<Vec<_>>>()?;
        FrameStack::new(frames, self.acquisition_speed)
    }
}

/// Per-pixel real-valued threshold surface T(x,y).
///
/// Values are finite and stay within [0,255]; a threshold of exactly 255
/// classifies everything as background because the pixel comparison is
/// strict (`value > threshold`).
#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdMap {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
}

impl ThresholdMap {
    /// Build a map, validating geometry, finiteness, and the value range.
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        check_geometry(width, height, values.len())?;
        if let Some(bad) = values.iter().find(|v| !v.is_finite() || **v < 0.0 || **v > 255.0) {
            return Err(Error::InvalidGeometry(format!(
                "threshold value {bad} outside [0,255]"
            )));
        }
        Ok(ThresholdMap {
            width,
            height,
            values,
        })
    }

    /// Threshold at (x,y); panics if outside the map.
    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        debug_assert!(x < self.width && y < self.height);
        self.values[y * self.width + x]
    }
}

fn check_geometry(width: usize, height: usize, len: usize) -> Result<()> {
    if width == 0 || height == 0 {
        return Err(Error::InvalidGeometry(format!(
            "dimensions {width}x{height} must both be at least 1"
        )));
    }
    let expected = width
        .checked_mul(height)
        .ok_or_else(|| Error::InvalidGeometry("dimensions overflow".into()))?;
    if expected != len {
        return Err(Error::InvalidGeometry(format!(
            "{width}x{height} image needs {expected} pixels, got {len}"
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn geometry_validation_rejects_zero_dims_and_bad_lengths() {
        assert!(GrayImage::new(0, 1, vec![]).is_err());
        assert!(GrayImage::new(1, 0, vec![]).is_err());
        assert!(GrayImage::new(2, 2, vec![0; 3]).is_err());
        assert!(GrayImage::new(2, 2, vec![0; 4]).is_ok());
    }

    #[test]
    fn binary_image_rejects_values_above_one() {
        assert!(BinaryImage::new(2, 1, vec![0, 2]).is_err());
        assert!(BinaryImage::new(2, 1, vec![0, 1]).is_ok());
    }

    #[test]
    fn mismatch_fraction_counts_disagreements() {
        let a = BinaryImage::new(4, 1, vec![0, 1, 0, 1]).unwrap();
        let b = BinaryImage::new(4, 1, vec![0, 1, 1, 1]).unwrap();
        assert_eq!(a.mismatch_count(&b).unwrap(), 1);
        assert!((a.mismatch_fraction(&b).unwrap() - 0.25).abs() < 1e-15);
    }

    #[test]
    fn stack_requires_uniform_geometry() {
        let f1 = GrayImage::filled(4, 1, 10).unwrap();
        let f2 = GrayImage::filled(5, 1, 10).unwrap();
        assert!(FrameStack::new(vec![f1.clone(), f2], None).is_err());
        assert!(FrameStack::new(vec![f1.clone(), f1], None).is_ok());
        assert!(matches!(
            FrameStack::new(vec![], None),
            Err(Error::EmptyStack)
        ));
    }

    #[test]
    fn crop_extracts_the_requested_rectangle() {
        let frame = GrayImage::new(4, 2, vec![0, 1, 2, 3, 4, 5, 6, 7]).unwrap();
        let stack = FrameStack::new(vec![frame], Some(20.7)).unwrap();
        let sub = stack
            .crop(Rect {
                x: 1,
                y: 0,
                width: 2,
                height: 2,
            })
            .unwrap();
        assert_eq!(sub.frames[0].pixels, vec![1, 2, 5, 6]);
        assert_eq!(sub.acquisition_speed, Some(20.7));
    }

    #[test]
    fn threshold_map_rejects_non_finite_values() {
        assert!(ThresholdMap::new(1, 1, vec![f64::NAN]).is_err());
        assert!(ThresholdMap::new(1, 1, vec![256.0]).is_err());
        assert!(ThresholdMap::new(1, 1, vec![255.0]).is_ok());
    }
}
