//! Synthetic line-scan acquisition with exact ground truth.
//!
//! Real conveyor imagery mixes a two-level scene with a chain of
//! distortions: nonuniform illumination across the scan line, per-cell
//! sensitivity differences, sensor segments with their own gain, an
//! exposure factor that follows the conveyor speed, and additive noise
//! from the whole lighting-optics-sensor chain. This module builds frame
//! stacks through exactly that chain, noise entering after every gain and
//! before quantization:
//!
//! ```text
//! pixel = clamp(round(level(covered) * I(x) * G(x) * seg(x) * g(V) + N(0, sigma)))
//! ```
//!
//! with round-half-up quantization and clamping to [0, 255]. Because the
//! object coverage of every pixel in every frame is decided here, each
//! stack comes with an exact mask stack, and [`planted_truth`] reports the
//! per-pixel mixture parameters the downstream fits should recover.
//!
//! Randomness is reproducible across machines and across thread counts:
//! frame `i` reads its coverage draws from ChaCha8 stream `2 * i` and its
//! noise draws from stream `2 * i + 1`, both seeded from the model seed,
//! one draw per pixel in row-major order regardless of configuration.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use std::ops::Range;

use crate::error::{Error, Result};
use crate::image::{BinaryImage, FrameStack, GrayImage};
use crate::mixture::{BimodalMixture, GaussianComponent, SIGMA_FLOOR};
use crate::speed::PiecewiseLinear;

/// Default fraction of frames in which a pixel sees the object. Inspection
/// scenes are mostly background, so the default sits well below one half.
pub const DEFAULT_OBJECT_FRACTION: f64 = 0.3;

/// Conveyor speed at which the reference exposure response equals one.
pub const REFERENCE_SPEED: f64 = 20.7;

/// Measured object intensity versus conveyor speed on the reference
/// line-scan setup, used to derive the default exposure factor g(V).
const REFERENCE_RESPONSE: [(f64, f64); 11] = [
    (20.7, 221.532847),
    (25.9, 174.338624),
    (31.1, 147.510373),
    (36.2, 130.479452),
    (41.3, 118.513120),
    (46.4, 109.644670),
    (51.4, 102.927928),
    (56.5, 97.474747),
    (61.6, 93.040293),
    (66.7, 89.363484),
    (72.5, 85.877863),
];

/// Which pixels the object covers in a given frame.
#[derive(Debug, Clone, PartialEq)]
pub enum Occupancy {
    /// Each pixel is covered independently with the given probability.
    Uniform { fraction: f64 },
    /// Vertical stripes of `duty` covered columns per `period`, shifted by
    /// `drift` columns every frame. Deterministic; the coverage fraction a
    /// pixel accumulates depends on its column and on gcd(drift, period).
    Stripes { period: usize, duty: usize, drift: usize },
    /// The object never appears; frames show only the scene.
    Never,
}

impl Occupancy {
    /// Long-run fraction of frames in which column `x` is covered.
    pub fn expected_fraction(&self, x: usize) -> f64 {
        match *self {
            Occupancy::Uniform { fraction } => fraction,
            Occupancy::Never => 0.0,
            Occupancy::Stripes { period, duty, drift } => {
                // The phase of column x walks the residue class of
                // x mod gcd(drift, period); count how much of that orbit
                // lies inside the duty window.
                let g = gcd(drift % period, period).max(1);
                let orbit = period / g;
                let rem = x % g;
                let covered = if rem < duty { (duty - rem).div_ceil(g) } else { 0 };
                covered as f64 / orbit as f64
            }
        }
    }

    fn covers(&self, x: usize, frame: usize, draw: f64) -> bool {
        match *self {
            Occupancy::Uniform { fraction } => draw < fraction,
            Occupancy::Never => false,
            Occupancy::Stripes { period, duty, drift } => (x + frame * drift) % period < duty,
        }
    }
}

fn gcd(mut a: usize, mut b: usize) -> usize {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// Exposure factor g(V) applied to all intensities at conveyor speed V.
#[derive(Debug, Clone, PartialEq)]
pub enum SpeedResponse {
    /// Piecewise-linear interpolation of the reference measurements,
    /// normalized so g([`REFERENCE_SPEED`]) = 1. Valid for speeds within
    /// the measured range.
    Reference,
    /// No speed dependence; any positive speed is valid.
    Flat,
    /// Caller-supplied curve evaluated as-is; normalizing it so the
    /// reference speed maps to one is the caller's business. Valid within
    /// the curve's knot range.
    Custom(PiecewiseLinear),
}

impl SpeedResponse {
    /// The factor at speed `v`, or an error when `v` lies outside the
    /// response's valid range.
    pub fn factor(&self, v: f64) -> Result<f64> {
        if !(v.is_finite() && v > 0.0) {
            return Err(Error::InvalidModel(format!("speed {v} must be positive")));
        }
        let in_domain = |curve: &PiecewiseLinear| -> Result<()> {
            if v < curve.min_x() || v > curve.max_x() {
                return Err(Error::InvalidModel(format!(
                    "speed {v} outside response range [{}, {}]",
                    curve.min_x(),
                    curve.max_x()
                )));
            }
            Ok(())
        };
        match self {
            SpeedResponse::Flat => Ok(1.0),
            SpeedResponse::Reference => {
                let curve = PiecewiseLinear::new(REFERENCE_RESPONSE.to_vec());
                in_domain(&curve)?;
                Ok(curve.eval(v) / curve.eval(REFERENCE_SPEED))
            }
            SpeedResponse::Custom(curve) => {
                in_domain(curve)?;
                Ok(curve.eval(v))
            }
        }
    }
}

/// Full description of a synthetic acquisition setup.
///
/// Intensities are reals in (0, 255) at unit gain; every distortion is a
/// per-column multiplicative factor except the additive noise. Scene
/// pixels take noise sigma `noise_sigma`; covered pixels take
/// `object_noise_sigma` when set, `noise_sigma` otherwise.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneModel {
    pub width: usize,
    pub height: usize,
    pub scene_level: f64,
    pub object_level: f64,
    pub noise_sigma: f64,
    pub object_noise_sigma: Option<f64>,
    /// Per-column illumination factor I(x), strictly positive.
    pub illumination: Vec<f64>,
    /// Per-column sensor cell gain G(x), nonnegative so dead cells can be
    /// planted.
    pub cell_gain: Vec<f64>,
    /// Sensor segments with their own gain, applied on top of `cell_gain`
    /// over the given column ranges.
    pub nonlinearity_segments: Vec<(Range<usize>, f64)>,
    pub occupancy: Occupancy,
    /// Columns that never see the object regardless of `occupancy`.
    pub object_free_columns: Vec<usize>,
    pub speed_response: SpeedResponse,
    pub seed: u64,
}

impl SceneModel {
    /// Distortion-free model: flat profiles, independent per-pixel
    /// coverage at the default fraction, no speed dependence.
    pub fn uniform(
        width: usize,
        height: usize,
        scene_level: f64,
        object_level: f64,
        noise_sigma: f64,
        seed: u64,
    ) -> SceneModel {
        SceneModel {
            width,
            height,
            scene_level,
            object_level,
            noise_sigma,
            object_noise_sigma: None,
            illumination: vec![1.0; width],
            cell_gain: vec![1.0; width],
            nonlinearity_segments: Vec::new(),
            occupancy: Occupancy::Uniform { fraction: DEFAULT_OBJECT_FRACTION },
            object_free_columns: Vec::new(),
            speed_response: SpeedResponse::Flat,
            seed,
        }
    }

    /// Check every parameter against its domain.
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::InvalidModel(msg));
        if self.width == 0 || self.height == 0 {
            return fail(format!("geometry {}x{} is empty", self.width, self.height));
        }
        for (name, level) in [("scene_level", self.scene_level), ("object_level", self.object_level)] {
            if !(level.is_finite() && level > 0.0 && level < 255.0) {
                return fail(format!("{name} {level} outside (0, 255)"));
            }
        }
        if self.scene_level >= self.object_level {
            return fail(format!(
                "scene_level {} must lie below object_level {}",
                self.scene_level, self.object_level
            ));
        }
        for sigma in [Some(self.noise_sigma), self.object_noise_sigma].into_iter().flatten() {
            if !(sigma.is_finite() && sigma >= 0.0) {
                return fail(format!("noise sigma {sigma} must be nonnegative"));
            }
        }
        if self.illumination.len() != self.width {
            return fail(format!(
                "illumination profile has {} entries for width {}",
                self.illumination.len(),
                self.width
            ));
        }
        if let Some(bad) = self.illumination.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
            return fail(format!("illumination factor {bad} must be positive"));
        }
        if self.cell_gain.len() != self.width {
            return fail(format!(
                "cell gain profile has {} entries for width {}",
                self.cell_gain.len(),
                self.width
            ));
        }
        if let Some(bad) = self.cell_gain.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return fail(format!("cell gain {bad} must be nonnegative"));
        }
        for (range, gain) in &self.nonlinearity_segments {
            if range.end > self.width {
                return fail(format!(
                    "segment {}..{} exceeds width {}",
                    range.start, range.end, self.width
                ));
            }
            if !(gain.is_finite() && *gain > 0.0) {
                return fail(format!("segment gain {gain} must be positive"));
            }
        }
        match self.occupancy {
            Occupancy::Uniform { fraction } => {
                if !(fraction.is_finite() && (0.0..=1.0).contains(&fraction)) {
                    return fail(format!("occupancy fraction {fraction} outside [0, 1]"));
                }
            }
            Occupancy::Stripes { period, duty, .. } => {
                if period == 0 {
                    return fail("stripe period must be at least 1".to_string());
                }
                if duty > period {
                    return fail(format!("stripe duty {duty} exceeds period {period}"));
                }
            }
            Occupancy::Never => {}
        }
        if let Some(&bad) = self.object_free_columns.iter().find(|&&c| c >= self.width) {
            return fail(format!("object-free column {bad} exceeds width {}", self.width));
        }
        if let SpeedResponse::Custom(curve) = &self.speed_response {
            if let Some((x, y)) = curve.knots().find(|(_, y)| *y <= 0.0) {
                return fail(format!("custom response value {y} at speed {x} must be positive"));
            }
        }
        Ok(())
    }

    /// Combined multiplicative factor for each column at exposure `g`.
    fn column_factors(&self, g: f64) -> Vec<f64> {
        let mut factors: Vec<f64> =
            (0..self.width).map(|x| self.illumination[x] * self.cell_gain[x] * g).collect();
        for (range, gain) in &self.nonlinearity_segments {
            for x in range.clone() {
                factors[x] *= gain;
            }
        }
        factors
    }

    fn object_free_mask(&self) -> Vec<bool> {
        let mut free = vec![false; self.width];
        for &c in &self.object_free_columns {
            free[c] = true;
        }
        free
    }

    fn object_sigma(&self) -> f64 {
        self.object_noise_sigma.unwrap_or(self.noise_sigma)
    }
}

/// Return a copy of `model` with the cell gain forced to `gain` on the
/// given columns, planting a sensor defect downstream code should detect.
pub fn defect_band(model: &SceneModel, columns: Range<usize>, gain: f64) -> Result<SceneModel> {
    if columns.end > model.width {
        return Err(Error::InvalidModel(format!(
            "defect band {}..{} exceeds width {}",
            columns.start, columns.end, model.width
        )));
    }
    if !(gain.is_finite() && gain >= 0.0) {
        return Err(Error::InvalidModel(format!("defect gain {gain} must be nonnegative")));
    }
    let mut patched = model.clone();
    for x in columns {
        patched.cell_gain[x] = gain;
    }
    Ok(patched)
}

/// Illumination profile falling or rising linearly across the scan line,
/// from 1 - amplitude at the left edge to 1 + amplitude at the right.
pub fn linear_illumination(width: usize, amplitude: f64) -> Vec<f64> {
    if width <= 1 {
        return vec![1.0; width];
    }
    (0..width)
        .map(|x| 1.0 + amplitude * (2.0 * x as f64 / (width - 1) as f64 - 1.0))
        .collect()
}

/// Random per-cell gain profile, Normal(1, sigma) per column, clamped away
/// from zero so the result always validates. Reads ChaCha8 stream
/// `u64::MAX`, leaving every frame stream untouched.
pub fn gain_profile(width: usize, sigma: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(u64::MAX);
    let dist = Normal::new(1.0, sigma).expect("finite nonnegative sigma");
    (0..width).map(|_| dist.sample(&mut rng).max(1e-3)).collect()
}

fn render_frame(
    model: &SceneModel,
    factors: &[f64],
    free: &[bool],
    index: usize,
) -> (GrayImage, BinaryImage) {
    let mut occupancy_rng = ChaCha8Rng::seed_from_u64(model.seed);
    occupancy_rng.set_stream(2 * index as u64);
    let mut noise_rng = ChaCha8Rng::seed_from_u64(model.seed);
    noise_rng.set_stream(2 * index as u64 + 1);

    let object_sigma = model.object_sigma();
    let mut pixels = Vec::with_capacity(model.width * model.height);
    let mut mask = Vec::with_capacity(model.width * model.height);
    for _y in 0..model.height {
        for x in 0..model.width {
            // Both streams advance once per pixel no matter what the
            // configuration ignores, keeping draws aligned across models
            // that share a seed.
            let coverage_draw: f64 = occupancy_rng.gen();
            let z: f64 = noise_rng.sample(StandardNormal);
            let covered = !free[x] && model.occupancy.covers(x, index, coverage_draw);
            let (level, sigma) = if covered {
                (model.object_level, object_sigma)
            } else {
                (model.scene_level, model.noise_sigma)
            };
            let value = (level * factors[x] + z * sigma + 0.5).floor().clamp(0.0, 255.0);
            pixels.push(value as u8);
            mask.push(covered as u8);
        }
    }
    let frame = GrayImage::new(model.width, model.height, pixels).expect("sized to geometry");
    let truth = BinaryImage::new(model.width, model.height, mask).expect("sized to geometry");
    (frame, truth)
}

/// Generate `frames` frames at conveyor speed `speed`, with the exact
/// object mask of every frame. Deterministic for a fixed model seed; frames
/// render in parallel and still match a serial run bit for bit because
/// every frame owns its two RNG streams.
pub fn generate_stack(
    model: &SceneModel,
    frames: usize,
    speed: f64,
) -> Result<(FrameStack, Vec<BinaryImage>)> {
    model.validate()?;
    if frames == 0 {
        return Err(Error::InvalidModel("frame count must be at least 1".to_string()));
    }
    let g = model.speed_response.factor(speed)?;
    let factors = model.column_factors(g);
    let free = model.object_free_mask();
    let rendered: Vec<(GrayImage, BinaryImage)> = (0..frames)
        .into_par_iter()
        .map(|i| render_frame(model, &factors, &free, i))
        .collect();
    let (grays, masks): (Vec<GrayImage>, Vec<BinaryImage>) = rendered.into_iter().unzip();
    Ok((FrameStack::new(grays, Some(speed))?, masks))
}

/// Exact pre-quantization mixture parameters of one pixel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlantedPixel {
    pub scene_mu: f64,
    pub scene_sigma: f64,
    pub object_mu: f64,
    pub object_sigma: f64,
    /// Long-run fraction of frames in which the pixel is covered.
    pub object_fraction: f64,
}

impl PlantedPixel {
    /// The two-component mixture this pixel's temporal histogram draws
    /// from, or `None` when it is single-mode: coverage that never or
    /// always happens, or gains that collapse the modes together.
    pub fn mixture(&self) -> Option<BimodalMixture> {
        if !(self.object_fraction > 0.0 && self.object_fraction < 1.0) {
            return None;
        }
        BimodalMixture::new(
            GaussianComponent {
                mu: self.scene_mu,
                sigma: self.scene_sigma.max(SIGMA_FLOOR),
                prior: 1.0 - self.object_fraction,
            },
            GaussianComponent {
                mu: self.object_mu,
                sigma: self.object_sigma.max(SIGMA_FLOOR),
                prior: self.object_fraction,
            },
        )
        .ok()
    }
}

/// Per-pixel mixture parameters implied by the model at speed `speed`,
/// row-major, before quantization and clamping. These are the values a
/// perfect calibration would recover.
pub fn planted_truth(model: &SceneModel, speed: f64) -> Result<Vec<PlantedPixel>> {
    model.validate()?;
    let g = model.speed_response.factor(speed)?;
    let factors = model.column_factors(g);
    let free = model.object_free_mask();
    let object_sigma = model.object_sigma();
    let mut pixels = Vec::with_capacity(model.width * model.height);
    for _y in 0..model.height {
        for x in 0..model.width {
            let fraction =
                if free[x] { 0.0 } else { model.occupancy.expected_fraction(x) };
            pixels.push(PlantedPixel {
                scene_mu: model.scene_level * factors[x],
                scene_sigma: model.noise_sigma,
                object_mu: model.object_level * factors[x],
                object_sigma,
                object_fraction: fraction,
            });
        }
    }
    Ok(pixels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::global_threshold::solve_optimal;

    #[test]
    fn distortion_free_frames_contain_exactly_the_two_levels() {
        let model = SceneModel::uniform(32, 16, 40.0, 180.0, 0.0, 11);
        let (stack, masks) = generate_stack(&model, 50, 30.0).unwrap();
        assert_eq!(stack.frame_count(), 50);
        assert_eq!(stack.acquisition_speed, Some(30.0));
        assert_eq!(masks.len(), 50);
        for (frame, mask) in stack.frames.iter().zip(&masks) {
            for (p, m) in frame.pixels.iter().zip(&mask.pixels) {
                match m {
                    0 => assert_eq!(*p, 40),
                    _ => assert_eq!(*p, 180),
                }
            }
        }
    }

    #[test]
    fn equal_seeds_give_bit_identical_stacks() {
        let model = SceneModel::uniform(24, 8, 40.0, 180.0, 3.0, 77);
        let (a, ma) = generate_stack(&model, 20, 30.0).unwrap();
        let (b, mb) = generate_stack(&model, 20, 30.0).unwrap();
        for i in 0..20 {
            assert_eq!(a.frames[i].pixels, b.frames[i].pixels);
            assert_eq!(ma[i].pixels, mb[i].pixels);
        }
        let mut reseeded = model.clone();
        reseeded.seed = 78;
        let (c, _) = generate_stack(&reseeded, 20, 30.0).unwrap();
        assert!((0..20).any(|i| a.frames[i].pixels != c.frames[i].pixels));
    }

    #[test]
    fn scene_noise_matches_the_planted_sigma() {
        let mut model = SceneModel::uniform(16, 4, 40.0, 180.0, 3.0, 5);
        model.occupancy = Occupancy::Never;
        let (stack, masks) = generate_stack(&model, 1000, 30.0).unwrap();
        assert!(masks.iter().all(|m| m.count_ones() == 0));
        for y in 0..4 {
            for x in 0..16 {
                let samples: Vec<f64> =
                    stack.frames.iter().map(|f| f.get(x, y) as f64).collect();
                let n = samples.len() as f64;
                let mean = samples.iter().sum::<f64>() / n;
                let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0);
                assert!(
                    (2.5..=3.5).contains(&var.sqrt()),
                    "pixel ({x},{y}) sample sigma {}",
                    var.sqrt()
                );
                assert!((mean - 40.0).abs() <= 0.5, "pixel ({x},{y}) sample mean {mean}");
            }
        }
    }

    #[test]
    fn per_mode_noise_levels_are_honored() {
        let mut model = SceneModel::uniform(16, 4, 40.0, 180.0, 3.0, 21);
        model.object_noise_sigma = Some(5.0);
        let (stack, masks) = generate_stack(&model, 600, 30.0).unwrap();
        let mut scene = Vec::new();
        let mut object = Vec::new();
        for (frame, mask) in stack.frames.iter().zip(&masks) {
            for (p, m) in frame.pixels.iter().zip(&mask.pixels) {
                if *m == 1 {
                    object.push(*p as f64);
                } else {
                    scene.push(*p as f64);
                }
            }
        }
        let std = |v: &[f64]| {
            let n = v.len() as f64;
            let mean = v.iter().sum::<f64>() / n;
            (v.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        assert!((2.5..=3.5).contains(&std(&scene)), "scene sigma {}", std(&scene));
        assert!((4.5..=5.5).contains(&std(&object)), "object sigma {}", std(&object));
        let truth = planted_truth(&model, 30.0).unwrap();
        assert_eq!(truth[0].scene_sigma, 3.0);
        assert_eq!(truth[0].object_sigma, 5.0);
    }

    #[test]
    fn uniform_occupancy_fraction_stays_in_the_configured_band() {
        let model = SceneModel::uniform(32, 8, 40.0, 180.0, 0.0, 3);
        let (_, masks) = generate_stack(&model, 1000, 30.0).unwrap();
        for y in 0..8 {
            for x in 0..32 {
                let covered: usize =
                    masks.iter().map(|m| m.get(x, y) as usize).sum();
                let fraction = covered as f64 / 1000.0;
                assert!(
                    (0.2..=0.4).contains(&fraction),
                    "pixel ({x},{y}) coverage {fraction}"
                );
            }
        }
    }

    #[test]
    fn stripe_coverage_matches_the_planted_fraction_exactly() {
        let mut model = SceneModel::uniform(20, 3, 40.0, 180.0, 0.0, 9);
        model.occupancy = Occupancy::Stripes { period: 10, duty: 3, drift: 1 };
        let (_, masks) = generate_stack(&model, 1000, 30.0).unwrap();
        let truth = planted_truth(&model, 30.0).unwrap();
        for y in 0..3 {
            for x in 0..20 {
                let covered: usize = masks.iter().map(|m| m.get(x, y) as usize).sum();
                let expected = truth[y * 20 + x].object_fraction * 1000.0;
                assert_eq!(covered as f64, expected, "pixel ({x},{y})");
            }
        }
    }

    #[test]
    fn stripe_fractions_account_for_drift_period_cycles() {
        let stripes = Occupancy::Stripes { period: 10, duty: 3, drift: 2 };
        // Even columns cycle through phases {0,2,4,6,8}, two of which lie
        // under the duty window; odd columns through {1,3,5,7,9}, one.
        assert_eq!(stripes.expected_fraction(4), 0.4);
        assert_eq!(stripes.expected_fraction(5), 0.2);
        let frozen = Occupancy::Stripes { period: 10, duty: 3, drift: 0 };
        assert_eq!(frozen.expected_fraction(2), 1.0);
        assert_eq!(frozen.expected_fraction(3), 0.0);
    }

    #[test]
    fn planted_truth_is_flat_for_a_flat_model() {
        let model = SceneModel::uniform(16, 4, 40.0, 180.0, 3.0, 1);
        let truth = planted_truth(&model, 30.0).unwrap();
        assert_eq!(truth.len(), 64);
        assert!(truth.iter().all(|p| *p == truth[0]));
        let mixture = truth[0].mixture().unwrap();
        assert_eq!(mixture.background.mu, 40.0);
        assert_eq!(mixture.object.mu, 180.0);
        assert_eq!(mixture.background.prior, 0.7);
        assert_eq!(mixture.object.prior, 0.3);
    }

    #[test]
    fn planted_means_scale_with_the_illumination_profile() {
        let mut model = SceneModel::uniform(64, 2, 40.0, 180.0, 3.0, 1);
        model.illumination = linear_illumination(64, 0.3);
        let truth = planted_truth(&model, 30.0).unwrap();
        for x in 0..64 {
            let i = model.illumination[x];
            assert_eq!(truth[x].scene_mu, 40.0 * i);
            assert_eq!(truth[x].object_mu, 180.0 * i);
            assert_eq!(truth[x + 64], truth[x]);
        }
    }

    #[test]
    fn planted_parameters_reproduce_the_measured_optimal_threshold() {
        let mut model = SceneModel::uniform(64, 64, 90.0, 120.0, 8.0, 4242);
        model.occupancy = Occupancy::Uniform { fraction: 0.3 };
        let (stack, masks) = generate_stack(&model, 400, 30.0).unwrap();

        // Count scene and object samples per level, then sweep all integer
        // cuts for the empirically best threshold.
        let mut scene = [0u64; 256];
        let mut object = [0u64; 256];
        for (frame, mask) in stack.frames.iter().zip(&masks) {
            for (p, m) in frame.pixels.iter().zip(&mask.pixels) {
                if *m == 1 {
                    object[*p as usize] += 1;
                } else {
                    scene[*p as usize] += 1;
                }
            }
        }
        let mut best_t = 0usize;
        let mut best_errors = u64::MAX;
        let mut object_below: u64 = 0;
        let mut scene_above: u64 = scene.iter().sum();
        for t in 0..256 {
            object_below += object[t];
            scene_above -= scene[t];
            let errors = object_below + scene_above;
            if errors < best_errors {
                best_errors = errors;
                best_t = t;
            }
        }

        let planted = planted_truth(&model, 30.0).unwrap()[0].mixture().unwrap();
        let solution = solve_optimal(&planted).unwrap();
        // Integer data localizes the measured optimum only to a unit
        // interval; its midpoint is the fair comparison point.
        let measured = best_t as f64 + 0.5;
        assert!(
            (solution.threshold - measured).abs() <= 0.5 + 1e-9,
            "solved {} vs measured {measured}",
            solution.threshold
        );
    }

    #[test]
    fn reference_response_normalizes_at_the_reference_speed() {
        assert!((SpeedResponse::Reference.factor(20.7).unwrap() - 1.0).abs() <= 1e-12);
        let slow = SpeedResponse::Reference.factor(25.9).unwrap();
        assert!((slow - 174.338624 / 221.532847).abs() <= 1e-12);
        let fast = SpeedResponse::Reference.factor(72.5).unwrap();
        assert!((fast - 85.877863 / 221.532847).abs() <= 1e-12);
        assert!(slow > fast);
        assert!(SpeedResponse::Reference.factor(10.0).is_err());
        assert!(SpeedResponse::Reference.factor(80.0).is_err());
    }

    #[test]
    fn reference_response_scales_generated_intensities() {
        let mut model = SceneModel::uniform(8, 4, 40.0, 180.0, 0.0, 2);
        model.speed_response = SpeedResponse::Reference;
        let truth = planted_truth(&model, 36.2).unwrap();
        let g = 130.479452 / 221.532847;
        assert!((truth[0].object_mu - 180.0 * g).abs() <= 1e-9);
        let (stack, masks) = generate_stack(&model, 10, 36.2).unwrap();
        let expected = (180.0 * g + 0.5).floor() as u8;
        for (frame, mask) in stack.frames.iter().zip(&masks) {
            for (p, m) in frame.pixels.iter().zip(&mask.pixels) {
                if *m == 1 {
                    assert_eq!(*p, expected);
                }
            }
        }
        assert!(generate_stack(&model, 10, 10.0).is_err());
    }

    #[test]
    fn defect_band_with_unit_gain_is_the_identity() {
        let model = SceneModel::uniform(32, 8, 40.0, 180.0, 3.0, 6);
        assert_eq!(defect_band(&model, 10..20, 1.0).unwrap(), model);
        assert!(defect_band(&model, 30..40, 1.0).is_err());
        assert!(defect_band(&model, 0..4, -0.5).is_err());
    }

    #[test]
    fn dead_gain_band_emits_only_clamped_noise() {
        let model = SceneModel::uniform(32, 8, 40.0, 180.0, 3.0, 13);
        let dead = defect_band(&model, 10..20, 0.0).unwrap();
        let (stack, masks) = generate_stack(&dead, 50, 30.0).unwrap();
        let mut band_max = 0u8;
        let mut band_sum = 0u64;
        let mut band_covered = 0usize;
        for (frame, mask) in stack.frames.iter().zip(&masks) {
            for y in 0..8 {
                for x in 10..20 {
                    band_max = band_max.max(frame.get(x, y));
                    band_sum += frame.get(x, y) as u64;
                    band_covered += mask.get(x, y) as usize;
                }
            }
        }
        assert!(band_max <= 20, "band max {band_max}");
        assert!((band_sum as f64 / 4000.0) < 3.0);
        // The mask still marks where the object is, visible or not.
        assert!(band_covered > 0);
    }

    #[test]
    fn object_free_columns_never_see_the_object() {
        let mut model = SceneModel::uniform(12, 4, 40.0, 180.0, 0.0, 8);
        model.occupancy = Occupancy::Uniform { fraction: 0.5 };
        model.object_free_columns = vec![3, 7];
        let (_, masks) = generate_stack(&model, 100, 30.0).unwrap();
        for mask in &masks {
            for y in 0..4 {
                assert_eq!(mask.get(3, y), 0);
                assert_eq!(mask.get(7, y), 0);
            }
        }
        let truth = planted_truth(&model, 30.0).unwrap();
        assert_eq!(truth[3].object_fraction, 0.0);
        assert!(truth[3].mixture().is_none());
        assert_eq!(truth[4].object_fraction, 0.5);
    }

    #[test]
    fn validation_rejects_malformed_models() {
        let good = SceneModel::uniform(8, 4, 40.0, 180.0, 3.0, 1);
        assert!(good.validate().is_ok());
        let mut m = good.clone();
        m.illumination.pop();
        assert!(m.validate().is_err());
        let mut m = good.clone();
        m.occupancy = Occupancy::Uniform { fraction: 1.5 };
        assert!(m.validate().is_err());
        let mut m = good.clone();
        m.noise_sigma = -1.0;
        assert!(m.validate().is_err());
        let mut m = good.clone();
        m.scene_level = 200.0;
        assert!(m.validate().is_err());
        let mut m = good.clone();
        m.cell_gain[2] = -0.1;
        assert!(m.validate().is_err());
        let mut m = good.clone();
        m.occupancy = Occupancy::Stripes { period: 4, duty: 5, drift: 1 };
        assert!(m.validate().is_err());
        let mut m = good.clone();
        m.nonlinearity_segments.push((6..10, 1.1));
        assert!(m.validate().is_err());
        let mut m = good.clone();
        m.object_free_columns = vec![8];
        assert!(m.validate().is_err());
        assert!(generate_stack(&good, 0, 30.0).is_err());
    }

    #[test]
    fn nonlinearity_segments_multiply_into_the_column_factors() {
        let mut model = SceneModel::uniform(8, 2, 40.0, 180.0, 0.0, 1);
        model.nonlinearity_segments = vec![(2..6, 0.5), (4..8, 0.8)];
        let truth = planted_truth(&model, 30.0).unwrap();
        assert_eq!(truth[0].scene_mu, 40.0);
        assert_eq!(truth[2].scene_mu, 20.0);
        assert_eq!(truth[4].scene_mu, 40.0 * 0.5 * 0.8);
        assert_eq!(truth[6].scene_mu, 40.0 * 0.8);
    }

    #[test]
    fn profile_helpers_produce_valid_columns() {
        let ramp = linear_illumination(3, 0.3);
        assert!((ramp[0] - 0.7).abs() <= 1e-12);
        assert!((ramp[1] - 1.0).abs() <= 1e-12);
        assert!((ramp[2] - 1.3).abs() <= 1e-12);
        assert_eq!(linear_illumination(1, 0.3), vec![1.0]);

        let gains = gain_profile(1000, 0.03, 9);
        assert_eq!(gains, gain_profile(1000, 0.03, 9));
        assert!(gains.iter().all(|g| *g > 0.0));
        let mean = gains.iter().sum::<f64>() / 1000.0;
        assert!((mean - 1.0).abs() <= 0.01, "profile mean {mean}");
        let var = gains.iter().map(|g| (g - mean).powi(2)).sum::<f64>() / 999.0;
        assert!((0.025..=0.035).contains(&var.sqrt()), "profile sigma {}", var.sqrt());
    }
}
