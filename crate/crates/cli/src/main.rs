//! Command-line front end for the binarization toolchain.
//!
//! Every subcommand is a thin wrapper over the library: images and stacks
//! come from files, results go back to files or stdout, and diagnostics go
//! to stderr. Exit status is 0 on success, 1 on any domain failure, and 2
//! on usage errors (clap's default).

use std::ops::Range;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use graybin::{
    apply, apply_map, build_table_from_csv, calibrate, dynamic_binarize, generate_stack,
    global_binarize, linear_illumination, lookup, quality_report, read_calibration, read_pgm,
    read_speed_table, read_stack, scale_threshold_map, validate_bimodal, write_binary_image,
    write_calibration, write_speed_table, write_stack, Error, Occupancy, Result, SceneModel,
    SpeedResponse, ThresholdMethod, DEFAULT_ERROR_TOLERANCE, DEFAULT_FIT_TOLERANCE,
    DEFAULT_MIN_FRAMES,
};

#[derive(Parser)]
#[command(
    name = "graybin",
    version,
    about = "Gray-level binarization: global, region-adaptive, and per-pixel temporal thresholding"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a two-Gaussian model to an image histogram and report the
    /// minimum-error threshold.
    FitGlobal {
        /// Input image (8-bit binary PGM).
        image: PathBuf,
        /// Largest acceptable mean-square fit error.
        #[arg(long, default_value_t = DEFAULT_FIT_TOLERANCE)]
        tolerance: f64,
    },

    /// Binarize an image with a single whole-image threshold.
    BinarizeGlobal {
        image: PathBuf,
        /// Output mask (PGM, object pixels white).
        output: PathBuf,
        #[arg(long, default_value_t = DEFAULT_FIT_TOLERANCE)]
        tolerance: f64,
    },

    /// Binarize an image with per-region thresholds interpolated into a
    /// smooth per-pixel threshold surface.
    BinarizeDynamic {
        image: PathBuf,
        output: PathBuf,
        /// Region size, WIDTHxHEIGHT.
        #[arg(long, value_parser = parse_region_size, default_value = "64x64")]
        region: (usize, usize),
        #[arg(long, default_value_t = DEFAULT_FIT_TOLERANCE)]
        tolerance: f64,
    },

    /// Calibrate per-pixel thresholds from a stack of frames and store the
    /// threshold, error, and flag maps.
    CalibrateTemporal {
        /// Stack manifest (key=value file naming the frames).
        manifest: PathBuf,
        /// Output basename; writes <base>.tmap, .emap, .flags, and .meta.
        output: PathBuf,
        /// Fewest frames accepted for a trustworthy calibration.
        #[arg(long, default_value_t = DEFAULT_MIN_FRAMES)]
        min_frames: usize,
        /// Expected-error level above which a pixel is flagged.
        #[arg(long, default_value_t = DEFAULT_ERROR_TOLERANCE)]
        tolerance: f64,
    },

    /// Classify an image against a stored per-pixel calibration, optionally
    /// rescaled to another conveyor speed.
    BinarizeTemporal {
        /// Calibration basename, as written by calibrate-temporal.
        calibration: PathBuf,
        image: PathBuf,
        output: PathBuf,
        /// Conveyor speed to rescale the thresholds to; needs --table.
        #[arg(long, requires = "table")]
        speed: Option<f64>,
        /// Speed-compensation table; needs --speed.
        #[arg(long, requires = "speed")]
        table: Option<PathBuf>,
    },

    /// Summarize a stored calibration: flag counts, error statistics, and
    /// connected defect areas.
    QualityReport {
        /// Calibration basename, as written by calibrate-temporal.
        calibration: PathBuf,
    },

    /// Compile a speed-calibration CSV into a threshold-vs-speed breakpoint
    /// table.
    BuildSpeedTable {
        /// CSV of (speed, threshold) or full 8-column sweep rows.
        csv: PathBuf,
        output: PathBuf,
    },

    /// Print the compensated threshold for one conveyor speed.
    LookupSpeed {
        table: PathBuf,
        speed: f64,
    },

    /// Render a synthetic frame stack plus ground-truth masks from a scene
    /// description.
    Simulate {
        /// Scene description (key=value file, see the README).
        config: PathBuf,
        /// Output directory for frames, manifest, and truth masks.
        out_dir: PathBuf,
    },
}

/// Parse a WIDTHxHEIGHT region size argument.
fn parse_region_size(s: &str) -> std::result::Result<(usize, usize), String> {
    let (w, h) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("'{s}' is not WIDTHxHEIGHT"))?;
    let parse = |part: &str| {
        part.trim()
            .parse::<usize>()
            .map_err(|_| format!("'{part}' is not a positive integer"))
    };
    Ok((parse(w)?, parse(h)?))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::FitGlobal { image, tolerance } => fit_global(&image, tolerance),
        Command::BinarizeGlobal {
            image,
            output,
            tolerance,
        } => {
            let img = read_pgm(&image)?;
            let (mask, result) = global_binarize(&img, tolerance)?;
            write_binary_image(&output, &mask)?;
            eprintln!(
                "threshold {} expected error {:.3e}",
                result.threshold, result.expected_error
            );
            Ok(())
        }
        Command::BinarizeDynamic {
            image,
            output,
            region,
            tolerance,
        } => {
            let img = read_pgm(&image)?;
            let (mask, _) = dynamic_binarize(&img, region.0, region.1, tolerance)?;
            write_binary_image(&output, &mask)?;
            Ok(())
        }
        Command::CalibrateTemporal {
            manifest,
            output,
            min_frames,
            tolerance,
        } => {
            let stack = read_stack(&manifest)?;
            let calib = calibrate(&stack, min_frames, tolerance)?;
            write_calibration(&output, &calib)?;
            let report = quality_report(&calib);
            eprintln!(
                "calibrated {} pixels: {} ok, {} not bimodal, {} above tolerance",
                calib.width() * calib.height(),
                report.ok_count,
                report.not_bimodal_count,
                report.error_above_tolerance_count
            );
            Ok(())
        }
        Command::BinarizeTemporal {
            calibration,
            image,
            output,
            speed,
            table,
        } => {
            let calib = read_calibration(&calibration)?;
            let img = read_pgm(&image)?;
            let mask = match (speed, table) {
                (Some(v), Some(table_path)) => {
                    let table = read_speed_table(&table_path)?;
                    let scaled = scale_threshold_map(&calib, &table, v)?;
                    apply_map(&scaled, &img)?
                }
                _ => apply(&calib, &img)?,
            };
            write_binary_image(&output, &mask)?;
            Ok(())
        }
        Command::QualityReport { calibration } => {
            let calib = read_calibration(&calibration)?;
            let report = quality_report(&calib);
            println!("pixels {}", calib.width() * calib.height());
            println!("ok {}", report.ok_count);
            println!("not_bimodal {}", report.not_bimodal_count);
            println!("error_above_tolerance {}", report.error_above_tolerance_count);
            println!("max_error {:e}", report.max_error);
            println!("mean_error {:e}", report.mean_error);
            println!("defect_areas {}", report.defect_areas.len());
            for (i, area) in report.defect_areas.iter().enumerate() {
                println!(
                    "defect {} at {},{} size {}x{} pixels {}",
                    i + 1,
                    area.rect.x,
                    area.rect.y,
                    area.rect.width,
                    area.rect.height,
                    area.pixel_count
                );
            }
            Ok(())
        }
        Command::BuildSpeedTable { csv, output } => {
            let table = build_table_from_csv(&csv)?;
            write_speed_table(&output, &table)?;
            let (v_min, v_max) = table.speed_range();
            eprintln!("table covers speeds {v_min} to {v_max}");
            Ok(())
        }
        Command::LookupSpeed { table, speed } => {
            let table = read_speed_table(&table)?;
            println!("{}", lookup(&table, speed));
            Ok(())
        }
        Command::Simulate { config, out_dir } => simulate(&config, &out_dir),
    }
}

fn method_label(method: ThresholdMethod) -> &'static str {
    match method {
        ThresholdMethod::QuadraticRoot => "quadratic-root",
        ThresholdMethod::EqualSigma => "equal-sigma",
        ThresholdMethod::EqualPriorMidpoint => "equal-prior-midpoint",
    }
}

fn fit_global(image: &Path, tolerance: f64) -> Result<()> {
    let img = read_pgm(image)?;
    let histogram = graybin::build_spatial(&img, None)?;
    let mixture = validate_bimodal(&histogram, tolerance).into_result()?;
    let result = graybin::solve_optimal(&mixture)?;
    println!("threshold {}", result.threshold);
    println!("expected_error {:e}", result.expected_error);
    println!("method {}", method_label(result.method));
    for (name, c) in [("background", &mixture.background), ("object", &mixture.object)] {
        println!("{name} mu {} sigma {} prior {}", c.mu, c.sigma, c.prior);
    }
    if let Some(fit_error) = mixture.fit_error {
        println!("fit_error {fit_error:e}");
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Scene configs

/// One parsed key=value line with the byte offset of its line start.
struct ConfigEntry {
    value: String,
    offset: u64,
    used: std::cell::Cell<bool>,
}

/// Key=value scene description; `#` starts a comment line, blank lines are
/// skipped, keys may appear once.
struct SceneConfig {
    path: PathBuf,
    entries: Vec<(String, ConfigEntry)>,
}

impl SceneConfig {
    fn load(path: &Path) -> Result<SceneConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        let mut entries: Vec<(String, ConfigEntry)> = Vec::new();
        let mut offset = 0u64;
        for line in text.lines() {
            let line_offset = offset;
            offset += line.len() as u64 + 1;
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let (key, value) = trimmed.split_once('=').ok_or_else(|| Error::Format {
                path: path.to_path_buf(),
                offset: line_offset,
                message: format!("line '{trimmed}' is not key=value"),
            })?;
            let key = key.trim().to_string();
            if entries.iter().any(|(k, _)| *k == key) {
                return Err(Error::Format {
                    path: path.to_path_buf(),
                    offset: line_offset,
                    message: format!("duplicate key '{key}'"),
                });
            }
            entries.push((
                key,
                ConfigEntry {
                    value: value.trim().to_string(),
                    offset: line_offset,
                    used: std::cell::Cell::new(false),
                },
            ));
        }
        Ok(SceneConfig {
            path: path.to_path_buf(),
            entries,
        })
    }

    fn error(&self, offset: u64, message: String) -> Error {
        Error::Format {
            path: self.path.clone(),
            offset,
            message,
        }
    }

    fn entry(&self, key: &str) -> Option<&ConfigEntry> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, e)| {
            e.used.set(true);
            e
        })
    }

    /// Optional value parsed by `parse`, which receives (value, offset).
    fn optional<T>(
        &self,
        key: &str,
        parse: impl FnOnce(&str, u64) -> Result<T>,
    ) -> Result<Option<T>> {
        match self.entry(key) {
            Some(e) => parse(&e.value, e.offset).map(Some),
            None => Ok(None),
        }
    }

    fn required<T>(&self, key: &str, parse: impl FnOnce(&str, u64) -> Result<T>) -> Result<T> {
        self.optional(key, parse)?
            .ok_or_else(|| self.error(0, format!("scene config is missing '{key}'")))
    }

    fn number<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        self.required(key, |v, offset| {
            v.parse::<T>()
                .map_err(|_| self.error(offset, format!("{key} '{v}' is not a number")))
        })
    }

    fn optional_number<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>> {
        self.optional(key, |v, offset| {
            v.parse::<T>()
                .map_err(|_| self.error(offset, format!("{key} '{v}' is not a number")))
        })
    }

    /// Every key must have been consumed by one of the accessors.
    fn finish(self) -> Result<()> {
        for (key, entry) in &self.entries {
            if !entry.used.get() {
                return Err(self.error(entry.offset, format!("unknown scene key '{key}'")));
            }
        }
        Ok(())
    }
}

/// Parse `uniform:F`, `stripes:PERIOD:DUTY:DRIFT`, or `never`.
fn parse_occupancy(config: &SceneConfig, value: &str, offset: u64) -> Result<Occupancy> {
    let bad = |msg: String| config.error(offset, msg);
    if value == "never" {
        return Ok(Occupancy::Never);
    }
    if let Some(fraction) = value.strip_prefix("uniform:") {
        let fraction = fraction
            .parse::<f64>()
            .map_err(|_| bad(format!("occupancy fraction '{fraction}' is not a number")))?;
        return Ok(Occupancy::Uniform { fraction });
    }
    if let Some(rest) = value.strip_prefix("stripes:") {
        let parts: Vec<&str> = rest.split(':').collect();
        if parts.len() != 3 {
            return Err(bad(format!(
                "stripes occupancy '{value}' is not stripes:PERIOD:DUTY:DRIFT"
            )));
        }
        let mut nums = [0usize; 3];
        for (slot, part) in nums.iter_mut().zip(&parts) {
            *slot = part
                .parse::<usize>()
                .map_err(|_| bad(format!("stripes parameter '{part}' is not a count")))?;
        }
        return Ok(Occupancy::Stripes {
            period: nums[0],
            duty: nums[1],
            drift: nums[2],
        });
    }
    Err(bad(format!(
        "occupancy '{value}' is not uniform:F, stripes:PERIOD:DUTY:DRIFT, or never"
    )))
}

/// Parse `START..END:GAIN` into a column range and gain factor.
fn parse_defect_band(config: &SceneConfig, value: &str, offset: u64) -> Result<(Range<usize>, f64)> {
    let bad = |msg: String| config.error(offset, msg);
    let invalid = || bad(format!("defect_band '{value}' is not START..END:GAIN"));
    let (range, gain) = value.split_once(':').ok_or_else(invalid)?;
    let (start, end) = range.split_once("..").ok_or_else(invalid)?;
    let start = start.parse::<usize>().map_err(|_| invalid())?;
    let end = end.parse::<usize>().map_err(|_| invalid())?;
    let gain = gain.parse::<f64>().map_err(|_| invalid())?;
    Ok((start..end, gain))
}

fn build_scene_model(config: &SceneConfig) -> Result<SceneModel> {
    let width: usize = config.number("width")?;
    let height: usize = config.number("height")?;
    let mut model = SceneModel::uniform(
        width,
        height,
        config.number("scene_level")?,
        config.number("object_level")?,
        config.number("noise_sigma")?,
        config.number("seed")?,
    );
    model.object_noise_sigma = config.optional_number("object_noise_sigma")?;

    if let Some(amplitude) = config.optional_number::<f64>("illumination_amplitude")? {
        model.illumination = linear_illumination(width, amplitude);
    }
    if let Some(sigma) = config.optional_number::<f64>("gain_sigma")? {
        let gain_seed = config.optional_number("gain_seed")?.unwrap_or(model.seed);
        model.cell_gain = graybin::gain_profile(width, sigma, gain_seed);
    }
    if let Some(occupancy) =
        config.optional("occupancy", |v, offset| parse_occupancy(config, v, offset))?
    {
        model.occupancy = occupancy;
    }
    if let Some(columns) = config.optional("object_free_columns", |v, offset| {
        v.split(',')
            .map(|part| {
                part.trim().parse::<usize>().map_err(|_| {
                    config.error(offset, format!("object-free column '{part}' is not a count"))
                })
            })
            .collect::<Result<Vec<usize>>>()
    })? {
        model.object_free_columns = columns;
    }
    if let Some(response) = config.optional("speed_response", |v, offset| match v {
        "flat" => Ok(SpeedResponse::Flat),
        "reference" => Ok(SpeedResponse::Reference),
        other => Err(config.error(offset, format!("speed_response '{other}' is not flat or reference"))),
    })? {
        model.speed_response = response;
    }
    if let Some((columns, gain)) =
        config.optional("defect_band", |v, offset| parse_defect_band(config, v, offset))?
    {
        model = graybin::defect_band(&model, columns, gain)?;
    }
    Ok(model)
}

fn simulate(config_path: &Path, out_dir: &Path) -> Result<()> {
    let config = SceneConfig::load(config_path)?;
    let frames: usize = config.number("frames")?;
    let speed: f64 = config.number("speed")?;
    let model = build_scene_model(&config)?;
    let seed = model.seed;
    config.finish()?;

    let (stack, truth) = generate_stack(&model, frames, speed)?;
    let manifest_path = write_stack(out_dir, &stack, Some(seed))?;
    for (i, mask) in truth.iter().enumerate() {
        write_binary_image(&out_dir.join(format!("truth_{i}.pgm")), mask)?;
    }
    println!("{}", manifest_path.display());
    Ok(())
}
