//! File formats: PGM images, stack manifests, threshold and error maps,
//! flag maps, calibration bundles, and the speed CSV formats.
//!
//! Every format is plain bytes or plain text so test failures diff cleanly.
//! Real numbers are written with the shortest decimal form that parses back
//! to the identical value, so numeric round trips are exact. All writers
//! stage into a temporary file in the destination directory and rename into
//! place, so a failed write never leaves a partial file behind.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::histogram::LEVELS;
use crate::image::{BinaryImage, FrameStack, GrayImage, ThresholdMap};
use crate::speed::{build_table, SpeedCalibrationPoint, SpeedThresholdTable};
use crate::temporal_threshold::{PixelFlag, TemporalCalibration};

fn format_error(path: &Path, offset: u64, message: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        offset,
        message: message.into(),
    }
}

fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(path, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

// ---------------------------------------------------------------------------
// PGM images

/// Byte cursor over a PGM header, reporting errors with their offset.
struct PgmCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> PgmCursor<'a> {
    fn skip_separators(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            match b {
                b' ' | b'\t' | b'\r' | b'\n' => self.pos += 1,
                b'#' => {
                    while let Some(&c) = self.bytes.get(self.pos) {
                        self.pos += 1;
                        if c == b'\n' {
                            break;
                        }
                    }
                }
                _ => break,
            }
        }
    }

    /// Next whitespace-delimited token and the offset where it starts.
    fn token(&mut self, what: &str) -> Result<(&'a str, u64)> {
        self.skip_separators();
        let start = self.pos;
        while let Some(&b) = self.bytes.get(self.pos) {
            if b.is_ascii_whitespace() {
                break;
            }
            self.pos += 1;
        }
        if self.pos == start {
            return Err(format_error(
                self.path,
                start as u64,
                format!("unexpected end of file while reading {what}"),
            ));
        }
        let token = std::str::from_utf8(&self.bytes[start..self.pos])
            .map_err(|_| format_error(self.path, start as u64, format!("{what} is not ASCII")))?;
        Ok((token, start as u64))
    }

    fn number(&mut self, what: &str) -> Result<(usize, u64)> {
        let (token, offset) = self.token(what)?;
        let value = token
            .parse::<usize>()
            .map_err(|_| format_error(self.path, offset, format!("{what} '{token}' is not a number")))?;
        Ok((value, offset))
    }
}

/// Read a binary 8-bit PGM (magic P5, maxval 255).
pub fn read_pgm(path: &Path) -> Result<GrayImage> {
    let bytes = read_bytes(path)?;
    let mut cur = PgmCursor { bytes: &bytes, pos: 0, path };
    let (magic, offset) = cur.token("magic number")?;
    match magic {
        "P5" => {}
        "P2" => {
            return Err(format_error(path, offset, "ASCII PGM (P2) is not supported, only binary P5"))
        }
        other => {
            return Err(format_error(path, offset, format!("magic '{other}' is not P5")));
        }
    }
    let (width, w_off) = cur.number("width")?;
    let (height, h_off) = cur.number("height")?;
    if width == 0 {
        return Err(format_error(path, w_off, "width must be at least 1"));
    }
    if height == 0 {
        return Err(format_error(path, h_off, "height must be at least 1"));
    }
    let (maxval, m_off) = cur.number("maxval")?;
    if maxval != 255 {
        return Err(format_error(path, m_off, format!("maxval {maxval} unsupported, only 255")));
    }
    match bytes.get(cur.pos) {
        Some(b) if b.is_ascii_whitespace() => cur.pos += 1,
        _ => {
            return Err(format_error(
                path,
                cur.pos as u64,
                "expected a single whitespace byte after maxval",
            ))
        }
    }
    let expected = width
        .checked_mul(height)
        .ok_or_else(|| format_error(path, w_off, "image dimensions overflow"))?;
    let available = bytes.len() - cur.pos;
    if available < expected {
        return Err(format_error(
            path,
            bytes.len() as u64,
            format!("pixel data truncated: expected {expected} bytes, found {available}"),
        ));
    }
    let pixels = bytes[cur.pos..cur.pos + expected].to_vec();
    GrayImage::new(width, height, pixels)
}

/// Write a binary 8-bit PGM (magic P5, maxval 255).
pub fn write_pgm(path: &Path, img: &GrayImage) -> Result<()> {
    let mut bytes = format!("P5\n{} {}\n255\n", img.width, img.height).into_bytes();
    bytes.extend_from_slice(&img.pixels);
    atomic_write(path, &bytes)
}

/// Write a classification as a PGM, mapping 1 to 255 and 0 to 0 so any
/// image viewer shows the object in white.
pub fn write_binary_image(path: &Path, img: &BinaryImage) -> Result<()> {
    let pixels: Vec<u8> = img.pixels.iter().map(|&p| if p == 1 { 255 } else { 0 }).collect();
    let gray = GrayImage::new(img.width, img.height, pixels)?;
    write_pgm(path, &gray)
}

/// Read a PGM written by [`write_binary_image`] back into a classification,
/// treating every value above 127 as 1.
pub fn read_binary_image(path: &Path) -> Result<BinaryImage> {
    let gray = read_pgm(path)?;
    let pixels = gray.pixels.iter().map(|&p| u8::from(p > 127)).collect();
    BinaryImage::new(gray.width, gray.height, pixels)
}

// ---------------------------------------------------------------------------
// Stack manifests

/// Descriptor of a frame stack on disk: geometry, frame count, the filename
/// pattern of the frames (relative to the manifest), and the acquisition
/// metadata worth keeping.
#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub width: usize,
    pub height: usize,
    pub frames: usize,
    /// Frame filename pattern containing `{i}`, replaced by the zero-based
    /// frame index.
    pub pattern: String,
    pub speed: Option<f64>,
    pub seed: Option<u64>,
}

impl Manifest {
    pub fn frame_file(&self, index: usize) -> String {
        self.pattern.replace("{i}", &index.to_string())
    }
}

/// Parse `key=value` lines; `#` starts a comment line, blank lines skipped.
fn parse_kv(path: &Path, text: &str) -> Result<Vec<(String, String, u64)>> {
    let mut pairs = Vec::new();
    let mut offset = 0u64;
    for line in text.lines() {
        let line_offset = offset;
        offset += line.len() as u64 + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let (key, value) = trimmed.split_once('=').ok_or_else(|| {
            format_error(path, line_offset, format!("line '{trimmed}' is not key=value"))
        })?;
        pairs.push((key.trim().to_string(), value.trim().to_string(), line_offset));
    }
    Ok(pairs)
}

pub fn read_manifest(path: &Path) -> Result<Manifest> {
    let text = read_text(path)?;
    let mut width = None;
    let mut height = None;
    let mut frames = None;
    let mut pattern = None;
    let mut speed = None;
    let mut seed = None;
    for (key, value, offset) in parse_kv(path, &text)? {
        let bad = |what: &str| format_error(path, offset, format!("{key} '{value}' is not {what}"));
        match key.as_str() {
            "width" => width = Some(value.parse::<usize>().map_err(|_| bad("a count"))?),
            "height" => height = Some(value.parse::<usize>().map_err(|_| bad("a count"))?),
            "frames" => frames = Some(value.parse::<usize>().map_err(|_| bad("a count"))?),
            "pattern" => pattern = Some(value),
            "speed" => speed = Some(value.parse::<f64>().map_err(|_| bad("a number"))?),
            "seed" => seed = Some(value.parse::<u64>().map_err(|_| bad("a count"))?),
            other => {
                return Err(format_error(path, offset, format!("unknown manifest key '{other}'")))
            }
        }
    }
    fn require<T>(path: &Path, name: &str, v: Option<T>) -> Result<T> {
        v.ok_or_else(|| format_error(path, 0, format!("manifest is missing '{name}'")))
    }
    let manifest = Manifest {
        width: require(path, "width", width)?,
        height: require(path, "height", height)?,
        frames: require(path, "frames", frames)?,
        pattern: require(path, "pattern", pattern)?,
        speed,
        seed,
    };
    if !manifest.pattern.contains("{i}") {
        return Err(format_error(path, 0, "pattern must contain the placeholder {i}"));
    }
    Ok(manifest)
}

pub fn write_manifest(path: &Path, manifest: &Manifest) -> Result<()> {
    let mut text = String::new();
    let _ = writeln!(text, "width={}", manifest.width);
    let _ = writeln!(text, "height={}", manifest.height);
    let _ = writeln!(text, "frames={}", manifest.frames);
    let _ = writeln!(text, "pattern={}", manifest.pattern);
    if let Some(speed) = manifest.speed {
        let _ = writeln!(text, "speed={speed}");
    }
    if let Some(seed) = manifest.seed {
        let _ = writeln!(text, "seed={seed}");
    }
    atomic_write(path, text.as_bytes())
}

/// Load the stack a manifest describes. Any problem with an individual
/// frame file is reported as a manifest error naming that frame.
pub fn read_stack(manifest_path: &Path) -> Result<FrameStack> {
    let manifest = read_manifest(manifest_path)?;
    let dir = manifest_path.parent().unwrap_or(Path::new("."));
    let mut frames = Vec::with_capacity(manifest.frames);
    for i in 0..manifest.frames {
        let name = manifest.frame_file(i);
        let frame = read_pgm(&dir.join(&name)).map_err(|e| Error::Manifest {
            path: manifest_path.to_path_buf(),
            frame: name.clone(),
            message: e.to_string(),
        })?;
        if frame.width != manifest.width || frame.height != manifest.height {
            return Err(Error::Manifest {
                path: manifest_path.to_path_buf(),
                frame: name,
                message: format!(
                    "geometry {}x{} does not match manifest {}x{}",
                    frame.width, frame.height, manifest.width, manifest.height
                ),
            });
        }
        frames.push(frame);
    }
    FrameStack::new(frames, manifest.speed)
}

/// Write every frame of a stack plus a `manifest.txt` describing it, into
/// `dir` (created if needed). Returns the manifest path.
pub fn write_stack(dir: &Path, stack: &FrameStack, seed: Option<u64>) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let manifest = Manifest {
        width: stack.width,
        height: stack.height,
        frames: stack.frame_count(),
        pattern: "frame_{i}.pgm".to_string(),
        speed: stack.acquisition_speed,
        seed,
    };
    for (i, frame) in stack.frames.iter().enumerate() {
        write_pgm(&dir.join(manifest.frame_file(i)), frame)?;
    }
    let path = dir.join("manifest.txt");
    write_manifest(&path, &manifest)?;
    Ok(path)
}

// ---------------------------------------------------------------------------
// Real-valued grids: threshold maps and error maps

fn write_real_grid(path: &Path, width: usize, height: usize, values: &[f64]) -> Result<()> {
    let mut text = format!("{width} {height}\n");
    for row in values.chunks(width) {
        let mut sep = "";
        for v in row {
            let _ = write!(text, "{sep}{v}");
            sep = " ";
        }
        text.push('\n');
    }
    atomic_write(path, text.as_bytes())
}

fn read_real_grid(path: &Path) -> Result<(usize, usize, Vec<f64>)> {
    let text = read_text(path)?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| format_error(path, 0, "empty file, expected 'W H' header"))?;
    let mut parts = header.split_whitespace();
    let parse_dim = |token: Option<&str>, what: &str| -> Result<usize> {
        token
            .and_then(|t| t.parse::<usize>().ok())
            .ok_or_else(|| format_error(path, 0, format!("header '{header}' lacks a valid {what}")))
    };
    let width = parse_dim(parts.next(), "width")?;
    let height = parse_dim(parts.next(), "height")?;
    if parts.next().is_some() {
        return Err(format_error(path, 0, format!("header '{header}' has trailing fields")));
    }
    let expected = width
        .checked_mul(height)
        .ok_or_else(|| format_error(path, 0, "dimensions overflow"))?;
    let body_offset = header.len() as u64 + 1;
    let mut values = Vec::with_capacity(expected);
    for token in lines.flat_map(|l| l.split_whitespace()) {
        let v = token.parse::<f64>().map_err(|_| {
            format_error(path, body_offset, format!("value '{token}' is not a number"))
        })?;
        values.push(v);
    }
    if values.len() != expected {
        return Err(format_error(
            path,
            body_offset,
            format!("expected {expected} values for {width}x{height}, found {}", values.len()),
        ));
    }
    Ok((width, height, values))
}

pub fn write_threshold_map(path: &Path, map: &ThresholdMap) -> Result<()> {
    write_real_grid(path, map.width, map.height, &map.values)
}

pub fn read_threshold_map(path: &Path) -> Result<ThresholdMap> {
    let (width, height, values) = read_real_grid(path)?;
    ThresholdMap::new(width, height, values)
}

// ---------------------------------------------------------------------------
// Flag maps

/// Write per-pixel flags as rows of `o`/`n`/`e` characters under a
/// `W H` header line.
pub fn write_flags(path: &Path, width: usize, height: usize, flags: &[PixelFlag]) -> Result<()> {
    if flags.len() != width * height {
        return Err(Error::InvalidGeometry(format!(
            "{}x{} flag map needs {} entries, got {}",
            width,
            height,
            width * height,
            flags.len()
        )));
    }
    let mut text = format!("{width} {height}\n");
    for row in flags.chunks(width) {
        text.extend(row.iter().map(|&f| f.to_char()));
        text.push('\n');
    }
    atomic_write(path, text.as_bytes())
}

pub fn read_flags(path: &Path) -> Result<(usize, usize, Vec<PixelFlag>)> {
    let text = read_text(path)?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| format_error(path, 0, "empty file, expected 'W H' header"))?;
    let mut parts = header.split_whitespace();
    let parse_dim = |token: Option<&str>, what: &str| -> Result<usize> {
        token
            .and_then(|t| t.parse::<usize>().ok())
            .ok_or_else(|| format_error(path, 0, format!("header '{header}' lacks a valid {what}")))
    };
    let width = parse_dim(parts.next(), "width")?;
    let height = parse_dim(parts.next(), "height")?;
    let mut flags = Vec::with_capacity(width * height);
    let body_offset = header.len() as u64 + 1;
    for line in lines {
        for c in line.chars() {
            let flag = PixelFlag::from_char(c).ok_or_else(|| {
                format_error(path, body_offset, format!("'{c}' is not a flag character (o, n, e)"))
            })?;
            flags.push(flag);
        }
    }
    if flags.len() != width * height {
        return Err(format_error(
            path,
            body_offset,
            format!("expected {} flags for {width}x{height}, found {}", width * height, flags.len()),
        ));
    }
    Ok((width, height, flags))
}

// ---------------------------------------------------------------------------
// Calibration bundles

fn with_suffix(base: &Path, suffix: &str) -> PathBuf {
    let mut s = base.as_os_str().to_os_string();
    s.push(suffix);
    PathBuf::from(s)
}

/// Persist a calibration as four sibling files: `<base>.tmap` (thresholds),
/// `<base>.emap` (expected errors), `<base>.flags`, and `<base>.meta`
/// (frame count and optional speed).
pub fn write_calibration(base: &Path, calib: &TemporalCalibration) -> Result<()> {
    write_threshold_map(&with_suffix(base, ".tmap"), &calib.threshold_map)?;
    write_real_grid(&with_suffix(base, ".emap"), calib.width(), calib.height(), &calib.error_map)?;
    write_flags(&with_suffix(base, ".flags"), calib.width(), calib.height(), &calib.flag_map)?;
    let mut meta = format!("frames_used={}\n", calib.frames_used);
    if let Some(speed) = calib.calibration_speed {
        let _ = writeln!(meta, "calibration_speed={speed}");
    }
    atomic_write(&with_suffix(base, ".meta"), meta.as_bytes())
}

/// Load a calibration bundle written by [`write_calibration`].
pub fn read_calibration(base: &Path) -> Result<TemporalCalibration> {
    let tmap_path = with_suffix(base, ".tmap");
    let map = read_threshold_map(&tmap_path)?;
    let emap_path = with_suffix(base, ".emap");
    let (ew, eh, errors) = read_real_grid(&emap_path)?;
    if (ew, eh) != (map.width, map.height) {
        return Err(format_error(
            &emap_path,
            0,
            format!("error map is {ew}x{eh}, thresholds are {}x{}", map.width, map.height),
        ));
    }
    let flags_path = with_suffix(base, ".flags");
    let (fw, fh, flags) = read_flags(&flags_path)?;
    if (fw, fh) != (map.width, map.height) {
        return Err(format_error(
            &flags_path,
            0,
            format!("flag map is {fw}x{fh}, thresholds are {}x{}", map.width, map.height),
        ));
    }
    let meta_path = with_suffix(base, ".meta");
    let meta = read_text(&meta_path)?;
    let mut frames_used = None;
    let mut speed = None;
    for (key, value, offset) in parse_kv(&meta_path, &meta)? {
        let bad =
            |what: &str| format_error(&meta_path, offset, format!("{key} '{value}' is not {what}"));
        match key.as_str() {
            "frames_used" => frames_used = Some(value.parse::<usize>().map_err(|_| bad("a count"))?),
            "calibration_speed" => speed = Some(value.parse::<f64>().map_err(|_| bad("a number"))?),
            other => {
                return Err(format_error(&meta_path, offset, format!("unknown meta key '{other}'")))
            }
        }
    }
    let frames_used = frames_used
        .ok_or_else(|| format_error(&meta_path, 0, "meta file is missing 'frames_used'"))?;
    TemporalCalibration::new(map, errors, flags, speed, frames_used)
}

// ---------------------------------------------------------------------------
// Speed calibration CSV

const CALIBRATION_HEADER: &str = "speed,threshold,object_min_plus,object_max,object_min_minus,scene_min_plus,scene_max,scene_min_minus";

/// Write calibration points as CSV. Points carrying level sets produce
/// eight columns, bare points two.
pub fn write_speed_calibration(path: &Path, points: &[SpeedCalibrationPoint]) -> Result<()> {
    let mut text = format!("{CALIBRATION_HEADER}\n");
    for p in points {
        match p.levels {
            Some(l) => {
                let _ = writeln!(
                    text,
                    "{},{},{},{},{},{},{},{}",
                    p.speed,
                    p.threshold,
                    l.object_min_plus,
                    l.object_max,
                    l.object_min_minus,
                    l.scene_min_plus,
                    l.scene_max,
                    l.scene_min_minus
                );
            }
            None => {
                let _ = writeln!(text, "{},{}", p.speed, p.threshold);
            }
        }
    }
    atomic_write(path, text.as_bytes())
}

/// Read calibration points plus the 1-based line number of the first data
/// row, for error reporting that matches what an editor shows.
fn read_speed_calibration_lines(path: &Path) -> Result<(Vec<SpeedCalibrationPoint>, usize)> {
    let text = read_text(path)?;
    let mut points = Vec::new();
    let mut first_data_line = 0usize;
    let mut offset = 0u64;
    for (number, line) in text.lines().enumerate() {
        let line_offset = offset;
        offset += line.len() as u64 + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        if number == 0 && trimmed.starts_with("speed") {
            continue;
        }
        if first_data_line == 0 {
            first_data_line = number + 1;
        }
        let fields: Vec<&str> = trimmed.split(',').map(str::trim).collect();
        if fields.len() != 2 && fields.len() != 8 {
            return Err(format_error(
                path,
                line_offset,
                format!("line {}: expected 2 or 8 columns, found {}", number + 1, fields.len()),
            ));
        }
        let mut parsed = Vec::with_capacity(fields.len());
        for f in &fields {
            let v = f.parse::<f64>().map_err(|_| {
                format_error(path, line_offset, format!("line {}: '{f}' is not a number", number + 1))
            })?;
            parsed.push(v);
        }
        let levels = (fields.len() == 8).then(|| crate::speed::LevelSet {
            object_min_plus: parsed[2],
            object_max: parsed[3],
            object_min_minus: parsed[4],
            scene_min_plus: parsed[5],
            scene_max: parsed[6],
            scene_min_minus: parsed[7],
        });
        points.push(SpeedCalibrationPoint { speed: parsed[0], threshold: parsed[1], levels });
    }
    Ok((points, first_data_line.max(1)))
}

pub fn read_speed_calibration(path: &Path) -> Result<Vec<SpeedCalibrationPoint>> {
    read_speed_calibration_lines(path).map(|(points, _)| points)
}

/// Read a calibration CSV and compile it, reporting any ordering problem
/// with the 1-based CSV line numbers of the offending rows.
pub fn build_table_from_csv(path: &Path) -> Result<SpeedThresholdTable> {
    let (points, first_line) = read_speed_calibration_lines(path)?;
    build_table(&points).map_err(|e| match e {
        Error::DuplicateSpeed { speed, row_a, row_b } => Error::DuplicateSpeed {
            speed,
            row_a: row_a + first_line,
            row_b: row_b + first_line,
        },
        Error::NonMonotoneThresholds { row_a, row_b, threshold_a, threshold_b } => {
            Error::NonMonotoneThresholds {
                row_a: row_a + first_line,
                row_b: row_b + first_line,
                threshold_a,
                threshold_b,
            }
        }
        Error::InvalidCalibrationPoint { index, message } => Error::InvalidCalibrationPoint {
            index: index + first_line,
            message,
        },
        other => other,
    })
}

// ---------------------------------------------------------------------------
// Speed threshold table CSV

/// Write a compiled table: 256 rows of `t,breakpoint_speed` with `NEVER`
/// for unreachable levels, followed by one `point,speed,threshold` row per
/// calibration point so a reload can rebuild the interpolation curve.
pub fn write_speed_table(path: &Path, table: &SpeedThresholdTable) -> Result<()> {
    let mut text = String::new();
    for (t, entry) in table.entries().iter().enumerate() {
        match entry {
            Some(v) => {
                let _ = writeln!(text, "{t},{v}");
            }
            None => {
                let _ = writeln!(text, "{t},NEVER");
            }
        }
    }
    for p in table.points() {
        let _ = writeln!(text, "point,{},{}", p.speed, p.threshold);
    }
    atomic_write(path, text.as_bytes())
}

/// Reload a table written by [`write_speed_table`]. The calibration rows
/// rebuild the table; the 256 entry rows are then cross-checked against the
/// rebuilt entries so a hand-edited, inconsistent file is rejected. Level
/// sets are not stored in this format, so reloaded points carry none.
pub fn read_speed_table(path: &Path) -> Result<SpeedThresholdTable> {
    let text = read_text(path)?;
    let mut entries: Vec<Option<f64>> = Vec::with_capacity(LEVELS);
    let mut points = Vec::new();
    let mut offset = 0u64;
    for (number, line) in text.lines().enumerate() {
        let line_offset = offset;
        offset += line.len() as u64 + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let fields: Vec<&str> = trimmed.split(',').map(str::trim).collect();
        let bad = |msg: String| format_error(path, line_offset, format!("line {}: {msg}", number + 1));
        if fields[0] == "point" {
            if fields.len() != 3 {
                return Err(bad(format!("point row has {} fields, expected 3", fields.len())));
            }
            let speed = fields[1]
                .parse::<f64>()
                .map_err(|_| bad(format!("'{}' is not a number", fields[1])))?;
            let threshold = fields[2]
                .parse::<f64>()
                .map_err(|_| bad(format!("'{}' is not a number", fields[2])))?;
            points.push(SpeedCalibrationPoint { speed, threshold, levels: None });
            continue;
        }
        if fields.len() != 2 {
            return Err(bad(format!("entry row has {} fields, expected 2", fields.len())));
        }
        let level = fields[0]
            .parse::<usize>()
            .map_err(|_| bad(format!("'{}' is not a level", fields[0])))?;
        if level != entries.len() {
            return Err(bad(format!("level {level} out of order, expected {}", entries.len())));
        }
        let entry = if fields[1] == "NEVER" {
            None
        } else {
            Some(
                fields[1]
                    .parse::<f64>()
                    .map_err(|_| bad(format!("'{}' is not a speed", fields[1])))?,
            )
        };
        entries.push(entry);
    }
    if entries.len() != LEVELS {
        return Err(format_error(
            path,
            0,
            format!("table has {} entry rows, expected {LEVELS}", entries.len()),
        ));
    }
    if points.len() < 2 {
        return Err(format_error(path, 0, "table file lacks its calibration point rows"));
    }
    let table = build_table(&points)?;
    for (t, (stored, rebuilt)) in entries.iter().zip(table.entries().iter()).enumerate() {
        let consistent = match (stored, rebuilt) {
            (None, None) => true,
            (Some(a), Some(b)) => (a - b).abs() <= 1e-9,
            _ => false,
        };
        if !consistent {
            return Err(format_error(
                path,
                0,
                format!("entry {t} disagrees with the table's own calibration points"),
            ));
        }
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::ThresholdMap;
    use crate::sim::{generate_stack, SceneModel};
    use crate::speed::{lookup, LevelSet};
    use tempfile::tempdir;

    fn checker(width: usize, height: usize) -> GrayImage {
        let pixels = (0..width * height).map(|i| (i * 37 % 256) as u8).collect();
        GrayImage::new(width, height, pixels).unwrap()
    }

    #[test]
    fn pgm_round_trip_is_lossless() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("img.pgm");
        let img = checker(31, 17);
        write_pgm(&path, &img).unwrap();
        assert_eq!(read_pgm(&path).unwrap(), img);
    }

    #[test]
    fn pgm_rejects_foreign_variants_with_offsets() {
        let dir = tempdir().unwrap();
        let p2 = dir.path().join("ascii.pgm");
        std::fs::write(&p2, b"P2\n2 2\n255\n0 1 2 3\n").unwrap();
        match read_pgm(&p2) {
            Err(Error::Format { offset: 0, message, .. }) => assert!(message.contains("P2")),
            other => panic!("expected P2 rejection, got {other:?}"),
        }

        let deep = dir.path().join("deep.pgm");
        std::fs::write(&deep, b"P5\n2 2\n65535\n\0\0\0\0").unwrap();
        match read_pgm(&deep) {
            Err(Error::Format { offset, message, .. }) => {
                assert_eq!(offset, 7);
                assert!(message.contains("65535"));
            }
            other => panic!("expected maxval rejection, got {other:?}"),
        }

        let short = dir.path().join("short.pgm");
        std::fs::write(&short, b"P5\n4 4\n255\n\0\0\0").unwrap();
        match read_pgm(&short) {
            Err(Error::Format { offset, message, .. }) => {
                assert_eq!(offset, 14);
                assert!(message.contains("truncated"));
            }
            other => panic!("expected truncation error, got {other:?}"),
        }
    }

    #[test]
    fn pgm_headers_may_carry_comments() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("commented.pgm");
        std::fs::write(&path, b"P5 # exported\n# geometry\n2 2\n255\nabcd").unwrap();
        let img = read_pgm(&path).unwrap();
        assert_eq!(img.pixels, b"abcd");
    }

    #[test]
    fn binary_images_write_as_black_and_white() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("mask.pgm");
        let mask = BinaryImage::new(4, 2, vec![1, 0, 1, 0, 0, 1, 0, 1]).unwrap();
        write_binary_image(&path, &mask).unwrap();
        let gray = read_pgm(&path).unwrap();
        assert_eq!(gray.pixels, vec![255, 0, 255, 0, 0, 255, 0, 255]);
        assert_eq!(read_binary_image(&path).unwrap(), mask);
        // Degenerate geometry is unrepresentable, so it can never reach a
        // writer: construction is where it fails.
        assert!(BinaryImage::new(0, 0, Vec::new()).is_err());
    }

    #[test]
    fn stack_round_trip_preserves_frames_and_speed() {
        let dir = tempdir().unwrap();
        let model = SceneModel::uniform(16, 8, 40.0, 180.0, 3.0, 5);
        let (stack, _) = generate_stack(&model, 3, 30.0).unwrap();
        let manifest = write_stack(dir.path(), &stack, Some(5)).unwrap();
        let loaded = read_stack(&manifest).unwrap();
        assert_eq!(loaded.frames, stack.frames);
        assert_eq!(loaded.acquisition_speed, Some(30.0));
        assert_eq!(read_manifest(&manifest).unwrap().seed, Some(5));
    }

    #[test]
    fn missing_frames_are_named_in_manifest_errors() {
        let dir = tempdir().unwrap();
        let model = SceneModel::uniform(8, 4, 40.0, 180.0, 0.0, 1);
        let (stack, _) = generate_stack(&model, 5, 30.0).unwrap();
        let manifest = write_stack(dir.path(), &stack, None).unwrap();
        std::fs::remove_file(dir.path().join("frame_1.pgm")).unwrap();
        match read_stack(&manifest) {
            Err(Error::Manifest { frame, .. }) => assert_eq!(frame, "frame_1.pgm"),
            other => panic!("expected manifest error, got {other:?}"),
        }
    }

    #[test]
    fn mismatched_frame_geometry_is_named() {
        let dir = tempdir().unwrap();
        let model = SceneModel::uniform(8, 4, 40.0, 180.0, 0.0, 1);
        let (stack, _) = generate_stack(&model, 3, 30.0).unwrap();
        let manifest = write_stack(dir.path(), &stack, None).unwrap();
        write_pgm(&dir.path().join("frame_2.pgm"), &checker(4, 4)).unwrap();
        match read_stack(&manifest) {
            Err(Error::Manifest { frame, message, .. }) => {
                assert_eq!(frame, "frame_2.pgm");
                assert!(message.contains("4x4"));
            }
            other => panic!("expected manifest error, got {other:?}"),
        }
    }

    #[test]
    fn threshold_maps_round_trip_bit_exactly() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("map.tmap");
        let map = ThresholdMap::new(
            3,
            2,
            vec![93.67901060678816, 0.0, 255.0, 1.0 / 3.0, 110.766423, 1e-12],
        )
        .unwrap();
        write_threshold_map(&path, &map).unwrap();
        let loaded = read_threshold_map(&path).unwrap();
        assert_eq!(loaded.values, map.values);
        assert_eq!((loaded.width, loaded.height), (3, 2));
    }

    #[test]
    fn single_cell_map_is_a_two_line_file() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("one.tmap");
        write_threshold_map(&path, &ThresholdMap::new(1, 1, vec![127.5]).unwrap()).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text, "1 1\n127.5\n");
    }

    #[test]
    fn map_header_must_match_the_body() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("bad.tmap");
        std::fs::write(&path, "2 2\n1 2 3\n").unwrap();
        match read_threshold_map(&path) {
            Err(Error::Format { message, .. }) => assert!(message.contains("expected 4")),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn flag_maps_round_trip() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("map.flags");
        let flags = vec![
            PixelFlag::Ok,
            PixelFlag::NotBimodal,
            PixelFlag::ErrorAboveTolerance,
            PixelFlag::Ok,
        ];
        write_flags(&path, 2, 2, &flags).unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap(), "2 2\non\neo\n");
        assert_eq!(read_flags(&path).unwrap(), (2, 2, flags));

        std::fs::write(&path, "2 1\nox\n").unwrap();
        assert!(matches!(read_flags(&path), Err(Error::Format { .. })));
    }

    #[test]
    fn calibration_bundles_round_trip() {
        let dir = tempdir().unwrap();
        let base = dir.path().join("run1");
        let map = ThresholdMap::new(2, 2, vec![100.0, 110.5, 120.25, 93.679011]).unwrap();
        let calib = TemporalCalibration::new(
            map,
            vec![1e-6, 3.167e-5, 0.0, 0.25],
            vec![PixelFlag::Ok, PixelFlag::NotBimodal, PixelFlag::Ok, PixelFlag::ErrorAboveTolerance],
            Some(20.7),
            500,
        )
        .unwrap();
        write_calibration(&base, &calib).unwrap();
        let loaded = read_calibration(&base).unwrap();
        assert_eq!(loaded.threshold_map.values, calib.threshold_map.values);
        assert_eq!(loaded.error_map, calib.error_map);
        assert_eq!(loaded.flag_map, calib.flag_map);
        assert_eq!(loaded.calibration_speed, Some(20.7));
        assert_eq!(loaded.frames_used, 500);

        let bare = dir.path().join("run2");
        let calib2 = TemporalCalibration::new(
            calib.threshold_map.clone(),
            calib.error_map.clone(),
            calib.flag_map.clone(),
            None,
            200,
        )
        .unwrap();
        write_calibration(&bare, &calib2).unwrap();
        assert_eq!(read_calibration(&bare).unwrap().calibration_speed, None);
    }

    fn fixture_path() -> PathBuf {
        Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/speed_calibration.csv")
    }

    #[test]
    fn reference_calibration_fixture_loads() {
        let points = read_speed_calibration(&fixture_path()).unwrap();
        assert_eq!(points.len(), 11);
        assert_eq!(points[0].speed, 20.7);
        assert_eq!(points[10].speed, 72.5);
        assert!(points.iter().all(|p| p.levels.is_some()));
        assert!((points[3].threshold - 65.239726).abs() <= 1e-9);
        assert!(points.windows(2).all(|w| w[0].threshold > w[1].threshold));
    }

    #[test]
    fn speed_calibration_csv_round_trips_with_and_without_levels() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("cal.csv");
        let points = vec![
            SpeedCalibrationPoint {
                speed: 10.0,
                threshold: 100.0,
                levels: Some(LevelSet {
                    object_min_plus: 200.0,
                    object_max: 184.0,
                    object_min_minus: 152.0,
                    scene_min_plus: 60.0,
                    scene_max: 40.0,
                    scene_min_minus: 20.0,
                }),
            },
            SpeedCalibrationPoint { speed: 20.0, threshold: 50.0, levels: None },
        ];
        write_speed_calibration(&path, &points).unwrap();
        assert_eq!(read_speed_calibration(&path).unwrap(), points);
    }

    #[test]
    fn monotonicity_errors_carry_csv_line_numbers() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("rising.csv");
        std::fs::write(&path, "speed,threshold\n10,50\n20,100\n").unwrap();
        match build_table_from_csv(&path) {
            Err(Error::NonMonotoneThresholds { row_a: 2, row_b: 3, .. }) => {}
            other => panic!("expected line-numbered monotonicity error, got {other:?}"),
        }

        let dup = dir.path().join("dup.csv");
        std::fs::write(&dup, "speed,threshold\n10,50\n10,40\n").unwrap();
        match build_table_from_csv(&dup) {
            Err(Error::DuplicateSpeed { row_a: 2, row_b: 3, .. }) => {}
            other => panic!("expected line-numbered duplicate error, got {other:?}"),
        }
    }

    #[test]
    fn speed_tables_round_trip() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("fig.table");
        let table = build_table_from_csv(&fixture_path()).unwrap();
        write_speed_table(&path, &table).unwrap();
        let loaded = read_speed_table(&path).unwrap();
        assert_eq!(loaded.entries(), table.entries());
        assert_eq!(loaded.speed_range(), table.speed_range());
        for v in [20.7, 23.3, 36.2, 72.5] {
            assert_eq!(lookup(&loaded, v), lookup(&table, v));
        }
    }

    #[test]
    fn tampered_tables_are_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("fig.table");
        let table = build_table_from_csv(&fixture_path()).unwrap();
        write_speed_table(&path, &table).unwrap();
        let mut text = std::fs::read_to_string(&path).unwrap();
        text = text.replace("255,20.7", "255,33.3");
        std::fs::write(&path, text).unwrap();
        match read_speed_table(&path) {
            Err(Error::Format { message, .. }) => assert!(message.contains("disagrees")),
            other => panic!("expected consistency rejection, got {other:?}"),
        }
    }

    #[test]
    fn failed_writes_leave_no_partial_files() {
        let dir = tempdir().unwrap();
        let missing = dir.path().join("no_such_dir").join("x.tmap");
        let map = ThresholdMap::new(1, 1, vec![1.0]).unwrap();
        assert!(matches!(write_threshold_map(&missing, &map), Err(Error::Io { .. })));
        assert!(!missing.exists());

        let target = dir.path().join("keep.tmap");
        write_threshold_map(&target, &map).unwrap();
        let replacement = ThresholdMap::new(1, 1, vec![2.0]).unwrap();
        write_threshold_map(&target, &replacement).unwrap();
        assert_eq!(read_threshold_map(&target).unwrap().values, vec![2.0]);
    }
}
