//! Sample and dataset types plus their on-disk formats.
//!
//! A dataset directory holds a JSON manifest, one binary PGM (P5) raster per
//! sample, one plain-text dot file per sample, and optionally one `DGRD`
//! density blob per sample. Paths inside the manifest are relative to the
//! manifest's directory.

use std::collections::HashSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{ClipError, Result};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const DENSITY_MAGIC: &[u8; 4] = b"DGRD";
pub const DENSITY_HEADER_LEN: usize = 16;

/// A head position in fractional pixel coordinates (`x` is the column).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DotAnnotations {
    pub points: Vec<Point>,
}

impl DotAnnotations {
    pub fn new(points: Vec<Point>) -> Self {
        Self { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Index of the first point outside `[0, width) x [0, height)`, if any.
    pub fn first_out_of_bounds(&self, height: usize, width: usize) -> Option<usize> {
        self.points.iter().position(|p| {
            !(p.x.is_finite()
                && p.y.is_finite()
                && p.x >= 0.0
                && p.y >= 0.0
                && p.x < width as f64
                && p.y < height as f64)
        })
    }

    /// Mirrors every point about the vertical axis: `x -> width - 1 - x`.
    ///
    /// Points in the last fractional column `(width - 1, width)` would land at
    /// a negative column and are clamped to 0.
    pub fn flip_horizontal(&self, width: usize) -> Self {
        let w = width as f64 - 1.0;
        let points = self
            .points
            .iter()
            .map(|p| Point::new((w - p.x).max(0.0), p.y))
            .collect();
        Self { points }
    }
}

/// Grayscale input image, row-major, intensities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageGrid {
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl ImageGrid {
    pub fn new(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != height * width {
            return Err(ClipError::argument(format!(
                "image of {height}x{width} needs {} values, got {}",
                height * width,
                values.len()
            )));
        }
        if let Some(v) = values
            .iter()
            .find(|v| !v.is_finite() || **v < 0.0 || **v > 1.0)
        {
            return Err(ClipError::argument(format!(
                "image intensity {v} outside [0, 1]"
            )));
        }
        Ok(Self {
            height,
            width,
            values,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            values: vec![0.0; height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.width + col]
    }

    pub fn flip_horizontal(&self) -> Self {
        Self {
            height: self.height,
            width: self.width,
            values: flip_rows(&self.values, self.width),
        }
    }

    /// Applies `f` to every intensity and clamps the result back into `[0, 1]`.
    pub fn map_clamped(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            height: self.height,
            width: self.width,
            values: self.values.iter().map(|&v| f(v).clamp(0.0, 1.0)).collect(),
        }
    }
}

/// Non-negative density field in persons per pixel, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityGrid {
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl DensityGrid {
    pub fn new(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != height * width {
            return Err(ClipError::argument(format!(
                "density of {height}x{width} needs {} values, got {}",
                height * width,
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(ClipError::argument(format!(
                "density value {v} is negative or not finite"
            )));
        }
        Ok(Self {
            height,
            width,
            values,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            values: vec![0.0; height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub(crate) fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.width + col]
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    pub fn same_shape(&self, other: &DensityGrid) -> bool {
        self.height == other.height && self.width == other.width
    }

    pub fn flip_horizontal(&self) -> Self {
        Self {
            height: self.height,
            width: self.width,
            values: flip_rows(&self.values, self.width),
        }
    }
}

fn flip_rows(values: &[f64], width: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(values.len());
    for row in values.chunks(width) {
        out.extend(row.iter().rev());
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    pub image: ImageGrid,
    pub dots: DotAnnotations,
    pub density: Option<DensityGrid>,
}

impl Sample {
    pub fn count(&self) -> usize {
        self.dots.len()
    }

    pub fn validate(&self) -> Result<()> {
        let (h, w) = (self.image.height(), self.image.width());
        if let Some(i) = self.dots.first_out_of_bounds(h, w) {
            let p = self.dots.points[i];
            return Err(ClipError::Validation {
                sample_id: self.id.clone(),
                message: format!("dot ({}, {}) lies outside the {h}x{w} image", p.x, p.y),
            });
        }
        if let Some(d) = &self.density {
            if d.height() != h || d.width() != w {
                return Err(ClipError::Validation {
                    sample_id: self.id.clone(),
                    message: format!(
                        "density is {}x{} but image is {h}x{w}",
                        d.height(),
                        d.width()
                    ),
                });
            }
        }
        Ok(())
    }

    pub fn density_or_err(&self) -> Result<&DensityGrid> {
        self.density.as_ref().ok_or_else(|| {
            ClipError::State(format!("sample {} has no cached density map", self.id))
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    samples: Vec<Sample>,
    sigma: f64,
}

impl Dataset {
    pub fn new(samples: Vec<Sample>, sigma: f64) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(ClipError::argument(format!(
                "sigma must be > 0, got {sigma}"
            )));
        }
        let mut seen = HashSet::with_capacity(samples.len());
        for s in &samples {
            if !seen.insert(s.id.as_str()) {
                return Err(ClipError::Validation {
                    sample_id: s.id.clone(),
                    message: "duplicate sample id".into(),
                });
            }
            s.validate()?;
        }
        Ok(Self { samples, sigma })
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn get(&self, index: usize) -> &Sample {
        &self.samples[index]
    }

    pub fn find(&self, id: &str) -> Option<usize> {
        self.samples.iter().position(|s| s.id == id)
    }

    /// Splits off the last `fraction` of samples by id order as a held-out set.
    ///
    /// Returns `(train, validation)`; both keep id order.
    pub fn split_holdout(&self, fraction: f64) -> Result<(Dataset, Dataset)> {
        if !(0.0..1.0).contains(&fraction) {
            return Err(ClipError::argument(format!(
                "holdout fraction must be in [0, 1), got {fraction}"
            )));
        }
        let mut sorted = self.samples.clone();
        sorted.sort_by(|a, b| a.id.cmp(&b.id));
        let n_val = (sorted.len() as f64 * fraction).floor() as usize;
        let val = sorted.split_off(sorted.len() - n_val);
        Ok((
            Dataset {
                samples: sorted,
                sigma: self.sigma,
            },
            Dataset {
                samples: val,
                sigma: self.sigma,
            },
        ))
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    sigma: f64,
    samples: Vec<ManifestEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestEntry {
    id: String,
    image: String,
    dots: String,
    density: Option<String>,
}

pub fn load_dataset(manifest_path: &Path) -> Result<Dataset> {
    let text = fs::read_to_string(manifest_path).map_err(|e| ClipError::io(manifest_path, e))?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| ClipError::format(manifest_path, e.to_string()))?;
    let root = manifest_path.parent().unwrap_or_else(|| Path::new("."));

    let mut samples = Vec::with_capacity(manifest.samples.len());
    for entry in &manifest.samples {
        let image_path = root.join(&entry.image);
        let image = read_pgm(&image_path)?;
        let dots_path = root.join(&entry.dots);
        let dots = read_dots(&dots_path)?;
        let density = match &entry.density {
            Some(rel) => {
                let path = root.join(rel);
                let grid = read_density(&path)?;
                if grid.height() != image.height() || grid.width() != image.width() {
                    return Err(ClipError::format(
                        &path,
                        format!(
                            "density is {}x{} but raster {} is {}x{}",
                            grid.height(),
                            grid.width(),
                            image_path.display(),
                            image.height(),
                            image.width()
                        ),
                    ));
                }
                Some(grid)
            }
            None => None,
        };
        samples.push(Sample {
            id: entry.id.clone(),
            image,
            dots,
            density,
        });
    }
    Dataset::new(samples, manifest.sigma)
}

/// Writes `dataset` under `dir` and returns the manifest path.
pub fn save_dataset(dataset: &Dataset, dir: &Path) -> Result<PathBuf> {
    for sub in ["images", "dots", "density"] {
        let p = dir.join(sub);
        fs::create_dir_all(&p).map_err(|e| ClipError::io(&p, e))?;
    }
    let mut entries = Vec::with_capacity(dataset.len());
    for sample in dataset.samples() {
        if sample.id.is_empty() || sample.id.contains(['/', '\\']) || sample.id.starts_with('.') {
            return Err(ClipError::Validation {
                sample_id: sample.id.clone(),
                message: "id cannot be used as a file name".into(),
            });
        }
        let image = format!("images/{}.pgm", sample.id);
        write_pgm(&dir.join(&image), &sample.image)?;
        let dots = format!("dots/{}.txt", sample.id);
        write_dots(&dir.join(&dots), &sample.dots)?;
        let density = match &sample.density {
            Some(grid) => {
                let rel = format!("density/{}.dgrd", sample.id);
                write_density(&dir.join(&rel), grid)?;
                Some(rel)
            }
            None => None,
        };
        entries.push(ManifestEntry {
            id: sample.id.clone(),
            image,
            dots,
            density,
        });
    }
    let manifest = Manifest {
        sigma: dataset.sigma(),
        samples: entries,
    };
    let path = dir.join(MANIFEST_FILE);
    let mut json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| ClipError::format(&path, e.to_string()))?;
    json.push('\n');
    fs::write(&path, json).map_err(|e| ClipError::io(&path, e))?;
    Ok(path)
}

/// Reads a binary (P5) PGM and rescales intensities by `maxval` into `[0, 1]`.
pub fn read_pgm(path: &Path) -> Result<ImageGrid> {
    let bytes = fs::read(path).map_err(|e| ClipError::io(path, e))?;
    decode_pgm(&bytes).map_err(|msg| ClipError::format(path, msg))
}

fn decode_pgm(bytes: &[u8]) -> std::result::Result<ImageGrid, String> {
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err("missing P5 magic".into());
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        // whitespace and comments may precede every header token
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err(format!("expected header integer at byte {start}"));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| format!("header integer at byte {start} out of range"))?;
    }
    let [width, height, maxval] = fields;
    if maxval == 0 || maxval > 255 {
        return Err(format!(
            "unsupported maxval {maxval}; only 8-bit rasters are read"
        ));
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err("header not terminated by whitespace".into());
    }
    pos += 1;
    let n = width * height;
    let data = &bytes[pos..];
    if data.len() < n {
        return Err(format!(
            "raster declares {width}x{height} but carries {} pixel bytes",
            data.len()
        ));
    }
    let values = data[..n]
        .iter()
        .map(|&b| (b as f64 / maxval as f64).min(1.0))
        .collect();
    ImageGrid::new(height, width, values).map_err(|e| e.to_string())
}

/// Writes an 8-bit P5 PGM; intensities are scaled by 255 and rounded.
pub fn write_pgm(path: &Path, image: &ImageGrid) -> Result<()> {
    let mut out = format!("P5\n{} {}\n255\n", image.width(), image.height()).into_bytes();
    out.extend(
        image
            .values()
            .iter()
            .map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8),
    );
    fs::write(path, out).map_err(|e| ClipError::io(path, e))
}

pub fn read_dots(path: &Path) -> Result<DotAnnotations> {
    let text = fs::read_to_string(path).map_err(|e| ClipError::io(path, e))?;
    let mut points = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let parse = |tok: Option<&str>| tok.and_then(|t| t.parse::<f64>().ok());
        match (parse(parts.next()), parse(parts.next()), parts.next()) {
            (Some(x), Some(y), None) => points.push(Point::new(x, y)),
            _ => {
                return Err(ClipError::format(
                    path,
                    format!("line {}: expected \"x y\", got {line:?}", lineno + 1),
                ))
            }
        }
    }
    Ok(DotAnnotations { points })
}

pub fn write_dots(path: &Path, dots: &DotAnnotations) -> Result<()> {
    let mut out = String::with_capacity(dots.len() * 24);
    for p in &dots.points {
        out.push_str(&format!("{} {}\n", p.x, p.y));
    }
    fs::write(path, out).map_err(|e| ClipError::io(path, e))
}

/// Density blob: `DGRD`, u32 height, u32 width, u32 reserved (all LE), then f64 LE values.
pub fn encode_density(grid: &DensityGrid) -> Vec<u8> {
    let mut out = Vec::with_capacity(DENSITY_HEADER_LEN + grid.values().len() * 8);
    out.extend_from_slice(DENSITY_MAGIC);
    out.extend_from_slice(&(grid.height() as u32).to_le_bytes());
    out.extend_from_slice(&(grid.width() as u32).to_le_bytes());
    out.extend_from_slice(&0u32.to_le_bytes());
    for v in grid.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_density(bytes: &[u8]) -> std::result::Result<DensityGrid, String> {
    if bytes.len() < DENSITY_HEADER_LEN || &bytes[..4] != DENSITY_MAGIC {
        return Err("missing DGRD header".into());
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap()) as usize;
    let (height, width) = (word(4), word(8));
    let payload = &bytes[DENSITY_HEADER_LEN..];
    if payload.len() != height * width * 8 {
        return Err(format!(
            "header declares {height}x{width} but payload holds {} bytes",
            payload.len()
        ));
    }
    let values = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    DensityGrid::new(height, width, values).map_err(|e| e.to_string())
}

pub fn read_density(path: &Path) -> Result<DensityGrid> {
    let bytes = fs::read(path).map_err(|e| ClipError::io(path, e))?;
    decode_density(&bytes).map_err(|msg| ClipError::format(path, msg))
}

pub fn write_density(path: &Path, grid: &DensityGrid) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| ClipError::io(path, e))?;
    f.write_all(&encode_density(grid))
        .map_err(|e| ClipError::io(path, e))
}
