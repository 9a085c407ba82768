//! Seeded synthetic crowd scenes: Gaussian blobs on a dark background.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::dataio::{Dataset, DotAnnotations, ImageGrid, Point, Sample};
use crate::density::{render_density, KernelSpec};
use crate::error::{ClipError, Result};

const MIN_SEPARATION: f64 = 2.0;
const PLACEMENT_RETRIES: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneConfig {
    pub height: usize,
    pub width: usize,
    /// Inclusive range of heads per scene.
    pub count_range: (usize, usize),
    pub blob_sigma: f64,
    pub noise_std: f64,
    pub sigma_gt: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            height: 32,
            width: 32,
            count_range: (0, 30),
            blob_sigma: 1.5,
            noise_std: 0.02,
            sigma_gt: 2.0,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.height < 16 || self.width < 16 {
            return Err(ClipError::argument(format!(
                "scenes must be at least 16x16, got {}x{}",
                self.height, self.width
            )));
        }
        if self.count_range.0 > self.count_range.1 {
            return Err(ClipError::argument("count range must be ordered"));
        }
        if !(self.blob_sigma > 0.0 && self.sigma_gt > 0.0) {
            return Err(ClipError::argument(
                "blob and ground-truth sigma must be > 0",
            ));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(ClipError::argument("noise std must be >= 0"));
        }
        Ok(())
    }
}

fn place_dots<R: Rng + ?Sized>(cfg: &SceneConfig, count: usize, rng: &mut R) -> Vec<Point> {
    // dots stay within [0, side - 1] so a horizontal mirror keeps them in bounds
    let max_x = (cfg.width - 1) as f64;
    let max_y = (cfg.height - 1) as f64;
    let mut points: Vec<Point> = Vec::with_capacity(count);
    for _ in 0..count {
        let mut candidate =
            Point::new(rng.random_range(0.0..=max_x), rng.random_range(0.0..=max_y));
        for _ in 0..PLACEMENT_RETRIES {
            let clear = points.iter().all(|p| {
                let (dx, dy) = (p.x - candidate.x, p.y - candidate.y);
                dx * dx + dy * dy >= MIN_SEPARATION * MIN_SEPARATION
            });
            if clear {
                break;
            }
            candidate = Point::new(rng.random_range(0.0..=max_x), rng.random_range(0.0..=max_y));
        }
        points.push(candidate);
    }
    points
}

fn render_image<R: Rng + ?Sized>(cfg: &SceneConfig, points: &[Point], rng: &mut R) -> ImageGrid {
    let (h, w) = (cfg.height, cfg.width);
    let denom = 2.0 * cfg.blob_sigma * cfg.blob_sigma;
    let mut values = vec![0.0; h * w];
    for p in points {
        for r in 0..h {
            let dy = r as f64 - p.y;
            for c in 0..w {
                let dx = c as f64 - p.x;
                values[r * w + c] += (-(dx * dx + dy * dy) / denom).exp();
            }
        }
    }
    // unit-peak blobs; overlapping crowds are rescaled so the brightest pixel is 1
    let peak = values.iter().copied().fold(1.0, f64::max);
    let noise = Normal::new(0.0, cfg.noise_std).expect("noise std validated");
    for v in &mut values {
        let noisy = (*v / peak + noise.sample(rng)).clamp(0.0, 1.0);
        // stored as 8-bit so scenes survive a PGM round trip unchanged
        *v = (noisy * 255.0).round() / 255.0;
    }
    ImageGrid::new(h, w, values).expect("clamped intensities")
}

/// One scene with a cached ground-truth density.
pub fn generate_scene<R: Rng + ?Sized>(
    cfg: &SceneConfig,
    id: String,
    rng: &mut R,
) -> Result<Sample> {
    cfg.validate()?;
    let (lo, hi) = cfg.count_range;
    let count = rng.random_range(lo..=hi);
    let points = place_dots(cfg, count, rng);
    let image = render_image(cfg, &points, rng);
    let dots = DotAnnotations::new(points);
    let density = render_density(
        &dots,
        cfg.height,
        cfg.width,
        &KernelSpec::new(cfg.sigma_gt)?,
    )?;
    Ok(Sample {
        id,
        image,
        dots,
        density: Some(density),
    })
}

pub fn sample_id(index: usize) -> String {
    format!("syn-{index:06}")
}

/// `n` scenes; scene `i` draws from ChaCha stream `i` of `seed`, so any
/// scene can be regenerated on its own.
pub fn generate_dataset(n: usize, cfg: &SceneConfig, seed: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(ClipError::argument("dataset size must be >= 1"));
    }
    cfg.validate()?;
    let samples = (0..n)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            generate_scene(cfg, sample_id(i), &mut rng)
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(samples, cfg.sigma_gt)
}
