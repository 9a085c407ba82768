//! Counting and density-map quality metrics: MAE, GAME, SSIM and PSNR.
//!
//! SSIM and PSNR are computed on raw (unnormalized) density maps.

use serde::{Deserialize, Serialize};

use crate::dataio::{Dataset, DensityGrid};
use crate::error::{ClipError, Result};

/// PSNR value written to logs in place of +inf (zero-error predictions).
pub const PSNR_LOG_SENTINEL: f64 = 100.0;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_WINDOW_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;
const RANGE_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub mae: f64,
    pub game: f64,
    pub game_level: u32,
    pub ssim: f64,
    /// May be `f64::INFINITY`; use [`MetricsRecord::psnr_for_log`] when printing.
    pub psnr: f64,
}

impl MetricsRecord {
    pub fn psnr_for_log(&self) -> f64 {
        psnr_for_log(self.psnr)
    }
}

pub fn psnr_for_log(psnr: f64) -> f64 {
    if psnr.is_infinite() {
        PSNR_LOG_SENTINEL
    } else {
        psnr
    }
}

/// Mean absolute count error.
pub fn mae(estimated: &[f64], truth: &[f64]) -> Result<f64> {
    if estimated.is_empty() || estimated.len() != truth.len() {
        return Err(ClipError::argument(format!(
            "mae needs two equal non-empty lists, got {} and {}",
            estimated.len(),
            truth.len()
        )));
    }
    let total: f64 = estimated
        .iter()
        .zip(truth)
        .map(|(e, g)| (e - g).abs())
        .sum();
    Ok(total / estimated.len() as f64)
}

fn check_same_shape(a: &DensityGrid, b: &DensityGrid) -> Result<()> {
    if !a.same_shape(b) {
        return Err(ClipError::argument(format!(
            "grid shapes differ: {}x{} vs {}x{}",
            a.height(),
            a.width(),
            b.height(),
            b.width()
        )));
    }
    Ok(())
}

/// `[start, end)` bounds of the `parts` slices of `0..extent`; the last slice
/// absorbs the remainder.
pub fn patch_bounds(extent: usize, parts: usize) -> Vec<(usize, usize)> {
    let base = extent / parts;
    (0..parts)
        .map(|p| {
            let end = if p + 1 == parts {
                extent
            } else {
                (p + 1) * base
            };
            (p * base, end)
        })
        .collect()
}

/// Grid Average Mean Error of one image at `level` (a `2^level x 2^level` partition).
pub fn game(pred: &DensityGrid, gt: &DensityGrid, level: u32) -> Result<f64> {
    check_same_shape(pred, gt)?;
    let parts = 1usize
        .checked_shl(level)
        .filter(|&p| level < usize::BITS && p <= pred.height().min(pred.width()))
        .ok_or_else(|| {
            ClipError::argument(format!(
                "GAME level {level} needs 2^{level} <= min side {}",
                pred.height().min(pred.width())
            ))
        })?;
    let rows = patch_bounds(pred.height(), parts);
    let cols = patch_bounds(pred.width(), parts);
    let w = pred.width();

    // per-patch totals of each grid, patches visited row-major
    let mut total = 0.0;
    let mut pred_sum = vec![0.0; parts];
    let mut gt_sum = vec![0.0; parts];
    for &(r0, r1) in &rows {
        pred_sum.iter_mut().for_each(|p| *p = 0.0);
        gt_sum.iter_mut().for_each(|p| *p = 0.0);
        for r in r0..r1 {
            let p_row = &pred.values()[r * w..(r + 1) * w];
            let g_row = &gt.values()[r * w..(r + 1) * w];
            for (j, &(c0, c1)) in cols.iter().enumerate() {
                for c in c0..c1 {
                    pred_sum[j] += p_row[c];
                    gt_sum[j] += g_row[c];
                }
            }
        }
        for (p, g) in pred_sum.iter().zip(&gt_sum) {
            total += (p - g).abs();
        }
    }
    Ok(total)
}

fn ssim_window() -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as isize;
    let denom = 2.0 * SSIM_WINDOW_SIGMA * SSIM_WINDOW_SIGMA;
    let mut w = Vec::with_capacity(SSIM_WINDOW * SSIM_WINDOW);
    for dy in -r..=r {
        for dx in -r..=r {
            w.push((-((dx * dx + dy * dy) as f64) / denom).exp());
        }
    }
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= total);
    w
}

/// Mean local SSIM over every fully contained 11x11 Gaussian window.
pub fn ssim(a: &DensityGrid, b: &DensityGrid) -> Result<f64> {
    check_same_shape(a, b)?;
    let (h, w) = (a.height(), a.width());
    if h.min(w) < SSIM_WINDOW {
        return Err(ClipError::argument(format!(
            "ssim needs grids of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {h}x{w}"
        )));
    }
    let range = a.max().max(b.max()).max(RANGE_FLOOR);
    let c1 = (SSIM_K1 * range).powi(2);
    let c2 = (SSIM_K2 * range).powi(2);
    let window = ssim_window();
    let (av, bv) = (a.values(), b.values());

    let mut total = 0.0;
    let mut count = 0usize;
    for r in 0..=h - SSIM_WINDOW {
        for c in 0..=w - SSIM_WINDOW {
            let (mut mx, mut my, mut xx, mut yy, mut xy) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for kr in 0..SSIM_WINDOW {
                let base = (r + kr) * w + c;
                let wrow = &window[kr * SSIM_WINDOW..(kr + 1) * SSIM_WINDOW];
                for ((&k, &x), &y) in wrow.iter().zip(&av[base..]).zip(&bv[base..]) {
                    mx += k * x;
                    my += k * y;
                    xx += k * x * x;
                    yy += k * y * y;
                    xy += k * x * y;
                }
            }
            let vx = xx - mx * mx;
            let vy = yy - my * my;
            let cov = xy - mx * my;
            total += ((2.0 * mx * my + c1) * (2.0 * cov + c2))
                / ((mx * mx + my * my + c1) * (vx + vy + c2));
            count += 1;
        }
    }
    Ok(total / count as f64)
}

/// Peak signal-to-noise ratio of `pred` against `gt`, peak taken from `gt`.
///
/// Returns `f64::INFINITY` when the two grids are identical.
pub fn psnr(pred: &DensityGrid, gt: &DensityGrid) -> Result<f64> {
    check_same_shape(pred, gt)?;
    let n = pred.values().len().max(1) as f64;
    let mse = pred
        .values()
        .iter()
        .zip(gt.values())
        .map(|(p, g)| (p - g) * (p - g))
        .sum::<f64>()
        / n;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    let peak = gt.max().max(RANGE_FLOOR);
    Ok(10.0 * (peak * peak / mse).log10())
}

/// Dataset-level metrics of `predictions` (one per sample, in sample order).
pub fn evaluate(
    predictions: &[DensityGrid],
    dataset: &Dataset,
    game_level: u32,
) -> Result<MetricsRecord> {
    if predictions.len() != dataset.len() {
        return Err(ClipError::argument(format!(
            "{} predictions for {} samples",
            predictions.len(),
            dataset.len()
        )));
    }
    if predictions.is_empty() {
        return Err(ClipError::argument("cannot evaluate an empty dataset"));
    }
    let mut est = Vec::with_capacity(predictions.len());
    let mut truth = Vec::with_capacity(predictions.len());
    let (mut game_sum, mut ssim_sum) = (0.0, 0.0);
    let (mut psnr_sum, mut psnr_finite) = (0.0, 0usize);
    for (pred, sample) in predictions.iter().zip(dataset.samples()) {
        let gt = sample.density_or_err()?;
        est.push(pred.sum());
        truth.push(gt.sum());
        game_sum += game(pred, gt, game_level)?;
        ssim_sum += ssim(pred, gt)?;
        let p = psnr(pred, gt)?;
        if p.is_finite() {
            psnr_sum += p;
            psnr_finite += 1;
        }
    }
    let n = predictions.len() as f64;
    Ok(MetricsRecord {
        mae: mae(&est, &truth)?,
        game: game_sum / n,
        game_level,
        ssim: ssim_sum / n,
        psnr: if psnr_finite == 0 {
            f64::INFINITY
        } else {
            psnr_sum / psnr_finite as f64
        },
    })
}
