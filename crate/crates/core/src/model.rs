//! A three-layer convolutional density regressor with hand-written backprop.
//!
//! `conv1` (5x5, 1 -> 8, ReLU) -> `conv2` (3x3, 8 -> 8, ReLU) -> `head`
//! (1x1, 8 -> 1, ReLU). All convolutions are zero-padded so the output map
//! has the input's resolution. Parameters live in one flat vector so the
//! optimizer and the checkpoint format can treat them uniformly.

use std::fs;
use std::path::Path;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dataio::{DensityGrid, ImageGrid, Sample};
use crate::error::{ClipError, Result};

pub const CONV1_CHANNELS: usize = 8;
pub const CONV1_KERNEL: usize = 5;
pub const CONV2_CHANNELS: usize = 8;
pub const CONV2_KERNEL: usize = 3;
pub const MIN_INPUT_SIDE: usize = 7;

const W1_LEN: usize = CONV1_CHANNELS * CONV1_KERNEL * CONV1_KERNEL;
const W2_LEN: usize = CONV2_CHANNELS * CONV1_CHANNELS * CONV2_KERNEL * CONV2_KERNEL;
const W1: usize = 0;
const B1: usize = W1 + W1_LEN;
const W2: usize = B1 + CONV1_CHANNELS;
const B2: usize = W2 + W2_LEN;
const W3: usize = B2 + CONV2_CHANNELS;
const B3: usize = W3 + CONV2_CHANNELS;
pub const PARAM_COUNT: usize = B3 + 1;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"CLPM";
pub const CHECKPOINT_VERSION: u32 = 1;
pub const CHECKPOINT_HEADER_LEN: usize = 16;

/// Network weights, stored flat as `[w1, b1, w2, b2, w3, b3]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    values: Vec<f64>,
}

impl ModelParams {
    pub fn from_flat(values: Vec<f64>) -> Result<Self> {
        if values.len() != PARAM_COUNT {
            return Err(ClipError::argument(format!(
                "expected {PARAM_COUNT} parameters, got {}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(ClipError::argument("parameters must be finite"));
        }
        Ok(Self { values })
    }

    pub fn zeros() -> Self {
        Self {
            values: vec![0.0; PARAM_COUNT],
        }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn conv1_weights(&self) -> &[f64] {
        &self.values[W1..B1]
    }

    pub fn conv1_bias(&self) -> &[f64] {
        &self.values[B1..W2]
    }

    pub fn conv2_weights(&self) -> &[f64] {
        &self.values[W2..B2]
    }

    pub fn conv2_bias(&self) -> &[f64] {
        &self.values[B2..W3]
    }

    pub fn head_weights(&self) -> &[f64] {
        &self.values[W3..B3]
    }

    pub fn head_bias(&self) -> f64 {
        self.values[B3]
    }

    /// Parameter ranges per layer with their Glorot bound `sqrt(6 / (fan_in + fan_out))`.
    pub fn layer_bounds() -> [(std::ops::Range<usize>, f64); 3] {
        let bound = |fan_in: usize, fan_out: usize| (6.0 / (fan_in + fan_out) as f64).sqrt();
        let k1 = CONV1_KERNEL * CONV1_KERNEL;
        let k2 = CONV2_KERNEL * CONV2_KERNEL;
        [
            (W1..W2, bound(k1, k1 * CONV1_CHANNELS)),
            (W2..W3, bound(k2 * CONV1_CHANNELS, k2 * CONV2_CHANNELS)),
            (W3..PARAM_COUNT, bound(CONV2_CHANNELS, 1)),
        ]
    }
}

/// Glorot-uniform weights and zero biases, deterministic per seed.
pub fn init_model(seed: u64) -> ModelParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ModelParams::zeros();
    let weight_ranges = [(W1, B1), (W2, B2), (W3, B3)];
    for ((start, end), (_, bound)) in weight_ranges.into_iter().zip(ModelParams::layer_bounds()) {
        for v in &mut params.values[start..end] {
            *v = rng.random_range(-bound..=bound);
        }
    }
    params
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub step_count: u64,
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps_hat: f64,
}

pub const DEFAULT_LR: f64 = 1e-4;

impl OptimizerState {
    pub fn new(lr: f64) -> Self {
        Self {
            step_count: 0,
            first_moment: vec![0.0; PARAM_COUNT],
            second_moment: vec![0.0; PARAM_COUNT],
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps_hat: 1e-8,
        }
    }

    /// One bias-corrected Adam update of `params` along `grad`.
    pub fn step(&mut self, params: &mut ModelParams, grad: &[f64]) {
        assert_eq!(grad.len(), PARAM_COUNT, "gradient length");
        self.step_count += 1;
        let t = self.step_count as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (((p, g), m), v) in params
            .values
            .iter_mut()
            .zip(grad)
            .zip(&mut self.first_moment)
            .zip(&mut self.second_moment)
        {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= self.lr * m_hat / (v_hat.sqrt() + self.eps_hat);
        }
    }
}

impl Default for OptimizerState {
    fn default() -> Self {
        Self::new(DEFAULT_LR)
    }
}

/// Zero-padded "same" convolution; returns pre-activations (`cout x h x w`).
///
/// `padded` holds `cin` channels of `(h + k - 1) x (w + k - 1)`.
fn conv_same(
    padded: &[f64],
    cin: usize,
    h: usize,
    w: usize,
    weights: &[f64],
    bias: &[f64],
    k: usize,
) -> Vec<f64> {
    let cout = bias.len();
    let pw = w + k - 1;
    let plane = (h + k - 1) * pw;
    let mut out = vec![0.0; cout * h * w];
    for o in 0..cout {
        let out_o = &mut out[o * h * w..(o + 1) * h * w];
        out_o.iter_mut().for_each(|v| *v = bias[o]);
        for i in 0..cin {
            let src = &padded[i * plane..(i + 1) * plane];
            for kr in 0..k {
                for kc in 0..k {
                    let wv = weights[((o * cin + i) * k + kr) * k + kc];
                    for r in 0..h {
                        let s = &src[(r + kr) * pw + kc..(r + kr) * pw + kc + w];
                        let d = &mut out_o[r * w..(r + 1) * w];
                        for (dv, sv) in d.iter_mut().zip(s) {
                            *dv += wv * sv;
                        }
                    }
                }
            }
        }
    }
    out
}

/// Copies `channels x h x w` into a zero border of width `pad`.
fn pad(input: &[f64], channels: usize, h: usize, w: usize, pad: usize) -> Vec<f64> {
    let pw = w + 2 * pad;
    let ph = h + 2 * pad;
    let mut out = vec![0.0; channels * ph * pw];
    for c in 0..channels {
        for r in 0..h {
            let src = &input[(c * h + r) * w..(c * h + r + 1) * w];
            let start = c * ph * pw + (r + pad) * pw + pad;
            out[start..start + w].copy_from_slice(src);
        }
    }
    out
}

fn relu(v: &[f64]) -> Vec<f64> {
    v.iter().map(|&x| x.max(0.0)).collect()
}

struct ForwardCache {
    h: usize,
    w: usize,
    input_padded: Vec<f64>,
    z1: Vec<f64>,
    a1_padded: Vec<f64>,
    z2: Vec<f64>,
    a2: Vec<f64>,
    z3: Vec<f64>,
    output: Vec<f64>,
}

fn forward_cached(params: &ModelParams, image: &ImageGrid) -> Result<ForwardCache> {
    let (h, w) = (image.height(), image.width());
    if h < MIN_INPUT_SIDE || w < MIN_INPUT_SIDE {
        return Err(ClipError::argument(format!(
            "input must be at least {MIN_INPUT_SIDE}x{MIN_INPUT_SIDE}, got {h}x{w}"
        )));
    }
    let input_padded = pad(image.values(), 1, h, w, CONV1_KERNEL / 2);
    let z1 = conv_same(
        &input_padded,
        1,
        h,
        w,
        params.conv1_weights(),
        params.conv1_bias(),
        CONV1_KERNEL,
    );
    let a1_padded = pad(&relu(&z1), CONV1_CHANNELS, h, w, CONV2_KERNEL / 2);
    let z2 = conv_same(
        &a1_padded,
        CONV1_CHANNELS,
        h,
        w,
        params.conv2_weights(),
        params.conv2_bias(),
        CONV2_KERNEL,
    );
    let a2 = relu(&z2);
    let head = params.head_weights();
    let mut z3 = vec![params.head_bias(); h * w];
    for (c, &wc) in head.iter().enumerate() {
        for (z, a) in z3.iter_mut().zip(&a2[c * h * w..(c + 1) * h * w]) {
            *z += wc * a;
        }
    }
    let output = relu(&z3);
    Ok(ForwardCache {
        h,
        w,
        input_padded,
        z1,
        a1_padded,
        z2,
        a2,
        z3,
        output,
    })
}

/// Predicted density map, same size as `image`, non-negative.
pub fn forward(params: &ModelParams, image: &ImageGrid) -> Result<DensityGrid> {
    let cache = forward_cached(params, image)?;
    DensityGrid::new(cache.h, cache.w, cache.output)
}

/// Squared Euclidean distance between two density maps.
pub fn loss(pred: &DensityGrid, gt: &DensityGrid) -> Result<f64> {
    if !pred.same_shape(gt) {
        return Err(ClipError::argument(format!(
            "loss on mismatched grids {}x{} vs {}x{}",
            pred.height(),
            pred.width(),
            gt.height(),
            gt.width()
        )));
    }
    Ok(squared_distance(pred.values(), gt.values()))
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Accumulates weight, bias and (optionally) input gradients of a same convolution.
#[allow(clippy::too_many_arguments)]
fn conv_backward(
    dz: &[f64],
    padded: &[f64],
    cin: usize,
    h: usize,
    w: usize,
    weights: &[f64],
    k: usize,
    grad_w: &mut [f64],
    grad_b: &mut [f64],
    grad_padded: Option<&mut [f64]>,
) {
    let cout = grad_b.len();
    let pw = w + k - 1;
    let plane = (h + k - 1) * pw;
    for o in 0..cout {
        let dz_o = &dz[o * h * w..(o + 1) * h * w];
        grad_b[o] += dz_o.iter().sum::<f64>();
        for i in 0..cin {
            let src = &padded[i * plane..(i + 1) * plane];
            for kr in 0..k {
                for kc in 0..k {
                    let mut acc = 0.0;
                    for r in 0..h {
                        let s = &src[(r + kr) * pw + kc..(r + kr) * pw + kc + w];
                        acc += dz_o[r * w..(r + 1) * w]
                            .iter()
                            .zip(s)
                            .map(|(d, x)| d * x)
                            .sum::<f64>();
                    }
                    grad_w[((o * cin + i) * k + kr) * k + kc] += acc;
                }
            }
        }
    }
    if let Some(gp) = grad_padded {
        for o in 0..cout {
            let dz_o = &dz[o * h * w..(o + 1) * h * w];
            for i in 0..cin {
                let dst = &mut gp[i * plane..(i + 1) * plane];
                for kr in 0..k {
                    for kc in 0..k {
                        let wv = weights[((o * cin + i) * k + kr) * k + kc];
                        for r in 0..h {
                            let d = &mut dst[(r + kr) * pw + kc..(r + kr) * pw + kc + w];
                            for (dv, g) in d.iter_mut().zip(&dz_o[r * w..(r + 1) * w]) {
                                *dv += wv * g;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Adds `scale * d loss / d params` for one sample into `grad`; returns the sample loss.
fn accumulate_gradient(
    params: &ModelParams,
    image: &ImageGrid,
    gt: &DensityGrid,
    scale: f64,
    grad: &mut [f64],
) -> Result<f64> {
    let c = forward_cached(params, image)?;
    if gt.height() != c.h || gt.width() != c.w {
        return Err(ClipError::argument(format!(
            "target is {}x{} but image is {}x{}",
            gt.height(),
            gt.width(),
            c.h,
            c.w
        )));
    }
    let (h, w) = (c.h, c.w);
    let hw = h * w;
    let sample_loss = squared_distance(&c.output, gt.values());

    // head
    let dz3: Vec<f64> = c
        .output
        .iter()
        .zip(gt.values())
        .zip(&c.z3)
        .map(|((o, g), z)| if *z > 0.0 { 2.0 * scale * (o - g) } else { 0.0 })
        .collect();
    grad[B3] += dz3.iter().sum::<f64>();
    let head = params.head_weights();
    let mut dz2 = vec![0.0; CONV2_CHANNELS * hw];
    for ch in 0..CONV2_CHANNELS {
        let a = &c.a2[ch * hw..(ch + 1) * hw];
        grad[W3 + ch] += dz3.iter().zip(a).map(|(d, x)| d * x).sum::<f64>();
        let z = &c.z2[ch * hw..(ch + 1) * hw];
        for ((dst, d), zv) in dz2[ch * hw..(ch + 1) * hw].iter_mut().zip(&dz3).zip(z) {
            if *zv > 0.0 {
                *dst = d * head[ch];
            }
        }
    }

    // conv2
    let p2 = CONV2_KERNEL / 2;
    let mut da1_padded = vec![0.0; c.a1_padded.len()];
    {
        let (left, right) = grad.split_at_mut(B2);
        conv_backward(
            &dz2,
            &c.a1_padded,
            CONV1_CHANNELS,
            h,
            w,
            params.conv2_weights(),
            CONV2_KERNEL,
            &mut left[W2..B2],
            &mut right[..CONV2_CHANNELS],
            Some(&mut da1_padded),
        );
    }

    // conv1
    let pw = w + 2 * p2;
    let plane = (h + 2 * p2) * pw;
    let mut dz1 = vec![0.0; CONV1_CHANNELS * hw];
    for ch in 0..CONV1_CHANNELS {
        for r in 0..h {
            for col in 0..w {
                let idx = ch * hw + r * w + col;
                if c.z1[idx] > 0.0 {
                    dz1[idx] = da1_padded[ch * plane + (r + p2) * pw + col + p2];
                }
            }
        }
    }
    let (left, right) = grad.split_at_mut(B1);
    conv_backward(
        &dz1,
        &c.input_padded,
        1,
        h,
        w,
        params.conv1_weights(),
        CONV1_KERNEL,
        &mut left[W1..B1],
        &mut right[..CONV1_CHANNELS],
        None,
    );
    Ok(sample_loss)
}

/// Mean batch loss and its exact gradient, flat and aligned with [`ModelParams::as_slice`].
pub fn loss_and_gradient(params: &ModelParams, batch: &[Sample]) -> Result<(f64, Vec<f64>)> {
    if batch.is_empty() {
        return Err(ClipError::argument("empty batch"));
    }
    let scale = 1.0 / batch.len() as f64;
    let mut grad = vec![0.0; PARAM_COUNT];
    let mut total = 0.0;
    for sample in batch {
        let gt = sample.density_or_err()?;
        total += accumulate_gradient(params, &sample.image, gt, scale, &mut grad)?;
    }
    Ok((total * scale, grad))
}

/// Mean loss of `params` over `samples` without touching gradients.
pub fn mean_loss(params: &ModelParams, samples: &[Sample]) -> Result<f64> {
    if samples.is_empty() {
        return Err(ClipError::argument("empty sample list"));
    }
    let mut total = 0.0;
    for s in samples {
        total += loss(&forward(params, &s.image)?, s.density_or_err()?)?;
    }
    Ok(total / samples.len() as f64)
}

/// One Adam step on the batch. Returns the loss measured before the update.
pub fn train_batch(
    params: &mut ModelParams,
    opt: &mut OptimizerState,
    batch: &[Sample],
) -> Result<f64> {
    let (loss, grad) = loss_and_gradient(params, batch)?;
    opt.step(params, &grad);
    Ok(loss)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentConfig {
    pub hflip_prob: f64,
    pub brightness_delta: f64,
    pub contrast_range: (f64, f64),
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            hflip_prob: 0.5,
            brightness_delta: 0.1,
            contrast_range: (0.9, 1.1),
        }
    }
}

impl AugmentConfig {
    /// Identity augmentation.
    pub fn none() -> Self {
        Self {
            hflip_prob: 0.0,
            brightness_delta: 0.0,
            contrast_range: (1.0, 1.0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.contrast_range;
        if !(0.0..=1.0).contains(&self.hflip_prob) {
            return Err(ClipError::argument("hflip probability must be in [0, 1]"));
        }
        if !(self.brightness_delta >= 0.0 && self.brightness_delta.is_finite()) {
            return Err(ClipError::argument("brightness delta must be >= 0"));
        }
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return Err(ClipError::argument(
                "contrast range must be positive and ordered",
            ));
        }
        Ok(())
    }
}

/// Applies a fixed transform: optional mirror, then contrast about the image
/// mean and a brightness shift, clamped to `[0, 1]`. Dots and density are only
/// touched by the mirror.
pub fn apply_transform(sample: &Sample, flip: bool, brightness: f64, contrast: f64) -> Sample {
    let width = sample.image.width();
    let (mut image, dots, density) = if flip {
        (
            sample.image.flip_horizontal(),
            sample.dots.flip_horizontal(width),
            sample.density.as_ref().map(DensityGrid::flip_horizontal),
        )
    } else {
        (
            sample.image.clone(),
            sample.dots.clone(),
            sample.density.clone(),
        )
    };
    if brightness != 0.0 || contrast != 1.0 {
        let n = image.values().len().max(1) as f64;
        let mean = image.values().iter().sum::<f64>() / n;
        image = image.map_clamped(|v| (v - mean) * contrast + mean + brightness);
    }
    Sample {
        id: sample.id.clone(),
        image,
        dots,
        density,
    }
}

/// Random flip plus brightness/contrast jitter. Draw order: flip, brightness, contrast.
pub fn augment<R: Rng + ?Sized>(sample: &Sample, cfg: &AugmentConfig, rng: &mut R) -> Sample {
    let flip = rng.random::<f64>() < cfg.hflip_prob;
    let brightness = if cfg.brightness_delta > 0.0 {
        rng.random_range(-cfg.brightness_delta..=cfg.brightness_delta)
    } else {
        0.0
    };
    let (lo, hi) = cfg.contrast_range;
    let contrast = if hi > lo {
        rng.random_range(lo..=hi)
    } else {
        lo
    };
    apply_transform(sample, flip, brightness, contrast)
}

pub fn encode_checkpoint(params: &ModelParams) -> Vec<u8> {
    let mut out = Vec::with_capacity(CHECKPOINT_HEADER_LEN + PARAM_COUNT * 8);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(PARAM_COUNT as u32).to_le_bytes());
    out.extend_from_slice(&0u32.to_le_bytes());
    for v in params.as_slice() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_checkpoint(bytes: &[u8]) -> std::result::Result<ModelParams, String> {
    if bytes.len() < CHECKPOINT_HEADER_LEN || &bytes[..4] != CHECKPOINT_MAGIC {
        return Err("missing CLPM header".into());
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
    let version = word(4);
    if version != CHECKPOINT_VERSION {
        return Err(format!("unsupported checkpoint version {version}"));
    }
    let count = word(8) as usize;
    let payload = &bytes[CHECKPOINT_HEADER_LEN..];
    if count != PARAM_COUNT || payload.len() != count * 8 {
        return Err(format!(
            "expected {PARAM_COUNT} parameters, header says {count} with {} payload bytes",
            payload.len()
        ));
    }
    let values = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    ModelParams::from_flat(values).map_err(|e| e.to_string())
}

pub fn save_checkpoint(path: &Path, params: &ModelParams) -> Result<()> {
    fs::write(path, encode_checkpoint(params)).map_err(|e| ClipError::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<ModelParams> {
    let bytes = fs::read(path).map_err(|e| ClipError::io(path, e))?;
    decode_checkpoint(&bytes).map_err(|m| ClipError::format(path, m))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::{DotAnnotations, Point};
    use crate::density::{render_density, KernelSpec};

    fn random_image(h: usize, w: usize, rng: &mut ChaCha8Rng) -> ImageGrid {
        ImageGrid::new(h, w, (0..h * w).map(|_| rng.random::<f64>()).collect()).unwrap()
    }

    fn sample_with_dots(h: usize, w: usize, pts: &[(f64, f64)], seed: u64) -> Sample {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dots = DotAnnotations::new(pts.iter().map(|&(x, y)| Point::new(x, y)).collect());
        let density = render_density(&dots, h, w, &KernelSpec::new(2.0).unwrap()).unwrap();
        Sample {
            id: format!("s{seed}"),
            image: random_image(h, w, &mut rng),
            dots,
            density: Some(density),
        }
    }

    #[test]
    fn param_count_is_801() {
        assert_eq!(PARAM_COUNT, 801);
    }

    #[test]
    fn init_is_deterministic_and_bounded() {
        let a = init_model(11);
        assert_eq!(a, init_model(11));
        assert_ne!(a, init_model(12));
        for (range, bound) in ModelParams::layer_bounds() {
            assert!(a.as_slice()[range].iter().all(|v| v.abs() <= bound));
        }
        assert!(a.conv1_bias().iter().all(|&b| b == 0.0));
    }

    #[test]
    fn forward_shape_and_sign() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let params = init_model(3);
        let img = random_image(9, 12, &mut rng);
        let out = forward(&params, &img).unwrap();
        assert_eq!((out.height(), out.width()), (9, 12));
        assert!(out.values().iter().all(|&v| v >= 0.0));
        assert!(forward(&params, &ImageGrid::zeros(6, 20)).is_err());
    }

    #[test]
    fn zero_image_zero_bias_gives_zero() {
        let out = forward(&init_model(5), &ImageGrid::zeros(8, 8)).unwrap();
        assert!(out.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn loss_examples() {
        let gt = DensityGrid::new(2, 2, vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        let plus = DensityGrid::new(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(loss(&gt, &gt).unwrap(), 0.0);
        assert_eq!(loss(&plus, &gt).unwrap(), 4.0);
        assert_eq!(loss(&gt, &plus).unwrap(), 4.0);
        assert!(loss(&gt, &DensityGrid::zeros(1, 4)).is_err());
    }

    #[test]
    fn zero_lr_leaves_params() {
        let s = sample_with_dots(9, 9, &[(4.0, 4.0)], 2);
        let mut params = init_model(1);
        let before = params.clone();
        let mut opt = OptimizerState::new(0.0);
        let l = train_batch(&mut params, &mut opt, std::slice::from_ref(&s)).unwrap();
        assert!(l > 0.0);
        assert_eq!(params, before);
        assert_eq!(opt.step_count, 1);
    }

    #[test]
    fn zero_gradient_adam_step_is_noop() {
        let mut params = init_model(4);
        let before = params.clone();
        let mut opt = OptimizerState::new(0.1);
        opt.step(&mut params, &[0.0; PARAM_COUNT]);
        assert_eq!(params, before);
    }

    #[test]
    fn missing_density_is_state_error() {
        let mut s = sample_with_dots(9, 9, &[], 1);
        s.density = None;
        let err =
            train_batch(&mut init_model(0), &mut OptimizerState::default(), &[s]).unwrap_err();
        assert!(matches!(err, ClipError::State(_)));
    }

    #[test]
    fn overfits_single_sample() {
        let s = sample_with_dots(16, 16, &[(4.0, 5.0), (10.0, 11.0), (12.5, 3.0)], 9);
        let mut params = init_model(2);
        let mut opt = OptimizerState::default();
        let batch = std::slice::from_ref(&s);
        let initial = mean_loss(&params, batch).unwrap();
        let mut last = initial;
        for _ in 0..500 {
            last = train_batch(&mut params, &mut opt, batch).unwrap();
        }
        assert!(
            last < 0.1 * initial,
            "initial {initial}, after 500 steps {last}"
        );
    }

    #[test]
    fn forced_flip_twice_is_identity() {
        let s = sample_with_dots(12, 32, &[(0.0, 3.0), (7.25, 9.5)], 4);
        let once = apply_transform(&s, true, 0.0, 1.0);
        assert_eq!(once.dots.points[0], Point::new(31.0, 3.0));
        let twice = apply_transform(&once, true, 0.0, 1.0);
        assert_eq!(twice.image, s.image);
        assert_eq!(twice.dots, s.dots);
        let (a, b) = (twice.density.unwrap(), s.density.unwrap());
        for (x, y) in a.values().iter().zip(b.values()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn augment_keeps_count_and_range() {
        let s = sample_with_dots(16, 16, &[(1.0, 1.0), (8.0, 8.0), (15.0, 2.0)], 5);
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let cfg = AugmentConfig {
            hflip_prob: 0.5,
            brightness_delta: 0.3,
            contrast_range: (0.5, 1.5),
        };
        for _ in 0..50 {
            let a = augment(&s, &cfg, &mut rng);
            assert_eq!(a.count(), s.count());
            assert!(a.image.values().iter().all(|v| (0.0..=1.0).contains(v)));
            let d = a.density.as_ref().unwrap();
            assert!((d.sum() - 3.0).abs() < 3e-6);
            a.validate().unwrap();
        }
    }

    #[test]
    fn checkpoint_roundtrip_and_header() {
        let p = init_model(8);
        let bytes = encode_checkpoint(&p);
        assert_eq!(&bytes[..4], b"CLPM");
        assert_eq!(&bytes[4..8], &1u32.to_le_bytes());
        assert_eq!(&bytes[8..12], &801u32.to_le_bytes());
        assert_eq!(bytes.len(), 16 + 801 * 8);
        assert_eq!(decode_checkpoint(&bytes).unwrap(), p);
        assert!(decode_checkpoint(&bytes[..100]).is_err());
        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(decode_checkpoint(&bad).is_err());
    }
}
