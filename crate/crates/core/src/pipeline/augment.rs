use rand::Rng;
use serde::{Deserialize, Serialize};

use super::resize_bilinear;
use crate::error::{Error, Result};

/// Training-time augmentation settings. Each enabled transform fires
/// independently with probability `apply_prob`, in the order: rotation,
/// horizontal flip, vertical flip, random resized crop, Gaussian blur,
/// padded random crop.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AugmentationConfig {
    /// Maximum absolute rotation angle in degrees.
    pub rotation_deg: f64,
    pub flip_h: bool,
    pub flip_v: bool,
    /// Area-fraction interval for random resized cropping.
    pub rrc_scale: (f64, f64),
    /// Gaussian kernel size; must be odd.
    pub blur_kernel: usize,
    pub blur_sigma: f64,
    /// White padding width for the padded random crop, in pixels.
    pub crop_pad: usize,
    /// Per-transform application probability.
    pub apply_prob: f64,
    pub seed: u64,
}

impl Default for AugmentationConfig {
    fn default() -> Self {
        AugmentationConfig {
            rotation_deg: 15.0,
            flip_h: true,
            flip_v: true,
            rrc_scale: (0.8, 1.0),
            blur_kernel: 3,
            blur_sigma: 0.8,
            crop_pad: 10,
            apply_prob: 0.5,
            seed: 0,
        }
    }
}

impl AugmentationConfig {
    pub fn disabled() -> Self {
        AugmentationConfig {
            apply_prob: 0.0,
            ..AugmentationConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.rrc_scale;
        if !(lo > 0.0 && lo <= hi && hi <= 1.0) {
            return Err(Error::Config(format!(
                "rrc_scale must be a sub-interval of (0,1], got ({lo}, {hi})"
            )));
        }
        if self.blur_kernel == 0 || self.blur_kernel % 2 == 0 {
            return Err(Error::Config(format!(
                "blur kernel must be odd and >= 1, got {}",
                self.blur_kernel
            )));
        }
        if !(0.0..=1.0).contains(&self.apply_prob) {
            return Err(Error::Config(format!(
                "apply_prob must be in [0,1], got {}",
                self.apply_prob
            )));
        }
        if !(self.rotation_deg >= 0.0) || !(self.blur_sigma > 0.0) {
            return Err(Error::Config(
                "rotation_deg must be >= 0 and blur_sigma > 0".into(),
            ));
        }
        Ok(())
    }
}

/// Applies the configured transforms to a square patch. Output dimensions
/// always equal input dimensions and intensities stay in `[0,1]`; exposed
/// corners and padding fill with white (1.0).
pub fn augment<R: Rng>(
    pixels: &[f32],
    size: usize,
    config: &AugmentationConfig,
    rng: &mut R,
) -> Result<Vec<f32>> {
    config.validate()?;
    if pixels.len() != size * size {
        return Err(Error::Shape(format!(
            "augment expects a square {size}x{size} patch, got {} pixels",
            pixels.len()
        )));
    }
    let mut out = pixels.to_vec();

    if config.rotation_deg > 0.0 && rng.gen::<f64>() < config.apply_prob {
        let angle = rng.gen_range(-config.rotation_deg..=config.rotation_deg);
        out = rotate(&out, size, angle.to_radians());
    }
    if config.flip_h && rng.gen::<f64>() < config.apply_prob {
        flip_horizontal(&mut out, size);
    }
    if config.flip_v && rng.gen::<f64>() < config.apply_prob {
        flip_vertical(&mut out, size);
    }
    if rng.gen::<f64>() < config.apply_prob {
        let (lo, hi) = config.rrc_scale;
        let area = rng.gen_range(lo..=hi);
        out = random_resized_crop(&out, size, area, rng);
    }
    if rng.gen::<f64>() < config.apply_prob {
        out = gaussian_blur(&out, size, config.blur_kernel, config.blur_sigma);
    }
    if config.crop_pad > 0 && rng.gen::<f64>() < config.apply_prob {
        out = padded_random_crop(&out, size, config.crop_pad, rng);
    }

    for v in &mut out {
        *v = v.clamp(0.0, 1.0);
    }
    Ok(out)
}

/// Rotates content about the patch center; positive angles turn content
/// clockwise when viewed with y increasing downward. Exposed corners fill
/// with white.
fn rotate(pixels: &[f32], size: usize, angle: f64) -> Vec<f32> {
    let center = (size as f64 - 1.0) / 2.0;
    let (sin, cos) = angle.sin_cos();
    let mut out = vec![1.0f32; size * size];
    for dy in 0..size {
        for dx in 0..size {
            // Inverse map: rotate the destination offset by -angle.
            let ox = dx as f64 - center;
            let oy = dy as f64 - center;
            let sx = cos * ox + sin * oy + center;
            let sy = -sin * ox + cos * oy + center;
            out[dy * size + dx] = sample_bilinear_white(pixels, size, sx, sy);
        }
    }
    out
}

/// Bilinear sample with white (1.0) outside the patch.
fn sample_bilinear_white(pixels: &[f32], size: usize, x: f64, y: f64) -> f32 {
    let x0 = x.floor();
    let y0 = y.floor();
    let wx = (x - x0) as f32;
    let wy = (y - y0) as f32;
    let fetch = |ix: f64, iy: f64| -> f32 {
        if ix < 0.0 || iy < 0.0 || ix >= size as f64 || iy >= size as f64 {
            1.0
        } else {
            pixels[iy as usize * size + ix as usize]
        }
    };
    let top = fetch(x0, y0) * (1.0 - wx) + fetch(x0 + 1.0, y0) * wx;
    let bot = fetch(x0, y0 + 1.0) * (1.0 - wx) + fetch(x0 + 1.0, y0 + 1.0) * wx;
    top * (1.0 - wy) + bot * wy
}

fn flip_horizontal(pixels: &mut [f32], size: usize) {
    for row in pixels.chunks_mut(size) {
        row.reverse();
    }
}

fn flip_vertical(pixels: &mut [f32], size: usize) {
    for y in 0..size / 2 {
        for x in 0..size {
            pixels.swap(y * size + x, (size - 1 - y) * size + x);
        }
    }
}

/// Crops a square covering `area` of the patch at a uniform position, then
/// rescales it back to the original size.
fn random_resized_crop<R: Rng>(pixels: &[f32], size: usize, area: f64, rng: &mut R) -> Vec<f32> {
    let side = ((size as f64) * area.sqrt()).round().max(1.0) as usize;
    let side = side.min(size);
    let max_off = size - side;
    let x0 = if max_off > 0 { rng.gen_range(0..=max_off) } else { 0 };
    let y0 = if max_off > 0 { rng.gen_range(0..=max_off) } else { 0 };
    let mut crop = Vec::with_capacity(side * side);
    for y in y0..y0 + side {
        crop.extend_from_slice(&pixels[y * size + x0..y * size + x0 + side]);
    }
    resize_bilinear(&crop, side, side, size, size)
}

/// Separable Gaussian blur with edge clamping.
fn gaussian_blur(pixels: &[f32], size: usize, kernel: usize, sigma: f64) -> Vec<f32> {
    let half = (kernel / 2) as isize;
    let mut weights = Vec::with_capacity(kernel);
    for i in -half..=half {
        weights.push((-((i * i) as f64) / (2.0 * sigma * sigma)).exp());
    }
    let total: f64 = weights.iter().sum();
    let weights: Vec<f32> = weights.iter().map(|w| (w / total) as f32).collect();

    let clamp = |v: isize| v.clamp(0, size as isize - 1) as usize;
    let mut tmp = vec![0.0f32; size * size];
    for y in 0..size {
        for x in 0..size {
            let mut acc = 0.0;
            for (k, w) in weights.iter().enumerate() {
                let sx = clamp(x as isize + k as isize - half);
                acc += pixels[y * size + sx] * w;
            }
            tmp[y * size + x] = acc;
        }
    }
    let mut out = vec![0.0f32; size * size];
    for y in 0..size {
        for x in 0..size {
            let mut acc = 0.0;
            for (k, w) in weights.iter().enumerate() {
                let sy = clamp(y as isize + k as isize - half);
                acc += tmp[sy * size + x] * w;
            }
            out[y * size + x] = acc;
        }
    }
    out
}

/// Pads every border with `pad` white pixels, then crops a random window of
/// the original size.
fn padded_random_crop<R: Rng>(pixels: &[f32], size: usize, pad: usize, rng: &mut R) -> Vec<f32> {
    let padded = size + 2 * pad;
    let mut buf = vec![1.0f32; padded * padded];
    for y in 0..size {
        let dst = (y + pad) * padded + pad;
        buf[dst..dst + size].copy_from_slice(&pixels[y * size..(y + 1) * size]);
    }
    let x0 = rng.gen_range(0..=2 * pad);
    let y0 = rng.gen_range(0..=2 * pad);
    let mut out = Vec::with_capacity(size * size);
    for y in y0..y0 + size {
        out.extend_from_slice(&buf[y * padded + x0..y * padded + x0 + size]);
    }
    out
}
