//! Per-patch heatmaps rendered back onto painting-sized rasters.
//!
//! Each patch contributes its scalar to every pixel it covers; overlapping
//! contributions are averaged per pixel before color mapping. Two fixed
//! color maps are used:
//!
//! * class maps (values 0..2): blank = white, human = blue, robot = red,
//!   with linear blends for fractional averages;
//! * entropy maps (values 0..1): white through amber to dark red,
//!   light-to-dark.

use std::path::Path;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HeatmapKind {
    /// Values are class indices: 0 blank, 1 human, 2 robot.
    Class,
    /// Values are conditional entropies in bits, `[0,1]`.
    Entropy,
}

/// An RGB raster with the source painting's dimensions.
#[derive(Clone, Debug)]
pub struct Heatmap {
    pub width: usize,
    pub height: usize,
    /// Row-major RGB byte triples.
    pub rgb: Vec<u8>,
}

fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a + (b - a) * t
}

fn class_color(value: f64) -> [u8; 3] {
    // 0 -> white, 1 -> blue, 2 -> red, piecewise linear.
    let (from, to, t) = if value <= 1.0 {
        ([255.0, 255.0, 255.0], [40.0, 70.0, 220.0], value.clamp(0.0, 1.0))
    } else {
        ([40.0, 70.0, 220.0], [220.0, 40.0, 40.0], (value - 1.0).clamp(0.0, 1.0))
    };
    [
        lerp(from[0], to[0], t).round() as u8,
        lerp(from[1], to[1], t).round() as u8,
        lerp(from[2], to[2], t).round() as u8,
    ]
}

fn entropy_color(value: f64) -> [u8; 3] {
    // Sequential light-to-dark: white -> amber -> dark red.
    let t = value.clamp(0.0, 1.0);
    let (from, to, local) = if t <= 0.5 {
        ([255.0, 255.0, 255.0], [250.0, 180.0, 60.0], t * 2.0)
    } else {
        ([250.0, 180.0, 60.0], [120.0, 10.0, 10.0], (t - 0.5) * 2.0)
    };
    [
        lerp(from[0], to[0], local).round() as u8,
        lerp(from[1], to[1], local).round() as u8,
        lerp(from[2], to[2], local).round() as u8,
    ]
}

/// Renders per-patch values back onto the painting. `grid` gives each
/// patch's top-left corner; `values` aligns with it. Pixels no patch
/// covers stay white.
pub fn render_heatmap(
    width: usize,
    height: usize,
    grid: &[(usize, usize)],
    patch_size: usize,
    values: &[f64],
    kind: HeatmapKind,
) -> Result<Heatmap> {
    if grid.len() != values.len() {
        return Err(Error::Usage(format!(
            "{} grid positions against {} values",
            grid.len(),
            values.len()
        )));
    }
    let mut sum = vec![0.0f64; width * height];
    let mut cover = vec![0u32; width * height];
    for (&(x, y), &value) in grid.iter().zip(values) {
        if x + patch_size > width || y + patch_size > height {
            return Err(Error::Usage(format!(
                "patch at ({x},{y}) exceeds the {width}x{height} raster"
            )));
        }
        for row in y..y + patch_size {
            let base = row * width;
            for col in x..x + patch_size {
                sum[base + col] += value;
                cover[base + col] += 1;
            }
        }
    }

    let mut rgb = Vec::with_capacity(width * height * 3);
    for i in 0..width * height {
        let color = if cover[i] == 0 {
            [255, 255, 255]
        } else {
            let mean = sum[i] / cover[i] as f64;
            match kind {
                HeatmapKind::Class => class_color(mean),
                HeatmapKind::Entropy => entropy_color(mean),
            }
        };
        rgb.extend_from_slice(&color);
    }
    Ok(Heatmap { width, height, rgb })
}

impl Heatmap {
    pub fn save_png(&self, path: &Path) -> Result<()> {
        let img = image::RgbImage::from_fn(self.width as u32, self.height as u32, |x, y| {
            let at = (y as usize * self.width + x as usize) * 3;
            image::Rgb([self.rgb[at], self.rgb[at + 1], self.rgb[at + 2]])
        });
        img.save(path).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            detail: format!("PNG encode failed: {e}"),
        })
    }

    /// Mean of the per-pixel mapped darkness (0 = white, 1 = black),
    /// useful for comparing rasters numerically.
    pub fn mean_darkness(&self) -> f64 {
        let total: f64 = self
            .rgb
            .chunks_exact(3)
            .map(|px| 1.0 - (px[0] as f64 + px[1] as f64 + px[2] as f64) / (3.0 * 255.0))
            .sum();
        total / (self.width * self.height) as f64
    }
}
