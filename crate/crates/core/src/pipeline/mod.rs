//! Canvas loading, patch extraction and labeling.
//!
//! Scans enter as grayscale intensity grids in `[0,1]`. Patches are tiled on
//! an overlapping grid (default 300x300, stride 150); incomplete border tiles
//! are dropped. A patch is *Blank* when at least 95% of its pixels are white
//! (intensity >= 0.98 after normalization); otherwise it inherits the
//! painting's author label.

mod augment;
mod cache;
mod manifest;

pub use augment::{augment, AugmentationConfig};
pub use cache::{read_patch_cache, write_patch_cache};
pub use manifest::{read_manifest, write_manifest, ManifestEntry};

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Intensity at or above which a pixel counts as white canvas.
pub const WHITE_PIXEL_THRESHOLD: f32 = 0.98;
/// White-pixel fraction at or above which a patch is labeled Blank.
pub const BLANK_FRACTION: f64 = 0.95;
/// Default patch edge length in scan pixels.
pub const DEFAULT_PATCH_SIZE: usize = 300;
/// Default extraction stride (50% overlap).
pub const DEFAULT_STRIDE: usize = 150;

/// Who produced a painting.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Author {
    Human,
    Robot,
    Hybrid,
}

/// Patch classes, in the fixed report order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassLabel {
    Blank = 0,
    Human = 1,
    Robot = 2,
}

impl ClassLabel {
    pub const ALL: [ClassLabel; 3] = [ClassLabel::Blank, ClassLabel::Human, ClassLabel::Robot];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Result<Self> {
        match index {
            0 => Ok(ClassLabel::Blank),
            1 => Ok(ClassLabel::Human),
            2 => Ok(ClassLabel::Robot),
            other => Err(Error::Usage(format!("no class with index {other}"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ClassLabel::Blank => "blank",
            ClassLabel::Human => "human",
            ClassLabel::Robot => "robot",
        }
    }
}

impl Author {
    /// The patch label carried by painted regions of a pure painting.
    pub fn class_label(self) -> Result<ClassLabel> {
        match self {
            Author::Human => Ok(ClassLabel::Human),
            Author::Robot => Ok(ClassLabel::Robot),
            Author::Hybrid => Err(Error::Usage(
                "hybrid paintings have no per-patch author label".into(),
            )),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Author::Human => "human",
            Author::Robot => "robot",
            Author::Hybrid => "hybrid",
        }
    }
}

/// A grayscale scan with provenance.
#[derive(Clone, Debug)]
pub struct GrayImage {
    width: usize,
    height: usize,
    pixels: Vec<f32>,
    pub painting_id: String,
    pub author: Author,
}

impl GrayImage {
    pub fn new(
        width: usize,
        height: usize,
        pixels: Vec<f32>,
        painting_id: String,
        author: Author,
    ) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Shape(format!(
                "image dimensions must be at least 1x1, got {width}x{height}"
            )));
        }
        if pixels.len() != width * height {
            return Err(Error::Shape(format!(
                "{}x{} image needs {} pixels, got {}",
                width,
                height,
                width * height,
                pixels.len()
            )));
        }
        if pixels.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::Validation(
                "image intensities must lie in [0,1]".into(),
            ));
        }
        Ok(GrayImage {
            width,
            height,
            pixels,
            painting_id,
            author,
        })
    }

    /// Decodes a PNG or PNM file, converting color to luminance
    /// (0.299 R + 0.587 G + 0.114 B) and rescaling intensities to `[0,1]`.
    pub fn load(path: &Path, painting_id: String, author: Author) -> Result<Self> {
        let reader = image::ImageReader::open(path)
            .map_err(|e| Error::io(path, e))?
            .with_guessed_format()
            .map_err(|e| Error::io(path, e))?;
        let decoded = reader.decode().map_err(|e| Error::Format {
            path: path.to_path_buf(),
            detail: format!("failed to decode: {e}"),
        })?;
        let (width, height) = (decoded.width() as usize, decoded.height() as usize);

        use image::DynamicImage::*;
        let pixels: Vec<f32> = match &decoded {
            ImageLuma8(img) => img.pixels().map(|p| p.0[0] as f32 / 255.0).collect(),
            ImageLumaA8(img) => img.pixels().map(|p| p.0[0] as f32 / 255.0).collect(),
            ImageLuma16(img) => img.pixels().map(|p| p.0[0] as f32 / 65535.0).collect(),
            ImageLumaA16(img) => img.pixels().map(|p| p.0[0] as f32 / 65535.0).collect(),
            ImageRgb8(img) => img.pixels().map(|p| luma8(p.0[0], p.0[1], p.0[2])).collect(),
            ImageRgba8(img) => img.pixels().map(|p| luma8(p.0[0], p.0[1], p.0[2])).collect(),
            ImageRgb16(img) => img
                .pixels()
                .map(|p| luma16(p.0[0], p.0[1], p.0[2]))
                .collect(),
            ImageRgba16(img) => img
                .pixels()
                .map(|p| luma16(p.0[0], p.0[1], p.0[2]))
                .collect(),
            _ => {
                return Err(Error::Format {
                    path: path.to_path_buf(),
                    detail: "unsupported bit depth or sample format".into(),
                })
            }
        };
        GrayImage::new(width, height, pixels, painting_id, author)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    /// Copies the `size`x`size` window with top-left corner `(x, y)`.
    pub fn crop(&self, x: usize, y: usize, size: usize) -> Result<Vec<f32>> {
        if x + size > self.width || y + size > self.height {
            return Err(Error::Usage(format!(
                "crop ({x},{y})+{size} exceeds {}x{} image",
                self.width, self.height
            )));
        }
        let mut out = Vec::with_capacity(size * size);
        for row in y..y + size {
            let start = row * self.width + x;
            out.extend_from_slice(&self.pixels[start..start + size]);
        }
        Ok(out)
    }
}

fn luma8(r: u8, g: u8, b: u8) -> f32 {
    (0.299 * r as f32 + 0.587 * g as f32 + 0.114 * b as f32) / 255.0
}

fn luma16(r: u16, g: u16, b: u16) -> f32 {
    (0.299 * r as f32 + 0.587 * g as f32 + 0.114 * b as f32) / 65535.0
}

/// One labeled tile of a pure painting.
#[derive(Clone, Debug)]
pub struct PatchRecord {
    pub painting_id: String,
    pub x: usize,
    pub y: usize,
    pub size: usize,
    pub label: ClassLabel,
    pub pixels: Vec<f32>,
}

/// Top-left offsets of the extraction grid along one axis: multiples of
/// `stride` with the whole tile in bounds. Incomplete border tiles drop.
pub fn grid_axis(extent: usize, size: usize, stride: usize) -> Vec<usize> {
    if extent < size {
        return Vec::new();
    }
    (0..=(extent - size) / stride).map(|i| i * stride).collect()
}

/// All `(x, y)` grid offsets for an image, row-major.
pub fn grid_coords(
    width: usize,
    height: usize,
    size: usize,
    stride: usize,
) -> Result<Vec<(usize, usize)>> {
    if size < 1 {
        return Err(Error::Usage("patch size must be at least 1".into()));
    }
    if stride < 1 || stride > size {
        return Err(Error::Usage(format!(
            "stride must satisfy 1 <= stride <= size, got stride {stride}, size {size}"
        )));
    }
    let xs = grid_axis(width, size, stride);
    let ys = grid_axis(height, size, stride);
    let mut coords = Vec::with_capacity(xs.len() * ys.len());
    for &y in &ys {
        for &x in &xs {
            coords.push((x, y));
        }
    }
    Ok(coords)
}

/// White-pixel fraction of a patch.
pub fn white_fraction(pixels: &[f32]) -> f64 {
    let white = pixels
        .iter()
        .filter(|&&p| p >= WHITE_PIXEL_THRESHOLD)
        .count();
    white as f64 / pixels.len() as f64
}

/// Labels one patch: Blank when the white fraction reaches 95%, otherwise
/// the painting author's class. Hybrid paintings are never auto-labeled.
pub fn label_patch(pixels: &[f32], painting_author: Author) -> Result<ClassLabel> {
    let author_label = painting_author.class_label()?;
    if white_fraction(pixels) >= BLANK_FRACTION {
        Ok(ClassLabel::Blank)
    } else {
        Ok(author_label)
    }
}

/// Tiles a pure painting into labeled patches on the extraction grid.
pub fn extract_patches(image: &GrayImage, size: usize, stride: usize) -> Result<Vec<PatchRecord>> {
    let author_label = image.author.class_label()?;
    let coords = grid_coords(image.width, image.height, size, stride)?;
    let mut patches = Vec::with_capacity(coords.len());
    for (x, y) in coords {
        let pixels = image.crop(x, y, size)?;
        let label = if white_fraction(&pixels) >= BLANK_FRACTION {
            ClassLabel::Blank
        } else {
            author_label
        };
        patches.push(PatchRecord {
            painting_id: image.painting_id.clone(),
            x,
            y,
            size,
            label,
            pixels,
        });
    }
    Ok(patches)
}

/// Bilinear resize between arbitrary square or rectangular grids.
/// Sample positions follow the pixel-center convention.
pub fn resize_bilinear(
    src: &[f32],
    src_w: usize,
    src_h: usize,
    dst_w: usize,
    dst_h: usize,
) -> Vec<f32> {
    assert_eq!(src.len(), src_w * src_h);
    let mut out = vec![0.0f32; dst_w * dst_h];
    let sx = src_w as f32 / dst_w as f32;
    let sy = src_h as f32 / dst_h as f32;
    for dy in 0..dst_h {
        let fy = ((dy as f32 + 0.5) * sy - 0.5).clamp(0.0, (src_h - 1) as f32);
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(src_h - 1);
        let wy = fy - y0 as f32;
        for dx in 0..dst_w {
            let fx = ((dx as f32 + 0.5) * sx - 0.5).clamp(0.0, (src_w - 1) as f32);
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(src_w - 1);
            let wx = fx - x0 as f32;
            let top = src[y0 * src_w + x0] * (1.0 - wx) + src[y0 * src_w + x1] * wx;
            let bot = src[y1 * src_w + x0] * (1.0 - wx) + src[y1 * src_w + x1] * wx;
            out[dy * dst_w + dx] = top * (1.0 - wy) + bot * wy;
        }
    }
    out
}

/// Stable 64-bit stream derivation for per-patch RNG: mixes a base seed with
/// the painting id and grid position. FNV-1a followed by a splitmix finalizer
/// so nearby coordinates land on unrelated streams.
pub fn derive_stream_seed(base: u64, painting_id: &str, x: u64, y: u64) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    let mut eat = |bytes: &[u8]| {
        for &b in bytes {
            h ^= b as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
    };
    eat(&base.to_le_bytes());
    eat(painting_id.as_bytes());
    eat(&x.to_le_bytes());
    eat(&y.to_le_bytes());
    // splitmix64 finalizer
    h = h.wrapping_add(0x9e3779b97f4a7c15);
    h = (h ^ (h >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    h = (h ^ (h >> 27)).wrapping_mul(0x94d049bb133111eb);
    h ^ (h >> 31)
}

/// A painting loaded from a manifest: the scan plus, for pure paintings,
/// its labeled patches.
#[derive(Clone, Debug)]
pub struct LoadedPainting {
    pub image: GrayImage,
    /// `None` for hybrid paintings, whose patch labels are undefined.
    pub patches: Option<Vec<PatchRecord>>,
}

/// Loads every manifest entry, extracting labeled patches for pure
/// paintings. Relative manifest paths resolve against `base`.
pub fn load_corpus(
    entries: &[ManifestEntry],
    base: &Path,
    size: usize,
    stride: usize,
) -> Result<Vec<LoadedPainting>> {
    let mut paintings = Vec::with_capacity(entries.len());
    for entry in entries {
        let path = if entry.path.is_absolute() {
            entry.path.clone()
        } else {
            base.join(&entry.path)
        };
        let image = GrayImage::load(&path, entry.painting_id.clone(), entry.author)?;
        let patches = match entry.author {
            Author::Hybrid => None,
            _ => Some(extract_patches(&image, size, stride)?),
        };
        paintings.push(LoadedPainting { image, patches });
    }
    Ok(paintings)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn test_image(width: usize, height: usize, pixels: Vec<f32>) -> GrayImage {
        GrayImage::new(width, height, pixels, "p".into(), Author::Human).unwrap()
    }

    #[test]
    fn grid_600_gives_nine_patches() {
        let coords = grid_coords(600, 600, 300, 150).unwrap();
        assert_eq!(coords.len(), 9);
        for (x, y) in coords {
            assert!([0, 150, 300].contains(&x));
            assert!([0, 150, 300].contains(&y));
        }
    }

    #[test]
    fn grid_exact_fit_gives_single_patch() {
        assert_eq!(grid_coords(300, 300, 300, 150).unwrap(), vec![(0, 0)]);
    }

    #[test]
    fn grid_undersized_axis_gives_none() {
        assert!(grid_coords(299, 300, 300, 150).unwrap().is_empty());
    }

    #[test]
    fn grid_count_matches_formula_and_enumeration() {
        for (w, h, size, stride) in [
            (900, 900, 300, 150),
            (640, 480, 100, 37),
            (301, 300, 300, 150),
            (1000, 350, 300, 300),
        ] {
            let coords = grid_coords(w, h, size, stride).unwrap();
            let formula = if w >= size && h >= size {
                ((w - size) / stride + 1) * ((h - size) / stride + 1)
            } else {
                0
            };
            // Exhaustive enumeration over all stride multiples.
            let brute = (0..w)
                .step_by(stride)
                .filter(|x| x + size <= w)
                .count()
                * (0..h).step_by(stride).filter(|y| y + size <= h).count();
            assert_eq!(coords.len(), formula);
            assert_eq!(coords.len(), brute);
        }
    }

    #[test]
    fn consecutive_patches_share_overlap_columns() {
        let width = 450;
        let pixels: Vec<f32> = (0..width * 300)
            .map(|i| (i % 997) as f32 / 996.0)
            .collect();
        let image = test_image(width, 300, pixels);
        let patches = extract_patches(&image, 300, 150).unwrap();
        assert_eq!(patches.len(), 2);
        let (a, b) = (&patches[0], &patches[1]);
        // Patch b starts 150 columns into patch a: columns 150..300 of a
        // equal columns 0..150 of b.
        for row in 0..300 {
            for col in 0..150 {
                assert_eq!(a.pixels[row * 300 + 150 + col], b.pixels[row * 300 + col]);
            }
        }
    }

    #[test]
    fn label_blank_threshold_is_inclusive() {
        // 400 pixels; exactly 380 white = 95.0% -> Blank.
        let mut pixels = vec![1.0f32; 380];
        pixels.extend(vec![0.2f32; 20]);
        assert_eq!(label_patch(&pixels, Author::Robot).unwrap(), ClassLabel::Blank);

        // 379 white of 400 = 94.75% -> author label.
        let mut pixels = vec![1.0f32; 379];
        pixels.extend(vec![0.2f32; 21]);
        assert_eq!(label_patch(&pixels, Author::Human).unwrap(), ClassLabel::Human);
    }

    #[test]
    fn label_rejects_hybrid_author() {
        let pixels = vec![0.5f32; 16];
        assert!(matches!(
            label_patch(&pixels, Author::Hybrid),
            Err(Error::Usage(_))
        ));
    }

    #[test]
    fn white_pixel_cutoff_excludes_pale_paint() {
        // 0.975 is pale paint, not white.
        let pixels = vec![0.975f32; 100];
        assert_eq!(label_patch(&pixels, Author::Robot).unwrap(), ClassLabel::Robot);
    }

    #[test]
    fn crop_out_of_bounds_is_usage_error() {
        let image = test_image(4, 4, vec![0.0; 16]);
        assert!(image.crop(2, 2, 3).is_err());
    }

    #[test]
    fn resize_identity_when_sizes_match() {
        let src: Vec<f32> = (0..16).map(|i| i as f32 / 15.0).collect();
        assert_eq!(resize_bilinear(&src, 4, 4, 4, 4), src);
    }

    #[test]
    fn resize_constant_stays_constant() {
        let src = vec![0.42f32; 25];
        let out = resize_bilinear(&src, 5, 5, 9, 9);
        for v in out {
            assert!((v - 0.42).abs() < 1e-6);
        }
    }

    #[test]
    fn load_white_png_gives_unit_intensity() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("white.png");
        let img = image::GrayImage::from_pixel(6, 4, image::Luma([255u8]));
        img.save(&path).unwrap();
        let loaded = GrayImage::load(&path, "w".into(), Author::Human).unwrap();
        assert_eq!((loaded.width(), loaded.height()), (6, 4));
        assert!(loaded.pixels().iter().all(|&p| p == 1.0));
    }

    #[test]
    fn load_black_pgm_gives_zero_intensity() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("black.pgm");
        // Binary PGM (P5), 3x2, maxval 255, all zero.
        let mut bytes = b"P5\n3 2\n255\n".to_vec();
        bytes.extend([0u8; 6]);
        std::fs::write(&path, bytes).unwrap();
        let loaded = GrayImage::load(&path, "b".into(), Author::Robot).unwrap();
        assert_eq!((loaded.width(), loaded.height()), (3, 2));
        assert!(loaded.pixels().iter().all(|&p| p == 0.0));
    }

    #[test]
    fn load_converts_rgb_by_luminance() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("red.png");
        let img = image::RgbImage::from_pixel(2, 2, image::Rgb([255u8, 0, 0]));
        img.save(&path).unwrap();
        let loaded = GrayImage::load(&path, "r".into(), Author::Human).unwrap();
        for &p in loaded.pixels() {
            assert!((p - 0.299).abs() < 1e-6, "got {p}");
        }
    }

    #[test]
    fn load_corrupt_file_reports_path() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk.png");
        std::fs::write(&path, b"\x89PNG\r\n\x1a\nnot really").unwrap();
        match GrayImage::load(&path, "j".into(), Author::Human) {
            Err(Error::Format { path: p, .. }) => assert_eq!(p, path),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn load_missing_file_is_io_error() {
        let missing = Path::new("/definitely/not/here.png");
        assert!(matches!(
            GrayImage::load(missing, "m".into(), Author::Human),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn stream_seed_depends_on_all_inputs() {
        let base = derive_stream_seed(7, "a", 0, 0);
        assert_ne!(base, derive_stream_seed(8, "a", 0, 0));
        assert_ne!(base, derive_stream_seed(7, "b", 0, 0));
        assert_ne!(base, derive_stream_seed(7, "a", 1, 0));
        assert_ne!(base, derive_stream_seed(7, "a", 0, 1));
        assert_eq!(base, derive_stream_seed(7, "a", 0, 0));
    }
}
