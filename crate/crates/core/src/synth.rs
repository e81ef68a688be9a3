//! Procedural brushstroke corpus: "human-style" canvases built from long
//! curved strokes with tapering width, "robot-style" canvases built from
//! short straight dashes on perturbed grids (planner-like execution), and
//! hybrid canvases interleaving both with per-pixel authorship masks.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::entropy::AnnotationRegion;
use crate::error::{Error, Result};
use crate::pipeline::{
    derive_stream_seed, grid_coords, write_manifest, Author, GrayImage, ManifestEntry,
    DEFAULT_PATCH_SIZE, DEFAULT_STRIDE, WHITE_PIXEL_THRESHOLD,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum StyleKind {
    HumanLike,
    RobotLike,
}

/// Stroke statistics for one painting style. The two defaults differ in
/// curvature variance and width variance by far more than the required 4x,
/// while sharing the same intensity range and coverage targets so no plain
/// ink-quantity threshold separates them.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StyleParams {
    pub style: StyleKind,
    /// Min/max strokes rendered (dashes count individually for RobotLike).
    pub stroke_count: (usize, usize),
    /// Std-dev of per-step heading noise, radians.
    pub curvature_sigma: f64,
    /// Std-dev of stroke widths around their mean, pixels.
    pub width_sigma: f64,
    /// Mean stroke width (diameter), pixels.
    pub width_mean: f64,
    /// End-of-stroke width as a fraction of the starting width.
    pub width_taper: f64,
    /// Stroke darkness range; values are intensities in [0,1).
    pub intensity_range: (f64, f64),
    /// Painted-pixel fraction interval targeted per painting.
    pub coverage_range: (f64, f64),
    /// Scanner-noise std-dev applied to painted pixels. Blank canvas stays
    /// pristine so the white threshold keeps its meaning.
    pub noise_sigma: f64,
    /// Edge-length range of the planner work regions robot dashes fill.
    pub region_span: (f64, f64),
}

impl StyleParams {
    pub fn human_like() -> Self {
        StyleParams {
            style: StyleKind::HumanLike,
            stroke_count: (8, 900),
            curvature_sigma: 0.22,
            width_sigma: 4.0,
            width_mean: 16.0,
            width_taper: 0.35,
            intensity_range: (0.15, 0.75),
            coverage_range: (0.2, 0.7),
            noise_sigma: 0.045,
            region_span: (140.0, 340.0),
        }
    }

    pub fn robot_like() -> Self {
        StyleParams {
            style: StyleKind::RobotLike,
            stroke_count: (8, 9000),
            curvature_sigma: 0.012,
            width_sigma: 0.35,
            width_mean: 12.0,
            width_taper: 1.0,
            intensity_range: (0.15, 0.75),
            coverage_range: (0.2, 0.7),
            noise_sigma: 0.045,
            region_span: (140.0, 340.0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.coverage_range;
        if !(lo > 0.0 && lo < hi && hi < 1.0) {
            return Err(Error::Config(format!(
                "coverage_range must satisfy 0 < lo < hi < 1, got ({lo}, {hi})"
            )));
        }
        let (ilo, ihi) = self.intensity_range;
        if !(ilo >= 0.0 && ilo <= ihi && ihi < WHITE_PIXEL_THRESHOLD as f64) {
            return Err(Error::Config(
                "intensity_range must stay below the white threshold".into(),
            ));
        }
        if self.stroke_count.0 > self.stroke_count.1 {
            return Err(Error::Config("invalid stroke_count range".into()));
        }
        Ok(())
    }
}

/// A generated canvas plus its per-pixel authorship mask
/// (0 blank, 1 human, 2 robot).
#[derive(Clone, Debug)]
pub struct SyntheticPainting {
    pub image: GrayImage,
    pub mask: Vec<u8>,
    pub seed: u64,
    pub provenance: String,
    /// Fraction of pixels touched by both authors at any point during
    /// rendering. Zero for pure paintings.
    pub overlap_fraction: f64,
}

pub const MASK_BLANK: u8 = 0;
pub const MASK_HUMAN: u8 = 1;
pub const MASK_ROBOT: u8 = 2;

fn mask_code(style: StyleKind) -> u8 {
    match style {
        StyleKind::HumanLike => MASK_HUMAN,
        StyleKind::RobotLike => MASK_ROBOT,
    }
}

/// Box-Muller standard normal draw.
fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Painting-level realization of a style: paintings within one style vary
/// in stroke character (width, curvature, spacing, palette darkness), so a
/// single patch never captures the whole style distribution.
struct Realization {
    width_scale: f64,
    curvature_scale: f64,
    pitch_scale: f64,
    length_scale: f64,
    intensity: (f64, f64),
}

impl Realization {
    fn sample(params: &StyleParams, rng: &mut ChaCha8Rng) -> Self {
        let (ilo, ihi) = params.intensity_range;
        let span = ihi - ilo;
        // A random sub-interval covering roughly half the palette.
        let width = span * rng.gen_range(0.35..0.6);
        let start = ilo + rng.gen_range(0.0..(span - width).max(1e-9));
        Realization {
            width_scale: rng.gen_range(0.65..1.4),
            curvature_scale: rng.gen_range(0.6..1.5),
            pitch_scale: rng.gen_range(0.75..1.35),
            length_scale: rng.gen_range(0.8..1.3),
            intensity: (start, start + width),
        }
    }
}

/// One renderable stroke: stamped discs along a path.
struct Stroke {
    points: Vec<(f64, f64, f64)>, // x, y, radius
    intensity: f32,
    author: u8,
}

/// Rectangle kept free of paint so every painting has trivially blank
/// patches (unpainted canvas), mirroring real scans.
#[derive(Clone, Copy, Debug)]
struct BlankBand {
    x0: usize,
    y0: usize,
    x1: usize,
    y1: usize,
}

impl BlankBand {
    fn contains(&self, x: usize, y: usize) -> bool {
        x >= self.x0 && x < self.x1 && y >= self.y0 && y < self.y1
    }

    fn pick(size: usize, rng: &mut ChaCha8Rng) -> Self {
        let band = DEFAULT_PATCH_SIZE.min(size);
        match rng.gen_range(0..4u8) {
            0 => BlankBand { x0: 0, y0: 0, x1: band, y1: size },
            1 => BlankBand { x0: size - band, y0: 0, x1: size, y1: size },
            2 => BlankBand { x0: 0, y0: 0, x1: size, y1: band },
            _ => BlankBand { x0: 0, y0: size - band, x1: size, y1: size },
        }
    }
}

struct Canvas {
    size: usize,
    intensity: Vec<f32>,
    /// Last author to paint each pixel with meaningful coverage.
    last_touch: Vec<u8>,
    /// Bitmask of authors that ever touched each pixel.
    touched_by: Vec<u8>,
    painted: usize,
    band: BlankBand,
}

impl Canvas {
    fn new(size: usize, band: BlankBand) -> Self {
        Canvas {
            size,
            intensity: vec![1.0; size * size],
            last_touch: vec![MASK_BLANK; size * size],
            touched_by: vec![0; size * size],
            painted: 0,
            band,
        }
    }

    fn coverage(&self) -> f64 {
        self.painted as f64 / (self.size * self.size) as f64
    }

    fn stamp(&mut self, cx: f64, cy: f64, radius: f64, value: f32, author: u8) {
        let r_out = radius + 0.5;
        let x_lo = ((cx - r_out).floor().max(0.0)) as usize;
        let y_lo = ((cy - r_out).floor().max(0.0)) as usize;
        let x_hi = ((cx + r_out).ceil().min(self.size as f64 - 1.0)) as usize;
        let y_hi = ((cy + r_out).ceil().min(self.size as f64 - 1.0)) as usize;
        if x_lo > x_hi || y_lo > y_hi {
            return;
        }
        for y in y_lo..=y_hi {
            for x in x_lo..=x_hi {
                if self.band.contains(x, y) {
                    continue;
                }
                let dx = x as f64 - cx;
                let dy = y as f64 - cy;
                let dist = (dx * dx + dy * dy).sqrt();
                let alpha = (radius + 0.5 - dist).clamp(0.0, 1.0) as f32;
                if alpha <= 0.0 {
                    continue;
                }
                let idx = y * self.size + x;
                let before = self.intensity[idx];
                let after = before * (1.0 - alpha) + value * alpha;
                self.intensity[idx] = after;
                if before >= WHITE_PIXEL_THRESHOLD && after < WHITE_PIXEL_THRESHOLD {
                    self.painted += 1;
                }
                if alpha >= 0.02 {
                    self.touched_by[idx] |= author;
                    self.last_touch[idx] = author;
                }
            }
        }
    }

    fn render(&mut self, stroke: &Stroke) {
        for &(x, y, r) in &stroke.points {
            self.stamp(x, y, r, stroke.intensity, stroke.author);
        }
    }

    /// Adds scanner noise to painted pixels, quantizes intensities to the
    /// 8-bit grid the PNG round-trip will produce, then derives the final
    /// mask: a pixel is blank iff its quantized intensity clears the white
    /// threshold.
    fn finalize(&self, noise_sigma: f64, rng: &mut ChaCha8Rng) -> (Vec<f32>, Vec<u8>) {
        let mut pixels = Vec::with_capacity(self.intensity.len());
        let mut mask = Vec::with_capacity(self.intensity.len());
        for (i, &v) in self.intensity.iter().enumerate() {
            let v = if v < WHITE_PIXEL_THRESHOLD && noise_sigma > 0.0 {
                // Painted pixels stay painted: clamp below the threshold.
                (v as f64 + noise_sigma * gauss(rng)).clamp(0.0, 0.975) as f32
            } else {
                v
            };
            let quantized = (v * 255.0).round().clamp(0.0, 255.0) / 255.0;
            pixels.push(quantized);
            if quantized >= WHITE_PIXEL_THRESHOLD {
                mask.push(MASK_BLANK);
            } else {
                // Painted pixels inherit the last author to touch them.
                mask.push(if self.last_touch[i] == MASK_BLANK {
                    // Feathered edge below the stamp-tracking cutoff; the
                    // nearest-author information is the touch bitmask.
                    if self.touched_by[i] & MASK_HUMAN != 0 {
                        MASK_HUMAN
                    } else {
                        MASK_ROBOT
                    }
                } else {
                    self.last_touch[i]
                });
            }
        }
        (pixels, mask)
    }
}

fn sample_range(rng: &mut ChaCha8Rng, range: (f64, f64)) -> f64 {
    if range.0 == range.1 {
        range.0
    } else {
        rng.gen_range(range.0..range.1)
    }
}

/// Long curved stroke: a random walk with per-step angular noise and a
/// width that tapers toward the tail.
fn human_stroke(
    params: &StyleParams,
    real: &Realization,
    size: usize,
    rng: &mut ChaCha8Rng,
) -> Stroke {
    let mut x = rng.gen_range(0.0..size as f64);
    let mut y = rng.gen_range(0.0..size as f64);
    let mut heading = rng.gen_range(0.0..std::f64::consts::TAU);
    let steps = (rng.gen_range(120..280usize) as f64 * real.length_scale) as usize;
    let step_len = 1.8;
    let width0 =
        (real.width_scale * params.width_mean + params.width_sigma * gauss(rng)).max(3.0);
    let width1 = width0 * params.width_taper;
    let intensity = sample_range(rng, real.intensity) as f32;

    let mut points = Vec::with_capacity(steps);
    for i in 0..steps {
        heading += real.curvature_scale * params.curvature_sigma * gauss(rng);
        x += step_len * heading.cos();
        y += step_len * heading.sin();
        if x < -20.0 || y < -20.0 || x > size as f64 + 20.0 || y > size as f64 + 20.0 {
            break;
        }
        let t = i as f64 / steps as f64;
        let width = width0 * (1.0 - t) + width1 * t;
        let width = width * (1.0 + 0.05 * gauss(rng));
        points.push((x, y, (width / 2.0).max(0.8)));
    }
    Stroke {
        points,
        intensity,
        author: mask_code(params.style),
    }
}

/// Short straight dashes on a perturbed grid inside a planner "work
/// region": near-constant width, orientations snapped to the axes.
fn robot_region(
    params: &StyleParams,
    real: &Realization,
    size: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<Stroke> {
    let (span_lo, span_hi) = params.region_span;
    let rw = rng.gen_range(span_lo..span_hi);
    let rh = rng.gen_range(span_lo..span_hi);
    let rx = rng.gen_range(0.0..(size as f64 - rw).max(1.0));
    let ry = rng.gen_range(0.0..(size as f64 - rh).max(1.0));
    let pitch = real.pitch_scale * rng.gen_range(26.0..40.0f64);
    let horizontal = rng.gen_bool(0.5);
    let region_intensity = sample_range(rng, real.intensity);

    let mut strokes = Vec::new();
    let (cols, rows) = ((rw / pitch) as usize, (rh / pitch) as usize);
    for gy in 0..rows.max(1) {
        for gx in 0..cols.max(1) {
            let cx = rx + (gx as f64 + 0.5) * pitch + 3.0 * gauss(rng);
            let cy = ry + (gy as f64 + 0.5) * pitch + 3.0 * gauss(rng);
            let base_heading = if horizontal { 0.0 } else { std::f64::consts::FRAC_PI_2 };
            let heading =
                base_heading + real.curvature_scale * params.curvature_sigma * gauss(rng);
            let length = real.length_scale * rng.gen_range(46.0..78.0f64);
            let width = (real.width_scale * params.width_mean
                + params.width_sigma * gauss(rng))
            .max(3.0);
            let intensity = (region_intensity + 0.02 * gauss(rng))
                .clamp(real.intensity.0, real.intensity.1) as f32;

            let steps = (length / 1.5) as usize;
            let mut points = Vec::with_capacity(steps);
            let (dx, dy) = (heading.cos() * 1.5, heading.sin() * 1.5);
            let (mut px, mut py) = (cx - dx * steps as f64 / 2.0, cy - dy * steps as f64 / 2.0);
            for _ in 0..steps {
                px += dx;
                py += dy;
                points.push((px, py, width / 2.0));
            }
            strokes.push(Stroke {
                points,
                intensity,
                author: mask_code(params.style),
            });
        }
    }
    strokes
}

/// Renders strokes of one style until the sampled coverage target (or the
/// stroke budget) is reached. Strokes are queued lightest-first so the
/// darkest land last, like later paint layers.
fn paint_until_covered(
    canvas: &mut Canvas,
    params: &StyleParams,
    rng: &mut ChaCha8Rng,
) -> Result<usize> {
    params.validate()?;
    let real = Realization::sample(params, rng);
    let target = sample_range(rng, params.coverage_range);
    let mut pending: Vec<Stroke> = Vec::new();
    let mut produced = 0usize;
    while produced < params.stroke_count.1 {
        let strokes = match params.style {
            StyleKind::HumanLike => vec![human_stroke(params, &real, canvas.size, rng)],
            StyleKind::RobotLike => robot_region(params, &real, canvas.size, rng),
        };
        for stroke in strokes {
            pending.push(stroke);
            produced += 1;
        }
        // Render the queued batch darkest-last, then check coverage.
        pending.sort_by(|a, b| b.intensity.partial_cmp(&a.intensity).expect("finite"));
        for stroke in &pending {
            canvas.render(stroke);
        }
        pending.clear();
        if canvas.coverage() >= target && produced >= params.stroke_count.0 {
            break;
        }
    }
    Ok(produced)
}

/// Generates a single-author canvas. Deterministic for a given
/// (style, size, seed) triple.
pub fn generate_pure(params: &StyleParams, size: usize, seed: u64) -> Result<SyntheticPainting> {
    params.validate()?;
    if size < DEFAULT_PATCH_SIZE {
        return Err(Error::Config(format!(
            "canvas size {size} is below the patch size {DEFAULT_PATCH_SIZE}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let band = BlankBand::pick(size, &mut rng);
    let mut canvas = Canvas::new(size, band);
    paint_until_covered(&mut canvas, params, &mut rng)?;
    let (pixels, mask) = canvas.finalize(params.noise_sigma, &mut rng);
    let author = match params.style {
        StyleKind::HumanLike => Author::Human,
        StyleKind::RobotLike => Author::Robot,
    };
    let image = GrayImage::new(size, size, pixels, format!("synthetic-{seed}"), author)?;
    Ok(SyntheticPainting {
        image,
        mask,
        seed,
        provenance: format!("{:?}", params.style),
        overlap_fraction: 0.0,
    })
}

/// Generates a collaborative canvas: strokes from both styles interleave
/// on a seeded schedule, the mask records the last author per pixel, and
/// `mix` is style A's share of the stroke count.
pub fn generate_hybrid(
    style_a: &StyleParams,
    style_b: &StyleParams,
    size: usize,
    seed: u64,
    mix: f64,
) -> Result<SyntheticPainting> {
    if !(mix > 0.0 && mix < 1.0) {
        return Err(Error::Usage(format!(
            "mix must lie strictly inside (0,1); use generate_pure for {mix}"
        )));
    }
    style_a.validate()?;
    style_b.validate()?;
    if size < DEFAULT_PATCH_SIZE {
        return Err(Error::Config(format!(
            "canvas size {size} is below the patch size {DEFAULT_PATCH_SIZE}"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let band = BlankBand::pick(size, &mut rng);
    let mut canvas = Canvas::new(size, band);
    // In collaborative sessions each agent works in smaller installments
    // between the other's contributions; halve the planner's work regions
    // (the local dash texture is unchanged) so authorship interleaves at
    // patch scale.
    let mut style_a = style_a.clone();
    let mut style_b = style_b.clone();
    for style in [&mut style_a, &mut style_b] {
        if style.style == StyleKind::RobotLike {
            style.region_span = (style.region_span.0 * 0.35, style.region_span.1 * 0.35);
        }
    }
    let (style_a, style_b) = (&style_a, &style_b);
    let real_a = Realization::sample(style_a, &mut rng);
    let real_b = Realization::sample(style_b, &mut rng);
    // Coverage target drawn from the intersection-ish of both styles.
    let target = sample_range(&mut rng, style_a.coverage_range);

    let budget = style_a.stroke_count.1.max(style_b.stroke_count.1);
    let mut produced = 0usize;
    // Error-diffusion turn schedule: author A takes exactly a `mix` share
    // of turns, tightly interleaved with B (real collaboration alternates
    // in short installments rather than long runs).
    let mut share_acc = 0.0f64;
    while produced < budget {
        share_acc += mix;
        let use_a = share_acc >= 1.0;
        if use_a {
            share_acc -= 1.0;
        }
        let (params, real) = if use_a {
            (style_a, &real_a)
        } else {
            (style_b, &real_b)
        };
        let strokes = match params.style {
            StyleKind::HumanLike => vec![human_stroke(params, real, size, &mut rng)],
            StyleKind::RobotLike => robot_region(params, real, size, &mut rng),
        };
        for stroke in strokes {
            canvas.render(&stroke);
            produced += 1;
        }
        if canvas.coverage() >= target && produced >= 4 {
            break;
        }
    }

    let overlap = canvas
        .touched_by
        .iter()
        .filter(|&&t| t & MASK_HUMAN != 0 && t & MASK_ROBOT != 0)
        .count() as f64
        / (size * size) as f64;

    let (pixels, mask) = canvas.finalize(style_a.noise_sigma.max(style_b.noise_sigma), &mut rng);
    let image = GrayImage::new(size, size, pixels, format!("synthetic-{seed}"), Author::Hybrid)?;
    Ok(SyntheticPainting {
        image,
        mask,
        seed,
        provenance: "Hybrid".into(),
        overlap_fraction: overlap,
    })
}

/// Auto-generated hybrid annotations: grid patches where both authors
/// painted a meaningful share, merged over connected grid cells into
/// bounding rectangles. Stands in for the manual mixed-region protocol.
pub fn annotate_hybrid_regions(
    painting_id: &str,
    mask: &[u8],
    size: usize,
    patch: usize,
    stride: usize,
) -> Result<Vec<AnnotationRegion>> {
    let coords = grid_coords(size, size, patch, stride)?;
    let min_share = 0.18 * (patch * patch) as f64;
    let mut mixed: Vec<(usize, usize)> = Vec::new();
    for &(x, y) in &coords {
        let mut human = 0usize;
        let mut robot = 0usize;
        for row in y..y + patch {
            for col in x..x + patch {
                match mask[row * size + col] {
                    MASK_HUMAN => human += 1,
                    MASK_ROBOT => robot += 1,
                    _ => {}
                }
            }
        }
        if human as f64 >= min_share && robot as f64 >= min_share {
            mixed.push((x, y));
        }
    }
    if mixed.is_empty() {
        return Ok(Vec::new());
    }
    Ok(mixed
        .into_iter()
        .map(|(x, y)| AnnotationRegion {
            painting_id: painting_id.to_string(),
            x0: x,
            y0: y,
            x1: x + patch,
            y1: y + patch,
        })
        .collect())
}

/// Everything `emit_corpus` wrote.
#[derive(Clone, Debug)]
pub struct CorpusOutput {
    pub manifest_path: PathBuf,
    pub annotations_path: PathBuf,
    pub entries: Vec<ManifestEntry>,
}

fn save_gray_png(path: &Path, pixels: &[f32], size: usize) -> Result<()> {
    let img = image::GrayImage::from_fn(size as u32, size as u32, |x, y| {
        let v = pixels[y as usize * size + x as usize];
        image::Luma([(v * 255.0).round().clamp(0.0, 255.0) as u8])
    });
    img.save(path).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        detail: format!("PNG encode failed: {e}"),
    })
}

fn save_mask_png(path: &Path, mask: &[u8], size: usize) -> Result<()> {
    let img = image::GrayImage::from_fn(size as u32, size as u32, |x, y| {
        image::Luma([mask[y as usize * size + x as usize]])
    });
    img.save(path).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        detail: format!("PNG encode failed: {e}"),
    })
}

/// Writes a full corpus: images, masks, the dataset manifest and hybrid
/// region annotations. Paintings generate in parallel from per-painting
/// seeds derived from `base_seed`.
pub fn emit_corpus(
    n_human: usize,
    n_robot: usize,
    n_hybrid: usize,
    size: usize,
    base_seed: u64,
    out_dir: &Path,
) -> Result<CorpusOutput> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    enum Job {
        Pure(StyleParams, String),
        Hybrid(String),
    }
    let mut jobs = Vec::new();
    for i in 1..=n_human {
        jobs.push(Job::Pure(StyleParams::human_like(), format!("human_painting_{i}")));
    }
    for i in 1..=n_robot {
        jobs.push(Job::Pure(StyleParams::robot_like(), format!("robot_painting_{i}")));
    }
    for i in 1..=n_hybrid {
        jobs.push(Job::Hybrid(format!("hybrid_painting_{i}")));
    }

    let outputs: Vec<Result<(ManifestEntry, Vec<AnnotationRegion>)>> = jobs
        .par_iter()
        .enumerate()
        .map(|(index, job)| {
            let id = match job {
                Job::Pure(_, id) | Job::Hybrid(id) => id.clone(),
            };
            let seed = derive_stream_seed(base_seed, &id, index as u64, 0);
            let mut painting = match job {
                Job::Pure(params, _) => generate_pure(params, size, seed)?,
                Job::Hybrid(_) => generate_hybrid(
                    &StyleParams::human_like(),
                    &StyleParams::robot_like(),
                    size,
                    seed,
                    0.5,
                )?,
            };
            painting.image.painting_id = id.clone();

            let image_name = format!("{id}.png");
            save_gray_png(&out_dir.join(&image_name), painting.image.pixels(), size)?;
            save_mask_png(&out_dir.join(format!("{id}_mask.png")), &painting.mask, size)?;

            let regions = match job {
                Job::Hybrid(_) => annotate_hybrid_regions(
                    &id,
                    &painting.mask,
                    size,
                    DEFAULT_PATCH_SIZE,
                    DEFAULT_STRIDE,
                )?,
                Job::Pure(..) => Vec::new(),
            };
            let entry = ManifestEntry {
                path: PathBuf::from(image_name),
                painting_id: id,
                author: painting.image.author,
            };
            Ok((entry, regions))
        })
        .collect();

    let mut entries = Vec::new();
    let mut annotations = Vec::new();
    for output in outputs {
        let (entry, regions) = output?;
        entries.push(entry);
        annotations.extend(regions);
    }

    let manifest_path = out_dir.join("manifest.jsonl");
    write_manifest(&manifest_path, &entries)?;

    let annotations_path = out_dir.join("annotations.jsonl");
    let mut lines = String::new();
    for region in &annotations {
        lines.push_str(&serde_json::to_string(region).expect("regions serialize"));
        lines.push('\n');
    }
    std::fs::write(&annotations_path, lines).map_err(|e| Error::io(&annotations_path, e))?;

    Ok(CorpusOutput {
        manifest_path,
        annotations_path,
        entries,
    })
}

/// Reads an annotations file written by `emit_corpus`.
pub fn read_annotations(path: &Path) -> Result<Vec<AnnotationRegion>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut regions = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let region: AnnotationRegion =
            serde_json::from_str(line).map_err(|e| Error::Format {
                path: path.to_path_buf(),
                detail: format!("annotation line {}: {e}", lineno + 1),
            })?;
        regions.push(region);
    }
    Ok(regions)
}
