//! The classical baseline: Local Binary Pattern histograms per patch and a
//! from-scratch random forest, evaluated under the identical
//! leave-one-painting-out protocol.

mod forest;

pub use forest::{predict_forest, train_forest, ForestConfig, RandomForest};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{
    aggregate, compute_metrics, majority_vote, Aggregates, MetricsBundle, PatchPosterior, Verdict,
};
use crate::pipeline::{Author, ClassLabel, LoadedPainting};

/// 256-bin LBP histogram over a patch's interior pixels.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LbpHistogram {
    pub counts: Vec<u64>,
    pub normalized: Vec<f64>,
}

/// Neighbor offsets, clockwise from the top-left; bit i of a code is set
/// when neighbor i is >= the center pixel.
const NEIGHBORS: [(isize, isize); 8] = [
    (-1, -1), // top-left
    (0, -1),  // top
    (1, -1),  // top-right
    (1, 0),   // right
    (1, 1),   // bottom-right
    (0, 1),   // bottom
    (-1, 1),  // bottom-left
    (-1, 0),  // left
];

/// Computes the 8-neighbor (radius 1) LBP code histogram. Border pixels
/// are skipped; the histogram is L1-normalized.
pub fn lbp_features(pixels: &[f32], width: usize, height: usize) -> Result<LbpHistogram> {
    if width < 3 || height < 3 {
        return Err(Error::Usage(format!(
            "LBP needs a patch of at least 3x3, got {width}x{height}"
        )));
    }
    if pixels.len() != width * height {
        return Err(Error::Shape(format!(
            "{}x{} patch needs {} pixels, got {}",
            width,
            height,
            width * height,
            pixels.len()
        )));
    }
    let mut counts = vec![0u64; 256];
    for y in 1..height - 1 {
        for x in 1..width - 1 {
            let center = pixels[y * width + x];
            let mut code = 0usize;
            for (bit, (dx, dy)) in NEIGHBORS.iter().enumerate() {
                let nx = (x as isize + dx) as usize;
                let ny = (y as isize + dy) as usize;
                if pixels[ny * width + nx] >= center {
                    code |= 1 << bit;
                }
            }
            counts[code] += 1;
        }
    }
    let total: u64 = counts.iter().sum();
    let normalized: Vec<f64> = counts.iter().map(|&c| c as f64 / total as f64).collect();
    Ok(LbpHistogram { counts, normalized })
}

/// One baseline fold: same shape as the CNN fold results, minus training
/// artifacts.
#[derive(Clone, Debug)]
pub struct BaselineFold {
    pub fold_id: usize,
    pub held_out_painting: String,
    pub held_out_author: Author,
    pub metrics: MetricsBundle,
    pub painting_vote: Verdict,
    pub posteriors: Vec<PatchPosterior>,
}

#[derive(Clone, Debug)]
pub struct BaselineOutcome {
    pub folds: Vec<BaselineFold>,
    pub aggregates: Aggregates,
}

/// LBP + random forest under leave-one-painting-out cross-validation.
/// Tree-vote fractions stand in for posteriors so downstream consumers
/// (votes, entropy) work unchanged.
pub fn run_lopo_baseline(
    corpus: &[LoadedPainting],
    config: &ForestConfig,
) -> Result<BaselineOutcome> {
    let pure: Vec<&LoadedPainting> = corpus.iter().filter(|p| p.patches.is_some()).collect();
    if pure.len() < 2 {
        return Err(Error::Usage(format!(
            "leave-one-painting-out needs at least 2 pure paintings, got {}",
            pure.len()
        )));
    }

    // One histogram per patch, computed once and shared across folds.
    let features: Vec<Vec<(ClassLabel, Vec<f64>)>> = pure
        .par_iter()
        .map(|painting| {
            painting
                .patches
                .as_ref()
                .expect("pure painting")
                .iter()
                .map(|patch| {
                    let hist = lbp_features(&patch.pixels, patch.size, patch.size)?;
                    Ok((patch.label, hist.normalized))
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;

    let fold_results: Vec<Result<BaselineFold>> = (0..pure.len())
        .into_par_iter()
        .map(|fold_id| run_baseline_fold(&pure, &features, fold_id, config))
        .collect();
    let mut folds = Vec::with_capacity(fold_results.len());
    for fold in fold_results {
        folds.push(fold?);
    }

    let items: Vec<(&MetricsBundle, Verdict, Author)> = folds
        .iter()
        .map(|f| (&f.metrics, f.painting_vote, f.held_out_author))
        .collect();
    let aggregates = aggregate(&items);
    Ok(BaselineOutcome { folds, aggregates })
}

fn run_baseline_fold(
    pure: &[&LoadedPainting],
    features: &[Vec<(ClassLabel, Vec<f64>)>],
    fold_id: usize,
    config: &ForestConfig,
) -> Result<BaselineFold> {
    let mut train_x: Vec<&[f64]> = Vec::new();
    let mut train_y: Vec<ClassLabel> = Vec::new();
    for (idx, per_painting) in features.iter().enumerate() {
        if idx == fold_id {
            continue;
        }
        for (label, hist) in per_painting {
            train_x.push(hist);
            train_y.push(*label);
        }
    }
    let mut fold_config = config.clone();
    fold_config.seed = crate::pipeline::derive_stream_seed(config.seed, "fold", fold_id as u64, 0);
    let forest = train_forest(&train_x, &train_y, &fold_config)?;

    let held = pure[fold_id];
    let held_patches = held.patches.as_ref().expect("pure painting");
    let mut preds = Vec::new();
    let mut posterior_rows = Vec::new();
    let mut posteriors = Vec::new();
    for ((label, hist), patch) in features[fold_id].iter().zip(held_patches) {
        let (pred, freq) = predict_forest(&forest, hist)?;
        preds.push(pred);
        posterior_rows.push(freq);
        posteriors.push(PatchPosterior {
            painting_id: held.image.painting_id.clone(),
            author: held.image.author,
            x: patch.x,
            y: patch.y,
            true_label: Some(*label),
            pred,
            p_blank: freq[0],
            p_human: freq[1],
            p_robot: freq[2],
            fold: Some(fold_id),
        });
    }
    let labels: Vec<ClassLabel> = held_patches.iter().map(|p| p.label).collect();
    let metrics = compute_metrics(&preds, &labels)?;
    let painting_vote = majority_vote(&preds, Some(&posterior_rows))?;

    Ok(BaselineFold {
        fold_id,
        held_out_painting: held.image.painting_id.clone(),
        held_out_author: held.image.author,
        metrics,
        painting_vote,
        posteriors,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_patch_codes_all_ones() {
        let pixels = vec![0.5f32; 25];
        let hist = lbp_features(&pixels, 5, 5).unwrap();
        // 9 interior pixels, every neighbor >= center -> code 255.
        assert_eq!(hist.counts[255], 9);
        assert_eq!(hist.counts.iter().sum::<u64>(), 9);
        assert!((hist.normalized[255] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn strict_center_maximum_codes_zero() {
        let mut pixels = vec![0.1f32; 9];
        pixels[4] = 0.9; // center strictly greater than all neighbors
        let hist = lbp_features(&pixels, 3, 3).unwrap();
        assert_eq!(hist.counts[0], 1);
    }

    #[test]
    fn single_high_neighbor_sets_its_bit() {
        // [[0,0,0],[0,5,9],[0,0,0]] scaled into [0,1]: only the right
        // neighbor (bit 3 in clockwise-from-top-left order) fires.
        let pixels = vec![0.0, 0.0, 0.0, 0.0, 0.5, 0.9, 0.0, 0.0, 0.0];
        let hist = lbp_features(&pixels, 3, 3).unwrap();
        assert_eq!(hist.counts[1 << 3], 1);
        assert_eq!(hist.counts.iter().sum::<u64>(), 1);
    }

    #[test]
    fn interior_count_matches_dimensions() {
        let pixels: Vec<f32> = (0..7 * 9).map(|i| (i % 13) as f32 / 12.0).collect();
        let hist = lbp_features(&pixels, 9, 7).unwrap();
        assert_eq!(hist.counts.iter().sum::<u64>(), (9 - 2) * (7 - 2));
    }

    #[test]
    fn histogram_invariant_to_constant_shift() {
        // Comparison-based codes ignore adding a constant to every pixel.
        let base: Vec<f32> = (0..36).map(|i| (i % 7) as f32 / 20.0).collect();
        let shifted: Vec<f32> = base.iter().map(|v| v + 0.3).collect();
        let a = lbp_features(&base, 6, 6).unwrap();
        let b = lbp_features(&shifted, 6, 6).unwrap();
        assert_eq!(a.counts, b.counts);
    }

    #[test]
    fn undersized_patch_is_usage_error() {
        let pixels = vec![0.0f32; 6];
        assert!(matches!(
            lbp_features(&pixels, 3, 2),
            Err(Error::Usage(_))
        ));
    }
}
