//! Leave-one-painting-out cross-validation, patch metrics and
//! painting-level verdicts.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::pipeline::{
    derive_stream_seed, grid_coords, Author, ClassLabel, LoadedPainting, PatchRecord,
};
use crate::train::{predict_patches, train_fold, train_full, EpochLog, TrainConfig};

use rand::RngCore;

/// 3x3 confusion counts; rows are true classes, columns predictions, in
/// the fixed order (blank, human, robot).
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[u64; 3]; 3],
}

impl ConfusionMatrix {
    pub fn add(&mut self, truth: ClassLabel, pred: ClassLabel) {
        self.counts[truth.index()][pred.index()] += 1;
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) {
        for r in 0..3 {
            for c in 0..3 {
                self.counts[r][c] += other.counts[r][c];
            }
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..3).map(|i| self.counts[i][i]).sum()
    }

    pub fn accuracy(&self) -> f64 {
        self.trace() as f64 / self.total() as f64
    }

    pub fn support(&self, class: usize) -> u64 {
        self.counts[class].iter().sum()
    }

    pub fn predicted(&self, class: usize) -> u64 {
        (0..3).map(|r| self.counts[r][class]).sum()
    }

    /// Rows with zero support normalize to all-zero.
    pub fn row_normalized(&self) -> [[f64; 3]; 3] {
        let mut out = [[0.0; 3]; 3];
        for r in 0..3 {
            let support = self.support(r);
            if support > 0 {
                for c in 0..3 {
                    out[r][c] = self.counts[r][c] as f64 / support as f64;
                }
            }
        }
        out
    }

    pub fn per_class_recall(&self) -> [Option<f64>; 3] {
        let mut out = [None; 3];
        for class in 0..3 {
            let support = self.support(class);
            if support > 0 {
                out[class] = Some(self.counts[class][class] as f64 / support as f64);
            }
        }
        out
    }

    /// Precision is absent for classes that are never predicted.
    pub fn per_class_precision(&self) -> [Option<f64>; 3] {
        let mut out = [None; 3];
        for class in 0..3 {
            let predicted = self.predicted(class);
            if predicted > 0 {
                out[class] = Some(self.counts[class][class] as f64 / predicted as f64);
            }
        }
        out
    }

    /// Unweighted mean of the defined per-class recalls.
    pub fn balanced_accuracy(&self) -> f64 {
        let recalls: Vec<f64> = self.per_class_recall().iter().flatten().copied().collect();
        recalls.iter().sum::<f64>() / recalls.len() as f64
    }
}

/// Patch-level metrics for one prediction set.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MetricsBundle {
    pub accuracy: f64,
    pub per_class_recall: [Option<f64>; 3],
    pub per_class_precision: [Option<f64>; 3],
    pub balanced_accuracy: f64,
    pub confusion: ConfusionMatrix,
    pub confusion_row_normalized: [[f64; 3]; 3],
}

/// Tallies predictions against labels.
pub fn compute_metrics(preds: &[ClassLabel], labels: &[ClassLabel]) -> Result<MetricsBundle> {
    if preds.len() != labels.len() {
        return Err(Error::Usage(format!(
            "{} predictions against {} labels",
            preds.len(),
            labels.len()
        )));
    }
    if preds.is_empty() {
        return Err(Error::Usage("cannot compute metrics on an empty set".into()));
    }
    let mut confusion = ConfusionMatrix::default();
    for (&pred, &truth) in preds.iter().zip(labels) {
        confusion.add(truth, pred);
    }
    Ok(MetricsBundle {
        accuracy: confusion.accuracy(),
        per_class_recall: confusion.per_class_recall(),
        per_class_precision: confusion.per_class_precision(),
        balanced_accuracy: confusion.balanced_accuracy(),
        confusion_row_normalized: confusion.row_normalized(),
        confusion,
    })
}

/// Painting-level verdict.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Human,
    Robot,
    Indeterminate,
}

impl Verdict {
    pub fn matches(&self, author: Author) -> bool {
        matches!(
            (self, author),
            (Verdict::Human, Author::Human) | (Verdict::Robot, Author::Robot)
        )
    }

    pub fn name(&self) -> &'static str {
        match self {
            Verdict::Human => "human",
            Verdict::Robot => "robot",
            Verdict::Indeterminate => "indeterminate",
        }
    }
}

/// Most frequent non-blank patch prediction. Human/robot ties break toward
/// the larger summed posterior; with no posteriors available a tie (or an
/// all-blank list) is Indeterminate.
pub fn majority_vote(preds: &[ClassLabel], posteriors: Option<&[[f64; 3]]>) -> Result<Verdict> {
    if preds.is_empty() {
        return Err(Error::Usage("majority vote over an empty list".into()));
    }
    if let Some(p) = posteriors {
        if p.len() != preds.len() {
            return Err(Error::Usage(format!(
                "{} posteriors for {} predictions",
                p.len(),
                preds.len()
            )));
        }
    }
    let human = preds.iter().filter(|&&p| p == ClassLabel::Human).count();
    let robot = preds.iter().filter(|&&p| p == ClassLabel::Robot).count();
    if human == 0 && robot == 0 {
        return Ok(Verdict::Indeterminate);
    }
    if human != robot {
        return Ok(if human > robot {
            Verdict::Human
        } else {
            Verdict::Robot
        });
    }
    match posteriors {
        Some(posteriors) => {
            let sum_h: f64 = posteriors.iter().map(|p| p[ClassLabel::Human.index()]).sum();
            let sum_r: f64 = posteriors.iter().map(|p| p[ClassLabel::Robot.index()]).sum();
            if sum_h > sum_r {
                Ok(Verdict::Human)
            } else if sum_r > sum_h {
                Ok(Verdict::Robot)
            } else {
                Ok(Verdict::Indeterminate)
            }
        }
        None => Ok(Verdict::Indeterminate),
    }
}

/// One patch's posterior, retained for entropy analysis.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PatchPosterior {
    pub painting_id: String,
    pub author: Author,
    pub x: usize,
    pub y: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub true_label: Option<ClassLabel>,
    pub pred: ClassLabel,
    pub p_blank: f64,
    pub p_human: f64,
    pub p_robot: f64,
    /// LOPO fold that produced this posterior; absent for hybrid paintings
    /// scored by the final model.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fold: Option<usize>,
}

impl PatchPosterior {
    pub fn probs(&self) -> [f64; 3] {
        [self.p_blank, self.p_human, self.p_robot]
    }
}

/// Everything one fold produced.
#[derive(Clone, Debug)]
pub struct FoldOutcome {
    pub fold_id: usize,
    pub held_out_painting: String,
    pub held_out_author: Author,
    pub metrics: MetricsBundle,
    pub painting_vote: Verdict,
    pub posteriors: Vec<PatchPosterior>,
    pub checkpoint: Checkpoint,
    pub best_epoch: usize,
    pub best_val_accuracy: f64,
    pub final_val_accuracy: f64,
    pub log: Vec<EpochLog>,
}

/// Cross-fold aggregates, shared by the CNN and the baseline so both emit
/// the same report schema.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Aggregates {
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
    pub balanced_accuracy_pooled: f64,
    pub balanced_accuracy_fold_mean: f64,
    pub confusion_raw: ConfusionMatrix,
    pub confusion_row_normalized: [[f64; 3]; 3],
    pub majority_vote_accuracy: f64,
}

/// Folds are weighted equally; accuracy spread is the sample standard
/// deviation; the aggregated raw confusion is the elementwise sum of the
/// per-fold confusions.
pub fn aggregate(folds: &[(&MetricsBundle, Verdict, Author)]) -> Aggregates {
    let accuracies: Vec<f64> = folds.iter().map(|(m, _, _)| m.accuracy).collect();
    let mean_accuracy = accuracies.iter().sum::<f64>() / accuracies.len() as f64;
    let std_accuracy = sample_std(&accuracies, mean_accuracy);

    let mut confusion_raw = ConfusionMatrix::default();
    for (metrics, _, _) in folds {
        confusion_raw.merge(&metrics.confusion);
    }
    let balanced_accuracy_pooled = confusion_raw.balanced_accuracy();
    let balanced_accuracy_fold_mean = folds
        .iter()
        .map(|(m, _, _)| m.balanced_accuracy)
        .sum::<f64>()
        / folds.len() as f64;
    let votes_correct = folds
        .iter()
        .filter(|(_, vote, author)| vote.matches(*author))
        .count();

    Aggregates {
        mean_accuracy,
        std_accuracy,
        balanced_accuracy_pooled,
        balanced_accuracy_fold_mean,
        confusion_row_normalized: confusion_raw.row_normalized(),
        confusion_raw,
        majority_vote_accuracy: votes_correct as f64 / folds.len() as f64,
    }
}

/// Fold results plus their aggregates.
#[derive(Clone, Debug)]
pub struct LopoOutcome {
    pub folds: Vec<FoldOutcome>,
    pub aggregates: Aggregates,
}

fn pure_paintings(corpus: &[LoadedPainting]) -> Vec<&LoadedPainting> {
    corpus.iter().filter(|p| p.patches.is_some()).collect()
}

fn sample_std(values: &[f64], mean: f64) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    (ss / (values.len() - 1) as f64).sqrt()
}

/// Leave-one-painting-out cross-validation over the pure paintings of a
/// corpus. One fold per pure painting; hybrids never enter folds. Folds
/// run in parallel; results are aggregated in fold order.
pub fn run_lopo(
    corpus: &[LoadedPainting],
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
) -> Result<LopoOutcome> {
    let pure = pure_paintings(corpus);
    if pure.len() < 2 {
        return Err(Error::Usage(format!(
            "leave-one-painting-out needs at least 2 pure paintings, got {}",
            pure.len()
        )));
    }
    let has_human = pure.iter().any(|p| p.image.author == Author::Human);
    let has_robot = pure.iter().any(|p| p.image.author == Author::Robot);
    if !has_human || !has_robot {
        return Err(Error::Usage(
            "leave-one-painting-out needs at least one painting per author".into(),
        ));
    }

    let fold_results: Vec<Result<FoldOutcome>> = pure
        .par_iter()
        .enumerate()
        .map(|(fold_id, held)| run_single_fold(&pure, fold_id, held, model_cfg, train_cfg))
        .collect();

    let mut folds = Vec::with_capacity(fold_results.len());
    for result in fold_results {
        folds.push(result?);
    }
    aggregate_folds(folds)
}

fn run_single_fold(
    pure: &[&LoadedPainting],
    fold_id: usize,
    held: &LoadedPainting,
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
) -> Result<FoldOutcome> {
    // Folds are built by index: every other painting trains this fold.
    // Disjointness of painting ids is asserted downstream, not assumed, so
    // a corrupted manifest (one painting under two entries) fails hard.
    let train_patches: Vec<&PatchRecord> = pure
        .iter()
        .enumerate()
        .filter(|(idx, _)| *idx != fold_id)
        .flat_map(|(_, p)| p.patches.as_ref().expect("pure painting").iter())
        .collect();
    let held_patches: Vec<&PatchRecord> = held
        .patches
        .as_ref()
        .expect("pure painting")
        .iter()
        .collect();

    let mut fold_cfg = train_cfg.clone();
    fold_cfg.seed = derive_stream_seed(train_cfg.seed, "fold", fold_id as u64, 0);
    let training = train_fold(&train_patches, &held_patches, model_cfg, &fold_cfg, fold_id as u32)?;

    evaluate_fold(
        fold_id,
        held,
        &held_patches,
        training.checkpoint,
        training.final_val_accuracy,
        training.log,
        train_cfg.batch_size,
    )
}

/// Scores a fold's held-out patches with its selected checkpoint.
pub fn evaluate_fold(
    fold_id: usize,
    held: &LoadedPainting,
    held_patches: &[&PatchRecord],
    checkpoint: Checkpoint,
    final_val_accuracy: f64,
    log: Vec<EpochLog>,
    batch_size: usize,
) -> Result<FoldOutcome> {
    let net = checkpoint.to_network()?;
    let scored = predict_patches(&net, held_patches, batch_size)?;

    let preds: Vec<ClassLabel> = scored.iter().map(|(c, _)| *c).collect();
    let labels: Vec<ClassLabel> = held_patches.iter().map(|p| p.label).collect();
    let posteriors_raw: Vec<[f64; 3]> = scored.iter().map(|(_, p)| *p).collect();

    let metrics = compute_metrics(&preds, &labels)?;
    let painting_vote = majority_vote(&preds, Some(&posteriors_raw))?;

    let posteriors: Vec<PatchPosterior> = held_patches
        .iter()
        .zip(&scored)
        .map(|(patch, (pred, p))| PatchPosterior {
            painting_id: patch.painting_id.clone(),
            author: held.image.author,
            x: patch.x,
            y: patch.y,
            true_label: Some(patch.label),
            pred: *pred,
            p_blank: p[0],
            p_human: p[1],
            p_robot: p[2],
            fold: Some(fold_id),
        })
        .collect();

    Ok(FoldOutcome {
        fold_id,
        held_out_painting: held.image.painting_id.clone(),
        held_out_author: held.image.author,
        best_epoch: checkpoint.epoch,
        best_val_accuracy: checkpoint.val_accuracy,
        final_val_accuracy,
        metrics,
        painting_vote,
        posteriors,
        checkpoint,
        log,
    })
}

fn aggregate_folds(folds: Vec<FoldOutcome>) -> Result<LopoOutcome> {
    let items: Vec<(&MetricsBundle, Verdict, Author)> = folds
        .iter()
        .map(|f| (&f.metrics, f.painting_vote, f.held_out_author))
        .collect();
    let aggregates = aggregate(&items);
    Ok(LopoOutcome { folds, aggregates })
}

/// Trains one model on every pure painting and scores each hybrid
/// painting's grid patches with it. Returns the checkpoint and the hybrid
/// posteriors.
pub fn score_hybrids(
    corpus: &[LoadedPainting],
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    size: usize,
    stride: usize,
) -> Result<(Checkpoint, Vec<PatchPosterior>)> {
    let pure = pure_paintings(corpus);
    let train_patches: Vec<&PatchRecord> = pure
        .iter()
        .flat_map(|p| p.patches.as_ref().expect("pure painting").iter())
        .collect();
    let mut full_cfg = train_cfg.clone();
    full_cfg.seed = derive_stream_seed(train_cfg.seed, "hybrid-model", 0, 0);
    let (checkpoint, _log) = train_full(&train_patches, model_cfg, &full_cfg)?;
    let net = checkpoint.to_network()?;

    let mut posteriors = Vec::new();
    for painting in corpus.iter().filter(|p| p.patches.is_none()) {
        let image = &painting.image;
        let coords = grid_coords(image.width(), image.height(), size, stride)?;
        // Borrow the grid patches as ad-hoc records for batched prediction.
        let records: Vec<PatchRecord> = coords
            .iter()
            .map(|&(x, y)| {
                Ok(PatchRecord {
                    painting_id: image.painting_id.clone(),
                    x,
                    y,
                    size,
                    label: ClassLabel::Blank, // placeholder, never read
                    pixels: image.crop(x, y, size)?,
                })
            })
            .collect::<Result<_>>()?;
        let refs: Vec<&PatchRecord> = records.iter().collect();
        let scored = predict_patches(&net, &refs, train_cfg.batch_size)?;
        for (record, (pred, p)) in records.iter().zip(&scored) {
            posteriors.push(PatchPosterior {
                painting_id: record.painting_id.clone(),
                author: Author::Hybrid,
                x: record.x,
                y: record.y,
                true_label: None,
                pred: *pred,
                p_blank: p[0],
                p_human: p[1],
                p_robot: p[2],
                fold: None,
            });
        }
    }
    Ok((checkpoint, posteriors))
}

/// Result of the single-patch ablation.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SinglePatchReport {
    pub per_seed_accuracy: Vec<f64>,
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
    pub warnings: Vec<String>,
}

/// The constrained regime: per seed, one uniformly sampled non-blank patch
/// per painting trains the model and one tests it, under the same LOPO
/// split. Paintings without non-blank patches are skipped with a warning.
pub fn single_patch_regime(
    corpus: &[LoadedPainting],
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    n_seeds: usize,
) -> Result<SinglePatchReport> {
    if n_seeds == 0 {
        return Err(Error::Usage("single-patch regime needs n_seeds >= 1".into()));
    }
    let pure = pure_paintings(corpus);
    if pure.len() < 3 {
        // Two usable paintings leave a single training sample per fold,
        // which batch norm cannot normalize.
        return Err(Error::Usage(
            "single-patch regime needs at least 3 pure paintings".into(),
        ));
    }

    let mut warnings = Vec::new();
    let mut usable: Vec<(&LoadedPainting, Vec<&PatchRecord>)> = Vec::new();
    for painting in &pure {
        let non_blank: Vec<&PatchRecord> = painting
            .patches
            .as_ref()
            .expect("pure painting")
            .iter()
            .filter(|p| p.label != ClassLabel::Blank)
            .collect();
        if non_blank.is_empty() {
            warnings.push(format!(
                "painting '{}' skipped: no non-blank patches",
                painting.image.painting_id
            ));
        } else {
            usable.push((painting, non_blank));
        }
    }
    if usable.len() < 3 {
        return Err(Error::Usage(
            "single-patch regime needs at least 3 paintings with non-blank patches".into(),
        ));
    }

    // (seed, fold) jobs, evaluated in parallel, reduced in order.
    let jobs: Vec<(usize, usize)> = (0..n_seeds)
        .flat_map(|s| (0..usable.len()).map(move |f| (s, f)))
        .collect();
    let outcomes: Vec<Result<(usize, bool)>> = jobs
        .par_iter()
        .map(|&(seed_no, fold_id)| {
            let correct = single_patch_fold(&usable, seed_no, fold_id, model_cfg, train_cfg)?;
            Ok((seed_no, correct))
        })
        .collect();

    let mut per_seed_correct = vec![0usize; n_seeds];
    for outcome in outcomes {
        let (seed_no, correct) = outcome?;
        if correct {
            per_seed_correct[seed_no] += 1;
        }
    }
    let per_seed_accuracy: Vec<f64> = per_seed_correct
        .iter()
        .map(|&c| c as f64 / usable.len() as f64)
        .collect();
    let mean_accuracy = per_seed_accuracy.iter().sum::<f64>() / n_seeds as f64;
    let std_accuracy = sample_std(&per_seed_accuracy, mean_accuracy);

    Ok(SinglePatchReport {
        per_seed_accuracy,
        mean_accuracy,
        std_accuracy,
        warnings,
    })
}

fn single_patch_fold(
    usable: &[(&LoadedPainting, Vec<&PatchRecord>)],
    seed_no: usize,
    fold_id: usize,
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
) -> Result<bool> {
    // One train patch per painting and one test patch for the held-out
    // painting, all drawn from per-(seed, painting) streams.
    let sample = |painting_id: &str, purpose: &str, count: usize| -> usize {
        let stream = derive_stream_seed(
            derive_stream_seed(train_cfg.seed, "single-patch", seed_no as u64, 0),
            painting_id,
            purpose.len() as u64,
            purpose.as_bytes().iter().map(|&b| b as u64).sum(),
        );
        (ChaCha8Rng::seed_from_u64(stream).next_u64() % count as u64) as usize
    };

    let (held_painting, held_pool) = &usable[fold_id];
    let test_patch = held_pool[sample(&held_painting.image.painting_id, "test", held_pool.len())];

    let train_patches: Vec<&PatchRecord> = usable
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != fold_id)
        .map(|(_, (painting, pool))| {
            pool[sample(&painting.image.painting_id, "train", pool.len())]
        })
        .collect();

    // No checkpoint selection here: selecting on the lone test patch would
    // leak its outcome into model choice. The final-epoch model is scored.
    let mut fold_cfg = train_cfg.clone();
    fold_cfg.seed = derive_stream_seed(
        train_cfg.seed,
        "single-patch-fold",
        seed_no as u64,
        fold_id as u64,
    );
    if train_patches
        .iter()
        .any(|p| p.painting_id == test_patch.painting_id)
    {
        return Err(Error::Leakage(format!(
            "single-patch fold {fold_id} would train on the held-out painting '{}'",
            test_patch.painting_id
        )));
    }
    let (checkpoint, _log) = train_full(&train_patches, model_cfg, &fold_cfg)?;
    let net = checkpoint.to_network()?;
    let scored = predict_patches(&net, &[test_patch], fold_cfg.batch_size)?;
    Ok(scored[0].0 == test_patch.label)
}
