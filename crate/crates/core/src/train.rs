//! Per-fold training: class-weight computation, shuffled mini-batch SGD
//! with augmentation, epoch-wise validation on the held-out painting and
//! best-checkpoint selection.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::model::{build, softmax3, ModelConfig, Network};
use crate::pipeline::{
    augment, derive_stream_seed, resize_bilinear, AugmentationConfig, ClassLabel, PatchRecord,
};
use crate::tensor::{OptimizerState, Tensor};

/// Class-weight scaling factors: blank 0.01, human 1.0, robot 0.75.
pub const DEFAULT_ALPHAS: [f64; 3] = [0.01, 1.0, 0.75];

/// Per-class loss weights `w_c = alpha_c * N_total / N_c`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ClassWeights {
    pub weights: [f64; 3],
    pub alphas: [f64; 3],
    pub counts: [usize; 3],
}

/// Computes the weight formula over a training split. Every class must be
/// present; a zero count makes a fold unusable.
pub fn compute_class_weights(counts: [usize; 3], alphas: [f64; 3]) -> Result<ClassWeights> {
    if alphas.iter().any(|a| !(*a > 0.0)) {
        return Err(Error::Config(format!(
            "class-weight alphas must be strictly positive, got {alphas:?}"
        )));
    }
    if let Some(class) = counts.iter().position(|&c| c == 0) {
        return Err(Error::Config(format!(
            "fold unusable: class {} has zero training patches",
            ClassLabel::from_index(class)?.name()
        )));
    }
    let total: usize = counts.iter().sum();
    let mut weights = [0.0; 3];
    for i in 0..3 {
        weights[i] = alphas[i] * (total as f64 / counts[i] as f64);
    }
    Ok(ClassWeights {
        weights,
        alphas,
        counts,
    })
}

/// Weights for splits that may be missing classes entirely (the
/// single-patch regime never sees blanks). Present classes follow the
/// weight formula restricted to present counts; absent classes fall back
/// to their alpha, which no sample can reference.
pub fn effective_class_weights(counts: [usize; 3], alphas: [f64; 3]) -> Result<ClassWeights> {
    if counts.iter().all(|&c| c > 0) {
        return compute_class_weights(counts, alphas);
    }
    if alphas.iter().any(|a| !(*a > 0.0)) {
        return Err(Error::Config(format!(
            "class-weight alphas must be strictly positive, got {alphas:?}"
        )));
    }
    let total: usize = counts.iter().sum();
    if total == 0 {
        return Err(Error::Usage("empty training split".into()));
    }
    let mut weights = [0.0; 3];
    for i in 0..3 {
        weights[i] = if counts[i] > 0 {
            alphas[i] * (total as f64 / counts[i] as f64)
        } else {
            alphas[i]
        };
    }
    Ok(ClassWeights {
        weights,
        alphas,
        counts,
    })
}

/// Training hyperparameters. Defaults follow the full-scale regime:
/// SGD momentum 0.9 at learning rate 1e-4, batch 64, 100 epochs.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub augmentation: AugmentationConfig,
    /// Epochs between held-out evaluations.
    pub eval_every: usize,
    pub alphas: [f64; 3],
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-4,
            momentum: 0.9,
            batch_size: 64,
            epochs: 100,
            seed: 0,
            augmentation: AugmentationConfig::default(),
            eval_every: 1,
            alphas: DEFAULT_ALPHAS,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) {
            return Err(Error::Config(format!("lr must be > 0, got {}", self.lr)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!(
                "momentum must be in [0,1), got {}",
                self.momentum
            )));
        }
        if self.batch_size == 0 || self.epochs == 0 || self.eval_every == 0 {
            return Err(Error::Config(
                "batch_size, epochs and eval_every must be >= 1".into(),
            ));
        }
        self.augmentation.validate()
    }
}

/// One line of the per-fold training log.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EpochLog {
    pub fold: u32,
    pub epoch: usize,
    pub train_loss: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub val_accuracy: Option<f64>,
}

/// Outcome of one fold: the selected checkpoint, the final-epoch accuracy
/// (surfaced alongside the best epoch) and the epoch log.
#[derive(Clone, Debug)]
pub struct FoldTraining {
    pub checkpoint: Checkpoint,
    pub final_val_accuracy: f64,
    pub log: Vec<EpochLog>,
}

/// Seeded permutation of `0..n_patches`, chunked into batches. The final
/// short batch is kept.
pub fn epoch_schedule(
    n_patches: usize,
    batch_size: usize,
    seed: u64,
    epoch: usize,
) -> Vec<Vec<usize>> {
    assert!(n_patches >= 1 && batch_size >= 1);
    let mut order: Vec<usize> = (0..n_patches).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_stream_seed(seed, "epoch", epoch as u64, 0));
    // Fisher-Yates.
    for i in (1..n_patches).rev() {
        let j = (rng.next_u64() % (i as u64 + 1)) as usize;
        order.swap(i, j);
    }
    order.chunks(batch_size).map(|c| c.to_vec()).collect()
}

use rand::RngCore;

/// Assembles a `[N,1,S,S]` input tensor from patches, augmenting each one
/// with a stream derived from (seed, epoch, painting, position) and
/// resizing to the network's input size.
fn assemble_batch(
    patches: &[&PatchRecord],
    indices: &[usize],
    input_size: usize,
    aug: Option<(&AugmentationConfig, u64, usize)>,
) -> Result<(Tensor, Vec<usize>)> {
    let n = indices.len();
    let mut data = Vec::with_capacity(n * input_size * input_size);
    let mut targets = Vec::with_capacity(n);
    for &idx in indices {
        let patch = patches[idx];
        let pixels = match aug {
            Some((config, seed, epoch)) => {
                let stream = derive_stream_seed(
                    derive_stream_seed(seed, "augment", epoch as u64, 0),
                    &patch.painting_id,
                    patch.x as u64,
                    patch.y as u64,
                );
                let mut rng = ChaCha8Rng::seed_from_u64(stream);
                augment(&patch.pixels, patch.size, config, &mut rng)?
            }
            None => patch.pixels.clone(),
        };
        let resized = if patch.size == input_size {
            pixels
        } else {
            resize_bilinear(&pixels, patch.size, patch.size, input_size, input_size)
        };
        data.extend(resized.iter().map(|&v| v as f64));
        targets.push(patch.label.index());
    }
    Ok((
        Tensor::new(vec![n, 1, input_size, input_size], data)?,
        targets,
    ))
}

/// Eval-mode class predictions and posteriors for a patch list.
pub fn predict_patches(
    net: &Network,
    patches: &[&PatchRecord],
    batch_size: usize,
) -> Result<Vec<(ClassLabel, [f64; 3])>> {
    let input_size = net.config().input_size;
    let mut out = Vec::with_capacity(patches.len());
    for chunk in (0..patches.len()).collect::<Vec<_>>().chunks(batch_size) {
        let (batch, _) = assemble_batch(patches, chunk, input_size, None)?;
        let logits = net.predict(&batch)?;
        for row in logits.chunks(3) {
            let p = softmax3(row);
            let pred = argmax3(&p);
            out.push((ClassLabel::from_index(pred)?, p));
        }
    }
    Ok(out)
}

pub fn argmax3(p: &[f64; 3]) -> usize {
    let mut best = 0;
    for i in 1..3 {
        if p[i] > p[best] {
            best = i;
        }
    }
    best
}

fn accuracy_against(preds: &[(ClassLabel, [f64; 3])], patches: &[&PatchRecord]) -> f64 {
    let correct = preds
        .iter()
        .zip(patches)
        .filter(|((pred, _), patch)| *pred == patch.label)
        .count();
    correct as f64 / patches.len() as f64
}

/// Trains on `train_patches` and selects the checkpoint with the highest
/// accuracy on the held-out painting's raw (unaugmented) patches, earliest
/// epoch on ties. The two splits must not share a painting.
pub fn train_fold(
    train_patches: &[&PatchRecord],
    heldout_patches: &[&PatchRecord],
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    fold_id: u32,
) -> Result<FoldTraining> {
    if heldout_patches.is_empty() {
        return Err(Error::Usage("held-out set is empty".into()));
    }
    if train_patches.is_empty() {
        return Err(Error::Usage("training set is empty".into()));
    }
    train_cfg.validate()?;
    model_cfg.validate()?;

    // Leakage check: asserted, not assumed.
    let train_ids: std::collections::HashSet<&str> = train_patches
        .iter()
        .map(|p| p.painting_id.as_str())
        .collect();
    if let Some(leak) = heldout_patches
        .iter()
        .find(|p| train_ids.contains(p.painting_id.as_str()))
    {
        return Err(Error::Leakage(format!(
            "painting '{}' appears in both splits of fold {fold_id}",
            leak.painting_id
        )));
    }

    let mut counts = [0usize; 3];
    for patch in train_patches {
        counts[patch.label.index()] += 1;
    }
    let class_weights = effective_class_weights(counts, train_cfg.alphas)?;

    let mut net = build(model_cfg, train_cfg.seed)?;
    let mut optimizer = OptimizerState::new(net.params(), train_cfg.lr, train_cfg.momentum)?;
    let mut dropout_rng =
        ChaCha8Rng::seed_from_u64(derive_stream_seed(train_cfg.seed, "dropout", 0, 0));

    let mut best: Option<Checkpoint> = None;
    let mut final_val = 0.0;
    let mut log = Vec::new();

    for epoch in 1..=train_cfg.epochs {
        let mut batches = epoch_schedule(
            train_patches.len(),
            train_cfg.batch_size,
            train_cfg.seed,
            epoch,
        );
        // Batch norm cannot normalize a single sample; fold a trailing
        // singleton into the previous batch.
        if batches.len() >= 2 && batches.last().map(|b| b.len()) == Some(1) {
            let last = batches.pop().unwrap();
            batches.last_mut().unwrap().extend(last);
        }

        let mut loss_sum = 0.0;
        for (batch_no, indices) in batches.iter().enumerate() {
            let (batch, targets) = assemble_batch(
                train_patches,
                indices,
                model_cfg.input_size,
                Some((&train_cfg.augmentation, train_cfg.seed, epoch)),
            )?;
            let mut pass = net.forward_train(&batch, &mut dropout_rng)?;
            let loss = pass
                .tape
                .weighted_cross_entropy(pass.logits, &targets, &class_weights.weights)
                .map_err(|e| divergence(e, epoch, batch_no))?;
            let loss_value = pass.tape.value(loss).data()[0];
            pass.tape
                .backward(loss)
                .map_err(|e| divergence(e, epoch, batch_no))?;

            let grads: Vec<&[f64]> = pass
                .param_vars
                .iter()
                .map(|v| pass.tape.grad(*v).expect("train-mode params carry grads"))
                .collect();
            optimizer.step(net.params_mut(), &grads)?;
            loss_sum += loss_value;
        }
        let train_loss = loss_sum / batches.len() as f64;

        let evaluate_now = epoch % train_cfg.eval_every == 0 || epoch == train_cfg.epochs;
        let mut val_accuracy = None;
        if evaluate_now {
            let preds = predict_patches(&net, heldout_patches, train_cfg.batch_size)?;
            let acc = accuracy_against(&preds, heldout_patches);
            val_accuracy = Some(acc);
            final_val = acc;
            let improved = match &best {
                Some(ckpt) => acc > ckpt.val_accuracy,
                None => true,
            };
            if improved {
                best = Some(Checkpoint::from_network(&net, epoch, acc, fold_id));
            }
        }
        log.push(EpochLog {
            fold: fold_id,
            epoch,
            train_loss,
            val_accuracy,
        });
    }

    Ok(FoldTraining {
        checkpoint: best.expect("final epoch always evaluates"),
        final_val_accuracy: final_val,
        log,
    })
}

/// Trains on all provided patches for the full epoch budget with no
/// held-out split, returning the final-epoch snapshot. Used for the model
/// that scores hybrid paintings.
pub fn train_full(
    train_patches: &[&PatchRecord],
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
) -> Result<(Checkpoint, Vec<EpochLog>)> {
    if train_patches.is_empty() {
        return Err(Error::Usage("training set is empty".into()));
    }
    train_cfg.validate()?;
    model_cfg.validate()?;

    let mut counts = [0usize; 3];
    for patch in train_patches {
        counts[patch.label.index()] += 1;
    }
    let class_weights = effective_class_weights(counts, train_cfg.alphas)?;

    let mut net = build(model_cfg, train_cfg.seed)?;
    let mut optimizer = OptimizerState::new(net.params(), train_cfg.lr, train_cfg.momentum)?;
    let mut dropout_rng =
        ChaCha8Rng::seed_from_u64(derive_stream_seed(train_cfg.seed, "dropout", 0, 0));
    let mut log = Vec::new();

    for epoch in 1..=train_cfg.epochs {
        let mut batches = epoch_schedule(
            train_patches.len(),
            train_cfg.batch_size,
            train_cfg.seed,
            epoch,
        );
        if batches.len() >= 2 && batches.last().map(|b| b.len()) == Some(1) {
            let last = batches.pop().unwrap();
            batches.last_mut().unwrap().extend(last);
        }
        let mut loss_sum = 0.0;
        for (batch_no, indices) in batches.iter().enumerate() {
            let (batch, targets) = assemble_batch(
                train_patches,
                indices,
                model_cfg.input_size,
                Some((&train_cfg.augmentation, train_cfg.seed, epoch)),
            )?;
            let mut pass = net.forward_train(&batch, &mut dropout_rng)?;
            let loss = pass
                .tape
                .weighted_cross_entropy(pass.logits, &targets, &class_weights.weights)
                .map_err(|e| divergence(e, epoch, batch_no))?;
            loss_sum += pass.tape.value(loss).data()[0];
            pass.tape
                .backward(loss)
                .map_err(|e| divergence(e, epoch, batch_no))?;
            let grads: Vec<&[f64]> = pass
                .param_vars
                .iter()
                .map(|v| pass.tape.grad(*v).expect("train-mode params carry grads"))
                .collect();
            optimizer.step(net.params_mut(), &grads)?;
        }
        log.push(EpochLog {
            fold: u32::MAX,
            epoch,
            train_loss: loss_sum / batches.len() as f64,
            val_accuracy: None,
        });
    }
    Ok((Checkpoint::from_network(&net, train_cfg.epochs, f64::NAN, u32::MAX), log))
}

fn divergence(err: Error, epoch: usize, batch: usize) -> Error {
    match err {
        Error::Numeric(detail) => Error::Divergence {
            epoch,
            batch,
            detail,
        },
        other => other,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn class_weights_match_reported_patch_counts() {
        // Counts printed for the full corpus: blank 17,553, human 60,217,
        // robot 59,207 with alphas (0.01, 1.0, 0.75).
        let weights = compute_class_weights([17_553, 60_217, 59_207], DEFAULT_ALPHAS).unwrap();
        assert!((weights.weights[0] - 0.07803).abs() < 1e-4);
        assert!((weights.weights[1] - 2.2747).abs() < 1e-3);
        assert!((weights.weights[2] - 1.7352).abs() < 1e-3);
    }

    #[test]
    fn class_weights_equal_counts_unit_alphas() {
        let weights = compute_class_weights([10, 10, 10], [1.0, 1.0, 1.0]).unwrap();
        for w in weights.weights {
            assert!((w - 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn class_weights_unit_counts() {
        let weights = compute_class_weights([1, 1, 1], DEFAULT_ALPHAS).unwrap();
        assert!((weights.weights[0] - 0.03).abs() < 1e-12);
        assert!((weights.weights[1] - 3.0).abs() < 1e-12);
        assert!((weights.weights[2] - 2.25).abs() < 1e-12);
    }

    #[test]
    fn class_weights_reject_zero_count_and_zero_alpha() {
        assert!(compute_class_weights([0, 5, 5], DEFAULT_ALPHAS).is_err());
        assert!(compute_class_weights([5, 5, 5], [0.0, 1.0, 0.75]).is_err());
    }

    #[test]
    fn effective_weights_tolerate_absent_classes() {
        let weights = effective_class_weights([0, 4, 4], DEFAULT_ALPHAS).unwrap();
        assert!((weights.weights[1] - 2.0).abs() < 1e-12);
        assert!((weights.weights[2] - 0.75 * 2.0).abs() < 1e-12);
    }

    #[test]
    fn schedule_keeps_short_final_batch() {
        let batches = epoch_schedule(5, 2, 0, 1);
        let sizes: Vec<usize> = batches.iter().map(|b| b.len()).collect();
        assert_eq!(sizes, vec![2, 2, 1]);
    }

    #[test]
    fn schedule_is_deterministic_and_a_bijection() {
        let a = epoch_schedule(10, 3, 7, 4);
        let b = epoch_schedule(10, 3, 7, 4);
        assert_eq!(a, b);
        let c = epoch_schedule(10, 3, 7, 5);
        assert_ne!(a, c, "different epochs shuffle differently");

        let mut flat: Vec<usize> = a.into_iter().flatten().collect();
        flat.sort_unstable();
        assert_eq!(flat, (0..10).collect::<Vec<_>>());
    }

    fn synthetic_patch(id: &str, x: usize, label: ClassLabel, level: f32) -> PatchRecord {
        // Tiny patches with class-dependent texture: horizontal vs vertical
        // stripes, plus white for blanks.
        let size = 8;
        let mut pixels = vec![1.0f32; size * size];
        match label {
            ClassLabel::Blank => {}
            ClassLabel::Human => {
                for y in 0..size {
                    if y % 2 == 0 {
                        for px in &mut pixels[y * size..(y + 1) * size] {
                            *px = level;
                        }
                    }
                }
            }
            ClassLabel::Robot => {
                for y in 0..size {
                    for x in (0..size).step_by(2) {
                        pixels[y * size + x] = level;
                    }
                }
            }
        }
        PatchRecord {
            painting_id: id.to_string(),
            x,
            y: 0,
            size,
            label,
            pixels,
        }
    }

    fn tiny_model() -> ModelConfig {
        ModelConfig {
            block_channels: vec![4],
            convs_per_block: 1,
            input_size: 8,
            dropout_p: 0.1,
            fc_dims: vec![],
            num_classes: 3,
        }
    }

    fn quick_train_cfg(epochs: usize) -> TrainConfig {
        TrainConfig {
            lr: 0.05,
            momentum: 0.9,
            batch_size: 16,
            epochs,
            seed: 4,
            augmentation: AugmentationConfig::disabled(),
            eval_every: 1,
            alphas: DEFAULT_ALPHAS,
        }
    }

    fn two_painting_split() -> (Vec<PatchRecord>, Vec<PatchRecord>) {
        let mut train = Vec::new();
        for i in 0..12 {
            let label = match i % 3 {
                0 => ClassLabel::Blank,
                1 => ClassLabel::Human,
                _ => ClassLabel::Robot,
            };
            train.push(synthetic_patch("train_a", i, label, 0.2 + 0.02 * i as f32));
        }
        let heldout: Vec<PatchRecord> = (0..6)
            .map(|i| {
                let label = match i % 3 {
                    0 => ClassLabel::Blank,
                    1 => ClassLabel::Human,
                    _ => ClassLabel::Robot,
                };
                synthetic_patch("held_b", i, label, 0.25)
            })
            .collect();
        (train, heldout)
    }

    #[test]
    fn train_fold_rejects_empty_heldout() {
        let (train, _) = two_painting_split();
        let refs: Vec<&PatchRecord> = train.iter().collect();
        let err = train_fold(&refs, &[], &tiny_model(), &quick_train_cfg(1), 0);
        assert!(matches!(err, Err(Error::Usage(_))));
    }

    #[test]
    fn train_fold_detects_leakage() {
        let (train, _) = two_painting_split();
        let refs: Vec<&PatchRecord> = train.iter().collect();
        let err = train_fold(&refs, &refs, &tiny_model(), &quick_train_cfg(1), 0);
        assert!(matches!(err, Err(Error::Leakage(_))));
    }

    #[test]
    fn train_fold_selects_max_val_accuracy_earliest_on_ties() {
        let (train, heldout) = two_painting_split();
        let train_refs: Vec<&PatchRecord> = train.iter().collect();
        let held_refs: Vec<&PatchRecord> = heldout.iter().collect();
        let outcome = train_fold(
            &train_refs,
            &held_refs,
            &tiny_model(),
            &quick_train_cfg(6),
            0,
        )
        .unwrap();

        let evaluated: Vec<(usize, f64)> = outcome
            .log
            .iter()
            .filter_map(|l| l.val_accuracy.map(|a| (l.epoch, a)))
            .collect();
        let max = evaluated.iter().map(|(_, a)| *a).fold(0.0, f64::max);
        assert!((outcome.checkpoint.val_accuracy - max).abs() < 1e-12);
        // Earliest epoch achieving the max.
        let earliest = evaluated
            .iter()
            .find(|(_, a)| (*a - max).abs() < 1e-12)
            .unwrap()
            .0;
        assert_eq!(outcome.checkpoint.epoch, earliest);
    }

    #[test]
    fn scaled_alphas_leave_loss_gradient_direction_unchanged() {
        // With the weighted-mean reduction, scaling every alpha by a
        // constant cancels exactly: gradients are proportional (ratio 1).
        use crate::tensor::Tape;
        let logits = vec![0.4, -0.2, 0.1, 0.9, 0.05, -0.3];
        let targets = [1usize, 2];

        let grad_for = |alphas: [f64; 3]| -> Vec<f64> {
            let weights = compute_class_weights([4, 5, 6], alphas).unwrap().weights;
            let mut tape = Tape::new();
            let z = tape.leaf(Tensor::new(vec![2, 3], logits.clone()).unwrap(), true);
            let loss = tape.weighted_cross_entropy(z, &targets, &weights).unwrap();
            tape.backward(loss).unwrap();
            tape.grad(z).unwrap().to_vec()
        };

        let base = grad_for(DEFAULT_ALPHAS);
        let scaled = grad_for([0.05, 5.0, 3.75]);
        for (a, b) in base.iter().zip(&scaled) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }
}
