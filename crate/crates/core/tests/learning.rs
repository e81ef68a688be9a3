//! Learning-behavior tests on the synthetic corpus: capacity, style
//! separability and corpus sanity guards.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use brushwork::model::{build, ModelConfig};
use brushwork::pipeline::{
    extract_patches, label_patch, ClassLabel, PatchRecord, WHITE_PIXEL_THRESHOLD,
};
use brushwork::synth::{generate_pure, StyleParams, MASK_BLANK, MASK_HUMAN, MASK_ROBOT};
use brushwork::tensor::{OptimizerState, Tensor};
use brushwork::train::{effective_class_weights, predict_patches};

fn non_blank_patches(style: &StyleParams, seed: u64, count: usize) -> Vec<PatchRecord> {
    let painting = generate_pure(style, 900, seed).unwrap();
    extract_patches(&painting.image, 300, 150)
        .unwrap()
        .into_iter()
        .filter(|p| p.label != ClassLabel::Blank)
        .take(count)
        .collect()
}

/// The tiny config can drive training accuracy to 100% on a small
/// separable patch set well within 200 epochs.
#[test]
fn tiny_network_overfits_sixty_separable_patches() {
    let mut patches = non_blank_patches(&StyleParams::human_like(), 60, 30);
    patches.extend(non_blank_patches(&StyleParams::robot_like(), 61, 30));
    assert_eq!(patches.len(), 60);
    let refs: Vec<&PatchRecord> = patches.iter().collect();

    let config = ModelConfig::tiny();
    let mut net = build(&config, 3).unwrap();
    let mut optimizer = OptimizerState::new(net.params(), 0.05, 0.9).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);

    let mut counts = [0usize; 3];
    for patch in &refs {
        counts[patch.label.index()] += 1;
    }
    let weights = effective_class_weights(counts, [1.0, 1.0, 1.0]).unwrap();

    // One full batch per epoch, no augmentation: pure capacity check.
    let input = config.input_size;
    let mut batch_data = Vec::with_capacity(refs.len() * input * input);
    let mut targets = Vec::new();
    for patch in &refs {
        let resized =
            brushwork::pipeline::resize_bilinear(&patch.pixels, patch.size, patch.size, input, input);
        batch_data.extend(resized.iter().map(|&v| v as f64));
        targets.push(patch.label.index());
    }
    let batch = Tensor::new(vec![refs.len(), 1, input, input], batch_data).unwrap();

    let mut reached = None;
    for epoch in 1..=200 {
        let mut pass = net.forward_train(&batch, &mut rng).unwrap();
        let loss = pass
            .tape
            .weighted_cross_entropy(pass.logits, &targets, &weights.weights)
            .unwrap();
        pass.tape.backward(loss).unwrap();
        let grads: Vec<&[f64]> = pass
            .param_vars
            .iter()
            .map(|v| pass.tape.grad(*v).unwrap())
            .collect();
        optimizer.step(net.params_mut(), &grads).unwrap();

        if epoch % 5 == 0 || epoch == 200 {
            let scored = predict_patches(&net, &refs, 64).unwrap();
            let correct = scored
                .iter()
                .zip(&refs)
                .filter(|((pred, _), patch)| *pred == patch.label)
                .count();
            if correct == refs.len() {
                reached = Some(epoch);
                break;
            }
        }
    }
    let epoch = reached.expect("training accuracy must reach 100% within 200 epochs");
    println!("reached 100% training accuracy at epoch {epoch}");
}

/// Four pure paintings suffice to classify held-out pure patches at 85%+.
#[test]
fn four_paintings_generalize_to_heldout_patches() {
    use brushwork::train::{train_fold, TrainConfig};

    let human_a = generate_pure(&StyleParams::human_like(), 900, 201).unwrap();
    let human_b = generate_pure(&StyleParams::human_like(), 900, 202).unwrap();
    let robot_a = generate_pure(&StyleParams::robot_like(), 900, 203).unwrap();
    let robot_b = generate_pure(&StyleParams::robot_like(), 900, 204).unwrap();
    let held_human = generate_pure(&StyleParams::human_like(), 900, 205).unwrap();
    let held_robot = generate_pure(&StyleParams::robot_like(), 900, 206).unwrap();

    let mut train_patches = Vec::new();
    for (i, painting) in [&human_a, &human_b, &robot_a, &robot_b].iter().enumerate() {
        let mut image = painting.image.clone();
        image.painting_id = format!("train_{i}");
        train_patches.extend(extract_patches(&image, 300, 150).unwrap());
    }
    let mut held_patches = Vec::new();
    for (i, painting) in [&held_human, &held_robot].iter().enumerate() {
        let mut image = painting.image.clone();
        image.painting_id = format!("held_{i}");
        held_patches.extend(extract_patches(&image, 300, 150).unwrap());
    }

    let train_refs: Vec<&PatchRecord> = train_patches.iter().collect();
    let held_refs: Vec<&PatchRecord> = held_patches.iter().collect();

    let cfg = TrainConfig {
        lr: 0.05,
        epochs: 30,
        seed: 11,
        alphas: [1.0, 1.0, 0.75],
        ..TrainConfig::default()
    };
    let outcome = train_fold(&train_refs, &held_refs, &ModelConfig::tiny(), &cfg, 0).unwrap();
    let net = outcome.checkpoint.to_network().unwrap();
    let scored = predict_patches(&net, &held_refs, cfg.batch_size).unwrap();
    let correct = scored
        .iter()
        .zip(&held_refs)
        .filter(|((pred, _), patch)| *pred == patch.label)
        .count();
    let accuracy = correct as f64 / held_refs.len() as f64;
    assert!(
        accuracy >= 0.85,
        "held-out accuracy {accuracy:.4} below the separability floor"
    );
    println!("held-out accuracy {accuracy:.4} on {} patches", held_refs.len());
}

/// Guard against a degenerate corpus: no single threshold on patch mean
/// intensity separates the two styles at better than 70%.
#[test]
fn no_intensity_threshold_separates_the_styles() {
    let mut samples: Vec<(f64, bool)> = Vec::new(); // (mean intensity, is_human)
    for seed in 0..3u64 {
        for (style, is_human) in [
            (StyleParams::human_like(), true),
            (StyleParams::robot_like(), false),
        ] {
            let painting = generate_pure(&style, 900, 300 + seed * 2 + is_human as u64).unwrap();
            for patch in extract_patches(&painting.image, 300, 150).unwrap() {
                if patch.label != ClassLabel::Blank {
                    let mean = patch.pixels.iter().map(|&v| v as f64).sum::<f64>()
                        / patch.pixels.len() as f64;
                    samples.push((mean, is_human));
                }
            }
        }
    }
    assert!(samples.len() > 60, "need a meaningful sample");
    samples.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());

    let total = samples.len() as f64;
    let humans = samples.iter().filter(|(_, h)| *h).count() as f64;
    let mut best = 0.0f64;
    // Sweep every threshold position and both polarities.
    let mut humans_below = 0.0;
    for i in 0..=samples.len() {
        let below = i as f64;
        let acc_human_low = (humans_below + (total - below - (humans - humans_below))) / total;
        let acc_human_high = 1.0 - acc_human_low;
        best = best.max(acc_human_low).max(acc_human_high);
        if i < samples.len() && samples[i].1 {
            humans_below += 1.0;
        }
    }
    assert!(
        best <= 0.70,
        "a mean-intensity threshold separates the styles at {best:.3}"
    );
    println!("best intensity-threshold accuracy {best:.3} over {} patches", samples.len());
}

/// The auto-label of each non-blank patch agrees with its mask majority.
#[test]
fn patch_labels_agree_with_mask_majority() {
    for (style, author_code) in [
        (StyleParams::human_like(), MASK_HUMAN),
        (StyleParams::robot_like(), MASK_ROBOT),
    ] {
        let painting = generate_pure(&style, 600, 77).unwrap();
        let image = &painting.image;
        let patches = extract_patches(image, 300, 150).unwrap();
        for patch in &patches {
            // Majority mask label over the patch window.
            let mut counts = [0usize; 3];
            for y in patch.y..patch.y + patch.size {
                for x in patch.x..patch.x + patch.size {
                    counts[painting.mask[y * 600 + x] as usize] += 1;
                }
            }
            let label = label_patch(&patch.pixels, image.author).unwrap();
            if label != ClassLabel::Blank {
                let non_blank_majority = if counts[MASK_HUMAN as usize] >= counts[MASK_ROBOT as usize]
                {
                    MASK_HUMAN
                } else {
                    MASK_ROBOT
                };
                // A pure painting has one author, so the non-blank mask
                // pixels must carry exactly that author.
                assert_eq!(non_blank_majority, author_code);
                assert_eq!(
                    counts[if author_code == MASK_HUMAN {
                        MASK_ROBOT
                    } else {
                        MASK_HUMAN
                    } as usize],
                    0
                );
            } else {
                // Blank patches clear the 95% white-fraction rule; the mask
                // agrees pixelwise with the white threshold.
                let white = patch
                    .pixels
                    .iter()
                    .filter(|&&v| v >= WHITE_PIXEL_THRESHOLD)
                    .count();
                assert_eq!(counts[MASK_BLANK as usize], white);
            }
        }
    }
}
