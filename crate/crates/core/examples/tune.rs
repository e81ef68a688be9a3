// Scratch tuning harness (not part of the deliverable test suite).
use std::time::Instant;

use brushwork::eval::run_lopo;
use brushwork::model::ModelConfig;
use brushwork::pipeline::{load_corpus, read_manifest};
use brushwork::synth::emit_corpus;
use brushwork::train::TrainConfig;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let epochs: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(20);
    let lr: f64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(0.02);
    let n_per_style: usize = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(3);

    let dir = std::env::temp_dir().join(format!("bw-tune-{n_per_style}"));
    let t0 = Instant::now();
    let out = emit_corpus(n_per_style, n_per_style, 0, 900, 42, &dir).unwrap();
    println!("corpus: {} paintings in {:?}", out.entries.len(), t0.elapsed());

    let entries = read_manifest(&out.manifest_path).unwrap();
    let t1 = Instant::now();
    let corpus = load_corpus(&entries, &dir, 300, 150).unwrap();
    let n_patches: usize = corpus.iter().filter_map(|p| p.patches.as_ref()).map(|p| p.len()).sum();
    let n_blank: usize = corpus
        .iter()
        .filter_map(|p| p.patches.as_ref())
        .flatten()
        .filter(|p| p.label == brushwork::pipeline::ClassLabel::Blank)
        .count();
    println!("loaded {n_patches} patches ({n_blank} blank) in {:?}", t1.elapsed());

    let model = ModelConfig::tiny();
    let alphas: [f64; 3] = args.get(4).map(|s| {
        let v: Vec<f64> = s.split(",").map(|x| x.parse().unwrap()).collect();
        [v[0], v[1], v[2]]
    }).unwrap_or([0.01, 1.0, 0.75]);
    let train = TrainConfig {
        alphas,
        lr,
        epochs,
        seed: 7,
        ..TrainConfig::default()
    };
    let t2 = Instant::now();
    let outcome = run_lopo(&corpus, &model, &train).unwrap();
    println!(
        "LOPO: mean acc {:.4} +/- {:.4}, vote {:.4}, in {:?}",
        outcome.aggregates.mean_accuracy,
        outcome.aggregates.std_accuracy,
        outcome.aggregates.majority_vote_accuracy,
        t2.elapsed()
    );
    for fold in &outcome.folds {
        println!(
            "  fold {:>2} {:<18} acc {:.4} best_epoch {:>3} vote {}",
            fold.fold_id,
            fold.held_out_painting,
            fold.metrics.accuracy,
            fold.best_epoch,
            fold.painting_vote.name()
        );
    }
}
