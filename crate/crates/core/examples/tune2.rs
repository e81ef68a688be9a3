// Scratch: baseline + single-patch checks on the same corpus.
use std::time::Instant;

use brushwork::baseline::{run_lopo_baseline, ForestConfig};
use brushwork::eval::single_patch_regime;
use brushwork::model::ModelConfig;
use brushwork::pipeline::{load_corpus, read_manifest};
use brushwork::synth::emit_corpus;
use brushwork::train::TrainConfig;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let mode = args.get(1).map(String::as_str).unwrap_or("baseline");
    let n: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(6);

    let dir = std::env::temp_dir().join(format!("bw-tune-{n}"));
    let out = emit_corpus(n, n, 0, 900, 42, &dir).unwrap();
    let entries = read_manifest(&out.manifest_path).unwrap();
    let corpus = load_corpus(&entries, &dir, 300, 150).unwrap();

    match mode {
        "baseline" => {
            let t = Instant::now();
            let outcome = run_lopo_baseline(&corpus, &ForestConfig { seed: 7, ..Default::default() }).unwrap();
            println!(
                "baseline LOPO: mean acc {:.4} +/- {:.4} vote {:.4} in {:?}",
                outcome.aggregates.mean_accuracy,
                outcome.aggregates.std_accuracy,
                outcome.aggregates.majority_vote_accuracy,
                t.elapsed()
            );
            for fold in &outcome.folds {
                println!("  {} acc {:.4}", fold.held_out_painting, fold.metrics.accuracy);
            }
        }
        "single" => {
            let model = ModelConfig::tiny();
            let train = TrainConfig {
                lr: 0.05,
                epochs: 40,
                seed: 7,
                alphas: [1.0, 1.0, 0.75],
                ..TrainConfig::default()
            };
            let seeds: usize = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(3);
            let t = Instant::now();
            let report = single_patch_regime(&corpus, &model, &train, seeds).unwrap();
            println!(
                "single-patch: mean {:.4} +/- {:.4} over {} seeds in {:?} (per-seed {:?})",
                report.mean_accuracy, report.std_accuracy, seeds, t.elapsed(), report.per_seed_accuracy
            );
        }
        other => eprintln!("unknown mode {other}"),
    }
}
