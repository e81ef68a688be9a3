// Scratch: entropy-elevation check (criteria 5/6 analogue).
use std::collections::BTreeMap;

use brushwork::cli::entropy_analysis;
use brushwork::eval::{run_lopo, score_hybrids};
use brushwork::model::ModelConfig;
use brushwork::pipeline::{load_corpus, read_manifest};
use brushwork::synth::{emit_corpus, read_annotations};
use brushwork::train::TrainConfig;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let epochs: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(40);
    let n: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(3);
    let hybrids: usize = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(3);

    let dir = std::env::temp_dir().join(format!("bw-ent-{n}-{hybrids}"));
    let out = emit_corpus(n, n, hybrids, 900, 42, &dir).unwrap();
    let entries = read_manifest(&out.manifest_path).unwrap();
    let corpus = load_corpus(&entries, &dir, 300, 150).unwrap();
    let regions = read_annotations(&out.annotations_path).unwrap();
    println!("{} annotation regions", regions.len());

    let model = ModelConfig::tiny();
    let train = TrainConfig {
        lr: 0.05,
        epochs,
        seed: 7,
        alphas: [1.0, 1.0, 0.75],
        ..TrainConfig::default()
    };
    let lopo = run_lopo(&corpus, &model, &train).unwrap();
    println!("LOPO mean acc {:.4}", lopo.aggregates.mean_accuracy);
    let mut posteriors: Vec<_> = lopo.folds.iter().flat_map(|f| f.posteriors.clone()).collect();
    let (_ckpt, hybrid_posteriors) = score_hybrids(&corpus, &model, &train, 300, 150).unwrap();
    posteriors.extend(hybrid_posteriors);

    let dims: BTreeMap<String, (usize, usize)> = entries
        .iter()
        .map(|e| (e.painting_id.clone(), (900usize, 900usize)))
        .collect();
    let report = entropy_analysis(&posteriors, &regions, &dims, 0.2, 300, 150, serde_json::json!({})).unwrap();
    for group in &report.groups {
        println!(
            "{:<18} n={:<6} median {:.5} mean {:.5} >0.5 {:.3} medians {:?}",
            group.name, group.stats.n_patches, group.stats.median, group.stats.mean,
            group.stats.frac_above_0_5,
            group.stats.per_painting_medians.iter().map(|(_, m)| (m * 1e4).round() / 1e4).collect::<Vec<_>>()
        );
    }
    for test in &report.tests {
        println!(
            "{}: U={} p={:.6} exact={:?} normal={:.6}",
            test.comparison, test.u, test.p, test.p_exact, test.p_normal
        );
    }
}
