//! End-to-end CLI behavior through the real binary.

use std::path::Path;
use std::process::Command;

fn brushwork() -> Command {
    Command::new(env!("CARGO_BIN_EXE_brushwork"))
}

/// A small corpus shared by the CLI tests (generated once per test run).
fn small_corpus(dir: &Path) {
    let status = brushwork()
        .args([
            "synth",
            "--out",
            dir.to_str().unwrap(),
            "--human",
            "2",
            "--robot",
            "2",
            "--hybrid",
            "1",
            "--size",
            "600",
            "--seed",
            "11",
        ])
        .status()
        .expect("binary runs");
    assert!(status.success());
}

#[test]
fn no_arguments_prints_usage_and_exits_two() {
    let output = brushwork().output().expect("binary runs");
    assert_eq!(output.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.to_lowercase().contains("usage"), "stderr: {stderr}");
}

#[test]
fn unknown_flag_exits_two() {
    let output = brushwork()
        .args(["crossval", "--does-not-exist"])
        .output()
        .expect("binary runs");
    assert_eq!(output.status.code(), Some(2));
}

#[test]
fn missing_manifest_is_validation_failure_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let output = brushwork()
        .args([
            "crossval",
            "--manifest",
            dir.path().join("nope.jsonl").to_str().unwrap(),
            "--out",
            dir.path().to_str().unwrap(),
        ])
        .output()
        .expect("binary runs");
    assert_eq!(output.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("error:"), "stderr: {stderr}");
}

#[test]
fn synth_then_extract_builds_a_readable_cache() {
    let dir = tempfile::tempdir().unwrap();
    small_corpus(dir.path());
    assert!(dir.path().join("manifest.jsonl").exists());
    assert!(dir.path().join("human_painting_1.png").exists());
    assert!(dir.path().join("hybrid_painting_1_mask.png").exists());

    let out = dir.path().join("cache");
    let status = brushwork()
        .args([
            "extract",
            "--manifest",
            dir.path().join("manifest.jsonl").to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ])
        .status()
        .expect("binary runs");
    assert!(status.success());

    let patches = brushwork::pipeline::read_patch_cache(&out.join("patches.bwpc")).unwrap();
    // Four pure paintings, 600x600 at 300/150: nine patches each.
    assert_eq!(patches.len(), 4 * 9);
    // Hybrids are excluded: their labels are undefined.
    assert!(patches.iter().all(|p| !p.painting_id.starts_with("hybrid")));
}

#[test]
fn vote_and_entropy_consume_posterior_files() {
    let dir = tempfile::tempdir().unwrap();
    let posteriors = dir.path().join("posteriors.jsonl");
    let rows = r#"{"painting_id":"a","author":"human","x":0,"y":0,"true_label":"human","pred":"human","p_blank":0.1,"p_human":0.8,"p_robot":0.1,"fold":0}
{"painting_id":"a","author":"human","x":150,"y":0,"true_label":"human","pred":"human","p_blank":0.1,"p_human":0.7,"p_robot":0.2,"fold":0}
{"painting_id":"b","author":"robot","x":0,"y":0,"true_label":"robot","pred":"robot","p_blank":0.05,"p_human":0.15,"p_robot":0.8,"fold":1}
"#;
    std::fs::write(&posteriors, rows).unwrap();

    let out = dir.path().join("votes");
    let output = brushwork()
        .args([
            "vote",
            "--posteriors",
            posteriors.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ])
        .output()
        .expect("binary runs");
    assert!(output.status.success());
    let votes: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("votes.json")).unwrap()).unwrap();
    assert_eq!(votes["votes"][0]["verdict"], "human");
    assert_eq!(votes["votes"][1]["verdict"], "robot");

    // Entropy without annotations still summarizes the pure groups, and
    // identical invocations produce identical bytes.
    let ent = dir.path().join("ent");
    let mut snapshots = Vec::new();
    for _ in 0..2 {
        let status = brushwork()
            .args([
                "entropy",
                "--posteriors",
                posteriors.to_str().unwrap(),
                "--tau",
                "0.2",
                "--out",
                ent.to_str().unwrap(),
            ])
            .status()
            .expect("binary runs");
        assert!(status.success());
        snapshots.push(std::fs::read(ent.join("entropy_report.json")).unwrap());
    }
    assert_eq!(
        snapshots[0], snapshots[1],
        "entropy output must be byte-identical across runs"
    );
}

#[test]
fn config_file_supplies_defaults_flags_override() {
    let dir = tempfile::tempdir().unwrap();
    small_corpus(dir.path());
    let config = dir.path().join("run.conf");
    std::fs::write(
        &config,
        format!(
            "manifest = {}\nmodel_scale = tiny\nepochs = 1\nbatch_size = 16\n",
            dir.path().join("manifest.jsonl").display()
        ),
    )
    .unwrap();

    // The config file's manifest is used; --heldout comes from the flag.
    let out = dir.path().join("train_out");
    let output = brushwork()
        .args([
            "train",
            "--config",
            config.to_str().unwrap(),
            "--heldout",
            "human_painting_1",
            "--out",
            out.to_str().unwrap(),
            "--alphas",
            "1.0,1.0,0.75",
        ])
        .output()
        .expect("binary runs");
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(output.status.success(), "stderr: {stderr}");
    assert!(out.join("fold_human_painting_1.bwck").exists());

    let ckpt =
        brushwork::checkpoint::Checkpoint::load(&out.join("fold_human_painting_1.bwck")).unwrap();
    assert_eq!(ckpt.config, brushwork::model::ModelConfig::tiny());
    assert_eq!(ckpt.epoch, 1, "config-file epochs respected");
}
