//! Command-line interface: subcommand dispatch, key-value config files and
//! flag resolution. Flags override config-file values; the fully resolved
//! configuration is echoed into every report.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::baseline::{run_lopo_baseline, ForestConfig};

use crate::entropy::{
    EntropyStats,
    conditional_entropy, mann_whitney_u, select_annotated_patches, summarize, ClassPosterior,
    EntropyOutcome, EntropyRecord, DEFAULT_TAU,
};
use crate::error::{Error, Result};
use crate::eval::{
    majority_vote, run_lopo, score_hybrids, PatchPosterior, Verdict,
};
use crate::heatmap::{render_heatmap, HeatmapKind};
use crate::model::ModelConfig;
use crate::pipeline::{
    extract_patches, grid_coords, load_corpus, read_manifest, write_patch_cache, Author,
    ClassLabel, DEFAULT_PATCH_SIZE, DEFAULT_STRIDE,
};
use crate::report::{
    build_baseline_report, build_crossval_report, read_posteriors, render_summary,
    write_confusion_tsv, write_json_pretty, write_posteriors, write_train_log, EntropyGroup,
    EntropyReport, MwuReport, REPORT_SCHEMA_VERSION,
};
use crate::synth::{emit_corpus, read_annotations};
use crate::train::{train_fold, TrainConfig, DEFAULT_ALPHAS};

/// Environment variable providing the default output directory.
pub const OUT_DIR_ENV: &str = "BRUSHWORK_OUT";

#[derive(Parser, Debug)]
#[command(
    name = "brushwork",
    about = "Patch-based spatial authorship attribution for scanned paintings",
    version
)]
struct Cli {
    /// Key-value config file (key = value per line); flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Default, Clone)]
struct CommonOpts {
    /// Dataset manifest (line-delimited JSON).
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Output directory (defaults to $BRUSHWORK_OUT, then ".").
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    patch_size: Option<usize>,
    #[arg(long)]
    stride: Option<usize>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    momentum: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Class-weight scaling factors as "blank,human,robot".
    #[arg(long)]
    alphas: Option<String>,
    /// Architecture preset.
    #[arg(long, value_parser = ["paper", "tiny"])]
    model_scale: Option<String>,
    #[arg(long)]
    eval_every: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic brushstroke corpus with masks and annotations.
    Synth {
        #[command(flatten)]
        common: CommonOpts,
        #[arg(long, default_value_t = 6)]
        human: usize,
        #[arg(long, default_value_t = 6)]
        robot: usize,
        #[arg(long, default_value_t = 3)]
        hybrid: usize,
        /// Canvas edge length in pixels.
        #[arg(long, default_value_t = 900)]
        size: usize,
    },
    /// Extract labeled patches from pure paintings into a binary cache.
    Extract {
        #[command(flatten)]
        common: CommonOpts,
    },
    /// Train a single fold, holding out one painting.
    Train {
        #[command(flatten)]
        common: CommonOpts,
        /// Painting id to hold out for validation.
        #[arg(long)]
        heldout: String,
    },
    /// Full leave-one-painting-out cross-validation with reports.
    Crossval {
        #[command(flatten)]
        common: CommonOpts,
    },
    /// LBP + random-forest baseline under the same protocol.
    Baseline {
        #[command(flatten)]
        common: CommonOpts,
        #[arg(long, default_value_t = 100)]
        trees: usize,
        #[arg(long, default_value_t = 16)]
        max_depth: usize,
    },
    /// Conditional-entropy statistics and Mann-Whitney tests.
    Entropy {
        #[command(flatten)]
        common: CommonOpts,
        /// Posterior records from a crossval run.
        #[arg(long)]
        posteriors: PathBuf,
        /// Hybrid region annotations (line-delimited JSON).
        #[arg(long)]
        annotations: Option<PathBuf>,
    },
    /// Render class and entropy heatmaps plus a run summary.
    Report {
        #[command(flatten)]
        common: CommonOpts,
        #[arg(long)]
        posteriors: PathBuf,
    },
    /// Painting-level majority-vote verdicts from posterior records.
    Vote {
        #[command(flatten)]
        common: CommonOpts,
        #[arg(long)]
        posteriors: PathBuf,
    },
}

/// Flat `key = value` config file; `#` starts a comment.
#[derive(Debug, Default)]
struct FileConfig(BTreeMap<String, String>);

impl FileConfig {
    fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(FileConfig::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut map = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Format {
                    path: path.to_path_buf(),
                    detail: format!("line {} is not `key = value`", lineno + 1),
                });
            };
            map.insert(key.trim().to_string(), value.trim().to_string());
        }
        Ok(FileConfig(map))
    }

    fn get<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.0.get(key) {
            None => Ok(None),
            Some(raw) => raw.parse::<T>().map(Some).map_err(|_| {
                Error::Config(format!("config key '{key}' has unparsable value '{raw}'"))
            }),
        }
    }
}

/// Flag > config file > default resolution for everything a run needs.
#[derive(Debug, Clone)]
struct Resolved {
    manifest: Option<PathBuf>,
    out: PathBuf,
    seed: u64,
    patch_size: usize,
    stride: usize,
    tau: f64,
    model_scale: String,
    model: ModelConfig,
    train: TrainConfig,
}

impl Resolved {
    fn echo(&self) -> serde_json::Value {
        serde_json::json!({
            "manifest": self.manifest.as_ref().map(|p| p.display().to_string()),
            "out": self.out.display().to_string(),
            "seed": self.seed,
            "patch_size": self.patch_size,
            "stride": self.stride,
            "tau": self.tau,
            "model_scale": self.model_scale,
            "model": self.model,
            "train": self.train,
        })
    }
}

fn parse_alphas(raw: &str) -> Result<[f64; 3]> {
    let parts: Vec<&str> = raw.split(',').map(str::trim).collect();
    if parts.len() != 3 {
        return Err(Error::Config(format!(
            "alphas must be three comma-separated numbers, got '{raw}'"
        )));
    }
    let mut alphas = [0.0; 3];
    for (slot, part) in alphas.iter_mut().zip(&parts) {
        *slot = part
            .parse::<f64>()
            .map_err(|_| Error::Config(format!("bad alpha value '{part}'")))?;
    }
    Ok(alphas)
}

fn resolve(common: &CommonOpts, file: &FileConfig) -> Result<Resolved> {
    let manifest = common
        .manifest
        .clone()
        .or(file.get::<PathBuf>("manifest")?);
    let out = common
        .out
        .clone()
        .or(file.get::<PathBuf>("out")?)
        .or_else(|| std::env::var(OUT_DIR_ENV).ok().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."));
    let seed = common.seed.or(file.get("seed")?).unwrap_or(0);
    let patch_size = common
        .patch_size
        .or(file.get("patch_size")?)
        .unwrap_or(DEFAULT_PATCH_SIZE);
    let stride = common.stride.or(file.get("stride")?).unwrap_or(DEFAULT_STRIDE);
    let tau = common.tau.or(file.get("tau")?).unwrap_or(DEFAULT_TAU);
    let model_scale = common
        .model_scale
        .clone()
        .or(file.get("model_scale")?)
        .unwrap_or_else(|| "paper".to_string());
    let model = match model_scale.as_str() {
        "paper" => ModelConfig::paper(),
        "tiny" => ModelConfig::tiny(),
        other => {
            return Err(Error::Config(format!(
                "model_scale must be 'paper' or 'tiny', got '{other}'"
            )))
        }
    };

    let alphas = match (&common.alphas, file.0.get("alphas")) {
        (Some(raw), _) => parse_alphas(raw)?,
        (None, Some(raw)) => parse_alphas(raw)?,
        (None, None) => DEFAULT_ALPHAS,
    };
    let defaults = TrainConfig::default();
    let train = TrainConfig {
        lr: common.lr.or(file.get("lr")?).unwrap_or(defaults.lr),
        momentum: common
            .momentum
            .or(file.get("momentum")?)
            .unwrap_or(defaults.momentum),
        batch_size: common
            .batch_size
            .or(file.get("batch_size")?)
            .unwrap_or(defaults.batch_size),
        epochs: common.epochs.or(file.get("epochs")?).unwrap_or(defaults.epochs),
        seed,
        augmentation: defaults.augmentation,
        eval_every: common
            .eval_every
            .or(file.get("eval_every")?)
            .unwrap_or(defaults.eval_every),
        alphas,
    };

    Ok(Resolved {
        manifest,
        out,
        seed,
        patch_size,
        stride,
        tau,
        model_scale,
        model,
        train,
    })
}

fn require_manifest(resolved: &Resolved) -> Result<PathBuf> {
    resolved
        .manifest
        .clone()
        .ok_or_else(|| Error::Usage("--manifest is required for this subcommand".into()))
}

/// Entry point used by the binary; returns the process exit status.
/// Unknown flags or subcommands exit 2, validation failures exit 1.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(err) => {
            let code = if err.use_stderr() { 2 } else { 0 };
            let _ = err.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(err) => {
            eprintln!("error: {err}");
            1
        }
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    let file = FileConfig::load(cli.config.as_deref())?;
    match cli.command {
        Command::Synth {
            common,
            human,
            robot,
            hybrid,
            size,
        } => {
            let resolved = resolve(&common, &file)?;
            let out = emit_corpus(human, robot, hybrid, size, resolved.seed, &resolved.out)?;
            println!(
                "wrote {} paintings to {} (manifest {})",
                out.entries.len(),
                resolved.out.display(),
                out.manifest_path.display()
            );
            Ok(())
        }
        Command::Extract { common } => {
            let resolved = resolve(&common, &file)?;
            let manifest_path = require_manifest(&resolved)?;
            let entries = read_manifest(&manifest_path)?;
            let base = manifest_path.parent().unwrap_or(Path::new("."));
            std::fs::create_dir_all(&resolved.out).map_err(|e| Error::io(&resolved.out, e))?;

            let mut patches = Vec::new();
            let mut skipped = 0;
            for entry in &entries {
                if entry.author == Author::Hybrid {
                    skipped += 1;
                    continue;
                }
                let path = if entry.path.is_absolute() {
                    entry.path.clone()
                } else {
                    base.join(&entry.path)
                };
                let image = crate::pipeline::GrayImage::load(
                    &path,
                    entry.painting_id.clone(),
                    entry.author,
                )?;
                patches.extend(extract_patches(&image, resolved.patch_size, resolved.stride)?);
            }
            let cache_path = resolved.out.join("patches.bwpc");
            write_patch_cache(&cache_path, &patches)?;
            println!(
                "cached {} patches to {} ({} hybrid paintings skipped: no defined labels)",
                patches.len(),
                cache_path.display(),
                skipped
            );
            Ok(())
        }
        Command::Train { common, heldout } => {
            let resolved = resolve(&common, &file)?;
            let manifest_path = require_manifest(&resolved)?;
            let entries = read_manifest(&manifest_path)?;
            let base = manifest_path.parent().unwrap_or(Path::new("."));
            let corpus = load_corpus(&entries, base, resolved.patch_size, resolved.stride)?;
            std::fs::create_dir_all(&resolved.out).map_err(|e| Error::io(&resolved.out, e))?;

            let held = corpus
                .iter()
                .find(|p| p.image.painting_id == heldout)
                .ok_or_else(|| Error::Usage(format!("painting '{heldout}' not in manifest")))?;
            let held_patches: Vec<_> = held
                .patches
                .as_ref()
                .ok_or_else(|| Error::Usage("cannot hold out a hybrid painting".into()))?
                .iter()
                .collect();
            let train_patches: Vec<_> = corpus
                .iter()
                .filter(|p| p.image.painting_id != heldout)
                .filter_map(|p| p.patches.as_ref())
                .flatten()
                .collect();

            let outcome = train_fold(
                &train_patches,
                &held_patches,
                &resolved.model,
                &resolved.train,
                0,
            )?;
            let ckpt_path = resolved.out.join(format!("fold_{heldout}.bwck"));
            outcome.checkpoint.save(&ckpt_path)?;
            write_train_log(&resolved.out.join(format!("fold_{heldout}_log.jsonl")), &outcome.log)?;
            println!(
                "best epoch {} with validation accuracy {:.4}; checkpoint at {}",
                outcome.checkpoint.epoch,
                outcome.checkpoint.val_accuracy,
                ckpt_path.display()
            );
            Ok(())
        }
        Command::Crossval { common } => {
            let resolved = resolve(&common, &file)?;
            let manifest_path = require_manifest(&resolved)?;
            let entries = read_manifest(&manifest_path)?;
            let base = manifest_path.parent().unwrap_or(Path::new("."));
            let corpus = load_corpus(&entries, base, resolved.patch_size, resolved.stride)?;
            std::fs::create_dir_all(&resolved.out).map_err(|e| Error::io(&resolved.out, e))?;

            let outcome = run_lopo(&corpus, &resolved.model, &resolved.train)?;

            let mut posteriors: Vec<PatchPosterior> = Vec::new();
            let mut log = Vec::new();
            let ckpt_dir = resolved.out.join("checkpoints");
            std::fs::create_dir_all(&ckpt_dir).map_err(|e| Error::io(&ckpt_dir, e))?;
            for fold in &outcome.folds {
                posteriors.extend(fold.posteriors.iter().cloned());
                log.extend(fold.log.iter().cloned());
                fold.checkpoint
                    .save(&ckpt_dir.join(format!("fold_{}.bwck", fold.fold_id)))?;
            }

            // Hybrid paintings, when present, are scored by one model
            // trained on every pure painting.
            if corpus.iter().any(|p| p.patches.is_none()) {
                let (final_ckpt, hybrid_posteriors) = score_hybrids(
                    &corpus,
                    &resolved.model,
                    &resolved.train,
                    resolved.patch_size,
                    resolved.stride,
                )?;
                final_ckpt.save(&ckpt_dir.join("final_model.bwck"))?;
                posteriors.extend(hybrid_posteriors);
            }

            let report = build_crossval_report(&outcome, resolved.echo());
            write_json_pretty(&resolved.out.join("crossval_report.json"), &report)?;
            write_confusion_tsv(
                &resolved.out.join("confusion.tsv"),
                &report.confusion_raw,
                &report.confusion_row_normalized,
            )?;
            write_posteriors(&resolved.out.join("posteriors.jsonl"), &posteriors)?;
            write_train_log(&resolved.out.join("train_log.jsonl"), &log)?;
            std::fs::write(
                resolved.out.join("summary.txt"),
                render_summary(&report),
            )
            .map_err(|e| Error::io(resolved.out.join("summary.txt"), e))?;
            print!("{}", render_summary(&report));
            Ok(())
        }
        Command::Baseline {
            common,
            trees,
            max_depth,
        } => {
            let resolved = resolve(&common, &file)?;
            let manifest_path = require_manifest(&resolved)?;
            let entries = read_manifest(&manifest_path)?;
            let base = manifest_path.parent().unwrap_or(Path::new("."));
            let corpus = load_corpus(&entries, base, resolved.patch_size, resolved.stride)?;
            std::fs::create_dir_all(&resolved.out).map_err(|e| Error::io(&resolved.out, e))?;

            let forest_cfg = ForestConfig {
                n_trees: trees,
                max_depth,
                seed: resolved.seed,
                ..ForestConfig::default()
            };
            let outcome = run_lopo_baseline(&corpus, &forest_cfg)?;
            let mut run_config = resolved.echo();
            run_config["forest"] = serde_json::json!({
                "n_trees": forest_cfg.n_trees,
                "max_depth": forest_cfg.max_depth,
                "min_leaf": forest_cfg.min_leaf,
                "features_per_split": forest_cfg.features_per_split,
            });
            let report = build_baseline_report(&outcome, run_config);
            write_json_pretty(&resolved.out.join("baseline_report.json"), &report)?;
            write_confusion_tsv(
                &resolved.out.join("baseline_confusion.tsv"),
                &report.confusion_raw,
                &report.confusion_row_normalized,
            )?;
            let mut posteriors = Vec::new();
            for fold in &outcome.folds {
                posteriors.extend(fold.posteriors.iter().cloned());
            }
            write_posteriors(&resolved.out.join("baseline_posteriors.jsonl"), &posteriors)?;
            print!("{}", render_summary(&report));
            Ok(())
        }
        Command::Entropy {
            common,
            posteriors,
            annotations,
        } => {
            let resolved = resolve(&common, &file)?;
            let rows = read_posteriors(&posteriors)?;
            std::fs::create_dir_all(&resolved.out).map_err(|e| Error::io(&resolved.out, e))?;

            let regions = match &annotations {
                Some(path) => read_annotations(path)?,
                None => Vec::new(),
            };
            // Image dimensions for region validation come from the manifest.
            let dims: BTreeMap<String, (usize, usize)> = match &resolved.manifest {
                Some(manifest_path) => {
                    let entries = read_manifest(manifest_path)?;
                    let base = manifest_path.parent().unwrap_or(Path::new("."));
                    entries
                        .iter()
                        .map(|e| {
                            let path = if e.path.is_absolute() {
                                e.path.clone()
                            } else {
                                base.join(&e.path)
                            };
                            let (w, h) =
                                image::image_dimensions(&path).map_err(|err| Error::Format {
                                    path: path.clone(),
                                    detail: format!("cannot read dimensions: {err}"),
                                })?;
                            Ok((e.painting_id.clone(), (w as usize, h as usize)))
                        })
                        .collect::<Result<_>>()?
                }
                None => BTreeMap::new(),
            };

            let report = entropy_analysis(
                &rows,
                &regions,
                &dims,
                resolved.tau,
                resolved.patch_size,
                resolved.stride,
                resolved.echo(),
            )?;
            write_json_pretty(&resolved.out.join("entropy_report.json"), &report)?;
            for group in &report.groups {
                println!(
                    "{:<18} n={:<6} median {:.4}  mean {:.4}  >0.5 {:.1}%",
                    group.name,
                    group.stats.n_patches,
                    group.stats.median,
                    group.stats.mean,
                    group.stats.frac_above_0_5 * 100.0
                );
            }
            for test in &report.tests {
                println!(
                    "{}: U={} p={:.5}{}",
                    test.comparison,
                    test.u,
                    test.p,
                    test.p_exact
                        .map(|p| format!(" (exact {p:.5}, normal {:.5})", test.p_normal))
                        .unwrap_or_default()
                );
            }
            Ok(())
        }
        Command::Report { common, posteriors } => {
            let resolved = resolve(&common, &file)?;
            let manifest_path = require_manifest(&resolved)?;
            let rows = read_posteriors(&posteriors)?;
            let entries = read_manifest(&manifest_path)?;
            let base = manifest_path.parent().unwrap_or(Path::new("."));
            std::fs::create_dir_all(&resolved.out).map_err(|e| Error::io(&resolved.out, e))?;

            for entry in &entries {
                let per_painting: Vec<&PatchPosterior> = rows
                    .iter()
                    .filter(|r| r.painting_id == entry.painting_id)
                    .collect();
                if per_painting.is_empty() {
                    continue;
                }
                let path = if entry.path.is_absolute() {
                    entry.path.clone()
                } else {
                    base.join(&entry.path)
                };
                let (w, h) = image::image_dimensions(&path).map_err(|err| Error::Format {
                    path: path.clone(),
                    detail: format!("cannot read dimensions: {err}"),
                })?;
                let (w, h) = (w as usize, h as usize);
                let grid: Vec<(usize, usize)> =
                    per_painting.iter().map(|r| (r.x, r.y)).collect();
                let class_values: Vec<f64> =
                    per_painting.iter().map(|r| r.pred.index() as f64).collect();
                let entropy_values: Vec<f64> = per_painting
                    .iter()
                    .map(|r| {
                        let posterior =
                            ClassPosterior::new(r.p_blank, r.p_human, r.p_robot)?;
                        Ok(match conditional_entropy(&posterior, resolved.tau)? {
                            EntropyOutcome::Included(h) => h,
                            EntropyOutcome::Excluded => 0.0,
                        })
                    })
                    .collect::<Result<_>>()?;

                let class_map =
                    render_heatmap(w, h, &grid, resolved.patch_size, &class_values, HeatmapKind::Class)?;
                class_map.save_png(
                    &resolved.out.join(format!("{}_class.png", entry.painting_id)),
                )?;
                let entropy_map = render_heatmap(
                    w,
                    h,
                    &grid,
                    resolved.patch_size,
                    &entropy_values,
                    HeatmapKind::Entropy,
                )?;
                entropy_map.save_png(
                    &resolved.out.join(format!("{}_entropy.png", entry.painting_id)),
                )?;
                println!(
                    "{}: wrote class and entropy heatmaps ({} patches)",
                    entry.painting_id,
                    per_painting.len()
                );
            }
            Ok(())
        }
        Command::Vote { common, posteriors } => {
            let resolved = resolve(&common, &file)?;
            let rows = read_posteriors(&posteriors)?;
            std::fs::create_dir_all(&resolved.out).map_err(|e| Error::io(&resolved.out, e))?;

            let mut by_painting: BTreeMap<&str, Vec<&PatchPosterior>> = BTreeMap::new();
            for row in &rows {
                by_painting.entry(&row.painting_id).or_default().push(row);
            }
            #[derive(serde::Serialize)]
            struct VoteRow {
                painting_id: String,
                author: Author,
                verdict: Verdict,
                #[serde(skip_serializing_if = "Option::is_none")]
                correct: Option<bool>,
            }
            let mut votes = Vec::new();
            for (painting_id, batch) in &by_painting {
                let preds: Vec<ClassLabel> = batch.iter().map(|r| r.pred).collect();
                let probs: Vec<[f64; 3]> = batch.iter().map(|r| r.probs()).collect();
                let verdict = majority_vote(&preds, Some(&probs))?;
                let author = batch[0].author;
                votes.push(VoteRow {
                    painting_id: painting_id.to_string(),
                    author,
                    verdict,
                    correct: match author {
                        Author::Hybrid => None,
                        _ => Some(verdict.matches(author)),
                    },
                });
            }
            let doc = serde_json::json!({
                "schema_version": REPORT_SCHEMA_VERSION,
                "run_config": resolved.echo(),
                "votes": votes,
            });
            write_json_pretty(&resolved.out.join("votes.json"), &doc)?;
            for vote in &votes {
                println!(
                    "{:<24} author {:<7} verdict {}",
                    vote.painting_id,
                    vote.author.name(),
                    vote.verdict.name()
                );
            }
            Ok(())
        }
    }
}

/// Groups posteriors into pure-human / pure-robot / pooled-pure /
/// annotated-hybrid, computes entropy statistics for each and runs the
/// painting-median Mann-Whitney tests.
pub fn entropy_analysis(
    rows: &[PatchPosterior],
    regions: &[crate::entropy::AnnotationRegion],
    dims: &BTreeMap<String, (usize, usize)>,
    tau: f64,
    patch_size: usize,
    stride: usize,
    run_config: serde_json::Value,
) -> Result<EntropyReport> {
    let to_record = |row: &PatchPosterior| -> Result<EntropyRecord> {
        let posterior = ClassPosterior::new(row.p_blank, row.p_human, row.p_robot)?;
        Ok(EntropyRecord {
            painting_id: row.painting_id.clone(),
            x: row.x,
            y: row.y,
            outcome: conditional_entropy(&posterior, tau)?,
        })
    };

    let mut pure_human = Vec::new();
    let mut pure_robot = Vec::new();
    let mut hybrid_all = Vec::new();
    for row in rows {
        match row.author {
            Author::Human => pure_human.push(to_record(row)?),
            Author::Robot => pure_robot.push(to_record(row)?),
            Author::Hybrid => hybrid_all.push((row, to_record(row)?)),
        }
    }

    // Hybrid analysis is restricted to patches under the annotated regions.
    let mut hybrid_annotated = Vec::new();
    if !regions.is_empty() {
        let mut selected: BTreeMap<&str, Vec<(usize, usize)>> = BTreeMap::new();
        let mut painting_ids: Vec<&str> =
            regions.iter().map(|r| r.painting_id.as_str()).collect();
        painting_ids.sort_unstable();
        painting_ids.dedup();
        for painting_id in painting_ids {
            let (w, h) = dims.get(painting_id).copied().ok_or_else(|| {
                Error::Usage(format!(
                    "annotations reference '{painting_id}' but the manifest does not provide it"
                ))
            })?;
            let per_painting: Vec<crate::entropy::AnnotationRegion> = regions
                .iter()
                .filter(|r| r.painting_id == painting_id)
                .cloned()
                .collect();
            selected.insert(
                painting_id,
                select_annotated_patches(w, h, &per_painting, patch_size, stride)?,
            );
        }
        for (row, record) in &hybrid_all {
            if let Some(coords) = selected.get(row.painting_id.as_str()) {
                if coords.contains(&(row.x, row.y)) {
                    hybrid_annotated.push(record.clone());
                }
            }
        }
    }

    let mut pure_all = pure_human.clone();
    pure_all.extend(pure_robot.iter().cloned());

    let mut groups = Vec::new();
    let mut add_group = |name: &str, records: &[EntropyRecord]| -> Result<Option<EntropyStats>> {
        if records.iter().any(|r| r.outcome != EntropyOutcome::Excluded) {
            let stats = summarize(records)?;
            groups.push(EntropyGroup {
                name: name.into(),
                stats: stats.clone(),
            });
            Ok(Some(stats))
        } else {
            Ok(None)
        }
    };
    let human_stats = add_group("pure_human", &pure_human)?;
    let robot_stats = add_group("pure_robot", &pure_robot)?;
    let pure_stats = add_group("pure_all", &pure_all)?;
    let hybrid_stats = add_group("hybrid_annotated", &hybrid_annotated)?;

    let mut tests = Vec::new();
    if let (Some(pure), Some(hybrid)) = (&pure_stats, &hybrid_stats) {
        let a: Vec<f64> = pure.per_painting_medians.iter().map(|(_, m)| *m).collect();
        let b: Vec<f64> = hybrid.per_painting_medians.iter().map(|(_, m)| *m).collect();
        let result = mann_whitney_u(&a, &b)?;
        tests.push(MwuReport::new("pure_vs_hybrid_painting_medians", a.len(), b.len(), &result));
    }
    if let (Some(human), Some(robot)) = (&human_stats, &robot_stats) {
        let a: Vec<f64> = human.per_painting_medians.iter().map(|(_, m)| *m).collect();
        let b: Vec<f64> = robot.per_painting_medians.iter().map(|(_, m)| *m).collect();
        let result = mann_whitney_u(&a, &b)?;
        tests.push(MwuReport::new("pure_human_vs_pure_robot_painting_medians", a.len(), b.len(), &result));
    }

    Ok(EntropyReport {
        schema_version: REPORT_SCHEMA_VERSION,
        run_config,
        tau,
        groups,
        tests,
    })
}

/// Per-patch conditional entropies for one painting's posteriors, aligned
/// with the extraction grid (used by the heatmap path and tests).
pub fn entropy_grid_values(
    rows: &[&PatchPosterior],
    width: usize,
    height: usize,
    size: usize,
    stride: usize,
    tau: f64,
) -> Result<Vec<((usize, usize), Option<f64>)>> {
    let coords = grid_coords(width, height, size, stride)?;
    let mut values = Vec::with_capacity(coords.len());
    for (x, y) in coords {
        let row = rows.iter().find(|r| r.x == x && r.y == y);
        let value = match row {
            Some(row) => {
                let posterior = ClassPosterior::new(row.p_blank, row.p_human, row.p_robot)?;
                conditional_entropy(&posterior, tau)?.value()
            }
            None => None,
        };
        values.push(((x, y), value));
    }
    Ok(values)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn alphas_parse_and_reject() {
        assert_eq!(parse_alphas("0.01,1.0,0.75").unwrap(), [0.01, 1.0, 0.75]);
        assert!(parse_alphas("1,2").is_err());
        assert!(parse_alphas("a,b,c").is_err());
    }

    #[test]
    fn file_config_overridden_by_flags() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.conf");
        std::fs::write(&path, "epochs = 7\nlr = 0.5 # inline comment\nmodel_scale = tiny\n")
            .unwrap();
        let file = FileConfig::load(Some(&path)).unwrap();

        let mut common = CommonOpts::default();
        common.epochs = Some(9); // flag wins
        let resolved = resolve(&common, &file).unwrap();
        assert_eq!(resolved.train.epochs, 9);
        assert!((resolved.train.lr - 0.5).abs() < 1e-12); // file value
        assert_eq!(resolved.model_scale, "tiny");
        assert_eq!(resolved.model, ModelConfig::tiny());
    }

    #[test]
    fn bad_config_line_is_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.conf");
        std::fs::write(&path, "this is not a pair\n").unwrap();
        assert!(matches!(
            FileConfig::load(Some(&path)),
            Err(Error::Format { .. })
        ));
    }

    #[test]
    fn no_arguments_exits_two() {
        assert_eq!(run(["brushwork"]), 2);
    }

    #[test]
    fn unknown_subcommand_exits_two() {
        assert_eq!(run(["brushwork", "frobnicate"]), 2);
    }

    #[test]
    fn help_exits_zero() {
        assert_eq!(run(["brushwork", "--help"]), 0);
    }
}
