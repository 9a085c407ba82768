use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clip_core::curriculum::{
    build_clip_schedule, build_standard_schedule, evaluate_model, pretrain_scorer, read_scores,
    run_plan, score_samples, write_scores, CurriculumPlan, HOLDOUT_FRACTION,
};
use clip_core::dataio::MANIFEST_FILE;
use clip_core::model::{forward, load_checkpoint, save_checkpoint};
use clip_core::runlog::{meta_path, write_meta};
use clip_core::{
    evaluate, generate_dataset, load_dataset, save_dataset, AugmentConfig, ClipConfig, Dataset,
    DensityGrid, MetricsRecord, PacingParams, RunLog, RunMeta, RunOptions, Sample, SceneConfig,
};
use log::info;

use crate::report::{
    convergence_svg, labels_for, merged_csv, threshold_csv, threshold_rows, LabeledRun, NOT_REACHED,
};
use crate::{EvalArgs, GenArgs, ReportArgs, ScoreArgs, Split, Strategy, TrainArgs};

/// A flag value that is only known to be invalid once the data is loaded.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn manifest_path(data: &Path) -> PathBuf {
    if data.is_dir() {
        data.join(MANIFEST_FILE)
    } else {
        data.to_path_buf()
    }
}

fn load(data: &Path) -> Result<Dataset> {
    let path = manifest_path(data);
    load_dataset(&path).with_context(|| format!("loading dataset {}", path.display()))
}

pub fn cmd_gen(args: &GenArgs) -> Result<()> {
    if args.count_min > args.count_max {
        return Err(UsageError(format!(
            "--count-min {} exceeds --count-max {}",
            args.count_min, args.count_max
        ))
        .into());
    }
    let cfg = SceneConfig {
        height: args.height,
        width: args.width,
        count_range: (args.count_min, args.count_max),
        sigma_gt: args.sigma,
        ..SceneConfig::default()
    };
    cfg.validate().map_err(|e| UsageError(e.to_string()))?;
    let dataset = generate_dataset(args.n, &cfg, args.seed)?;
    let manifest = save_dataset(&dataset, &args.out)?;
    println!("{}", manifest.display());
    Ok(())
}

pub fn cmd_score(args: &ScoreArgs) -> Result<()> {
    let dataset = load(&args.data)?;
    let (train, _) = dataset.split_holdout(HOLDOUT_FRACTION)?;
    let scorer = pretrain_scorer(&train, args.epochs, args.seed)?;
    let scored = score_samples(&train, &scorer)?;
    if let Some(parent) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    write_scores(&args.out, &scored)?;

    let sorted: Vec<f64> = scored.order().iter().map(|&i| scored.scores()[i]).collect();
    let median = if sorted.len() % 2 == 1 {
        sorted[sorted.len() / 2]
    } else {
        0.5 * (sorted[sorted.len() / 2 - 1] + sorted[sorted.len() / 2])
    };
    println!(
        "scored {} samples: min {:.6} median {:.6} max {:.6}",
        sorted.len(),
        sorted[0],
        median,
        sorted[sorted.len() - 1]
    );
    println!("{}", args.out.display());
    Ok(())
}

struct TrainJob<'a> {
    args: &'a TrainArgs,
    train: &'a Dataset,
    val: &'a Dataset,
    scored: Option<&'a clip_core::ScoredDataset>,
    dataset_path: String,
}

impl TrainJob<'_> {
    fn plan(&self, seed: u64) -> Result<CurriculumPlan> {
        let a = self.args;
        let pacing = self.pacing();
        Ok(match a.strategy {
            Strategy::Standard => build_standard_schedule(
                self.train,
                a.epochs.unwrap_or(pacing.total_epochs()),
                a.batch_size,
                seed,
            )?,
            Strategy::Clip => build_clip_schedule(
                self.scored.expect("clip strategy has scores"),
                &pacing,
                &ClipConfig {
                    epsilon: a.epsilon,
                    prune_policy: a.prune_policy.into(),
                    batch_size: a.batch_size,
                    seed,
                },
            )?,
        })
    }

    fn pacing(&self) -> PacingParams {
        PacingParams {
            kind: self.args.pacing.into(),
            start_fraction: self.args.b0,
            stages: self.args.stages,
            epochs_per_stage: self.args.epochs_per_stage,
        }
    }

    fn run(&self, seed: u64) -> Result<PathBuf> {
        let a = self.args;
        let strategy = match a.strategy {
            Strategy::Standard => "standard",
            Strategy::Clip => "clip",
        };
        let stem = format!("{strategy}-seed{seed}");
        let plan = self.plan(seed)?;
        info!(
            "{stem}: {} epochs, {} samples planned",
            plan.total_epochs(),
            plan.total_samples_consumed
        );
        let opts = RunOptions {
            model_seed: seed,
            augment: if a.no_augment {
                AugmentConfig::none()
            } else {
                AugmentConfig::default()
            },
            lr: a.lr,
            ..RunOptions::default()
        };
        let (params, log) = run_plan(&plan, self.train, self.val, &opts)?;

        let csv = a.out.join(format!("{stem}.csv"));
        log.write_csv(&csv)?;
        save_checkpoint(&a.out.join(format!("{stem}.clpm")), &params)?;
        let plan_json = serde_json::to_string_pretty(&plan.to_json(self.train))?;
        let plan_path = a.out.join(format!("{stem}.plan.json"));
        fs::write(&plan_path, plan_json + "\n")
            .with_context(|| format!("writing {}", plan_path.display()))?;
        let clip = a.strategy == Strategy::Clip;
        let meta = RunMeta {
            strategy: strategy.into(),
            pacing: clip.then(|| self.pacing().kind.to_string()),
            epsilon: clip.then_some(a.epsilon),
            prune_policy: clip.then(|| clip_core::PrunePolicy::from(a.prune_policy).to_string()),
            seed,
            dataset: self.dataset_path.clone(),
            timestamp: chrono::Utc::now().to_rfc3339(),
        };
        write_meta(&meta_path(&csv), &meta)?;
        Ok(csv)
    }
}

pub fn cmd_train(args: &TrainArgs) -> Result<()> {
    let dataset = load(&args.data)?;
    let (train, val) = dataset.split_holdout(HOLDOUT_FRACTION)?;
    let scored = match (&args.strategy, &args.scores) {
        (Strategy::Clip, Some(path)) => Some(
            read_scores(path, &train)
                .with_context(|| format!("reading scores {}", path.display()))?,
        ),
        _ => None,
    };
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;

    let seeds = if args.seeds.is_empty() {
        vec![args.seed.unwrap_or(0)]
    } else {
        args.seeds.clone()
    };
    let job = TrainJob {
        args,
        train: &train,
        val: &val,
        scored: scored.as_ref(),
        dataset_path: manifest_path(&args.data).display().to_string(),
    };
    // seeds are independent jobs writing disjoint files
    let results: Vec<Result<PathBuf>> = std::thread::scope(|scope| {
        let handles: Vec<_> = seeds
            .iter()
            .map(|&seed| {
                let job = &job;
                scope.spawn(move || job.run(seed))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("training worker panicked"))
            .collect()
    });
    for r in results {
        println!("{}", r?.display());
    }
    Ok(())
}

pub fn cmd_eval(args: &EvalArgs) -> Result<()> {
    let params = load_checkpoint(&args.checkpoint)?;
    let dataset = load(&args.data)?;
    let (train, val) = dataset.split_holdout(HOLDOUT_FRACTION)?;
    let chosen = match args.split {
        Split::Train => train,
        Split::Val => val,
        Split::All => dataset,
    };
    if chosen.is_empty() {
        anyhow::bail!("the {:?} split is empty", args.split);
    }
    let min_side = chosen
        .samples()
        .iter()
        .map(|s| s.image.height().min(s.image.width()))
        .min()
        .unwrap_or(0);
    if args.game_level >= usize::BITS || (1usize << args.game_level) > min_side {
        return Err(UsageError(format!(
            "--game-level {} needs 2^{} <= {min_side} (smallest image side)",
            args.game_level, args.game_level
        ))
        .into());
    }

    let record = if args.self_check {
        // ground truth replaced by the model's own predictions
        let preds = chosen
            .samples()
            .iter()
            .map(|s| forward(&params, &s.image))
            .collect::<clip_core::Result<Vec<DensityGrid>>>()?;
        let samples: Vec<Sample> = chosen
            .samples()
            .iter()
            .zip(&preds)
            .map(|(s, p)| Sample {
                density: Some(p.clone()),
                ..s.clone()
            })
            .collect();
        let mirror = Dataset::new(samples, chosen.sigma())?;
        evaluate(&preds, &mirror, args.game_level)?
    } else {
        evaluate_model(&params, &chosen, args.game_level)?
    };
    print_record(&record, chosen.len());
    let out = args
        .out
        .clone()
        .unwrap_or_else(|| args.checkpoint.with_extension("metrics.json"));
    let json = serde_json::json!({
        "mae": record.mae,
        "game": record.game,
        "game_level": record.game_level,
        "ssim": record.ssim,
        "psnr": record.psnr_for_log(),
        "samples": chosen.len(),
    });
    fs::write(&out, serde_json::to_string_pretty(&json)? + "\n")
        .with_context(|| format!("writing {}", out.display()))?;
    println!("{}", out.display());
    Ok(())
}

fn print_record(r: &MetricsRecord, n: usize) {
    println!(
        "samples {n}  MAE {:.4}  GAME({}) {:.4}  SSIM {:.4}  PSNR {:.2} dB",
        r.mae,
        r.game_level,
        r.game,
        r.ssim,
        r.psnr_for_log()
    );
}

pub fn cmd_report(args: &ReportArgs) -> Result<()> {
    let labels = labels_for(&args.logs);
    let runs = args
        .logs
        .iter()
        .zip(labels)
        .map(|(path, label)| {
            Ok(LabeledRun {
                label,
                log: RunLog::read_csv(path)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;

    let comparison = args.out.join("comparison.csv");
    fs::write(&comparison, merged_csv(&runs))
        .with_context(|| format!("writing {}", comparison.display()))?;
    let rows = threshold_rows(&runs, args.loss_threshold);
    let thresholds = args.out.join("thresholds.csv");
    fs::write(&thresholds, threshold_csv(&rows, args.loss_threshold))
        .with_context(|| format!("writing {}", thresholds.display()))?;
    let chart = args.out.join("convergence.svg");
    fs::write(&chart, convergence_svg(&runs))
        .with_context(|| format!("writing {}", chart.display()))?;

    println!("samples to reach loss <= {}:", args.loss_threshold);
    for (label, reached) in &rows {
        match reached {
            Some(n) => println!("  {label:<28} {n}"),
            None => println!("  {label:<28} {NOT_REACHED}"),
        }
    }
    println!("{}", comparison.display());
    println!("{}", chart.display());
    Ok(())
}
