//! Loss-based difficulty scoring, pacing functions and schedule construction
//! for curriculum learning with iterative data pruning, plus the plain
//! shuffled-epoch baseline.
//!
//! A schedule is fully materialized before training: every stage lists its
//! subset and, per epoch, the exact mini-batches. Sample budgets can then be
//! compared between strategies without running a single step.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use log::{debug, info};
use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataio::{Dataset, Sample};
use crate::error::{ClipError, Result};
use crate::metrics::{evaluate, MetricsRecord};
use crate::model::{
    augment, forward, init_model, loss, train_batch, AugmentConfig, ModelParams, OptimizerState,
    DEFAULT_LR,
};
use crate::runlog::{RunLog, RunRow};

pub const DEFAULT_BATCH_SIZE: usize = 8;
pub const DEFAULT_SCORER_EPOCHS: usize = 5;
pub const HOLDOUT_FRACTION: f64 = 0.2;

// guards floor() against representation error in products like 100 * 0.6
const FLOOR_SLACK: f64 = 1e-9;

/// A dataset with one difficulty score per sample and the easy-first order.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredDataset {
    dataset: Dataset,
    scores: Vec<f64>,
    order: Vec<usize>,
}

impl ScoredDataset {
    /// Sorts ascending by score, ties broken by sample id.
    pub fn new(dataset: Dataset, scores: Vec<f64>) -> Result<Self> {
        if scores.len() != dataset.len() {
            return Err(ClipError::argument(format!(
                "{} scores for {} samples",
                scores.len(),
                dataset.len()
            )));
        }
        if let Some(s) = scores.iter().find(|s| !(s.is_finite() && **s >= 0.0)) {
            return Err(ClipError::argument(format!(
                "score {s} is negative or not finite"
            )));
        }
        let mut order: Vec<usize> = (0..dataset.len()).collect();
        order.sort_by(|&a, &b| {
            scores[a]
                .total_cmp(&scores[b])
                .then_with(|| dataset.get(a).id.cmp(&dataset.get(b).id))
        });
        Ok(Self {
            dataset,
            scores,
            order,
        })
    }

    pub fn dataset(&self) -> &Dataset {
        &self.dataset
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    /// Sample indices, easiest first.
    pub fn order(&self) -> &[usize] {
        &self.order
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn score_of(&self, id: &str) -> Option<f64> {
        self.dataset.find(id).map(|i| self.scores[i])
    }
}

/// Per-sample loss of `scoring_model` on every sample, no augmentation.
pub fn score_samples(dataset: &Dataset, scoring_model: &ModelParams) -> Result<ScoredDataset> {
    let scores = dataset
        .samples()
        .iter()
        .map(|s| loss(&forward(scoring_model, &s.image)?, s.density_or_err()?))
        .collect::<Result<Vec<_>>>()?;
    ScoredDataset::new(dataset.clone(), scores)
}

/// Trains a fresh model for `epochs` plain shuffled epochs; used only to score.
pub fn pretrain_scorer(dataset: &Dataset, epochs: usize, seed: u64) -> Result<ModelParams> {
    if dataset.is_empty() {
        return Err(ClipError::argument(
            "cannot pretrain a scorer on an empty dataset",
        ));
    }
    let mut params = init_model(seed);
    if epochs == 0 {
        return Ok(params);
    }
    let batch_size = DEFAULT_BATCH_SIZE.min(dataset.len());
    let plan = build_standard_schedule(dataset, epochs, batch_size, seed)?;
    let mut opt = OptimizerState::new(DEFAULT_LR);
    let mut batch: Vec<Sample> = Vec::with_capacity(batch_size);
    for stage in &plan.stages {
        for (e, epoch) in stage.epochs.iter().enumerate() {
            let mut total = 0.0;
            for b in epoch {
                batch.clear();
                batch.extend(b.iter().map(|&i| dataset.get(i).clone()));
                total += train_batch(&mut params, &mut opt, &batch)? * b.len() as f64;
            }
            debug!(
                "scorer epoch {}: loss {:.6}",
                e + 1,
                total / dataset.len() as f64
            );
        }
    }
    Ok(params)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PacingKind {
    Linear,
    Quadratic,
}

impl fmt::Display for PacingKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PacingKind::Linear => "linear",
            PacingKind::Quadratic => "quadratic",
        })
    }
}

impl FromStr for PacingKind {
    type Err = ClipError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(PacingKind::Linear),
            "quadratic" => Ok(PacingKind::Quadratic),
            other => Err(ClipError::argument(format!(
                "unknown pacing function {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PacingParams {
    pub kind: PacingKind,
    /// Fraction of the data available at stage 0, in `(0, 1]`.
    pub start_fraction: f64,
    pub stages: usize,
    pub epochs_per_stage: usize,
}

impl Default for PacingParams {
    fn default() -> Self {
        Self {
            kind: PacingKind::Quadratic,
            start_fraction: 0.2,
            stages: 10,
            epochs_per_stage: 2,
        }
    }
}

impl PacingParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.start_fraction > 0.0 && self.start_fraction <= 1.0) {
            return Err(ClipError::argument(format!(
                "start fraction must be in (0, 1], got {}",
                self.start_fraction
            )));
        }
        if self.stages == 0 || self.epochs_per_stage == 0 {
            return Err(ClipError::argument(
                "stages and epochs per stage must be >= 1",
            ));
        }
        Ok(())
    }

    pub fn total_epochs(&self) -> usize {
        self.stages * self.epochs_per_stage
    }

    /// Fraction of the data exposed at `stage` (1-based), before clamping.
    pub fn fraction(&self, stage: usize) -> f64 {
        let t = stage as f64 / self.stages as f64;
        let growth = match self.kind {
            PacingKind::Linear => t,
            PacingKind::Quadratic => t * t,
        };
        (self.start_fraction + (1.0 - self.start_fraction) * growth).min(1.0)
    }
}

/// Number of samples exposed at `stage` (1-based) out of `n`, never fewer than
/// `min(batch_size, n)`.
pub fn pacing_size(
    params: &PacingParams,
    stage: usize,
    n: usize,
    batch_size: usize,
) -> Result<usize> {
    params.validate()?;
    if stage == 0 || stage > params.stages {
        return Err(ClipError::argument(format!(
            "stage {stage} outside 1..={}",
            params.stages
        )));
    }
    let raw = (n as f64 * params.fraction(stage) + FLOOR_SLACK).floor() as usize;
    Ok(raw.min(n).max(batch_size.min(n)))
}

/// Subset size after eliminating the `epsilon` fraction: `floor(size * (1 - epsilon))`,
/// kept at 1 or more for non-empty subsets.
pub fn prune_size(size: usize, epsilon: f64) -> usize {
    let kept = (size as f64 * (1.0 - epsilon) + FLOOR_SLACK).floor() as usize;
    if size >= 1 {
        kept.clamp(1, size)
    } else {
        0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrunePolicy {
    /// Keep the easiest `effective` samples of the exposed prefix.
    PrefixTruncate,
    /// Drop the lowest-loss samples from the pool for good, stage after stage.
    PruneEasiest,
}

impl fmt::Display for PrunePolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PrunePolicy::PrefixTruncate => "prefix_truncate",
            PrunePolicy::PruneEasiest => "prune_easiest",
        })
    }
}

impl FromStr for PrunePolicy {
    type Err = ClipError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "prefix_truncate" | "prefix-truncate" => Ok(PrunePolicy::PrefixTruncate),
            "prune_easiest" | "prune-easiest" => Ok(PrunePolicy::PruneEasiest),
            other => Err(ClipError::argument(format!(
                "unknown prune policy {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClipConfig {
    /// Elimination ratio per stage, in `[0, 1)`.
    pub epsilon: f64,
    pub prune_policy: PrunePolicy,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for ClipConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.05,
            prune_policy: PrunePolicy::PrefixTruncate,
            batch_size: DEFAULT_BATCH_SIZE,
            seed: 0,
        }
    }
}

impl ClipConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.epsilon) {
            return Err(ClipError::argument(format!(
                "epsilon must be in [0, 1), got {}",
                self.epsilon
            )));
        }
        if self.batch_size == 0 {
            return Err(ClipError::argument("batch size must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StagePlan {
    /// 1-based.
    pub stage_index: usize,
    /// Pacing size before elimination.
    pub raw_size: usize,
    pub subset_size: usize,
    /// Dataset indices trained on during this stage, easiest first.
    pub subset_indices: Vec<usize>,
    /// `epochs[e][b]` lists the dataset indices of batch `b` in epoch `e`.
    pub epochs: Vec<Vec<Vec<usize>>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CurriculumPlan {
    pub stages: Vec<StagePlan>,
    pub total_samples_consumed: usize,
}

/// Position of one epoch inside a plan.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EpochMark {
    pub stage: usize,
    /// 1-based, counted across stages.
    pub epoch: usize,
    pub samples_cum: usize,
}

impl CurriculumPlan {
    fn from_stages(stages: Vec<StagePlan>) -> Self {
        let total = stages
            .iter()
            .flat_map(|s| &s.epochs)
            .flatten()
            .map(Vec::len)
            .sum();
        Self {
            stages,
            total_samples_consumed: total,
        }
    }

    pub fn total_epochs(&self) -> usize {
        self.stages.iter().map(|s| s.epochs.len()).sum()
    }

    pub fn stage_sizes(&self) -> Vec<usize> {
        self.stages.iter().map(|s| s.subset_size).collect()
    }

    /// Cumulative samples consumed at the end of every epoch.
    pub fn epoch_marks(&self) -> Vec<EpochMark> {
        let mut marks = Vec::with_capacity(self.total_epochs());
        let mut cum = 0;
        for stage in &self.stages {
            for epoch in &stage.epochs {
                cum += epoch.iter().map(Vec::len).sum::<usize>();
                marks.push(EpochMark {
                    stage: stage.stage_index,
                    epoch: marks.len() + 1,
                    samples_cum: cum,
                });
            }
        }
        marks
    }

    /// Debug dump: stage sizes and subset ids.
    pub fn to_json(&self, dataset: &Dataset) -> serde_json::Value {
        let stages: Vec<_> = self
            .stages
            .iter()
            .map(|s| {
                let ids: Vec<&str> = s
                    .subset_indices
                    .iter()
                    .map(|&i| dataset.get(i).id.as_str())
                    .collect();
                serde_json::json!({
                    "stage": s.stage_index,
                    "raw_size": s.raw_size,
                    "size": s.subset_size,
                    "epochs": s.epochs.len(),
                    "subset_ids": ids,
                })
            })
            .collect();
        serde_json::json!({
            "total_samples_consumed": self.total_samples_consumed,
            "stages": stages,
        })
    }
}

fn shuffled_epochs(
    subset: &[usize],
    epochs: usize,
    batch_size: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<Vec<Vec<usize>>> {
    (0..epochs)
        .map(|_| {
            let mut perm = subset.to_vec();
            perm.shuffle(rng);
            perm.chunks(batch_size).map(<[usize]>::to_vec).collect()
        })
        .collect()
}

fn check_batch_fits(stage: usize, subset: usize, batch_size: usize) -> Result<()> {
    if batch_size > subset {
        return Err(ClipError::Config {
            stage,
            message: format!("batch size {batch_size} exceeds the {subset}-sample subset"),
        });
    }
    Ok(())
}

/// Curriculum schedule with iterative pruning.
///
/// Stage `i` exposes `pacing_size(i)` samples and trains on
/// `prune_size(pacing_size(i), epsilon)` of them, chosen by `cfg.prune_policy`.
/// Each epoch reshuffles the stage subset and cuts it into batches.
pub fn build_clip_schedule(
    scored: &ScoredDataset,
    pacing: &PacingParams,
    cfg: &ClipConfig,
) -> Result<CurriculumPlan> {
    if scored.is_empty() {
        return Err(ClipError::argument("cannot schedule an empty dataset"));
    }
    pacing.validate()?;
    cfg.validate()?;
    let n = scored.len();
    let order = scored.order();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    // survivors of permanent elimination, easiest first (prune_easiest only)
    let mut pool: Vec<usize> = order.to_vec();

    let mut stages = Vec::with_capacity(pacing.stages);
    for i in 1..=pacing.stages {
        let raw = pacing_size(pacing, i, n, cfg.batch_size)?;
        let effective = prune_size(raw, cfg.epsilon);
        let subset: Vec<usize> = match cfg.prune_policy {
            PrunePolicy::PrefixTruncate => order[..effective].to_vec(),
            PrunePolicy::PruneEasiest => {
                let floor = cfg.batch_size.min(pool.len());
                let remove = (raw - effective).min(pool.len() - floor);
                pool.drain(..remove);
                pool[..effective.min(pool.len())].to_vec()
            }
        };
        check_batch_fits(i, subset.len(), cfg.batch_size)?;
        debug!("stage {i}: raw {raw}, training on {}", subset.len());
        let epochs = shuffled_epochs(&subset, pacing.epochs_per_stage, cfg.batch_size, &mut rng);
        stages.push(StagePlan {
            stage_index: i,
            raw_size: raw,
            subset_size: subset.len(),
            subset_indices: subset,
            epochs,
        });
    }
    Ok(CurriculumPlan::from_stages(stages))
}

/// Plain curriculum schedule (no elimination): stage `i` trains on the
/// easiest `pacing_size(i)` samples.
pub fn build_curriculum_schedule(
    scored: &ScoredDataset,
    pacing: &PacingParams,
    batch_size: usize,
    seed: u64,
) -> Result<CurriculumPlan> {
    if scored.is_empty() {
        return Err(ClipError::argument("cannot schedule an empty dataset"));
    }
    if batch_size == 0 {
        return Err(ClipError::argument("batch size must be >= 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut stages = Vec::with_capacity(pacing.stages);
    for i in 1..=pacing.stages {
        let size = pacing_size(pacing, i, scored.len(), batch_size)?;
        check_batch_fits(i, size, batch_size)?;
        let subset = scored.order()[..size].to_vec();
        let epochs = shuffled_epochs(&subset, pacing.epochs_per_stage, batch_size, &mut rng);
        stages.push(StagePlan {
            stage_index: i,
            raw_size: size,
            subset_size: size,
            subset_indices: subset,
            epochs,
        });
    }
    Ok(CurriculumPlan::from_stages(stages))
}

/// Baseline: one stage of `total_epochs` shuffled passes over the full dataset.
pub fn build_standard_schedule(
    dataset: &Dataset,
    total_epochs: usize,
    batch_size: usize,
    seed: u64,
) -> Result<CurriculumPlan> {
    if dataset.is_empty() {
        return Err(ClipError::argument("cannot schedule an empty dataset"));
    }
    if batch_size == 0 {
        return Err(ClipError::argument("batch size must be >= 1"));
    }
    check_batch_fits(1, dataset.len(), batch_size)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let subset: Vec<usize> = (0..dataset.len()).collect();
    let epochs = shuffled_epochs(&subset, total_epochs, batch_size, &mut rng);
    Ok(CurriculumPlan::from_stages(vec![StagePlan {
        stage_index: 1,
        raw_size: dataset.len(),
        subset_size: dataset.len(),
        subset_indices: subset,
        epochs,
    }]))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunOptions {
    pub model_seed: u64,
    pub augment: AugmentConfig,
    pub lr: f64,
    pub game_level: u32,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            model_seed: 0,
            augment: AugmentConfig::default(),
            lr: DEFAULT_LR,
            game_level: 2,
        }
    }
}

/// Validation metrics of `params` over every sample of `dataset`.
pub fn evaluate_model(
    params: &ModelParams,
    dataset: &Dataset,
    game_level: u32,
) -> Result<MetricsRecord> {
    let preds = dataset
        .samples()
        .iter()
        .map(|s| forward(params, &s.image))
        .collect::<Result<Vec<_>>>()?;
    evaluate(&preds, dataset, game_level)
}

/// Trains a fresh model through `plan` (indices into `train`) and logs one row
/// per epoch: cumulative samples, mean pre-step batch loss, validation metrics.
pub fn run_plan(
    plan: &CurriculumPlan,
    train: &Dataset,
    validation: &Dataset,
    opts: &RunOptions,
) -> Result<(ModelParams, RunLog)> {
    if validation.is_empty() {
        return Err(ClipError::argument(
            "run_plan needs a non-empty validation split",
        ));
    }
    opts.augment.validate()?;
    if let Some(bad) = plan
        .stages
        .iter()
        .flat_map(|s| s.epochs.iter().flatten().flatten())
        .find(|&&i| i >= train.len())
    {
        return Err(ClipError::argument(format!(
            "plan references sample {bad} but the dataset has {}",
            train.len()
        )));
    }

    let mut params = init_model(opts.model_seed);
    let mut opt = OptimizerState::new(opts.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.model_seed);
    rng.set_stream(1);

    let mut rows = Vec::with_capacity(plan.total_epochs());
    let mut samples_cum = 0usize;
    let mut batch = Vec::new();
    for stage in &plan.stages {
        for epoch in &stage.epochs {
            let (mut loss_sum, mut seen) = (0.0, 0usize);
            for b in epoch {
                batch.clear();
                batch.extend(
                    b.iter()
                        .map(|&i| augment(train.get(i), &opts.augment, &mut rng)),
                );
                loss_sum += train_batch(&mut params, &mut opt, &batch)? * b.len() as f64;
                seen += b.len();
            }
            samples_cum += seen;
            let val = evaluate_model(&params, validation, opts.game_level)?;
            let row = RunRow {
                stage: stage.stage_index,
                epoch: rows.len() + 1,
                samples_cum,
                train_loss: loss_sum / seen.max(1) as f64,
                val_mae: val.mae,
                val_game: val.game,
                val_ssim: val.ssim,
                val_psnr: val.psnr_for_log(),
            };
            info!(
                "stage {} epoch {}: samples {} loss {:.6} val mae {:.3}",
                row.stage, row.epoch, row.samples_cum, row.train_loss, row.val_mae
            );
            rows.push(row);
        }
    }
    Ok((params, RunLog::new(rows)))
}

/// Writes `id score` lines, easiest first.
pub fn write_scores(path: &Path, scored: &ScoredDataset) -> Result<()> {
    let mut out = String::new();
    for &i in scored.order() {
        out.push_str(&format!(
            "{} {}\n",
            scored.dataset().get(i).id,
            scored.scores()[i]
        ));
    }
    fs::write(path, out).map_err(|e| ClipError::io(path, e))
}

/// Attaches scores read from an `id score` file to `dataset`. Every sample
/// needs exactly one line; ids not in the dataset are rejected.
pub fn read_scores(path: &Path, dataset: &Dataset) -> Result<ScoredDataset> {
    let text = fs::read_to_string(path).map_err(|e| ClipError::io(path, e))?;
    let mut scores = vec![None; dataset.len()];
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let bad = |msg: String| ClipError::format(path, format!("line {}: {msg}", lineno + 1));
        let (id, score) = line
            .rsplit_once(char::is_whitespace)
            .ok_or_else(|| bad(format!("expected \"id score\", got {line:?}")))?;
        let score: f64 = score
            .trim()
            .parse()
            .map_err(|_| bad(format!("bad score {score:?}")))?;
        let idx = dataset
            .find(id.trim())
            .ok_or_else(|| bad(format!("unknown sample id {:?}", id.trim())))?;
        if scores[idx].replace(score).is_some() {
            return Err(bad(format!("duplicate score for {:?}", id.trim())));
        }
    }
    let scores = scores
        .into_iter()
        .enumerate()
        .map(|(i, s)| {
            s.ok_or_else(|| {
                ClipError::format(path, format!("no score for sample {}", dataset.get(i).id))
            })
        })
        .collect::<Result<Vec<_>>>()?;
    ScoredDataset::new(dataset.clone(), scores)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::{DensityGrid, DotAnnotations, ImageGrid};
    use proptest::prelude::*;

    fn toy_dataset(n: usize) -> Dataset {
        let samples = (0..n)
            .map(|i| Sample {
                id: format!("t{i:03}"),
                image: ImageGrid::zeros(8, 8),
                dots: DotAnnotations::default(),
                density: Some(DensityGrid::zeros(8, 8)),
            })
            .collect();
        Dataset::new(samples, 2.0).unwrap()
    }

    fn scored(n: usize, seed: u64) -> ScoredDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scores = (0..n).map(|_| rand::Rng::random::<f64>(&mut rng)).collect();
        ScoredDataset::new(toy_dataset(n), scores).unwrap()
    }

    fn pacing(kind: PacingKind, b0: f64, stages: usize) -> PacingParams {
        PacingParams {
            kind,
            start_fraction: b0,
            stages,
            epochs_per_stage: 2,
        }
    }

    #[test]
    fn pacing_examples() {
        let lin = pacing(PacingKind::Linear, 0.2, 10);
        let quad = pacing(PacingKind::Quadratic, 0.2, 10);
        assert_eq!(pacing_size(&lin, 5, 100, 8).unwrap(), 60);
        assert_eq!(pacing_size(&quad, 5, 100, 8).unwrap(), 40);
        assert_eq!(pacing_size(&lin, 10, 100, 8).unwrap(), 100);
        assert_eq!(pacing_size(&quad, 10, 97, 8).unwrap(), 97);
        assert!(pacing_size(&lin, 0, 100, 8).is_err());
        assert!(pacing_size(&lin, 11, 100, 8).is_err());
    }

    #[test]
    fn pacing_clamps_to_batch() {
        let p = pacing(PacingKind::Linear, 0.01, 100);
        assert_eq!(pacing_size(&p, 1, 100, 8).unwrap(), 8);
        assert_eq!(pacing_size(&p, 1, 5, 8).unwrap(), 5);
    }

    #[test]
    fn prune_examples() {
        assert_eq!(prune_size(40, 0.05), 38);
        assert_eq!(prune_size(40, 0.0), 40);
        assert_eq!(prune_size(1, 0.5), 1);
        assert_eq!(prune_size(0, 0.5), 0);
        assert_eq!(prune_size(7, 0.05), 6);
    }

    #[test]
    fn perfect_scorer_orders_by_id() {
        let ds = toy_dataset(5);
        let s = score_samples(&ds, &ModelParams::zeros()).unwrap();
        assert!(s.scores().iter().all(|&x| x == 0.0));
        assert_eq!(s.order(), &[0, 1, 2, 3, 4]);
    }

    #[test]
    fn scores_reject_bad_values() {
        assert!(ScoredDataset::new(toy_dataset(2), vec![1.0]).is_err());
        assert!(ScoredDataset::new(toy_dataset(2), vec![1.0, -0.5]).is_err());
        assert!(ScoredDataset::new(toy_dataset(2), vec![1.0, f64::NAN]).is_err());
    }

    #[test]
    fn batch_too_large_names_stage() {
        let s = scored(20, 1);
        let cfg = ClipConfig {
            batch_size: 7,
            ..Default::default()
        };
        // stage 1: raw max(7, 7) -> 6 after elimination
        let err = build_clip_schedule(&s, &pacing(PacingKind::Linear, 0.2, 5), &cfg).unwrap_err();
        assert!(matches!(err, ClipError::Config { stage: 1, .. }), "{err}");
    }

    #[test]
    fn standard_schedule_counts() {
        let ds = toy_dataset(23);
        let plan = build_standard_schedule(&ds, 4, 5, 9).unwrap();
        assert_eq!(plan.total_samples_consumed, 4 * 23);
        for epoch in &plan.stages[0].epochs {
            let mut seen: Vec<usize> = epoch.iter().flatten().copied().collect();
            seen.sort_unstable();
            assert_eq!(seen, (0..23).collect::<Vec<_>>());
            assert_eq!(epoch.last().unwrap().len(), 3);
        }
        assert_eq!(plan, build_standard_schedule(&ds, 4, 5, 9).unwrap());
        assert_ne!(plan, build_standard_schedule(&ds, 4, 5, 10).unwrap());
        assert!(build_standard_schedule(&ds, 4, 24, 9).is_err());
    }

    #[test]
    fn prune_easiest_drops_lowest_scores_for_good() {
        let s = scored(100, 4);
        let cfg = ClipConfig {
            prune_policy: PrunePolicy::PruneEasiest,
            batch_size: 4,
            ..Default::default()
        };
        let plan = build_clip_schedule(&s, &pacing(PacingKind::Linear, 0.2, 5), &cfg).unwrap();
        let order = s.order();
        let mut removed = 0;
        for stage in &plan.stages {
            let dropped = stage.raw_size - prune_size(stage.raw_size, cfg.epsilon);
            removed += dropped;
            // the subset starts right after everything eliminated so far
            assert_eq!(stage.subset_indices[0], order[removed]);
            assert!(dropped as f64 <= (cfg.epsilon * 100.0).ceil());
        }
        // eliminated samples never return
        let first_kept = plan.stages[0].subset_indices[0];
        let first_removed = order[0];
        assert_ne!(first_kept, first_removed);
        for stage in &plan.stages[1..] {
            assert!(!stage.subset_indices.contains(&first_removed));
        }
    }

    #[test]
    fn prune_easiest_keeps_a_batch() {
        let s = scored(12, 2);
        let cfg = ClipConfig {
            epsilon: 0.9,
            prune_policy: PrunePolicy::PruneEasiest,
            batch_size: 1,
            seed: 3,
        };
        let plan = build_clip_schedule(&s, &pacing(PacingKind::Linear, 0.5, 6), &cfg).unwrap();
        assert!(plan.stages.iter().all(|st| st.subset_size >= 1));
    }

    #[test]
    fn score_file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let s = scored(10, 8);
        let path = dir.path().join("scores.txt");
        write_scores(&path, &s).unwrap();
        let back = read_scores(&path, s.dataset()).unwrap();
        assert_eq!(back, s);
        std::fs::write(&path, "t000 1.0\n").unwrap();
        assert!(read_scores(&path, s.dataset()).is_err());
        std::fs::write(&path, "nope 1.0\n").unwrap();
        assert!(read_scores(&path, s.dataset()).is_err());
    }

    #[test]
    fn plan_dump_lists_ids() {
        let s = scored(20, 3);
        let cfg = ClipConfig {
            batch_size: 2,
            ..Default::default()
        };
        let plan = build_clip_schedule(&s, &pacing(PacingKind::Linear, 0.2, 5), &cfg).unwrap();
        let json = plan.to_json(s.dataset());
        assert_eq!(json["stages"][0]["size"], 6);
        assert_eq!(json["stages"][0]["subset_ids"].as_array().unwrap().len(), 6);
        assert_eq!(json["total_samples_consumed"], plan.total_samples_consumed);
    }

    fn arb_pacing() -> impl Strategy<Value = PacingParams> {
        (
            prop_oneof![Just(PacingKind::Linear), Just(PacingKind::Quadratic)],
            0.05f64..=1.0,
            1usize..12,
            1usize..4,
        )
            .prop_map(|(kind, b0, stages, eps)| PacingParams {
                kind,
                start_fraction: b0,
                stages,
                epochs_per_stage: eps,
            })
    }

    proptest! {
        #[test]
        fn pacing_is_non_decreasing(p in arb_pacing(), n in 1usize..500, bs in 1usize..16) {
            let sizes: Vec<_> = (1..=p.stages).map(|i| pacing_size(&p, i, n, bs).unwrap()).collect();
            prop_assert!(sizes.windows(2).all(|w| w[0] <= w[1]));
            prop_assert_eq!(*sizes.last().unwrap(), n);
        }

        #[test]
        fn clip_plan_invariants(
            p in arb_pacing(),
            n in 30usize..120,
            eps in 0.0f64..0.3,
            easiest in any::<bool>(),
            seed in any::<u64>(),
        ) {
            let p = PacingParams { start_fraction: p.start_fraction.max(0.2), ..p };
            let s = scored(n, seed);
            let cfg = ClipConfig {
                epsilon: eps,
                prune_policy: if easiest { PrunePolicy::PruneEasiest } else { PrunePolicy::PrefixTruncate },
                batch_size: 4,
                seed,
            };
            let plan = build_clip_schedule(&s, &p, &cfg).unwrap();
            let mut total = 0;
            for (i, stage) in plan.stages.iter().enumerate() {
                let raw = pacing_size(&p, i + 1, n, 4).unwrap();
                prop_assert_eq!(stage.raw_size, raw);
                if !easiest {
                    prop_assert_eq!(stage.subset_size, prune_size(raw, eps));
                }
                let mut subset = stage.subset_indices.clone();
                subset.sort_unstable();
                for epoch in &stage.epochs {
                    let mut seen: Vec<usize> = epoch.iter().flatten().copied().collect();
                    seen.sort_unstable();
                    prop_assert_eq!(&seen, &subset);
                    prop_assert!(epoch.iter().all(|b| !b.is_empty() && b.len() <= 4));
                    total += seen.len();
                }
            }
            prop_assert_eq!(total, plan.total_samples_consumed);
        }

        #[test]
        fn prefix_subsets_are_nested(p in arb_pacing(), n in 20usize..80, seed in any::<u64>()) {
            let p = PacingParams { start_fraction: p.start_fraction.max(0.2), ..p };
            let s = scored(n, seed);
            let cfg = ClipConfig { batch_size: 2, seed, ..Default::default() };
            let plan = build_clip_schedule(&s, &p, &cfg).unwrap();
            for w in plan.stages.windows(2) {
                prop_assert!(w[0].subset_indices.iter().all(|i| w[1].subset_indices.contains(i)));
            }
        }

        #[test]
        fn scores_follow_ids_not_positions(seed in any::<u64>(), n in 2usize..30) {
            let s = scored(n, seed);
            let mut samples = s.dataset().samples().to_vec();
            let mut scores = s.scores().to_vec();
            samples.reverse();
            scores.reverse();
            let rev = ScoredDataset::new(Dataset::new(samples, 2.0).unwrap(), scores).unwrap();
            for sample in s.dataset().samples() {
                prop_assert_eq!(rev.score_of(&sample.id), s.score_of(&sample.id));
            }
            let ordered: Vec<f64> = rev.order().iter().map(|&i| rev.scores()[i]).collect();
            prop_assert!(ordered.windows(2).all(|w| w[0] <= w[1]));
        }
    }
}
