//! Curriculum learning with iterative data pruning for crowd-density regression.
//!
//! The crate covers the whole pipeline at desk scale: synthetic dot-annotated
//! scenes ([`synth`]), Gaussian ground-truth densities ([`density`]), a small
//! hand-differentiated CNN trained with Adam ([`model`]), difficulty scoring
//! and pacing/pruning schedules ([`curriculum`]), evaluation metrics
//! ([`metrics`]) and the on-disk formats tying them together ([`dataio`],
//! [`runlog`]).

pub mod curriculum;
pub mod dataio;
pub mod density;
pub mod error;
pub mod metrics;
pub mod model;
pub mod runlog;
pub mod synth;

pub use curriculum::{
    build_clip_schedule, build_curriculum_schedule, build_standard_schedule, pacing_size,
    pretrain_scorer, prune_size, run_plan, score_samples, ClipConfig, CurriculumPlan, PacingKind,
    PacingParams, PrunePolicy, RunOptions, ScoredDataset, StagePlan,
};
pub use dataio::{
    load_dataset, save_dataset, Dataset, DensityGrid, DotAnnotations, ImageGrid, Point, Sample,
};
pub use density::{gaussian_kernel, render_density, KernelSpec};
pub use error::{ClipError, Result};
pub use metrics::{evaluate, game, mae, psnr, ssim, MetricsRecord};
pub use model::{
    forward, init_model, loss, train_batch, AugmentConfig, ModelParams, OptimizerState,
};
pub use runlog::{RunLog, RunMeta, RunRow};
pub use synth::{generate_dataset, generate_scene, SceneConfig};
