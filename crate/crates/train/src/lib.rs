//! Two-stage GAN training (multi-utterance pretraining, single-clip
//! fine-tuning) and the silhouette-MSE evaluation harness.

pub mod config;
pub mod data;
mod error;
pub mod eval;
pub mod fixtures;
pub mod losses;
pub mod overlay;
pub mod pipeline;
pub mod plan;
pub mod state;
pub mod trainer;

pub use data::{sample_batch, Batch, Example, Pick};
pub use error::{Error, Result};
pub use eval::{build_test_set, evaluate_system, EvalReport, Target, TestCase};
pub use losses::{discriminator_loss, generator_loss, GeneratorLoss, GeneratorLossValues};
pub use overlay::{overlay_layout, render_overlay, OverlayLayout};
pub use pipeline::{evaluate_from_config, train_from_config, EvalOutcome, TrainOutcome};
pub use plan::{LossWeights, LrSchedule, Stage, TrainPlan};
pub use state::{LossStats, TrainState};
pub use trainer::{run_stage, train_step, Control, RunOptions, StepRecord};
