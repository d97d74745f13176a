//! Optimization of the radiance field against posed images, image metrics,
//! checkpoints and hyper-parameter search.

mod adam;
mod checkpoint;
mod config;
mod loss;
mod search;
mod trainer;

pub use adam::{Adam, AdamState};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::TrainConfig;
pub use loss::{format_db, mse, mse_loss, psnr, psnr_from_mse, scene_psnr};
pub use search::{
    holdout_split, random_search, sample_trial, write_trial_table, SearchOutcome, SearchSpace, Trial, TrialParams,
};
pub use trainer::{evaluate_views, load_views, render_views, train, Snapshot, TrainOutcome, Trainer, TrainingSet};
