//! Spectral-spatial transformer classifier: a multi-branch convolutional
//! front end, a pre-norm transformer encoder and a center-token head.

mod checkpoint;
mod config;
mod loss;
mod model;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointManifest};
pub use config::SstcConfig;
pub use loss::{smooth_labels, smooth_targets, smoothed_ce, smoothed_ce_loss, LOG_FLOOR};
pub use model::{argmax_rows, patch_batch, Forward, SstcModel};
pub use train::{train, TrainReport};
