//! Test-time adaptation by entropy minimization on confidence-selected
//! samples, updating only LayerNorm affine parameters.

mod adapt;
mod select;
mod snapshot;

pub use adapt::{
    adapt_batch, run_adaptation, target_stream, AdaptConfig, AdaptReport, BatchEntry, ResetMode,
};
pub use select::{adapt_loss, adapt_loss_value, prediction_entropy, select_indices, SelectionMode};
pub use snapshot::LnSnapshot;
