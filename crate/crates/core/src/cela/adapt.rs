use serde::{Deserialize, Serialize};

use super::{adapt_loss, adapt_loss_value, select_indices, LnSnapshot, SelectionMode};
use crate::error::{Error, Result};
use crate::hsi::HsiCube;
use crate::rng::Stream;
use crate::sstc::{argmax_rows, patch_batch, SstcModel};
use crate::tensor::{Tape, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResetMode {
    /// Restore pretrained LN values before every batch.
    PerBatch,
    /// Restore once; updates carry over from batch to batch.
    PerRun,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdaptConfig {
    pub tau: f64,
    pub top_fraction: f64,
    pub lr: f64,
    pub steps: usize,
    pub batch_size: usize,
    pub reset_mode: ResetMode,
    /// Seeds the order of the target stream.
    pub seed: u64,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        Self {
            tau: 0.8,
            top_fraction: 0.3,
            lr: 1e-3,
            steps: 1,
            batch_size: 64,
            reset_mode: ResetMode::PerRun,
            seed: 0,
        }
    }
}

impl AdaptConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return fail(format!("tau {} outside (0, 1)", self.tau));
        }
        if !(self.top_fraction > 0.0 && self.top_fraction < 1.0) {
            return fail(format!("top fraction {} outside (0, 1)", self.top_fraction));
        }
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return fail(format!("learning rate {} must be finite and >= 0", self.lr));
        }
        if self.steps == 0 || self.batch_size == 0 {
            return fail("steps and batch_size must be at least 1".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchEntry {
    pub size: usize,
    /// Size of the index set used at the first step.
    pub selected: usize,
    pub mode: SelectionMode,
    /// Mean entropy of the first step's selection, before and after updating.
    pub entropy_before: f64,
    pub entropy_after: f64,
    /// L2 norm of the change in LN affine values made by this batch.
    pub ln_delta_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptReport {
    pub config: AdaptConfig,
    /// Flat pixel index of every prediction, in stream order.
    pub stream: Vec<usize>,
    pub batches: Vec<BatchEntry>,
    pub ln_digest_before: String,
    pub ln_digest_after: String,
    pub frozen_digest: String,
}

/// Target pixels in the order adaptation visits them: a seeded shuffle.
pub fn target_stream(pixels: &[usize], seed: u64) -> Vec<usize> {
    let mut order = pixels.to_vec();
    Stream::new(seed, "adapt-stream", 0).shuffle(&mut order);
    order
}

/// `steps` rounds of entropy descent on `patches`, updating LN affine values
/// by plain SGD, then predictions from a final forward pass.
pub fn adapt_batch(
    model: &mut SstcModel,
    patches: &Tensor,
    config: &AdaptConfig,
) -> Result<(Vec<u16>, BatchEntry)> {
    let before = LnSnapshot::capture(model)?;
    // The feature front end has no LN parameters, so its output is fixed
    // for the whole batch.
    let tokens = model.mrf_tokens_value(patches)?;
    let mut first: Option<(Vec<usize>, SelectionMode, f64)> = None;
    for _ in 0..config.steps {
        let mut tape = Tape::new();
        let t = tape.input(tokens.clone());
        let f = model.forward_tokens(&mut tape, t)?;
        let (selected, mode) =
            select_indices(tape.value(f.probs), config.tau, config.top_fraction)?;
        let loss = adapt_loss(&mut tape, f.probs, &selected)?;
        let lv = tape.value(loss).item();
        if !lv.is_finite() {
            return Err(Error::Numeric(format!("adaptation loss is {lv}")));
        }
        if first.is_none() {
            first = Some((selected, mode, lv));
        }
        let params = model.params_mut();
        for p in params.iter_mut().filter(|p| p.is_layer_norm_affine()) {
            p.grad.data_mut().fill(0.0);
        }
        tape.backward(loss, params, |p| p.is_layer_norm_affine())?;
        for p in params.iter_mut().filter(|p| p.is_layer_norm_affine()) {
            let g = p.grad.data().to_vec();
            for (v, g) in p.value.data_mut().iter_mut().zip(g) {
                *v -= config.lr * g;
            }
            p.grad.data_mut().fill(0.0);
        }
    }
    let (selected, mode, entropy_before) = first.expect("at least one step");
    let probs = model.classify_tokens(&tokens)?;
    let entry = BatchEntry {
        size: probs.rows(),
        selected: selected.len(),
        mode,
        entropy_before,
        entropy_after: adapt_loss_value(&probs, &selected)?,
        ln_delta_norm: before.distance(model),
    };
    Ok((argmax_rows(&probs), entry))
}

/// Adapts over `stream` (flat pixel indices of `cube`) batch by batch and
/// returns one prediction per stream entry.
pub fn run_adaptation(
    model: &mut SstcModel,
    cube: &HsiCube,
    stream: &[usize],
    config: &AdaptConfig,
) -> Result<(Vec<u16>, AdaptReport)> {
    config.validate()?;
    if cube.bands() != model.config().bands {
        return Err(Error::Shape(format!(
            "model expects {} bands, cube has {}",
            model.config().bands,
            cube.bands()
        )));
    }
    let snapshot = LnSnapshot::capture(model)?;
    snapshot.restore(model)?;
    let ln_only = |p: &crate::tensor::Parameter| p.is_layer_norm_affine();
    let frozen_digest = model.params().digest_where(|p| !ln_only(p));
    let ln_digest_before = model.params().digest_where(ln_only);
    let mut predictions = Vec::with_capacity(stream.len());
    let mut batches = Vec::new();
    for (i, chunk) in stream.chunks(config.batch_size).enumerate() {
        if config.reset_mode == ResetMode::PerBatch {
            snapshot.restore(model)?;
        }
        let patches = patch_batch(cube, chunk, model.config().patch_size)?;
        let (pred, entry) = adapt_batch(model, &patches, config)?;
        log::debug!(
            "batch {i}: {} selected ({:?}), entropy {:.4} -> {:.4}",
            entry.selected,
            entry.mode,
            entry.entropy_before,
            entry.entropy_after
        );
        predictions.extend(pred);
        batches.push(entry);
    }
    let after = model.params().digest_where(|p| !ln_only(p));
    if after != frozen_digest {
        return Err(Error::Numeric(
            "a non-LayerNorm parameter changed during adaptation".into(),
        ));
    }
    let report = AdaptReport {
        config: config.clone(),
        stream: stream.to_vec(),
        batches,
        ln_digest_before,
        ln_digest_after: model.params().digest_where(ln_only),
        frozen_digest,
    };
    Ok((predictions, report))
}

#[cfg(test)]
#[path = "adapt_tests.rs"]
mod tests;
