use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Architecture and training hyper-parameters.
///
/// `bands` and `classes` may be left at 0 in a config file; the training
/// entry points fill them from the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SstcConfig {
    pub patch_size: usize,
    pub bands: usize,
    pub classes: usize,
    pub kernel_sizes: Vec<usize>,
    /// Output channels of every branch convolution, before projection.
    pub branch_channels: usize,
    /// Per-branch projected widths; their sum is the model width.
    pub projected_dims: Vec<usize>,
    pub heads: usize,
    pub layers: usize,
    /// FFN hidden width as a multiple of the model width.
    pub ffn_ratio: usize,
    pub positional: bool,
    /// LayerNorm on the center token ahead of the head.
    pub final_norm: bool,
    pub smoothing: f64,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for SstcConfig {
    fn default() -> Self {
        Self {
            patch_size: 5,
            bands: 0,
            classes: 0,
            kernel_sizes: vec![3, 5, 7],
            branch_channels: 32,
            projected_dims: vec![32, 32, 32],
            heads: 4,
            layers: 2,
            ffn_ratio: 2,
            positional: true,
            final_norm: true,
            smoothing: 0.05,
            lr: 1e-3,
            epochs: 10,
            batch_size: 64,
            seed: 0,
        }
    }
}

impl SstcConfig {
    pub fn model_dim(&self) -> usize {
        self.projected_dims.iter().sum()
    }

    pub fn tokens(&self) -> usize {
        self.patch_size * self.patch_size
    }

    /// Flattened index of the center pixel.
    pub fn center_token(&self) -> usize {
        let h = self.patch_size / 2;
        self.patch_size * h + h
    }

    /// Fills data-derived sizes left at 0.
    pub fn with_data_shape(mut self, bands: usize, classes: usize) -> Self {
        if self.bands == 0 {
            self.bands = bands;
        }
        if self.classes == 0 {
            self.classes = classes;
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.patch_size == 0 || self.patch_size.is_multiple_of(2) {
            return fail(format!("patch_size {} must be odd", self.patch_size));
        }
        if self.bands == 0 {
            return fail("bands must be positive".into());
        }
        if self.classes < 2 {
            return fail(format!("need at least 2 classes, got {}", self.classes));
        }
        if self.kernel_sizes.is_empty() {
            return fail("at least one branch is required".into());
        }
        if let Some(k) = self.kernel_sizes.iter().find(|k| *k % 2 == 0) {
            return fail(format!("kernel size {k} must be odd"));
        }
        if self.kernel_sizes.len() != self.projected_dims.len() {
            return fail(format!(
                "{} kernel sizes but {} projected dims",
                self.kernel_sizes.len(),
                self.projected_dims.len()
            ));
        }
        if self.branch_channels == 0 || self.projected_dims.contains(&0) {
            return fail("branch widths must be positive".into());
        }
        if self.heads == 0 || !self.model_dim().is_multiple_of(self.heads) {
            return fail(format!(
                "model dim {} not divisible by {} heads",
                self.model_dim(),
                self.heads
            ));
        }
        if self.layers == 0 || self.ffn_ratio == 0 {
            return fail("layers and ffn_ratio must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.smoothing) {
            return fail(format!("smoothing {} outside [0, 1]", self.smoothing));
        }
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return fail(format!("learning rate {} must be finite and >= 0", self.lr));
        }
        if self.batch_size == 0 {
            return fail("batch_size must be positive".into());
        }
        Ok(())
    }
}
