use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::sstc::SstcModel;
use crate::tensor::Tensor;

/// Copies of every LayerNorm affine parameter, keyed by tag.
#[derive(Debug, Clone, PartialEq)]
pub struct LnSnapshot {
    values: BTreeMap<String, Tensor>,
}

impl LnSnapshot {
    pub fn capture(model: &SstcModel) -> Result<Self> {
        let values: BTreeMap<String, Tensor> = model
            .params()
            .iter()
            .filter(|p| p.is_layer_norm_affine())
            .map(|p| (p.tag.clone(), p.value.clone()))
            .collect();
        if values.is_empty() {
            return Err(Error::Config(
                "model has no LayerNorm affine parameters".into(),
            ));
        }
        Ok(Self { values })
    }

    pub fn restore(&self, model: &mut SstcModel) -> Result<()> {
        for p in model.params_mut().iter_mut() {
            if let Some(v) = self.values.get(&p.tag) {
                if v.shape() != p.value.shape() {
                    return Err(Error::Shape(format!(
                        "snapshot of `{}` has shape {:?}",
                        p.tag,
                        v.shape()
                    )));
                }
                p.value.data_mut().copy_from_slice(v.data());
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn tags(&self) -> impl Iterator<Item = &str> {
        self.values.keys().map(String::as_str)
    }

    /// L2 distance between the snapshot and the model's current LN values.
    pub fn distance(&self, model: &SstcModel) -> f64 {
        model
            .params()
            .iter()
            .filter_map(|p| self.values.get(&p.tag).map(|v| (p, v)))
            .flat_map(|(p, v)| {
                p.value
                    .data()
                    .iter()
                    .zip(v.data())
                    .map(|(a, b)| (a - b) * (a - b))
            })
            .sum::<f64>()
            .sqrt()
    }
}
