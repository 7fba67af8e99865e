use serde::{Deserialize, Serialize};

use super::{argmax_rows, patch_batch, smooth_targets, smoothed_ce_loss, SstcModel};
use crate::error::{Error, Result};
use crate::hsi::{HsiCube, LabelMap};
use crate::rng::Stream;
use crate::tensor::{Tape, Tensor};

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epoch_loss: Vec<f64>,
    pub epoch_accuracy: Vec<f64>,
    pub samples: usize,
    pub steps: usize,
    /// Digest of all parameters after the last step.
    pub digest: String,
}

struct Adam {
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    t: i32,
}

impl Adam {
    fn new(model: &SstcModel) -> Self {
        let zeros: Vec<Tensor> = model
            .params()
            .iter()
            .map(|p| Tensor::zeros(p.value.shape()))
            .collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    fn step(&mut self, model: &mut SstcModel, lr: f64) {
        self.t += 1;
        let c1 = 1.0 - BETA1.powi(self.t);
        let c2 = 1.0 - BETA2.powi(self.t);
        let params = model.params_mut().iter_mut();
        for ((p, m), v) in params.zip(&mut self.m).zip(&mut self.v) {
            if !p.trainable {
                continue;
            }
            let (value, grad) = (p.value.data_mut(), p.grad.data());
            for i in 0..value.len() {
                let g = grad[i];
                let mi = &mut m.data_mut()[i];
                *mi = BETA1 * *mi + (1.0 - BETA1) * g;
                let vi = &mut v.data_mut()[i];
                *vi = BETA2 * *vi + (1.0 - BETA2) * g * g;
                let mhat = m.data()[i] / c1;
                let vhat = v.data()[i] / c2;
                value[i] -= lr * mhat / (vhat.sqrt() + ADAM_EPS);
            }
        }
    }
}

/// Trains on the labeled `pixels` (flat indices) with Adam on the smoothed
/// cross-entropy. Mini-batch order is a seeded shuffle per epoch.
pub fn train(
    model: &mut SstcModel,
    cube: &HsiCube,
    labels: &LabelMap,
    pixels: &[usize],
) -> Result<TrainReport> {
    let cfg = model.config().clone();
    if !cube.is_normalized() {
        return Err(Error::Contract("training cube must be normalized".into()));
    }
    labels.check_matches(cube)?;
    if cube.bands() != cfg.bands {
        return Err(Error::Config(format!(
            "model expects {} bands, cube has {}",
            cfg.bands,
            cube.bands()
        )));
    }
    if pixels.is_empty() {
        return Err(Error::Argument("no training pixels".into()));
    }
    let ys: Vec<u16> = pixels.iter().map(|&p| labels.labels()[p]).collect();
    if let Some(y) = ys.iter().find(|&&y| y == 0 || y as usize > cfg.classes) {
        return Err(Error::Argument(format!(
            "training label {y} outside 1..={}",
            cfg.classes
        )));
    }
    let mut adam = Adam::new(model);
    let mut report = TrainReport {
        epoch_loss: Vec::new(),
        epoch_accuracy: Vec::new(),
        samples: pixels.len(),
        steps: 0,
        digest: String::new(),
    };
    let mut order: Vec<usize> = (0..pixels.len()).collect();
    for epoch in 0..cfg.epochs {
        Stream::new(cfg.seed, "train-shuffle", epoch as u64).shuffle(&mut order);
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for (step, batch) in order.chunks(cfg.batch_size).enumerate() {
            let px: Vec<usize> = batch.iter().map(|&i| pixels[i]).collect();
            let y: Vec<u16> = batch.iter().map(|&i| ys[i]).collect();
            let patches = patch_batch(cube, &px, cfg.patch_size)?;
            let targets = smooth_targets(&y, cfg.smoothing, cfg.classes)?;
            let mut tape = Tape::new();
            let f = model.forward(&mut tape, &patches)?;
            let loss = smoothed_ce_loss(&mut tape, f.probs, &targets)?;
            let lv = tape.value(loss).item();
            if !lv.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite loss {lv} at epoch {epoch}, step {step}"
                )));
            }
            let pred = argmax_rows(tape.value(f.probs));
            correct += pred.iter().zip(&y).filter(|(a, b)| a == b).count();
            loss_sum += lv * batch.len() as f64;
            model.params_mut().zero_grads();
            tape.backward(loss, model.params_mut(), |p| p.trainable)?;
            adam.step(model, cfg.lr);
            report.steps += 1;
        }
        let n = pixels.len() as f64;
        report.epoch_loss.push(loss_sum / n);
        report.epoch_accuracy.push(correct as f64 / n);
        log::info!(
            "epoch {}/{}: loss {:.4}, train accuracy {:.4}",
            epoch + 1,
            cfg.epochs,
            loss_sum / n,
            correct as f64 / n
        );
    }
    model.params_mut().zero_grads();
    report.digest = model.params().digest();
    Ok(report)
}
