use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sstc::LOG_FLOOR;
use crate::tensor::{Tape, Tensor, Var};

/// Which branch of the selection rule produced the index set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMode {
    Threshold,
    Topk,
}

fn check_distribution(probs: &Tensor) -> Result<()> {
    if probs.shape().len() != 2 {
        return Err(Error::Shape(format!(
            "probabilities {:?} must be [B, K]",
            probs.shape()
        )));
    }
    for r in 0..probs.rows() {
        let s: f64 = probs.row(r).iter().sum();
        if (s - 1.0).abs() > 1e-4 || probs.row(r).iter().any(|&p| p < 0.0) {
            return Err(Error::Numeric(format!(
                "row {r} is not a distribution (sum {s})"
            )));
        }
    }
    Ok(())
}

/// Shannon entropy per row, with `0 ln 0 = 0`.
pub fn prediction_entropy(probs: &Tensor) -> Result<Vec<f64>> {
    check_distribution(probs)?;
    Ok((0..probs.rows())
        .map(|r| {
            -probs
                .row(r)
                .iter()
                .filter(|&&p| p > 0.0)
                .map(|&p| p * p.ln())
                .sum::<f64>()
        })
        .collect())
}

/// Rows whose top probability exceeds `tau`, if there are at least
/// `ceil(top_fraction * B)` of them; otherwise the `ceil(top_fraction * B)`
/// most confident rows, ties to the lower index. Indices come back sorted.
pub fn select_indices(
    probs: &Tensor,
    tau: f64,
    top_fraction: f64,
) -> Result<(Vec<usize>, SelectionMode)> {
    let b = probs.rows();
    if b == 0 || probs.is_empty() {
        return Err(Error::Argument("cannot select from an empty batch".into()));
    }
    let conf: Vec<f64> = (0..b)
        .map(|r| {
            probs
                .row(r)
                .iter()
                .cloned()
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .collect();
    let k = ((top_fraction * b as f64).ceil() as usize).clamp(1, b);
    let above: Vec<usize> = (0..b).filter(|&j| conf[j] > tau).collect();
    if above.len() >= k {
        return Ok((above, SelectionMode::Threshold));
    }
    let mut order: Vec<usize> = (0..b).collect();
    order.sort_by(|&i, &j| conf[j].total_cmp(&conf[i]).then(i.cmp(&j)));
    let mut top = order[..k].to_vec();
    top.sort_unstable();
    Ok((top, SelectionMode::Topk))
}

/// Records the mean entropy of the selected rows on the tape.
pub fn adapt_loss(tape: &mut Tape, probs: Var, selected: &[usize]) -> Result<Var> {
    if selected.is_empty() {
        return Err(Error::Argument(
            "adaptation loss over an empty selection".into(),
        ));
    }
    let rows = tape.select_rows(probs, selected)?;
    let logp = tape.ln_clamped(rows, LOG_FLOOR);
    let plogp = tape.mul(rows, logp)?;
    let total = tape.sum_all(plogp);
    Ok(tape.scale(total, -1.0 / selected.len() as f64))
}

pub fn adapt_loss_value(probs: &Tensor, selected: &[usize]) -> Result<f64> {
    if selected.is_empty() {
        return Err(Error::Argument(
            "adaptation loss over an empty selection".into(),
        ));
    }
    let h = prediction_entropy(probs)?;
    let mut sum = 0.0;
    for &j in selected {
        sum += h
            .get(j)
            .ok_or_else(|| Error::Argument(format!("row {j} outside batch of {}", h.len())))?;
    }
    Ok(sum / selected.len() as f64)
}
