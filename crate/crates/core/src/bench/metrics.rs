use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hsi::LabelMap;

/// `counts[t * K + p]`: pixels of true class `t + 1` predicted as `p + 1`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub classes: usize,
    pub counts: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub oa: f64,
    pub aa: f64,
    pub kappa: f64,
    pub confusion: ConfusionMatrix,
    /// Classes with no true pixels; left out of AA.
    pub absent_classes: Vec<u16>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        Self {
            classes,
            counts: vec![0; classes * classes],
        }
    }

    /// Builds from row-major counts (rows are true classes).
    pub fn from_rows(rows: &[Vec<u64>]) -> Result<Self> {
        let k = rows.len();
        if rows.iter().any(|r| r.len() != k) {
            return Err(Error::Shape("confusion matrix must be square".into()));
        }
        Ok(Self {
            classes: k,
            counts: rows.concat(),
        })
    }

    pub fn add(&mut self, truth: u16, predicted: u16) -> Result<()> {
        let k = self.classes;
        for (what, v) in [("label", truth), ("prediction", predicted)] {
            if v == 0 || v as usize > k {
                return Err(Error::Argument(format!("{what} {v} outside 1..={k}")));
            }
        }
        self.counts[(truth as usize - 1) * k + predicted as usize - 1] += 1;
        Ok(())
    }

    pub fn get(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth * self.classes + predicted]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    fn row_sum(&self, t: usize) -> u64 {
        (0..self.classes).map(|p| self.get(t, p)).sum()
    }

    fn col_sum(&self, p: usize) -> u64 {
        (0..self.classes).map(|t| self.get(t, p)).sum()
    }

    /// OA, AA over classes present in the truth, and Cohen's kappa.
    pub fn metrics(&self) -> Evaluation {
        let k = self.classes;
        let total = self.total() as f64;
        let trace: u64 = (0..k).map(|i| self.get(i, i)).sum();
        let oa = if total > 0.0 {
            trace as f64 / total
        } else {
            0.0
        };
        let mut recalls = Vec::new();
        let mut absent = Vec::new();
        for t in 0..k {
            let row = self.row_sum(t);
            if row == 0 {
                absent.push(t as u16 + 1);
            } else {
                recalls.push(self.get(t, t) as f64 / row as f64);
            }
        }
        let aa = if recalls.is_empty() {
            0.0
        } else {
            recalls.iter().sum::<f64>() / recalls.len() as f64
        };
        let pe = if total > 0.0 {
            (0..k)
                .map(|c| self.row_sum(c) as f64 * self.col_sum(c) as f64)
                .sum::<f64>()
                / (total * total)
        } else {
            0.0
        };
        // Perfect chance agreement leaves kappa undefined; report agreement
        // as 1 when observed agreement is also perfect.
        let kappa = if pe < 1.0 {
            (oa - pe) / (1.0 - pe)
        } else if oa == 1.0 {
            1.0
        } else {
            0.0
        };
        Evaluation {
            oa,
            aa,
            kappa,
            confusion: self.clone(),
            absent_classes: absent,
        }
    }
}

/// Scores `predictions[i]` against the label of `pixels[i]`.
pub fn evaluate(predictions: &[u16], labels: &LabelMap, pixels: &[usize]) -> Result<Evaluation> {
    if predictions.len() != pixels.len() {
        return Err(Error::Argument(format!(
            "{} predictions for {} evaluated pixels",
            predictions.len(),
            pixels.len()
        )));
    }
    let mut cm = ConfusionMatrix::new(labels.classes());
    for (&pred, &px) in predictions.iter().zip(pixels) {
        let truth = *labels
            .labels()
            .get(px)
            .ok_or_else(|| Error::Argument(format!("pixel {px} outside the label map")))?;
        cm.add(truth, pred)?;
    }
    let e = cm.metrics();
    if !e.absent_classes.is_empty() {
        log::warn!(
            "classes {:?} have no evaluated pixels and are left out of AA",
            e.absent_classes
        );
    }
    Ok(e)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Stream;

    #[test]
    fn diagonal_is_perfect() {
        let cm =
            ConfusionMatrix::from_rows(&[vec![3, 0, 0], vec![0, 5, 0], vec![0, 0, 1]]).unwrap();
        let e = cm.metrics();
        assert_eq!((e.oa, e.aa, e.kappa), (1.0, 1.0, 1.0));
    }

    #[test]
    fn worked_two_by_two() {
        let e = ConfusionMatrix::from_rows(&[vec![2, 0], vec![1, 1]])
            .unwrap()
            .metrics();
        assert_eq!(e.oa, 0.75);
        assert_eq!(e.aa, 0.75);
        assert!((e.kappa - 0.5).abs() < 1e-12);
    }

    #[test]
    fn absent_class_is_left_out_of_aa() {
        let e = ConfusionMatrix::from_rows(&[vec![1, 1, 0], vec![0, 0, 0], vec![0, 0, 2]])
            .unwrap()
            .metrics();
        assert_eq!(e.absent_classes, vec![2]);
        assert_eq!(e.aa, 0.75);
    }

    #[test]
    fn random_predictions_have_near_zero_kappa() {
        let k = 5;
        let mut s = Stream::new(3, "kappa-null", 0);
        let mut cm = ConfusionMatrix::new(k);
        for i in 0..10_000 {
            let truth = (i % k) as u16 + 1;
            cm.add(truth, s.below(k as u64) as u16 + 1).unwrap();
        }
        assert!(cm.metrics().kappa.abs() < 0.05);
    }

    #[test]
    fn relabeling_preserves_metrics() {
        let mut s = Stream::new(4, "relabel", 0);
        let k = 4;
        let rows: Vec<Vec<u64>> = (0..k)
            .map(|_| (0..k).map(|_| s.below(20)).collect())
            .collect();
        let perm = [2usize, 0, 3, 1];
        let mut permuted = vec![vec![0; k]; k];
        for t in 0..k {
            for p in 0..k {
                permuted[perm[t]][perm[p]] = rows[t][p];
            }
        }
        let a = ConfusionMatrix::from_rows(&rows).unwrap().metrics();
        let b = ConfusionMatrix::from_rows(&permuted).unwrap().metrics();
        assert!((a.oa - b.oa).abs() < 1e-15);
        assert!((a.aa - b.aa).abs() < 1e-15);
        assert!((a.kappa - b.kappa).abs() < 1e-15);
    }

    #[test]
    fn evaluate_checks_lengths_and_ranges() {
        let labels = LabelMap::new(1, 3, vec![1, 2, 0], vec!["a".into(), "b".into()]).unwrap();
        assert!(evaluate(&[1], &labels, &[0, 1]).is_err());
        assert!(evaluate(&[3, 1], &labels, &[0, 1]).is_err());
        assert!(evaluate(&[1, 1], &labels, &[0, 2]).is_err());
        let e = evaluate(&[1, 1], &labels, &[0, 1]).unwrap();
        assert_eq!(e.oa, 0.5);
    }
}
