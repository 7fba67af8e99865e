use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

/// Probabilities are clamped here before the logarithm.
pub const LOG_FLOOR: f64 = 1e-12;

/// `eps / K` everywhere and `1 - eps + eps / K` at class `y` (1-based).
pub fn smooth_labels(y: u16, eps: f64, k: usize) -> Result<Tensor> {
    if y == 0 || y as usize > k {
        return Err(Error::Argument(format!("class {y} outside 1..={k}")));
    }
    if !(0.0..=1.0).contains(&eps) {
        return Err(Error::Argument(format!("smoothing {eps} outside [0, 1]")));
    }
    let off = eps / k as f64;
    let on = 1.0 - eps + off;
    Ok(Tensor::from_fn(&[k], |j| {
        if j + 1 == y as usize {
            on
        } else {
            off
        }
    }))
}

/// Stacks smoothed targets for a batch of 1-based labels into `[B, K]`.
pub fn smooth_targets(labels: &[u16], eps: f64, k: usize) -> Result<Tensor> {
    let rows = labels
        .iter()
        .map(|&y| smooth_labels(y, eps, k))
        .collect::<Result<Vec<_>>>()?;
    Tensor::stack(&rows)
}

/// Records `-(1/B) sum_i sum_j t_ij ln max(p_ij, floor)` on the tape.
pub fn smoothed_ce_loss(tape: &mut Tape, probs: Var, targets: &Tensor) -> Result<Var> {
    if tape.value(probs).shape() != targets.shape() || targets.shape().len() != 2 {
        return Err(Error::Shape(format!(
            "probs {:?} vs targets {:?}",
            tape.value(probs).shape(),
            targets.shape()
        )));
    }
    check_rows(tape.value(probs))?;
    let b = targets.shape()[0] as f64;
    let t = tape.input(targets.clone());
    let logp = tape.ln_clamped(probs, LOG_FLOOR);
    let weighted = tape.mul(logp, t)?;
    let total = tape.sum_all(weighted);
    Ok(tape.scale(total, -1.0 / b))
}

/// Value-only form of [`smoothed_ce_loss`].
pub fn smoothed_ce(probs: &Tensor, targets: &Tensor) -> Result<f64> {
    let mut tape = Tape::new();
    let p = tape.input(probs.clone());
    let l = smoothed_ce_loss(&mut tape, p, targets)?;
    Ok(tape.value(l).item())
}

fn check_rows(probs: &Tensor) -> Result<()> {
    for r in 0..probs.rows() {
        let s: f64 = probs.row(r).iter().sum();
        if !(s > 0.0) {
            return Err(Error::Numeric(format!("probability row {r} sums to {s}")));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::ParamStore;

    #[test]
    fn smoothing_examples() {
        let t = smooth_labels(2, 0.05, 4).unwrap();
        for (a, e) in t.data().iter().zip([0.0125, 0.9625, 0.0125, 0.0125]) {
            assert!((a - e).abs() < 1e-15);
        }
        let t = smooth_labels(1, 0.0, 3).unwrap();
        assert_eq!(t.data(), &[1.0, 0.0, 0.0]);
        assert!(smooth_labels(0, 0.05, 3).is_err());
        assert!(smooth_labels(4, 0.05, 3).is_err());
    }

    #[test]
    fn smoothed_rows_sum_to_one() {
        for k in [2usize, 3, 5, 9, 16] {
            for eps in [0.0, 0.05, 0.3, 1.0] {
                let s: f64 = smooth_labels(1, eps, k).unwrap().data().iter().sum();
                assert!((s - 1.0).abs() < 1e-15, "k={k} eps={eps} sum={s}");
            }
        }
    }

    #[test]
    fn loss_examples() {
        let one_hot = Tensor::new(vec![1, 3], vec![0.0, 1.0, 0.0]).unwrap();
        assert_eq!(smoothed_ce(&one_hot, &one_hot).unwrap(), 0.0);

        let uniform = Tensor::full(&[2, 4], 0.25);
        let targets = smooth_targets(&[1, 3], 0.05, 4).unwrap();
        let l = smoothed_ce(&uniform, &targets).unwrap();
        assert!((l - 4f64.ln()).abs() < 1e-12);

        let p = Tensor::new(vec![1, 2], vec![0.8, 0.2]).unwrap();
        let y = Tensor::new(vec![1, 2], vec![0.975, 0.025]).unwrap();
        let want = -(0.975 * 0.8f64.ln() + 0.025 * 0.2f64.ln());
        let got = smoothed_ce(&p, &y).unwrap();
        assert!((got - want).abs() < 1e-15);
        assert!((got - 0.2578).abs() < 1e-4);
    }

    #[test]
    fn zero_rows_are_numeric_errors() {
        let p = Tensor::zeros(&[1, 2]);
        let y = Tensor::full(&[1, 2], 0.5);
        assert!(matches!(smoothed_ce(&p, &y), Err(Error::Numeric(_))));
    }

    #[test]
    fn logit_gradient_is_probs_minus_targets() {
        let logits = Tensor::new(
            vec![3, 4],
            (0..12).map(|i| (i as f64 * 0.37).sin()).collect(),
        )
        .unwrap();
        let targets = smooth_targets(&[1, 4, 2], 0.05, 4).unwrap();
        let mut tape = Tape::new();
        let z = tape.watch(logits);
        let p = tape.softmax(z);
        let l = smoothed_ce_loss(&mut tape, p, &targets).unwrap();
        let probs = tape.value(p).clone();
        let g = tape.backward(l, &mut ParamStore::new(), |_| true).unwrap();
        for ((gz, pr), t) in g
            .get(z)
            .unwrap()
            .data()
            .iter()
            .zip(probs.data())
            .zip(targets.data())
        {
            assert!((gz - (pr - t) / 3.0).abs() < 1e-12);
        }
    }
}
