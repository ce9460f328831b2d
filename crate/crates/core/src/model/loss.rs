//! Loss primitives shared by pre-training and downstream heads.

use crate::error::{Error, Result};

/// Mean squared error over all entries.
pub fn mse(pred: &[f64], target: &[f64]) -> Result<f64> {
    check_len(pred, target)?;
    Ok(pred
        .iter()
        .zip(target)
        .map(|(p, t)| (p - t) * (p - t))
        .sum::<f64>()
        / pred.len().max(1) as f64)
}

/// MSE and its gradient with respect to `pred`.
pub fn mse_with_grad(pred: &[f64], target: &[f64]) -> Result<(f64, Vec<f64>)> {
    let loss = mse(pred, target)?;
    let n = pred.len().max(1) as f64;
    let grad = pred
        .iter()
        .zip(target)
        .map(|(p, t)| 2.0 * (p - t) / n)
        .collect();
    Ok((loss, grad))
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Cross-entropy of `logits` against the 0-based class `label`, with the
/// gradient with respect to the logits.
pub fn cross_entropy_with_grad(logits: &[f64], label: usize) -> Result<(f64, Vec<f64>)> {
    if label >= logits.len() {
        return Err(Error::LabelOutOfRange {
            label,
            classes: logits.len(),
        });
    }
    let probs = softmax(logits);
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    let loss = lse - logits[label];
    let mut grad = probs;
    grad[label] -= 1.0;
    Ok((loss, grad))
}

pub fn cross_entropy(logits: &[f64], label: usize) -> Result<f64> {
    cross_entropy_with_grad(logits, label).map(|(l, _)| l)
}

fn check_len(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!(
            "prediction has {} entries, target {}",
            a.len(),
            b.len()
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn mse_examples() {
        assert_eq!(mse(&[0.0, 0.0], &[1.0, 1.0]).unwrap(), 1.0);
        assert_eq!(mse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert!(mse(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn uniform_cross_entropy() {
        assert_abs_diff_eq!(cross_entropy(&[0.0; 4], 2).unwrap(), 4f64.ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(cross_entropy(&[3.0; 52], 0).unwrap(), 3.951244, epsilon = 1e-6);
        let mut confident = vec![-50.0; 52];
        confident[7] = 50.0;
        assert!(cross_entropy(&confident, 7).unwrap() < 1e-12);
        assert!(matches!(
            cross_entropy(&[0.0; 4], 4),
            Err(Error::LabelOutOfRange { label: 4, classes: 4 })
        ));
    }

    #[test]
    fn softmax_sums_to_one_for_extreme_logits() {
        let p = softmax(&[1000.0, -1000.0, 0.0]);
        assert_abs_diff_eq!(p.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
    }
}
