//! Softmax cross-entropy loss.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// A computed loss together with its gradient seed for the backward pass.
#[derive(Clone, Debug)]
pub struct LossNode {
    /// Mean loss over the batch, accumulated in 64-bit.
    pub value: f64,
    /// Gradient of the mean loss with respect to the logits, `[N, C]`.
    pub dlogits: Tensor,
}

/// Softmax cross-entropy of batched logits `[N, C]` against class labels.
///
/// Returns the batch-mean loss; the gradient seed is `(softmax - onehot)/N`.
pub fn cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<LossNode> {
    let sh = logits.shape();
    if sh.len() != 2 {
        return Err(Error::dimension(format!(
            "cross entropy expects [N, C] logits, got {:?}",
            sh
        )));
    }
    let (n, c) = (sh[0], sh[1]);
    if labels.len() != n {
        return Err(Error::dimension(format!(
            "cross entropy: {} labels for batch of {n}",
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= c) {
        return Err(Error::Index(format!(
            "label {bad} out of range for {c} classes"
        )));
    }
    let ld = logits.data();
    let mut dlogits = vec![0.0f32; n * c];
    let mut total = 0.0f64;
    for s in 0..n {
        let row = &ld[s * c..(s + 1) * c];
        let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
        let mut sum_exp = 0.0f64;
        for &v in row {
            sum_exp += (v as f64 - max).exp();
        }
        let lse = max + sum_exp.ln();
        total += lse - row[labels[s]] as f64;
        for k in 0..c {
            let p = (row[k] as f64 - max).exp() / sum_exp;
            let indicator = if k == labels[s] { 1.0 } else { 0.0 };
            dlogits[s * c + k] = ((p - indicator) / n as f64) as f32;
        }
    }
    Ok(LossNode {
        value: total / n as f64,
        dlogits: Tensor::new(vec![n, c], dlogits)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_give_ln_c() {
        let logits = Tensor::zeros(&[1, 10]);
        let loss = cross_entropy(&logits, &[3]).unwrap();
        assert!((loss.value - (10.0f64).ln()).abs() < 1e-9);
    }

    #[test]
    fn saturated_margin_gives_near_zero_loss() {
        let mut logits = Tensor::zeros(&[1, 10]);
        logits.data_mut()[2] = 50.0;
        let loss = cross_entropy(&logits, &[2]).unwrap();
        assert!(loss.value < 1e-9);
    }

    #[test]
    fn label_out_of_range_is_index_error() {
        let logits = Tensor::zeros(&[1, 4]);
        assert!(matches!(cross_entropy(&logits, &[4]), Err(Error::Index(_))));
    }

    #[test]
    fn matches_scalar_log_sum_exp_oracle() {
        // Independent oracle: explicit log-sum-exp loop in f64.
        let vals = vec![0.3f32, -1.2, 2.0, 0.7, -0.1];
        let logits = Tensor::new(vec![1, 5], vals.clone()).unwrap();
        let label = 2usize;
        let loss = cross_entropy(&logits, &[label]).unwrap();

        let mut sum = 0.0f64;
        for &v in &vals {
            sum += (v as f64).exp();
        }
        let expected = sum.ln() - vals[label] as f64;
        assert!((loss.value - expected).abs() < 1e-6);

        // Gradient oracle: softmax - onehot.
        for k in 0..5 {
            let p = (vals[k] as f64).exp() / sum;
            let want = p - if k == label { 1.0 } else { 0.0 };
            assert!((loss.dlogits.data()[k] as f64 - want).abs() < 1e-6);
        }
    }

    #[test]
    fn batch_mean_reduction() {
        let logits = Tensor::zeros(&[2, 4]);
        let loss = cross_entropy(&logits, &[0, 1]).unwrap();
        assert!((loss.value - (4.0f64).ln()).abs() < 1e-9);
        // Each row's gradient carries the 1/N factor.
        assert!((loss.dlogits.data()[0] as f64 - (0.25 - 1.0) / 2.0).abs() < 1e-7);
    }
}
