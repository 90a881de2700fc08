//! Cross-entropy loss and classification accuracy.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Mean cross-entropy over the batch plus the logit gradient
/// `(softmax - onehot) / B`. Log-sum-exp is computed with max
/// subtraction and f64 accumulation.
pub fn cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    if logits.shape().len() != 2 {
        return Err(Error::usage(format!(
            "cross_entropy expects [B,C] logits, got {:?}",
            logits.shape()
        )));
    }
    let (batch, classes) = (logits.shape()[0], logits.shape()[1]);
    if labels.len() != batch {
        return Err(Error::usage(format!(
            "{} labels for batch of {batch}",
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::usage(format!(
            "label {bad} out of range for {classes} classes"
        )));
    }
    let mut dlogits = Tensor::zeros(logits.shape());
    let mut loss = 0.0f64;
    let inv_b = 1.0 / batch as f32;
    for b in 0..batch {
        let row = logits.row(b);
        let max = row.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
        let mut denom = 0.0f64;
        for &v in row {
            denom += ((v - max) as f64).exp();
        }
        let log_denom = denom.ln();
        loss += log_denom - (row[labels[b]] - max) as f64;
        let drow = &mut dlogits.data_mut()[b * classes..(b + 1) * classes];
        for (c, &v) in row.iter().enumerate() {
            let p = (((v - max) as f64).exp() / denom) as f32;
            drow[c] = p * inv_b;
        }
        drow[labels[b]] -= inv_b;
    }
    loss /= batch as f64;
    if !loss.is_finite() {
        return Err(Error::numeric("non-finite cross-entropy loss"));
    }
    Ok((loss, dlogits))
}

/// Fraction of rows whose argmax equals the label. Ties break toward the
/// lowest class index.
pub fn accuracy(logits: &Tensor, labels: &[usize]) -> Result<f64> {
    let (batch, classes) = (logits.shape()[0], logits.shape()[1]);
    if labels.len() != batch {
        return Err(Error::usage(format!(
            "{} labels for batch of {batch}",
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::usage(format!(
            "label {bad} out of range for {classes} classes"
        )));
    }
    let mut correct = 0usize;
    for b in 0..batch {
        let row = logits.row(b);
        let mut arg = 0usize;
        for (c, &v) in row.iter().enumerate() {
            if v > row[arg] {
                arg = c;
            }
        }
        if arg == labels[b] {
            correct += 1;
        }
    }
    Ok(correct as f64 / batch as f64)
}
