use crate::error::{Error, Result};

use super::tensor::Tensor;

/// Mean softmax cross-entropy over the batch and its gradient w.r.t. the logits.
pub fn cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    let b = logits.rows();
    let c = logits.cols();
    if labels.len() != b {
        return Err(Error::Shape(format!("{} labels for a batch of {b}", labels.len())));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
        return Err(Error::Index(format!("label {bad} out of range for {c} classes")));
    }
    let inv_b = 1.0 / b as f64;
    let mut loss = 0.0;
    let mut grad = vec![0.0; b * c];
    for (i, &label) in labels.iter().enumerate() {
        let row = logits.row(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let g = &mut grad[i * c..(i + 1) * c];
        let mut sum = 0.0;
        for (gv, &z) in g.iter_mut().zip(row) {
            *gv = (z - max).exp();
            sum += *gv;
        }
        let log_sum = sum.ln() + max;
        loss += log_sum - row[label];
        for gv in g.iter_mut() {
            *gv *= inv_b / sum;
        }
        g[label] -= inv_b;
    }
    Ok((loss * inv_b, Tensor::matrix(b, c, grad)?))
}
