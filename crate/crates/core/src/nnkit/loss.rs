use super::Tensor;
use crate::error::{shape_err, Error, Result};

/// Softmax along the innermost axis, computed with a max shift.
pub fn softmax_rows(logits: &Tensor) -> Tensor {
    let mut out = logits.clone();
    let v = logits.last_dim();
    for row in out.data_mut().chunks_exact_mut(v) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for x in row.iter_mut() {
            *x = (*x - max).exp();
            z += *x;
        }
        for x in row.iter_mut() {
            *x /= z;
        }
    }
    out
}

pub fn log_softmax_rows(logits: &Tensor) -> Tensor {
    let mut out = logits.clone();
    let v = logits.last_dim();
    for row in out.data_mut().chunks_exact_mut(v) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
        for x in row.iter_mut() {
            *x -= lse;
        }
    }
    out
}

/// Mean negative log-likelihood of `labels` (one per row of `logits`), and
/// its gradient with respect to the logits.
pub fn cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    let v = logits.last_dim();
    if logits.rows() != labels.len() {
        return Err(shape_err(format!("{} labels for logits {:?}", labels.len(), logits.shape())));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= v) {
        return Err(Error::LabelOutOfRange { label: bad, vocab: v });
    }
    let n = labels.len().max(1) as f64;
    let logp = log_softmax_rows(logits);
    let mut loss = 0.0;
    let mut grad = logp.clone();
    for ((g, lp), &l) in grad.data_mut().chunks_exact_mut(v).zip(logp.data().chunks_exact(v)).zip(labels) {
        loss -= lp[l];
        for x in g.iter_mut() {
            *x = x.exp() / n;
        }
        g[l] -= 1.0 / n;
    }
    Ok((loss / n, grad))
}

/// Mean squared error and its gradient with respect to `pred`.
pub fn mse(pred: &[f64], target: &[f64]) -> Result<(f64, Vec<f64>)> {
    if pred.len() != target.len() {
        return Err(shape_err(format!("mse over {} and {} values", pred.len(), target.len())));
    }
    let n = pred.len().max(1) as f64;
    let mut loss = 0.0;
    let grad = pred
        .iter()
        .zip(target)
        .map(|(p, t)| {
            let d = p - t;
            loss += d * d;
            2.0 * d / n
        })
        .collect();
    Ok((loss / n, grad))
}
