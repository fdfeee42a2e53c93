use crate::error::{Error, Result};
use crate::tensor::{Backward, Tape, Tensor, Var};

struct CrossEntropyRule {
    probs: Vec<f64>,
    labels: Vec<usize>,
    k: usize,
}

impl Backward for CrossEntropyRule {
    fn name(&self) -> &'static str {
        "softmax_cross_entropy"
    }
    fn backward(&self, g: &[f64], _: &[bool]) -> Vec<Option<Vec<f64>>> {
        let n = self.labels.len();
        let scale = g[0] / n as f64;
        let mut dx: Vec<f64> = self.probs.iter().map(|p| p * scale).collect();
        for (row, &label) in self.labels.iter().enumerate() {
            dx[row * self.k + label] -= scale;
        }
        vec![Some(dx)]
    }
}

/// Row-wise softmax with max subtraction.
pub fn softmax(logits: &[f64], k: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(logits.len());
    for row in logits.chunks_exact(k) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|v| (v - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        out.extend(exps.into_iter().map(|e| e / total));
    }
    out
}

/// Mean negative log-likelihood of `labels` under `softmax(logits)`.
pub fn softmax_cross_entropy(tape: &mut Tape, logits: &Var, labels: &[usize]) -> Result<Var> {
    let (n, k) = match logits.shape().dims() {
        &[n, k] => (n, k),
        _ => {
            return Err(Error::InvalidShape(format!(
                "cross entropy expects [N, K] logits, got {}",
                logits.shape()
            )))
        }
    };
    if labels.len() != n {
        return Err(Error::arg(
            "labels",
            format!("{} labels for a batch of {n}", labels.len()),
        ));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::arg("labels", format!("label {bad} outside [0, {k})")));
    }
    let data = logits.value().data();
    let mut total = 0.0;
    for (row, &label) in data.chunks_exact(k).zip(labels) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        total += lse - row[label];
    }
    let rule = CrossEntropyRule {
        probs: softmax(data, k),
        labels: labels.to_vec(),
        k,
    };
    tape.record(Tensor::scalar(total / n as f64), &[logits], rule)
}
