use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

/// Mean softmax cross-entropy over the batch and its gradient,
/// `(softmax − onehot) / N`, with the logits' `(N, K, 1, 1)` shape.
pub fn softmax_cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<(f32, Tensor)> {
    let s = logits.shape();
    if s.h != 1 || s.w != 1 || s.n != labels.len() || s.n == 0 {
        return Err(Error::shape(format!(
            "logits {s} do not match {} labels",
            labels.len()
        )));
    }
    let k = s.c;
    let inv_n = 1.0 / s.n as f32;
    let mut grad = Tensor::zeros(Shape::new(s.n, k, 1, 1));
    let mut total = 0.0f32;
    for (i, &label) in labels.iter().enumerate() {
        if label >= k {
            return Err(Error::LabelOutOfRange {
                label,
                num_classes: k,
            });
        }
        let row = logits.item(i);
        let (top, &max) =
            row.iter().enumerate().fold(
                (0, &row[0]),
                |best, (j, v)| if *v > *best.1 { (j, v) } else { best },
            );
        // log Σ exp(x_j − max), with the leading 1 kept out of the sum for precision
        let rest: f32 = row
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != top)
            .map(|(_, &v)| (v - max).exp())
            .sum();
        let log_z = rest.ln_1p();
        total += log_z + (max - row[label]);
        let g = grad.item_mut(i);
        for (j, gv) in g.iter_mut().enumerate() {
            let p = (row[j] - max - log_z).exp();
            *gv = (p - if j == label { 1.0 } else { 0.0 }) * inv_n;
        }
    }
    Ok((total * inv_n, grad))
}

/// Number of rows whose argmax (first on ties) equals the label.
pub fn count_correct(logits: &Tensor, labels: &[usize]) -> usize {
    labels
        .iter()
        .enumerate()
        .filter(|&(i, &label)| {
            let row = logits.item(i);
            let pred = row
                .iter()
                .enumerate()
                .fold(0, |best, (j, v)| if *v > row[best] { j } else { best });
            pred == label
        })
        .count()
}
