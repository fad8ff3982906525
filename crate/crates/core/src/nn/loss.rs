use super::Matrix;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Mean softmax cross-entropy and its gradient w.r.t. the logits,
/// `(softmax - onehot) / batch`.
pub fn softmax_xent<T: Scalar>(logits: &Matrix<T>, labels: &[usize]) -> Result<(T, Matrix<T>)> {
    let (rows, cols) = logits.shape();
    if labels.len() != rows {
        return Err(Error::Shape(format!("{} labels for {rows} logit rows", labels.len())));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= cols) {
        return Err(Error::Label { label: bad, classes: cols });
    }
    if rows == 0 {
        return Ok((T::zero(), Matrix::zeros(0, cols)));
    }
    let n = T::from_usize(rows).expect("batch size fits scalar");
    let mut loss = T::zero();
    let mut grad = Matrix::zeros(rows, cols);
    for (r, &y) in labels.iter().enumerate() {
        let row = logits.row(r);
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let sum: T = row.iter().map(|&v| (v - max).exp()).sum();
        let log_z = max + sum.ln();
        loss += log_z - row[y];
        for (c, &v) in row.iter().enumerate() {
            let p = (v - log_z).exp();
            let target = if c == y { T::one() } else { T::zero() };
            grad.set(r, c, (p - target) / n);
        }
    }
    Ok((loss / n, grad))
}
