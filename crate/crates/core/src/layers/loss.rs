//! Softmax cross-entropy with mean reduction.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Returns (mean cross-entropy, dlogits) for integer class labels.
/// dlogits = (softmax − onehot) / N, so the pair is ready for backprop.
pub fn softmax_cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    let shape = logits.shape();
    if shape.len() != 2 {
        return Err(Error::ShapeMismatch {
            expected: "[N, classes]".into(),
            got: format!("{shape:?}"),
        });
    }
    let (n, classes) = (shape[0], shape[1]);
    if n == 0 {
        return Err(Error::EmptyBatch);
    }
    if labels.len() != n {
        return Err(Error::ShapeMismatch {
            expected: format!("{n} labels"),
            got: format!("{}", labels.len()),
        });
    }
    let data = logits.data();
    let mut loss = 0.0;
    let mut dlogits = vec![0.0; data.len()];
    for (i, &label) in labels.iter().enumerate() {
        if label >= classes {
            return Err(Error::LabelOutOfRange { label, classes });
        }
        let row = &data[i * classes..(i + 1) * classes];
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let log_z = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        loss -= row[label] - log_z;
        let drow = &mut dlogits[i * classes..(i + 1) * classes];
        for (slot, &v) in drow.iter_mut().zip(row) {
            *slot = (v - log_z).exp() / n as f64;
        }
        drow[label] -= 1.0 / n as f64;
    }
    Ok((loss / n as f64, Tensor::new(shape, dlogits)?))
}
