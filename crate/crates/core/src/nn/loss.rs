use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

/// Numerically stable log-softmax of one row.
pub fn log_softmax_row(logits: ArrayView1<'_, f64>) -> Array1<f64> {
    let max = logits.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let lse = max + logits.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
    logits.mapv(|v| v - lse)
}

pub fn softmax_rows(logits: ArrayView2<'_, f64>) -> Array2<f64> {
    let mut out = logits.to_owned();
    for mut row in out.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}

/// Per-row cross-entropy `-log softmax(logits)[label]`.
pub fn cross_entropy_rows(logits: ArrayView2<'_, f64>, labels: &[usize]) -> Vec<f64> {
    logits
        .rows()
        .into_iter()
        .zip(labels)
        .map(|(row, &y)| -log_softmax_row(row)[y])
        .collect()
}

/// Gradient of `sum_i w_i * CE_i` with respect to the logits: `w_i (p_i - onehot(y_i))`.
pub fn softmax_xent_grad(probs: ArrayView2<'_, f64>, labels: &[usize], weight: f64) -> Array2<f64> {
    let mut g = probs.to_owned();
    for (mut row, &y) in g.rows_mut().into_iter().zip(labels) {
        row[y] -= 1.0;
        row.mapv_inplace(|v| v * weight);
    }
    g
}
