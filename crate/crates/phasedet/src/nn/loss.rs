use super::NnError;

/// Mean squared error over a batch of scalar predictions.
///
/// Returns the loss `mean((p - t)^2)` together with its gradient with
/// respect to each prediction, `2 * (p - t) / n`.
pub fn mse_loss(predictions: &[f64], targets: &[f64]) -> Result<(f64, Vec<f64>), NnError> {
    if predictions.is_empty() {
        return Err(NnError::Empty("mse_loss"));
    }
    if predictions.len() != targets.len() {
        return Err(NnError::ShapeMismatch {
            context: "mse_loss",
            expected: format!("{} targets", predictions.len()),
            got: format!("{}", targets.len()),
        });
    }
    let n = predictions.len() as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(predictions.len());
    for (p, t) in predictions.iter().zip(targets) {
        let d = p - t;
        loss += d * d;
        grad.push(2.0 * d / n);
    }
    Ok((loss / n, grad))
}
