/// Logits are clamped to `[-SIGMOID_CLAMP, SIGMOID_CLAMP]` before `exp`.
pub const SIGMOID_CLAMP: f64 = 80.0;
/// Predictions are clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]` inside the log.
pub const PROB_CLAMP: f64 = 1e-7;

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    let x = x.clamp(-SIGMOID_CLAMP, SIGMOID_CLAMP);
    1.0 / (1.0 + (-x).exp())
}

/// Binary cross-entropy of a probability against a 0/1 label.
#[inline]
pub fn bce_loss(y_hat: f64, y: f64) -> f64 {
    let p = y_hat.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
}

/// d/dz of `bce_loss(sigmoid(z), y)`.
#[inline]
pub fn bce_grad_logit(logit: f64, y: f64) -> f64 {
    sigmoid(logit) - y
}
