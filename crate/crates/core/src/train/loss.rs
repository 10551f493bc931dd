use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor4;

/// Floor applied to probabilities before taking the logarithm.
pub const PROB_FLOOR: f64 = 1e-12;

/// Class-weighted cross entropy, normalised by the sum of applied weights:
///
/// `loss = sum_p w[y_p] * -ln(prob[p, y_p]) / sum_p w[y_p]`
///
/// Returns the loss and its gradient with respect to the pre-softmax
/// logits, `w[y_p] * (prob[p, c] - [c == y_p]) / sum_p w[y_p]`.
pub fn weighted_ce_loss<T: Scalar>(
    probs: &Tensor4<T>,
    labels: &[u8],
    weights: &[f64],
) -> Result<(f64, Tensor4<T>)> {
    let s = probs.shape();
    let c = s.c;
    if weights.len() != c {
        return Err(Error::config(format!("{} class weights for {c} classes", weights.len())));
    }
    if labels.len() != s.pixels() {
        return Err(Error::shape(format!(
            "{} labels for prediction {s}",
            labels.len()
        )));
    }
    if let Some(bad) = labels.iter().find(|&&y| y as usize >= c) {
        return Err(Error::validation(format!("label {bad} outside 0..{c}")));
    }
    let total_weight: f64 = labels.iter().map(|&y| weights[y as usize]).sum();
    if total_weight <= 0.0 {
        return Err(Error::validation("class weights sum to zero over the batch"));
    }
    let mut loss = 0.0;
    let mut grad = vec![T::zero(); s.len()];
    for ((p, g), &y) in probs
        .data()
        .chunks_exact(c)
        .zip(grad.chunks_exact_mut(c))
        .zip(labels)
    {
        let y = y as usize;
        let w = weights[y] / total_weight;
        loss -= w * p[y].as_f64().max(PROB_FLOOR).ln();
        for k in 0..c {
            let target = if k == y { 1.0 } else { 0.0 };
            g[k] = T::of(w * (p[k].as_f64() - target));
        }
    }
    Ok((loss, Tensor4::from_vec(s, grad)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape4;

    const W: [f64; 3] = [100.0, 100.0, 2000.0];

    #[test]
    fn perfect_prediction_has_zero_loss() {
        let probs = Tensor4::from_vec(Shape4::new(1, 1, 3, 3), vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]).unwrap();
        let (loss, _) = weighted_ce_loss(&probs, &[0, 1, 2], &W).unwrap();
        assert!(loss <= 1e-10);
    }

    #[test]
    fn uniform_prediction_costs_ln3_whatever_the_weights() {
        let probs = Tensor4::filled(Shape4::new(1, 2, 2, 3), 1.0 / 3.0);
        for labels in [[0, 0, 0, 2], [2, 2, 2, 2], [1, 0, 2, 1]] {
            let (loss, _) = weighted_ce_loss(&probs, &labels, &W).unwrap();
            assert!((loss - 3f64.ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_probability_is_floored() {
        let probs = Tensor4::from_vec(Shape4::new(1, 1, 1, 3), vec![1.0, 0.0, 0.0]).unwrap();
        let (loss, _) = weighted_ce_loss(&probs, &[2], &W).unwrap();
        assert!((loss + PROB_FLOOR.ln()).abs() < 1e-9);
    }

    #[test]
    fn rejects_bad_labels() {
        let probs = Tensor4::filled(Shape4::new(1, 1, 2, 3), 1.0 / 3.0);
        assert!(weighted_ce_loss(&probs, &[0, 3], &W).is_err());
        assert!(weighted_ce_loss(&probs, &[0], &W).is_err());
    }
}
