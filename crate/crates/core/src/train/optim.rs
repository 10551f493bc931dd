use crate::error::{Error, Result};
use crate::registry::{Registry, SliceKind};
use crate::scalar::Scalar;

/// One RMSprop update of a flat parameter slice:
///
/// ```text
/// g <- g + l2 * p
/// s <- rho * s + (1 - rho) * g^2
/// p <- p - lr * g / sqrt(s + eps)
/// ```
pub fn rmsprop_update<T: Scalar>(
    values: &mut [T],
    grads: &[T],
    state: &mut [T],
    lr: f64,
    rho: f64,
    eps: f64,
    l2: f64,
) {
    let (lr, rho, eps, l2) = (T::of(lr), T::of(rho), T::of(eps), T::of(l2));
    let one_minus = T::one() - rho;
    for ((p, &g), s) in values.iter_mut().zip(grads).zip(state.iter_mut()) {
        let g = g + l2 * *p;
        *s = rho * *s + one_minus * g * g;
        *p -= lr * g / (*s + eps).sqrt();
    }
}

#[derive(Debug, Clone)]
pub struct RmsProp<T> {
    pub decay_rate: f64,
    pub epsilon: f64,
    pub l2: f64,
    state: Vec<Vec<T>>,
}

impl<T: Scalar> RmsProp<T> {
    pub fn new(decay_rate: f64, epsilon: f64, l2: f64) -> Self {
        Self {
            decay_rate,
            epsilon,
            l2,
            state: Vec::new(),
        }
    }

    /// Applies one step to every learnable slice of `reg`. L2 decay applies to
    /// convolution weights only. A non-finite gradient aborts the step before
    /// any parameter changes.
    pub fn step(&mut self, reg: &mut Registry<T>, lr: f64) -> Result<()> {
        let names: Vec<String> = reg.names().iter().map(|s| s.to_string()).collect();
        let slices = reg.slices_mut();
        if let Some((i, _)) = slices
            .iter()
            .enumerate()
            .find(|(_, s)| s.grads.iter().any(|g| !g.is_finite()))
        {
            return Err(Error::Numeric {
                context: "rmsprop".into(),
                detail: format!("non-finite gradient in parameter slice {i} ({} params)", names.len()),
            });
        }
        if self.state.is_empty() {
            self.state = slices.iter().map(|s| vec![T::zero(); s.values.len()]).collect();
        }
        for (slice, state) in slices.into_iter().zip(&mut self.state) {
            let l2 = if slice.kind == SliceKind::Weight { self.l2 } else { 0.0 };
            rmsprop_update(slice.values, slice.grads, state, lr, self.decay_rate, self.epsilon, l2);
        }
        Ok(())
    }
}
