//! Activations and loss primitives.

use ndarray::{Array, Array2, Dimension, Zip};

use super::Scalar;

/// ReLU with a cached activity mask for the backward pass.
pub struct Relu<D: Dimension> {
    mask: Option<Array<bool, D>>,
}

impl<D: Dimension> Relu<D> {
    pub fn new() -> Self {
        Relu { mask: None }
    }

    pub fn forward<F: Scalar>(&mut self, mut x: Array<F, D>, train: bool) -> Array<F, D> {
        if train {
            self.mask = Some(x.mapv(|v| v > F::zero()));
        }
        x.mapv_inplace(|v| if v > F::zero() { v } else { F::zero() });
        x
    }

    pub fn backward<F: Scalar>(&mut self, mut dy: Array<F, D>) -> Array<F, D> {
        let mask = self.mask.take().expect("forward(train) before backward");
        Zip::from(&mut dy).and(&mask).for_each(|d, &m| {
            if !m {
                *d = F::zero();
            }
        });
        dy
    }
}

impl<D: Dimension> Default for Relu<D> {
    fn default() -> Self {
        Self::new()
    }
}

/// Row-wise softmax.
pub fn softmax<F: Scalar>(logits: &Array2<F>) -> Array2<F> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().cloned().fold(F::neg_infinity(), F::max);
        let mut sum = F::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum = sum + *v;
        }
        for v in row.iter_mut() {
            *v = *v / sum;
        }
    }
    out
}

/// Mean cross-entropy over the batch. Returns `(loss, probs, dlogits)`
/// where `dlogits = (probs - onehot) / batch`.
pub fn cross_entropy<F: Scalar>(
    logits: &Array2<F>,
    labels: &[usize],
) -> (F, Array2<F>, Array2<F>) {
    let n = logits.nrows();
    assert_eq!(n, labels.len(), "one label per row");
    let probs = softmax(logits);
    let inv_n = F::of(1.0 / n as f64);
    let mut loss = F::zero();
    let mut grad = probs.clone();
    for (i, &label) in labels.iter().enumerate() {
        let p = probs[[i, label]];
        // Clamp to avoid -inf on collapsed probabilities.
        let p = p.max(F::of(1e-300));
        loss = loss - p.ln();
        grad[[i, label]] = grad[[i, label]] - F::one();
    }
    grad.mapv_inplace(|v| v * inv_n);
    (loss * inv_n, probs, grad)
}

/// Smooth L1 with transition point 1: `0.5 d^2` for `|d| < 1`, else
/// `|d| - 0.5`.
pub fn smooth_l1<F: Scalar>(d: F) -> F {
    let a = d.abs();
    if a < F::one() {
        F::of(0.5) * d * d
    } else {
        a - F::of(0.5)
    }
}

/// Derivative of [`smooth_l1`] with respect to `d`.
pub fn smooth_l1_grad<F: Scalar>(d: F) -> F {
    if d.abs() < F::one() {
        d
    } else if d > F::zero() {
        F::one()
    } else {
        -F::one()
    }
}
