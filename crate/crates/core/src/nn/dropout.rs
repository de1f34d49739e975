//! Inverted dropout: activations are scaled by `1/keep` at train time so
//! evaluation is the identity.

use ndarray::{Array, Dimension, Zip};
use rand::Rng;

use super::Scalar;

pub struct Dropout<D: Dimension> {
    pub p: f64,
    mask: Option<Array<bool, D>>,
    scale: f64,
}

impl<D: Dimension> Dropout<D> {
    pub fn new(p: f64) -> Self {
        assert!((0.0..1.0).contains(&p), "dropout ratio in [0, 1)");
        Dropout {
            p,
            mask: None,
            scale: 1.0 / (1.0 - p),
        }
    }

    /// `rng = None` (evaluation) leaves the input untouched. Mask elements
    /// are drawn in row-major order, one `f64` per element.
    pub fn forward<F: Scalar, R: Rng>(
        &mut self,
        mut x: Array<F, D>,
        rng: Option<&mut R>,
    ) -> Array<F, D> {
        let Some(rng) = rng else {
            self.mask = None;
            return x;
        };
        if self.p == 0.0 {
            self.mask = None;
            return x;
        }
        let keep = 1.0 - self.p;
        let scale = F::of(self.scale);
        let mask = Array::from_shape_simple_fn(x.raw_dim(), || rng.gen::<f64>() < keep);
        Zip::from(&mut x).and(&mask).for_each(|v, &m| {
            *v = if m { *v * scale } else { F::zero() };
        });
        self.mask = Some(mask);
        x
    }

    pub fn backward<F: Scalar>(&mut self, mut dy: Array<F, D>) -> Array<F, D> {
        if let Some(mask) = self.mask.take() {
            let scale = F::of(self.scale);
            Zip::from(&mut dy).and(&mask).for_each(|v, &m| {
                *v = if m { *v * scale } else { F::zero() };
            });
        }
        dy
    }
}
