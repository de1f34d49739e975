//! SGD with classic momentum, per-tensor L1 gradient clipping and L2
//! weight decay folded into the update (decay skips biases and
//! normalization parameters).

use std::collections::HashMap;

use ndarray::ArrayD;

use crate::error::{Error, Result};
use crate::nn::{Param, Scalar};

/// Rescales `g` so its L1 norm does not exceed `max_l1`. Errors on
/// non-finite gradients, naming the tensor. Returns the pre-clip norm.
pub fn clip_grad_l1<F: Scalar>(name: &str, g: &mut ArrayD<F>, max_l1: f64) -> Result<f64> {
    let mut norm = F::zero();
    for v in g.iter() {
        if !v.is_finite() {
            return Err(Error::NonFinite(name.to_string()));
        }
        norm = norm + v.abs();
    }
    let norm_f = norm.as_f64();
    if norm_f > max_l1 {
        let scale = F::of(max_l1 / norm_f);
        g.mapv_inplace(|v| v * scale);
    }
    Ok(norm_f)
}

/// Clips each named gradient tensor independently.
pub fn clip_gradients<F: Scalar>(
    grads: &mut HashMap<String, ArrayD<F>>,
    max_l1: f64,
) -> Result<()> {
    let mut names: Vec<&String> = grads.keys().collect();
    names.sort();
    let names: Vec<String> = names.into_iter().cloned().collect();
    for name in names {
        let g = grads.get_mut(&name).unwrap();
        clip_grad_l1(&name, g, max_l1)?;
    }
    Ok(())
}

pub struct Sgd<F: Scalar> {
    pub momentum: f64,
    pub weight_decay: f64,
    pub clip_l1: Option<f64>,
    velocity: HashMap<String, ArrayD<F>>,
}

impl<F: Scalar> Sgd<F> {
    pub fn new(momentum: f64, weight_decay: f64, clip_l1: Option<f64>) -> Self {
        Sgd {
            momentum,
            weight_decay,
            clip_l1,
            velocity: HashMap::new(),
        }
    }

    /// One update: clip, then `v = momentum * v + g + wd * w` and
    /// `w -= lr * v`. Gradients are cleared afterwards.
    pub fn step(&mut self, lr: f64, params: &mut [&mut Param<F>]) -> Result<()> {
        let mom = F::of(self.momentum);
        let lr_f = F::of(lr);
        for p in params.iter_mut() {
            if let Some(max) = self.clip_l1 {
                clip_grad_l1(&p.name, &mut p.grad, max)?;
            }
            let wd = if p.decay { F::of(self.weight_decay) } else { F::zero() };
            let v = self
                .velocity
                .entry(p.name.clone())
                .or_insert_with(|| ArrayD::zeros(p.value.raw_dim()));
            ndarray::Zip::from(&mut *v)
                .and(&p.grad)
                .and(&p.value)
                .for_each(|vv, &g, &w| {
                    *vv = mom * *vv + g + wd * w;
                });
            ndarray::Zip::from(&mut p.value).and(&*v).for_each(|w, &vv| {
                *w = *w - lr_f * vv;
            });
            p.zero_grad();
        }
        Ok(())
    }

    /// Momentum buffers for checkpointing, prefixed `optim.momentum.`.
    pub fn export_state(&self) -> Vec<(String, ArrayD<F>)> {
        let mut out: Vec<(String, ArrayD<F>)> = self
            .velocity
            .iter()
            .map(|(name, v)| (format!("optim.momentum.{name}"), v.clone()))
            .collect();
        out.sort_by(|a, b| a.0.cmp(&b.0));
        out
    }

    pub fn import_state(&mut self, map: &HashMap<String, ArrayD<F>>) {
        self.velocity.clear();
        for (name, tensor) in map {
            if let Some(param_name) = name.strip_prefix("optim.momentum.") {
                self.velocity.insert(param_name.to_string(), tensor.clone());
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::IxDyn;

    fn arr(v: &[f64]) -> ArrayD<f64> {
        ArrayD::from_shape_vec(IxDyn(&[v.len()]), v.to_vec()).unwrap()
    }

    #[test]
    fn clip_leaves_small_gradients_untouched() {
        let mut g = arr(&[0.5, -0.5]);
        let norm = clip_grad_l1("g", &mut g, 2.0).unwrap();
        assert_eq!(norm, 1.0);
        assert_eq!(g, arr(&[0.5, -0.5]));
    }

    #[test]
    fn clip_rescales_to_the_bound() {
        let mut g = arr(&[3.0, -1.0]);
        clip_grad_l1("g", &mut g, 2.0).unwrap();
        assert_eq!(g, arr(&[1.5, -0.5]));
    }

    #[test]
    fn clip_zero_tensor_is_zero() {
        let mut g = arr(&[0.0, 0.0, 0.0]);
        clip_grad_l1("g", &mut g, 2.0).unwrap();
        assert_eq!(g, arr(&[0.0, 0.0, 0.0]));
    }

    #[test]
    fn clip_preserves_direction_and_never_grows() {
        let mut rng_state = 123456789u64;
        let mut next = move || {
            rng_state = rng_state.wrapping_mul(6364136223846793005).wrapping_add(1);
            ((rng_state >> 33) as f64 / (1u64 << 31) as f64) - 1.0
        };
        for _ in 0..50 {
            let g0: Vec<f64> = (0..8).map(|_| next() * 3.0).collect();
            let mut g = arr(&g0);
            let before: f64 = g0.iter().map(|v| v.abs()).sum();
            clip_grad_l1("g", &mut g, 2.0).unwrap();
            let after: f64 = g.iter().map(|v| v.abs()).sum();
            assert!(after <= before + 1e-12);
            assert!(after <= 2.0 + 1e-12);
            // Cosine similarity with the original direction.
            let dot: f64 = g.iter().zip(&g0).map(|(a, b)| a * b).sum();
            let na: f64 = g.iter().map(|v| v * v).sum::<f64>().sqrt();
            let nb: f64 = g0.iter().map(|v| v * v).sum::<f64>().sqrt();
            if na > 0.0 && nb > 0.0 {
                assert!((dot / (na * nb) - 1.0).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn clip_rejects_non_finite_naming_tensor() {
        let mut g = arr(&[1.0, f64::NAN]);
        let err = clip_grad_l1("layer3.weight", &mut g, 2.0).unwrap_err();
        assert!(err.to_string().contains("layer3.weight"));
    }

    #[test]
    fn momentum_update_matches_hand_computation() {
        let mut p = Param::new("w", arr(&[1.0, 2.0]), true);
        p.grad = arr(&[0.1, -0.2]);
        let mut sgd = Sgd::new(0.9, 0.0, None);
        sgd.step(0.5, &mut [&mut p]).unwrap();
        // v = g, w -= lr * v
        assert_eq!(p.value, arr(&[1.0 - 0.05, 2.0 + 0.1]));
        p.grad = arr(&[0.1, -0.2]);
        sgd.step(0.5, &mut [&mut p]).unwrap();
        // v = 0.9 * v + g = 0.19 / -0.38
        assert!((p.value[[0]] - (0.95 - 0.5 * 0.19)).abs() < 1e-12);
    }

    #[test]
    fn weight_decay_skips_non_decay_params() {
        let mut w = Param::new("w", arr(&[1.0]), true);
        let mut b = Param::new("b", arr(&[1.0]), false);
        let mut sgd = Sgd::new(0.0, 0.1, None);
        sgd.step(1.0, &mut [&mut w, &mut b]).unwrap();
        assert!((w.value[[0]] - 0.9).abs() < 1e-12);
        assert_eq!(b.value[[0]], 1.0);
    }
}
