//! Batch normalization over the channel axis.
//!
//! Operates on `(N', C, S)` where `S` is the flattened spatial extent;
//! callers reshape `(N, T, C, H, W)` clips to `(N*T, C, H*W)` and
//! `(N, C, H, W)` images to `(N, C, H*W)`, which makes the per-frame and
//! per-image statistics identical to the usual 3D/2D variants.

use ndarray::{Array1, Array3, Array4, Array5, ArrayBase, ArrayD, Axis, Data, Ix1, Ix3};
use rand::Rng;

use super::{init, take_tensor, Param, Scalar, State};
use crate::error::Result;

pub struct BatchNorm<F: Scalar> {
    pub gamma: Param<F>,
    pub beta: Param<F>,
    pub running_mean: Array1<F>,
    pub running_var: Array1<F>,
    pub momentum: f64,
    pub eps: f64,
    name: String,
    channels: usize,
    cache: Option<Cache<F>>,
}

struct Cache<F> {
    xhat: Array3<F>,
    inv_std: Array1<F>,
}

impl<F: Scalar> BatchNorm<F> {
    pub fn new<R: Rng>(name: &str, _rng: &mut R, channels: usize) -> Self {
        BatchNorm {
            gamma: Param::new(format!("{name}.gamma"), init::ones(&[channels]), false),
            beta: Param::new(format!("{name}.beta"), init::zeros(&[channels]), false),
            running_mean: Array1::zeros(channels),
            running_var: Array1::from_elem(channels, F::one()),
            momentum: 0.9,
            eps: 1e-5,
            name: name.to_string(),
            channels,
            cache: None,
        }
    }

    pub fn forward<S: Data<Elem = F>>(&mut self, x: &ArrayBase<S, Ix3>, train: bool) -> Array3<F> {
        let (n, c, s) = x.dim();
        assert_eq!(c, self.channels, "batchnorm channels");
        let eps = F::of(self.eps);
        let mut y = Array3::<F>::zeros((n, c, s));
        if train {
            let m = F::of((n * s) as f64);
            let mut xhat = Array3::<F>::zeros((n, c, s));
            let mut inv_std = Array1::<F>::zeros(c);
            let mom = F::of(self.momentum);
            let one_minus = F::one() - mom;
            for ci in 0..c {
                let xc = x.index_axis(Axis(1), ci);
                let mut sum = F::zero();
                for v in xc.iter() {
                    sum = sum + *v;
                }
                let mean = sum / m;
                let mut var_sum = F::zero();
                for v in xc.iter() {
                    let d = *v - mean;
                    var_sum = var_sum + d * d;
                }
                let var = var_sum / m;
                let istd = F::one() / (var + eps).sqrt();
                inv_std[ci] = istd;
                let g = self.gamma.value[[ci]];
                let b = self.beta.value[[ci]];
                let mut xh = xhat.index_axis_mut(Axis(1), ci);
                let mut yc = y.index_axis_mut(Axis(1), ci);
                ndarray::Zip::from(&mut xh).and(&mut yc).and(&xc).for_each(|h, o, &v| {
                    let norm = (v - mean) * istd;
                    *h = norm;
                    *o = g * norm + b;
                });
                self.running_mean[ci] = mom * self.running_mean[ci] + one_minus * mean;
                self.running_var[ci] = mom * self.running_var[ci] + one_minus * var;
            }
            self.cache = Some(Cache { xhat, inv_std });
        } else {
            for ci in 0..c {
                let mean = self.running_mean[ci];
                let istd = F::one() / (self.running_var[ci] + eps).sqrt();
                let g = self.gamma.value[[ci]];
                let b = self.beta.value[[ci]];
                let xc = x.index_axis(Axis(1), ci);
                let mut yc = y.index_axis_mut(Axis(1), ci);
                ndarray::Zip::from(&mut yc).and(&xc).for_each(|o, &v| {
                    *o = g * (v - mean) * istd + b;
                });
            }
        }
        y
    }

    /// Per-frame application on a `(N, T, C, H, W)` clip.
    pub fn forward5(&mut self, x: &Array5<F>, train: bool) -> Array5<F> {
        let (n, t, c, h, w) = x.dim();
        let x3 = x
            .view()
            .into_shape_with_order((n * t, c, h * w))
            .expect("standard layout");
        self.forward(&x3, train)
            .into_shape_with_order((n, t, c, h, w))
            .expect("restore shape")
    }

    pub fn backward5(&mut self, dy: &Array5<F>) -> Array5<F> {
        let (n, t, c, h, w) = dy.dim();
        let dy3 = dy
            .view()
            .into_shape_with_order((n * t, c, h * w))
            .expect("standard layout");
        self.backward(&dy3)
            .into_shape_with_order((n, t, c, h, w))
            .expect("restore shape")
    }

    pub fn forward4(&mut self, x: &Array4<F>, train: bool) -> Array4<F> {
        let (n, c, h, w) = x.dim();
        let x3 = x
            .view()
            .into_shape_with_order((n, c, h * w))
            .expect("standard layout");
        self.forward(&x3, train)
            .into_shape_with_order((n, c, h, w))
            .expect("restore shape")
    }

    pub fn backward4(&mut self, dy: &Array4<F>) -> Array4<F> {
        let (n, c, h, w) = dy.dim();
        let dy3 = dy
            .view()
            .into_shape_with_order((n, c, h * w))
            .expect("standard layout");
        self.backward(&dy3)
            .into_shape_with_order((n, c, h, w))
            .expect("restore shape")
    }

    pub fn backward<S: Data<Elem = F>>(&mut self, dy: &ArrayBase<S, Ix3>) -> Array3<F> {
        let cache = self.cache.take().expect("forward(train) before backward");
        let (n, c, s) = dy.dim();
        let m = F::of((n * s) as f64);
        let mut dx = Array3::<F>::zeros((n, c, s));
        for ci in 0..c {
            let dyc = dy.index_axis(Axis(1), ci);
            let xh = cache.xhat.index_axis(Axis(1), ci);
            let mut sum_dy = F::zero();
            let mut sum_dy_xhat = F::zero();
            ndarray::Zip::from(&dyc).and(&xh).for_each(|&d, &h| {
                sum_dy = sum_dy + d;
                sum_dy_xhat = sum_dy_xhat + d * h;
            });
            self.beta.grad[[ci]] = self.beta.grad[[ci]] + sum_dy;
            self.gamma.grad[[ci]] = self.gamma.grad[[ci]] + sum_dy_xhat;
            let g_istd = self.gamma.value[[ci]] * cache.inv_std[ci];
            let mean_dy = sum_dy / m;
            let mean_dy_xhat = sum_dy_xhat / m;
            let mut dxc = dx.index_axis_mut(Axis(1), ci);
            ndarray::Zip::from(&mut dxc).and(&dyc).and(&xh).for_each(|o, &d, &h| {
                *o = g_istd * (d - mean_dy - h * mean_dy_xhat);
            });
        }
        dx
    }
}

impl<F: Scalar> State<F> for BatchNorm<F> {
    fn collect_params<'a>(&'a mut self, out: &mut Vec<&'a mut Param<F>>) {
        out.push(&mut self.gamma);
        out.push(&mut self.beta);
    }

    fn export_state(&self, out: &mut Vec<(String, ArrayD<F>)>) {
        out.push((self.gamma.name.clone(), self.gamma.value.clone()));
        out.push((self.beta.name.clone(), self.beta.value.clone()));
        out.push((
            format!("{}.running_mean", self.name),
            self.running_mean.clone().into_dyn(),
        ));
        out.push((
            format!("{}.running_var", self.name),
            self.running_var.clone().into_dyn(),
        ));
    }

    fn import_state(
        &mut self,
        map: &std::collections::HashMap<String, ArrayD<F>>,
    ) -> Result<()> {
        super::import_param(map, &mut self.gamma)?;
        super::import_param(map, &mut self.beta)?;
        self.running_mean = take_tensor(map, &format!("{}.running_mean", self.name), &[self.channels])?
            .into_dimensionality::<Ix1>()
            .expect("1-d buffer");
        self.running_var = take_tensor(map, &format!("{}.running_var", self.name), &[self.channels])?
            .into_dimensionality::<Ix1>()
            .expect("1-d buffer");
        Ok(())
    }
}
