//! Fully connected layer.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, Ix1, Ix2};
use rand::Rng;

use super::{import_param, init, Param, Scalar, State};
use crate::error::Result;

pub struct Linear<F: Scalar> {
    pub weight: Param<F>, // (out, in)
    pub bias: Param<F>,   // (out)
    cache_x: Option<Array2<F>>,
}

impl<F: Scalar> Linear<F> {
    pub fn new<R: Rng>(name: &str, rng: &mut R, in_dim: usize, out_dim: usize, std: f64) -> Self {
        Linear {
            weight: Param::new(
                format!("{name}.weight"),
                init::normal(rng, &[out_dim, in_dim], std),
                true,
            ),
            bias: Param::new(format!("{name}.bias"), init::zeros(&[out_dim]), false),
            cache_x: None,
        }
    }

    pub fn forward(&mut self, x: &Array2<F>, train: bool) -> Array2<F> {
        let w = self
            .weight
            .value
            .view()
            .into_dimensionality::<Ix2>()
            .expect("2-d weight");
        let mut y = x.dot(&w.t());
        let b = self
            .bias
            .value
            .view()
            .into_dimensionality::<Ix1>()
            .expect("1-d bias");
        y += &b;
        if train {
            self.cache_x = Some(x.clone());
        }
        y
    }

    pub fn backward(&mut self, dy: &Array2<F>) -> Array2<F> {
        let x = self.cache_x.take().expect("forward(train) before backward");
        {
            let mut gw = self
                .weight
                .grad
                .view_mut()
                .into_dimensionality::<Ix2>()
                .expect("2-d grad");
            general_mat_mul(F::one(), &dy.t(), &x.view(), F::one(), &mut gw);
            let mut gb = self
                .bias
                .grad
                .view_mut()
                .into_dimensionality::<Ix1>()
                .expect("1-d grad");
            for (i, col) in dy.t().rows().into_iter().enumerate() {
                gb[i] = gb[i] + col.sum();
            }
        }
        let w = self
            .weight
            .value
            .view()
            .into_dimensionality::<Ix2>()
            .expect("2-d weight");
        dy.dot(&w)
    }
}

impl<F: Scalar> State<F> for Linear<F> {
    fn collect_params<'a>(&'a mut self, out: &mut Vec<&'a mut Param<F>>) {
        out.push(&mut self.weight);
        out.push(&mut self.bias);
    }

    fn export_state(&self, out: &mut Vec<(String, ndarray::ArrayD<F>)>) {
        out.push((self.weight.name.clone(), self.weight.value.clone()));
        out.push((self.bias.name.clone(), self.bias.value.clone()));
    }

    fn import_state(
        &mut self,
        map: &std::collections::HashMap<String, ndarray::ArrayD<F>>,
    ) -> Result<()> {
        import_param(map, &mut self.weight)?;
        import_param(map, &mut self.bias)?;
        Ok(())
    }
}
