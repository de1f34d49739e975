//! 2D convolution and transposed convolution over `(N, C, H, W)` images.
//!
//! Both reuse the 3D im2col/col2im kernels with a singleton temporal axis.

use ndarray::linalg::general_mat_mul;
use ndarray::parallel::prelude::*;
use ndarray::{Array1, Array2, Array4, ArrayView2, Axis};
use rand::Rng;

use super::conv3d::{col2im3d_frame, im2col3d};
use super::{import_param, init, Param, Scalar, State};
use crate::error::Result;

pub struct Conv2d<F: Scalar> {
    pub weight: Param<F>, // (Co, Ci, Kh, Kw)
    pub bias: Option<Param<F>>,
    pub stride: (usize, usize),
    pub pad: (usize, usize),
    kernel: (usize, usize),
    in_channels: usize,
    out_channels: usize,
    cache_x: Option<Array4<F>>,
}

impl<F: Scalar> Conv2d<F> {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng>(
        name: &str,
        rng: &mut R,
        in_channels: usize,
        out_channels: usize,
        kernel: (usize, usize),
        stride: (usize, usize),
        pad: (usize, usize),
        bias: bool,
    ) -> Self {
        let (kh, kw) = kernel;
        let fan_in = in_channels * kh * kw;
        let weight = Param::new(
            format!("{name}.weight"),
            init::he_normal(rng, &[out_channels, in_channels, kh, kw], fan_in),
            true,
        );
        let bias = bias.then(|| Param::new(format!("{name}.bias"), init::zeros(&[out_channels]), false));
        Conv2d {
            weight,
            bias,
            stride,
            pad,
            kernel,
            in_channels,
            out_channels,
            cache_x: None,
        }
    }

    /// Replaces the initial weights, e.g. with near-zero values for
    /// regression output layers.
    pub fn scale_weights(&mut self, factor: f64) {
        let f = F::of(factor);
        self.weight.value.mapv_inplace(|v| v * f);
    }

    pub fn out_spatial(&self, h: usize, w: usize) -> (usize, usize) {
        (
            (h + 2 * self.pad.0 - self.kernel.0) / self.stride.0 + 1,
            (w + 2 * self.pad.1 - self.kernel.1) / self.stride.1 + 1,
        )
    }

    fn col_rows(&self) -> usize {
        self.in_channels * self.kernel.0 * self.kernel.1
    }

    pub fn forward(&mut self, x: &Array4<F>, train: bool) -> Array4<F> {
        let (n, c, h, w) = x.dim();
        assert_eq!(c, self.in_channels, "conv2d input channels");
        let (ho, wo) = self.out_spatial(h, w);
        let co = self.out_channels;
        let rows = self.col_rows();
        let mut y = Array4::<F>::zeros((n, co, ho, wo));
        let xs = x.as_slice().expect("standard layout");
        let w2 = self
            .weight
            .value
            .view()
            .into_shape_with_order((co, rows))
            .expect("weight reshape");
        {
            let mut y3 = y
                .view_mut()
                .into_shape_with_order((n, co, ho * wo))
                .expect("output reshape");
            y3.axis_iter_mut(Axis(0))
                .into_par_iter()
                .enumerate()
                .for_each(|(ni, mut slice)| {
                    let mut col = vec![F::zero(); rows * ho * wo];
                    im2col3d(
                        xs,
                        (n, 1, c, h, w),
                        ni,
                        0,
                        (1, self.kernel.0, self.kernel.1),
                        (0, self.pad.0, self.pad.1),
                        self.stride,
                        (ho, wo),
                        &mut col,
                    );
                    let colv = ArrayView2::from_shape((rows, ho * wo), &col).unwrap();
                    general_mat_mul(F::one(), &w2, &colv, F::zero(), &mut slice);
                });
        }
        if let Some(b) = &self.bias {
            for ci in 0..co {
                let bv = b.value[[ci]];
                y.index_axis_mut(Axis(1), ci).mapv_inplace(|v| v + bv);
            }
        }
        if train {
            self.cache_x = Some(x.clone());
        }
        y
    }

    pub fn backward(&mut self, dy: &Array4<F>) -> Array4<F> {
        let x = self.cache_x.take().expect("forward(train) before backward");
        let (n, c, h, w) = x.dim();
        let (_, co, ho, wo) = dy.dim();
        let rows = self.col_rows();
        let xs = x.as_slice().expect("standard layout");
        let w2 = self
            .weight
            .value
            .view()
            .into_shape_with_order((co, rows))
            .expect("weight reshape");

        let mut dx = Array4::<F>::zeros((n, c, h, w));
        let partials: Vec<(Array2<F>, Array1<F>)> = dx
            .axis_iter_mut(Axis(0))
            .into_par_iter()
            .enumerate()
            .map(|(ni, mut dx_n)| {
                let mut dw_n = Array2::<F>::zeros((co, rows));
                let mut db_n = Array1::<F>::zeros(co);
                let mut col = vec![F::zero(); rows * ho * wo];
                let mut dcol = Array2::<F>::zeros((rows, ho * wo));
                im2col3d(
                    xs,
                    (n, 1, c, h, w),
                    ni,
                    0,
                    (1, self.kernel.0, self.kernel.1),
                    (0, self.pad.0, self.pad.1),
                    self.stride,
                    (ho, wo),
                    &mut col,
                );
                let colv = ArrayView2::from_shape((rows, ho * wo), &col).unwrap();
                let dy2 = dy
                    .index_axis(Axis(0), ni)
                    .into_shape_with_order((co, ho * wo))
                    .expect("dy reshape");
                general_mat_mul(F::one(), &dy2, &colv.t(), F::one(), &mut dw_n);
                if self.bias.is_some() {
                    for ci in 0..co {
                        db_n[ci] = db_n[ci] + dy2.row(ci).sum();
                    }
                }
                general_mat_mul(F::one(), &w2.t(), &dy2, F::zero(), &mut dcol);
                let dxs = dx_n.as_slice_mut().expect("standard layout");
                col2im3d_frame(
                    dcol.as_slice().unwrap(),
                    dxs,
                    (1, c, h, w),
                    0,
                    (1, self.kernel.0, self.kernel.1),
                    (0, self.pad.0, self.pad.1),
                    self.stride,
                    (ho, wo),
                );
                (dw_n, db_n)
            })
            .collect();

        let mut dw2 = self
            .weight
            .grad
            .view_mut()
            .into_shape_with_order((co, rows))
            .expect("grad reshape");
        for (dw_n, db_n) in &partials {
            dw2 += dw_n;
            if let Some(b) = &mut self.bias {
                for ci in 0..co {
                    b.grad[[ci]] = b.grad[[ci]] + db_n[ci];
                }
            }
        }
        dx
    }
}

impl<F: Scalar> State<F> for Conv2d<F> {
    fn collect_params<'a>(&'a mut self, out: &mut Vec<&'a mut Param<F>>) {
        out.push(&mut self.weight);
        if let Some(b) = &mut self.bias {
            out.push(b);
        }
    }

    fn export_state(&self, out: &mut Vec<(String, ndarray::ArrayD<F>)>) {
        out.push((self.weight.name.clone(), self.weight.value.clone()));
        if let Some(b) = &self.bias {
            out.push((b.name.clone(), b.value.clone()));
        }
    }

    fn import_state(
        &mut self,
        map: &std::collections::HashMap<String, ndarray::ArrayD<F>>,
    ) -> Result<()> {
        import_param(map, &mut self.weight)?;
        if let Some(b) = &mut self.bias {
            import_param(map, b)?;
        }
        Ok(())
    }
}

/// Transposed 2D convolution (deconvolution).
///
/// `out = (in - 1) * stride - 2 * pad + kernel`, so a 4x4 kernel with
/// stride 2 and padding 1 exactly doubles the spatial dimensions.
pub struct ConvTranspose2d<F: Scalar> {
    pub weight: Param<F>, // (Ci, Co, Kh, Kw)
    pub bias: Option<Param<F>>,
    pub stride: usize,
    pub pad: usize,
    kernel: usize,
    in_channels: usize,
    out_channels: usize,
    cache_x: Option<Array4<F>>,
}

impl<F: Scalar> ConvTranspose2d<F> {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng>(
        name: &str,
        rng: &mut R,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        bias: bool,
    ) -> Self {
        let fan_in = in_channels * kernel * kernel;
        let weight = Param::new(
            format!("{name}.weight"),
            init::he_normal(rng, &[in_channels, out_channels, kernel, kernel], fan_in),
            true,
        );
        let bias = bias.then(|| Param::new(format!("{name}.bias"), init::zeros(&[out_channels]), false));
        ConvTranspose2d {
            weight,
            bias,
            stride,
            pad,
            kernel,
            in_channels,
            out_channels,
            cache_x: None,
        }
    }

    pub fn out_spatial(&self, h: usize, w: usize) -> (usize, usize) {
        (
            (h - 1) * self.stride + self.kernel - 2 * self.pad,
            (w - 1) * self.stride + self.kernel - 2 * self.pad,
        )
    }

    pub fn forward(&mut self, x: &Array4<F>, train: bool) -> Array4<F> {
        let (n, c, h, w) = x.dim();
        assert_eq!(c, self.in_channels, "deconv input channels");
        let (ho, wo) = self.out_spatial(h, w);
        let co = self.out_channels;
        let k = self.kernel;
        let rows = co * k * k;
        let w2 = self
            .weight
            .value
            .view()
            .into_shape_with_order((c, rows))
            .expect("weight reshape");

        let mut y = Array4::<F>::zeros((n, co, ho, wo));
        y.axis_iter_mut(Axis(0))
            .into_par_iter()
            .enumerate()
            .for_each(|(ni, mut y_n)| {
                let x2 = x
                    .index_axis(Axis(0), ni)
                    .into_shape_with_order((c, h * w))
                    .expect("input reshape");
                let mut cols = Array2::<F>::zeros((rows, h * w));
                general_mat_mul(F::one(), &w2.t(), &x2, F::zero(), &mut cols);
                let ys = y_n.as_slice_mut().expect("standard layout");
                col2im3d_frame(
                    cols.as_slice().unwrap(),
                    ys,
                    (1, co, ho, wo),
                    0,
                    (1, k, k),
                    (0, self.pad, self.pad),
                    (self.stride, self.stride),
                    (h, w),
                );
            });
        if let Some(b) = &self.bias {
            for ci in 0..co {
                let bv = b.value[[ci]];
                y.index_axis_mut(Axis(1), ci).mapv_inplace(|v| v + bv);
            }
        }
        if train {
            self.cache_x = Some(x.clone());
        }
        y
    }

    pub fn backward(&mut self, dy: &Array4<F>) -> Array4<F> {
        let x = self.cache_x.take().expect("forward(train) before backward");
        let (n, c, h, w) = x.dim();
        let (_, co, ho, wo) = dy.dim();
        let k = self.kernel;
        let rows = co * k * k;
        let dys = dy.as_slice().expect("standard layout");
        let w2 = self
            .weight
            .value
            .view()
            .into_shape_with_order((c, rows))
            .expect("weight reshape");

        let mut dx = Array4::<F>::zeros((n, c, h, w));
        let partials: Vec<(Array2<F>, Array1<F>)> = dx
            .axis_iter_mut(Axis(0))
            .into_par_iter()
            .enumerate()
            .map(|(ni, mut dx_n)| {
                // G[(co,kh,kw),(ih,iw)] gathers dy at the scatter targets.
                let mut g = vec![F::zero(); rows * h * w];
                im2col3d(
                    dys,
                    (n, 1, co, ho, wo),
                    ni,
                    0,
                    (1, k, k),
                    (0, self.pad, self.pad),
                    (self.stride, self.stride),
                    (h, w),
                    &mut g,
                );
                let gv = ArrayView2::from_shape((rows, h * w), &g).unwrap();
                let x2 = x
                    .index_axis(Axis(0), ni)
                    .into_shape_with_order((c, h * w))
                    .expect("input reshape");
                let mut dw_n = Array2::<F>::zeros((c, rows));
                general_mat_mul(F::one(), &x2, &gv.t(), F::one(), &mut dw_n);
                let mut dx2 = dx_n
                    .view_mut()
                    .into_shape_with_order((c, h * w))
                    .expect("dx reshape");
                general_mat_mul(F::one(), &w2, &gv, F::zero(), &mut dx2);
                let mut db_n = Array1::<F>::zeros(co);
                if self.bias.is_some() {
                    let dy3 = dy
                        .index_axis(Axis(0), ni)
                        .into_shape_with_order((co, ho * wo))
                        .expect("dy reshape");
                    for ci in 0..co {
                        db_n[ci] = dy3.row(ci).sum();
                    }
                }
                (dw_n, db_n)
            })
            .collect();

        let mut dw2 = self
            .weight
            .grad
            .view_mut()
            .into_shape_with_order((c, rows))
            .expect("grad reshape");
        for (dw_n, db_n) in &partials {
            dw2 += dw_n;
            if let Some(b) = &mut self.bias {
                for ci in 0..co {
                    b.grad[[ci]] = b.grad[[ci]] + db_n[ci];
                }
            }
        }
        dx
    }
}

impl<F: Scalar> State<F> for ConvTranspose2d<F> {
    fn collect_params<'a>(&'a mut self, out: &mut Vec<&'a mut Param<F>>) {
        out.push(&mut self.weight);
        if let Some(b) = &mut self.bias {
            out.push(b);
        }
    }

    fn export_state(&self, out: &mut Vec<(String, ndarray::ArrayD<F>)>) {
        out.push((self.weight.name.clone(), self.weight.value.clone()));
        if let Some(b) = &self.bias {
            out.push((b.name.clone(), b.value.clone()));
        }
    }

    fn import_state(
        &mut self,
        map: &std::collections::HashMap<String, ndarray::ArrayD<F>>,
    ) -> Result<()> {
        import_param(map, &mut self.weight)?;
        if let Some(b) = &mut self.bias {
            import_param(map, b)?;
        }
        Ok(())
    }
}
