//! 3D convolution over `(N, T, C, H, W)` clips.
//!
//! Temporal stride is always 1 and temporal padding `(kt - 1) / 2`
//! preserves the clip length. Spatial geometry follows ordinary 2D
//! convolution arithmetic. Forward and backward run one im2col + GEMM per
//! `(sample, output frame)` pair.

use ndarray::linalg::general_mat_mul;
use ndarray::parallel::prelude::*;
use ndarray::{Array1, Array2, Array5, ArrayView2, Axis};
use rand::Rng;

use super::{import_param, init, Param, Scalar, State};
use crate::error::Result;

pub struct Conv3d<F: Scalar> {
    pub weight: Param<F>, // (Co, Ci, Kt, Kh, Kw)
    pub bias: Option<Param<F>>,
    pub stride: (usize, usize),
    pub pad: (usize, usize, usize),
    kernel: (usize, usize, usize),
    in_channels: usize,
    out_channels: usize,
    cache_x: Option<Array5<F>>,
}

impl<F: Scalar> Conv3d<F> {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng>(
        name: &str,
        rng: &mut R,
        in_channels: usize,
        out_channels: usize,
        kernel: (usize, usize, usize),
        stride: (usize, usize),
        pad: (usize, usize, usize),
        bias: bool,
    ) -> Self {
        let (kt, kh, kw) = kernel;
        let fan_in = in_channels * kt * kh * kw;
        let weight = Param::new(
            format!("{name}.weight"),
            init::he_normal(rng, &[out_channels, in_channels, kt, kh, kw], fan_in),
            true,
        );
        let bias = bias.then(|| Param::new(format!("{name}.bias"), init::zeros(&[out_channels]), false));
        Conv3d {
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
        let (kt, kh, kw) = self.kernel;
        let _ = kt;
        (
            (h + 2 * self.pad.1 - kh) / self.stride.0 + 1,
            (w + 2 * self.pad.2 - kw) / self.stride.1 + 1,
        )
    }

    fn col_rows(&self) -> usize {
        let (kt, kh, kw) = self.kernel;
        self.in_channels * kt * kh * kw
    }

    pub fn forward(&mut self, x: &Array5<F>, train: bool) -> Array5<F> {
        let (n, t, c, h, w) = x.dim();
        assert_eq!(c, self.in_channels, "conv3d input channels");
        let (ho, wo) = self.out_spatial(h, w);
        let co = self.out_channels;
        let rows = self.col_rows();
        let mut y = Array5::<F>::zeros((n, t, co, ho, wo));
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
                .into_shape_with_order((n * t, co, ho * wo))
                .expect("output reshape");
            y3.axis_iter_mut(Axis(0))
                .into_par_iter()
                .enumerate()
                .for_each(|(idx, mut slice)| {
                    let (ni, ti) = (idx / t, idx % t);
                    let mut col = vec![F::zero(); rows * ho * wo];
                    im2col3d(
                        xs,
                        (n, t, c, h, w),
                        ni,
                        ti,
                        self.kernel,
                        self.pad,
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
                y.index_axis_mut(Axis(2), ci).mapv_inplace(|v| v + bv);
            }
        }
        if train {
            self.cache_x = Some(x.clone());
        }
        y
    }

    pub fn backward(&mut self, dy: &Array5<F>) -> Array5<F> {
        self.backward_impl(dy, true).expect("dx requested")
    }

    /// Backward pass for the first network layer, where no input gradient
    /// is needed.
    pub fn backward_weights_only(&mut self, dy: &Array5<F>) {
        self.backward_impl(dy, false);
    }

    fn backward_impl(&mut self, dy: &Array5<F>, need_dx: bool) -> Option<Array5<F>> {
        let x = self.cache_x.take().expect("forward(train) before backward");
        let (n, t, c, h, w) = x.dim();
        let (_, _, co, ho, wo) = dy.dim();
        let rows = self.col_rows();
        let xs = x.as_slice().expect("standard layout");

        // Each sample is independent; per-sample weight-gradient partials
        // are reduced in index order afterwards so results do not depend on
        // thread scheduling.
        let mut dx = need_dx.then(|| Array5::<F>::zeros((n, t, c, h, w)));
        let partials: Vec<(Array2<F>, Array1<F>)> = match &mut dx {
            Some(dx) => dx
                .axis_iter_mut(Axis(0))
                .into_par_iter()
                .enumerate()
                .map(|(ni, mut dx_n)| {
                    self.sample_grads(xs, dy, (n, t, c, h, w), (co, ho, wo), ni, Some(dx_n.as_slice_mut().expect("standard layout")))
                })
                .collect(),
            None => (0..n)
                .into_par_iter()
                .map(|ni| self.sample_grads(xs, dy, (n, t, c, h, w), (co, ho, wo), ni, None))
                .collect(),
        };

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

    #[allow(clippy::too_many_arguments)]
    fn sample_grads(
        &self,
        xs: &[F],
        dy: &Array5<F>,
        dims: (usize, usize, usize, usize, usize),
        out_dims: (usize, usize, usize),
        ni: usize,
        mut dxs: Option<&mut [F]>,
    ) -> (Array2<F>, Array1<F>) {
        let (n, t, c, h, w) = dims;
        let (co, ho, wo) = out_dims;
        let rows = self.col_rows();
        let w2 = self
            .weight
            .value
            .view()
            .into_shape_with_order((co, rows))
            .expect("weight reshape");
        let mut dw_n = Array2::<F>::zeros((co, rows));
        let mut db_n = Array1::<F>::zeros(co);
        let mut col = vec![F::zero(); rows * ho * wo];
        let mut dcol = Array2::<F>::zeros((rows, ho * wo));
        for ti in 0..t {
            im2col3d(
                xs,
                (n, t, c, h, w),
                ni,
                ti,
                self.kernel,
                self.pad,
                self.stride,
                (ho, wo),
                &mut col,
            );
            let colv = ArrayView2::from_shape((rows, ho * wo), &col).unwrap();
            let dy_nt = dy.index_axis(Axis(0), ni);
            let dy2 = dy_nt
                .index_axis(Axis(0), ti)
                .into_shape_with_order((co, ho * wo))
                .expect("dy reshape");
            general_mat_mul(F::one(), &dy2, &colv.t(), F::one(), &mut dw_n);
            if self.bias.is_some() {
                for ci in 0..co {
                    db_n[ci] = db_n[ci] + dy2.row(ci).sum();
                }
            }
            if let Some(dxs) = dxs.as_deref_mut() {
                general_mat_mul(F::one(), &w2.t(), &dy2, F::zero(), &mut dcol);
                col2im3d_frame(
                    dcol.as_slice().unwrap(),
                    dxs,
                    (t, c, h, w),
                    ti,
                    self.kernel,
                    self.pad,
                    self.stride,
                    (ho, wo),
                );
            }
        }
        (dw_n, db_n)
    }
}

impl<F: Scalar> State<F> for Conv3d<F> {
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

/// Gathers the receptive fields contributing to output frame `t_out` of
/// sample `ni` into `col` with shape `(C*Kt*Kh*Kw, Ho*Wo)` row-major.
#[allow(clippy::too_many_arguments)]
pub(super) fn im2col3d<F: Scalar>(
    xs: &[F],
    dims: (usize, usize, usize, usize, usize),
    ni: usize,
    t_out: usize,
    kernel: (usize, usize, usize),
    pad: (usize, usize, usize),
    stride: (usize, usize),
    out_hw: (usize, usize),
    col: &mut [F],
) {
    let (_n, t, c, h, w) = dims;
    let (kt, kh, kw) = kernel;
    let (pt, ph, pw) = pad;
    let (sh, sw) = stride;
    let (ho, wo) = out_hw;
    let howo = ho * wo;
    for ci in 0..c {
        for dt in 0..kt {
            let t_in = t_out as isize + dt as isize - pt as isize;
            let block = ((ci * kt + dt) * kh * kw) * howo;
            if t_in < 0 || t_in >= t as isize {
                col[block..block + kh * kw * howo].fill(F::zero());
                continue;
            }
            let frame = (((ni * t + t_in as usize) * c + ci) * h) * w;
            for ki in 0..kh {
                for kj in 0..kw {
                    let row_off = block + (ki * kw + kj) * howo;
                    let shift = kj as isize - pw as isize;
                    let ow_lo = if shift < 0 {
                        ((-shift) as usize).div_ceil(sw)
                    } else {
                        0
                    };
                    let ow_hi = if (w as isize) > shift {
                        (((w as isize - 1 - shift) / sw as isize + 1) as usize).min(wo)
                    } else {
                        0
                    };
                    let ow_hi = ow_hi.max(ow_lo);
                    for oh in 0..ho {
                        let ih = (oh * sh + ki) as isize - ph as isize;
                        let dst = row_off + oh * wo;
                        if ih < 0 || ih >= h as isize {
                            col[dst..dst + wo].fill(F::zero());
                            continue;
                        }
                        let src_row = frame + ih as usize * w;
                        col[dst..dst + ow_lo].fill(F::zero());
                        if sw == 1 {
                            let src = src_row as isize + ow_lo as isize * sw as isize + shift;
                            col[dst + ow_lo..dst + ow_hi]
                                .copy_from_slice(&xs[src as usize..src as usize + (ow_hi - ow_lo)]);
                        } else {
                            for ow in ow_lo..ow_hi {
                                let iw = (ow * sw) as isize + shift;
                                col[dst + ow] = xs[src_row + iw as usize];
                            }
                        }
                        col[dst + ow_hi..dst + wo].fill(F::zero());
                    }
                }
            }
        }
    }
}

/// Scatter-adds a column gradient back into the input gradient of one
/// sample. `dxs` is the `(T, C, H, W)` slice of that sample.
#[allow(clippy::too_many_arguments)]
pub(super) fn col2im3d_frame<F: Scalar>(
    dcol: &[F],
    dxs: &mut [F],
    dims: (usize, usize, usize, usize),
    t_out: usize,
    kernel: (usize, usize, usize),
    pad: (usize, usize, usize),
    stride: (usize, usize),
    out_hw: (usize, usize),
) {
    let (t, c, h, w) = dims;
    let (kt, kh, kw) = kernel;
    let (pt, ph, pw) = pad;
    let (sh, sw) = stride;
    let (ho, wo) = out_hw;
    let howo = ho * wo;
    for ci in 0..c {
        for dt in 0..kt {
            let t_in = t_out as isize + dt as isize - pt as isize;
            if t_in < 0 || t_in >= t as isize {
                continue;
            }
            let frame = ((t_in as usize * c + ci) * h) * w;
            let block = ((ci * kt + dt) * kh * kw) * howo;
            for ki in 0..kh {
                for kj in 0..kw {
                    let row_off = block + (ki * kw + kj) * howo;
                    let shift = kj as isize - pw as isize;
                    for oh in 0..ho {
                        let ih = (oh * sh + ki) as isize - ph as isize;
                        if ih < 0 || ih >= h as isize {
                            continue;
                        }
                        let dst_row = frame + ih as usize * w;
                        let src = row_off + oh * wo;
                        for ow in 0..wo {
                            let iw = (ow * sw) as isize + shift;
                            if iw < 0 || iw >= w as isize {
                                continue;
                            }
                            let d = dst_row + iw as usize;
                            dxs[d] = dxs[d] + dcol[src + ow];
                        }
                    }
                }
            }
        }
    }
}
