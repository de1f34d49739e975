//! Spatial max pooling and global average pooling.

use ndarray::{Array2, Array4, Array5};

use super::Scalar;

/// Spatial max pool. The backbone applies it per frame by reshaping
/// `(N, T, C, H, W)` to `(N*T, C, H, W)`; there is no temporal pooling
/// anywhere in the network.
pub struct MaxPool2d {
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    cache: Option<Cache>,
}

struct Cache {
    in_dims: (usize, usize, usize, usize),
    argmax: Vec<u32>, // flattened (N, C, Ho, Wo) -> ih * W + iw
}

impl MaxPool2d {
    pub fn new(kernel: usize, stride: usize, pad: usize) -> Self {
        MaxPool2d {
            kernel,
            stride,
            pad,
            cache: None,
        }
    }

    pub fn out_spatial(&self, h: usize, w: usize) -> (usize, usize) {
        (
            (h + 2 * self.pad - self.kernel) / self.stride + 1,
            (w + 2 * self.pad - self.kernel) / self.stride + 1,
        )
    }

    pub fn forward<F: Scalar>(&mut self, x: &Array4<F>, train: bool) -> Array4<F> {
        let (n, c, h, w) = x.dim();
        let (ho, wo) = self.out_spatial(h, w);
        let xs = x.as_slice().expect("standard layout");
        let mut y = Array4::<F>::zeros((n, c, ho, wo));
        let ys = y.as_slice_mut().unwrap();
        let mut argmax = vec![0u32; n * c * ho * wo];
        let mut oi = 0usize;
        for ni in 0..n {
            for ci in 0..c {
                let plane = (ni * c + ci) * h * w;
                for oh in 0..ho {
                    let h_lo = (oh * self.stride) as isize - self.pad as isize;
                    for ow in 0..wo {
                        let w_lo = (ow * self.stride) as isize - self.pad as isize;
                        let mut best = F::neg_infinity();
                        let mut best_idx = 0u32;
                        for ki in 0..self.kernel {
                            let ih = h_lo + ki as isize;
                            if ih < 0 || ih >= h as isize {
                                continue;
                            }
                            for kj in 0..self.kernel {
                                let iw = w_lo + kj as isize;
                                if iw < 0 || iw >= w as isize {
                                    continue;
                                }
                                let v = xs[plane + ih as usize * w + iw as usize];
                                if v > best {
                                    best = v;
                                    best_idx = (ih as usize * w + iw as usize) as u32;
                                }
                            }
                        }
                        ys[oi] = best;
                        argmax[oi] = best_idx;
                        oi += 1;
                    }
                }
            }
        }
        if train {
            self.cache = Some(Cache {
                in_dims: (n, c, h, w),
                argmax,
            });
        }
        y
    }

    pub fn backward<F: Scalar>(&mut self, dy: &Array4<F>) -> Array4<F> {
        let cache = self.cache.take().expect("forward(train) before backward");
        let (n, c, h, w) = cache.in_dims;
        let mut dx = Array4::<F>::zeros((n, c, h, w));
        let dxs = dx.as_slice_mut().unwrap();
        let dys = dy.as_slice().expect("standard layout");
        let (_, _, ho, wo) = dy.dim();
        let mut oi = 0usize;
        for ni in 0..n {
            for ci in 0..c {
                let plane = (ni * c + ci) * h * w;
                for _ in 0..ho * wo {
                    let d = plane + cache.argmax[oi] as usize;
                    dxs[d] = dxs[d] + dys[oi];
                    oi += 1;
                }
            }
        }
        dx
    }
}

/// Mean over `(T, H, W)` of a `(N, T, C, H, W)` clip, yielding `(N, C)`.
pub struct GlobalAvgPool3d {
    in_dims: Option<(usize, usize, usize, usize, usize)>,
}

impl GlobalAvgPool3d {
    pub fn new() -> Self {
        GlobalAvgPool3d { in_dims: None }
    }

    pub fn forward<F: Scalar>(&mut self, x: &Array5<F>) -> Array2<F> {
        let (n, t, c, h, w) = x.dim();
        self.in_dims = Some((n, t, c, h, w));
        let m = F::of((t * h * w) as f64);
        let mut y = Array2::<F>::zeros((n, c));
        for ni in 0..n {
            for ti in 0..t {
                for ci in 0..c {
                    let plane = x
                        .index_axis(ndarray::Axis(0), ni)
                        .index_axis(ndarray::Axis(0), ti)
                        .index_axis(ndarray::Axis(0), ci)
                        .to_owned();
                    y[[ni, ci]] = y[[ni, ci]] + plane.sum();
                }
            }
        }
        y.mapv_inplace(|v| v / m);
        y
    }

    pub fn backward<F: Scalar>(&mut self, dy: &Array2<F>) -> Array5<F> {
        let (n, t, c, h, w) = self.in_dims.take().expect("forward before backward");
        let m = F::of((t * h * w) as f64);
        let mut dx = Array5::<F>::zeros((n, t, c, h, w));
        for ni in 0..n {
            for ti in 0..t {
                for ci in 0..c {
                    let g = dy[[ni, ci]] / m;
                    dx.index_axis_mut(ndarray::Axis(0), ni)
                        .index_axis_mut(ndarray::Axis(0), ti)
                        .index_axis_mut(ndarray::Axis(0), ci)
                        .fill(g);
                }
            }
        }
        dx
    }
}

/// Mean over `(H, W)` of a `(N, C, H, W)` image, yielding `(N, C)`.
pub struct GlobalAvgPool2d {
    in_dims: Option<(usize, usize, usize, usize)>,
}

impl GlobalAvgPool2d {
    pub fn new() -> Self {
        GlobalAvgPool2d { in_dims: None }
    }

    pub fn forward<F: Scalar>(&mut self, x: &Array4<F>) -> Array2<F> {
        let (n, c, h, w) = x.dim();
        self.in_dims = Some((n, c, h, w));
        let m = F::of((h * w) as f64);
        let mut y = Array2::<F>::zeros((n, c));
        for ni in 0..n {
            for ci in 0..c {
                y[[ni, ci]] = x
                    .index_axis(ndarray::Axis(0), ni)
                    .index_axis(ndarray::Axis(0), ci)
                    .sum()
                    / m;
            }
        }
        y
    }

    pub fn backward<F: Scalar>(&mut self, dy: &Array2<F>) -> Array4<F> {
        let (n, c, h, w) = self.in_dims.take().expect("forward before backward");
        let m = F::of((h * w) as f64);
        let mut dx = Array4::<F>::zeros((n, c, h, w));
        for ni in 0..n {
            for ci in 0..c {
                let g = dy[[ni, ci]] / m;
                dx.index_axis_mut(ndarray::Axis(0), ni)
                    .index_axis_mut(ndarray::Axis(0), ci)
                    .fill(g);
            }
        }
        dx
    }
}

impl Default for GlobalAvgPool3d {
    fn default() -> Self {
        Self::new()
    }
}

impl Default for GlobalAvgPool2d {
    fn default() -> Self {
        Self::new()
    }
}
