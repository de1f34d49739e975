//! Finite-difference verification of every layer's backward pass, plus a
//! naive direct-convolution oracle for the im2col/GEMM path. All checks run
//! in f64.

use ndarray::{Array2, Array3, Array4, Array5, ArrayD};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::ops::{cross_entropy, Relu};
use super::*;

const EPS: f64 = 1e-5;
const TOL: f64 = 1e-6;

fn rel_err(a: f64, b: f64) -> f64 {
    let denom = a.abs().max(b.abs());
    if denom < 1e-9 {
        return (a - b).abs();
    }
    (a - b).abs() / denom
}

fn rand_array<Sh: ndarray::ShapeBuilder>(rng: &mut ChaCha8Rng, shape: Sh) -> ndarray::Array<f64, Sh::Dim> {
    ndarray::Array::from_shape_simple_fn(shape, || rng.gen::<f64>() * 2.0 - 1.0)
}

/// loss = sum(y * g) so dL/dy = g for a fixed random g.
fn weighted_loss<D: ndarray::Dimension>(y: &ndarray::Array<f64, D>, g: &ndarray::Array<f64, D>) -> f64 {
    (y * g).sum()
}

fn check_param_grads(
    name: &str,
    analytic: &ArrayD<f64>,
    mut eval_at: impl FnMut(f64, usize) -> f64,
    count: usize,
) {
    let n = analytic.len();
    let flat = analytic.as_slice().unwrap();
    let step = (n / count).max(1);
    for idx in (0..n).step_by(step) {
        let plus = eval_at(EPS, idx);
        let minus = eval_at(-EPS, idx);
        let fd = (plus - minus) / (2.0 * EPS);
        let err = rel_err(flat[idx], fd);
        assert!(
            err < TOL.max(1e-4),
            "{name}[{idx}]: analytic={} fd={} rel={err}",
            flat[idx],
            fd
        );
    }
}

fn naive_conv3d(
    x: &Array5<f64>,
    w: &ArrayD<f64>,
    b: Option<&ArrayD<f64>>,
    stride: (usize, usize),
    pad: (usize, usize, usize),
) -> Array5<f64> {
    let (n, t, c, h, wd) = x.dim();
    let co = w.shape()[0];
    let (kt, kh, kw) = (w.shape()[2], w.shape()[3], w.shape()[4]);
    let ho = (h + 2 * pad.1 - kh) / stride.0 + 1;
    let wo = (wd + 2 * pad.2 - kw) / stride.1 + 1;
    let mut y = Array5::<f64>::zeros((n, t, co, ho, wo));
    for ni in 0..n {
        for ti in 0..t {
            for coi in 0..co {
                for oh in 0..ho {
                    for ow in 0..wo {
                        let mut acc = b.map(|b| b[[coi]]).unwrap_or(0.0);
                        for ci in 0..c {
                            for dt in 0..kt {
                                let tt = ti as isize + dt as isize - pad.0 as isize;
                                if tt < 0 || tt >= t as isize {
                                    continue;
                                }
                                for ki in 0..kh {
                                    let ih = (oh * stride.0 + ki) as isize - pad.1 as isize;
                                    if ih < 0 || ih >= h as isize {
                                        continue;
                                    }
                                    for kj in 0..kw {
                                        let iw = (ow * stride.1 + kj) as isize - pad.2 as isize;
                                        if iw < 0 || iw >= wd as isize {
                                            continue;
                                        }
                                        acc += w[[coi, ci, dt, ki, kj]]
                                            * x[[ni, tt as usize, ci, ih as usize, iw as usize]];
                                    }
                                }
                            }
                        }
                        y[[ni, ti, coi, oh, ow]] = acc;
                    }
                }
            }
        }
    }
    y
}

#[test]
fn conv3d_forward_matches_naive_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut conv = Conv3d::<f64>::new("c", &mut rng, 3, 4, (3, 3, 3), (2, 2), (1, 1, 1), true);
    let x: Array5<f64> = rand_array(&mut rng, (2, 4, 3, 9, 7));
    let y = conv.forward(&x, false);
    let want = naive_conv3d(&x, &conv.weight.value, Some(&conv.bias.as_ref().unwrap().value), (2, 2), (1, 1, 1));
    assert_eq!(y.dim(), want.dim());
    let max_diff = (&y - &want).iter().fold(0.0f64, |m, v| m.max(v.abs()));
    assert!(max_diff < 1e-10, "max diff {max_diff}");
}

#[test]
fn conv3d_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut conv = Conv3d::<f64>::new("c", &mut rng, 2, 3, (3, 3, 3), (2, 2), (1, 1, 1), true);
    let x: Array5<f64> = rand_array(&mut rng, (2, 3, 2, 6, 5));
    let g: Array5<f64> = rand_array(&mut rng, conv.forward(&x, false).dim());

    let y = conv.forward(&x, true);
    let dx = conv.backward(&g);
    let _ = y;

    let w0 = conv.weight.value.clone();
    let wg = conv.weight.grad.clone();
    check_param_grads(
        "conv3d.weight",
        &wg,
        |eps, idx| {
            let mut w = w0.clone();
            w.as_slice_mut().unwrap()[idx] += eps;
            conv.weight.value = w;
            let y = conv.forward(&x, false);
            conv.weight.value = w0.clone();
            weighted_loss(&y, &g)
        },
        12,
    );
    let bg = conv.bias.as_ref().unwrap().grad.clone();
    let b0 = conv.bias.as_ref().unwrap().value.clone();
    check_param_grads(
        "conv3d.bias",
        &bg,
        |eps, idx| {
            let mut b = b0.clone();
            b.as_slice_mut().unwrap()[idx] += eps;
            conv.bias.as_mut().unwrap().value = b;
            let y = conv.forward(&x, false);
            conv.bias.as_mut().unwrap().value = b0.clone();
            weighted_loss(&y, &g)
        },
        3,
    );
    let dxd = dx.into_dyn();
    check_param_grads(
        "conv3d.input",
        &dxd,
        |eps, idx| {
            let mut xp = x.clone();
            xp.as_slice_mut().unwrap()[idx] += eps;
            weighted_loss(&conv.forward(&xp, false), &g)
        },
        15,
    );
}

#[test]
fn conv2d_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut conv = Conv2d::<f64>::new("c", &mut rng, 3, 4, (3, 3), (1, 1), (1, 1), true);
    let x: Array4<f64> = rand_array(&mut rng, (2, 3, 5, 6));
    let g: Array4<f64> = rand_array(&mut rng, conv.forward(&x, false).dim());
    conv.forward(&x, true);
    let dx = conv.backward(&g);

    let w0 = conv.weight.value.clone();
    let wg = conv.weight.grad.clone();
    check_param_grads(
        "conv2d.weight",
        &wg,
        |eps, idx| {
            let mut w = w0.clone();
            w.as_slice_mut().unwrap()[idx] += eps;
            conv.weight.value = w;
            let y = conv.forward(&x, false);
            conv.weight.value = w0.clone();
            weighted_loss(&y, &g)
        },
        12,
    );
    let dxd = dx.into_dyn();
    check_param_grads(
        "conv2d.input",
        &dxd,
        |eps, idx| {
            let mut xp = x.clone();
            xp.as_slice_mut().unwrap()[idx] += eps;
            weighted_loss(&conv.forward(&xp, false), &g)
        },
        12,
    );
}

#[test]
fn deconv_doubles_spatial_dims_and_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut deconv = ConvTranspose2d::<f64>::new("d", &mut rng, 3, 2, 4, 2, 1, true);
    let x: Array4<f64> = rand_array(&mut rng, (2, 3, 5, 4));
    let y = deconv.forward(&x, false);
    assert_eq!(y.dim(), (2, 2, 10, 8));

    let g: Array4<f64> = rand_array(&mut rng, y.dim());
    deconv.forward(&x, true);
    let dx = deconv.backward(&g);

    let w0 = deconv.weight.value.clone();
    let wg = deconv.weight.grad.clone();
    check_param_grads(
        "deconv.weight",
        &wg,
        |eps, idx| {
            let mut w = w0.clone();
            w.as_slice_mut().unwrap()[idx] += eps;
            deconv.weight.value = w;
            let y = deconv.forward(&x, false);
            deconv.weight.value = w0.clone();
            weighted_loss(&y, &g)
        },
        12,
    );
    let bg = deconv.bias.as_ref().unwrap().grad.clone();
    let b0 = deconv.bias.as_ref().unwrap().value.clone();
    check_param_grads(
        "deconv.bias",
        &bg,
        |eps, idx| {
            let mut b = b0.clone();
            b.as_slice_mut().unwrap()[idx] += eps;
            deconv.bias.as_mut().unwrap().value = b;
            let y = deconv.forward(&x, false);
            deconv.bias.as_mut().unwrap().value = b0.clone();
            weighted_loss(&y, &g)
        },
        2,
    );
    let dxd = dx.into_dyn();
    check_param_grads(
        "deconv.input",
        &dxd,
        |eps, idx| {
            let mut xp = x.clone();
            xp.as_slice_mut().unwrap()[idx] += eps;
            weighted_loss(&deconv.forward(&xp, false), &g)
        },
        12,
    );
}

#[test]
fn batchnorm_train_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut bn = BatchNorm::<f64>::new("bn", &mut rng, 3);
    // Non-trivial gamma/beta.
    bn.gamma.value = rand_array(&mut rng, 3).into_dyn().mapv(|v: f64| v + 1.5);
    bn.beta.value = rand_array(&mut rng, 3).into_dyn();
    let x: Array3<f64> = rand_array(&mut rng, (4, 3, 6));
    let g: Array3<f64> = rand_array(&mut rng, (4, 3, 6));

    // Fresh BN per forward so running stats don't drift across FD evals.
    bn.forward(&x, true);
    let dx = bn.backward(&g);

    let g0 = bn.gamma.value.clone();
    let gg = bn.gamma.grad.clone();
    check_param_grads(
        "bn.gamma",
        &gg,
        |eps, idx| {
            let mut gv = g0.clone();
            gv.as_slice_mut().unwrap()[idx] += eps;
            bn.gamma.value = gv;
            let y = bn.forward(&x, true);
            bn.gamma.value = g0.clone();
            weighted_loss(&y, &g)
        },
        3,
    );
    let b0 = bn.beta.value.clone();
    let bg = bn.beta.grad.clone();
    check_param_grads(
        "bn.beta",
        &bg,
        |eps, idx| {
            let mut bv = b0.clone();
            bv.as_slice_mut().unwrap()[idx] += eps;
            bn.beta.value = bv;
            let y = bn.forward(&x, true);
            bn.beta.value = b0.clone();
            weighted_loss(&y, &g)
        },
        3,
    );
    let dxd = dx.into_dyn();
    check_param_grads(
        "bn.input",
        &dxd,
        |eps, idx| {
            let mut xp = x.clone();
            xp.as_slice_mut().unwrap()[idx] += eps;
            let y = bn.forward(&xp, true);
            weighted_loss(&y, &g)
        },
        12,
    );
}

#[test]
fn batchnorm_eval_uses_running_stats() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut bn = BatchNorm::<f64>::new("bn", &mut rng, 2);
    let x: Array3<f64> = rand_array(&mut rng, (8, 2, 4));
    for _ in 0..200 {
        bn.forward(&x, true);
    }
    let y = bn.forward(&x, false);
    // After convergence of running stats, eval output is near the train
    // output: normalized batch has ~zero mean per channel.
    for ci in 0..2 {
        let yc = y.index_axis(ndarray::Axis(1), ci);
        let mean = yc.sum() / yc.len() as f64;
        assert!((mean - bn.beta.value[[ci]]).abs() < 1e-6);
    }
}

#[test]
fn linear_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut lin = Linear::<f64>::new("fc", &mut rng, 5, 3, 0.3);
    let x: Array2<f64> = rand_array(&mut rng, (4, 5));
    let g: Array2<f64> = rand_array(&mut rng, (4, 3));
    lin.forward(&x, true);
    let dx = lin.backward(&g);

    let w0 = lin.weight.value.clone();
    let wg = lin.weight.grad.clone();
    check_param_grads(
        "linear.weight",
        &wg,
        |eps, idx| {
            let mut w = w0.clone();
            w.as_slice_mut().unwrap()[idx] += eps;
            lin.weight.value = w;
            let y = lin.forward(&x, false);
            lin.weight.value = w0.clone();
            weighted_loss(&y, &g)
        },
        15,
    );
    let dxd = dx.into_dyn();
    check_param_grads(
        "linear.input",
        &dxd,
        |eps, idx| {
            let mut xp = x.clone();
            xp.as_slice_mut().unwrap()[idx] += eps;
            weighted_loss(&lin.forward(&xp, false), &g)
        },
        10,
    );
}

#[test]
fn maxpool_input_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut pool = MaxPool2d::new(3, 2, 1);
    let x: Array4<f64> = rand_array(&mut rng, (2, 2, 7, 7));
    let y = pool.forward(&x, false);
    assert_eq!(y.dim(), (2, 2, 4, 4));
    let g: Array4<f64> = rand_array(&mut rng, y.dim());
    pool.forward(&x, true);
    let dx = pool.backward(&g).into_dyn();
    check_param_grads(
        "maxpool.input",
        &dx,
        |eps, idx| {
            let mut xp = x.clone();
            xp.as_slice_mut().unwrap()[idx] += eps;
            weighted_loss(&pool.forward(&xp, false), &g)
        },
        15,
    );
}

#[test]
fn global_pools_average_and_backprop() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let x: Array5<f64> = rand_array(&mut rng, (2, 3, 4, 2, 2));
    let mut gap = GlobalAvgPool3d::new();
    let y = gap.forward(&x);
    assert_eq!(y.dim(), (2, 4));
    let manual = x
        .index_axis(ndarray::Axis(0), 0)
        .index_axis(ndarray::Axis(1), 1)
        .sum()
        / 12.0;
    assert!((y[[0, 1]] - manual).abs() < 1e-12);

    let g: Array2<f64> = rand_array(&mut rng, (2, 4));
    gap.forward(&x);
    let dx = gap.backward(&g).into_dyn();
    check_param_grads(
        "gap3d.input",
        &dx,
        |eps, idx| {
            let mut xp = x.clone();
            xp.as_slice_mut().unwrap()[idx] += eps;
            let mut gap = GlobalAvgPool3d::new();
            weighted_loss(&gap.forward(&xp), &g)
        },
        10,
    );
}

#[test]
fn relu_masks_gradient() {
    let mut relu = Relu::new();
    let x = ndarray::array![[-1.0f64, 2.0], [0.0, -3.0]];
    let y = relu.forward(x, true);
    assert_eq!(y, ndarray::array![[0.0, 2.0], [0.0, 0.0]]);
    let dy = ndarray::array![[1.0f64, 1.0], [1.0, 1.0]];
    let dx = relu.backward(dy);
    assert_eq!(dx, ndarray::array![[0.0, 1.0], [0.0, 0.0]]);
}

#[test]
fn dropout_eval_is_identity_and_train_scales() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut drop = Dropout::new(0.5);
    let x = Array2::<f64>::ones((16, 16));
    let y = drop.forward(x.clone(), None::<&mut ChaCha8Rng>);
    assert_eq!(y, x);
    let y = drop.forward(x.clone(), Some(&mut rng));
    for v in y.iter() {
        assert!(*v == 0.0 || *v == 2.0);
    }
    // Backward reuses the same mask.
    let dy = Array2::<f64>::ones((16, 16));
    let dx = drop.backward(dy);
    ndarray::Zip::from(&y).and(&dx).for_each(|&a, &b| {
        assert_eq!(a, b);
    });
}

#[test]
fn cross_entropy_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let logits: Array2<f64> = rand_array(&mut rng, (3, 5));
    let labels = [0usize, 3, 2];
    let (_, _, grad) = cross_entropy(&logits, &labels);
    let gd = grad.into_dyn();
    check_param_grads(
        "xent.logits",
        &gd,
        |eps, idx| {
            let mut lp = logits.clone();
            lp.as_slice_mut().unwrap()[idx] += eps;
            let (loss, _, _) = cross_entropy(&lp, &labels);
            loss
        },
        15,
    );
}
