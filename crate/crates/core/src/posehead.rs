//! Per-frame 2D pose estimation head: two stride-2 deconvolutions shared
//! across the temporal axis, a 1x1 output convolution emitting `3K`
//! channels per frame (`K` heatmaps, `K` x-offsets, `K` y-offsets), target
//! encoding on a disk of radius `M`, smooth-L1 losses and argmax+offset
//! decoding.
//!
//! Keypoint `l` in crop pixels maps to cell coordinates `l / cell_stride`;
//! decoding returns `(cell + offset) * cell_stride`, so offsets are
//! regressed in cell units.

use ndarray::{Array3, Array4, Array5, ArrayD, Axis, Ix4, Slice};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::geometry::Keypoint;
use crate::nn::ops::{smooth_l1, smooth_l1_grad, Relu};
use crate::nn::{BatchNorm, Conv2d, ConvTranspose2d, Param, Scalar, State};

/// Default supervision disk radius in heatmap cells.
pub const DEFAULT_DISK_RADIUS: f64 = 2.0;
/// Heatmap/offset balance of the pose loss.
pub const LAMBDA_HEATMAP: f64 = 0.5;
pub const LAMBDA_OFFSET: f64 = 0.5;

/// Per-frame heatmaps and offsets for a batch of clips.
pub struct HeatmapStack<F: Scalar> {
    /// `(N, T, K, Hc, Wc)`
    pub heatmaps: Array5<F>,
    /// `(N, T, 2K, Hc, Wc)`; channels `[0, K)` are x-offsets, `[K, 2K)`
    /// are y-offsets, in cell units.
    pub offsets: Array5<F>,
    /// Crop pixels per heatmap cell.
    pub cell_stride: f64,
}

impl<F: Scalar> HeatmapStack<F> {
    pub fn num_keypoints(&self) -> usize {
        self.heatmaps.dim().2
    }

    pub fn grid(&self) -> (usize, usize) {
        let d = self.heatmaps.dim();
        (d.3, d.4)
    }
}

/// Supervision targets for [`HeatmapStack`].
pub struct PoseTargets<F: Scalar> {
    /// `(N, T, K, Hc, Wc)` in {0, 1}.
    pub heat: Array5<F>,
    /// `(N, T, 2K, Hc, Wc)` in cell units, defined inside the disk.
    pub off: Array5<F>,
    /// `(N, T, K, Hc, Wc)`: true within the disk of a visible keypoint.
    pub disk: Array5<bool>,
    /// `(N, T, K)`: false for invisible keypoints, which are excluded
    /// from both losses.
    pub valid: Array3<bool>,
}

impl<F: Scalar> PoseTargets<F> {
    /// Stacks per-sample targets (each with batch dimension 1) into one
    /// batch.
    pub fn concat(samples: &[PoseTargets<F>]) -> PoseTargets<F> {
        assert!(!samples.is_empty());
        let views: Vec<_> = samples.iter().map(|s| s.heat.view()).collect();
        let heat = ndarray::concatenate(Axis(0), &views).unwrap();
        let views: Vec<_> = samples.iter().map(|s| s.off.view()).collect();
        let off = ndarray::concatenate(Axis(0), &views).unwrap();
        let views: Vec<_> = samples.iter().map(|s| s.disk.view()).collect();
        let disk = ndarray::concatenate(Axis(0), &views).unwrap();
        let views: Vec<_> = samples.iter().map(|s| s.valid.view()).collect();
        let valid = ndarray::concatenate(Axis(0), &views).unwrap();
        PoseTargets {
            heat,
            off,
            disk,
            valid,
        }
    }
}

/// One decoded skeleton: keypoints in crop pixels with non-negative
/// confidences.
#[derive(Debug, Clone)]
pub struct DecodedPose {
    pub points: Vec<(f64, f64)>,
    pub confidence: Vec<f64>,
}

pub struct PoseHeadConfig {
    pub channels: usize,
    pub num_deconvs: usize,
    pub num_keypoints: usize,
}

impl Default for PoseHeadConfig {
    fn default() -> Self {
        PoseHeadConfig {
            channels: 256,
            num_deconvs: 2,
            num_keypoints: crate::skeleton::NUM_KEYPOINTS,
        }
    }
}

/// The deconvolution head. The same 2D weights are applied independently
/// to every temporal slice of the backbone feature map.
pub struct PoseHead<F: Scalar> {
    deconvs: Vec<(ConvTranspose2d<F>, BatchNorm<F>, Relu<Ix4>)>,
    out_conv: Conv2d<F>,
    pub num_keypoints: usize,
    cache_nt: Option<(usize, usize)>,
}

impl<F: Scalar> PoseHead<F> {
    pub fn new(cfg: &PoseHeadConfig, rng: &mut ChaCha8Rng, in_channels: usize) -> Self {
        let mut deconvs = Vec::new();
        let mut c_in = in_channels;
        for i in 0..cfg.num_deconvs {
            let name = format!("pose_head.deconv{i}");
            deconvs.push((
                ConvTranspose2d::new(&name, rng, c_in, cfg.channels, 4, 2, 1, false),
                BatchNorm::new(&format!("{name}_bn"), rng, cfg.channels),
                Relu::new(),
            ));
            c_in = cfg.channels;
        }
        let mut out_conv = Conv2d::new(
            "pose_head.out",
            rng,
            c_in,
            3 * cfg.num_keypoints,
            (1, 1),
            (1, 1),
            (0, 0),
            true,
        );
        // Start with near-zero maps so early training is dominated by the
        // classification heads rather than large random pose errors.
        out_conv.scale_weights(0.01);
        PoseHead {
            deconvs,
            out_conv,
            num_keypoints: cfg.num_keypoints,
            cache_nt: None,
        }
    }

    /// Spatial upscale factor of the head (2 per deconvolution).
    pub fn upscale(&self) -> usize {
        1 << self.deconvs.len()
    }

    pub fn forward(&mut self, features: &Array5<F>, cell_stride: f64, train: bool) -> HeatmapStack<F> {
        let (n, t, c, h, w) = features.dim();
        let k = self.num_keypoints;
        let mut y: Array4<F> = features
            .view()
            .into_shape_with_order((n * t, c, h, w))
            .expect("standard layout")
            .to_owned();
        for (deconv, bn, relu) in self.deconvs.iter_mut() {
            y = deconv.forward(&y, train);
            y = bn.forward4(&y, train);
            y = relu.forward(y, train);
        }
        let y = self.out_conv.forward(&y, train);
        let (_, _, ho, wo) = y.dim();
        let y5 = y
            .into_shape_with_order((n, t, 3 * k, ho, wo))
            .expect("restore shape");
        let heatmaps = y5
            .slice_axis(Axis(2), Slice::from(0..k))
            .to_owned();
        let offsets = y5
            .slice_axis(Axis(2), Slice::from(k..3 * k))
            .to_owned();
        if train {
            self.cache_nt = Some((n, t));
        }
        HeatmapStack {
            heatmaps,
            offsets,
            cell_stride,
        }
    }

    /// Backpropagates loss gradients on heatmaps and offsets to the
    /// backbone features.
    pub fn backward(&mut self, d_heat: &Array5<F>, d_off: &Array5<F>) -> Array5<F> {
        let (n, t) = self.cache_nt.take().expect("forward(train) before backward");
        let k = self.num_keypoints;
        let (_, _, _, ho, wo) = d_heat.dim();
        let mut d_out = Array5::<F>::zeros((n, t, 3 * k, ho, wo));
        d_out
            .slice_axis_mut(Axis(2), Slice::from(0..k))
            .assign(d_heat);
        d_out
            .slice_axis_mut(Axis(2), Slice::from(k..3 * k))
            .assign(d_off);
        let d4 = d_out
            .into_shape_with_order((n * t, 3 * k, ho, wo))
            .expect("standard layout");
        let mut g = self.out_conv.backward(&d4);
        for (deconv, bn, relu) in self.deconvs.iter_mut().rev() {
            g = relu.backward(g);
            g = bn.backward4(&g);
            g = deconv.backward(&g);
        }
        let (_, c, h, w) = g.dim();
        g.into_shape_with_order((n, t, c, h, w)).expect("restore shape")
    }
}

impl<F: Scalar> State<F> for PoseHead<F> {
    fn collect_params<'a>(&'a mut self, out: &mut Vec<&'a mut Param<F>>) {
        for (deconv, bn, _) in self.deconvs.iter_mut() {
            deconv.collect_params(out);
            bn.collect_params(out);
        }
        self.out_conv.collect_params(out);
    }

    fn export_state(&self, out: &mut Vec<(String, ArrayD<F>)>) {
        for (deconv, bn, _) in &self.deconvs {
            deconv.export_state(out);
            bn.export_state(out);
        }
        self.out_conv.export_state(out);
    }

    fn import_state(&mut self, map: &std::collections::HashMap<String, ArrayD<F>>) -> Result<()> {
        for (deconv, bn, _) in self.deconvs.iter_mut() {
            deconv.import_state(map)?;
            bn.import_state(map)?;
        }
        self.out_conv.import_state(map)
    }
}

/// Builds supervision targets for one clip. `keypoints[t]` are the `K`
/// keypoints of frame `t` in crop pixels; invisible keypoints produce an
/// all-false disk and are excluded from the losses via the valid mask.
/// The output batch dimension is 1.
pub fn encode_targets<F: Scalar>(
    keypoints: &[Vec<Keypoint>],
    grid: (usize, usize),
    cell_stride: f64,
    disk_radius: f64,
) -> PoseTargets<F> {
    let t = keypoints.len();
    assert!(t > 0, "at least one frame");
    let k = keypoints[0].len();
    let (hc, wc) = grid;
    let mut heat = Array5::<F>::zeros((1, t, k, hc, wc));
    let mut off = Array5::<F>::zeros((1, t, 2 * k, hc, wc));
    let mut disk = Array5::<bool>::from_elem((1, t, k, hc, wc), false);
    let mut valid = Array3::<bool>::from_elem((1, t, k), false);
    let m2 = disk_radius * disk_radius;
    for (ti, frame) in keypoints.iter().enumerate() {
        assert_eq!(frame.len(), k, "constant keypoint count");
        for (ki, kp) in frame.iter().enumerate() {
            if !kp.visible {
                continue;
            }
            valid[[0, ti, ki]] = true;
            let lx = kp.x / cell_stride;
            let ly = kp.y / cell_stride;
            let c_lo = ((lx - disk_radius).ceil().max(0.0)) as usize;
            let c_hi = ((lx + disk_radius).floor().min(wc as f64 - 1.0)) as isize;
            let r_lo = ((ly - disk_radius).ceil().max(0.0)) as usize;
            let r_hi = ((ly + disk_radius).floor().min(hc as f64 - 1.0)) as isize;
            if c_hi < 0 || r_hi < 0 {
                continue;
            }
            for r in r_lo..=(r_hi as usize) {
                for c in c_lo..=(c_hi as usize) {
                    let du = c as f64 - lx;
                    let dv = r as f64 - ly;
                    if du * du + dv * dv <= m2 {
                        heat[[0, ti, ki, r, c]] = F::one();
                        disk[[0, ti, ki, r, c]] = true;
                        off[[0, ti, ki, r, c]] = F::of(lx - c as f64);
                        off[[0, ti, k + ki, r, c]] = F::of(ly - r as f64);
                    }
                }
            }
        }
    }
    PoseTargets {
        heat,
        off,
        disk,
        valid,
    }
}

/// Smooth-L1 heatmap loss over all grid positions of valid keypoints,
/// normalized by `K * T * N`. Returns the loss and its gradient with
/// respect to the predicted heatmaps.
pub fn heatmap_loss<F: Scalar>(
    pred: &HeatmapStack<F>,
    targets: &PoseTargets<F>,
) -> (F, Array5<F>) {
    let (n, t, k, hc, wc) = pred.heatmaps.dim();
    assert_eq!(targets.heat.dim(), (n, t, k, hc, wc), "matching shapes");
    let norm = F::of(1.0 / (k * t * n) as f64);
    let mut loss = F::zero();
    let mut grad = Array5::<F>::zeros((n, t, k, hc, wc));
    for ni in 0..n {
        for ti in 0..t {
            for ki in 0..k {
                if !targets.valid[[ni, ti, ki]] {
                    continue;
                }
                let p = pred.heatmaps.index_axis(Axis(0), ni);
                let p = p.index_axis(Axis(0), ti);
                let p = p.index_axis(Axis(0), ki);
                let tg = targets.heat.index_axis(Axis(0), ni);
                let tg = tg.index_axis(Axis(0), ti);
                let tg = tg.index_axis(Axis(0), ki);
                let mut g = grad.index_axis_mut(Axis(0), ni);
                let mut g = g.index_axis_mut(Axis(0), ti);
                let mut g = g.index_axis_mut(Axis(0), ki);
                ndarray::Zip::from(&mut g).and(&p).and(&tg).for_each(|go, &pv, &tv| {
                    let d = pv - tv;
                    loss = loss + smooth_l1(d);
                    *go = smooth_l1_grad(d) * norm;
                });
            }
        }
    }
    (loss * norm, grad)
}

/// Smooth-L1 offset loss restricted to disk positions of valid keypoints,
/// normalized by `K * T * N`. Returns the loss and its gradient with
/// respect to the predicted offsets.
pub fn offset_loss<F: Scalar>(
    pred: &HeatmapStack<F>,
    targets: &PoseTargets<F>,
) -> (F, Array5<F>) {
    let (n, t, k2, hc, wc) = pred.offsets.dim();
    let k = k2 / 2;
    assert_eq!(targets.off.dim(), (n, t, k2, hc, wc), "matching shapes");
    let norm = F::of(1.0 / (k * t * n) as f64);
    let mut loss = F::zero();
    let mut grad = Array5::<F>::zeros((n, t, k2, hc, wc));
    for ni in 0..n {
        for ti in 0..t {
            for ki in 0..k {
                if !targets.valid[[ni, ti, ki]] {
                    continue;
                }
                for r in 0..hc {
                    for c in 0..wc {
                        if !targets.disk[[ni, ti, ki, r, c]] {
                            continue;
                        }
                        for axis in [0usize, 1] {
                            let ch = axis * k + ki;
                            let d = pred.offsets[[ni, ti, ch, r, c]] - targets.off[[ni, ti, ch, r, c]];
                            loss = loss + smooth_l1(d);
                            grad[[ni, ti, ch, r, c]] = smooth_l1_grad(d) * norm;
                        }
                    }
                }
            }
        }
    }
    (loss * norm, grad)
}

/// `lambda_h * L_h + lambda_o * L_o` with gradients scaled accordingly.
pub fn pose_loss<F: Scalar>(
    pred: &HeatmapStack<F>,
    targets: &PoseTargets<F>,
    lambda_h: f64,
    lambda_o: f64,
) -> (F, Array5<F>, Array5<F>) {
    let (lh, mut gh) = heatmap_loss(pred, targets);
    let (lo, mut go) = offset_loss(pred, targets);
    let wh = F::of(lambda_h);
    let wo = F::of(lambda_o);
    gh.mapv_inplace(|v| v * wh);
    go.mapv_inplace(|v| v * wo);
    (wh * lh + wo * lo, gh, go)
}

/// Argmax+offset decoding. Ties resolve to the lowest row-major cell
/// index; confidence is the ReLU of the heatmap maximum.
pub fn decode_keypoints<F: Scalar>(pred: &HeatmapStack<F>) -> Vec<Vec<DecodedPose>> {
    let (n, t, k, hc, wc) = pred.heatmaps.dim();
    let stride = pred.cell_stride;
    let mut out = Vec::with_capacity(n);
    for ni in 0..n {
        let mut frames = Vec::with_capacity(t);
        for ti in 0..t {
            let mut points = Vec::with_capacity(k);
            let mut confidence = Vec::with_capacity(k);
            for ki in 0..k {
                let mut best = F::neg_infinity();
                let mut best_rc = (0usize, 0usize);
                for r in 0..hc {
                    for c in 0..wc {
                        let v = pred.heatmaps[[ni, ti, ki, r, c]];
                        if v > best {
                            best = v;
                            best_rc = (r, c);
                        }
                    }
                }
                let (r, c) = best_rc;
                let dx = pred.offsets[[ni, ti, ki, r, c]].as_f64();
                let dy = pred.offsets[[ni, ti, k + ki, r, c]].as_f64();
                points.push(((c as f64 + dx) * stride, (r as f64 + dy) * stride));
                confidence.push(best.as_f64().max(0.0));
            }
            frames.push(DecodedPose { points, confidence });
        }
        out.push(frames);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn stack_from(
        heat: Array5<f64>,
        off: Array5<f64>,
        stride: f64,
    ) -> HeatmapStack<f64> {
        HeatmapStack {
            heatmaps: heat,
            offsets: off,
            cell_stride: stride,
        }
    }

    fn single_visible(kp: (f64, f64), grid: (usize, usize), stride: f64, m: f64) -> PoseTargets<f64> {
        encode_targets(
            &[vec![Keypoint::new(kp.0, kp.1, true)]],
            grid,
            stride,
            m,
        )
    }

    #[test]
    fn head_shapes_and_weight_sharing() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let cfg = PoseHeadConfig {
            channels: 8,
            num_deconvs: 2,
            num_keypoints: 17,
        };
        let mut head = PoseHead::<f32>::new(&cfg, &mut rng, 16);
        // Two frames with identical features.
        let frame = Array4::<f32>::from_shape_simple_fn((1, 16, 3, 3), || rand::Rng::gen::<f32>(&mut rng));
        let mut feat = Array5::<f32>::zeros((1, 2, 16, 3, 3));
        feat.index_axis_mut(Axis(1), 0).assign(&frame.index_axis(Axis(0), 0));
        feat.index_axis_mut(Axis(1), 1).assign(&frame.index_axis(Axis(0), 0));
        let stack = head.forward(&feat, 8.0, false);
        assert_eq!(stack.heatmaps.dim(), (1, 2, 17, 12, 12));
        assert_eq!(stack.offsets.dim(), (1, 2, 34, 12, 12));
        let f0 = stack.heatmaps.index_axis(Axis(1), 0);
        let f1 = stack.heatmaps.index_axis(Axis(1), 1);
        assert_eq!(f0, f1);
    }

    #[test]
    fn encode_disk_radius_two_sets_thirteen_cells() {
        let t = single_visible((5.0 * 8.0, 5.0 * 8.0), (12, 12), 8.0, 2.0);
        let set: usize = t.disk.iter().filter(|&&b| b).count();
        assert_eq!(set, 13);
        assert_eq!(t.heat.sum(), 13.0);
        for r in 0..12usize {
            for c in 0..12usize {
                let du = c as f64 - 5.0;
                let dv = r as f64 - 5.0;
                assert_eq!(t.disk[[0, 0, 0, r, c]], du * du + dv * dv <= 4.0);
            }
        }
    }

    #[test]
    fn encode_offset_zero_at_exact_cell() {
        let t = single_visible((5.0 * 8.0, 5.0 * 8.0), (12, 12), 8.0, 2.0);
        assert_eq!(t.off[[0, 0, 0, 5, 5]], 0.0);
        assert_eq!(t.off[[0, 0, 1, 5, 5]], 0.0);
        // Neighbor cell One to the right: dx = lx - c = -1.
        assert_eq!(t.off[[0, 0, 0, 5, 6]], -1.0);
    }

    #[test]
    fn encode_invisible_keypoint_masked_out() {
        let t: PoseTargets<f64> = encode_targets(
            &[vec![Keypoint::new(40.0, 40.0, false)]],
            (12, 12),
            8.0,
            2.0,
        );
        assert!(!t.valid[[0, 0, 0]]);
        assert_eq!(t.heat.sum(), 0.0);
        assert!(t.disk.iter().all(|&b| !b));
    }

    #[test]
    fn heatmap_loss_zero_on_exact_prediction() {
        let t = single_visible((40.0, 40.0), (12, 12), 8.0, 2.0);
        let stack = stack_from(t.heat.clone(), t.off.clone(), 8.0);
        let (l, g) = heatmap_loss(&stack, &t);
        assert_eq!(l, 0.0);
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn heatmap_loss_single_wrong_cell_is_half_over_k() {
        // 17 keypoints, one valid; one cell off by exactly 1.
        let mut frames = vec![Keypoint::new(0.0, 0.0, false); 17];
        frames[3] = Keypoint::new(40.0, 40.0, true);
        let t: PoseTargets<f64> = encode_targets(&[frames], (12, 12), 8.0, 2.0);
        let mut heat = t.heat.clone();
        heat[[0, 0, 3, 5, 5]] = 0.0; // target is 1 there
        let stack = stack_from(heat, t.off.clone(), 8.0);
        let (l, _) = heatmap_loss(&stack, &t);
        assert!((l - 0.5 / 17.0).abs() < 1e-12, "loss {l}");
    }

    #[test]
    fn offset_loss_ignores_errors_outside_disk() {
        let mut frames = vec![Keypoint::new(0.0, 0.0, false); 17];
        frames[0] = Keypoint::new(40.0, 40.0, true);
        let t: PoseTargets<f64> = encode_targets(&[frames], (12, 12), 8.0, 2.0);
        let mut off = t.off.clone();
        off[[0, 0, 0, 0, 0]] = 99.0; // far outside the disk
        let stack = stack_from(t.heat.clone(), off, 8.0);
        let (l, g) = offset_loss(&stack, &t);
        assert_eq!(l, 0.0);
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn offset_loss_single_cell_scalar_oracle() {
        let mut frames = vec![Keypoint::new(0.0, 0.0, false); 17];
        frames[0] = Keypoint::new(40.0, 40.0, true);
        let t: PoseTargets<f64> = encode_targets(&[frames], (12, 12), 8.0, 2.0);
        let mut off = t.off.clone();
        // Perturb dx by 0.4 at one disk cell; dy stays exact.
        off[[0, 0, 0, 5, 5]] += 0.4;
        // Restrict the disk to only that cell so only it contributes.
        let mut disk = Array5::<bool>::from_elem(t.disk.dim(), false);
        disk[[0, 0, 0, 5, 5]] = true;
        let t2 = PoseTargets {
            heat: t.heat.clone(),
            off: t.off.clone(),
            disk,
            valid: t.valid.clone(),
        };
        let stack = stack_from(t.heat.clone(), off, 8.0);
        let (l, _) = offset_loss(&stack, &t2);
        assert!((l - 0.5 * 0.4 * 0.4 / 17.0).abs() < 1e-12, "loss {l}");
    }

    #[test]
    fn pose_loss_is_weighted_sum_and_linear_in_lambda() {
        let mut frames = vec![Keypoint::new(0.0, 0.0, false); 17];
        frames[2] = Keypoint::new(40.0, 40.0, true);
        let t: PoseTargets<f64> = encode_targets(&[frames], (12, 12), 8.0, 2.0);
        let mut heat = t.heat.clone();
        heat[[0, 0, 2, 5, 5]] = 0.4;
        let mut off = t.off.clone();
        off[[0, 0, 2, 5, 5]] += 0.2;
        let stack = stack_from(heat, off, 8.0);
        let (lh, _) = heatmap_loss(&stack, &t);
        let (lo, _) = offset_loss(&stack, &t);
        let (lp, _, _) = pose_loss(&stack, &t, 0.5, 0.5);
        assert!((lp - (0.5 * lh + 0.5 * lo)).abs() < 1e-12);
        let (lp2, _, _) = pose_loss(&stack, &t, 1.0, 1.0);
        assert!((lp2 - 2.0 * lp).abs() < 1e-12);
    }

    #[test]
    fn decode_single_peak_with_offset() {
        let mut heat = Array5::<f64>::zeros((1, 1, 1, 16, 16));
        heat[[0, 0, 0, 12, 10]] = 0.9;
        let mut off = Array5::<f64>::zeros((1, 1, 2, 16, 16));
        off[[0, 0, 0, 12, 10]] = 0.4; // dx
        off[[0, 0, 1, 12, 10]] = -0.3; // dy
        let stack = stack_from(heat, off, 8.0);
        let poses = decode_keypoints(&stack);
        let p = &poses[0][0];
        assert!((p.points[0].0 - 83.2).abs() < 1e-9);
        assert!((p.points[0].1 - 93.6).abs() < 1e-9);
        assert!((p.confidence[0] - 0.9).abs() < 1e-12);
    }

    #[test]
    fn decode_all_zero_heatmap_takes_origin_cell() {
        let heat = Array5::<f64>::zeros((1, 1, 1, 8, 8));
        let off = Array5::<f64>::zeros((1, 1, 2, 8, 8));
        let stack = stack_from(heat, off, 8.0);
        let poses = decode_keypoints(&stack);
        assert_eq!(poses[0][0].points[0], (0.0, 0.0));
        assert_eq!(poses[0][0].confidence[0], 0.0);
    }

    #[test]
    fn decode_confidence_invariant_to_offset_shift() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let heat = Array5::<f64>::from_shape_simple_fn((1, 1, 3, 8, 8), || rand::Rng::gen::<f64>(&mut rng));
        let off = Array5::<f64>::from_shape_simple_fn((1, 1, 6, 8, 8), || rand::Rng::gen::<f64>(&mut rng));
        let s1 = stack_from(heat.clone(), off.clone(), 8.0);
        let shifted = off.mapv(|v| v + 5.0);
        let s2 = stack_from(heat, shifted, 8.0);
        let c1: Vec<f64> = decode_keypoints(&s1)[0][0].confidence.clone();
        let c2: Vec<f64> = decode_keypoints(&s2)[0][0].confidence.clone();
        assert_eq!(c1, c2);
    }

    #[test]
    fn encode_decode_round_trip_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let stride = 8.0;
        let grid = (12, 12);
        for _ in 0..200 {
            let x = rand::Rng::gen_range(&mut rng, 1.0..95.0);
            let y = rand::Rng::gen_range(&mut rng, 1.0..95.0);
            let t = single_visible((x, y), grid, stride, 2.0);
            let stack = stack_from(t.heat.clone(), t.off.clone(), stride);
            let poses = decode_keypoints(&stack);
            let (px, py) = poses[0][0].points[0];
            assert!(
                (px - x).abs() < 1e-4 && (py - y).abs() < 1e-4,
                "({px}, {py}) vs ({x}, {y})"
            );
        }
    }

    #[test]
    fn decode_without_offsets_bounded_by_cell_quantization() {
        // A flat disk of radius M leaves the argmax anywhere in the disk,
        // so the quantization bound is exercised at disk radius sqrt(2)/2,
        // where every disk cell sits within half a cell diagonal of the
        // keypoint regardless of tie-breaking.
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let stride = 8.0;
        let radius = std::f64::consts::SQRT_2 / 2.0;
        let bound = stride * radius + 1e-9;
        for _ in 0..200 {
            let x = rand::Rng::gen_range(&mut rng, 4.0..92.0);
            let y = rand::Rng::gen_range(&mut rng, 4.0..92.0);
            let t = single_visible((x, y), (12, 12), stride, radius);
            assert!(t.disk.iter().any(|&b| b), "disk never empty in-grid");
            let zero_off = Array5::<f64>::zeros(t.off.dim());
            let stack = stack_from(t.heat.clone(), zero_off, stride);
            let poses = decode_keypoints(&stack);
            let (px, py) = poses[0][0].points[0];
            let err = ((px - x).powi(2) + (py - y).powi(2)).sqrt();
            assert!(err <= bound, "err {err} > bound {bound}");
        }
    }

    #[test]
    fn losses_are_nonnegative_and_zero_iff_exact_on_support() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let x = rand::Rng::gen_range(&mut rng, 8.0..88.0);
            let y = rand::Rng::gen_range(&mut rng, 8.0..88.0);
            let t = single_visible((x, y), (12, 12), 8.0, 2.0);
            let mut heat = t.heat.clone();
            let mut off = t.off.clone();
            heat[[0, 0, 0, 3, 3]] += 0.3;
            off[[0, 0, 0, 3, 3]] += 0.1;
            let stack = stack_from(heat, off, 8.0);
            let (lh, _) = heatmap_loss(&stack, &t);
            let (lo, _) = offset_loss(&stack, &t);
            assert!(lh > 0.0);
            assert!(lo >= 0.0);
        }
    }

    #[test]
    fn loss_gradients_match_finite_differences() {
        let mut frames = vec![Keypoint::new(0.0, 0.0, false); 5];
        frames[1] = Keypoint::new(33.0, 47.0, true);
        frames[4] = Keypoint::new(61.0, 20.0, true);
        let t: PoseTargets<f64> = encode_targets(&[frames], (10, 10), 8.0, 2.0);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let heat = Array5::<f64>::from_shape_simple_fn((1, 1, 5, 10, 10), || {
            rand::Rng::gen::<f64>(&mut rng) * 0.5
        });
        let off = Array5::<f64>::from_shape_simple_fn((1, 1, 10, 10, 10), || {
            rand::Rng::gen::<f64>(&mut rng) * 0.5
        });
        let stack = stack_from(heat.clone(), off.clone(), 8.0);
        let (_, gh) = heatmap_loss(&stack, &t);
        let (_, go) = offset_loss(&stack, &t);
        let eps = 1e-6;
        for idx in (0..heat.len()).step_by(97) {
            let mut hp = heat.clone();
            hp.as_slice_mut().unwrap()[idx] += eps;
            let (lp, _) = heatmap_loss(&stack_from(hp, off.clone(), 8.0), &t);
            let mut hm = heat.clone();
            hm.as_slice_mut().unwrap()[idx] -= eps;
            let (lm, _) = heatmap_loss(&stack_from(hm, off.clone(), 8.0), &t);
            let fd = (lp - lm) / (2.0 * eps);
            let an = gh.as_slice().unwrap()[idx];
            assert!((fd - an).abs() < 1e-6, "heat idx {idx}: fd {fd} an {an}");
        }
        for idx in (0..off.len()).step_by(131) {
            let mut op = off.clone();
            op.as_slice_mut().unwrap()[idx] += eps;
            let (lp, _) = offset_loss(&stack_from(heat.clone(), op, 8.0), &t);
            let mut om = off.clone();
            om.as_slice_mut().unwrap()[idx] -= eps;
            let (lm, _) = offset_loss(&stack_from(heat.clone(), om, 8.0), &t);
            let fd = (lp - lm) / (2.0 * eps);
            let an = go.as_slice().unwrap()[idx];
            assert!((fd - an).abs() < 1e-6, "off idx {idx}: fd {fd} an {an}");
        }
    }
}
