//! Pose-based action recognition: decoded pose sequences become a
//! `3 x T x K` tensor (normalized x, normalized y, confidence) classified
//! by a residual 2D CNN with every stride forced to 1 and no pooling, so
//! the tiny `T x K` grid survives to the global average pool.
//!
//! The pose tensor is a constant input: no gradient flows back through
//! keypoint decoding.

use ndarray::{Array2, Array4, ArrayD, Ix4};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::ops::Relu;
use crate::nn::{BatchNorm, Conv2d, Dropout, GlobalAvgPool2d, Linear, Param, Scalar, State};
use crate::posehead::DecodedPose;

/// Converts decoded poses (crop pixels) into the classifier input.
/// Coordinates are normalized to `[-1, 1]` over the crop extent.
pub fn build_pose_tensor<F: Scalar>(
    poses: &[Vec<DecodedPose>],
    crop_w: f64,
    crop_h: f64,
) -> Array4<F> {
    let n = poses.len();
    assert!(n > 0, "at least one clip");
    let t = poses[0].len();
    let k = poses[0][0].points.len();
    let mut out = Array4::<F>::zeros((n, 3, t, k));
    for (ni, clip) in poses.iter().enumerate() {
        assert_eq!(clip.len(), t, "constant clip length");
        for (ti, frame) in clip.iter().enumerate() {
            for (ki, &(x, y)) in frame.points.iter().enumerate() {
                out[[ni, 0, ti, ki]] = F::of(2.0 * x / crop_w - 1.0);
                out[[ni, 1, ti, ki]] = F::of(2.0 * y / crop_h - 1.0);
                out[[ni, 2, ti, ki]] = F::of(frame.confidence[ki]);
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoseCnnConfig {
    /// Basic blocks per stage; `[2, 2, 2, 2]` is the 18-layer variant,
    /// `[3, 4, 6, 3]` the 50-layer-depth one.
    pub stage_blocks: Vec<usize>,
    pub base_channels: usize,
    pub width_divisor: usize,
    pub num_classes: usize,
    pub dropout: f64,
}

impl Default for PoseCnnConfig {
    fn default() -> Self {
        PoseCnnConfig {
            stage_blocks: vec![2, 2, 2, 2],
            base_channels: 64,
            width_divisor: 1,
            num_classes: 4,
            dropout: 0.5,
        }
    }
}

impl PoseCnnConfig {
    fn div(&self, c: usize) -> usize {
        (c / self.width_divisor).max(1)
    }

    pub fn feature_channels(&self) -> usize {
        self.div(self.base_channels * 8)
    }
}

struct BasicBlock<F: Scalar> {
    conv1: Conv2d<F>,
    bn1: BatchNorm<F>,
    relu1: Relu<Ix4>,
    conv2: Conv2d<F>,
    bn2: BatchNorm<F>,
    proj: Option<(Conv2d<F>, BatchNorm<F>)>,
    relu_out: Relu<Ix4>,
}

impl<F: Scalar> BasicBlock<F> {
    fn new<R: Rng>(name: &str, rng: &mut R, in_channels: usize, out_channels: usize) -> Self {
        let conv1 = Conv2d::new(&format!("{name}.conv1"), rng, in_channels, out_channels, (3, 3), (1, 1), (1, 1), false);
        let conv2 = Conv2d::new(&format!("{name}.conv2"), rng, out_channels, out_channels, (3, 3), (1, 1), (1, 1), false);
        let proj = (in_channels != out_channels).then(|| {
            (
                Conv2d::new(&format!("{name}.proj"), rng, in_channels, out_channels, (1, 1), (1, 1), (0, 0), false),
                BatchNorm::new(&format!("{name}.proj_bn"), rng, out_channels),
            )
        });
        BasicBlock {
            conv1,
            bn1: BatchNorm::new(&format!("{name}.bn1"), rng, out_channels),
            relu1: Relu::new(),
            conv2,
            bn2: BatchNorm::new(&format!("{name}.bn2"), rng, out_channels),
            proj,
            relu_out: Relu::new(),
        }
    }

    fn forward(&mut self, x: &Array4<F>, train: bool) -> Array4<F> {
        let mut y = self.conv1.forward(x, train);
        y = self.bn1.forward4(&y, train);
        y = self.relu1.forward(y, train);
        y = self.conv2.forward(&y, train);
        y = self.bn2.forward4(&y, train);
        let skip = match &mut self.proj {
            Some((conv, bn)) => {
                let s = conv.forward(x, train);
                bn.forward4(&s, train)
            }
            None => x.clone(),
        };
        y += &skip;
        self.relu_out.forward(y, train)
    }

    fn backward(&mut self, dy: &Array4<F>) -> Array4<F> {
        let d = self.relu_out.backward(dy.clone());
        let mut g = self.bn2.backward4(&d);
        g = self.conv2.backward(&g);
        g = self.relu1.backward(g);
        g = self.bn1.backward4(&g);
        let dx_main = self.conv1.backward(&g);
        let dx_skip = match &mut self.proj {
            Some((conv, bn)) => {
                let s = bn.backward4(&d);
                conv.backward(&s)
            }
            None => d,
        };
        dx_main + &dx_skip
    }
}

impl<F: Scalar> State<F> for BasicBlock<F> {
    fn collect_params<'a>(&'a mut self, out: &mut Vec<&'a mut Param<F>>) {
        self.conv1.collect_params(out);
        self.bn1.collect_params(out);
        self.conv2.collect_params(out);
        self.bn2.collect_params(out);
        if let Some((conv, bn)) = &mut self.proj {
            conv.collect_params(out);
            bn.collect_params(out);
        }
    }

    fn export_state(&self, out: &mut Vec<(String, ArrayD<F>)>) {
        self.conv1.export_state(out);
        self.bn1.export_state(out);
        self.conv2.export_state(out);
        self.bn2.export_state(out);
        if let Some((conv, bn)) = &self.proj {
            conv.export_state(out);
            bn.export_state(out);
        }
    }

    fn import_state(&mut self, map: &std::collections::HashMap<String, ArrayD<F>>) -> Result<()> {
        self.conv1.import_state(map)?;
        self.bn1.import_state(map)?;
        self.conv2.import_state(map)?;
        self.bn2.import_state(map)?;
        if let Some((conv, bn)) = &mut self.proj {
            conv.import_state(map)?;
            bn.import_state(map)?;
        }
        Ok(())
    }
}

pub struct PoseCnn<F: Scalar> {
    pub cfg: PoseCnnConfig,
    conv1: Conv2d<F>,
    bn1: BatchNorm<F>,
    relu1: Relu<Ix4>,
    stages: Vec<Vec<BasicBlock<F>>>,
    gap: GlobalAvgPool2d,
    dropout: Dropout<ndarray::Ix2>,
    fc: Linear<F>,
    /// `(C, H, W)` after each stage of the most recent forward pass.
    pub stage_shapes: Vec<(usize, usize, usize)>,
}

impl<F: Scalar> PoseCnn<F> {
    pub fn new(cfg: &PoseCnnConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        if cfg.stage_blocks.len() != 4 || cfg.stage_blocks.iter().any(|&b| b < 1) {
            return Err(Error::InvalidConfig("pose CNN needs 4 stages of >= 1 block".into()));
        }
        let stem = cfg.div(cfg.base_channels);
        // 3x3 stride-1 stem instead of 7x7 stride-2: the input grid is tiny.
        let conv1 = Conv2d::new("pose_cnn.conv1", rng, 3, stem, (3, 3), (1, 1), (1, 1), false);
        let bn1 = BatchNorm::new("pose_cnn.bn1", rng, stem);
        let mut stages = Vec::new();
        let mut in_channels = stem;
        for stage in 0..4 {
            let width = cfg.div(cfg.base_channels << stage);
            let mut blocks = Vec::new();
            for block in 0..cfg.stage_blocks[stage] {
                let name = format!("pose_cnn.layer{}.{}", stage + 1, block);
                blocks.push(BasicBlock::new(&name, rng, in_channels, width));
                in_channels = width;
            }
            stages.push(blocks);
        }
        let fc = Linear::new("pose_cnn.fc", rng, in_channels, cfg.num_classes, 0.01);
        Ok(PoseCnn {
            cfg: cfg.clone(),
            conv1,
            bn1,
            relu1: Relu::new(),
            stages,
            gap: GlobalAvgPool2d::new(),
            dropout: Dropout::new(cfg.dropout),
            fc,
            stage_shapes: Vec::new(),
        })
    }

    /// Input `(N, 3, T, K)`; `rng = Some` enables dropout (training).
    pub fn forward(
        &mut self,
        x: &Array4<F>,
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Array2<F>> {
        let (_, _, t, k) = x.dim();
        if t < 3 || k < 3 {
            return Err(Error::InvalidInput(format!(
                "pose tensor {t}x{k} smaller than the 3x3 kernel extent"
            )));
        }
        let train = rng.is_some();
        self.stage_shapes.clear();
        let mut y = self.conv1.forward(x, train);
        y = self.bn1.forward4(&y, train);
        y = self.relu1.forward(y, train);
        for stage in 0..4 {
            for block in self.stages[stage].iter_mut() {
                y = block.forward(&y, train);
            }
            let (_, c, h, w) = y.dim();
            self.stage_shapes.push((c, h, w));
        }
        let pooled = self.gap.forward(&y);
        let dropped = self.dropout.forward(pooled, rng);
        Ok(self.fc.forward(&dropped, train))
    }

    pub fn backward(&mut self, dlogits: &Array2<F>) {
        let g = self.fc.backward(dlogits);
        let g = self.dropout.backward(g);
        let mut g = self.gap.backward(&g);
        for stage in (0..4).rev() {
            for block in self.stages[stage].iter_mut().rev() {
                g = block.backward(&g);
            }
        }
        let g = self.relu1.backward(g);
        let g = self.bn1.backward4(&g);
        // The pose tensor is a constant input; its gradient is dropped.
        let _ = self.conv1.backward(&g);
    }
}

impl<F: Scalar> State<F> for PoseCnn<F> {
    fn collect_params<'a>(&'a mut self, out: &mut Vec<&'a mut Param<F>>) {
        self.conv1.collect_params(out);
        self.bn1.collect_params(out);
        for stage in self.stages.iter_mut() {
            for block in stage.iter_mut() {
                block.collect_params(out);
            }
        }
        self.fc.collect_params(out);
    }

    fn export_state(&self, out: &mut Vec<(String, ArrayD<F>)>) {
        self.conv1.export_state(out);
        self.bn1.export_state(out);
        for stage in &self.stages {
            for block in stage {
                block.export_state(out);
            }
        }
        self.fc.export_state(out);
    }

    fn import_state(&mut self, map: &std::collections::HashMap<String, ArrayD<F>>) -> Result<()> {
        self.conv1.import_state(map)?;
        self.bn1.import_state(map)?;
        for stage in self.stages.iter_mut() {
            for block in stage.iter_mut() {
                block.import_state(map)?;
            }
        }
        self.fc.import_state(map)
    }
}

/// Mean cross-entropy of the pose-stream logits.
pub fn pose_action_loss<F: Scalar>(
    logits: &Array2<F>,
    labels: &[usize],
) -> (F, Array2<F>, Array2<F>) {
    crate::nn::ops::cross_entropy(logits, labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::skeleton::FLIP_PAIRS;
    use rand::SeedableRng;

    fn random_poses(rng: &mut ChaCha8Rng, t: usize, k: usize, w: f64, h: f64) -> Vec<Vec<DecodedPose>> {
        vec![(0..t)
            .map(|_| DecodedPose {
                points: (0..k)
                    .map(|_| (rand::Rng::gen::<f64>(rng) * w, rand::Rng::gen::<f64>(rng) * h))
                    .collect(),
                confidence: (0..k).map(|_| rand::Rng::gen::<f64>(rng)).collect(),
            })
            .collect()]
    }

    #[test]
    fn pose_tensor_normalization_corners() {
        let pose = DecodedPose {
            points: vec![(32.0, 32.0), (64.0, 64.0), (0.0, 0.0)],
            confidence: vec![0.5, 1.0, 0.0],
        };
        let t = build_pose_tensor::<f64>(&[vec![pose]], 64.0, 64.0);
        assert_eq!(t[[0, 0, 0, 0]], 0.0);
        assert_eq!(t[[0, 1, 0, 0]], 0.0);
        assert_eq!(t[[0, 0, 0, 1]], 1.0);
        assert_eq!(t[[0, 1, 0, 1]], 1.0);
        assert_eq!(t[[0, 0, 0, 2]], -1.0);
        assert_eq!(t[[0, 2, 0, 1]], 1.0);
    }

    #[test]
    fn pose_tensor_zero_confidence_keeps_coordinates() {
        let pose = DecodedPose {
            points: vec![(10.0, 20.0)],
            confidence: vec![0.0],
        };
        let t = build_pose_tensor::<f64>(&[vec![pose]], 64.0, 64.0);
        assert_eq!(t[[0, 2, 0, 0]], 0.0);
        assert!(t[[0, 0, 0, 0]] != 0.0);
    }

    #[test]
    fn pose_cnn_preserves_grid_and_pools_to_feature() {
        let cfg = PoseCnnConfig {
            width_divisor: 8,
            num_classes: 4,
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut net = PoseCnn::<f32>::new(&cfg, &mut rng).unwrap();
        let x = Array4::<f32>::zeros((2, 3, 8, 17));
        let logits = net.forward(&x, None).unwrap();
        assert_eq!(logits.dim(), (2, 4));
        for &(_, h, w) in &net.stage_shapes {
            assert_eq!((h, w), (8, 17));
        }
        assert_eq!(net.stage_shapes.last().unwrap().0, cfg.feature_channels());
    }

    #[test]
    fn pose_cnn_zero_final_layer_gives_uniform_softmax() {
        let cfg = PoseCnnConfig {
            width_divisor: 16,
            num_classes: 4,
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut net = PoseCnn::<f64>::new(&cfg, &mut rng).unwrap();
        net.fc.weight.value.fill(0.0);
        net.fc.bias.value.fill(0.0);
        let x = Array4::<f64>::zeros((1, 3, 8, 17));
        let logits = net.forward(&x, None).unwrap();
        let p = crate::nn::ops::softmax(&logits);
        for v in p.iter() {
            assert!((v - 0.25).abs() < 1e-9);
        }
    }

    #[test]
    fn pose_cnn_eval_is_deterministic_for_identical_inputs() {
        let cfg = PoseCnnConfig {
            width_divisor: 16,
            num_classes: 3,
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut net = PoseCnn::<f64>::new(&cfg, &mut rng).unwrap();
        let mut x = Array4::<f64>::zeros((2, 3, 8, 17));
        let sample = Array4::<f64>::from_shape_simple_fn((1, 3, 8, 17), || rand::Rng::gen::<f64>(&mut rng));
        x.index_axis_mut(ndarray::Axis(0), 0).assign(&sample.index_axis(ndarray::Axis(0), 0));
        x.index_axis_mut(ndarray::Axis(0), 1).assign(&sample.index_axis(ndarray::Axis(0), 0));
        let logits = net.forward(&x, None).unwrap();
        let r0: Vec<f64> = logits.row(0).to_vec();
        let r1: Vec<f64> = logits.row(1).to_vec();
        assert_eq!(r0, r1);
    }

    #[test]
    fn pose_cnn_rejects_grid_below_kernel_extent() {
        let cfg = PoseCnnConfig {
            width_divisor: 16,
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut net = PoseCnn::<f64>::new(&cfg, &mut rng).unwrap();
        let x = Array4::<f64>::zeros((1, 3, 2, 17));
        assert!(net.forward(&x, None).is_err());
    }

    #[test]
    fn mirrored_keypoints_give_mirrored_pose_tensor() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (w, h) = (64.0, 64.0);
        let poses = random_poses(&mut rng, 4, 17, w, h);
        let tensor = build_pose_tensor::<f64>(&poses, w, h);

        // Mirror: x -> w - x with left/right joint swap.
        let mirrored: Vec<Vec<DecodedPose>> = poses
            .iter()
            .map(|clip| {
                clip.iter()
                    .map(|f| {
                        let mut points: Vec<(f64, f64)> =
                            f.points.iter().map(|&(x, y)| (w - x, y)).collect();
                        let mut conf = f.confidence.clone();
                        for &(a, b) in FLIP_PAIRS.iter() {
                            points.swap(a, b);
                            conf.swap(a, b);
                        }
                        DecodedPose {
                            points,
                            confidence: conf,
                        }
                    })
                    .collect()
            })
            .collect();
        let mirrored_tensor = build_pose_tensor::<f64>(&mirrored, w, h);

        // Expected: x channel negated, k-axis permuted by the pairs.
        let mut perm: Vec<usize> = (0..17).collect();
        for &(a, b) in FLIP_PAIRS.iter() {
            perm.swap(a, b);
        }
        for ti in 0..4 {
            for ki in 0..17 {
                let src = perm[ki];
                assert!(
                    (mirrored_tensor[[0, 0, ti, ki]] + tensor[[0, 0, ti, src]]).abs() < 1e-12
                );
                assert_eq!(mirrored_tensor[[0, 1, ti, ki]], tensor[[0, 1, ti, src]]);
                assert_eq!(mirrored_tensor[[0, 2, ti, ki]], tensor[[0, 2, ti, src]]);
            }
        }
    }

    #[test]
    fn pose_action_loss_matches_softmax_oracle() {
        let logits = ndarray::array![[0.0f64, 0.0, 0.0, 0.0]];
        let (l, _, _) = pose_action_loss(&logits, &[1]);
        assert!((l - 4.0f64.ln()).abs() < 1e-12);
        let mut confident = Array2::<f64>::zeros((1, 4));
        confident[[0, 2]] = 10.0;
        let (l, _, _) = pose_action_loss(&confident, &[2]);
        assert!(l < 1e-3);
    }
}
