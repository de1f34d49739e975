//! The full multi-task model: backbone features feed an RGB classifier
//! and (mode permitting) the per-frame pose head; decoded pose sequences
//! feed the pose CNN as a constant input. Backward passes honor the loss
//! weights exactly: a zero lambda skips that branch entirely, leaving its
//! gradients bitwise zero, and no gradient ever flows from the pose
//! classifier into the pose head or backbone.

use std::collections::HashMap;

use ndarray::{Array2, Array4, Array5, ArrayD};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backbone::{Backbone, BackboneConfig, RgbClassifier};
use crate::error::{Error, Result};
use crate::nn::ops::{cross_entropy, softmax};
use crate::nn::{Param, Scalar, State};
use crate::poseaction::{build_pose_tensor, PoseCnn, PoseCnnConfig};
use crate::posehead::{
    decode_keypoints, DecodedPose, HeatmapStack, PoseHead, PoseHeadConfig, PoseTargets,
    LAMBDA_HEATMAP, LAMBDA_OFFSET,
};
use crate::rng::{derive_rng, tag};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CropMode {
    RandomCrop,
    PersonCrop,
}

impl std::str::FromStr for CropMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random_crop" => Ok(CropMode::RandomCrop),
            "person_crop" => Ok(CropMode::PersonCrop),
            other => Err(Error::InvalidConfig(format!(
                "unknown crop mode `{other}` (expected random_crop|person_crop)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadMode {
    RgbOnly,
    RgbPoseHead,
    Full,
}

impl HeadMode {
    pub fn has_pose_head(self) -> bool {
        !matches!(self, HeadMode::RgbOnly)
    }

    pub fn has_pose_cnn(self) -> bool {
        matches!(self, HeadMode::Full)
    }
}

impl std::str::FromStr for HeadMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rgb_only" => Ok(HeadMode::RgbOnly),
            "rgb+pose_head" => Ok(HeadMode::RgbPoseHead),
            "rgb+pose_head+pose_cnn" => Ok(HeadMode::Full),
            other => Err(Error::InvalidConfig(format!(
                "unknown head mode `{other}` (expected rgb_only|rgb+pose_head|rgb+pose_head+pose_cnn)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub backbone: BackboneConfig,
    pub head_mode: HeadMode,
    pub head_channels: usize,
    pub num_deconvs: usize,
    pub num_keypoints: usize,
    /// Supervision disk radius in heatmap cells.
    pub disk_radius: f64,
    pub pose_cnn_blocks: Vec<usize>,
    pub pose_cnn_channels: usize,
    pub num_classes: usize,
    pub dropout: f64,
}

impl ModelConfig {
    /// Crop pixels per heatmap cell: 32 / 2^deconvs.
    pub fn cell_stride(&self) -> f64 {
        32.0 / (1 << self.num_deconvs) as f64
    }

    pub fn heatmap_grid(&self) -> (usize, usize) {
        let g = self.backbone.feature_size() * (1 << self.num_deconvs);
        (g, g)
    }

    pub fn input_size(&self) -> usize {
        self.backbone.input_size
    }
}

/// Loss weights of the joint objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Lambdas {
    pub rgb: f64,
    pub pose: f64,
    pub pose_action: f64,
}

impl Default for Lambdas {
    fn default() -> Self {
        Lambdas {
            rgb: 1.0,
            pose: 1.0,
            pose_action: 1.0,
        }
    }
}

/// Per-batch losses and stream probabilities from one forward pass.
pub struct StepOutput<F: Scalar> {
    pub loss_rgb: F,
    pub loss_heatmap: Option<F>,
    pub loss_offset: Option<F>,
    pub loss_pose: Option<F>,
    pub loss_pose_action: Option<F>,
    pub total: F,
    pub rgb_probs: Array2<F>,
    pub pose_probs: Option<Array2<F>>,
}

pub struct EvalOutput<F: Scalar> {
    pub rgb_probs: Array2<F>,
    pub pose_probs: Option<Array2<F>>,
    pub features: Array5<F>,
    pub stack: Option<HeatmapStack<F>>,
    pub poses: Option<Vec<Vec<DecodedPose>>>,
}

pub struct ActionModel<F: Scalar> {
    pub cfg: ModelConfig,
    pub backbone: Backbone<F>,
    pub rgb_head: RgbClassifier<F>,
    pub pose_head: Option<PoseHead<F>>,
    pub pose_cnn: Option<PoseCnn<F>>,
}

impl<F: Scalar> ActionModel<F> {
    pub fn new(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        let mut rng = derive_rng(seed, &[tag::MODEL_INIT]);
        let backbone = Backbone::new(&cfg.backbone, &mut rng)?;
        let feat_c = cfg.backbone.feature_channels();
        let rgb_head = RgbClassifier::new(&mut rng, feat_c, cfg.num_classes, cfg.dropout);
        let pose_head = cfg.head_mode.has_pose_head().then(|| {
            PoseHead::new(
                &PoseHeadConfig {
                    channels: cfg.head_channels,
                    num_deconvs: cfg.num_deconvs,
                    num_keypoints: cfg.num_keypoints,
                },
                &mut rng,
                feat_c,
            )
        });
        let pose_cnn = if cfg.head_mode.has_pose_cnn() {
            Some(PoseCnn::new(
                &PoseCnnConfig {
                    stage_blocks: cfg.pose_cnn_blocks.clone(),
                    base_channels: cfg.pose_cnn_channels,
                    width_divisor: 1,
                    num_classes: cfg.num_classes,
                    dropout: cfg.dropout,
                },
                &mut rng,
            )?)
        } else {
            None
        };
        Ok(ActionModel {
            cfg: cfg.clone(),
            backbone,
            rgb_head,
            pose_head,
            pose_cnn,
        })
    }

    /// Training forward pass computing every enabled loss, with optional
    /// backward accumulation into parameter gradients.
    ///
    /// * `dropout_rng = None` disables dropout (used by gradient checks).
    /// * `pose_override` pins the pose-classifier input, mirroring the
    ///   stop-gradient: finite-difference checks of the joint loss must
    ///   hold the decoded poses constant.
    /// * `freeze_rgb_path = true` runs backbone, RGB head and pose head
    ///   in evaluation mode and trains only the pose classifier.
    #[allow(clippy::too_many_arguments)]
    pub fn train_forward(
        &mut self,
        clips: &Array5<F>,
        labels: &[usize],
        targets: Option<&PoseTargets<F>>,
        lambdas: &Lambdas,
        mut dropout_rng: Option<&mut ChaCha8Rng>,
        pose_override: Option<&Array4<F>>,
        do_backward: bool,
        freeze_rgb_path: bool,
    ) -> Result<StepOutput<F>> {
        let train_rgb = !freeze_rgb_path;
        let features = self.backbone.forward(clips, train_rgb);
        let (rgb_logits, _) = self
            .rgb_head
            .forward(&features, if train_rgb { dropout_rng.as_deref_mut() } else { None });
        let (loss_rgb, rgb_probs, rgb_dlogits) = cross_entropy(&rgb_logits, labels);

        let mut d_features: Option<Array5<F>> = None;
        if do_backward && train_rgb && lambdas.rgb > 0.0 {
            let scaled = rgb_dlogits.mapv(|v| v * F::of(lambdas.rgb));
            d_features = Some(self.rgb_head.backward(&scaled));
        }

        let mut loss_heatmap = None;
        let mut loss_offset = None;
        let mut loss_pose = None;
        let mut stack = None;
        if let Some(head) = &mut self.pose_head {
            let s = head.forward(&features, self.cfg.cell_stride(), train_rgb);
            if let Some(t) = targets {
                let (lh, gh) = crate::posehead::heatmap_loss(&s, t);
                let (lo, go) = crate::posehead::offset_loss(&s, t);
                let lp = F::of(LAMBDA_HEATMAP) * lh + F::of(LAMBDA_OFFSET) * lo;
                loss_heatmap = Some(lh);
                loss_offset = Some(lo);
                loss_pose = Some(lp);
                if do_backward && train_rgb && lambdas.pose > 0.0 {
                    let wh = F::of(lambdas.pose * LAMBDA_HEATMAP);
                    let wo = F::of(lambdas.pose * LAMBDA_OFFSET);
                    let gh = gh.mapv(|v| v * wh);
                    let go = go.mapv(|v| v * wo);
                    let d = head.backward(&gh, &go);
                    d_features = Some(match d_features.take() {
                        Some(mut acc) => {
                            acc += &d;
                            acc
                        }
                        None => d,
                    });
                }
            }
            stack = Some(s);
        }

        if do_backward && train_rgb {
            if let Some(d) = d_features {
                self.backbone.backward(&d);
            }
        }

        let mut loss_pose_action = None;
        let mut pose_probs = None;
        if let Some(cnn) = &mut self.pose_cnn {
            let tensor = match pose_override {
                Some(t) => t.clone(),
                None => {
                    let s = stack.as_ref().expect("pose CNN requires the pose head");
                    let poses = decode_keypoints(s);
                    let size = self.cfg.input_size() as f64;
                    build_pose_tensor(&poses, size, size)
                }
            };
            let logits = cnn.forward(&tensor, dropout_rng)?;
            let (lpa, probs, dlogits) = cross_entropy(&logits, labels);
            loss_pose_action = Some(lpa);
            pose_probs = Some(probs);
            if do_backward && lambdas.pose_action > 0.0 {
                let scaled = dlogits.mapv(|v| v * F::of(lambdas.pose_action));
                cnn.backward(&scaled);
            }
        }

        let mut total = F::of(lambdas.rgb) * loss_rgb;
        if let Some(lp) = loss_pose {
            total = total + F::of(lambdas.pose) * lp;
        }
        if let Some(lpa) = loss_pose_action {
            total = total + F::of(lambdas.pose_action) * lpa;
        }
        Ok(StepOutput {
            loss_rgb,
            loss_heatmap,
            loss_offset,
            loss_pose,
            loss_pose_action,
            total,
            rgb_probs,
            pose_probs,
        })
    }

    /// Evaluation forward pass: running batch-norm statistics, no dropout.
    pub fn eval_forward(&mut self, clips: &Array5<F>) -> Result<EvalOutput<F>> {
        let features = self.backbone.forward(clips, false);
        let (rgb_logits, _) = self.rgb_head.forward(&features, None);
        let rgb_probs = softmax(&rgb_logits);
        let mut stack = None;
        let mut poses = None;
        let mut pose_probs = None;
        if let Some(head) = &mut self.pose_head {
            let s = head.forward(&features, self.cfg.cell_stride(), false);
            let p = decode_keypoints(&s);
            if let Some(cnn) = &mut self.pose_cnn {
                let size = self.cfg.input_size() as f64;
                let tensor = build_pose_tensor::<F>(&p, size, size);
                let logits = cnn.forward(&tensor, None)?;
                pose_probs = Some(softmax(&logits));
            }
            stack = Some(s);
            poses = Some(p);
        }
        Ok(EvalOutput {
            rgb_probs,
            pose_probs,
            features,
            stack,
            poses,
        })
    }

    pub fn zero_grads(&mut self) {
        let mut params = Vec::new();
        self.collect_params(&mut params);
        for p in params {
            p.zero_grad();
        }
    }

    pub fn num_params(&mut self) -> usize {
        let mut params = Vec::new();
        self.collect_params(&mut params);
        params.iter().map(|p| p.value.len()).sum()
    }
}

impl<F: Scalar> State<F> for ActionModel<F> {
    fn collect_params<'a>(&'a mut self, out: &mut Vec<&'a mut Param<F>>) {
        self.backbone.collect_params(out);
        self.rgb_head.collect_params(out);
        if let Some(h) = &mut self.pose_head {
            h.collect_params(out);
        }
        if let Some(c) = &mut self.pose_cnn {
            c.collect_params(out);
        }
    }

    fn export_state(&self, out: &mut Vec<(String, ArrayD<F>)>) {
        self.backbone.export_state(out);
        self.rgb_head.export_state(out);
        if let Some(h) = &self.pose_head {
            h.export_state(out);
        }
        if let Some(c) = &self.pose_cnn {
            c.export_state(out);
        }
    }

    fn import_state(&mut self, map: &HashMap<String, ArrayD<F>>) -> Result<()> {
        self.backbone.import_state(map)?;
        self.rgb_head.import_state(map)?;
        if let Some(h) = &mut self.pose_head {
            h.import_state(map)?;
        }
        if let Some(c) = &mut self.pose_cnn {
            c.import_state(map)?;
        }
        Ok(())
    }
}

/// A small full-pipeline configuration for tests and desk-scale runs.
pub fn toy_model_config(head_mode: HeadMode, num_classes: usize) -> ModelConfig {
    ModelConfig {
        backbone: BackboneConfig {
            stage_blocks: vec![1, 1, 1, 1],
            width_divisor: 8,
            clip_len: 8,
            input_size: 64,
            ..Default::default()
        },
        head_mode,
        head_channels: 32,
        num_deconvs: 2,
        num_keypoints: crate::skeleton::NUM_KEYPOINTS,
        disk_radius: 2.0,
        pose_cnn_blocks: vec![2, 2, 2, 2],
        pose_cnn_channels: 8,
        num_classes,
        dropout: 0.5,
    }
}
