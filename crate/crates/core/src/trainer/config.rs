//! Training configuration and its flat `key = value` file format.

use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::backbone::BackboneConfig;
use crate::error::{Error, Result};
use crate::model::{CropMode, HeadMode, Lambdas, ModelConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub grad_clip_l1: f64,
    pub lr_decay: f64,
    /// Empty means the default schedule fractions 42/85 and 68/85 of the
    /// epoch count.
    pub milestones: Vec<usize>,
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub seed: u64,
    pub crop_mode: CropMode,
    pub head_mode: HeadMode,
    pub clip_len: usize,
    pub clip_stride: usize,
    pub input_size: usize,
    pub width_divisor: usize,
    pub stage_blocks: Vec<usize>,
    pub conv1_temporal: usize,
    pub stage_temporal: Vec<usize>,
    pub head_channels: usize,
    pub num_deconvs: usize,
    pub pose_cnn_blocks: Vec<usize>,
    pub pose_cnn_channels: usize,
    pub disk_radius: f64,
    pub jitter_center: f64,
    pub jitter_scale: f64,
    pub mirror_prob: f64,
    pub dropout: f64,
    /// Stop once the logged fused train top-1 reaches this value.
    pub early_stop_top1: Option<f64>,
    pub eval_clips: usize,
    /// Two-stage variant: freeze backbone and heads, train only the pose
    /// classifier (pair with `init_from`).
    pub pose_cnn_only: bool,
    /// Warm-start checkpoint directory.
    pub init_from: Option<PathBuf>,
    /// Detection confidence threshold for person boxes.
    pub detection_conf: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 85,
            batch_size: 16,
            base_lr: 0.01,
            momentum: 0.9,
            weight_decay: 1e-4,
            grad_clip_l1: 2.0,
            lr_decay: 0.1,
            milestones: Vec::new(),
            lambda1: 1.0,
            lambda2: 1.0,
            lambda3: 1.0,
            seed: 0,
            crop_mode: CropMode::PersonCrop,
            head_mode: HeadMode::Full,
            clip_len: 8,
            clip_stride: 8,
            input_size: 224,
            width_divisor: 1,
            stage_blocks: vec![3, 4, 6, 3],
            conv1_temporal: 5,
            stage_temporal: vec![3, 3, 3, 3],
            head_channels: 256,
            num_deconvs: 2,
            pose_cnn_blocks: vec![2, 2, 2, 2],
            pose_cnn_channels: 64,
            disk_radius: 2.0,
            jitter_center: 0.1,
            jitter_scale: 0.1,
            mirror_prob: 0.5,
            dropout: 0.5,
            early_stop_top1: None,
            eval_clips: 10,
            pose_cnn_only: false,
            init_from: None,
            detection_conf: 0.99,
        }
    }
}

impl TrainConfig {
    /// Small configuration for desk-scale experiments and tests.
    pub fn toy() -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: 8,
            clip_len: 8,
            clip_stride: 2,
            input_size: 64,
            width_divisor: 8,
            stage_blocks: vec![1, 1, 1, 1],
            head_channels: 32,
            pose_cnn_channels: 8,
            ..Default::default()
        }
    }

    pub fn lambdas(&self) -> Lambdas {
        Lambdas {
            rgb: self.lambda1,
            pose: self.lambda2,
            pose_action: self.lambda3,
        }
    }

    /// Milestone epochs; defaults scale the 42/85 and 68/85 fractions to
    /// the configured epoch count.
    pub fn milestone_epochs(&self) -> Vec<usize> {
        if !self.milestones.is_empty() {
            return self.milestones.clone();
        }
        [42.0 / 85.0, 68.0 / 85.0]
            .iter()
            .map(|f| (f * self.epochs as f64).round() as usize)
            .collect()
    }

    /// Step schedule: `base * decay^(milestones passed)`.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let passed = self
            .milestone_epochs()
            .iter()
            .filter(|&&m| m <= epoch)
            .count();
        self.base_lr * self.lr_decay.powi(passed as i32)
    }

    pub fn to_model_config(&self, num_classes: usize) -> ModelConfig {
        ModelConfig {
            backbone: BackboneConfig {
                stage_blocks: self.stage_blocks.clone(),
                base_channels: 64,
                conv1_temporal: self.conv1_temporal,
                stage_temporal: self.stage_temporal.clone(),
                width_divisor: self.width_divisor,
                clip_len: self.clip_len,
                input_size: self.input_size,
            },
            head_mode: self.head_mode,
            head_channels: self.head_channels,
            num_deconvs: self.num_deconvs,
            num_keypoints: crate::skeleton::NUM_KEYPOINTS,
            disk_radius: self.disk_radius,
            pose_cnn_blocks: self.pose_cnn_blocks.clone(),
            pose_cnn_channels: self.pose_cnn_channels,
            num_classes,
            dropout: self.dropout,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.base_lr <= 0.0 {
            return Err(Error::InvalidConfig("base_lr must be positive".into()));
        }
        if self.lambda1 < 0.0 || self.lambda2 < 0.0 || self.lambda3 < 0.0 {
            return Err(Error::InvalidConfig("loss weights must be non-negative".into()));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidConfig("epochs and batch_size must be >= 1".into()));
        }
        if self.clip_len == 0 || self.clip_stride == 0 {
            return Err(Error::InvalidConfig("clip_len and clip_stride must be >= 1".into()));
        }
        Ok(())
    }
}

fn parse_list<T: FromStr>(value: &str, line: usize) -> Result<Vec<T>> {
    if value.trim().is_empty() {
        return Ok(Vec::new());
    }
    value
        .split(',')
        .map(|s| {
            s.trim().parse::<T>().map_err(|_| Error::ConfigParse {
                line,
                message: format!("invalid list element `{}`", s.trim()),
            })
        })
        .collect()
}

fn parse_scalar<T: FromStr>(value: &str, key: &str, line: usize) -> Result<T> {
    value.trim().parse::<T>().map_err(|_| Error::ConfigParse {
        line,
        message: format!("invalid value `{}` for key `{key}`", value.trim()),
    })
}

/// Parses the flat `key = value` configuration format. Lines starting
/// with `#` (or `;`) are comments; unknown keys are errors naming the
/// offending line.
pub fn parse_config(text: &str) -> Result<TrainConfig> {
    let mut cfg = TrainConfig::default();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::ConfigParse {
                line: line_no,
                message: format!("expected `key = value`, got `{line}`"),
            });
        };
        let key = key.trim();
        let value = value.trim();
        match key {
            "epochs" => cfg.epochs = parse_scalar(value, key, line_no)?,
            "batch_size" => cfg.batch_size = parse_scalar(value, key, line_no)?,
            "base_lr" => cfg.base_lr = parse_scalar(value, key, line_no)?,
            "momentum" => cfg.momentum = parse_scalar(value, key, line_no)?,
            "weight_decay" => cfg.weight_decay = parse_scalar(value, key, line_no)?,
            "grad_clip_l1" => cfg.grad_clip_l1 = parse_scalar(value, key, line_no)?,
            "lr_decay" => cfg.lr_decay = parse_scalar(value, key, line_no)?,
            "milestones" => cfg.milestones = parse_list(value, line_no)?,
            "lambda1" => cfg.lambda1 = parse_scalar(value, key, line_no)?,
            "lambda2" => cfg.lambda2 = parse_scalar(value, key, line_no)?,
            "lambda3" => cfg.lambda3 = parse_scalar(value, key, line_no)?,
            "seed" => cfg.seed = parse_scalar(value, key, line_no)?,
            "crop_mode" => {
                cfg.crop_mode = value.parse().map_err(|_| Error::ConfigParse {
                    line: line_no,
                    message: format!("invalid crop_mode `{value}`"),
                })?
            }
            "head_mode" => {
                cfg.head_mode = value.parse().map_err(|_| Error::ConfigParse {
                    line: line_no,
                    message: format!("invalid head_mode `{value}`"),
                })?
            }
            "clip_len" => cfg.clip_len = parse_scalar(value, key, line_no)?,
            "clip_stride" => cfg.clip_stride = parse_scalar(value, key, line_no)?,
            "input_size" => cfg.input_size = parse_scalar(value, key, line_no)?,
            "width_divisor" => cfg.width_divisor = parse_scalar(value, key, line_no)?,
            "stage_blocks" => cfg.stage_blocks = parse_list(value, line_no)?,
            "conv1_temporal" => cfg.conv1_temporal = parse_scalar(value, key, line_no)?,
            "stage_temporal" => cfg.stage_temporal = parse_list(value, line_no)?,
            "head_channels" => cfg.head_channels = parse_scalar(value, key, line_no)?,
            "num_deconvs" => cfg.num_deconvs = parse_scalar(value, key, line_no)?,
            "pose_cnn_blocks" => cfg.pose_cnn_blocks = parse_list(value, line_no)?,
            "pose_cnn_channels" => cfg.pose_cnn_channels = parse_scalar(value, key, line_no)?,
            "disk_radius" => cfg.disk_radius = parse_scalar(value, key, line_no)?,
            "jitter_center" => cfg.jitter_center = parse_scalar(value, key, line_no)?,
            "jitter_scale" => cfg.jitter_scale = parse_scalar(value, key, line_no)?,
            "mirror_prob" => cfg.mirror_prob = parse_scalar(value, key, line_no)?,
            "dropout" => cfg.dropout = parse_scalar(value, key, line_no)?,
            "early_stop_top1" => {
                cfg.early_stop_top1 = if value.is_empty() {
                    None
                } else {
                    Some(parse_scalar(value, key, line_no)?)
                }
            }
            "eval_clips" => cfg.eval_clips = parse_scalar(value, key, line_no)?,
            "pose_cnn_only" => cfg.pose_cnn_only = parse_scalar(value, key, line_no)?,
            "init_from" => {
                cfg.init_from = if value.is_empty() {
                    None
                } else {
                    Some(PathBuf::from(value))
                }
            }
            "detection_conf" => cfg.detection_conf = parse_scalar(value, key, line_no)?,
            other => {
                return Err(Error::ConfigParse {
                    line: line_no,
                    message: format!("unknown key `{other}`"),
                })
            }
        }
    }
    cfg.validate()?;
    Ok(cfg)
}
