//! Multi-task training loop: SGD with momentum, per-tensor L1 gradient
//! clipping, the step learning-rate schedule, JSON-lines metric logging
//! and atomic checkpoints (model tensors + optimizer momentum in one
//! archive). All randomness derives from the config seed keyed by epoch,
//! step and sample slot, so runs and resumes replay exactly.

pub mod config;
pub mod loader;
pub mod sgd;

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use config::{parse_config, TrainConfig};
pub use sgd::{clip_grad_l1, clip_gradients, Sgd};

use crate::checkpoint::{load_archive, save_archive};
use crate::error::{Error, Result};
use crate::model::{ActionModel, CropMode, Lambdas, ModelConfig};
use crate::nn::State;
use crate::rng::{derive_rng, tag};
use crate::synthdata::Dataset;

/// Weighted total of the enabled loss components; absent heads
/// contribute zero. Returns `(total, [rgb, pose, pose_action])`
/// contributions.
pub fn multitask_total(
    loss_rgb: f64,
    loss_pose: Option<f64>,
    loss_pose_action: Option<f64>,
    lambdas: &Lambdas,
) -> (f64, [f64; 3]) {
    let parts = [
        lambdas.rgb * loss_rgb,
        lambdas.pose * loss_pose.unwrap_or(0.0),
        lambdas.pose_action * loss_pose_action.unwrap_or(0.0),
    ];
    (parts.iter().sum(), parts)
}

/// Lowest-index argmax, the crate-wide tie-break.
pub fn argmax_row<F: crate::nn::Scalar>(row: ndarray::ArrayView1<'_, F>) -> usize {
    let mut best = 0usize;
    let mut best_v = F::neg_infinity();
    for (i, &v) in row.iter().enumerate() {
        if v > best_v {
            best_v = v;
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    #[serde(rename = "L_r")]
    pub loss_rgb: f64,
    #[serde(rename = "L_p")]
    pub loss_pose: Option<f64>,
    #[serde(rename = "L_paction")]
    pub loss_pose_action: Option<f64>,
    pub train_top1: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TrainState {
    epochs_completed: usize,
}

/// Sidecar metadata stored next to the tensor archive so evaluation can
/// rebuild the model and protocol.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub model: ModelConfig,
    pub crop_mode: CropMode,
    pub clip_len: usize,
    pub clip_stride: usize,
    pub eval_clips: usize,
    pub detection_conf: f64,
}

pub struct FitResult {
    pub checkpoint_dir: PathBuf,
    pub log_path: PathBuf,
    pub logs: Vec<EpochLog>,
    pub stopped_early: bool,
}

fn save_checkpoint(
    dir: &Path,
    model: &ActionModel<f32>,
    optimizer: &Sgd<f32>,
    meta: &CheckpointMeta,
    train_cfg: &TrainConfig,
    epochs_completed: usize,
) -> Result<()> {
    let mut tensors = Vec::new();
    model.export_state(&mut tensors);
    tensors.extend(optimizer.export_state());
    save_archive(dir, &tensors)?;
    let meta_path = dir.join("config.json");
    fs::write(&meta_path, serde_json::to_string_pretty(meta).expect("serializable"))
        .map_err(|e| Error::io(&meta_path, e))?;
    let cfg_path = dir.join("train_config.json");
    fs::write(&cfg_path, serde_json::to_string_pretty(train_cfg).expect("serializable"))
        .map_err(|e| Error::io(&cfg_path, e))?;
    let state_path = dir.join("train_state.json");
    let state = TrainState { epochs_completed };
    fs::write(&state_path, serde_json::to_string_pretty(&state).expect("serializable"))
        .map_err(|e| Error::io(&state_path, e))?;
    Ok(())
}

pub fn load_checkpoint_meta(dir: &Path) -> Result<CheckpointMeta> {
    let path = dir.join("config.json");
    let json = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&json).map_err(|e| Error::json(&path, e))
}

/// Builds a model from a checkpoint directory, restoring all tensors.
pub fn load_model(dir: &Path) -> Result<(ActionModel<f32>, CheckpointMeta)> {
    let meta = load_checkpoint_meta(dir)?;
    let mut model = ActionModel::<f32>::new(&meta.model, 0)?;
    let tensors = load_archive::<f32>(dir)?;
    model.import_state(&tensors)?;
    Ok((model, meta))
}

/// Runs the training loop. `resume_from` restores model and optimizer
/// state plus the epoch counter from an earlier checkpoint of the same
/// configuration; completed epochs are skipped and the remainder replays
/// exactly as an uninterrupted run would.
pub fn fit(
    dataset: &Dataset,
    cfg: &TrainConfig,
    out_dir: &Path,
    resume_from: Option<&Path>,
) -> Result<FitResult> {
    cfg.validate()?;
    let records = dataset.split("train");
    if records.is_empty() {
        return Err(Error::InvalidInput("train split is empty".into()));
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    let model_cfg = cfg.to_model_config(dataset.num_classes);
    let mut model = ActionModel::<f32>::new(&model_cfg, cfg.seed)?;
    let mut optimizer = Sgd::<f32>::new(cfg.momentum, cfg.weight_decay, Some(cfg.grad_clip_l1));
    let mut start_epoch = 0usize;

    if let Some(init) = &cfg.init_from {
        let tensors = load_archive::<f32>(init)?;
        model.import_state(&tensors)?;
    }
    if let Some(resume) = resume_from {
        let tensors = load_archive::<f32>(resume)?;
        model.import_state(&tensors)?;
        optimizer.import_state(&tensors);
        let state_path = resume.join("train_state.json");
        let json = fs::read_to_string(&state_path).map_err(|e| Error::io(&state_path, e))?;
        let state: TrainState = serde_json::from_str(&json).map_err(|e| Error::json(&state_path, e))?;
        start_epoch = state.epochs_completed;
    }

    let meta = CheckpointMeta {
        model: model_cfg.clone(),
        crop_mode: cfg.crop_mode,
        clip_len: cfg.clip_len,
        clip_stride: cfg.clip_stride,
        eval_clips: cfg.eval_clips,
        detection_conf: cfg.detection_conf,
    };
    let lambdas = cfg.lambdas();
    let milestones = cfg.milestone_epochs();
    let grid = model_cfg.heatmap_grid();
    let cell_stride = model_cfg.cell_stride();

    let log_path = out_dir.join("train_log.jsonl");
    let mut log_file = if start_epoch > 0 && log_path.exists() {
        fs::OpenOptions::new()
            .append(true)
            .open(&log_path)
            .map_err(|e| Error::io(&log_path, e))?
    } else {
        fs::File::create(&log_path).map_err(|e| Error::io(&log_path, e))?
    };

    let mut logs = Vec::new();
    let mut stopped_early = false;
    let final_dir = out_dir.join("checkpoint-final");

    for epoch in start_epoch..cfg.epochs {
        let lr = cfg.lr_at(epoch);
        let mut order: Vec<usize> = (0..records.len()).collect();
        {
            use rand::seq::SliceRandom;
            let mut rng = derive_rng(cfg.seed, &[tag::EPOCH_SHUFFLE, epoch as u64]);
            order.shuffle(&mut rng);
        }

        let mut sum_rgb = 0.0f64;
        let mut sum_pose = 0.0f64;
        let mut sum_pa = 0.0f64;
        let mut n_pose = 0usize;
        let mut n_pa = 0usize;
        let mut correct = 0usize;
        let mut seen = 0usize;
        let num_steps = order.len().div_ceil(cfg.batch_size);

        for step in 0..num_steps {
            let lo = step * cfg.batch_size;
            let hi = (lo + cfg.batch_size).min(order.len());
            let batch_records: Vec<&crate::synthdata::VideoRecord> =
                order[lo..hi].iter().map(|&i| records[i]).collect();
            let batch = loader::make_train_batch::<f32>(
                &batch_records,
                cfg,
                grid,
                cell_stride,
                epoch,
                step,
            )?;
            model.zero_grads();
            let mut dropout_rng = derive_rng(cfg.seed, &[tag::DROPOUT, epoch as u64, step as u64]);
            let out = model.train_forward(
                &batch.clips,
                &batch.labels,
                batch.targets.as_ref(),
                &lambdas,
                Some(&mut dropout_rng),
                None,
                true,
                cfg.pose_cnn_only,
            )?;
            let mut params = Vec::new();
            if cfg.pose_cnn_only {
                model
                    .pose_cnn
                    .as_mut()
                    .ok_or_else(|| Error::InvalidConfig("pose_cnn_only needs the full head mode".into()))?
                    .collect_params(&mut params);
            } else {
                model.collect_params(&mut params);
            }
            optimizer.step(lr, &mut params)?;

            sum_rgb += out.loss_rgb as f64;
            if let Some(lp) = out.loss_pose {
                sum_pose += lp as f64;
                n_pose += 1;
            }
            if let Some(lpa) = out.loss_pose_action {
                sum_pa += lpa as f64;
                n_pa += 1;
            }
            // Fused batch accuracy from the training forward pass.
            for (i, &label) in batch.labels.iter().enumerate() {
                let fused: Vec<f32> = match &out.pose_probs {
                    Some(pp) => out
                        .rgb_probs
                        .row(i)
                        .iter()
                        .zip(pp.row(i).iter())
                        .map(|(a, b)| a + b)
                        .collect(),
                    None => out.rgb_probs.row(i).to_vec(),
                };
                let pred = fused
                    .iter()
                    .enumerate()
                    .fold((0usize, f32::NEG_INFINITY), |acc, (j, &v)| {
                        if v > acc.1 {
                            (j, v)
                        } else {
                            acc
                        }
                    })
                    .0;
                if pred == label {
                    correct += 1;
                }
                seen += 1;
            }
        }

        let log = EpochLog {
            epoch,
            lr,
            loss_rgb: sum_rgb / num_steps as f64,
            loss_pose: (n_pose > 0).then(|| sum_pose / n_pose as f64),
            loss_pose_action: (n_pa > 0).then(|| sum_pa / n_pa as f64),
            train_top1: correct as f64 / seen as f64,
        };
        let line = serde_json::to_string(&log).expect("serializable log");
        writeln!(log_file, "{line}").map_err(|e| Error::io(&log_path, e))?;
        log_file.flush().map_err(|e| Error::io(&log_path, e))?;
        logs.push(log.clone());

        let epochs_completed = epoch + 1;
        if milestones.contains(&epochs_completed) {
            let dir = out_dir.join(format!("checkpoint-epoch-{epochs_completed:03}"));
            save_checkpoint(&dir, &model, &optimizer, &meta, cfg, epochs_completed)?;
        }
        if let Some(target) = cfg.early_stop_top1 {
            if log.train_top1 >= target {
                stopped_early = true;
                save_checkpoint(&final_dir, &model, &optimizer, &meta, cfg, epochs_completed)?;
                break;
            }
        }
    }

    if !stopped_early {
        save_checkpoint(&final_dir, &model, &optimizer, &meta, cfg, cfg.epochs)?;
    }
    Ok(FitResult {
        checkpoint_dir: final_dir,
        log_path,
        logs,
        stopped_early,
    })
}
