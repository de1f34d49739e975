//! Command-line driver: synthetic data generation, training, protocol
//! evaluation, pose decoding and CAM export.
//!
//! Exit codes: 0 success, 1 runtime error, 2 configuration error,
//! 3 checkpoint/config mismatch.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use poseact::error::Error;
use poseact::geometry::crop_resize;
use poseact::inference::{
    centered_clip_tensor, compute_cam, evaluate_split, normalize_cam, DEFAULT_OKS_KAPPA,
};
use poseact::model::{CropMode, HeadMode};
use poseact::synthdata::{generate_dataset, load_manifest, load_video_dir, BiasMode, SynthConfig};
use poseact::trainer::{fit, load_model, parse_config, TrainConfig};
use poseact::viz::{render_cam_overlay, render_pose_overlay};

#[derive(Parser)]
#[command(name = "poseact", about = "Person-centric action recognition pipeline", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic stick-figure dataset.
    GenData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 40)]
        num_videos: usize,
        #[arg(long, default_value_t = 4)]
        classes: usize,
        #[arg(long, default_value = "none")]
        bias: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 32)]
        frames: usize,
        #[arg(long, default_value_t = 320)]
        frame_w: u32,
        #[arg(long, default_value_t = 240)]
        frame_h: u32,
        #[arg(long, default_value_t = 0.8)]
        train_frac: f64,
    },
    /// Train a model from a key=value config file.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Override crop and head modes as CROP:HEADS, e.g.
        /// person_crop:rgb+pose_head+pose_cnn
        #[arg(long)]
        mode: Option<String>,
        /// Resume from a checkpoint directory.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on a dataset split; prints a JSON report.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long, default_value_t = DEFAULT_OKS_KAPPA)]
        kappa: f64,
    },
    /// Decode poses for one video and write skeleton overlays.
    Pose {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        video: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write class activation map overlays for one video.
    Cam {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        video: PathBuf,
        #[arg(long = "class")]
        class_id: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::ConfigParse { .. } | Error::InvalidConfig(_) => 2,
        Error::ShapeMismatch { .. } | Error::Checkpoint(_) => 3,
        _ => 1,
    }
}

fn manifest_path(data: &Path) -> PathBuf {
    if data.is_dir() {
        data.join("manifest.json")
    } else {
        data.to_path_buf()
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::GenData {
            out,
            num_videos,
            classes,
            bias,
            seed,
            frames,
            frame_w,
            frame_h,
            train_frac,
        } => {
            let cfg = SynthConfig {
                num_videos,
                train_frac,
                num_classes: classes,
                frames,
                frame_w,
                frame_h,
                bias_mode: bias.parse::<BiasMode>()?,
                seed,
            };
            let dataset = generate_dataset(&cfg, &out)?;
            println!("manifest: {}", dataset.manifest_path.display());
            for split in ["train", "test"] {
                let counts = dataset.class_counts(split);
                let total: usize = counts.iter().sum();
                println!("{split}: {total} videos, per-class {counts:?}");
            }
            Ok(())
        }
        Command::Train {
            config,
            data,
            out,
            mode,
            resume,
        } => {
            let text = std::fs::read_to_string(&config).map_err(|e| Error::io(&config, e))?;
            let mut cfg: TrainConfig = parse_config(&text)?;
            if let Some(mode) = mode {
                let (crop, heads) = mode.split_once(':').ok_or_else(|| {
                    Error::InvalidConfig(format!(
                        "mode must be CROP:HEADS (e.g. person_crop:rgb_only), got `{mode}`"
                    ))
                })?;
                cfg.crop_mode = crop.parse::<CropMode>()?;
                cfg.head_mode = heads.parse::<HeadMode>()?;
            }
            let dataset = load_manifest(&manifest_path(&data))?;
            let result = fit(&dataset, &cfg, &out, resume.as_deref())?;
            println!("checkpoint: {}", result.checkpoint_dir.display());
            println!("log: {}", result.log_path.display());
            if let Some(last) = result.logs.last() {
                println!(
                    "final epoch {}: train_top1 {:.4}{}",
                    last.epoch,
                    last.train_top1,
                    if result.stopped_early { " (early stop)" } else { "" }
                );
            }
            Ok(())
        }
        Command::Eval {
            checkpoint,
            data,
            split,
            kappa,
        } => {
            let (mut model, meta) = load_model(&checkpoint)?;
            let dataset = load_manifest(&manifest_path(&data))?;
            if dataset.num_classes > meta.model.num_classes {
                return Err(Error::ShapeMismatch {
                    name: "num_classes".into(),
                    expected: vec![meta.model.num_classes],
                    got: vec![dataset.num_classes],
                });
            }
            let records = dataset.split(&split);
            if records.is_empty() {
                return Err(Error::InvalidInput(format!(
                    "split `{split}` is empty in {}",
                    dataset.manifest_path.display()
                )));
            }
            let report = evaluate_split(&records, &mut model, &meta, kappa)?;
            println!("{}", serde_json::to_string_pretty(&report).expect("serializable"));
            Ok(())
        }
        Command::Pose {
            checkpoint,
            video,
            out,
        } => {
            let (mut model, meta) = load_model(&checkpoint)?;
            let record = load_video_dir(&video)?;
            std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
            let (clips, indices, bbox) = centered_clip_tensor(&record, &meta)?;
            let result = model.eval_forward(&clips)?;
            let poses = result.poses.ok_or_else(|| {
                Error::InvalidConfig("checkpoint has no pose head (rgb_only mode)".into())
            })?;
            let size = meta.model.input_size();
            for (ti, &frame_idx) in indices.iter().enumerate() {
                let frame = record.load_frame(frame_idx)?;
                let (crop, _) = crop_resize(&frame, &bbox, size, size, None)?;
                let overlay = render_pose_overlay(&crop, &poses[0][ti]);
                let path = out.join(format!("{ti:06}.png"));
                overlay.save(&path).map_err(Error::Image)?;
            }
            println!("wrote {} overlays to {}", indices.len(), out.display());
            Ok(())
        }
        Command::Cam {
            checkpoint,
            video,
            class_id,
            out,
        } => {
            let (mut model, meta) = load_model(&checkpoint)?;
            if class_id >= meta.model.num_classes {
                return Err(Error::InvalidInput(format!(
                    "class {class_id} out of range (valid: 0..{})",
                    meta.model.num_classes - 1
                )));
            }
            let record = load_video_dir(&video)?;
            std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
            let (clips, indices, bbox) = centered_clip_tensor(&record, &meta)?;
            let result = model.eval_forward(&clips)?;
            let w = model.rgb_head.weight_matrix();
            let maps = compute_cam(&result.features, w.row(class_id));
            let size = meta.model.input_size();
            for (ti, &frame_idx) in indices.iter().enumerate() {
                let frame = record.load_frame(frame_idx)?;
                let (crop, _) = crop_resize(&frame, &bbox, size, size, None)?;
                let overlay = render_cam_overlay(&crop, &normalize_cam(&maps[ti]));
                let path = out.join(format!("{ti:06}.png"));
                overlay.save(&path).map_err(Error::Image)?;
            }
            println!("wrote {} overlays to {}", indices.len(), out.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}
