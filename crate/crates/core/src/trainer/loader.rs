//! Batch assembly: person (or whole-frame) cropping, jitter and mirror
//! augmentation, clip sampling, pixel normalization and pose-target
//! encoding. Each sample slot draws from its own rng stream keyed by
//! (seed, epoch, step, slot), so multi-threaded loading stays
//! reproducible.

use image::RgbImage;
use ndarray::{Array3, Array4, Array5, Axis};
use rand::Rng;
use rayon::prelude::*;

use crate::error::Result;
use crate::geometry::{
    crop_resize, expand_to_aspect, jitter_box, mirror_keypoints, sample_clip, BBox, ClipSpec,
    Keypoint,
};
use crate::model::CropMode;
use crate::nn::Scalar;
use crate::posehead::{encode_targets, PoseTargets};
use crate::rng::{derive_rng, tag};
use crate::skeleton::FLIP_PAIRS;
use crate::synthdata::VideoRecord;
use crate::trainer::TrainConfig;

pub struct Batch<F: Scalar> {
    /// `(N, T, 3, H, W)` in `[-1, 1]`.
    pub clips: Array5<F>,
    pub labels: Vec<usize>,
    pub targets: Option<PoseTargets<F>>,
}

/// Maps pixel values to `[-1, 1]`, producing a `(3, H, W)` tensor.
pub fn image_to_tensor<F: Scalar>(img: &RgbImage) -> Array3<F> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut out = Array3::<F>::zeros((3, h, w));
    for (y, row) in img.rows().enumerate() {
        for (x, px) in row.enumerate() {
            for c in 0..3 {
                out[[c, y, x]] = F::of(px.0[c] as f64 / 127.5 - 1.0);
            }
        }
    }
    out
}

/// The whole-frame fallback crop for `random_crop` mode: the centered
/// square of side `min(w, h)`.
pub fn center_square(frame_w: f64, frame_h: f64) -> BBox {
    let side = frame_w.min(frame_h);
    let x0 = (frame_w - side) / 2.0;
    let y0 = (frame_h - side) / 2.0;
    BBox {
        x0,
        y0,
        x1: x0 + side,
        y1: y0 + side,
    }
}

/// The evaluation-time base box of a record under the given crop mode,
/// already expanded to the square aspect.
pub fn eval_box(record: &VideoRecord, crop_mode: CropMode, detection_conf: f64) -> Result<BBox> {
    let base = match crop_mode {
        CropMode::PersonCrop => record.merged_box(detection_conf)?,
        CropMode::RandomCrop => BBox::new(0.0, 0.0, record.frame_w, record.frame_h)?,
    };
    Ok(expand_to_aspect(&base, record.frame_w, record.frame_h))
}

/// Loads the frames of one clip cropped to `bbox`, returning the pixel
/// tensor `(T, 3, H, W)` and per-frame keypoints in crop coordinates.
pub fn load_clip<F: Scalar>(
    record: &VideoRecord,
    bbox: &BBox,
    indices: &[usize],
    input_size: usize,
) -> Result<(Array4<F>, Vec<Vec<Keypoint>>)> {
    let per_frame: Vec<(Array3<F>, Vec<Keypoint>)> = indices
        .par_iter()
        .map(|&idx| {
            let frame = record.load_frame(idx)?;
            let (crop, kps) = crop_resize(
                &frame,
                bbox,
                input_size,
                input_size,
                Some(&record.keypoints[idx]),
            )?;
            Ok((image_to_tensor::<F>(&crop), kps))
        })
        .collect::<Result<Vec<_>>>()?;
    let t = indices.len();
    let mut clip = Array4::<F>::zeros((t, 3, input_size, input_size));
    let mut kps_out = Vec::with_capacity(t);
    for (ti, (tensor, kps)) in per_frame.into_iter().enumerate() {
        clip.index_axis_mut(Axis(0), ti).assign(&tensor);
        kps_out.push(kps);
    }
    Ok((clip, kps_out))
}

fn mirror_clip<F: Scalar>(clip: &mut Array4<F>) {
    let (t, c, _h, w) = clip.dim();
    for ti in 0..t {
        for ci in 0..c {
            let mut plane = clip.index_axis_mut(Axis(0), ti);
            let mut plane = plane.index_axis_mut(Axis(0), ci);
            for row in plane.rows_mut() {
                let mut row = row;
                for x in 0..w / 2 {
                    let tmp = row[x];
                    row[x] = row[w - 1 - x];
                    row[w - 1 - x] = tmp;
                }
            }
        }
    }
}

/// Builds one augmented training batch. Deterministic given
/// `(cfg.seed, epoch, step)` and the record order.
pub fn make_train_batch<F: Scalar>(
    records: &[&VideoRecord],
    cfg: &TrainConfig,
    heatmap_grid: (usize, usize),
    cell_stride: f64,
    epoch: usize,
    step: usize,
) -> Result<Batch<F>> {
    let n = records.len();
    let size = cfg.input_size;
    let samples: Vec<(Array4<F>, usize, Option<PoseTargets<F>>)> = records
        .par_iter()
        .enumerate()
        .map(|(slot, record)| {
            let mut rng = derive_rng(
                cfg.seed,
                &[tag::SAMPLE_AUG, epoch as u64, step as u64, slot as u64],
            );
            let base = match cfg.crop_mode {
                CropMode::PersonCrop => record.merged_box(cfg.detection_conf)?,
                CropMode::RandomCrop => center_square(record.frame_w, record.frame_h),
            };
            let jittered = jitter_box(
                &base,
                &mut rng,
                cfg.jitter_center,
                cfg.jitter_scale,
                record.frame_w,
                record.frame_h,
            )?;
            let bbox = expand_to_aspect(&jittered, record.frame_w, record.frame_h);

            let span = (cfg.clip_len - 1) * cfg.clip_stride + 1;
            let avail = record.num_frames().saturating_sub(span);
            let start = if avail > 0 { rng.gen_range(0..=avail) } else { 0 };
            let spec = ClipSpec::new(cfg.clip_len, cfg.clip_stride, start)?;
            let indices = sample_clip(record.num_frames(), &spec);

            let mirror = rng.gen::<f64>() < cfg.mirror_prob;
            let (mut clip, mut kps) = load_clip::<F>(record, &bbox, &indices, size)?;
            if mirror {
                mirror_clip(&mut clip);
                kps = kps
                    .iter()
                    .map(|frame| mirror_keypoints(frame, size as f64, &FLIP_PAIRS))
                    .collect();
            }
            let targets = cfg.head_mode.has_pose_head().then(|| {
                encode_targets::<F>(&kps, heatmap_grid, cell_stride, cfg.disk_radius)
            });
            Ok((clip, record.label, targets))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut clips = Array5::<F>::zeros((n, cfg.clip_len, 3, size, size));
    let mut labels = Vec::with_capacity(n);
    let mut target_list = Vec::new();
    for (ni, (clip, label, targets)) in samples.into_iter().enumerate() {
        clips.index_axis_mut(Axis(0), ni).assign(&clip);
        labels.push(label);
        if let Some(t) = targets {
            target_list.push(t);
        }
    }
    let targets = (!target_list.is_empty()).then(|| PoseTargets::concat(&target_list));
    Ok(Batch {
        clips,
        labels,
        targets,
    })
}
