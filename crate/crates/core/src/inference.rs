//! Test-time protocol: evenly sampled clips times three diagonal crops,
//! per-stream softmax averaging, sum fusion, top-1 accuracy, OKS mean AP
//! and class activation maps.

use ndarray::{Array2, Array5, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{even_clip_starts, BBox, CropTransform, Keypoint};
use crate::model::ActionModel;
use crate::nn::Scalar;
use crate::synthdata::VideoRecord;
use crate::trainer::loader::{eval_box, load_clip};
use crate::trainer::CheckpointMeta;

/// Uniform OKS falloff constant for the synthetic skeleton.
pub const DEFAULT_OKS_KAPPA: f64 = 0.08;

/// Translates the box back inside the frame, preserving its size
/// whenever it fits.
fn shift_into_frame(mut b: BBox, frame_w: f64, frame_h: f64) -> BBox {
    if b.width() >= frame_w {
        b.x0 = 0.0;
        b.x1 = frame_w;
    } else {
        if b.x0 < 0.0 {
            b.x1 -= b.x0;
            b.x0 = 0.0;
        }
        if b.x1 > frame_w {
            b.x0 -= b.x1 - frame_w;
            b.x1 = frame_w;
        }
    }
    if b.height() >= frame_h {
        b.y0 = 0.0;
        b.y1 = frame_h;
    } else {
        if b.y0 < 0.0 {
            b.y1 -= b.y0;
            b.y0 = 0.0;
        }
        if b.y1 > frame_h {
            b.y0 -= b.y1 - frame_h;
            b.y1 = frame_h;
        }
    }
    b
}

/// Three crops of the box's size centered at `c - d`, `c`, `c + d` with
/// `d = (w/4, h/4)`, each shifted back inside the frame.
pub fn three_crop_boxes(bbox: &BBox, frame_w: f64, frame_h: f64) -> [BBox; 3] {
    let (cx, cy) = bbox.center();
    let (hw, hh) = (bbox.width() / 2.0, bbox.height() / 2.0);
    let (dx, dy) = (bbox.width() / 4.0, bbox.height() / 4.0);
    [-1.0, 0.0, 1.0].map(|s| {
        let (mx, my) = (cx + s * dx, cy + s * dy);
        shift_into_frame(
            BBox {
                x0: mx - hw,
                y0: my - hh,
                x1: mx + hw,
                y1: my + hh,
            },
            frame_w,
            frame_h,
        )
    })
}

/// Averaged per-stream probabilities and their unnormalized sum fusion.
#[derive(Debug, Clone)]
pub struct VideoScores {
    pub rgb: Vec<f64>,
    pub pose: Option<Vec<f64>>,
    /// `rgb + pose` when both streams exist, otherwise the RGB scores.
    pub fused: Vec<f64>,
}

impl VideoScores {
    pub fn prediction(&self) -> usize {
        self.fused
            .iter()
            .enumerate()
            .fold((0usize, f64::NEG_INFINITY), |acc, (i, &v)| {
                if v > acc.1 {
                    (i, v)
                } else {
                    acc
                }
            })
            .0
    }
}

/// Runs the full protocol on one video: `eval_clips` evenly spaced clips
/// times three crops, softmax scores averaged within each stream, fused
/// by summation.
pub fn evaluate_video(
    record: &VideoRecord,
    model: &mut ActionModel<f32>,
    meta: &CheckpointMeta,
) -> Result<VideoScores> {
    if record.num_frames() == 0 {
        return Err(Error::InvalidInput(format!(
            "{}: empty video",
            record.dir.display()
        )));
    }
    let base = eval_box(record, meta.crop_mode, meta.detection_conf)?;
    let crops = three_crop_boxes(&base, record.frame_w, record.frame_h);
    let starts = even_clip_starts(
        record.num_frames(),
        meta.clip_len,
        meta.clip_stride,
        meta.eval_clips,
    );
    let size = meta.model.input_size();

    let mut jobs = Vec::new();
    for &start in &starts {
        let spec = crate::geometry::ClipSpec::new(meta.clip_len, meta.clip_stride, start)?;
        let indices = crate::geometry::sample_clip(record.num_frames(), &spec);
        for crop in &crops {
            jobs.push((indices.clone(), *crop));
        }
    }

    let n_classes = meta.model.num_classes;
    let mut rgb_sum = vec![0.0f64; n_classes];
    let mut pose_sum = vec![0.0f64; n_classes];
    let mut has_pose = false;

    // Batch several clips per forward; the memory budget caps the chunk
    // size for large input resolutions.
    let per_clip = meta.clip_len * 3 * size * size;
    let chunk = ((48usize << 20) / (per_clip * 4)).clamp(1, jobs.len().max(1));
    for batch in jobs.chunks(chunk) {
        let mut clips = Array5::<f32>::zeros((batch.len(), meta.clip_len, 3, size, size));
        for (bi, (indices, crop)) in batch.iter().enumerate() {
            let (tensor, _) = load_clip::<f32>(record, crop, indices, size)?;
            clips.index_axis_mut(Axis(0), bi).assign(&tensor);
        }
        let out = model.eval_forward(&clips)?;
        for bi in 0..batch.len() {
            for c in 0..n_classes {
                rgb_sum[c] += out.rgb_probs[[bi, c]] as f64;
            }
            if let Some(pp) = &out.pose_probs {
                has_pose = true;
                for c in 0..n_classes {
                    pose_sum[c] += pp[[bi, c]] as f64;
                }
            }
        }
    }

    let total = jobs.len() as f64;
    let rgb: Vec<f64> = rgb_sum.iter().map(|v| v / total).collect();
    let pose = has_pose.then(|| pose_sum.iter().map(|v| v / total).collect::<Vec<f64>>());
    let fused = match &pose {
        Some(p) => rgb.iter().zip(p.iter()).map(|(a, b)| a + b).collect(),
        None => rgb.clone(),
    };
    Ok(VideoScores { rgb, pose, fused })
}

/// Fraction of predictions whose argmax equals the label.
pub fn top1_accuracy(predictions: &[Vec<f64>], labels: &[usize]) -> Result<f64> {
    if predictions.is_empty() {
        return Err(Error::InvalidInput("no predictions to score".into()));
    }
    if predictions.len() != labels.len() {
        return Err(Error::InvalidInput(format!(
            "{} predictions vs {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    let correct = predictions
        .iter()
        .zip(labels)
        .filter(|(p, &l)| {
            p.iter()
                .enumerate()
                .fold((0usize, f64::NEG_INFINITY), |acc, (i, &v)| {
                    if v > acc.1 {
                        (i, v)
                    } else {
                        acc
                    }
                })
                .0
                == l
        })
        .count();
    Ok(correct as f64 / labels.len() as f64)
}

/// Object keypoint similarity of one predicted pose against ground truth
/// with instance area `s^2 = area` and uniform falloff `kappa`.
pub fn oks(pred: &[(f64, f64)], gt: &[Keypoint], area: f64, kappa: f64) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for (p, g) in pred.iter().zip(gt.iter()) {
        if !g.visible {
            continue;
        }
        let d2 = (p.0 - g.x).powi(2) + (p.1 - g.y).powi(2);
        num += (-d2 / (2.0 * area * kappa * kappa)).exp();
        den += 1.0;
    }
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

/// Mean AP over the OKS thresholds 0.50:0.05:0.95 in the single-person
/// setting: one prediction per instance, precision at a threshold is the
/// fraction of instances whose OKS reaches it.
pub fn oks_ap(
    preds: &[Vec<(f64, f64)>],
    gts: &[Vec<Keypoint>],
    areas: &[f64],
    kappa: f64,
) -> Result<f64> {
    if preds.len() != gts.len() || preds.len() != areas.len() {
        return Err(Error::InvalidInput(format!(
            "mismatched counts: {} predictions, {} ground truths, {} areas",
            preds.len(),
            gts.len(),
            areas.len()
        )));
    }
    if preds.is_empty() {
        return Err(Error::InvalidInput("no pose instances to score".into()));
    }
    let scores: Vec<f64> = preds
        .iter()
        .zip(gts)
        .zip(areas)
        .map(|((p, g), &a)| oks(p, g, a, kappa))
        .collect();
    let mut ap_sum = 0.0;
    let mut n_thr = 0usize;
    for i in 0..10 {
        let thr = 0.50 + 0.05 * i as f64;
        let hits = scores.iter().filter(|&&s| s >= thr).count();
        ap_sum += hits as f64 / scores.len() as f64;
        n_thr += 1;
    }
    Ok(ap_sum / n_thr as f64)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub top1_rgb: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub top1_pose: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub top1_fused: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub oks_map: Option<f64>,
    pub per_class_accuracy: Vec<f64>,
    pub num_videos: usize,
}

/// Evaluates a split: action accuracy under the full protocol, plus OKS
/// mean AP of the pose head (decoded on the centered clip and center
/// crop, compared in frame coordinates).
pub fn evaluate_split(
    records: &[&VideoRecord],
    model: &mut ActionModel<f32>,
    meta: &CheckpointMeta,
    oks_kappa: f64,
) -> Result<EvalReport> {
    if records.is_empty() {
        return Err(Error::InvalidInput("split is empty".into()));
    }
    let n_classes = meta.model.num_classes;
    let mut fused_preds = Vec::new();
    let mut rgb_preds = Vec::new();
    let mut pose_preds: Vec<Vec<f64>> = Vec::new();
    let mut labels = Vec::new();
    let mut oks_pred = Vec::new();
    let mut oks_gt = Vec::new();
    let mut oks_area = Vec::new();

    for record in records {
        let scores = evaluate_video(record, model, meta)?;
        rgb_preds.push(scores.rgb.clone());
        if let Some(p) = &scores.pose {
            pose_preds.push(p.clone());
        }
        fused_preds.push(scores.fused.clone());
        labels.push(record.label);

        if meta.model.head_mode.has_pose_head() {
            collect_pose_instances(
                record,
                model,
                meta,
                &mut oks_pred,
                &mut oks_gt,
                &mut oks_area,
            )?;
        }
    }

    let top1_rgb = top1_accuracy(&rgb_preds, &labels)?;
    let has_pose_stream = pose_preds.len() == records.len();
    let top1_pose = has_pose_stream
        .then(|| top1_accuracy(&pose_preds, &labels))
        .transpose()?;
    let top1_fused = has_pose_stream
        .then(|| top1_accuracy(&fused_preds, &labels))
        .transpose()?;
    let oks_map = (!oks_pred.is_empty())
        .then(|| oks_ap(&oks_pred, &oks_gt, &oks_area, oks_kappa))
        .transpose()?;

    let mut per_class_correct = vec![0usize; n_classes];
    let mut per_class_total = vec![0usize; n_classes];
    for (pred, &label) in fused_preds.iter().zip(&labels) {
        let p = pred
            .iter()
            .enumerate()
            .fold((0usize, f64::NEG_INFINITY), |acc, (i, &v)| {
                if v > acc.1 {
                    (i, v)
                } else {
                    acc
                }
            })
            .0;
        per_class_total[label] += 1;
        if p == label {
            per_class_correct[label] += 1;
        }
    }
    let per_class_accuracy = per_class_correct
        .iter()
        .zip(&per_class_total)
        .map(|(&c, &t)| if t == 0 { 0.0 } else { c as f64 / t as f64 })
        .collect();

    Ok(EvalReport {
        top1_rgb,
        top1_pose,
        top1_fused,
        oks_map,
        per_class_accuracy,
        num_videos: records.len(),
    })
}

/// Decodes poses on the centered clip and center crop of one video and
/// appends (prediction, ground truth, area) instances in frame
/// coordinates.
fn collect_pose_instances(
    record: &VideoRecord,
    model: &mut ActionModel<f32>,
    meta: &CheckpointMeta,
    preds: &mut Vec<Vec<(f64, f64)>>,
    gts: &mut Vec<Vec<Keypoint>>,
    areas: &mut Vec<f64>,
) -> Result<()> {
    let base = eval_box(record, meta.crop_mode, meta.detection_conf)?;
    let start = even_clip_starts(record.num_frames(), meta.clip_len, meta.clip_stride, 1)[0];
    let spec = crate::geometry::ClipSpec::new(meta.clip_len, meta.clip_stride, start)?;
    let indices = crate::geometry::sample_clip(record.num_frames(), &spec);
    let size = meta.model.input_size();
    let (tensor, _) = load_clip::<f32>(record, &base, &indices, size)?;
    let mut clips = Array5::<f32>::zeros((1, indices.len(), 3, size, size));
    clips.index_axis_mut(Axis(0), 0).assign(&tensor);
    let out = model.eval_forward(&clips)?;
    let Some(poses) = out.poses else {
        return Ok(());
    };
    let transform = CropTransform::new(&base, size, size)?;
    for (ti, &frame_idx) in indices.iter().enumerate() {
        let decoded = &poses[0][ti];
        let frame_pose: Vec<(f64, f64)> = decoded
            .points
            .iter()
            .map(|&(x, y)| transform.crop_to_frame(x, y))
            .collect();
        preds.push(frame_pose);
        gts.push(record.keypoints[frame_idx].clone());
        areas.push(record.boxes[frame_idx].0.area());
    }
    Ok(())
}

/// The single centered clip of a video under the checkpoint's protocol:
/// the batched input tensor, the sampled frame indices and the crop box.
/// Used by the pose and CAM visualization commands.
pub fn centered_clip_tensor(
    record: &VideoRecord,
    meta: &CheckpointMeta,
) -> Result<(Array5<f32>, Vec<usize>, BBox)> {
    let bbox = eval_box(record, meta.crop_mode, meta.detection_conf)?;
    let start = even_clip_starts(record.num_frames(), meta.clip_len, meta.clip_stride, 1)[0];
    let spec = crate::geometry::ClipSpec::new(meta.clip_len, meta.clip_stride, start)?;
    let indices = crate::geometry::sample_clip(record.num_frames(), &spec);
    let size = meta.model.input_size();
    let (tensor, _) = load_clip::<f32>(record, &bbox, &indices, size)?;
    let mut clips = Array5::<f32>::zeros((1, indices.len(), 3, size, size));
    clips.index_axis_mut(Axis(0), 0).assign(&tensor);
    Ok((clips, indices, bbox))
}

/// Raw class activation maps of one clip: per frame,
/// `map(h, w) = sum_c W[class, c] * features[c, t, h, w]`.
pub fn compute_cam<F: Scalar>(
    features: &Array5<F>,
    class_row: ndarray::ArrayView1<'_, F>,
) -> Vec<Array2<f64>> {
    let (n, t, c, h, w) = features.dim();
    assert_eq!(n, 1, "one clip at a time");
    assert_eq!(c, class_row.len(), "one weight per channel");
    let mut out = Vec::with_capacity(t);
    for ti in 0..t {
        let mut map = Array2::<f64>::zeros((h, w));
        for ci in 0..c {
            let wgt = class_row[ci].as_f64();
            if wgt == 0.0 {
                continue;
            }
            let plane = features.index_axis(Axis(0), 0);
            let plane = plane.index_axis(Axis(0), ti);
            let plane = plane.index_axis(Axis(0), ci);
            ndarray::Zip::from(&mut map).and(&plane).for_each(|m, &v| {
                *m += wgt * v.as_f64();
            });
        }
        out.push(map);
    }
    out
}

/// Min-max normalization to [0, 1] for rendering; constant maps become
/// zeros.
pub fn normalize_cam(map: &Array2<f64>) -> Array2<f64> {
    let lo = map.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = map.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if hi - lo < 1e-12 {
        Array2::zeros(map.raw_dim())
    } else {
        map.mapv(|v| (v - lo) / (hi - lo))
    }
}
