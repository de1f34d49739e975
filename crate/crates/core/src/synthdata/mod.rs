//! Synthetic stick-figure video benchmark with exact keypoint ground
//! truth and controllable class-correlated background bias.
//!
//! Each video shows one articulated figure performing one of up to six
//! motions; classes differ only in joint trajectories. In `scene` bias
//! mode a class-specific colored shape is drawn far enough from the
//! figure that person crops exclude it while whole-frame crops see it;
//! `scene_swapped` draws the shape of class `(label + 1) % n`, severing
//! the scene-label correlation for generalization tests.

pub mod figure;
pub mod raster;

use std::fs;
use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{merge_boxes, BBox, Keypoint};
use crate::rng::derive_rng;
use crate::skeleton::{LIMBS, NUM_KEYPOINTS};
use figure::{MotionParams, NUM_MOTIONS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BiasMode {
    None,
    Scene,
    SceneSwapped,
}

impl std::str::FromStr for BiasMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(BiasMode::None),
            "scene" => Ok(BiasMode::Scene),
            "scene_swapped" => Ok(BiasMode::SceneSwapped),
            other => Err(Error::InvalidInput(format!(
                "unknown bias mode `{other}` (expected none|scene|scene_swapped)"
            ))),
        }
    }
}

/// Which background object class a video displays, if any. In `scene`
/// mode the mapping is the identity bijection; `scene_swapped` composes
/// it with a cyclic shift by one.
pub fn scene_class_for(label: usize, bias: BiasMode, num_classes: usize) -> Option<usize> {
    match bias {
        BiasMode::None => None,
        BiasMode::Scene => Some(label),
        BiasMode::SceneSwapped => Some((label + 1) % num_classes),
    }
}

#[derive(Debug, Clone)]
pub struct SynthConfig {
    /// Total videos; splits are assigned per class round-robin.
    pub num_videos: usize,
    /// Fraction assigned to the train split (the rest is test).
    pub train_frac: f64,
    pub num_classes: usize,
    /// Frames per video.
    pub frames: usize,
    pub frame_w: u32,
    pub frame_h: u32,
    pub bias_mode: BiasMode,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            num_videos: 40,
            train_frac: 0.8,
            num_classes: 4,
            frames: 32,
            frame_w: 320,
            frame_h: 240,
            bias_mode: BiasMode::None,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 || self.num_classes > NUM_MOTIONS {
            return Err(Error::InvalidConfig(format!(
                "num_classes must be in [2, {NUM_MOTIONS}], got {}",
                self.num_classes
            )));
        }
        if self.frames < 1 || self.num_videos < 1 {
            return Err(Error::InvalidConfig("need at least one frame and one video".into()));
        }
        if !(0.0..=1.0).contains(&self.train_frac) {
            return Err(Error::InvalidConfig("train_frac must lie in [0, 1]".into()));
        }
        if self.frame_w < 64 || self.frame_h < 64 {
            return Err(Error::InvalidConfig("frames must be at least 64x64".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub video_dir: String,
    pub label: usize,
    pub split: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct VideoAnnot {
    label: usize,
    /// Per frame: `[x0, y0, x1, y1, confidence]`.
    boxes: Vec<[f64; 5]>,
    /// Per frame, per keypoint: `[x, y, visible]`.
    keypoints: Vec<Vec<[f64; 3]>>,
}

/// One loaded dataset element.
#[derive(Debug, Clone)]
pub struct VideoRecord {
    pub dir: PathBuf,
    pub label: usize,
    pub split: String,
    pub frame_w: f64,
    pub frame_h: f64,
    /// Per-frame detection box and confidence.
    pub boxes: Vec<(BBox, f64)>,
    /// Per-frame ground-truth keypoints in frame coordinates.
    pub keypoints: Vec<Vec<Keypoint>>,
}

impl VideoRecord {
    pub fn num_frames(&self) -> usize {
        self.boxes.len()
    }

    pub fn frame_path(&self, idx: usize) -> PathBuf {
        self.dir.join("frames").join(format!("{idx:06}.png"))
    }

    pub fn load_frame(&self, idx: usize) -> Result<RgbImage> {
        let path = self.frame_path(idx);
        let img = image::open(&path).map_err(|_| Error::MissingFrame(path))?;
        Ok(img.to_rgb8())
    }

    /// The video-level person box: the envelope of all per-frame boxes
    /// whose confidence passes the threshold; the full frame if none do.
    pub fn merged_box(&self, conf_threshold: f64) -> Result<BBox> {
        let boxes: Vec<BBox> = self
            .boxes
            .iter()
            .filter(|(_, conf)| *conf >= conf_threshold)
            .map(|(b, _)| *b)
            .collect();
        merge_boxes(&boxes, self.frame_w, self.frame_h)
    }

    fn validate(&self) -> Result<()> {
        if self.boxes.is_empty() {
            return Err(Error::Manifest(format!(
                "{}: video has no frames",
                self.dir.display()
            )));
        }
        if self.keypoints.len() != self.boxes.len() {
            return Err(Error::Manifest(format!(
                "{}: {} keypoint frames vs {} box frames",
                self.dir.display(),
                self.keypoints.len(),
                self.boxes.len()
            )));
        }
        let k = self.keypoints[0].len();
        for (fi, (frame_kps, (bbox, conf))) in
            self.keypoints.iter().zip(self.boxes.iter()).enumerate()
        {
            bbox.validate()?;
            if !conf.is_finite() {
                return Err(Error::Manifest(format!(
                    "{} frame {fi}: non-finite box confidence",
                    self.dir.display()
                )));
            }
            if frame_kps.len() != k {
                return Err(Error::Manifest(format!(
                    "{} frame {fi}: inconsistent keypoint count",
                    self.dir.display()
                )));
            }
            for (ki, kp) in frame_kps.iter().enumerate() {
                if kp.visible {
                    if !kp.x.is_finite() || !kp.y.is_finite() {
                        return Err(Error::Manifest(format!(
                            "{} frame {fi} keypoint {ki}: non-finite coordinates",
                            self.dir.display()
                        )));
                    }
                    if kp.x < -1e-6
                        || kp.y < -1e-6
                        || kp.x > self.frame_w + 1e-6
                        || kp.y > self.frame_h + 1e-6
                    {
                        return Err(Error::Manifest(format!(
                            "{} frame {fi} keypoint {ki}: ({}, {}) outside frame",
                            self.dir.display(),
                            kp.x,
                            kp.y
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub root: PathBuf,
    pub manifest_path: PathBuf,
    pub records: Vec<VideoRecord>,
    pub num_classes: usize,
    pub num_keypoints: usize,
}

impl Dataset {
    pub fn split(&self, name: &str) -> Vec<&VideoRecord> {
        self.records.iter().filter(|r| r.split == name).collect()
    }

    pub fn class_counts(&self, split: &str) -> Vec<usize> {
        let mut counts = vec![0usize; self.num_classes];
        for r in self.records.iter().filter(|r| r.split == split) {
            counts[r.label] += 1;
        }
        counts
    }
}

struct ObjectSpec {
    kind: usize,
    color: Rgb<u8>,
}

fn object_for_class(class: usize) -> ObjectSpec {
    let colors = [
        Rgb([212u8, 40, 40]),  // red
        Rgb([40, 190, 60]),    // green
        Rgb([50, 90, 230]),    // blue
        Rgb([230, 210, 40]),   // yellow
        Rgb([210, 60, 200]),   // magenta
        Rgb([40, 200, 210]),   // cyan
    ];
    ObjectSpec {
        kind: class % NUM_MOTIONS,
        color: colors[class % colors.len()],
    }
}

fn draw_object(img: &mut RgbImage, spec: &ObjectSpec, cx: f64, cy: f64, half: f64) {
    match spec.kind {
        0 => raster::fill_rect(img, cx - half, cy - half, cx + half, cy + half, spec.color),
        1 => raster::fill_disk(img, cx, cy, half, spec.color),
        2 => raster::fill_triangle(
            img,
            (cx, cy - half),
            (cx - half, cy + half),
            (cx + half, cy + half),
            spec.color,
        ),
        3 => raster::fill_cross(img, cx, cy, half, half * 0.35, spec.color),
        4 => {
            // Diamond: rotated square.
            raster::fill_triangle(img, (cx, cy - half), (cx - half, cy), (cx + half, cy), spec.color);
            raster::fill_triangle(img, (cx - half, cy), (cx + half, cy), (cx, cy + half), spec.color);
        }
        _ => raster::fill_ring(img, cx, cy, half, half * 0.55, spec.color),
    }
}

/// Renders the whole dataset under `out_dir` and returns it loaded (which
/// also validates everything just written). Fully deterministic per seed.
pub fn generate_dataset(cfg: &SynthConfig, out_dir: &Path) -> Result<Dataset> {
    cfg.validate()?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    let n_train = (cfg.num_videos as f64 * cfg.train_frac).round() as usize;
    let mut entries = Vec::with_capacity(cfg.num_videos);
    let (fw, fh) = (cfg.frame_w as f64, cfg.frame_h as f64);
    let period = 16.0f64;

    for vid in 0..cfg.num_videos {
        let (split, idx_in_split) = if vid < n_train {
            ("train", vid)
        } else {
            ("test", vid - n_train)
        };
        let label = idx_in_split % cfg.num_classes;
        let mut rng = derive_rng(cfg.seed, &[crate::rng::tag::SYNTH_VIDEO, vid as u64]);

        // Figure geometry and motion draws, in fixed order.
        let scale = fh * rng.gen_range(0.28..0.38);
        let params = MotionParams {
            period,
            phase: rng.gen_range(0.0..period),
            amp: rng.gen_range(0.88..1.12),
        };
        let bg_shift = rng.gen_range(-12.0..12.0);
        let fig_shift = rng.gen_range(-20.0..20.0);

        // Trajectories in figure units, then the envelope for placement.
        let poses: Vec<[(f64, f64); 17]> =
            (0..cfg.frames).map(|f| figure::pose_at(label, &params, f)).collect();
        let (mut min_x, mut min_y, mut max_x, mut max_y) = (f64::MAX, f64::MAX, f64::MIN, f64::MIN);
        for pose in &poses {
            for &(x, y) in pose.iter() {
                min_x = min_x.min(x);
                min_y = min_y.min(y);
                max_x = max_x.max(x);
                max_y = max_y.max(y);
            }
        }
        let head_pad = 0.10; // head disk extends past the eye keypoints
        let (min_x, min_y, max_x, max_y) =
            (min_x - head_pad, min_y - head_pad, max_x + head_pad, max_y + head_pad);
        let margin = 4.0;
        let tx_lo = margin - min_x * scale;
        let tx_hi = fw - margin - max_x * scale;
        let ty_lo = margin - min_y * scale;
        let ty_hi = fh - margin - max_y * scale;
        let tx = rng.gen_range(tx_lo..tx_hi.max(tx_lo + 1e-9));
        let ty = rng.gen_range(ty_lo..ty_hi.max(ty_lo + 1e-9));

        // Background object placement: far from the figure so person
        // crops exclude it, inside the central band so whole-frame crops
        // see it. The same draws happen in every bias mode.
        let fig_h_px = (max_y - min_y) * scale;
        let fig_cx = tx + (min_x + max_x) / 2.0 * scale;
        let fig_cy = ty + (min_y + max_y) / 2.0 * scale;
        let obj_half = scale * rng.gen_range(0.18..0.26);
        let band = (fw - fw.min(fh)) / 2.0;
        let m = obj_half + 4.0;
        let (ox_lo, ox_hi) = ((band + m).min(fw - m - 1.0), (fw - band - m).max(band + m + 1e-9));
        let (oy_lo, oy_hi) = (m.min(fh - m - 1.0), (fh - m).max(m + 1e-9));
        let mut obj_xy = (fw - m, m);
        let mut d_min = 1.15 * fig_h_px;
        let mut placed = false;
        for attempt in 0..60 {
            let ox = rng.gen_range(ox_lo..ox_hi);
            let oy = rng.gen_range(oy_lo..oy_hi);
            if (ox - fig_cx).hypot(oy - fig_cy) >= d_min + obj_half {
                obj_xy = (ox, oy);
                placed = true;
                break;
            }
            if attempt % 10 == 9 {
                d_min *= 0.9;
            }
        }
        if !placed {
            // Fallback: the farthest central-band corner.
            let corners = [(ox_lo, oy_lo), (ox_hi, oy_lo), (ox_lo, oy_hi), (ox_hi, oy_hi)];
            obj_xy = corners
                .into_iter()
                .max_by(|a, b| {
                    let da = (a.0 - fig_cx).hypot(a.1 - fig_cy);
                    let db = (b.0 - fig_cx).hypot(b.1 - fig_cy);
                    da.partial_cmp(&db).unwrap()
                })
                .unwrap();
        }

        let video_rel = format!("videos/{vid:04}");
        let video_dir = out_dir.join(&video_rel);
        let frames_dir = video_dir.join("frames");
        fs::create_dir_all(&frames_dir).map_err(|e| Error::io(&frames_dir, e))?;

        let bg = {
            let v = |base: f64| (base + bg_shift).clamp(0.0, 255.0) as u8;
            Rgb([v(68.0), v(72.0), v(80.0)])
        };
        let fig_color = {
            let v = |base: f64| (base + fig_shift).clamp(0.0, 255.0) as u8;
            Rgb([v(226.0), v(226.0), v(232.0)])
        };
        let limb_radius = (scale * 0.035).max(1.6);
        let scene_class = scene_class_for(label, cfg.bias_mode, cfg.num_classes);

        let mut boxes = Vec::with_capacity(cfg.frames);
        let mut keypoints = Vec::with_capacity(cfg.frames);
        for (f, pose) in poses.iter().enumerate() {
            let pts: Vec<(f64, f64)> = pose
                .iter()
                .map(|&(x, y)| (tx + x * scale, ty + y * scale))
                .collect();

            let mut img = RgbImage::from_pixel(cfg.frame_w, cfg.frame_h, bg);
            if let Some(cls) = scene_class {
                draw_object(&mut img, &object_for_class(cls), obj_xy.0, obj_xy.1, obj_half);
            }
            for &(a, b) in LIMBS.iter() {
                raster::draw_capsule(&mut img, pts[a], pts[b], limb_radius, fig_color);
            }
            // Head disk centered between the ears.
            let hx = (pts[3].0 + pts[4].0) / 2.0;
            let hy = (pts[3].1 + pts[4].1) / 2.0;
            raster::fill_disk(&mut img, hx, hy, scale * 0.085, fig_color);

            let path = frames_dir.join(format!("{f:06}.png"));
            img.save(&path).map_err(Error::Image)?;

            // Detection box: keypoint envelope plus a margin, clamped.
            let (mut bx0, mut by0, mut bx1, mut by1) = (f64::MAX, f64::MAX, f64::MIN, f64::MIN);
            for &(x, y) in &pts {
                bx0 = bx0.min(x);
                by0 = by0.min(y);
                bx1 = bx1.max(x);
                by1 = by1.max(y);
            }
            let pad = scale * 0.12;
            let bbox = BBox {
                x0: bx0 - pad,
                y0: by0 - pad,
                x1: bx1 + pad,
                y1: by1 + pad,
            }
            .clamp_to_frame(fw, fh);
            boxes.push([bbox.x0, bbox.y0, bbox.x1, bbox.y1, 1.0]);
            keypoints.push(pts.iter().map(|&(x, y)| [x, y, 1.0]).collect::<Vec<_>>());
        }

        let annot = VideoAnnot {
            label,
            boxes,
            keypoints,
        };
        let annot_path = video_dir.join("annot.json");
        let json = serde_json::to_string_pretty(&annot).expect("serializable annot");
        fs::write(&annot_path, json).map_err(|e| Error::io(&annot_path, e))?;

        entries.push(ManifestEntry {
            video_dir: video_rel,
            label,
            split: split.to_string(),
        });
    }

    let manifest_path = out_dir.join("manifest.json");
    let json = serde_json::to_string_pretty(&entries).expect("serializable manifest");
    fs::write(&manifest_path, json).map_err(|e| Error::io(&manifest_path, e))?;

    load_manifest(&manifest_path)
}

/// Loads a single video directory (frames/ plus annot.json) outside any
/// manifest, for the pose and CAM visualization commands.
pub fn load_video_dir(dir: &Path) -> Result<VideoRecord> {
    let annot_path = dir.join("annot.json");
    let json = fs::read_to_string(&annot_path).map_err(|e| Error::io(&annot_path, e))?;
    let annot: VideoAnnot = serde_json::from_str(&json).map_err(|e| Error::json(&annot_path, e))?;
    for f in 0..annot.boxes.len() {
        let fp = dir.join("frames").join(format!("{f:06}.png"));
        if !fp.is_file() {
            return Err(Error::MissingFrame(fp));
        }
    }
    let first = dir.join("frames").join("000000.png");
    let (w, h) = image::image_dimensions(&first).map_err(|_| Error::MissingFrame(first.clone()))?;
    let record = VideoRecord {
        dir: dir.to_path_buf(),
        label: annot.label,
        split: String::new(),
        frame_w: w as f64,
        frame_h: h as f64,
        boxes: annot
            .boxes
            .iter()
            .map(|b| (BBox { x0: b[0], y0: b[1], x1: b[2], y1: b[3] }, b[4]))
            .collect(),
        keypoints: annot
            .keypoints
            .iter()
            .map(|frame| {
                frame
                    .iter()
                    .map(|k| Keypoint::new(k[0], k[1], k[2] != 0.0))
                    .collect()
            })
            .collect(),
    };
    record.validate()?;
    Ok(record)
}

/// Loads and validates a dataset manifest. Every record is checked:
/// frames must exist, boxes must be valid, visible keypoints must be
/// finite and inside the frame.
pub fn load_manifest(manifest_path: &Path) -> Result<Dataset> {
    let json = fs::read_to_string(manifest_path).map_err(|e| Error::io(manifest_path, e))?;
    let entries: Vec<ManifestEntry> =
        serde_json::from_str(&json).map_err(|e| Error::json(manifest_path, e))?;
    let root = manifest_path
        .parent()
        .unwrap_or_else(|| Path::new("."))
        .to_path_buf();

    let mut records = Vec::with_capacity(entries.len());
    let mut num_classes = 0usize;
    let mut num_keypoints = 0usize;
    for entry in &entries {
        let dir = root.join(&entry.video_dir);
        let annot_path = dir.join("annot.json");
        let json = fs::read_to_string(&annot_path).map_err(|e| Error::io(&annot_path, e))?;
        let annot: VideoAnnot =
            serde_json::from_str(&json).map_err(|e| Error::json(&annot_path, e))?;
        if annot.label != entry.label {
            return Err(Error::Manifest(format!(
                "{}: annot label {} disagrees with manifest label {}",
                dir.display(),
                annot.label,
                entry.label
            )));
        }
        for f in 0..annot.boxes.len() {
            let fp = dir.join("frames").join(format!("{f:06}.png"));
            if !fp.is_file() {
                return Err(Error::MissingFrame(fp));
            }
        }
        let first = dir.join("frames").join("000000.png");
        let (w, h) = image::image_dimensions(&first).map_err(|_| Error::MissingFrame(first.clone()))?;

        let boxes = annot
            .boxes
            .iter()
            .map(|b| (BBox { x0: b[0], y0: b[1], x1: b[2], y1: b[3] }, b[4]))
            .collect();
        let keypoints = annot
            .keypoints
            .iter()
            .map(|frame| {
                frame
                    .iter()
                    .map(|k| Keypoint::new(k[0], k[1], k[2] != 0.0))
                    .collect()
            })
            .collect();
        let record = VideoRecord {
            dir,
            label: entry.label,
            split: entry.split.clone(),
            frame_w: w as f64,
            frame_h: h as f64,
            boxes,
            keypoints,
        };
        record.validate()?;
        num_classes = num_classes.max(entry.label + 1);
        num_keypoints = num_keypoints.max(record.keypoints[0].len());
        records.push(record);
    }
    if !records.is_empty() {
        let k = records[0].keypoints[0].len();
        if records.iter().any(|r| r.keypoints[0].len() != k) {
            return Err(Error::Manifest("inconsistent keypoint counts across videos".into()));
        }
    } else {
        num_keypoints = NUM_KEYPOINTS;
    }
    Ok(Dataset {
        root,
        manifest_path: manifest_path.to_path_buf(),
        records,
        num_classes,
        num_keypoints,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg(bias: BiasMode, seed: u64) -> SynthConfig {
        SynthConfig {
            num_videos: 10,
            train_frac: 0.8,
            num_classes: 4,
            frames: 6,
            frame_w: 160,
            frame_h: 120,
            bias_mode: bias,
            seed,
        }
    }

    #[test]
    fn generation_is_deterministic_per_seed() {
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        generate_dataset(&small_cfg(BiasMode::None, 11), d1.path()).unwrap();
        generate_dataset(&small_cfg(BiasMode::None, 11), d2.path()).unwrap();
        let a = fs::read(d1.path().join("manifest.json")).unwrap();
        let b = fs::read(d2.path().join("manifest.json")).unwrap();
        assert_eq!(a, b);
        let a = fs::read(d1.path().join("videos/0003/annot.json")).unwrap();
        let b = fs::read(d2.path().join("videos/0003/annot.json")).unwrap();
        assert_eq!(a, b);
        let a = fs::read(d1.path().join("videos/0003/frames/000002.png")).unwrap();
        let b = fs::read(d2.path().join("videos/0003/frames/000002.png")).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn keypoints_lie_inside_detection_boxes() {
        let dir = tempfile::tempdir().unwrap();
        let ds = generate_dataset(&small_cfg(BiasMode::Scene, 3), dir.path()).unwrap();
        for record in &ds.records {
            for (frame_kps, (bbox, _)) in record.keypoints.iter().zip(record.boxes.iter()) {
                for kp in frame_kps {
                    assert!(bbox.contains(kp.x, kp.y), "{:?} outside {:?}", kp, bbox);
                }
            }
        }
    }

    #[test]
    fn splits_are_class_balanced() {
        let dir = tempfile::tempdir().unwrap();
        let ds = generate_dataset(&small_cfg(BiasMode::None, 5), dir.path()).unwrap();
        for split in ["train", "test"] {
            let counts = ds.class_counts(split);
            let lo = counts.iter().min().unwrap();
            let hi = counts.iter().max().unwrap();
            assert!(hi - lo <= 1, "{split}: {counts:?}");
        }
    }

    #[test]
    fn keypoint_motion_is_smooth() {
        let dir = tempfile::tempdir().unwrap();
        let ds = generate_dataset(&small_cfg(BiasMode::None, 9), dir.path()).unwrap();
        for record in &ds.records {
            let diag = record.frame_w.hypot(record.frame_h);
            for w in record.keypoints.windows(2) {
                for (a, b) in w[0].iter().zip(w[1].iter()) {
                    let step = (a.x - b.x).hypot(a.y - b.y);
                    assert!(step < 0.1 * diag, "step {step} vs diag {diag}");
                }
            }
        }
    }

    #[test]
    fn scene_and_swapped_share_trajectories_but_differ_in_pixels() {
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        let a = generate_dataset(&small_cfg(BiasMode::Scene, 21), d1.path()).unwrap();
        let b = generate_dataset(&small_cfg(BiasMode::SceneSwapped, 21), d2.path()).unwrap();
        let annot_a = fs::read(d1.path().join("videos/0001/annot.json")).unwrap();
        let annot_b = fs::read(d2.path().join("videos/0001/annot.json")).unwrap();
        assert_eq!(annot_a, annot_b, "identical trajectories and boxes");
        let fa = a.records[1].load_frame(0).unwrap();
        let fb = b.records[1].load_frame(0).unwrap();
        assert_ne!(fa, fb, "different background objects");
    }

    #[test]
    fn scene_mapping_is_bijection_and_swap_is_cyclic_shift() {
        let n = 4;
        let scene: Vec<usize> = (0..n)
            .map(|l| scene_class_for(l, BiasMode::Scene, n).unwrap())
            .collect();
        let mut sorted = scene.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..n).collect::<Vec<_>>());
        for l in 0..n {
            let swapped = scene_class_for(l, BiasMode::SceneSwapped, n).unwrap();
            assert_eq!(swapped, scene_class_for((l + 1) % n, BiasMode::Scene, n).unwrap());
        }
        assert!(scene_class_for(0, BiasMode::None, n).is_none());
    }

    #[test]
    fn scene_object_stays_clear_of_person_crops() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SynthConfig {
            num_videos: 12,
            ..small_cfg(BiasMode::Scene, 33)
        };
        let ds = generate_dataset(&cfg, dir.path()).unwrap();
        for record in &ds.records {
            let merged = record.merged_box(0.99).unwrap();
            let square =
                crate::geometry::expand_to_aspect(&merged, record.frame_w, record.frame_h);
            // The scene object's color never shows inside the person crop:
            // check a grid of pixels inside the square crop against the
            // saturated object palette.
            let frame = record.load_frame(0).unwrap();
            for gy in 0..16 {
                for gx in 0..16 {
                    let x = square.x0 + (gx as f64 + 0.5) / 16.0 * square.width();
                    let y = square.y0 + (gy as f64 + 0.5) / 16.0 * square.height();
                    let p = frame.get_pixel(
                        (x as u32).min(frame.width() - 1),
                        (y as u32).min(frame.height() - 1),
                    );
                    let [r, g, b] = p.0;
                    let maxc = r.max(g).max(b) as i32;
                    let minc = r.min(g).min(b) as i32;
                    assert!(
                        maxc - minc < 60,
                        "saturated object pixel ({r},{g},{b}) inside crop of {}",
                        record.dir.display()
                    );
                }
            }
        }
    }

    #[test]
    fn load_reports_missing_frame_with_path() {
        let dir = tempfile::tempdir().unwrap();
        let ds = generate_dataset(&small_cfg(BiasMode::None, 2), dir.path()).unwrap();
        let victim = ds.records[0].frame_path(1);
        fs::remove_file(&victim).unwrap();
        let err = load_manifest(&ds.manifest_path).unwrap_err();
        assert!(err.to_string().contains("000001.png"), "{err}");
    }

    #[test]
    fn empty_manifest_loads_empty_dataset() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.json");
        fs::write(&path, "[]").unwrap();
        let ds = load_manifest(&path).unwrap();
        assert!(ds.records.is_empty());
    }

    #[test]
    fn invalid_config_rejected() {
        let mut cfg = small_cfg(BiasMode::None, 0);
        cfg.num_classes = 1;
        assert!(cfg.validate().is_err());
        let mut cfg = small_cfg(BiasMode::None, 0);
        cfg.num_classes = 99;
        assert!(cfg.validate().is_err());
    }
}
