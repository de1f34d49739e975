//! Box arithmetic, person cropping, clip sampling and keypoint-aware
//! augmentation.
//!
//! Coordinate conventions used throughout the crate:
//!
//! * Frame and crop coordinates are continuous, with the image covering
//!   `[0, w] x [0, h]`. The pixel at row `i`, column `j` has its center at
//!   `(j + 0.5, i + 0.5)`.
//! * A crop of `bbox` resized to `out_w x out_h` maps a point `(x, y)` in
//!   frame coordinates to `((x - x0) * out_w / (x1 - x0), ...)`.

use image::RgbImage;
use rand::Rng;

use crate::error::{Error, Result};

/// Axis-aligned person region in frame pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl BBox {
    pub fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Result<Self> {
        let b = BBox { x0, y0, x1, y1 };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        let vals = [self.x0, self.y0, self.x1, self.y1];
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidBox(format!("non-finite coordinate: {self:?}")));
        }
        if self.x0 >= self.x1 || self.y0 >= self.y1 {
            return Err(Error::InvalidBox(format!("empty extent: {self:?}")));
        }
        Ok(())
    }

    pub fn width(&self) -> f64 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> f64 {
        self.y1 - self.y0
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.x0 + self.x1) / 2.0, (self.y0 + self.y1) / 2.0)
    }

    /// Clamps the box into `[0, frame_w] x [0, frame_h]`. May produce a
    /// degenerate box if the input lies entirely outside the frame.
    pub fn clamp_to_frame(&self, frame_w: f64, frame_h: f64) -> BBox {
        BBox {
            x0: self.x0.clamp(0.0, frame_w),
            y0: self.y0.clamp(0.0, frame_h),
            x1: self.x1.clamp(0.0, frame_w),
            y1: self.y1.clamp(0.0, frame_h),
        }
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x0 && x <= self.x1 && y >= self.y0 && y <= self.y1
    }
}

/// A 2D keypoint in crop (or frame) pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Keypoint {
    pub x: f64,
    pub y: f64,
    pub visible: bool,
}

impl Keypoint {
    pub fn new(x: f64, y: f64, visible: bool) -> Self {
        Keypoint { x, y, visible }
    }
}

/// Which frames of a video make up one clip.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ClipSpec {
    /// Number of frames in the clip.
    pub len: usize,
    /// Frames between consecutive samples.
    pub stride: usize,
    /// Index of the first frame.
    pub start: usize,
}

impl ClipSpec {
    pub fn new(len: usize, stride: usize, start: usize) -> Result<Self> {
        if len < 1 || stride < 1 {
            return Err(Error::InvalidInput(format!(
                "clip length and stride must be >= 1, got len={len} stride={stride}"
            )));
        }
        Ok(ClipSpec { len, stride, start })
    }

    /// Number of source frames the clip spans: `(len - 1) * stride + 1`.
    pub fn span(&self) -> usize {
        (self.len - 1) * self.stride + 1
    }
}

/// Componentwise min/max envelope of all boxes, clamped to the frame.
/// An empty list falls back to the full frame.
pub fn merge_boxes(boxes: &[BBox], frame_w: f64, frame_h: f64) -> Result<BBox> {
    if boxes.is_empty() {
        return BBox::new(0.0, 0.0, frame_w, frame_h);
    }
    let mut out = boxes[0];
    out.validate()?;
    for b in &boxes[1..] {
        b.validate()?;
        out.x0 = out.x0.min(b.x0);
        out.y0 = out.y0.min(b.y0);
        out.x1 = out.x1.max(b.x1);
        out.y1 = out.y1.max(b.y1);
    }
    Ok(out.clamp_to_frame(frame_w, frame_h))
}

/// Symmetric extension of the shorter side about the box center until the
/// box is square. No clamping; `|width - height| < 1e-6` always holds on
/// the result.
pub fn expand_to_square_unclamped(bbox: &BBox) -> BBox {
    let w = bbox.width();
    let h = bbox.height();
    let mut out = *bbox;
    if w < h {
        let pad = (h - w) / 2.0;
        out.x0 -= pad;
        out.x1 += pad;
    } else if h < w {
        let pad = (w - h) / 2.0;
        out.y0 -= pad;
        out.y1 += pad;
    }
    out
}

/// Extends the shorter side of `bbox` symmetrically about its center until
/// height equals width, then clamps to the frame. Clamping at frame edges
/// may break squareness.
pub fn expand_to_aspect(bbox: &BBox, frame_w: f64, frame_h: f64) -> BBox {
    expand_to_square_unclamped(bbox).clamp_to_frame(frame_w, frame_h)
}

/// Randomly jitters box center and size, then clamps to the frame.
///
/// Exactly four `f64` draws `u_i = rng.gen::<f64>() in [0, 1)` are consumed,
/// in this order:
///
/// 1. `dx = (2 u_1 - 1) * max_center_frac * width`
/// 2. `dy = (2 u_2 - 1) * max_center_frac * height`
/// 3. `sw = 1 + (2 u_3 - 1) * max_scale_frac`
/// 4. `sh = 1 + (2 u_4 - 1) * max_scale_frac`
pub fn jitter_box<R: Rng>(
    bbox: &BBox,
    rng: &mut R,
    max_center_frac: f64,
    max_scale_frac: f64,
    frame_w: f64,
    frame_h: f64,
) -> Result<BBox> {
    if !(0.0..1.0).contains(&max_center_frac) || !(0.0..1.0).contains(&max_scale_frac) {
        return Err(Error::InvalidInput(format!(
            "jitter fractions must lie in [0, 1), got ({max_center_frac}, {max_scale_frac})"
        )));
    }
    let w = bbox.width();
    let h = bbox.height();
    let (cx, cy) = bbox.center();
    let dx = (2.0 * rng.gen::<f64>() - 1.0) * max_center_frac * w;
    let dy = (2.0 * rng.gen::<f64>() - 1.0) * max_center_frac * h;
    let sw = 1.0 + (2.0 * rng.gen::<f64>() - 1.0) * max_scale_frac;
    let sh = 1.0 + (2.0 * rng.gen::<f64>() - 1.0) * max_scale_frac;
    let nw = w * sw;
    let nh = h * sh;
    let out = BBox {
        x0: cx + dx - nw / 2.0,
        y0: cy + dy - nh / 2.0,
        x1: cx + dx + nw / 2.0,
        y1: cy + dy + nh / 2.0,
    };
    Ok(out.clamp_to_frame(frame_w, frame_h))
}

/// The affine transform taking frame coordinates into crop coordinates for
/// a `bbox` region resized to `out_w x out_h`.
#[derive(Debug, Clone, Copy)]
pub struct CropTransform {
    pub x0: f64,
    pub y0: f64,
    /// Frame pixels per crop pixel, horizontally.
    pub sx: f64,
    /// Frame pixels per crop pixel, vertically.
    pub sy: f64,
    pub out_w: f64,
    pub out_h: f64,
}

impl CropTransform {
    pub fn new(bbox: &BBox, out_w: usize, out_h: usize) -> Result<Self> {
        bbox.validate()?;
        if bbox.area() <= 0.0 {
            return Err(Error::InvalidBox(format!("degenerate crop box {bbox:?}")));
        }
        Ok(CropTransform {
            x0: bbox.x0,
            y0: bbox.y0,
            sx: bbox.width() / out_w as f64,
            sy: bbox.height() / out_h as f64,
            out_w: out_w as f64,
            out_h: out_h as f64,
        })
    }

    pub fn frame_to_crop(&self, x: f64, y: f64) -> (f64, f64) {
        ((x - self.x0) / self.sx, (y - self.y0) / self.sy)
    }

    pub fn crop_to_frame(&self, x: f64, y: f64) -> (f64, f64) {
        (self.x0 + x * self.sx, self.y0 + y * self.sy)
    }

    pub fn apply_keypoint(&self, kp: &Keypoint) -> Keypoint {
        let (x, y) = self.frame_to_crop(kp.x, kp.y);
        let inside = x >= 0.0 && x <= self.out_w && y >= 0.0 && y <= self.out_h;
        Keypoint::new(x, y, kp.visible && inside)
    }
}

fn bilinear_sample(frame: &RgbImage, fx: f64, fy: f64) -> [f64; 3] {
    let (w, h) = (frame.width() as i64, frame.height() as i64);
    let u = fx - 0.5;
    let v = fy - 0.5;
    let x_lo = u.floor() as i64;
    let y_lo = v.floor() as i64;
    let tx = u - x_lo as f64;
    let ty = v - y_lo as f64;
    let xs = [x_lo.clamp(0, w - 1) as u32, (x_lo + 1).clamp(0, w - 1) as u32];
    let ys = [y_lo.clamp(0, h - 1) as u32, (y_lo + 1).clamp(0, h - 1) as u32];
    let wx = [1.0 - tx, tx];
    let wy = [1.0 - ty, ty];
    let mut out = [0.0; 3];
    for (iy, &yy) in ys.iter().enumerate() {
        for (ix, &xx) in xs.iter().enumerate() {
            let p = frame.get_pixel(xx, yy);
            let wgt = wx[ix] * wy[iy];
            for c in 0..3 {
                out[c] += wgt * p.0[c] as f64;
            }
        }
    }
    out
}

/// Bilinear resample of the box region to `out_w x out_h`; keypoints are
/// mapped by the same affine transform, and keypoints falling outside the
/// crop are marked not visible.
pub fn crop_resize(
    frame: &RgbImage,
    bbox: &BBox,
    out_w: usize,
    out_h: usize,
    keypoints: Option<&[Keypoint]>,
) -> Result<(RgbImage, Vec<Keypoint>)> {
    let t = CropTransform::new(bbox, out_w, out_h)?;
    let mut out = RgbImage::new(out_w as u32, out_h as u32);
    for i in 0..out_h {
        let fy = t.y0 + (i as f64 + 0.5) * t.sy;
        for j in 0..out_w {
            let fx = t.x0 + (j as f64 + 0.5) * t.sx;
            let v = bilinear_sample(frame, fx, fy);
            let px = [
                (v[0] + 0.5).clamp(0.0, 255.0) as u8,
                (v[1] + 0.5).clamp(0.0, 255.0) as u8,
                (v[2] + 0.5).clamp(0.0, 255.0) as u8,
            ];
            out.put_pixel(j as u32, i as u32, image::Rgb(px));
        }
    }
    let kps = keypoints
        .map(|ks| ks.iter().map(|k| t.apply_keypoint(k)).collect())
        .unwrap_or_default();
    Ok((out, kps))
}

/// Mirrors keypoints horizontally within a crop of width `crop_w` and swaps
/// the paired left/right joints.
pub fn mirror_keypoints(kps: &[Keypoint], crop_w: f64, pairs: &[(usize, usize)]) -> Vec<Keypoint> {
    let mut out: Vec<Keypoint> = kps
        .iter()
        .map(|k| Keypoint::new(crop_w - k.x, k.y, k.visible))
        .collect();
    for &(a, b) in pairs {
        if a < out.len() && b < out.len() {
            out.swap(a, b);
        }
    }
    out
}

/// Frame indices `[start + i * stride]` for `i in 0..len`, each clamped to
/// `num_frames - 1` (repeat-last padding for short videos).
pub fn sample_clip(num_frames: usize, spec: &ClipSpec) -> Vec<usize> {
    assert!(num_frames >= 1, "video must have at least one frame");
    (0..spec.len)
        .map(|i| (spec.start + i * spec.stride).min(num_frames - 1))
        .collect()
}

/// Evenly spaced clip start frames for test-time evaluation:
/// `start_i = floor(i * (num_frames - span) / (num_clips - 1))`, clamped
/// at zero for videos shorter than one clip span. A single clip starts at
/// the centered position.
pub fn even_clip_starts(num_frames: usize, len: usize, stride: usize, num_clips: usize) -> Vec<usize> {
    assert!(num_clips >= 1);
    let span = (len - 1) * stride + 1;
    let avail = num_frames.saturating_sub(span);
    if num_clips == 1 {
        return vec![avail / 2];
    }
    (0..num_clips)
        .map(|i| i * avail / (num_clips - 1))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn b(x0: f64, y0: f64, x1: f64, y1: f64) -> BBox {
        BBox::new(x0, y0, x1, y1).unwrap()
    }

    #[test]
    fn merge_single_box_is_identity() {
        let m = merge_boxes(&[b(10.0, 10.0, 50.0, 50.0)], 320.0, 240.0).unwrap();
        assert_eq!(m, b(10.0, 10.0, 50.0, 50.0));
    }

    #[test]
    fn merge_is_componentwise_envelope() {
        let m = merge_boxes(
            &[b(10.0, 10.0, 50.0, 50.0), b(40.0, 20.0, 90.0, 80.0)],
            320.0,
            240.0,
        )
        .unwrap();
        assert_eq!(m, b(10.0, 10.0, 90.0, 80.0));
    }

    #[test]
    fn merge_empty_falls_back_to_full_frame() {
        let m = merge_boxes(&[], 320.0, 240.0).unwrap();
        assert_eq!(m, b(0.0, 0.0, 320.0, 240.0));
    }

    #[test]
    fn merge_rejects_non_finite() {
        let bad = BBox {
            x0: f64::NAN,
            y0: 0.0,
            x1: 1.0,
            y1: 1.0,
        };
        assert!(merge_boxes(&[bad], 320.0, 240.0).is_err());
    }

    #[test]
    fn merge_is_idempotent_and_order_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let boxes: Vec<BBox> = (0..5)
                .map(|_| {
                    let x0 = rng.gen::<f64>() * 200.0;
                    let y0 = rng.gen::<f64>() * 150.0;
                    b(x0, y0, x0 + 1.0 + rng.gen::<f64>() * 100.0, y0 + 1.0 + rng.gen::<f64>() * 80.0)
                })
                .collect();
            let m = merge_boxes(&boxes, 320.0, 240.0).unwrap();
            let mut rev = boxes.clone();
            rev.reverse();
            assert_eq!(m, merge_boxes(&rev, 320.0, 240.0).unwrap());
            assert_eq!(m, merge_boxes(&[m], 320.0, 240.0).unwrap());
        }
    }

    #[test]
    fn expand_square_box_unchanged() {
        let e = expand_to_aspect(&b(0.0, 0.0, 100.0, 100.0), 200.0, 200.0);
        assert_eq!(e, b(0.0, 0.0, 100.0, 100.0));
    }

    #[test]
    fn expand_extends_height_then_clamps() {
        let e = expand_to_aspect(&b(50.0, 0.0, 150.0, 50.0), 200.0, 200.0);
        assert_eq!(e, b(50.0, 0.0, 150.0, 75.0));
    }

    #[test]
    fn expand_extends_width_then_clamps() {
        let e = expand_to_aspect(&b(0.0, 0.0, 50.0, 100.0), 100.0, 100.0);
        assert_eq!(e, b(0.0, 0.0, 75.0, 100.0));
    }

    #[test]
    fn expand_unclamped_is_square() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let x0 = rng.gen::<f64>() * 100.0;
            let y0 = rng.gen::<f64>() * 100.0;
            let bx = b(x0, y0, x0 + 1.0 + rng.gen::<f64>() * 50.0, y0 + 1.0 + rng.gen::<f64>() * 50.0);
            let e = expand_to_square_unclamped(&bx);
            assert!((e.width() - e.height()).abs() < 1e-6);
        }
    }

    #[test]
    fn jitter_zero_fractions_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = jitter_box(&b(10.0, 20.0, 110.0, 170.0), &mut rng, 0.0, 0.0, 320.0, 240.0).unwrap();
        assert_eq!(out, b(10.0, 20.0, 110.0, 170.0));
    }

    #[test]
    fn jitter_matches_documented_draw_sequence() {
        // Independent replay of the four documented uniform draws.
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let u: Vec<f64> = (0..4).map(|_| rng.gen::<f64>()).collect();
        let (w, h, cx, cy) = (100.0, 100.0, 50.0, 50.0);
        let dx = (2.0 * u[0] - 1.0) * 0.1 * w;
        let dy = (2.0 * u[1] - 1.0) * 0.1 * h;
        let nw = w * (1.0 + (2.0 * u[2] - 1.0) * 0.1);
        let nh = h * (1.0 + (2.0 * u[3] - 1.0) * 0.1);
        let expected = BBox {
            x0: (cx + dx - nw / 2.0).clamp(0.0, 320.0),
            y0: (cy + dy - nh / 2.0).clamp(0.0, 240.0),
            x1: (cx + dx + nw / 2.0).clamp(0.0, 320.0),
            y1: (cy + dy + nh / 2.0).clamp(0.0, 240.0),
        };

        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = jitter_box(&b(0.0, 0.0, 100.0, 100.0), &mut rng, 0.1, 0.1, 320.0, 240.0).unwrap();
        assert_eq!(out, expected);
    }

    #[test]
    fn jitter_is_deterministic_per_seed() {
        let bx = b(5.0, 5.0, 90.0, 120.0);
        let mut r1 = ChaCha8Rng::seed_from_u64(42);
        let mut r2 = ChaCha8Rng::seed_from_u64(42);
        let a = jitter_box(&bx, &mut r1, 0.2, 0.2, 320.0, 240.0).unwrap();
        let c = jitter_box(&bx, &mut r2, 0.2, 0.2, 320.0, 240.0).unwrap();
        assert_eq!(a, c);
    }

    #[test]
    fn crop_identity_preserves_frame_and_keypoints() {
        let mut frame = RgbImage::new(8, 6);
        for (i, p) in frame.pixels_mut().enumerate() {
            p.0 = [(i % 251) as u8, (i * 7 % 251) as u8, (i * 13 % 251) as u8];
        }
        let kps = [Keypoint::new(3.5, 2.0, true)];
        let (out, tkps) =
            crop_resize(&frame, &b(0.0, 0.0, 8.0, 6.0), 8, 6, Some(&kps)).unwrap();
        assert_eq!(out, frame);
        assert!((tkps[0].x - 3.5).abs() < 1e-12 && (tkps[0].y - 2.0).abs() < 1e-12);
        assert!(tkps[0].visible);
    }

    #[test]
    fn crop_uniform_scale_doubles_keypoint() {
        let frame = RgbImage::new(128, 128);
        let kps = [Keypoint::new(56.0, 56.0, true)];
        let (_, tkps) =
            crop_resize(&frame, &b(0.0, 0.0, 112.0, 112.0), 224, 224, Some(&kps)).unwrap();
        assert!((tkps[0].x - 112.0).abs() < 1e-9);
        assert!((tkps[0].y - 112.0).abs() < 1e-9);
    }

    #[test]
    fn keypoint_outside_crop_marked_invisible() {
        let frame = RgbImage::new(128, 128);
        let kps = [Keypoint::new(100.0, 100.0, true)];
        let (_, tkps) =
            crop_resize(&frame, &b(0.0, 0.0, 50.0, 50.0), 64, 64, Some(&kps)).unwrap();
        assert!(!tkps[0].visible);
    }

    #[test]
    fn crop_rejects_degenerate_box() {
        let frame = RgbImage::new(8, 8);
        let degenerate = BBox {
            x0: 2.0,
            y0: 2.0,
            x1: 2.0,
            y1: 5.0,
        };
        assert!(crop_resize(&frame, &degenerate, 4, 4, None).is_err());
    }

    #[test]
    fn crop_transform_round_trips_keypoints() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let bx = b(13.0, 27.0, 190.5, 201.25);
        let t = CropTransform::new(&bx, 224, 224).unwrap();
        for _ in 0..200 {
            let x = 13.0 + rng.gen::<f64>() * 170.0;
            let y = 27.0 + rng.gen::<f64>() * 170.0;
            let (cx, cy) = t.frame_to_crop(x, y);
            let (bx2, by2) = t.crop_to_frame(cx, cy);
            assert!((bx2 - x).abs() < 1e-4 && (by2 - y).abs() < 1e-4);
        }
    }

    #[test]
    fn sample_clip_basic_stride() {
        let spec = ClipSpec::new(8, 8, 0).unwrap();
        assert_eq!(sample_clip(100, &spec), vec![0, 8, 16, 24, 32, 40, 48, 56]);
    }

    #[test]
    fn sample_clip_repeats_last_frame_for_short_videos() {
        let spec = ClipSpec::new(8, 1, 0).unwrap();
        assert_eq!(sample_clip(5, &spec), vec![0, 1, 2, 3, 4, 4, 4, 4]);
    }

    #[test]
    fn sample_clip_is_monotone_and_in_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let num_frames = 1 + rng.gen_range(0..64usize);
            let spec = ClipSpec::new(1 + rng.gen_range(0..12usize), 1 + rng.gen_range(0..8usize), rng.gen_range(0..32usize)).unwrap();
            let idx = sample_clip(num_frames, &spec);
            assert!(idx.windows(2).all(|w| w[0] <= w[1]));
            assert!(idx.iter().all(|&i| i < num_frames));
        }
    }

    #[test]
    fn even_starts_match_formula() {
        let starts = even_clip_starts(100, 8, 8, 10);
        let expected: Vec<usize> = (0..10).map(|i| i * (100 - 57) / 9).collect();
        assert_eq!(starts, expected);
    }

    #[test]
    fn even_starts_clamp_for_short_videos() {
        assert_eq!(even_clip_starts(5, 8, 8, 10), vec![0; 10]);
    }

    #[test]
    fn mirror_swaps_pairs_and_flips_x() {
        let kps = vec![
            Keypoint::new(10.0, 5.0, true),
            Keypoint::new(20.0, 6.0, true),
            Keypoint::new(30.0, 7.0, false),
        ];
        let out = mirror_keypoints(&kps, 100.0, &[(1, 2)]);
        assert_eq!(out[0], Keypoint::new(90.0, 5.0, true));
        assert_eq!(out[1], Keypoint::new(70.0, 7.0, false));
        assert_eq!(out[2], Keypoint::new(80.0, 6.0, true));
    }
}
