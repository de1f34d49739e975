//! Skeleton and class-activation overlays written as PNG.

use image::{Rgb, RgbImage};
use ndarray::Array2;

use crate::posehead::DecodedPose;
use crate::skeleton::LIMBS;
use crate::synthdata::raster;

/// Draws the decoded skeleton over a crop: limbs as green lines, joints
/// as dots whose brightness tracks confidence.
pub fn render_pose_overlay(crop: &RgbImage, pose: &DecodedPose) -> RgbImage {
    let mut img = crop.clone();
    let max_conf = pose
        .confidence
        .iter()
        .cloned()
        .fold(f64::MIN, f64::max)
        .max(1e-6);
    for &(a, b) in LIMBS.iter() {
        if a < pose.points.len() && b < pose.points.len() {
            raster::draw_capsule(&mut img, pose.points[a], pose.points[b], 1.0, Rgb([40, 220, 70]));
        }
    }
    for (i, &(x, y)) in pose.points.iter().enumerate() {
        let c = (pose.confidence[i] / max_conf).clamp(0.0, 1.0);
        let v = (120.0 + 135.0 * c) as u8;
        raster::fill_disk(&mut img, x, y, 1.8, Rgb([v, 40, 40]));
    }
    img
}

/// Bilinear upsample of a normalized activation map to the crop size,
/// blended as a heat overlay.
pub fn render_cam_overlay(crop: &RgbImage, cam01: &Array2<f64>) -> RgbImage {
    let mut img = crop.clone();
    let (mh, mw) = cam01.dim();
    let (w, h) = (img.width(), img.height());
    let sx = mw as f64 / w as f64;
    let sy = mh as f64 / h as f64;
    for y in 0..h {
        for x in 0..w {
            let u = ((x as f64 + 0.5) * sx - 0.5).clamp(0.0, mw as f64 - 1.0);
            let v = ((y as f64 + 0.5) * sy - 0.5).clamp(0.0, mh as f64 - 1.0);
            let x0 = u.floor() as usize;
            let y0 = v.floor() as usize;
            let x1 = (x0 + 1).min(mw - 1);
            let y1 = (y0 + 1).min(mh - 1);
            let tx = u - x0 as f64;
            let ty = v - y0 as f64;
            let val = cam01[[y0, x0]] * (1.0 - tx) * (1.0 - ty)
                + cam01[[y0, x1]] * tx * (1.0 - ty)
                + cam01[[y1, x0]] * (1.0 - tx) * ty
                + cam01[[y1, x1]] * tx * ty;
            let heat = Rgb([255, (160.0 * (1.0 - val)) as u8, 0]);
            raster::blend_pixel(&mut img, x, y, heat, 0.45 * val);
        }
    }
    img
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overlays_keep_image_dimensions() {
        let crop = RgbImage::from_pixel(32, 24, Rgb([10, 10, 10]));
        let pose = DecodedPose {
            points: (0..17).map(|i| (i as f64 * 1.5, i as f64)).collect(),
            confidence: vec![0.5; 17],
        };
        let out = render_pose_overlay(&crop, &pose);
        assert_eq!((out.width(), out.height()), (32, 24));

        let cam = Array2::from_shape_fn((4, 4), |(i, j)| (i + j) as f64 / 6.0);
        let out = render_cam_overlay(&crop, &cam);
        assert_eq!((out.width(), out.height()), (32, 24));
        // Hot corner got blended toward red.
        assert!(out.get_pixel(31, 23).0[0] > 10);
    }
}
