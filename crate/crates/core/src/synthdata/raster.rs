//! Tiny deterministic raster helpers for the synthetic renderer and the
//! overlay writers. Everything clips to the image bounds and iterates
//! integer pixels over the shape's bounding box.

use image::{Rgb, RgbImage};

fn clip_range(lo: f64, hi: f64, max: u32) -> Option<(u32, u32)> {
    let a = lo.floor().max(0.0) as i64;
    let b = hi.ceil().min(max as f64 - 1.0) as i64;
    if b < a || b < 0 {
        return None;
    }
    Some((a.max(0) as u32, b as u32))
}

pub fn fill_rect(img: &mut RgbImage, x0: f64, y0: f64, x1: f64, y1: f64, color: Rgb<u8>) {
    let Some((xa, xb)) = clip_range(x0, x1, img.width()) else {
        return;
    };
    let Some((ya, yb)) = clip_range(y0, y1, img.height()) else {
        return;
    };
    for y in ya..=yb {
        for x in xa..=xb {
            img.put_pixel(x, y, color);
        }
    }
}

pub fn fill_disk(img: &mut RgbImage, cx: f64, cy: f64, r: f64, color: Rgb<u8>) {
    let Some((xa, xb)) = clip_range(cx - r, cx + r, img.width()) else {
        return;
    };
    let Some((ya, yb)) = clip_range(cy - r, cy + r, img.height()) else {
        return;
    };
    let r2 = r * r;
    for y in ya..=yb {
        for x in xa..=xb {
            let dx = x as f64 + 0.5 - cx;
            let dy = y as f64 + 0.5 - cy;
            if dx * dx + dy * dy <= r2 {
                img.put_pixel(x, y, color);
            }
        }
    }
}

pub fn fill_ring(img: &mut RgbImage, cx: f64, cy: f64, r_outer: f64, r_inner: f64, color: Rgb<u8>) {
    let Some((xa, xb)) = clip_range(cx - r_outer, cx + r_outer, img.width()) else {
        return;
    };
    let Some((ya, yb)) = clip_range(cy - r_outer, cy + r_outer, img.height()) else {
        return;
    };
    let ro2 = r_outer * r_outer;
    let ri2 = r_inner * r_inner;
    for y in ya..=yb {
        for x in xa..=xb {
            let dx = x as f64 + 0.5 - cx;
            let dy = y as f64 + 0.5 - cy;
            let d2 = dx * dx + dy * dy;
            if d2 <= ro2 && d2 >= ri2 {
                img.put_pixel(x, y, color);
            }
        }
    }
}

pub fn fill_triangle(
    img: &mut RgbImage,
    a: (f64, f64),
    b: (f64, f64),
    c: (f64, f64),
    color: Rgb<u8>,
) {
    let x_lo = a.0.min(b.0).min(c.0);
    let x_hi = a.0.max(b.0).max(c.0);
    let y_lo = a.1.min(b.1).min(c.1);
    let y_hi = a.1.max(b.1).max(c.1);
    let Some((xa, xb)) = clip_range(x_lo, x_hi, img.width()) else {
        return;
    };
    let Some((ya, yb)) = clip_range(y_lo, y_hi, img.height()) else {
        return;
    };
    let edge = |p: (f64, f64), q: (f64, f64), x: f64, y: f64| {
        (q.0 - p.0) * (y - p.1) - (q.1 - p.1) * (x - p.0)
    };
    for y in ya..=yb {
        for x in xa..=xb {
            let px = x as f64 + 0.5;
            let py = y as f64 + 0.5;
            let e0 = edge(a, b, px, py);
            let e1 = edge(b, c, px, py);
            let e2 = edge(c, a, px, py);
            if (e0 >= 0.0 && e1 >= 0.0 && e2 >= 0.0) || (e0 <= 0.0 && e1 <= 0.0 && e2 <= 0.0) {
                img.put_pixel(x, y, color);
            }
        }
    }
}

pub fn fill_cross(img: &mut RgbImage, cx: f64, cy: f64, half: f64, thick: f64, color: Rgb<u8>) {
    fill_rect(img, cx - half, cy - thick, cx + half, cy + thick, color);
    fill_rect(img, cx - thick, cy - half, cx + thick, cy + half, color);
}

/// Filled capsule: all pixels within `radius` of the segment `a..b`.
pub fn draw_capsule(
    img: &mut RgbImage,
    a: (f64, f64),
    b: (f64, f64),
    radius: f64,
    color: Rgb<u8>,
) {
    let x_lo = a.0.min(b.0) - radius;
    let x_hi = a.0.max(b.0) + radius;
    let y_lo = a.1.min(b.1) - radius;
    let y_hi = a.1.max(b.1) + radius;
    let Some((xa, xb)) = clip_range(x_lo, x_hi, img.width()) else {
        return;
    };
    let Some((ya, yb)) = clip_range(y_lo, y_hi, img.height()) else {
        return;
    };
    let vx = b.0 - a.0;
    let vy = b.1 - a.1;
    let len2 = vx * vx + vy * vy;
    let r2 = radius * radius;
    for y in ya..=yb {
        for x in xa..=xb {
            let px = x as f64 + 0.5;
            let py = y as f64 + 0.5;
            let t = if len2 > 0.0 {
                (((px - a.0) * vx + (py - a.1) * vy) / len2).clamp(0.0, 1.0)
            } else {
                0.0
            };
            let dx = px - (a.0 + t * vx);
            let dy = py - (a.1 + t * vy);
            if dx * dx + dy * dy <= r2 {
                img.put_pixel(x, y, color);
            }
        }
    }
}

/// Alpha-blends `color` over the pixel at integer coordinates.
pub fn blend_pixel(img: &mut RgbImage, x: u32, y: u32, color: Rgb<u8>, alpha: f64) {
    if x >= img.width() || y >= img.height() {
        return;
    }
    let p = img.get_pixel_mut(x, y);
    for c in 0..3 {
        let v = p.0[c] as f64 * (1.0 - alpha) + color.0[c] as f64 * alpha;
        p.0[c] = (v + 0.5).clamp(0.0, 255.0) as u8;
    }
}
