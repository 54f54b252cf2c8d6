//! Minimal raster drawing for diagnostic overlays.

use eventfuse::fusion::{FusedObject, Provenance};
use eventfuse::geometry::{Affine, Point2, Rect};
use eventfuse::model::{EdgeCloud, RgbImage};

pub const GREEN: [u8; 3] = [0, 210, 0];
pub const BLUE: [u8; 3] = [40, 90, 255];
pub const RED: [u8; 3] = [235, 20, 20];

/// Detected by both sensors, RGB only, or event camera only.
pub fn provenance_color(p: Provenance) -> [u8; 3] {
    match p {
        Provenance::Both => GREEN,
        Provenance::RgbOnly => BLUE,
        Provenance::EbOnly => RED,
    }
}

pub fn dim(img: &mut RgbImage, factor: f64) {
    for v in img.data_mut() {
        *v = (*v as f64 * factor).round() as u8;
    }
}

fn put(img: &mut RgbImage, x: i64, y: i64, c: [u8; 3]) {
    if x >= 0 && y >= 0 && (x as usize) < img.width() && (y as usize) < img.height() {
        img.set(x as usize, y as usize, c);
    }
}

/// Recolors the 3x3 neighborhood of `(x, y)` from each pixel's current color.
fn dot(img: &mut RgbImage, x: i64, y: i64, color: impl Fn([u8; 3]) -> [u8; 3]) {
    for yy in y - 1..=y + 1 {
        for xx in x - 1..=x + 1 {
            if xx >= 0 && yy >= 0 && (xx as usize) < img.width() && (yy as usize) < img.height() {
                let c = color(img.get(xx as usize, yy as usize));
                img.set(xx as usize, yy as usize, c);
            }
        }
    }
}

pub fn draw_rect(img: &mut RgbImage, r: &Rect<f64>, c: [u8; 3], thickness: i64) {
    let (x0, y0, x1, y1) = (r.x0.round() as i64, r.y0.round() as i64, r.x1.round() as i64, r.y1.round() as i64);
    for t in 0..thickness {
        for x in x0..=x1 {
            put(img, x, y0 + t, c);
            put(img, x, y1 - t, c);
        }
        for y in y0..=y1 {
            put(img, x0 + t, y, c);
            put(img, x1 - t, y, c);
        }
    }
}

const DIGITS: [[u8; 5]; 10] = [
    [0b111, 0b101, 0b101, 0b101, 0b111],
    [0b010, 0b110, 0b010, 0b010, 0b111],
    [0b111, 0b001, 0b111, 0b100, 0b111],
    [0b111, 0b001, 0b111, 0b001, 0b111],
    [0b101, 0b101, 0b111, 0b001, 0b001],
    [0b111, 0b100, 0b111, 0b001, 0b111],
    [0b111, 0b100, 0b111, 0b101, 0b111],
    [0b111, 0b001, 0b010, 0b010, 0b010],
    [0b111, 0b101, 0b111, 0b101, 0b111],
    [0b111, 0b101, 0b111, 0b001, 0b111],
];

/// Draws a decimal number with a 3x5 pixel font scaled by `scale`, top-left at `(x, y)`.
pub fn draw_number(img: &mut RgbImage, x: i64, y: i64, n: u64, c: [u8; 3], scale: i64) {
    for (i, ch) in n.to_string().bytes().enumerate() {
        let glyph = DIGITS[(ch - b'0') as usize];
        let ox = x + i as i64 * 4 * scale;
        for (row, bits) in glyph.iter().enumerate() {
            for col in 0..3 {
                if bits & (0b100 >> col) != 0 {
                    for dy in 0..scale {
                        for dx in 0..scale {
                            put(img, ox + col * scale + dx, y + row as i64 * scale + dy, c);
                        }
                    }
                }
            }
        }
    }
}

/// RGB motion edges in blue and warped event-camera edges in red; pixels hit
/// by both turn green.
pub fn calibration_overlay(rgb: &RgbImage, rgb_edges: Option<&EdgeCloud<f64>>, eb_edges: Option<&EdgeCloud<f64>>, t: &Affine<f64>) -> RgbImage {
    let mut img = rgb.clone();
    dim(&mut img, 0.5);
    if let Some(cloud) = rgb_edges {
        for p in &cloud.points {
            dot(&mut img, p.x.round() as i64, p.y.round() as i64, |_| BLUE);
        }
    }
    if let Some(cloud) = eb_edges {
        for p in &cloud.points {
            let q = t.apply(&Point2::new(p.x, p.y));
            dot(&mut img, q.x.round() as i64, q.y.round() as i64, |old| if old == BLUE || old == GREEN { GREEN } else { RED });
        }
    }
    img
}

/// Fused boxes colored by provenance, with track IDs when present.
pub fn fusion_overlay(rgb: &RgbImage, fused: &[FusedObject]) -> RgbImage {
    let mut img = rgb.clone();
    for f in fused {
        let r = f.detection.rect();
        let c = provenance_color(f.provenance);
        draw_rect(&mut img, &r, c, 3);
        if let Some(id) = f.track_id {
            draw_number(&mut img, r.x0.round() as i64 + 4, r.y0.round() as i64 + 6, id, c, 4);
        }
    }
    img
}
