//! Small image-processing kernels shared by both camera pipelines.

use crate::model::{BinaryMask, GrayImage};

/// 3x3 binary dilation; pixels outside the image are background.
pub fn dilate3(mask: &BinaryMask) -> BinaryMask {
    let (w, h) = mask.dims();
    let src = mask.data();
    // Separable: horizontal max, then vertical max.
    let mut horiz = vec![0u8; w * h];
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        for x in 0..w {
            let lo = x.saturating_sub(1);
            let hi = (x + 1).min(w - 1);
            horiz[y * w + x] = row[lo..=hi].iter().copied().max().unwrap_or(0);
        }
    }
    let mut out = vec![0u8; w * h];
    for y in 0..h {
        let lo = y.saturating_sub(1);
        let hi = (y + 1).min(h - 1);
        for x in 0..w {
            out[y * w + x] = (lo..=hi).map(|yy| horiz[yy * w + x]).max().unwrap_or(0);
        }
    }
    BinaryMask::from_raw_unchecked(w, h, out)
}

/// 3x3 median of a binary image; pixels outside the image count as background.
pub fn median3(mask: &BinaryMask) -> BinaryMask {
    let (w, h) = mask.dims();
    let src = mask.data();
    // Column sums of foreground over three rows, then a sliding horizontal window.
    let mut out = vec![0u8; w * h];
    let mut col = vec![0u8; w];
    for y in 0..h {
        for (x, c) in col.iter_mut().enumerate() {
            let mut n = 0u8;
            for yy in y.saturating_sub(1)..=(y + 1).min(h - 1) {
                n += (src[yy * w + x] == BinaryMask::ON) as u8;
            }
            *c = n;
        }
        for x in 0..w {
            let mut n = col[x];
            if x > 0 {
                n += col[x - 1];
            }
            if x + 1 < w {
                n += col[x + 1];
            }
            if n >= 5 {
                out[y * w + x] = BinaryMask::ON;
            }
        }
    }
    BinaryMask::from_raw_unchecked(w, h, out)
}

/// Separable convolution with a symmetric kernel and replicated borders, output in f32.
pub fn convolve_separable(img: &[f32], w: usize, h: usize, kernel: &[f32]) -> Vec<f32> {
    let r = kernel.len() / 2;
    let mut tmp = vec![0f32; w * h];
    for y in 0..h {
        let row = &img[y * w..(y + 1) * w];
        for x in 0..w {
            let mut acc = 0f32;
            for (k, &kv) in kernel.iter().enumerate() {
                let xx = (x + k).saturating_sub(r).min(w - 1);
                acc += kv * row[xx];
            }
            tmp[y * w + x] = acc;
        }
    }
    let mut out = vec![0f32; w * h];
    for y in 0..h {
        for (k, &kv) in kernel.iter().enumerate() {
            let yy = (y + k).saturating_sub(r).min(h - 1);
            let src = &tmp[yy * w..(yy + 1) * w];
            let dst = &mut out[y * w..(y + 1) * w];
            for (d, s) in dst.iter_mut().zip(src) {
                *d += kv * s;
            }
        }
    }
    out
}

/// Normalized 1-D Gaussian kernel of odd length `size`.
pub fn gaussian_kernel(size: usize, sigma: f32) -> Vec<f32> {
    let r = (size / 2) as i32;
    let mut k: Vec<f32> = (-r..=r)
        .map(|i| (-(i * i) as f32 / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f32 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

pub fn to_f32(img: &GrayImage) -> Vec<f32> {
    img.data().iter().map(|&v| v as f32).collect()
}

/// 3x3 Sobel derivatives with replicated borders.
pub fn sobel(img: &[f32], w: usize, h: usize) -> (Vec<f32>, Vec<f32>) {
    let mut gx = vec![0f32; w * h];
    let mut gy = vec![0f32; w * h];
    let at = |x: isize, y: isize| -> f32 {
        let xx = x.clamp(0, w as isize - 1) as usize;
        let yy = y.clamp(0, h as isize - 1) as usize;
        img[yy * w + xx]
    };
    for y in 0..h as isize {
        for x in 0..w as isize {
            let i = y as usize * w + x as usize;
            gx[i] = (at(x + 1, y - 1) + 2.0 * at(x + 1, y) + at(x + 1, y + 1))
                - (at(x - 1, y - 1) + 2.0 * at(x - 1, y) + at(x - 1, y + 1));
            gy[i] = (at(x - 1, y + 1) + 2.0 * at(x, y + 1) + at(x + 1, y + 1))
                - (at(x - 1, y - 1) + 2.0 * at(x, y - 1) + at(x + 1, y - 1));
        }
    }
    (gx, gy)
}
