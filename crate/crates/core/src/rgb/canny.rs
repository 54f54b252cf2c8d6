use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imgproc::{convolve_separable, gaussian_kernel, sobel, to_f32};
use crate::model::{BinaryMask, GrayImage};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CannyConfig {
    pub low: f32,
    pub high: f32,
}

impl Default for CannyConfig {
    fn default() -> Self {
        Self {
            low: 50.0,
            high: 150.0,
        }
    }
}

const SIGMA: f32 = 1.4;
const KSIZE: usize = 5;

/// Canny edge detector: 5x5 Gaussian (sigma 1.4), Sobel gradients, non-maximum
/// suppression, double threshold and 8-connected hysteresis.
pub fn canny_edges(frame: &GrayImage, low: f32, high: f32) -> Result<BinaryMask> {
    if !(low < high) {
        return Err(Error::InvalidInput(format!(
            "canny needs low < high, got {low} and {high}"
        )));
    }
    let (w, h) = frame.dims();
    if w == 0 || h == 0 {
        return Ok(BinaryMask::empty(w, h));
    }
    let smooth = convolve_separable(&to_f32(frame), w, h, &gaussian_kernel(KSIZE, SIGMA));
    let (gx, gy) = sobel(&smooth, w, h);
    let mag: Vec<f32> = gx.iter().zip(&gy).map(|(a, b)| a.hypot(*b)).collect();

    // 0 = none, 1 = weak, 2 = strong.
    let mut class = vec![0u8; w * h];
    let tan22 = 0.414_213_56_f32;
    for y in 1..h.saturating_sub(1) {
        for x in 1..w - 1 {
            let i = y * w + x;
            let m = mag[i];
            if m <= low {
                continue;
            }
            let (ax, ay) = (gx[i].abs(), gy[i].abs());
            // Neighbors along the gradient direction: (before, after).
            let (b, a) = if ay <= ax * tan22 {
                (i - 1, i + 1)
            } else if ax <= ay * tan22 {
                (i - w, i + w)
            } else if (gx[i] > 0.0) == (gy[i] > 0.0) {
                (i - w - 1, i + w + 1)
            } else {
                (i - w + 1, i + w - 1)
            };
            // Asymmetric comparison keeps exactly one pixel of a symmetric ridge.
            if m > mag[b] && m >= mag[a] {
                class[i] = if m > high { 2 } else { 1 };
            }
        }
    }

    let mut out = vec![BinaryMask::OFF; w * h];
    let mut stack: Vec<usize> = Vec::new();
    for (i, &c) in class.iter().enumerate() {
        if c == 2 && out[i] == BinaryMask::OFF {
            out[i] = BinaryMask::ON;
            stack.push(i);
            while let Some(j) = stack.pop() {
                let (x, y) = ((j % w) as isize, (j / w) as isize);
                for dy in -1..=1 {
                    for dx in -1..=1 {
                        let (xx, yy) = (x + dx, y + dy);
                        if xx < 0 || yy < 0 || xx >= w as isize || yy >= h as isize {
                            continue;
                        }
                        let k = yy as usize * w + xx as usize;
                        if class[k] > 0 && out[k] == BinaryMask::OFF {
                            out[k] = BinaryMask::ON;
                            stack.push(k);
                        }
                    }
                }
            }
        }
    }
    Ok(BinaryMask::from_raw_unchecked(w, h, out))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn image(w: usize, h: usize, f: impl Fn(usize, usize) -> u8) -> GrayImage {
        let data = (0..h).flat_map(|y| (0..w).map(move |x| (x, y))).map(|(x, y)| f(x, y)).collect();
        GrayImage::from_vec(w, h, data).unwrap()
    }

    #[test]
    fn uniform_image_has_no_edges() {
        let img = GrayImage::filled(20, 20, 77);
        assert_eq!(canny_edges(&img, 50.0, 150.0).unwrap().count(), 0);
    }

    #[test]
    fn step_edge_gives_single_pixel_line() {
        let img = image(30, 20, |x, _| if x < 15 { 20 } else { 220 });
        let edges = canny_edges(&img, 50.0, 150.0).unwrap();
        for y in 1..19 {
            let cols: Vec<_> = (0..30).filter(|&x| edges.is_set(x, y)).collect();
            assert_eq!(cols.len(), 1, "row {y}: {cols:?}");
            assert!(cols[0] == 14 || cols[0] == 15);
        }
    }

    #[test]
    fn weak_isolated_edge_suppressed() {
        // Step of 10 gray levels stays below the low threshold.
        let img = image(30, 20, |x, _| if x < 15 { 100 } else { 110 });
        assert_eq!(canny_edges(&img, 50.0, 150.0).unwrap().count(), 0);
    }

    #[test]
    fn rejects_inverted_thresholds() {
        assert!(canny_edges(&GrayImage::filled(4, 4, 0), 150.0, 50.0).is_err());
    }
}
