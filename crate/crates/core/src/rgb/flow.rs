//! Sparse optical flow: Shi-Tomasi corners tracked with pyramidal Lucas-Kanade,
//! and the median-based split into camera and object motion.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Point2;
use crate::imgproc::{convolve_separable, to_f32};
use crate::model::{ensure_same_dims, GrayImage};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowVector {
    pub origin: Point2<f64>,
    pub displacement: Point2<f64>,
    pub length: f64,
}

impl FlowVector {
    pub fn new(origin: Point2<f64>, dx: f64, dy: f64) -> Self {
        Self {
            origin,
            displacement: Point2::new(dx, dy),
            length: dx.hypot(dy),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FlowParams {
    pub max_corners: usize,
    /// Corners scoring below `quality * best score` are discarded.
    pub quality: f64,
    pub min_distance: f64,
    pub pyramid_levels: usize,
    /// Side of the square tracking window (odd).
    pub window: usize,
    pub max_iterations: usize,
    pub epsilon: f64,
}

impl Default for FlowParams {
    fn default() -> Self {
        Self {
            max_corners: 300,
            quality: 0.01,
            min_distance: 10.0,
            pyramid_levels: 3,
            window: 21,
            max_iterations: 30,
            epsilon: 0.01,
        }
    }
}

impl FlowParams {
    fn validate(&self) -> Result<()> {
        if self.max_corners == 0
            || !(self.quality > 0.0 && self.quality <= 1.0)
            || !(self.min_distance > 0.0)
            || self.pyramid_levels == 0
            || self.window < 3
            || self.max_iterations == 0
        {
            return Err(Error::Config(format!("invalid flow parameters: {self:?}")));
        }
        Ok(())
    }
}

struct Level {
    w: usize,
    h: usize,
    img: Vec<f32>,
    gx: Vec<f32>,
    gy: Vec<f32>,
}

impl Level {
    fn new(img: Vec<f32>, w: usize, h: usize) -> Self {
        let mut gx = vec![0f32; w * h];
        let mut gy = vec![0f32; w * h];
        for y in 0..h {
            for x in 0..w {
                let xl = x.saturating_sub(1);
                let xr = (x + 1).min(w - 1);
                let yu = y.saturating_sub(1);
                let yd = (y + 1).min(h - 1);
                gx[y * w + x] = (img[y * w + xr] - img[y * w + xl]) * 0.5;
                gy[y * w + x] = (img[yd * w + x] - img[yu * w + x]) * 0.5;
            }
        }
        Self { w, h, img, gx, gy }
    }

    fn sample(buf: &[f32], w: usize, h: usize, x: f64, y: f64) -> f32 {
        let x = x.clamp(0.0, (w - 1) as f64);
        let y = y.clamp(0.0, (h - 1) as f64);
        let x0 = x.floor() as usize;
        let y0 = y.floor() as usize;
        let x1 = (x0 + 1).min(w - 1);
        let y1 = (y0 + 1).min(h - 1);
        let fx = (x - x0 as f64) as f32;
        let fy = (y - y0 as f64) as f32;
        let top = buf[y0 * w + x0] * (1.0 - fx) + buf[y0 * w + x1] * fx;
        let bot = buf[y1 * w + x0] * (1.0 - fx) + buf[y1 * w + x1] * fx;
        top * (1.0 - fy) + bot * fy
    }
}

fn build_pyramid(img: &GrayImage, levels: usize) -> Vec<Level> {
    let (mut w, mut h) = img.dims();
    let mut cur = to_f32(img);
    let kernel = [1.0 / 16.0, 4.0 / 16.0, 6.0 / 16.0, 4.0 / 16.0, 1.0 / 16.0];
    let mut out = Vec::with_capacity(levels);
    for l in 0..levels {
        if l > 0 {
            if w < 16 || h < 16 {
                break;
            }
            let blurred = convolve_separable(&cur, w, h, &kernel);
            let (nw, nh) = (w.div_ceil(2), h.div_ceil(2));
            let mut next = vec![0f32; nw * nh];
            for y in 0..nh {
                for x in 0..nw {
                    next[y * nw + x] = blurred[(2 * y) * w + 2 * x];
                }
            }
            cur = next;
            w = nw;
            h = nh;
        }
        out.push(Level::new(cur.clone(), w, h));
    }
    out
}

/// Shi-Tomasi corners: minimum eigenvalue of the 3x3-summed structure tensor,
/// thresholded relative to the best score, 3x3 local maxima, greedy
/// minimum-distance suppression in descending score order.
pub fn good_features(img: &GrayImage, params: &FlowParams) -> Vec<Point2<f64>> {
    let (w, h) = img.dims();
    if w < 3 || h < 3 {
        return Vec::new();
    }
    let level = Level::new(to_f32(img), w, h);
    let mut score = vec![0f32; w * h];
    let box3 = [1.0f32, 1.0, 1.0];
    let ixx: Vec<f32> = level.gx.iter().map(|v| v * v).collect();
    let iyy: Vec<f32> = level.gy.iter().map(|v| v * v).collect();
    let ixy: Vec<f32> = level.gx.iter().zip(&level.gy).map(|(a, b)| a * b).collect();
    let sxx = convolve_separable(&ixx, w, h, &box3);
    let syy = convolve_separable(&iyy, w, h, &box3);
    let sxy = convolve_separable(&ixy, w, h, &box3);
    let mut best = 0f32;
    for i in 0..w * h {
        let a = sxx[i];
        let c = syy[i];
        let b = sxy[i];
        let half = (a - c) * 0.5;
        let lmin = (a + c) * 0.5 - (half * half + b * b).sqrt();
        score[i] = lmin.max(0.0);
        best = best.max(score[i]);
    }
    // Tiny positive scores are float noise on flat regions.
    if best <= 1e-3 {
        return Vec::new();
    }
    let thr = best * params.quality as f32;
    let mut cands: Vec<(f32, usize)> = Vec::new();
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let i = y * w + x;
            let s = score[i];
            if s < thr || s <= 0.0 {
                continue;
            }
            let is_max = (-1isize..=1).all(|dy| {
                (-1isize..=1).all(|dx| {
                    let j = (y as isize + dy) as usize * w + (x as isize + dx) as usize;
                    score[j] <= s
                })
            });
            if is_max {
                cands.push((s, i));
            }
        }
    }
    cands.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));

    let cell = params.min_distance.max(1.0);
    let gw = (w as f64 / cell).ceil() as usize + 1;
    let gh = (h as f64 / cell).ceil() as usize + 1;
    let mut grid: Vec<Vec<Point2<f64>>> = vec![Vec::new(); gw * gh];
    let md2 = params.min_distance * params.min_distance;
    let mut out = Vec::new();
    for (_, i) in cands {
        let p = Point2::new((i % w) as f64, (i / w) as f64);
        let gx = (p.x / cell) as usize;
        let gy = (p.y / cell) as usize;
        let close = (gy.saturating_sub(1)..=(gy + 1).min(gh - 1)).any(|yy| {
            (gx.saturating_sub(1)..=(gx + 1).min(gw - 1))
                .any(|xx| grid[yy * gw + xx].iter().any(|q| q.dist2(&p) < md2))
        });
        if close {
            continue;
        }
        grid[gy * gw + gx].push(p);
        out.push(p);
        if out.len() >= params.max_corners {
            break;
        }
    }
    out
}

/// Tracks one point through the pyramids; `None` if lost.
fn track_point(prev: &[Level], next: &[Level], p: Point2<f64>, params: &FlowParams) -> Option<Point2<f64>> {
    let r = (params.window / 2) as i64;
    let mut g = (0.0f64, 0.0f64);
    let top = prev.len() - 1;
    for l in (0..=top).rev() {
        let lp = &prev[l];
        let ln = &next[l];
        let scale = (1u64 << l) as f64;
        let (px, py) = (p.x / scale, p.y / scale);
        let (mut gxx, mut gxy, mut gyy) = (0f64, 0f64, 0f64);
        let mut patch = Vec::with_capacity(((2 * r + 1) * (2 * r + 1)) as usize);
        for dy in -r..=r {
            for dx in -r..=r {
                let x = px + dx as f64;
                let y = py + dy as f64;
                let ix = Level::sample(&lp.gx, lp.w, lp.h, x, y) as f64;
                let iy = Level::sample(&lp.gy, lp.w, lp.h, x, y) as f64;
                let iv = Level::sample(&lp.img, lp.w, lp.h, x, y) as f64;
                gxx += ix * ix;
                gxy += ix * iy;
                gyy += iy * iy;
                patch.push((x, y, iv, ix, iy));
            }
        }
        let det = gxx * gyy - gxy * gxy;
        let n = patch.len() as f64;
        let min_eig = ((gxx + gyy) - ((gxx - gyy).powi(2) + 4.0 * gxy * gxy).sqrt()) / (2.0 * n);
        if det.abs() < 1e-9 || min_eig < 1e-4 {
            return None;
        }
        let mut v = (0.0f64, 0.0f64);
        for _ in 0..params.max_iterations {
            let (mut bx, mut by) = (0f64, 0f64);
            for &(x, y, iv, ix, iy) in &patch {
                let jv = Level::sample(&ln.img, ln.w, ln.h, x + g.0 + v.0, y + g.1 + v.1) as f64;
                let diff = iv - jv;
                bx += diff * ix;
                by += diff * iy;
            }
            let nx = (gyy * bx - gxy * by) / det;
            let ny = (gxx * by - gxy * bx) / det;
            v.0 += nx;
            v.1 += ny;
            if nx * nx + ny * ny < params.epsilon * params.epsilon {
                break;
            }
        }
        g = if l > 0 {
            (2.0 * (g.0 + v.0), 2.0 * (g.1 + v.1))
        } else {
            (g.0 + v.0, g.1 + v.1)
        };
    }
    let q = Point2::new(p.x + g.0, p.y + g.1);
    let (w, h) = (prev[0].w as f64, prev[0].h as f64);
    (q.is_finite() && q.x >= 0.0 && q.y >= 0.0 && q.x <= w - 1.0 && q.y <= h - 1.0).then_some(q)
}

/// Corners of `prev` tracked into `next`; lost tracks are dropped.
pub fn compute_sparse_flow(
    prev: &GrayImage,
    next: &GrayImage,
    params: &FlowParams,
) -> Result<Vec<FlowVector>> {
    ensure_same_dims(prev.dims(), next.dims())?;
    params.validate()?;
    let corners = good_features(prev, params);
    if corners.is_empty() {
        return Ok(Vec::new());
    }
    let pp = build_pyramid(prev, params.pyramid_levels);
    let pn = build_pyramid(next, params.pyramid_levels);
    Ok(corners
        .into_iter()
        .filter_map(|c| {
            track_point(&pp, &pn, c, params).map(|q| FlowVector::new(c, q.x - c.x, q.y - c.y))
        })
        .collect())
}

/// Median of a non-empty slice; mean of the two middle values for even lengths.
pub(crate) fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) * 0.5
    }
}

/// Splits vectors into camera motion (`length < median + margin`) and object motion.
pub fn classify_flow_vectors(
    vectors: &[FlowVector],
    margin: f64,
) -> (Vec<FlowVector>, Vec<FlowVector>) {
    if vectors.is_empty() {
        return (Vec::new(), Vec::new());
    }
    let lengths: Vec<f64> = vectors.iter().map(|v| v.length).collect();
    let m = median(&lengths);
    vectors.iter().partition(|v| v.length < m + margin)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ShakeConfig {
    pub enabled: bool,
    /// Frame flagged when the object-motion share exceeds this fraction...
    pub object_fraction: f64,
    /// ...and the object vectors' mean length exceeds this many pixels.
    pub min_mean_length: f64,
}

impl Default for ShakeConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            object_fraction: 0.5,
            min_mean_length: 2.0,
        }
    }
}

/// Scene-health check used to exclude frames from calibration.
pub fn is_camera_shake(camera: &[FlowVector], object: &[FlowVector], cfg: &ShakeConfig) -> bool {
    let total = camera.len() + object.len();
    if !cfg.enabled || total == 0 || object.is_empty() {
        return false;
    }
    let frac = object.len() as f64 / total as f64;
    let mean = object.iter().map(|v| v.length).sum::<f64>() / object.len() as f64;
    frac > cfg.object_fraction && mean > cfg.min_mean_length
}
