use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Affine, Point2};
use crate::scalar::Real;

/// A matched event-camera point and RGB point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Serialize", deserialize = "T: Deserialize<'de>"))]
pub struct Correspondence<T> {
    pub eb: Point2<T>,
    pub rgb: Point2<T>,
}

impl<T: Real> Correspondence<T> {
    pub fn new(eb: Point2<T>, rgb: Point2<T>) -> Self {
        Self { eb, rgb }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RansacConfig {
    pub iterations: usize,
    pub inlier_threshold_px: f64,
    pub min_inliers: usize,
    pub seed: u64,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self {
            iterations: 2000,
            inlier_threshold_px: 5.0,
            min_inliers: 3,
            seed: 0,
        }
    }
}

impl RansacConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 || !(self.inlier_threshold_px > 0.0) || self.min_inliers < 3 {
            return Err(Error::Config(format!("invalid RANSAC config: {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RansacFit<T> {
    pub transform: Affine<T>,
    /// Indices into the input correspondences, ascending.
    pub inliers: Vec<usize>,
}

fn inliers_of<T: Real>(t: &Affine<T>, pairs: &[Correspondence<T>], thr2: T, out: &mut Vec<usize>) {
    out.clear();
    out.extend((0..pairs.len()).filter(|&i| t.apply(&pairs[i].eb).dist2(&pairs[i].rgb) <= thr2));
}

/// Robust affine estimate: the best of `iterations` exact three-point fits by
/// inlier count, refined by least squares over its inliers.
pub fn estimate_affine_ransac<T: Real>(pairs: &[Correspondence<T>], cfg: &RansacConfig) -> Result<RansacFit<T>> {
    cfg.validate()?;
    if pairs.len() < 3 {
        return Err(Error::Estimation(format!(
            "RANSAC needs at least 3 correspondences, got {}",
            pairs.len()
        )));
    }
    let src: Vec<_> = pairs.iter().map(|p| p.eb).collect();
    let dst: Vec<_> = pairs.iter().map(|p| p.rgb).collect();
    Affine::fit(&src, &dst)?;

    let thr = T::lit(cfg.inlier_threshold_px);
    let thr2 = thr * thr;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut best: Vec<usize> = Vec::new();
    let mut current = Vec::new();
    for _ in 0..cfg.iterations {
        let idx = sample(&mut rng, pairs.len(), 3);
        let s = [src[idx.index(0)], src[idx.index(1)], src[idx.index(2)]];
        let d = [dst[idx.index(0)], dst[idx.index(1)], dst[idx.index(2)]];
        let Ok(model) = Affine::fit(&s, &d) else {
            continue;
        };
        inliers_of(&model, pairs, thr2, &mut current);
        if current.len() > best.len() {
            std::mem::swap(&mut best, &mut current);
            if best.len() == pairs.len() {
                break;
            }
        }
    }
    if best.len() < cfg.min_inliers {
        return Err(Error::Estimation(format!(
            "best RANSAC model has {} inliers, need {}",
            best.len(),
            cfg.min_inliers
        )));
    }
    let s: Vec<_> = best.iter().map(|&i| src[i]).collect();
    let d: Vec<_> = best.iter().map(|&i| dst[i]).collect();
    let transform = Affine::fit(&s, &d)?;
    Ok(RansacFit { transform, inliers: best })
}
