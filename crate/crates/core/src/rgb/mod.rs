//! RGB-camera preprocessing: frame differencing, background subtraction,
//! segmentation-mask gating, Canny edges and sparse optical flow.

mod background;
mod canny;
mod flow;

pub use background::{knn_background_mask, BackgroundConfig, BackgroundModel};
pub use canny::{canny_edges, CannyConfig};
pub use flow::{
    classify_flow_vectors, compute_sparse_flow, good_features, is_camera_shake, FlowParams,
    FlowVector, ShakeConfig,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ensure_same_dims, BinaryMask, ClassId, EdgeCloud, GrayImage, Modality, RgbImage};
use crate::scalar::Real;

/// Thresholds for frame differencing, flow classification and segmentation gating.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MotionGateConfig {
    pub diff_threshold: u8,
    pub flow_margin: f64,
    pub motion_ratio: f64,
    pub area_ratio: f64,
}

impl Default for MotionGateConfig {
    fn default() -> Self {
        Self {
            diff_threshold: 10,
            flow_margin: 0.5,
            motion_ratio: 0.2,
            area_ratio: 0.002,
        }
    }
}

impl MotionGateConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |v: f64| v > 0.0 && v < 1.0;
        if self.diff_threshold < 1 || !unit(self.motion_ratio) || !unit(self.area_ratio) || !unit(self.flow_margin) {
            return Err(Error::Config(format!("invalid motion gate config: {self:?}")));
        }
        Ok(())
    }
}

/// Instance segmentation mask with its class.
#[derive(Debug, Clone, PartialEq)]
pub struct SegMask {
    pub mask: BinaryMask,
    pub class_id: ClassId,
}

/// Integer luma `0.299 R + 0.587 G + 0.114 B`, rounded half up.
pub fn to_grayscale(frame: &RgbImage) -> GrayImage {
    let data = frame
        .data()
        .chunks_exact(3)
        .map(|p| ((299 * p[0] as u32 + 587 * p[1] as u32 + 114 * p[2] as u32 + 500) / 1000) as u8)
        .collect();
    GrayImage::from_vec(frame.width(), frame.height(), data).expect("dims preserved")
}

fn threshold_diff(a: &GrayImage, b: &GrayImage, t: u8) -> Vec<bool> {
    a.data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| x.abs_diff(y) > t)
        .collect()
}

/// Three-frame differencing: foreground iff `|I_t - I_t-1| > T` and `|I_t-1 - I_t-2| > T`.
pub fn three_frame_motion(
    i_t: &GrayImage,
    i_t1: &GrayImage,
    i_t2: &GrayImage,
    threshold: u8,
) -> Result<BinaryMask> {
    ensure_same_dims(i_t.dims(), i_t1.dims())?;
    ensure_same_dims(i_t.dims(), i_t2.dims())?;
    let d1 = threshold_diff(i_t, i_t1, threshold);
    let d2 = threshold_diff(i_t1, i_t2, threshold);
    let data = d1
        .iter()
        .zip(&d2)
        .map(|(&a, &b)| if a && b { BinaryMask::ON } else { BinaryMask::OFF })
        .collect();
    Ok(BinaryMask::from_raw_unchecked(i_t.width(), i_t.height(), data))
}

/// Two-frame differencing: foreground iff `|I_t - I_t-1| > T`.
pub fn two_frame_motion(i_t: &GrayImage, i_t1: &GrayImage, threshold: u8) -> Result<BinaryMask> {
    ensure_same_dims(i_t.dims(), i_t1.dims())?;
    let data = threshold_diff(i_t, i_t1, threshold)
        .into_iter()
        .map(|on| if on { BinaryMask::ON } else { BinaryMask::OFF })
        .collect();
    Ok(BinaryMask::from_raw_unchecked(i_t.width(), i_t.height(), data))
}

/// Union of the segmentation masks with enough motion (`m_i / d_i > C_motion`)
/// and enough area (`d_i / S > C_total`). Empty masks are skipped.
pub fn gate_segmentation_masks(
    motion: &BinaryMask,
    masks: &[SegMask],
    cfg: &MotionGateConfig,
) -> Result<BinaryMask> {
    let (w, h) = motion.dims();
    let total = (w * h) as f64;
    let mut out = vec![BinaryMask::OFF; w * h];
    for seg in masks {
        ensure_same_dims(motion.dims(), seg.mask.dims())?;
        let (mut d, mut m) = (0usize, 0usize);
        for (&s, &mv) in seg.mask.data().iter().zip(motion.data()) {
            if s == BinaryMask::ON {
                d += 1;
                if mv == BinaryMask::ON {
                    m += 1;
                }
            }
        }
        if d == 0 {
            continue;
        }
        let r_motion = m as f64 / d as f64;
        let r_total = d as f64 / total;
        if r_motion > cfg.motion_ratio && r_total > cfg.area_ratio {
            for (o, &s) in out.iter_mut().zip(seg.mask.data()) {
                if s == BinaryMask::ON {
                    *o = BinaryMask::ON;
                }
            }
        }
    }
    Ok(BinaryMask::from_raw_unchecked(w, h, out))
}

fn zip_masks(a: &BinaryMask, b: &BinaryMask, f: impl Fn(bool, bool) -> bool) -> Result<BinaryMask> {
    ensure_same_dims(a.dims(), b.dims())?;
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| {
            if f(x == BinaryMask::ON, y == BinaryMask::ON) {
                BinaryMask::ON
            } else {
                BinaryMask::OFF
            }
        })
        .collect();
    Ok(BinaryMask::from_raw_unchecked(a.width(), a.height(), data))
}

/// Per-pixel OR of two motion masks.
pub fn combine_motion(m_t: &BinaryMask, m_yolo: &BinaryMask) -> Result<BinaryMask> {
    zip_masks(m_t, m_yolo, |a, b| a || b)
}

/// Edges restricted to moving regions, as an RGB-modality edge cloud.
pub fn motion_edges<T: Real>(edges: &BinaryMask, motion: &BinaryMask) -> Result<EdgeCloud<T>> {
    let both = zip_masks(edges, motion, |a, b| a && b)?;
    Ok(EdgeCloud::from_mask(&both, Modality::Rgb))
}
