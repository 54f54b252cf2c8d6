//! Image-level early fusion and detection-level late fusion of the RGB and
//! event-camera streams.

use std::collections::BTreeSet;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::calibration::solve_assignment;
use crate::error::{Error, Result};
use crate::geometry::{Affine, Point2, Rect};
use crate::model::{ensure_same_dims, BBox, BinaryMask, Detection, DetectionSource, GrayImage, RgbImage};
use crate::tracking::{Sort, SortConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FusionConfig {
    pub blend_alpha: f64,
    pub pair_alpha: f64,
    pub distance_gate: f64,
    pub stlf_confidence: f64,
    pub motion_overlap_min: f64,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            blend_alpha: 0.5,
            pair_alpha: 0.4,
            distance_gate: 50.0,
            stlf_confidence: 0.77,
            motion_overlap_min: 0.1,
        }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if !unit(self.blend_alpha)
            || !unit(self.pair_alpha)
            || !unit(self.stlf_confidence)
            || !unit(self.motion_overlap_min)
            || !(self.distance_gate > 0.0 && self.distance_gate.is_finite())
        {
            return Err(Error::Config(format!("invalid fusion config: {self:?}")));
        }
        Ok(())
    }
}

/// Which sensors contributed to a fused object.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    RgbOnly,
    EbOnly,
    Both,
}

impl Provenance {
    pub fn has_event(self) -> bool {
        matches!(self, Provenance::EbOnly | Provenance::Both)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FusedObject {
    pub detection: Detection,
    pub provenance: Provenance,
    /// Index into the frame's RGB detections, if any contributed.
    pub rgb_index: Option<usize>,
    /// Index into the frame's event-camera detections, if any contributed.
    pub eb_index: Option<usize>,
    /// Confidence of the contributing RGB detection.
    pub rgb_confidence: Option<f64>,
    pub track_id: Option<u64>,
    pub trusted: bool,
}

/// Warps an event-camera image into the RGB frame by nearest-neighbor lookup
/// through the inverse of `calib`. Pixels mapping outside the source are `fill`.
pub fn warp_to_rgb(eb: &GrayImage, calib: &Affine<f64>, rgb_dims: (usize, usize), fill: u8) -> Result<GrayImage> {
    let inv = calib.inverse()?;
    let (w, h) = rgb_dims;
    let (ew, eh) = eb.dims();
    let mut out = GrayImage::filled(w, h, fill);
    for y in 0..h {
        for x in 0..w {
            let p = inv.apply(&Point2::new(x as f64, y as f64));
            let (sx, sy) = (p.x.round(), p.y.round());
            if sx >= 0.0 && sy >= 0.0 && (sx as usize) < ew && (sy as usize) < eh {
                out.set(x, y, eb.get(sx as usize, sy as usize));
            }
        }
    }
    Ok(out)
}

/// `(1 - alpha) * eb + alpha * rgb` per channel, rounded and clamped.
pub fn blend_early(i_eb: &RgbImage, i_rgb: &RgbImage, alpha: f64) -> Result<RgbImage> {
    ensure_same_dims(i_eb.dims(), i_rgb.dims())?;
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidInput(format!("blend alpha {alpha} outside [0, 1]")));
    }
    let data = i_eb
        .data()
        .iter()
        .zip(i_rgb.data())
        .map(|(&e, &r)| ((1.0 - alpha) * e as f64 + alpha * r as f64).round().clamp(0.0, 255.0) as u8)
        .collect();
    RgbImage::from_vec(i_eb.width(), i_eb.height(), data)
}

/// Combines a paired RGB and event-camera detection: class from RGB, center and
/// size `(1 - alpha) * rgb + alpha * eb`, confidence the larger of the two.
pub fn fuse_pair(rgb: &Detection, eb: &Detection, alpha: f64) -> FusedObject {
    let mix = |a: f64, b: f64| (1.0 - alpha) * a + alpha * b;
    let (r, e) = (&rgb.bbox, &eb.bbox);
    let detection = Detection {
        class_id: rgb.class_id,
        bbox: BBox::new(mix(r.cx, e.cx), mix(r.cy, e.cy), mix(r.w, e.w), mix(r.h, e.h)),
        confidence: rgb.confidence.max(eb.confidence),
        source: DetectionSource::Fused,
        moving: true,
    };
    FusedObject {
        detection,
        provenance: Provenance::Both,
        rgb_index: None,
        eb_index: None,
        rgb_confidence: Some(rgb.confidence),
        track_id: None,
        trusted: false,
    }
}

/// Maps an event-camera detection into the RGB frame: the axis-aligned bounding
/// box of its transformed corners.
pub fn map_detection(det: &Detection, calib: &Affine<f64>) -> Detection {
    let r = det.rect();
    let corners = [(r.x0, r.y0), (r.x1, r.y0), (r.x0, r.y1), (r.x1, r.y1)].map(|(x, y)| calib.apply(&Point2::new(x, y)));
    let bounds = Rect::bounding(corners).expect("four corners");
    Detection { bbox: BBox::from_rect(&bounds), ..*det }
}

/// Fraction of the box's pixels (clipped to the mask) that are foreground.
pub fn motion_overlap(det: &Detection, motion: &BinaryMask) -> f64 {
    let r = det.rect();
    let (w, h) = (motion.width() as i64, motion.height() as i64);
    let x0 = (r.x0.floor() as i64).clamp(0, w);
    let y0 = (r.y0.floor() as i64).clamp(0, h);
    let x1 = (r.x1.ceil() as i64).clamp(0, w);
    let y1 = (r.y1.ceil() as i64).clamp(0, h);
    let area = (x1 - x0) * (y1 - y0);
    if area <= 0 {
        return 0.0;
    }
    motion.count_in(x0, y0, x1, y1) as f64 / area as f64
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Association {
    /// `(rgb index, eb index)`, ascending by RGB index.
    pub pairs: Vec<(usize, usize)>,
    pub unmatched_rgb: Vec<usize>,
    pub unmatched_eb: Vec<usize>,
}

/// Optimal center-distance assignment; pairs farther apart than `gate` are
/// returned to the unmatched sets. A distance of exactly `gate` is accepted.
pub fn associate_detections(rgb: &[Detection], eb: &[Detection], gate: f64) -> Association {
    let mut out = Association::default();
    let mut rgb_used = vec![false; rgb.len()];
    let mut eb_used = vec![false; eb.len()];
    if !rgb.is_empty() && !eb.is_empty() {
        let cost = DMatrix::from_fn(rgb.len(), eb.len(), |i, j| rgb[i].bbox.center().dist(&eb[j].bbox.center()));
        if let Ok(pairs) = solve_assignment(&cost) {
            for (i, j) in pairs {
                if cost[(i, j)] <= gate {
                    out.pairs.push((i, j));
                    rgb_used[i] = true;
                    eb_used[j] = true;
                }
            }
        }
    }
    out.unmatched_rgb = (0..rgb.len()).filter(|&i| !rgb_used[i]).collect();
    out.unmatched_eb = (0..eb.len()).filter(|&j| !eb_used[j]).collect();
    out
}

/// Union of fused pairs, unmatched RGB detections (moving or static) and
/// unmatched event-camera detections. Inputs must be in the RGB pixel frame.
pub fn simple_late_fusion(rgb: &[Detection], eb: &[Detection], motion: &BinaryMask, cfg: &FusionConfig) -> Vec<FusedObject> {
    let moving: Vec<bool> = rgb.iter().map(|d| motion_overlap(d, motion) >= cfg.motion_overlap_min).collect();
    let moving_idx: Vec<usize> = (0..rgb.len()).filter(|&i| moving[i]).collect();
    let moving_dets: Vec<Detection> = moving_idx.iter().map(|&i| rgb[i]).collect();
    let assoc = associate_detections(&moving_dets, eb, cfg.distance_gate);

    let mut paired_rgb = vec![None; rgb.len()];
    for &(mi, ej) in &assoc.pairs {
        paired_rgb[moving_idx[mi]] = Some(ej);
    }
    let mut out = Vec::with_capacity(rgb.len() + eb.len());
    for (i, pair) in paired_rgb.iter().enumerate() {
        if let Some(j) = *pair {
            let mut f = fuse_pair(&rgb[i], &eb[j], cfg.pair_alpha);
            f.rgb_index = Some(i);
            f.eb_index = Some(j);
            out.push(f);
        }
    }
    for (i, pair) in paired_rgb.iter().enumerate() {
        if pair.is_none() {
            out.push(FusedObject {
                detection: Detection { source: DetectionSource::Rgb, moving: moving[i], ..rgb[i] },
                provenance: Provenance::RgbOnly,
                rgb_index: Some(i),
                eb_index: None,
                rgb_confidence: Some(rgb[i].confidence),
                track_id: None,
                trusted: false,
            });
        }
    }
    for &j in &assoc.unmatched_eb {
        out.push(FusedObject {
            detection: Detection { source: DetectionSource::Event, moving: true, ..eb[j] },
            provenance: Provenance::EbOnly,
            rgb_index: None,
            eb_index: Some(j),
            rgb_confidence: None,
            track_id: None,
            trusted: false,
        });
    }
    out
}

/// Tracker plus the set of track IDs that have ever had event-camera support.
#[derive(Debug, Clone)]
pub struct StlfState {
    tracker: Sort,
    trusted_ids: BTreeSet<u64>,
}

impl StlfState {
    pub fn new(cfg: SortConfig) -> Result<Self> {
        Ok(Self { tracker: Sort::new(cfg)?, trusted_ids: BTreeSet::new() })
    }

    pub fn trusted_ids(&self) -> &BTreeSet<u64> {
        &self.trusted_ids
    }

    pub fn tracker(&self) -> &Sort {
        &self.tracker
    }
}

/// Late fusion with tracking: all SLF candidates update the tracker, a track
/// becomes trusted once a candidate with event support lands on it, and only
/// candidates with RGB confidence above `stlf_confidence` or a trusted track
/// are emitted.
pub fn spatiotemporal_late_fusion(
    state: &mut StlfState,
    rgb: &[Detection],
    eb: &[Detection],
    motion: &BinaryMask,
    cfg: &FusionConfig,
) -> Vec<FusedObject> {
    let mut candidates = simple_late_fusion(rgb, eb, motion, cfg);
    let boxes: Vec<BBox> = candidates.iter().map(|c| c.detection.bbox).collect();
    for report in state.tracker.update(&boxes) {
        if let Some(i) = report.detection {
            candidates[i].track_id = Some(report.id);
            if candidates[i].provenance.has_event() {
                state.trusted_ids.insert(report.id);
            }
        }
    }
    let live: BTreeSet<u64> = state.tracker.live_ids().collect();
    state.trusted_ids.retain(|id| live.contains(id));

    candidates
        .into_iter()
        .filter_map(|mut c| {
            c.trusted = c.track_id.is_some_and(|id| state.trusted_ids.contains(&id));
            let confident = c.rgb_confidence.is_some_and(|v| v > cfg.stlf_confidence);
            (confident || c.trusted).then_some(c)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ClassId;

    fn det(class: ClassId, cx: f64, cy: f64, w: f64, h: f64, conf: f64, source: DetectionSource) -> Detection {
        Detection::new(class, BBox::new(cx, cy, w, h), conf, source).unwrap()
    }

    fn rgb(cx: f64, cy: f64, conf: f64) -> Detection {
        det(ClassId::CAR, cx, cy, 40.0, 30.0, conf, DetectionSource::Rgb)
    }

    fn eb(cx: f64, cy: f64) -> Detection {
        det(ClassId::TRUCK, cx, cy, 40.0, 30.0, 0.6, DetectionSource::Event)
    }

    #[test]
    fn blend_examples() {
        let a = RgbImage::filled(3, 2, [100, 0, 255]);
        let b = RgbImage::filled(3, 2, [200, 255, 0]);
        assert_eq!(blend_early(&a, &b, 1.0).unwrap(), b);
        assert_eq!(blend_early(&a, &b, 0.0).unwrap(), a);
        assert_eq!(blend_early(&a, &b, 0.5).unwrap().get(1, 1)[0], 150);
        assert!(blend_early(&a, &RgbImage::filled(2, 2, [0; 3]), 0.5).is_err());
        for alpha in [0.1, 0.33, 0.77] {
            let m = blend_early(&a, &b, alpha).unwrap();
            for (i, v) in m.data().iter().enumerate() {
                let (x, y) = (a.data()[i], b.data()[i]);
                assert!(*v >= x.min(y) && *v <= x.max(y));
            }
        }
    }

    #[test]
    fn fuse_pair_examples() {
        let r = rgb(100.0, 100.0, 0.5);
        let f = fuse_pair(&r, &r, 0.4);
        assert_eq!(f.detection.bbox, r.bbox);
        let f = fuse_pair(&r, &eb(110.0, 100.0), 0.4);
        assert!((f.detection.bbox.cx - 104.0).abs() < 1e-12);
        assert_eq!(f.detection.bbox.cy, 100.0);
        assert_eq!(f.detection.class_id, ClassId::CAR);
        assert_eq!(f.detection.confidence, 0.6);
        assert_eq!(f.provenance, Provenance::Both);
        let e = det(ClassId::BUS, 130.0, 90.0, 70.0, 50.0, 0.9, DetectionSource::Event);
        assert_eq!(fuse_pair(&r, &e, 0.0).detection.bbox, r.bbox);
        let one = fuse_pair(&r, &e, 1.0).detection;
        assert_eq!((one.bbox, one.class_id), (e.bbox, ClassId::CAR));
    }

    #[test]
    fn association_examples() {
        let a = associate_detections(&[rgb(0.0, 0.0, 0.9)], &[eb(10.0, 0.0)], 50.0);
        assert_eq!(a.pairs, vec![(0, 0)]);
        let a = associate_detections(&[rgb(0.0, 0.0, 0.9)], &[eb(60.0, 0.0)], 50.0);
        assert!(a.pairs.is_empty());
        assert_eq!((a.unmatched_rgb.len(), a.unmatched_eb.len()), (1, 1));
        let a = associate_detections(&[rgb(0.0, 0.0, 0.9)], &[eb(30.0, 40.0)], 50.0);
        assert_eq!(a.pairs, vec![(0, 0)]);
        let a = associate_detections(&[rgb(0.0, 0.0, 0.9), rgb(5.0, 0.0, 0.9)], &[], 50.0);
        assert_eq!(a.unmatched_rgb, vec![0, 1]);
    }

    #[test]
    fn slf_union() {
        let mut motion = BinaryMask::empty(400, 300);
        for y in 80..120 {
            for x in 80..120 {
                motion.set(x, y, true);
            }
        }
        let cfg = FusionConfig::default();
        let rgb_dets = [rgb(100.0, 100.0, 0.9), rgb(300.0, 200.0, 0.8)];
        let eb_dets = [eb(104.0, 100.0), eb(50.0, 250.0)];
        let out = simple_late_fusion(&rgb_dets, &eb_dets, &motion, &cfg);
        assert_eq!(out.len(), 3);
        assert_eq!(out[0].provenance, Provenance::Both);
        assert_eq!((out[0].rgb_index, out[0].eb_index), (Some(0), Some(0)));
        assert_eq!(out[1].provenance, Provenance::RgbOnly);
        assert!(!out[1].detection.moving);
        assert_eq!(out[2].provenance, Provenance::EbOnly);
        assert_eq!(out[2].detection.class_id, ClassId::TRUCK);

        // A static RGB box is never paired even when an EB box sits on it.
        let out = simple_late_fusion(&[rgb(300.0, 200.0, 0.8)], &[eb(300.0, 200.0)], &motion, &cfg);
        assert_eq!(out.len(), 2);
    }

    #[test]
    fn stlf_gating() {
        let cfg = FusionConfig::default();
        let motion = BinaryMask::full(640, 480);
        let mut state = StlfState::new(SortConfig::default()).unwrap();

        // Spurious low-confidence RGB object without event support.
        assert!(spatiotemporal_late_fusion(&mut state, &[rgb(500.0, 400.0, 0.6)], &[], &motion, &cfg).is_empty());
        // Confident RGB object passes on its own.
        let out = spatiotemporal_late_fusion(&mut state, &[rgb(100.0, 100.0, 0.8)], &[], &motion, &cfg);
        assert_eq!(out.len(), 1);
        assert!(!out[0].trusted);

        // Event support at frame k makes the track trusted for later RGB-only frames.
        let mut state = StlfState::new(SortConfig::default()).unwrap();
        let out = spatiotemporal_late_fusion(&mut state, &[rgb(200.0, 200.0, 0.5)], &[eb(202.0, 200.0)], &motion, &cfg);
        assert_eq!(out.len(), 1);
        assert!(out[0].trusted);
        let id = out[0].track_id.unwrap();
        let out = spatiotemporal_late_fusion(&mut state, &[rgb(203.0, 201.0, 0.5)], &[], &motion, &cfg);
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].track_id, Some(id));
        assert!(out[0].trusted);
        assert!(state.trusted_ids().contains(&id));
    }

    #[test]
    fn map_detection_scales_box() {
        let calib = Affine::scale_translate(3.0, 2.5, 10.0, -5.0).unwrap();
        let d = map_detection(&eb(100.0, 100.0), &calib);
        assert!((d.bbox.cx - 310.0).abs() < 1e-9 && (d.bbox.cy - 245.0).abs() < 1e-9);
        assert!((d.bbox.w - 120.0).abs() < 1e-9 && (d.bbox.h - 75.0).abs() < 1e-9);
    }

    #[test]
    fn warp_identity_and_scale() {
        let mut eb_img = GrayImage::filled(4, 4, 0);
        eb_img.set(1, 2, 255);
        let same = warp_to_rgb(&eb_img, &Affine::identity(), (4, 4), 128).unwrap();
        assert_eq!(same, eb_img);
        let up = warp_to_rgb(&eb_img, &Affine::scale_translate(2.0, 2.0, 0.0, 0.0).unwrap(), (8, 8), 128).unwrap();
        assert_eq!(up.get(2, 4), 255);
    }
}
