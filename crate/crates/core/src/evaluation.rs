//! Detection metrics, reprojection summaries and pseudo-label generation.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{iou, Affine, Point2, Rect};
use crate::model::{BBox, ClassId, Detection};
use crate::rgb::{classify_flow_vectors, FlowVector};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub iou_threshold: f64,
    pub confidence_threshold: f64,
    pub pseudo_label_confidence: f64,
    /// Mapped event-camera labels keeping less than this share of their area after clipping are dropped.
    pub eb_min_visible_fraction: f64,
    /// Margin over the median flow length separating object motion from camera motion.
    pub flow_margin: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            iou_threshold: 0.45,
            confidence_threshold: 0.3,
            pseudo_label_confidence: 0.80,
            eb_min_visible_fraction: 0.25,
            flow_margin: 0.5,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        let open = |v: f64| v > 0.0 && v < 1.0;
        if !open(self.iou_threshold)
            || !open(self.confidence_threshold)
            || !open(self.pseudo_label_confidence)
            || !(0.0..=1.0).contains(&self.eb_min_visible_fraction)
            || !(self.flow_margin >= 0.0)
        {
            return Err(Error::Config(format!("invalid evaluation config: {self:?}")));
        }
        Ok(())
    }
}

/// One point of a precision-recall curve, after the detection at `confidence`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub confidence: f64,
    pub precision: f64,
    pub recall: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class_id: ClassId,
    /// `None` when the class has no ground truth.
    pub ap: Option<f64>,
    /// Zero when there are no retained detections.
    pub precision: f64,
    pub recall: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub pr_curve: Vec<PrPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub interpolation: String,
    pub iou_threshold: f64,
    pub confidence_threshold: f64,
    pub classes: Vec<ClassMetrics>,
    /// Mean AP over classes present in the ground truth; `None` if there are none.
    pub map: Option<f64>,
}

/// Area under the precision-recall curve with all-points interpolation:
/// precision is replaced by its running maximum from the right and integrated
/// over recall steps.
pub fn average_precision(recall: &[f64], precision: &[f64]) -> f64 {
    let mut mrec = Vec::with_capacity(recall.len() + 2);
    let mut mpre = Vec::with_capacity(precision.len() + 2);
    mrec.push(0.0);
    mrec.extend_from_slice(recall);
    mrec.push(1.0);
    mpre.push(0.0);
    mpre.extend_from_slice(precision);
    mpre.push(0.0);
    for i in (0..mpre.len() - 1).rev() {
        mpre[i] = mpre[i].max(mpre[i + 1]);
    }
    let mut ap = 0.0;
    for i in 1..mrec.len() {
        if mrec[i] != mrec[i - 1] {
            ap += (mrec[i] - mrec[i - 1]) * mpre[i];
        }
    }
    ap
}

/// Marks each retained detection of one class as true or false positive.
///
/// Detections are visited by descending confidence (ties by frame, then
/// index); each claims the unmatched ground truth of its frame with the highest
/// IoU at or above the threshold (ties to the lowest index).
fn greedy_match(dets: &[(usize, &Detection)], gts: &[Vec<&Detection>], iou_threshold: f64) -> Vec<(f64, bool)> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| {
        dets[b]
            .1
            .confidence
            .partial_cmp(&dets[a].1.confidence)
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
    });
    let mut taken: Vec<Vec<bool>> = gts.iter().map(|g| vec![false; g.len()]).collect();
    order
        .into_iter()
        .map(|k| {
            let (frame, d) = dets[k];
            let mut best: Option<(usize, f64)> = None;
            for (gi, g) in gts[frame].iter().enumerate() {
                if taken[frame][gi] {
                    continue;
                }
                let v = iou(&d.rect(), &g.rect());
                if v >= iou_threshold && best.is_none_or(|(_, bv)| v > bv) {
                    best = Some((gi, v));
                }
            }
            if let Some((gi, _)) = best {
                taken[frame][gi] = true;
            }
            (d.confidence, best.is_some())
        })
        .collect()
}

/// Per-class AP, precision and recall over aligned frames.
pub fn evaluate_detections(dets: &[Vec<Detection>], gts: &[Vec<Detection>], cfg: &EvalConfig) -> Result<EvalReport> {
    cfg.validate()?;
    if dets.len() != gts.len() {
        return Err(Error::InvalidInput(format!(
            "detections cover {} frames but ground truth covers {}",
            dets.len(),
            gts.len()
        )));
    }
    let mut classes = Vec::new();
    for class in ClassId::all() {
        let class_dets: Vec<(usize, &Detection)> = dets
            .iter()
            .enumerate()
            .flat_map(|(f, ds)| ds.iter().map(move |d| (f, d)))
            .filter(|(_, d)| d.class_id == class && d.confidence >= cfg.confidence_threshold)
            .collect();
        let class_gts: Vec<Vec<&Detection>> = gts.iter().map(|g| g.iter().filter(|d| d.class_id == class).collect()).collect();
        let n_gt: usize = class_gts.iter().map(Vec::len).sum();
        if n_gt == 0 && class_dets.is_empty() {
            continue;
        }
        let marks = greedy_match(&class_dets, &class_gts, cfg.iou_threshold);
        let (mut tp, mut fp) = (0usize, 0usize);
        let mut pr_curve = Vec::with_capacity(marks.len());
        for &(conf, hit) in &marks {
            if hit {
                tp += 1;
            } else {
                fp += 1;
            }
            pr_curve.push(PrPoint {
                confidence: conf,
                precision: tp as f64 / (tp + fp) as f64,
                recall: if n_gt > 0 { tp as f64 / n_gt as f64 } else { 0.0 },
            });
        }
        let ap = (n_gt > 0).then(|| {
            let r: Vec<f64> = pr_curve.iter().map(|p| p.recall).collect();
            let p: Vec<f64> = pr_curve.iter().map(|p| p.precision).collect();
            average_precision(&r, &p)
        });
        classes.push(ClassMetrics {
            class_id: class,
            ap,
            precision: if tp + fp > 0 { tp as f64 / (tp + fp) as f64 } else { 0.0 },
            recall: if n_gt > 0 { tp as f64 / n_gt as f64 } else { 0.0 },
            tp,
            fp,
            fn_: n_gt - tp,
            pr_curve,
        });
    }
    let aps: Vec<f64> = classes.iter().filter_map(|c| c.ap).collect();
    let map = (!aps.is_empty()).then(|| aps.iter().sum::<f64>() / aps.len() as f64);
    Ok(EvalReport {
        interpolation: "all-points".into(),
        iou_threshold: cfg.iou_threshold,
        confidence_threshold: cfg.confidence_threshold,
        classes,
        map,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReprojectionRow {
    pub frame: String,
    pub error_px: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReprojectionReport {
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    pub rows: Vec<ReprojectionRow>,
}

pub fn summarize_reprojection(results: &[(String, f64)]) -> Result<ReprojectionReport> {
    if results.is_empty() {
        return Err(Error::InvalidInput("no reprojection results to summarize".into()));
    }
    if results.iter().any(|(_, e)| !(e.is_finite() && *e >= 0.0)) {
        return Err(Error::InvalidInput("reprojection errors must be finite and non-negative".into()));
    }
    let errs = results.iter().map(|r| r.1);
    Ok(ReprojectionReport {
        min: errs.clone().fold(f64::INFINITY, f64::min),
        max: errs.clone().fold(f64::NEG_INFINITY, f64::max),
        mean: errs.sum::<f64>() / results.len() as f64,
        rows: results.iter().map(|(f, e)| ReprojectionRow { frame: f.clone(), error_px: *e }).collect(),
    })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PseudoLabels {
    /// All confident RGB detections, with motion attribute (RGB frame).
    pub rgb: Vec<Detection>,
    /// Moving detections mapped into the event-camera frame.
    pub eb: Vec<Detection>,
}

/// Maps a box through `t` and clips it to `[0, w] x [0, h]`. Returns `None`
/// when less than `min_fraction` of the mapped area stays visible.
pub fn map_box_clipped(b: &BBox, t: &Affine<f64>, dims: (usize, usize), min_fraction: f64) -> Option<BBox> {
    let r = b.to_rect();
    let corners = [(r.x0, r.y0), (r.x1, r.y0), (r.x0, r.y1), (r.x1, r.y1)].map(|(x, y)| t.apply(&Point2::new(x, y)));
    let mapped = Rect::bounding(corners)?;
    let bounds = Rect::new(0.0, 0.0, dims.0 as f64, dims.1 as f64);
    let clipped = mapped.intersection(&bounds)?;
    let area = mapped.area();
    if !(area > 0.0) || clipped.area() < min_fraction * area || clipped.area() <= 0.0 {
        return None;
    }
    Some(BBox::from_rect(&clipped))
}

/// Confident RGB detections become RGB labels; those with object-motion flow
/// originating inside them are marked moving and also mapped into the
/// event-camera frame through the inverse calibration.
pub fn generate_pseudo_labels(
    rgb_dets: &[Detection],
    calib: &Affine<f64>,
    flow: &[FlowVector],
    eb_dims: (usize, usize),
    cfg: &EvalConfig,
) -> Result<PseudoLabels> {
    cfg.validate()?;
    let inv = calib.inverse()?;
    let (_, object) = classify_flow_vectors(flow, cfg.flow_margin);
    let mut out = PseudoLabels::default();
    for d in rgb_dets.iter().filter(|d| d.confidence >= cfg.pseudo_label_confidence) {
        let r = d.rect();
        let moving = object.iter().any(|v| r.contains(&v.origin));
        let label = d.with_moving(moving);
        out.rgb.push(label);
        if moving {
            if let Some(b) = map_box_clipped(&d.bbox, &inv, eb_dims, cfg.eb_min_visible_fraction) {
                out.eb.push(Detection { bbox: b, ..label });
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::DetectionSource;
    use proptest::prelude::*;

    fn d(class: ClassId, cx: f64, cy: f64, conf: f64) -> Detection {
        Detection::new(class, BBox::new(cx, cy, 20.0, 20.0), conf, DetectionSource::Rgb).unwrap()
    }

    #[test]
    fn perfect_detections() {
        let gts = vec![vec![d(ClassId::CAR, 50.0, 50.0, 1.0), d(ClassId::BUS, 150.0, 50.0, 1.0)], vec![d(ClassId::CAR, 80.0, 80.0, 1.0)]];
        let r = evaluate_detections(&gts, &gts, &EvalConfig::default()).unwrap();
        assert_eq!(r.classes.len(), 2);
        for c in &r.classes {
            assert_eq!((c.ap, c.precision, c.recall), (Some(1.0), 1.0, 1.0));
        }
        assert_eq!(r.map, Some(1.0));
    }

    #[test]
    fn zero_detections() {
        let gts = vec![vec![d(ClassId::CAR, 50.0, 50.0, 1.0)]];
        let r = evaluate_detections(&[vec![]], &gts, &EvalConfig::default()).unwrap();
        let c = &r.classes[0];
        assert_eq!((c.ap, c.precision, c.recall, c.fn_), (Some(0.0), 0.0, 0.0, 1));
    }

    #[test]
    fn hand_built_single_class() {
        // Three GT boxes; detections (confidence, hit?) in rank order:
        // 0.9 hit, 0.8 miss, 0.7 hit, 0.6 miss, 0.5 hit.
        let gts = vec![vec![d(ClassId::CAR, 0.0, 0.0, 1.0), d(ClassId::CAR, 100.0, 0.0, 1.0), d(ClassId::CAR, 200.0, 0.0, 1.0)]];
        let dets = vec![vec![
            d(ClassId::CAR, 0.0, 0.0, 0.9),
            d(ClassId::CAR, 500.0, 0.0, 0.8),
            d(ClassId::CAR, 101.0, 0.0, 0.7),
            d(ClassId::CAR, 600.0, 0.0, 0.6),
            d(ClassId::CAR, 199.0, 1.0, 0.5),
        ]];
        let r = evaluate_detections(&dets, &gts, &EvalConfig::default()).unwrap();
        let c = &r.classes[0];
        // Precision 1, 1/2, 2/3, 2/4, 3/5 at recall 1/3, 1/3, 2/3, 2/3, 1.
        let expected = (1.0 / 3.0) * 1.0 + (1.0 / 3.0) * (2.0 / 3.0) + (1.0 / 3.0) * 0.6;
        assert!((c.ap.unwrap() - expected).abs() < 1e-12);
        assert_eq!((c.tp, c.fp, c.fn_), (3, 2, 0));
        assert!((c.precision - 0.6).abs() < 1e-12);
    }

    #[test]
    fn low_confidence_discarded_and_class_without_gt() {
        let gts = vec![vec![d(ClassId::CAR, 0.0, 0.0, 1.0)]];
        let dets = vec![vec![d(ClassId::CAR, 0.0, 0.0, 0.29), d(ClassId::TRUCK, 0.0, 0.0, 0.9)]];
        let r = evaluate_detections(&dets, &gts, &EvalConfig::default()).unwrap();
        let car = r.classes.iter().find(|c| c.class_id == ClassId::CAR).unwrap();
        assert_eq!(car.tp, 0);
        let truck = r.classes.iter().find(|c| c.class_id == ClassId::TRUCK).unwrap();
        assert_eq!((truck.ap, truck.fp), (None, 1));
        assert_eq!(r.map, Some(0.0));
        assert!(evaluate_detections(&dets, &[], &EvalConfig::default()).is_err());
    }

    #[test]
    fn reprojection_summary() {
        let r = summarize_reprojection(&[("a".into(), 5.0)]).unwrap();
        assert_eq!((r.min, r.max, r.mean), (5.0, 5.0, 5.0));
        let r = summarize_reprojection(&[("1".into(), 3.37), ("2".into(), 10.16)]).unwrap();
        assert!((r.mean - 6.765).abs() < 1e-12);
        assert_eq!(r.rows.len(), 2);
        assert!(summarize_reprojection(&[]).is_err());
    }

    #[test]
    fn pseudo_label_examples() {
        let calib = Affine::scale_translate(3.0, 2.5, 0.0, 0.0).unwrap();
        let cfg = EvalConfig::default();
        let moving_car = d(ClassId::CAR, 300.0, 300.0, 0.9);
        let parked = d(ClassId::CAR, 900.0, 600.0, 0.95);
        let weak = d(ClassId::CAR, 1200.0, 300.0, 0.79);
        let mut flow: Vec<FlowVector> = (0..20).map(|i| FlowVector::new(Point2::new(50.0 * i as f64, 900.0), 0.1, 0.0)).collect();
        flow.push(FlowVector::new(Point2::new(305.0, 298.0), 8.0, 0.0));
        flow.push(FlowVector::new(Point2::new(1200.0, 300.0), 8.0, 0.0));
        let labels = generate_pseudo_labels(&[moving_car, parked, weak], &calib, &flow, (640, 480), &cfg).unwrap();
        assert_eq!(labels.rgb.len(), 2);
        assert!(labels.rgb[0].moving && !labels.rgb[1].moving);
        assert_eq!(labels.eb.len(), 1);
        let back = map_box_clipped(&labels.eb[0].bbox, &calib, (1920, 1200), 0.0).unwrap();
        assert!((back.cx - 300.0).abs() < 1e-9 && (back.w - 20.0).abs() < 1e-9);
    }

    #[test]
    fn clipping_threshold() {
        let t = Affine::identity();
        let b = BBox::new(0.0, 50.0, 20.0, 20.0);
        let clipped = map_box_clipped(&b, &t, (100, 100), 0.25).unwrap();
        assert_eq!(clipped.w, 10.0);
        assert!(map_box_clipped(&BBox::new(-8.0, 50.0, 20.0, 20.0), &t, (100, 100), 0.25).is_none());
    }

    proptest! {
        #[test]
        fn ap_invariant_under_monotone_rescoring(
            seeds in proptest::collection::vec((0.0f64..200.0, 0.0f64..200.0, 0.31f64..1.0), 1..8),
            gt in proptest::collection::vec((0.0f64..200.0, 0.0f64..200.0), 1..6),
        ) {
            let cfg = EvalConfig::default();
            let gts = vec![gt.iter().map(|&(x, y)| d(ClassId::CAR, x, y, 1.0)).collect::<Vec<_>>()];
            let dets = vec![seeds.iter().map(|&(x, y, c)| d(ClassId::CAR, x, y, c)).collect::<Vec<_>>()];
            let rescored = vec![dets[0].iter().map(|x| Detection { confidence: 0.3 + 0.7 * x.confidence.powi(3), ..*x }).collect::<Vec<_>>()];
            let a = evaluate_detections(&dets, &gts, &cfg).unwrap();
            let b = evaluate_detections(&rescored, &gts, &cfg).unwrap();
            prop_assert_eq!(a.classes[0].ap, b.classes[0].ap);
            let c = &a.classes[0];
            prop_assert_eq!(c.tp + c.fn_, gt.len());
            prop_assert_eq!(c.tp + c.fp, seeds.len());
        }
    }
}
