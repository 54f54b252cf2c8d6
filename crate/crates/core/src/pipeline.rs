//! Frame-level orchestration: the event and RGB preprocessing paths, sequence
//! calibration with best-frame selection, the late-fusion frame path and
//! pseudo-label generation.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::calibration::{calibrate_frame, reprojection_error, CalibrationConfig, CalibrationDiagnostics, Correspondence};
use crate::error::{Error, Result};
use crate::evaluation::{generate_pseudo_labels, EvalConfig, PseudoLabels};
use crate::events::{accumulate_frame, binarize_motion, enhance_edges, filter_noise_events, EventWindow, NoiseFilterConfig, DEFAULT_WINDOW_US, NO_EVENT};
use crate::fusion::{blend_early, map_detection, simple_late_fusion, spatiotemporal_late_fusion, warp_to_rgb, FusedObject, FusionConfig, StlfState};
use crate::geometry::Affine;
use crate::model::{BinaryMask, Detection, EdgeCloud, Event, GrayImage, RgbImage};
use crate::rgb::{
    canny_edges, classify_flow_vectors, combine_motion, compute_sparse_flow, gate_segmentation_masks, is_camera_shake, knn_background_mask, motion_edges,
    three_frame_motion, to_grayscale, two_frame_motion, BackgroundConfig, BackgroundModel, CannyConfig, FlowParams, MotionGateConfig, SegMask, ShakeConfig,
};
use crate::tracking::SortConfig;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EventPathConfig {
    pub window_us: u64,
    /// Run the spatiotemporal noise filter before accumulation.
    pub denoise: bool,
    pub noise_filter: NoiseFilterConfig,
}

impl Default for EventPathConfig {
    fn default() -> Self {
        Self { window_us: DEFAULT_WINDOW_US, denoise: true, noise_filter: NoiseFilterConfig::default() }
    }
}

impl EventPathConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window_us == 0 {
            return Err(Error::Config("event window must be positive".into()));
        }
        self.noise_filter.validate()
    }

    /// Events of `[t_end - window_us, t_end]`, denoised against their own
    /// history when enabled.
    pub fn window_events(&self, stream: &[Event], t_end: u64, dims: (usize, usize)) -> Result<Vec<Event>> {
        let t_start = t_end.saturating_sub(self.window_us);
        if !self.denoise {
            return Ok(EventWindow::ending_at(stream, t_end, self.window_us, dims.0, dims.1)?.events().to_vec());
        }
        let span = self.window_us + self.noise_filter.r_t_us;
        let history = EventWindow::ending_at(stream, t_end, span, dims.0, dims.1)?;
        let kept = filter_noise_events(history.events(), &self.noise_filter)?;
        Ok(kept.into_iter().filter(|e| e.t_us >= t_start).collect())
    }

    /// Accumulated event frame ending at `t_end`.
    pub fn event_frame(&self, stream: &[Event], t_end: u64, dims: (usize, usize)) -> Result<GrayImage> {
        let events = self.window_events(stream, t_end, dims)?;
        accumulate_frame(&EventWindow::new(&events, self.window_us, dims.0, dims.1)?)
    }

    /// Event-camera edge cloud for the window ending at `t_end`.
    pub fn edge_cloud(&self, stream: &[Event], t_end: u64, dims: (usize, usize)) -> Result<EdgeCloud<f64>> {
        let frame = self.event_frame(stream, t_end, dims)?;
        Ok(enhance_edges(&binarize_motion(&frame)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RgbPathConfig {
    pub gate: MotionGateConfig,
    /// OR the KNN foreground into the frame-difference motion.
    pub use_background: bool,
    pub background: BackgroundConfig,
    pub canny: CannyConfig,
    pub flow: FlowParams,
    pub shake: ShakeConfig,
}

impl Default for RgbPathConfig {
    fn default() -> Self {
        Self {
            gate: MotionGateConfig::default(),
            use_background: true,
            background: BackgroundConfig::default(),
            canny: CannyConfig::default(),
            flow: FlowParams::default(),
            shake: ShakeConfig::default(),
        }
    }
}

impl RgbPathConfig {
    pub fn validate(&self) -> Result<()> {
        self.gate.validate()?;
        if !(self.canny.low < self.canny.high) {
            return Err(Error::Config("canny needs low < high".into()));
        }
        if self.background.min_matches == 0 || self.background.min_matches > self.background.history {
            return Err(Error::Config("background min_matches must lie in 1..=history".into()));
        }
        Ok(())
    }
}

/// Which frame difference drives the RGB motion mask.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MotionMode {
    /// Three-frame difference, refined by gated segmentation masks.
    Calibration,
    /// Two-frame difference.
    Fusion,
}

/// Stateful RGB motion estimation for one camera stream. Frames must be pushed in order.
#[derive(Debug, Clone)]
pub struct RgbMotionTracker {
    cfg: RgbPathConfig,
    mode: MotionMode,
    history: VecDeque<GrayImage>,
    background: BackgroundModel,
}

impl RgbMotionTracker {
    pub fn new(dims: (usize, usize), cfg: RgbPathConfig, mode: MotionMode) -> Result<Self> {
        cfg.validate()?;
        Ok(Self { cfg, mode, history: VecDeque::with_capacity(3), background: BackgroundModel::new(dims.0, dims.1, cfg.background) })
    }

    /// Previous frame, if any.
    pub fn previous(&self) -> Option<&GrayImage> {
        self.history.back()
    }

    /// Motion mask for `frame`, or `None` while the frame history is too short
    /// for the configured difference.
    pub fn push(&mut self, frame: &GrayImage, masks: &[SegMask]) -> Result<Option<BinaryMask>> {
        let background_ready = self.background.history_len() >= self.cfg.background.min_matches;
        let foreground = if self.cfg.use_background { Some(knn_background_mask(&mut self.background, frame)?) } else { None };
        let needed = match self.mode {
            MotionMode::Calibration => 2,
            MotionMode::Fusion => 1,
        };
        let diff = if self.history.len() >= needed {
            let n = self.history.len();
            Some(match self.mode {
                MotionMode::Calibration => three_frame_motion(frame, &self.history[n - 1], &self.history[n - 2], self.cfg.gate.diff_threshold)?,
                MotionMode::Fusion => two_frame_motion(frame, &self.history[n - 1], self.cfg.gate.diff_threshold)?,
            })
        } else {
            None
        };
        self.history.push_back(frame.clone());
        while self.history.len() > 2 {
            self.history.pop_front();
        }
        let Some(mut motion) = diff else { return Ok(None) };
        if let (Some(fg), true) = (foreground, background_ready) {
            motion = combine_motion(&motion, &fg)?;
        }
        if self.mode == MotionMode::Calibration && !masks.is_empty() {
            let gated = gate_segmentation_masks(&motion, masks, &self.cfg.gate)?;
            motion = combine_motion(&motion, &gated)?;
        }
        Ok(Some(motion))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrameStatus {
    Calibrated,
    /// Not enough earlier frames for motion estimation.
    Warmup,
    CameraShake,
    Failed,
}

/// Calibration outcome for one frame.
#[derive(Debug, Clone, Serialize)]
pub struct FrameCalibration {
    pub frame_index: usize,
    pub status: FrameStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
    pub transform: Option<Affine<f64>>,
    pub inliers: usize,
    pub eb_edge_points: usize,
    pub rgb_edge_points: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub diagnostics: Option<CalibrationDiagnostics>,
    /// Mean reprojection error against ground truth, when available.
    pub reprojection_error: Option<f64>,
    #[serde(skip)]
    pub eb_edges: Option<EdgeCloud<f64>>,
    #[serde(skip)]
    pub rgb_edges: Option<EdgeCloud<f64>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub event: EventPathConfig,
    pub rgb: RgbPathConfig,
    pub calibration: CalibrationConfig,
    pub fusion: FusionConfig,
    pub sort: SortConfig,
    pub eval: EvalConfig,
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.event.validate()?;
        self.rgb.validate()?;
        self.calibration.validate()?;
        self.fusion.validate()?;
        self.sort.validate()?;
        self.eval.validate()
    }
}

/// Per-frame calibration over one sequence; frames must be pushed in order.
pub struct CalibrationSession<'a> {
    cfg: &'a PipelineConfig,
    events: &'a [Event],
    eb_dims: (usize, usize),
    motion: RgbMotionTracker,
    keep_edges: bool,
}

impl<'a> CalibrationSession<'a> {
    pub fn new(cfg: &'a PipelineConfig, events: &'a [Event], eb_dims: (usize, usize), rgb_dims: (usize, usize)) -> Result<Self> {
        cfg.validate()?;
        Ok(Self { cfg, events, eb_dims, motion: RgbMotionTracker::new(rgb_dims, cfg.rgb, MotionMode::Calibration)?, keep_edges: false })
    }

    /// Keep both edge clouds in each result, for overlays.
    pub fn keep_edges(mut self, keep: bool) -> Self {
        self.keep_edges = keep;
        self
    }

    /// Processes the RGB frame exposed at `t_end_us`. Only I/O-level problems
    /// are errors; calibration failures are reported in the result.
    pub fn push_frame(&mut self, frame_index: usize, t_end_us: u64, rgb: &RgbImage, masks: &[SegMask]) -> Result<FrameCalibration> {
        let gray = to_grayscale(rgb);
        let previous = self.motion.previous().cloned();
        let motion = self.motion.push(&gray, masks)?;
        let mut out = FrameCalibration {
            frame_index,
            status: FrameStatus::Warmup,
            message: None,
            transform: None,
            inliers: 0,
            eb_edge_points: 0,
            rgb_edge_points: 0,
            diagnostics: None,
            reprojection_error: None,
            eb_edges: None,
            rgb_edges: None,
        };
        let (Some(motion), Some(previous)) = (motion, previous) else { return Ok(out) };

        if self.cfg.rgb.shake.enabled {
            let flow = compute_sparse_flow(&previous, &gray, &self.cfg.rgb.flow)?;
            let (camera, object) = classify_flow_vectors(&flow, self.cfg.rgb.gate.flow_margin);
            if is_camera_shake(&camera, &object, &self.cfg.rgb.shake) {
                out.status = FrameStatus::CameraShake;
                return Ok(out);
            }
        }
        let edges = canny_edges(&gray, self.cfg.rgb.canny.low, self.cfg.rgb.canny.high)?;
        let rgb_edges: EdgeCloud<f64> = motion_edges(&edges, &motion)?;
        let eb_edges = self.cfg.event.edge_cloud(self.events, t_end_us, self.eb_dims)?;
        out.eb_edge_points = eb_edges.len();
        out.rgb_edge_points = rgb_edges.len();
        match calibrate_frame(&eb_edges, &rgb_edges, &self.cfg.calibration) {
            Ok(r) => {
                out.status = FrameStatus::Calibrated;
                out.transform = Some(r.transform);
                out.inliers = r.inlier_count;
                out.diagnostics = Some(r.diagnostics);
            }
            Err(Error::CalibrationFailed { reason, diagnostics }) => {
                out.status = FrameStatus::Failed;
                out.message = Some(reason);
                out.diagnostics = serde_json::from_str(&diagnostics).ok();
            }
            Err(e) => return Err(e),
        }
        if self.keep_edges {
            out.eb_edges = Some(eb_edges);
            out.rgb_edges = Some(rgb_edges);
        }
        Ok(out)
    }
}

/// Fills in reprojection errors against pooled ground-truth pairs.
pub fn score_frames(frames: &mut [FrameCalibration], gt: &[Correspondence<f64>]) -> Result<()> {
    if gt.is_empty() {
        return Ok(());
    }
    for f in frames.iter_mut() {
        if let Some(t) = &f.transform {
            f.reprojection_error = Some(reprojection_error(t, gt)?);
        }
    }
    Ok(())
}

/// Picks the calibrated frame with the most RANSAC inliers, ties to the earliest.
pub fn select_by_inliers(frames: &[FrameCalibration]) -> Option<usize> {
    frames
        .iter()
        .enumerate()
        .filter(|(_, f)| f.status == FrameStatus::Calibrated)
        .fold(None, |best: Option<(usize, usize)>, (i, f)| match best {
            Some((_, n)) if n >= f.inliers => best,
            _ => Some((i, f.inliers)),
        })
        .map(|(i, _)| i)
}

/// Picks the calibrated frame with the smallest reprojection error, ties to the earliest.
pub fn select_by_error(frames: &[FrameCalibration]) -> Option<usize> {
    frames
        .iter()
        .enumerate()
        .filter_map(|(i, f)| f.reprojection_error.map(|e| (i, e)))
        .fold(None, |best: Option<(usize, f64)>, (i, e)| match best {
            Some((_, b)) if b <= e => best,
            _ => Some((i, e)),
        })
        .map(|(i, _)| i)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionMode {
    Slf,
    Stlf,
}

/// Outputs of the late-fusion frame path.
#[derive(Debug, Clone)]
pub struct FusionFrame {
    pub fused: Vec<FusedObject>,
    pub motion: BinaryMask,
    /// Accumulated event frame at event-camera resolution.
    pub event_frame: GrayImage,
}

/// Late fusion over one sequence; frames must be pushed in order.
pub struct FusionSession<'a> {
    cfg: &'a PipelineConfig,
    calib: Affine<f64>,
    eb_dims: (usize, usize),
    motion: RgbMotionTracker,
    stlf: Option<StlfState>,
}

impl<'a> FusionSession<'a> {
    pub fn new(cfg: &'a PipelineConfig, calib: Affine<f64>, eb_dims: (usize, usize), rgb_dims: (usize, usize), mode: FusionMode) -> Result<Self> {
        cfg.validate()?;
        let stlf = match mode {
            FusionMode::Slf => None,
            FusionMode::Stlf => Some(StlfState::new(cfg.sort)?),
        };
        Ok(Self { cfg, calib, eb_dims, motion: RgbMotionTracker::new(rgb_dims, cfg.rgb, MotionMode::Fusion)?, stlf })
    }

    /// One frame: preprocesses both sensors, estimates RGB motion, maps EB
    /// detections into the RGB frame and fuses. `eb_dets` are in EB pixels.
    pub fn push_frame(&mut self, rgb: &RgbImage, events: &[Event], t_end_us: u64, rgb_dets: &[Detection], eb_dets: &[Detection]) -> Result<FusionFrame> {
        let gray = to_grayscale(rgb);
        let event_frame = self.cfg.event.event_frame(events, t_end_us, self.eb_dims)?;
        let motion = self.motion.push(&gray, &[])?.unwrap_or_else(|| BinaryMask::empty(gray.width(), gray.height()));
        let mapped: Vec<Detection> = eb_dets.iter().map(|d| map_detection(d, &self.calib)).collect();
        let fused = match &mut self.stlf {
            None => simple_late_fusion(rgb_dets, &mapped, &motion, &self.cfg.fusion),
            Some(state) => spatiotemporal_late_fusion(state, rgb_dets, &mapped, &motion, &self.cfg.fusion),
        };
        Ok(FusionFrame { fused, motion, event_frame })
    }
}

/// Early fusion input for an external detector: the event frame warped into
/// the RGB view and alpha-blended with the RGB frame.
pub fn early_fusion_frame(cfg: &PipelineConfig, calib: &Affine<f64>, rgb: &RgbImage, events: &[Event], t_end_us: u64, eb_dims: (usize, usize)) -> Result<RgbImage> {
    let frame = cfg.event.event_frame(events, t_end_us, eb_dims)?;
    let warped = warp_to_rgb(&frame, calib, rgb.dims(), NO_EVENT)?;
    blend_early(&RgbImage::from_gray(&warped), rgb, cfg.fusion.blend_alpha)
}

/// Pseudo-labels for frame `k` of `frames`, with flow measured from frame `k`
/// to its successor (or predecessor for the last frame) so that vectors
/// originate at the objects' current positions.
pub fn pseudo_labels_for_frame(
    cfg: &PipelineConfig,
    frames: &[GrayImage],
    k: usize,
    rgb_dets: &[Detection],
    calib: &Affine<f64>,
    eb_dims: (usize, usize),
) -> Result<PseudoLabels> {
    let neighbor = if k + 1 < frames.len() { Some(k + 1) } else { k.checked_sub(1) };
    let flow = match neighbor {
        Some(j) => compute_sparse_flow(&frames[k], &frames[j], &cfg.rgb.flow)?,
        None => Vec::new(),
    };
    generate_pseudo_labels(rgb_dets, calib, &flow, eb_dims, &cfg.eval)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::events::NoiseFilterConfig;
    use crate::model::{ClassId, DetectionSource, Polarity};

    #[test]
    fn fusion_motion_needs_one_previous_frame() {
        let cfg = RgbPathConfig { use_background: false, ..Default::default() };
        let mut t = RgbMotionTracker::new((4, 4), cfg, MotionMode::Fusion).unwrap();
        assert!(t.push(&GrayImage::filled(4, 4, 10), &[]).unwrap().is_none());
        let m = t.push(&GrayImage::filled(4, 4, 100), &[]).unwrap().unwrap();
        assert_eq!(m.count(), 16);
    }

    #[test]
    fn calibration_motion_needs_two_previous_frames_and_gates_masks() {
        let cfg = RgbPathConfig { use_background: false, ..Default::default() };
        let mut t = RgbMotionTracker::new((10, 10), cfg, MotionMode::Calibration).unwrap();
        let frame = |v: u8| GrayImage::from_vec(10, 10, (0..100).map(|i| if i % 10 < 5 { v } else { 0 }).collect()).unwrap();
        let seg = SegMask { mask: BinaryMask::from_fn(10, 10, |x, _| x < 7), class_id: ClassId::CAR };
        assert!(t.push(&frame(0), std::slice::from_ref(&seg)).unwrap().is_none());
        assert!(t.push(&frame(100), std::slice::from_ref(&seg)).unwrap().is_none());
        let m = t.push(&frame(200), std::slice::from_ref(&seg)).unwrap().unwrap();
        // The left half moves; the mask is gated in and widens the motion to x < 7.
        assert_eq!(m, seg.mask);
    }

    #[test]
    fn background_skipped_until_history_exists() {
        let mut t = RgbMotionTracker::new((4, 4), RgbPathConfig::default(), MotionMode::Fusion).unwrap();
        let f = GrayImage::filled(4, 4, 50);
        t.push(&f, &[]).unwrap();
        // One history sample is below min_matches; the empty-history foreground is ignored.
        assert_eq!(t.push(&f, &[]).unwrap().unwrap().count(), 0);
        assert_eq!(t.push(&f, &[]).unwrap().unwrap().count(), 0);
    }

    #[test]
    fn window_events_drop_isolated_noise() {
        let mut events: Vec<Event> = (0..40).map(|i| Event::new(10, 10, 1000 + i * 10, Polarity::Positive)).collect();
        events.push(Event::new(50, 50, 1500, Polarity::Negative));
        events.sort_by_key(|e| e.t_us);
        let cfg = EventPathConfig::default();
        let kept = cfg.window_events(&events, 2000, (64, 64)).unwrap();
        assert!(kept.iter().all(|e| e.x == 10));
        assert_eq!(kept.len(), 40 - 29);
        let raw = EventPathConfig { denoise: false, noise_filter: NoiseFilterConfig::default(), ..cfg };
        assert_eq!(raw.window_events(&events, 2000, (64, 64)).unwrap().len(), 41);
    }

    #[test]
    fn selection_rules() {
        let mk = |i, status, inliers, err| FrameCalibration {
            frame_index: i,
            status,
            message: None,
            transform: None,
            inliers,
            eb_edge_points: 0,
            rgb_edge_points: 0,
            diagnostics: None,
            reprojection_error: err,
            eb_edges: None,
            rgb_edges: None,
        };
        let frames = vec![
            mk(0, FrameStatus::Warmup, 0, None),
            mk(1, FrameStatus::Calibrated, 50, Some(4.0)),
            mk(2, FrameStatus::Calibrated, 80, Some(3.0)),
            mk(3, FrameStatus::Calibrated, 80, Some(3.0)),
            mk(4, FrameStatus::Failed, 0, None),
        ];
        assert_eq!(select_by_inliers(&frames), Some(2));
        assert_eq!(select_by_error(&frames), Some(2));
        assert_eq!(select_by_inliers(&frames[..1]), None);
    }

    #[test]
    fn slf_session_maps_event_detections() {
        let cfg = PipelineConfig::default();
        let calib = Affine::scale_translate(3.0, 3.0, 0.0, 0.0).unwrap();
        let mut s = FusionSession::new(&cfg, calib, (40, 30), (120, 90), FusionMode::Slf).unwrap();
        let rgb = RgbImage::filled(120, 90, [50, 50, 50]);
        let eb = Detection::new(ClassId::CAR, crate::model::BBox::new(10.0, 10.0, 4.0, 4.0), 0.9, DetectionSource::Event).unwrap();
        let out = s.push_frame(&rgb, &[], 33_333, &[], &[eb]).unwrap();
        assert_eq!(out.fused.len(), 1);
        assert_eq!(out.fused[0].detection.bbox.cx, 30.0);
        assert_eq!(out.motion.count(), 0);
    }
}
