//! Deterministic synthetic scenes: RGB frames, an event stream rendered through
//! a known EB→RGB affine, segmentation masks, simulated detector outputs,
//! ground-truth labels and exact point correspondences.
//!
//! The scene lives in RGB pixel coordinates. An EB pixel `u` observes the scene
//! at `ground_truth.apply(u)`; pixel centers sit on integer coordinates in both
//! sensors. Object `k` is centered at `start + velocity * (tau - start_frame)` at
//! frame time `tau`, where frame `k` is exposed at `tau = k`, i.e. at
//! `(k + 1) * frame_interval_us` on the event clock.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::calibration::Correspondence;
use crate::error::{Error, Result};
use crate::geometry::{Affine, Point2, Rect};
use crate::io::{
    self, FrameCorrespondences, FrameDetections, FrameEntry, Illumination, SequenceManifest,
};
use crate::model::{BBox, BinaryMask, ClassId, Detection, DetectionSource, Event, Polarity, RgbImage};
use crate::rgb::SegMask;

/// Reference window for the noise rate.
const NOISE_RATE_WINDOW_US: f64 = 5000.0;
/// Largest EB-pixel displacement of any object between two event-model substeps.
const MAX_SUBSTEP_MOTION_EB_PX: f64 = 0.25;
const RGB_SUPERSAMPLE: usize = 4;
const EB_SUPERSAMPLE: usize = 5;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Shape {
    #[default]
    Rectangle,
    Ellipse,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneObject {
    pub shape: Shape,
    pub class_id: ClassId,
    /// Width and height in RGB pixels.
    pub size: [f64; 2],
    /// RGB pixels per frame.
    pub velocity: [f64; 2],
    pub intensity: u8,
    /// Center in RGB pixels at `start_frame`.
    pub start: [f64; 2],
    pub start_frame: usize,
}

impl Default for SceneObject {
    fn default() -> Self {
        Self {
            shape: Shape::Rectangle,
            class_id: ClassId::CAR,
            size: [180.0, 120.0],
            velocity: [20.0, -15.0],
            intensity: 210,
            start: [960.0, 600.0],
            start_frame: 0,
        }
    }
}

impl SceneObject {
    pub fn center(&self, tau: f64) -> Point2<f64> {
        let dt = tau - self.start_frame as f64;
        Point2::new(self.start[0] + self.velocity[0] * dt, self.start[1] + self.velocity[1] * dt)
    }

    pub fn rect(&self, tau: f64) -> Rect<f64> {
        let c = self.center(tau);
        Rect::from_center(c.x, c.y, self.size[0], self.size[1])
    }

    pub fn is_moving(&self) -> bool {
        self.velocity[0] != 0.0 || self.velocity[1] != 0.0
    }

    fn contains(&self, c: Point2<f64>, p: Point2<f64>) -> bool {
        let dx = (p.x - c.x) / (0.5 * self.size[0]);
        let dy = (p.y - c.y) / (0.5 * self.size[1]);
        match self.shape {
            Shape::Rectangle => dx.abs() < 1.0 && dy.abs() < 1.0,
            Shape::Ellipse => dx * dx + dy * dy < 1.0,
        }
    }

    /// Points on the outline in RGB pixels, `per_side` samples per rectangle side
    /// or `4 * per_side` around an ellipse.
    pub fn outline(&self, tau: f64, per_side: usize) -> Vec<Point2<f64>> {
        let c = self.center(tau);
        let (hw, hh) = (0.5 * self.size[0], 0.5 * self.size[1]);
        match self.shape {
            Shape::Rectangle => {
                let mut out = Vec::with_capacity(4 * per_side);
                for i in 0..per_side {
                    let f = (i as f64 + 0.5) / per_side as f64;
                    let x = c.x - hw + f * self.size[0];
                    let y = c.y - hh + f * self.size[1];
                    out.push(Point2::new(x, c.y - hh));
                    out.push(Point2::new(x, c.y + hh));
                    out.push(Point2::new(c.x - hw, y));
                    out.push(Point2::new(c.x + hw, y));
                }
                out
            }
            Shape::Ellipse => (0..4 * per_side)
                .map(|i| {
                    let a = std::f64::consts::TAU * i as f64 / (4 * per_side) as f64;
                    Point2::new(c.x + hw * a.cos(), c.y + hh * a.sin())
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseConfig {
    /// Uniform noise events per pixel per 5 ms.
    pub event_noise_rate: f64,
    /// Standard deviation of additive Gaussian noise on RGB intensities.
    pub rgb_gaussian_sigma: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self { event_noise_rate: 0.002, rgb_gaussian_sigma: 1.0 }
    }
}

/// Stand-in for the external detectors: jittered ground truth plus spurious boxes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorSimConfig {
    pub rgb_confidence: [f64; 2],
    pub rgb_miss_rate: f64,
    pub rgb_jitter_px: f64,
    /// Expected spurious RGB boxes per frame.
    pub spurious_per_frame: f64,
    pub spurious_confidence: [f64; 2],
    pub eb_confidence: [f64; 2],
    pub eb_miss_rate: f64,
    pub eb_jitter_px: f64,
}

impl Default for DetectorSimConfig {
    fn default() -> Self {
        Self {
            rgb_confidence: [0.5, 0.98],
            rgb_miss_rate: 0.05,
            rgb_jitter_px: 3.0,
            spurious_per_frame: 0.5,
            spurious_confidence: [0.3, 0.7],
            eb_confidence: [0.4, 0.95],
            eb_miss_rate: 0.1,
            eb_jitter_px: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneConfig {
    pub name: String,
    pub seed: u64,
    pub rgb_resolution: [usize; 2],
    pub eb_resolution: [usize; 2],
    /// Maps EB pixel coordinates to RGB pixel coordinates.
    pub ground_truth: Affine<f64>,
    pub objects: Vec<SceneObject>,
    pub frames: usize,
    pub frame_interval_us: u64,
    pub background: u8,
    /// Number of static rectangles scattered over the background.
    pub clutter: usize,
    /// Segmentation masks are the object shapes grown by this many RGB pixels.
    pub mask_margin_px: f64,
    pub illumination: Illumination,
    pub noise: NoiseConfig,
    pub detector: DetectorSimConfig,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            name: "synthetic".into(),
            seed: 0,
            rgb_resolution: [1920, 1200],
            eb_resolution: [640, 480],
            ground_truth: Affine::from_params([2.95, 0.02, 14.0, -0.015, 2.92, -96.0]).expect("invertible"),
            objects: vec![
                SceneObject { start: [520.0, 330.0], velocity: [22.0, -12.0], ..Default::default() },
                SceneObject {
                    shape: Shape::Ellipse,
                    class_id: ClassId::PEDESTRIAN,
                    size: [90.0, 150.0],
                    velocity: [-14.0, -10.0],
                    intensity: 40,
                    start: [1420.0, 320.0],
                    start_frame: 0,
                },
                SceneObject {
                    shape: Shape::Rectangle,
                    class_id: ClassId::TRUCK,
                    size: [230.0, 140.0],
                    velocity: [18.0, 14.0],
                    intensity: 190,
                    start: [500.0, 880.0],
                    start_frame: 0,
                },
                SceneObject {
                    shape: Shape::Rectangle,
                    class_id: ClassId::CAR,
                    size: [170.0, 110.0],
                    velocity: [0.0, 0.0],
                    intensity: 230,
                    start: [1450.0, 900.0],
                    start_frame: 0,
                },
            ],
            frames: 8,
            frame_interval_us: 33_333,
            background: 60,
            clutter: 40,
            mask_margin_px: 3.0,
            illumination: Illumination::Day,
            noise: NoiseConfig::default(),
            detector: DetectorSimConfig::default(),
        }
    }
}

fn uniform(rng: &mut ChaCha8Rng, range: [f64; 2]) -> f64 {
    if range[1] > range[0] {
        rng.random_range(range[0]..range[1])
    } else {
        range[0]
    }
}

fn random_ground_truth(rng: &mut ChaCha8Rng) -> Affine<f64> {
    let sx = rng.random_range(2.85..3.0);
    let sy = rng.random_range(2.85..3.0);
    let shx = rng.random_range(-0.02..0.02);
    let shy = rng.random_range(-0.02..0.02);
    let tx = rng.random_range(-10.0..30.0);
    let ty = rng.random_range(-110.0..-70.0);
    Affine::from_params([sx, shx, tx, shy, sy, ty]).expect("diagonally dominant")
}

impl SceneConfig {
    /// One rectangle moving up and to the right under a randomized near-3x affine.
    pub fn random_single(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ground_truth = random_ground_truth(&mut rng);
        let speed = rng.random_range(27.0..36.0);
        let angle = rng.random_range(30f64..60.0).to_radians();
        let object = SceneObject {
            class_id: ClassId::CAR,
            size: [rng.random_range(150.0..300.0), rng.random_range(110.0..220.0)],
            velocity: [speed * angle.cos(), -speed * angle.sin()],
            intensity: rng.random_range(190..=240),
            start: [rng.random_range(700.0..1100.0), rng.random_range(550.0..750.0)],
            start_frame: 0,
            shape: Shape::Rectangle,
        };
        Self {
            name: format!("single-{seed}"),
            seed,
            ground_truth,
            objects: vec![object],
            frames: 5,
            ..Default::default()
        }
    }

    /// `count` (at most 4) objects, one per image quadrant, moving in independent
    /// random directions, plus uniform noise events.
    pub fn random_multi(seed: u64, count: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6d75_6c74_6900);
        let ground_truth = random_ground_truth(&mut rng);
        let anchors = [[480.0, 300.0], [1430.0, 300.0], [480.0, 900.0], [1430.0, 900.0]];
        let classes = [ClassId::CAR, ClassId::TRUCK, ClassId::BUS, ClassId::CAR];
        let objects = anchors
            .iter()
            .zip(classes)
            .take(count.min(4))
            .map(|(a, class_id)| {
                let speed = rng.random_range(12.0..25.0);
                let angle = rng.random_range(0.0..std::f64::consts::TAU);
                SceneObject {
                    shape: if rng.random_bool(0.25) { Shape::Ellipse } else { Shape::Rectangle },
                    class_id,
                    size: [rng.random_range(110.0..180.0), rng.random_range(90.0..170.0)],
                    velocity: [speed * angle.cos(), speed * angle.sin()],
                    intensity: rng.random_range(180..=240),
                    start: [a[0] + rng.random_range(-60.0..60.0), a[1] + rng.random_range(-40.0..40.0)],
                    start_frame: 0,
                }
            })
            .collect();
        Self {
            name: format!("multi-{seed}"),
            seed,
            ground_truth,
            objects,
            frames: 5,
            noise: NoiseConfig { event_noise_rate: 0.005, ..Default::default() },
            ..Default::default()
        }
    }

    pub fn rgb_dims(&self) -> (usize, usize) {
        (self.rgb_resolution[0], self.rgb_resolution[1])
    }

    pub fn eb_dims(&self) -> (usize, usize) {
        (self.eb_resolution[0], self.eb_resolution[1])
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.rgb_resolution.contains(&0) || self.eb_resolution.contains(&0) {
            return bad("resolutions must be non-zero".into());
        }
        if self.eb_resolution.iter().any(|&v| v > u16::MAX as usize + 1) {
            return bad("event-camera resolution exceeds 16-bit pixel indices".into());
        }
        if self.frames == 0 || self.frame_interval_us == 0 {
            return bad("frames and frame_interval_us must be positive".into());
        }
        if !(self.noise.event_noise_rate >= 0.0 && self.noise.event_noise_rate.is_finite())
            || !(self.noise.rgb_gaussian_sigma >= 0.0 && self.noise.rgb_gaussian_sigma.is_finite())
            || !(self.mask_margin_px >= 0.0)
        {
            return bad("noise rates, sigma and mask margin must be finite and non-negative".into());
        }
        let d = &self.detector;
        let prob = |v: f64| (0.0..=1.0).contains(&v);
        if ![d.rgb_miss_rate, d.eb_miss_rate].iter().all(|&v| prob(v))
            || ![d.rgb_confidence, d.spurious_confidence, d.eb_confidence]
                .iter()
                .all(|r| prob(r[0]) && prob(r[1]) && r[0] <= r[1])
            || !(d.spurious_per_frame >= 0.0 && d.rgb_jitter_px >= 0.0 && d.eb_jitter_px >= 0.0)
        {
            return bad(format!("invalid detector simulation settings: {d:?}"));
        }
        let inv = self.ground_truth.inverse()?;
        let rgb_view = Rect::new(-0.5, -0.5, self.rgb_resolution[0] as f64 - 0.5, self.rgb_resolution[1] as f64 - 0.5);
        let eb_view = Rect::new(-0.5, -0.5, self.eb_resolution[0] as f64 - 0.5, self.eb_resolution[1] as f64 - 0.5);
        for (k, o) in self.objects.iter().enumerate() {
            let finite = o.velocity.iter().chain(&o.start).chain(&o.size).all(|v| v.is_finite());
            if !finite || o.size[0] <= 0.0 || o.size[1] <= 0.0 {
                return bad(format!("object {k} needs finite geometry and positive size"));
            }
            let visible = (0..self.frames).any(|f| {
                let r = o.rect(f as f64);
                r.intersection(&rgb_view).is_some() || map_rect(&inv, &r).intersection(&eb_view).is_some()
            });
            if !visible {
                return bad(format!("object {k} never enters either field of view"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EventModelConfig {
    /// Log-intensity change per event.
    pub contrast_threshold: f64,
    /// Minimum gap between two events of one pixel; crossings inside it are lost.
    pub refractory_us: u64,
}

impl Default for EventModelConfig {
    fn default() -> Self {
        Self { contrast_threshold: 0.2, refractory_us: 100 }
    }
}

impl EventModelConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.contrast_threshold > 0.0 && self.contrast_threshold.is_finite()) {
            return Err(Error::Config(format!("contrast threshold must be positive, got {}", self.contrast_threshold)));
        }
        Ok(())
    }
}

/// Everything a generated scene provides, in memory.
#[derive(Debug, Clone)]
pub struct SyntheticScene {
    pub config: SceneConfig,
    pub manifest: SequenceManifest,
    pub frames: Vec<RgbImage>,
    pub masks: Vec<Vec<SegMask>>,
    pub events: Vec<Event>,
    /// All objects visible to the RGB camera, in RGB pixels.
    pub labels_rgb: Vec<FrameDetections>,
    /// Moving objects visible to the event camera, in EB pixels.
    pub labels_eb: Vec<FrameDetections>,
    pub correspondences: Vec<FrameCorrespondences>,
    pub detections_rgb: Vec<FrameDetections>,
    /// Simulated event-camera detector output, in EB pixels.
    pub detections_eb: Vec<FrameDetections>,
}

impl SyntheticScene {
    /// Frame span `[t0, t1)` on the event clock; the frame is exposed at `t1`.
    pub fn frame_span(&self, k: usize) -> (u64, u64) {
        let i = self.config.frame_interval_us;
        (k as u64 * i, (k as u64 + 1) * i)
    }
}

fn map_rect(t: &Affine<f64>, r: &Rect<f64>) -> Rect<f64> {
    let corners = [(r.x0, r.y0), (r.x1, r.y0), (r.x0, r.y1), (r.x1, r.y1)];
    Rect::bounding(corners.iter().map(|&(x, y)| t.apply(&Point2::new(x, y)))).expect("four corners")
}

/// Pixel index range `[lo, hi)` covering `r` grown by `pad`, clipped to `w x h`.
fn pixel_span(r: &Rect<f64>, pad: f64, w: usize, h: usize) -> Option<(usize, usize, usize, usize)> {
    let x0 = (r.x0 - pad).floor().max(0.0);
    let y0 = (r.y0 - pad).floor().max(0.0);
    let x1 = (r.x1 + pad).ceil().min(w as f64);
    let y1 = (r.y1 + pad).ceil().min(h as f64);
    (x0 < x1 && y0 < y1).then_some((x0 as usize, y0 as usize, x1 as usize, y1 as usize))
}

fn sample_offsets(n: usize) -> Vec<f64> {
    (0..n).map(|i| -0.5 + (i as f64 + 0.5) / n as f64).collect()
}

/// Scene layers composited back to front with area coverage.
struct Renderer<'a> {
    cfg: &'a SceneConfig,
    inv: Affine<f64>,
    clutter: Vec<SceneObject>,
    rgb_offsets: Vec<f64>,
    /// EB subpixel offsets mapped into RGB space by the linear part of the ground truth.
    eb_offsets: Vec<Point2<f64>>,
    rgb_background: Vec<f32>,
    eb_background: Vec<f64>,
}

impl<'a> Renderer<'a> {
    fn new(cfg: &'a SceneConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        let inv = cfg.ground_truth.inverse()?;
        let (w, h) = cfg.rgb_dims();
        let clutter = (0..cfg.clutter)
            .map(|_| SceneObject {
                shape: Shape::Rectangle,
                class_id: ClassId::CAR,
                size: [rng.random_range(20.0..90.0), rng.random_range(20.0..90.0)],
                velocity: [0.0, 0.0],
                intensity: rng.random_range(30..=220),
                start: [rng.random_range(0.0..w as f64), rng.random_range(0.0..h as f64)],
                start_frame: 0,
            })
            .collect();
        let m = cfg.ground_truth.matrix();
        let off = sample_offsets(EB_SUPERSAMPLE);
        let eb_offsets = off
            .iter()
            .flat_map(|&dy| off.iter().map(move |&dx| (dx, dy)))
            .map(|(dx, dy)| Point2::new(m[0][0] * dx + m[0][1] * dy, m[1][0] * dx + m[1][1] * dy))
            .collect();
        let mut r = Self {
            cfg,
            inv,
            clutter,
            rgb_offsets: sample_offsets(RGB_SUPERSAMPLE),
            eb_offsets,
            rgb_background: vec![cfg.background as f32; w * h],
            eb_background: Vec::new(),
        };
        let mut rgb_bg = std::mem::take(&mut r.rgb_background);
        for c in &r.clutter {
            r.composite_rgb(&mut rgb_bg, c, 0.0);
        }
        r.rgb_background = rgb_bg;
        let (ew, eh) = cfg.eb_dims();
        let mut eb_bg = vec![cfg.background as f64; ew * eh];
        for c in &r.clutter {
            r.composite_eb(&mut eb_bg, c, 0.0);
        }
        r.eb_background = eb_bg;
        Ok(r)
    }

    fn rgb_coverage(&self, o: &SceneObject, c: Point2<f64>, x: usize, y: usize) -> f64 {
        let mut hits = 0;
        for &dy in &self.rgb_offsets {
            for &dx in &self.rgb_offsets {
                hits += o.contains(c, Point2::new(x as f64 + dx, y as f64 + dy)) as usize;
            }
        }
        hits as f64 / (self.rgb_offsets.len() * self.rgb_offsets.len()) as f64
    }

    fn eb_coverage(&self, o: &SceneObject, c: Point2<f64>, u: usize, v: usize) -> f64 {
        let base = self.cfg.ground_truth.apply(&Point2::new(u as f64, v as f64));
        let hits = self
            .eb_offsets
            .iter()
            .filter(|d| o.contains(c, Point2::new(base.x + d.x, base.y + d.y)))
            .count();
        hits as f64 / self.eb_offsets.len() as f64
    }

    fn composite_rgb(&self, img: &mut [f32], o: &SceneObject, tau: f64) {
        let (w, h) = self.cfg.rgb_dims();
        let c = o.center(tau);
        let Some((x0, y0, x1, y1)) = pixel_span(&o.rect(tau), 1.0, w, h) else { return };
        let value = o.intensity as f32;
        for y in y0..y1 {
            for x in x0..x1 {
                let a = self.rgb_coverage(o, c, x, y) as f32;
                if a > 0.0 {
                    let p = &mut img[y * w + x];
                    *p = *p * (1.0 - a) + value * a;
                }
            }
        }
    }

    fn eb_rect(&self, o: &SceneObject, tau: f64) -> Rect<f64> {
        map_rect(&self.inv, &o.rect(tau))
    }

    fn composite_eb(&self, img: &mut [f64], o: &SceneObject, tau: f64) {
        let (w, h) = self.cfg.eb_dims();
        let c = o.center(tau);
        let Some((x0, y0, x1, y1)) = pixel_span(&self.eb_rect(o, tau), 1.0, w, h) else { return };
        for v in y0..y1 {
            for u in x0..x1 {
                let a = self.eb_coverage(o, c, u, v);
                if a > 0.0 {
                    let p = &mut img[v * w + u];
                    *p = *p * (1.0 - a) + o.intensity as f64 * a;
                }
            }
        }
    }

    fn eb_pixel(&self, u: usize, v: usize, tau: f64, spans: &[Option<(usize, usize, usize, usize)>]) -> f64 {
        let w = self.cfg.eb_resolution[0];
        let mut value = self.eb_background[v * w + u];
        for (o, span) in self.cfg.objects.iter().zip(spans) {
            let Some((x0, y0, x1, y1)) = *span else { continue };
            if u < x0 || u >= x1 || v < y0 || v >= y1 {
                continue;
            }
            let a = self.eb_coverage(o, o.center(tau), u, v);
            value = value * (1.0 - a) + o.intensity as f64 * a;
        }
        value
    }

    fn eb_spans(&self, tau: f64) -> Vec<Option<(usize, usize, usize, usize)>> {
        let (w, h) = self.cfg.eb_dims();
        self.cfg.objects.iter().map(|o| pixel_span(&self.eb_rect(o, tau), 1.0, w, h)).collect()
    }

    fn rgb_frame(&self, tau: f64, rng: &mut ChaCha8Rng) -> RgbImage {
        let (w, h) = self.cfg.rgb_dims();
        let mut img = self.rgb_background.clone();
        for o in &self.cfg.objects {
            self.composite_rgb(&mut img, o, tau);
        }
        let sigma = self.cfg.noise.rgb_gaussian_sigma;
        let noise = (sigma > 0.0).then(|| Normal::new(0.0f32, sigma as f32).expect("finite sigma"));
        let mut data = Vec::with_capacity(w * h * 3);
        for p in img {
            let n = noise.map_or(0.0, |d| d.sample(rng));
            let v = (p + n).round().clamp(0.0, 255.0) as u8;
            data.extend_from_slice(&[v, v, v]);
        }
        RgbImage::from_vec(w, h, data).expect("sized buffer")
    }
}

fn log_intensity(v: f64) -> f64 {
    v.max(1.0).ln()
}

/// Per-pixel event generation from the log-intensity field.
struct EventSimulator {
    reference: Vec<f64>,
    last_event: Vec<Option<u64>>,
    dirty: Vec<bool>,
}

impl EventSimulator {
    fn new(r: &Renderer<'_>) -> Self {
        let (w, h) = r.cfg.eb_dims();
        let tau0 = -1.0;
        let spans = r.eb_spans(tau0);
        let mut reference = Vec::with_capacity(w * h);
        for v in 0..h {
            for u in 0..w {
                reference.push(log_intensity(r.eb_pixel(u, v, tau0, &spans)));
            }
        }
        Self { reference, last_event: vec![None; w * h], dirty: vec![false; w * h] }
    }

    fn span(&mut self, r: &Renderer<'_>, ev: &EventModelConfig, t0: u64, t1: u64, out: &mut Vec<Event>) {
        let (w, _) = r.cfg.eb_dims();
        let interval = r.cfg.frame_interval_us as f64;
        let tau_of = |t: u64| t as f64 / interval - 1.0;
        let scale = r.inv.det2().abs().sqrt();
        let max_speed = r
            .cfg
            .objects
            .iter()
            .map(|o| o.velocity[0].hypot(o.velocity[1]) * scale * (t1 - t0) as f64 / interval)
            .fold(0.0, f64::max);
        if max_speed == 0.0 {
            return;
        }
        let steps = ((max_speed / MAX_SUBSTEP_MOTION_EB_PX).ceil() as u64).clamp(1, t1 - t0);
        let mut prev_t = t0;
        let mut prev_spans = r.eb_spans(tau_of(t0));
        let mut pixels = Vec::new();
        for s in 1..=steps {
            let t = t0 + (s * (t1 - t0)) / steps;
            let tau = tau_of(t);
            let spans = r.eb_spans(tau);
            pixels.clear();
            for (o, (a, b)) in r.cfg.objects.iter().zip(prev_spans.iter().zip(&spans)) {
                if !o.is_moving() {
                    continue;
                }
                for (x0, y0, x1, y1) in [a, b].into_iter().flatten().copied() {
                    for v in y0..y1 {
                        for u in x0..x1 {
                            let i = v * w + u;
                            if !self.dirty[i] {
                                self.dirty[i] = true;
                                pixels.push(i);
                            }
                        }
                    }
                }
            }
            pixels.sort_unstable();
            let dt = (t - prev_t) as f64;
            for &i in &pixels {
                self.dirty[i] = false;
                let (u, v) = (i % w, i / w);
                let level = log_intensity(r.eb_pixel(u, v, tau, &spans));
                let delta = level - self.reference[i];
                let crossings = (delta.abs() / ev.contrast_threshold).floor() as usize;
                if crossings == 0 {
                    continue;
                }
                let polarity = if delta > 0.0 { Polarity::Positive } else { Polarity::Negative };
                for c in 0..crossings {
                    let frac = (c + 1) as f64 * ev.contrast_threshold / delta.abs();
                    let te = prev_t + (frac * dt).round() as u64;
                    if self.last_event[i].is_some_and(|last| te < last + ev.refractory_us) {
                        continue;
                    }
                    self.last_event[i] = Some(te);
                    out.push(Event::new(u as u16, v as u16, te, polarity));
                }
                self.reference[i] += delta.signum() * crossings as f64 * ev.contrast_threshold;
            }
            prev_t = t;
            prev_spans = spans;
        }
    }
}

fn noise_events(cfg: &SceneConfig, t0: u64, t1: u64, rng: &mut ChaCha8Rng, out: &mut Vec<Event>) {
    let (w, h) = cfg.eb_dims();
    let lambda = cfg.noise.event_noise_rate * (w * h) as f64 * (t1 - t0) as f64 / NOISE_RATE_WINDOW_US;
    if lambda <= 0.0 {
        return;
    }
    let n = Poisson::new(lambda).expect("positive rate").sample(rng) as usize;
    for _ in 0..n {
        let t = rng.random_range(t0..t1);
        let x = rng.random_range(0..w) as u16;
        let y = rng.random_range(0..h) as u16;
        let p = if rng.random_bool(0.5) { Polarity::Positive } else { Polarity::Negative };
        out.push(Event::new(x, y, t, p));
    }
}

/// Clips `r` to the sensor and returns it when at least `min_fraction` stays visible.
fn visible_box(r: &Rect<f64>, w: usize, h: usize, min_fraction: f64) -> Option<BBox> {
    let view = Rect::new(0.0, 0.0, w as f64, h as f64);
    let clipped = r.intersection(&view)?;
    (clipped.area() >= min_fraction * r.area() && clipped.area() > 0.0).then(|| BBox::from_rect(&clipped))
}

fn label(o: &SceneObject, b: BBox, source: DetectionSource) -> Detection {
    Detection::new(o.class_id, b, 1.0, source).expect("positive box").with_moving(o.is_moving())
}

fn jitter_box(b: &BBox, sigma: f64, rng: &mut ChaCha8Rng) -> BBox {
    if sigma == 0.0 {
        return *b;
    }
    let n = Normal::new(0.0, sigma).expect("finite sigma");
    let s = Normal::new(1.0, 0.02).expect("finite sigma");
    BBox::new(
        b.cx + n.sample(rng),
        b.cy + n.sample(rng),
        (b.w * s.sample(rng)).max(1.0),
        (b.h * s.sample(rng)).max(1.0),
    )
}

const MIN_VISIBLE_FRACTION: f64 = 0.25;

/// Renders the full sequence; a pure function of the two configs.
pub fn generate_scene(cfg: &SceneConfig, ev_cfg: &EventModelConfig) -> Result<SyntheticScene> {
    cfg.validate()?;
    ev_cfg.validate()?;
    let stream = |n: u64| {
        let mut r = ChaCha8Rng::seed_from_u64(cfg.seed);
        r.set_stream(n);
        r
    };
    let (mut layout_rng, mut rgb_rng, mut noise_rng, mut det_rng) = (stream(1), stream(2), stream(3), stream(4));
    let renderer = Renderer::new(cfg, &mut layout_rng)?;
    let (rw, rh) = cfg.rgb_dims();
    let (ew, eh) = cfg.eb_dims();
    let inv = renderer.inv;

    let mut sim = EventSimulator::new(&renderer);
    let mut events = Vec::new();
    let mut frames = Vec::with_capacity(cfg.frames);
    let mut masks = Vec::with_capacity(cfg.frames);
    let mut labels_rgb = Vec::with_capacity(cfg.frames);
    let mut labels_eb = Vec::with_capacity(cfg.frames);
    let mut correspondences = Vec::with_capacity(cfg.frames);
    let mut detections_rgb = Vec::with_capacity(cfg.frames);
    let mut detections_eb = Vec::with_capacity(cfg.frames);
    let mut entries = Vec::with_capacity(cfg.frames);
    let d = &cfg.detector;

    for k in 0..cfg.frames {
        let interval = cfg.frame_interval_us;
        let (t0, t1) = (k as u64 * interval, (k as u64 + 1) * interval);
        let mut span_events = Vec::new();
        sim.span(&renderer, ev_cfg, t0, t1, &mut span_events);
        noise_events(cfg, t0, t1, &mut noise_rng, &mut span_events);
        span_events.sort_by_key(|e| e.t_us);
        events.extend(span_events);

        let tau = k as f64;
        frames.push(renderer.rgb_frame(tau, &mut rgb_rng));

        let mut frame_masks = Vec::new();
        let mut lr = Vec::new();
        let mut le = Vec::new();
        let mut pairs = Vec::new();
        let mut dr = Vec::new();
        let mut de = Vec::new();
        for o in &cfg.objects {
            let rect = o.rect(tau);
            let grown = SceneObject {
                size: [o.size[0] + 2.0 * cfg.mask_margin_px, o.size[1] + 2.0 * cfg.mask_margin_px],
                ..*o
            };
            let c = o.center(tau);
            if let Some((x0, y0, x1, y1)) = pixel_span(&grown.rect(tau), 1.0, rw, rh) {
                let mut mask = BinaryMask::empty(rw, rh);
                for y in y0..y1 {
                    for x in x0..x1 {
                        if grown.contains(c, Point2::new(x as f64, y as f64)) {
                            mask.set(x, y, true);
                        }
                    }
                }
                if mask.count() > 0 {
                    frame_masks.push(SegMask { mask, class_id: o.class_id });
                }
            }
            let rgb_box = visible_box(&rect, rw, rh, MIN_VISIBLE_FRACTION);
            let eb_rect = map_rect(&inv, &rect);
            let eb_box = visible_box(&eb_rect, ew, eh, MIN_VISIBLE_FRACTION).filter(|_| o.is_moving());
            if let Some(b) = rgb_box {
                lr.push(label(o, b, DetectionSource::Rgb));
                if !det_rng.random_bool(d.rgb_miss_rate) {
                    let conf = uniform(&mut det_rng, d.rgb_confidence);
                    let det = Detection::new(o.class_id, jitter_box(&b, d.rgb_jitter_px, &mut det_rng), conf, DetectionSource::Rgb)?;
                    dr.push(det);
                }
            }
            if let Some(b) = eb_box {
                le.push(label(o, b, DetectionSource::Event));
                if !det_rng.random_bool(d.eb_miss_rate) {
                    let conf = uniform(&mut det_rng, d.eb_confidence);
                    let det = Detection::new(o.class_id, jitter_box(&b, d.eb_jitter_px, &mut det_rng), conf, DetectionSource::Event)?;
                    de.push(det.with_moving(true));
                }
            }
            for p in o.outline(tau, 8) {
                let q = inv.apply(&p);
                let in_rgb = p.x >= 0.0 && p.y >= 0.0 && p.x <= (rw - 1) as f64 && p.y <= (rh - 1) as f64;
                let in_eb = q.x >= 0.0 && q.y >= 0.0 && q.x <= (ew - 1) as f64 && q.y <= (eh - 1) as f64;
                if in_rgb && in_eb {
                    pairs.push(Correspondence::new(q, p));
                }
            }
        }
        let spurious = if d.spurious_per_frame > 0.0 {
            Poisson::new(d.spurious_per_frame).expect("positive rate").sample(&mut det_rng) as usize
        } else {
            0
        };
        for _ in 0..spurious {
            let w = det_rng.random_range(40.0..200.0);
            let h = det_rng.random_range(40.0..200.0);
            let b = BBox::new(det_rng.random_range(w / 2.0..rw as f64 - w / 2.0), det_rng.random_range(h / 2.0..rh as f64 - h / 2.0), w, h);
            let class = ClassId::new(det_rng.random_range(0..ClassId::COUNT as u8))?;
            let conf = uniform(&mut det_rng, d.spurious_confidence);
            dr.push(Detection::new(class, b, conf, DetectionSource::Rgb)?);
        }

        masks.push(frame_masks);
        labels_rgb.push(FrameDetections { frame_index: k, detections: lr });
        labels_eb.push(FrameDetections { frame_index: k, detections: le });
        correspondences.push(FrameCorrespondences { frame_index: k, pairs });
        detections_rgb.push(FrameDetections { frame_index: k, detections: dr });
        detections_eb.push(FrameDetections { frame_index: k, detections: de });
        entries.push(FrameEntry {
            index: k,
            rgb: PathBuf::from(format!("frames/rgb_{k:04}.png")),
            t0_us: t0,
            t1_us: t1,
            masks: Some(PathBuf::from(format!("masks/masks_{k:04}.json"))),
            illumination: None,
        });
    }

    let manifest = SequenceManifest {
        name: cfg.name.clone(),
        illumination: cfg.illumination,
        eb_resolution: cfg.eb_resolution,
        rgb_resolution: cfg.rgb_resolution,
        events: "events.csv".into(),
        frames: entries,
        detections_rgb: Some("detections_rgb.json".into()),
        detections_eb: Some("detections_eb.json".into()),
        labels_rgb: Some("labels_rgb.json".into()),
        labels_eb: Some("labels_eb.json".into()),
        gt_correspondences: Some("gt_correspondences.json".into()),
    };
    Ok(SyntheticScene {
        config: cfg.clone(),
        manifest,
        frames,
        masks,
        events,
        labels_rgb,
        labels_eb,
        correspondences,
        detections_rgb,
        detections_eb,
    })
}

/// Writes the scene under `dir` and returns the manifest path.
pub fn write_scene(dir: &Path, scene: &SyntheticScene) -> Result<PathBuf> {
    let m = &scene.manifest;
    io::save_events(&dir.join(&m.events), &scene.events)?;
    for ((entry, frame), masks) in m.frames.iter().zip(&scene.frames).zip(&scene.masks) {
        io::save_rgb_png(&dir.join(&entry.rgb), frame)?;
        if let Some(p) = &entry.masks {
            io::save_masks(&dir.join(p), m.rgb_dims(), masks)?;
        }
    }
    let opt = |p: &Option<PathBuf>| dir.join(p.as_ref().expect("generated manifests set every path"));
    io::save_detections(&opt(&m.detections_rgb), &scene.detections_rgb)?;
    io::save_detections(&opt(&m.detections_eb), &scene.detections_eb)?;
    io::save_labels_openlabel(&opt(&m.labels_rgb), &scene.labels_rgb)?;
    io::save_labels_openlabel(&opt(&m.labels_eb), &scene.labels_eb)?;
    io::save_correspondences(&opt(&m.gt_correspondences), &scene.correspondences)?;
    let path = dir.join("manifest.json");
    io::save_manifest(&path, m)?;
    Ok(path)
}
