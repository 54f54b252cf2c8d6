//! Event-camera preprocessing: noise filtering, frame accumulation, motion
//! binarization and hit-miss edge enhancement.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imgproc::{dilate3, median3};
use crate::model::{first_unsorted, BinaryMask, EdgeCloud, Event, GrayImage, Modality, Polarity};
use crate::scalar::Real;

pub const DEFAULT_WINDOW_US: u64 = 5000;

/// Gray level of pixels without events in an accumulated frame.
pub const NO_EVENT: u8 = 128;

/// Time-ordered events spanning at most `window_us`.
#[derive(Debug, Clone)]
pub struct EventWindow<'a> {
    events: &'a [Event],
    window_us: u64,
    width: usize,
    height: usize,
}

impl<'a> EventWindow<'a> {
    pub fn new(events: &'a [Event], window_us: u64, width: usize, height: usize) -> Result<Self> {
        if let Some(index) = first_unsorted(events) {
            return Err(Error::Unsorted { index });
        }
        if let (Some(first), Some(last)) = (events.first(), events.last()) {
            if last.t_us - first.t_us > window_us {
                return Err(Error::InvalidInput(format!(
                    "events span {} us, window is {window_us} us",
                    last.t_us - first.t_us
                )));
            }
        }
        Ok(Self {
            events,
            window_us,
            width,
            height,
        })
    }

    /// Selects the events of a sorted stream with `t_end - window_us <= t <= t_end`.
    pub fn ending_at(
        stream: &'a [Event],
        t_end: u64,
        window_us: u64,
        width: usize,
        height: usize,
    ) -> Result<Self> {
        if let Some(index) = first_unsorted(stream) {
            return Err(Error::Unsorted { index });
        }
        let t_start = t_end.saturating_sub(window_us);
        let lo = stream.partition_point(|e| e.t_us < t_start);
        let hi = stream.partition_point(|e| e.t_us <= t_end);
        Self::new(&stream[lo..hi], window_us, width, height)
    }

    pub fn events(&self) -> &'a [Event] {
        self.events
    }

    pub fn window_us(&self) -> u64 {
        self.window_us
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }
}

/// Spatiotemporal neighborhood for noise suppression: `[x ± r_x] x [y ± r_y] x [t - r_t, t]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseFilterConfig {
    pub r_x: u16,
    pub r_y: u16,
    pub r_t_us: u64,
    /// Minimum number of events in the neighborhood, the event itself included.
    pub min_events: usize,
}

impl Default for NoiseFilterConfig {
    fn default() -> Self {
        Self {
            r_x: 2,
            r_y: 2,
            r_t_us: 10_000,
            min_events: 30,
        }
    }
}

impl NoiseFilterConfig {
    pub fn validate(&self) -> Result<()> {
        if self.r_x < 1 || self.r_y < 1 || self.r_t_us == 0 || self.min_events < 1 {
            return Err(Error::Config(format!(
                "noise filter needs r_x, r_y >= 1, r_t > 0, min_events >= 1: {self:?}"
            )));
        }
        Ok(())
    }
}

/// Keeps the events whose closed spatiotemporal neighborhood in the input stream
/// holds at least `min_events` events. Relative order is preserved.
pub fn filter_noise_events(events: &[Event], cfg: &NoiseFilterConfig) -> Result<Vec<Event>> {
    cfg.validate()?;
    if let Some(index) = first_unsorted(events) {
        return Err(Error::Unsorted { index });
    }
    if events.is_empty() {
        return Ok(Vec::new());
    }
    let w = events.iter().map(|e| e.x as usize).max().unwrap_or(0) + 1;
    let h = events.iter().map(|e| e.y as usize).max().unwrap_or(0) + 1;
    let mut counts = vec![0u32; w * h];
    let (rx, ry) = (cfg.r_x as usize, cfg.r_y as usize);

    // Sliding window over time: `head` admits events with t <= current t (ties
    // included), `tail` evicts events older than t - r_t.
    let mut head = 0;
    let mut tail = 0;
    let mut kept = Vec::new();
    for ev in events {
        let t = ev.t_us;
        while head < events.len() && events[head].t_us <= t {
            let e = &events[head];
            counts[e.y as usize * w + e.x as usize] += 1;
            head += 1;
        }
        let t_min = t.saturating_sub(cfg.r_t_us);
        while events[tail].t_us < t_min {
            let e = &events[tail];
            counts[e.y as usize * w + e.x as usize] -= 1;
            tail += 1;
        }
        let (x, y) = (ev.x as usize, ev.y as usize);
        let x0 = x.saturating_sub(rx);
        let x1 = (x + rx).min(w - 1);
        let y0 = y.saturating_sub(ry);
        let y1 = (y + ry).min(h - 1);
        let mut n = 0usize;
        for yy in y0..=y1 {
            n += counts[yy * w + x0..=yy * w + x1]
                .iter()
                .map(|&c| c as usize)
                .sum::<usize>();
        }
        if n >= cfg.min_events {
            kept.push(*ev);
        }
    }
    Ok(kept)
}

/// Renders a window as a gray frame: 255 where the latest event was positive,
/// 0 where negative, [`NO_EVENT`] elsewhere.
pub fn accumulate_frame(window: &EventWindow<'_>) -> Result<GrayImage> {
    let (w, h) = window.dims();
    let mut img = GrayImage::filled(w, h, NO_EVENT);
    for e in window.events() {
        let (x, y) = (e.x as usize, e.y as usize);
        if x >= w || y >= h {
            return Err(Error::OutOfBounds {
                x: e.x as i64,
                y: e.y as i64,
                width: w,
                height: h,
            });
        }
        img.set(
            x,
            y,
            match e.polarity {
                Polarity::Positive => 255,
                Polarity::Negative => 0,
            },
        );
    }
    Ok(img)
}

/// Drops polarity, then applies one 3x3 dilation followed by one 3x3 median.
pub fn binarize_motion(frame: &GrayImage) -> BinaryMask {
    let (w, h) = frame.dims();
    let data = frame
        .data()
        .iter()
        .map(|&v| if v == NO_EVENT { BinaryMask::OFF } else { BinaryMask::ON })
        .collect();
    let raw = BinaryMask::from_raw_unchecked(w, h, data);
    median3(&dilate3(&raw))
}

/// Hit-miss structuring element: `1` foreground, `-1` background, `0` ignored.
pub type HitMissKernel = [[i8; 3]; 3];

pub const K_VERTICAL: HitMissKernel = [[0, 1, 0], [0, 1, -1], [0, 1, 0]];
pub const K_HORIZONTAL: HitMissKernel = [[0, -1, 0], [1, 1, 1], [0, 0, 0]];
pub const K_DIAGONAL_1: HitMissKernel = [[0, -1, 1], [0, 1, 0], [1, 0, 0]];
pub const K_DIAGONAL_2: HitMissKernel = [[1, -1, 0], [0, 1, 0], [0, 0, 1]];

pub const EDGE_KERNELS: [HitMissKernel; 4] = [K_VERTICAL, K_HORIZONTAL, K_DIAGONAL_1, K_DIAGONAL_2];

/// Hit-miss transform with one kernel. Kernel cells falling outside the image never match.
pub fn hit_miss(mask: &BinaryMask, kernel: &HitMissKernel) -> BinaryMask {
    let (w, h) = mask.dims();
    let cells: Vec<(isize, isize, bool)> = kernel
        .iter()
        .enumerate()
        .flat_map(|(ky, row)| {
            row.iter().enumerate().filter(|(_, &v)| v != 0).map(move |(kx, &v)| {
                (kx as isize - 1, ky as isize - 1, v > 0)
            })
        })
        .collect();
    BinaryMask::from_fn(w, h, |x, y| {
        cells.iter().all(|&(dx, dy, fg)| {
            let xx = x as isize + dx;
            let yy = y as isize + dy;
            xx >= 0
                && yy >= 0
                && (xx as usize) < w
                && (yy as usize) < h
                && mask.is_set(xx as usize, yy as usize) == fg
        })
    })
}

/// Union of the four directional hit-miss responses, as an event-modality edge cloud.
pub fn enhance_edges<T: Real>(mask: &BinaryMask) -> EdgeCloud<T> {
    let (w, h) = mask.dims();
    let responses: Vec<BinaryMask> = EDGE_KERNELS.iter().map(|k| hit_miss(mask, k)).collect();
    let union = BinaryMask::from_fn(w, h, |x, y| responses.iter().any(|r| r.is_set(x, y)));
    EdgeCloud::from_mask(&union, Modality::Event)
}

/// Full event-side edge extraction for one window.
pub fn event_edges<T: Real>(window: &EventWindow<'_>) -> Result<EdgeCloud<T>> {
    let frame = accumulate_frame(window)?;
    Ok(enhance_edges(&binarize_motion(&frame)))
}
