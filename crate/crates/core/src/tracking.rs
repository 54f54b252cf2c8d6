//! SORT multi-object tracking: constant-velocity Kalman filters on
//! `(cx, cy, area, aspect)` associated to detections by IoU.

use nalgebra::{SMatrix, SVector};
use serde::{Deserialize, Serialize};

use crate::calibration::solve_assignment;
use crate::error::{Error, Result};
use crate::geometry::iou;
use crate::model::BBox;

type State = SVector<f64, 7>;
type Cov = SMatrix<f64, 7, 7>;
type Meas = SVector<f64, 4>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SortConfig {
    pub max_age: u32,
    pub min_hits: u32,
    pub iou_threshold: f64,
    /// Measurement noise variances for center and for area/aspect.
    pub measurement_noise: [f64; 2],
    /// Initial variances for observed components and for velocities.
    pub initial_covariance: [f64; 2],
    /// Process noise variances for observed components, center/area velocity, and area velocity.
    pub process_noise: [f64; 3],
}

impl Default for SortConfig {
    fn default() -> Self {
        Self {
            max_age: 3,
            min_hits: 1,
            iou_threshold: 0.3,
            measurement_noise: [1.0, 10.0],
            initial_covariance: [10.0, 10_000.0],
            process_noise: [1.0, 0.01, 0.0001],
        }
    }
}

impl SortConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = self
            .measurement_noise
            .iter()
            .chain(&self.initial_covariance)
            .chain(&self.process_noise)
            .all(|v| *v > 0.0 && v.is_finite());
        if self.max_age < 1 || self.min_hits < 1 || !(self.iou_threshold > 0.0 && self.iou_threshold < 1.0) || !positive {
            return Err(Error::Config(format!("invalid SORT config: {self:?}")));
        }
        Ok(())
    }
}

/// A tracked object with its Kalman filter.
#[derive(Debug, Clone)]
pub struct Track {
    pub id: u64,
    x: State,
    p: Cov,
    pub hits: u32,
    pub age: u32,
    pub time_since_update: u32,
}

impl Track {
    fn new(id: u64, b: &BBox, cfg: &SortConfig) -> Self {
        let z = to_measurement(b);
        let mut x = State::zeros();
        x.fixed_rows_mut::<4>(0).copy_from(&z);
        let [p_obs, p_vel] = cfg.initial_covariance;
        let p = Cov::from_diagonal(&State::from_column_slice(&[p_obs, p_obs, p_obs, p_obs, p_vel, p_vel, p_vel]));
        Self { id, x, p, hits: 1, age: 0, time_since_update: 0 }
    }

    fn predict(&mut self, cfg: &SortConfig) {
        if self.x[6] + self.x[2] <= 0.0 {
            self.x[6] = 0.0;
        }
        let f = transition();
        let [q_obs, q_vel, q_area] = cfg.process_noise;
        let q = Cov::from_diagonal(&State::from_column_slice(&[q_obs, q_obs, q_obs, q_obs, q_vel, q_vel, q_area]));
        self.x = f * self.x;
        self.p = f * self.p * f.transpose() + q;
        self.age += 1;
        self.time_since_update += 1;
    }

    fn update(&mut self, b: &BBox, cfg: &SortConfig) {
        let h = observation();
        let [r_pos, r_shape] = cfg.measurement_noise;
        let r = SMatrix::<f64, 4, 4>::from_diagonal(&Meas::new(r_pos, r_pos, r_shape, r_shape));
        let y = to_measurement(b) - h * self.x;
        let s = h * self.p * h.transpose() + r;
        // S is symmetric positive definite because R is.
        let s_inv = s.try_inverse().expect("innovation covariance is invertible");
        let k = self.p * h.transpose() * s_inv;
        self.x += k * y;
        self.p = (Cov::identity() - k * h) * self.p;
        self.hits += 1;
        self.time_since_update = 0;
    }

    /// Current box estimate.
    pub fn bbox(&self) -> BBox {
        let s = self.x[2].max(1e-6);
        let r = self.x[3].max(1e-6);
        let w = (s * r).sqrt();
        BBox::new(self.x[0], self.x[1], w, s / w)
    }
}

fn transition() -> Cov {
    let mut f = Cov::identity();
    f[(0, 4)] = 1.0;
    f[(1, 5)] = 1.0;
    f[(2, 6)] = 1.0;
    f
}

fn observation() -> SMatrix<f64, 4, 7> {
    let mut h = SMatrix::<f64, 4, 7>::zeros();
    for i in 0..4 {
        h[(i, i)] = 1.0;
    }
    h
}

fn to_measurement(b: &BBox) -> Meas {
    Meas::new(b.cx, b.cy, b.w * b.h, b.w / b.h)
}

/// A live track reported after an update, with the index of the detection it absorbed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackReport {
    pub id: u64,
    pub bbox: BBox,
    pub detection: Option<usize>,
    pub hits: u32,
    pub time_since_update: u32,
}

#[derive(Debug, Clone)]
pub struct Sort {
    cfg: SortConfig,
    tracks: Vec<Track>,
    next_id: u64,
    frame_count: u64,
}

impl Sort {
    pub fn new(cfg: SortConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self { cfg, tracks: Vec::new(), next_id: 1, frame_count: 0 })
    }

    pub fn config(&self) -> &SortConfig {
        &self.cfg
    }

    pub fn tracks(&self) -> &[Track] {
        &self.tracks
    }

    pub fn frame_count(&self) -> u64 {
        self.frame_count
    }

    /// Advances one frame. Every input box ends up attached to exactly one
    /// reported track when `min_hits` is 1.
    pub fn update(&mut self, boxes: &[BBox]) -> Vec<TrackReport> {
        self.frame_count += 1;
        for t in &mut self.tracks {
            t.predict(&self.cfg);
        }
        self.tracks.retain(|t| t.x.iter().all(|v| v.is_finite()));

        let mut det_track: Vec<Option<usize>> = vec![None; boxes.len()];
        if !self.tracks.is_empty() && !boxes.is_empty() {
            let predicted: Vec<_> = self.tracks.iter().map(|t| t.bbox().to_rect()).collect();
            let ious = nalgebra::DMatrix::from_fn(self.tracks.len(), boxes.len(), |i, j| iou(&predicted[i], &boxes[j].to_rect()));
            let cost = ious.map(|v| 1.0 - v);
            let pairs = solve_assignment(&cost).expect("IoU costs are finite");
            for (ti, di) in pairs {
                if ious[(ti, di)] >= self.cfg.iou_threshold {
                    det_track[di] = Some(ti);
                }
            }
        }
        for (di, ti) in det_track.iter().enumerate() {
            if let Some(ti) = ti {
                self.tracks[*ti].update(&boxes[di], &self.cfg);
            }
        }
        let mut matched: Vec<Option<usize>> = vec![None; self.tracks.len()];
        for (di, ti) in det_track.iter().enumerate() {
            if let Some(ti) = ti {
                matched[*ti] = Some(di);
            }
        }
        for (di, ti) in det_track.iter().enumerate() {
            if ti.is_none() {
                self.tracks.push(Track::new(self.next_id, &boxes[di], &self.cfg));
                matched.push(Some(di));
                self.next_id += 1;
            }
        }

        let max_age = self.cfg.max_age;
        let keep: Vec<bool> = self.tracks.iter().map(|t| t.time_since_update <= max_age).collect();
        let mut reports = Vec::new();
        for (t, (m, k)) in self.tracks.iter().zip(matched.iter().zip(&keep)) {
            if *k && t.hits >= self.cfg.min_hits {
                reports.push(TrackReport {
                    id: t.id,
                    bbox: t.bbox(),
                    detection: *m,
                    hits: t.hits,
                    time_since_update: t.time_since_update,
                });
            }
        }
        let mut it = keep.iter();
        self.tracks.retain(|_| *it.next().expect("one flag per track"));
        reports
    }

    /// IDs of tracks still alive.
    pub fn live_ids(&self) -> impl Iterator<Item = u64> + '_ {
        self.tracks.iter().map(|t| t.id)
    }
}
