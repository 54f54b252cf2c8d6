//! Targetless extrinsic calibration from moving-object edge clouds.
//!
//! Both edge clouds are clustered, clusters are paired by their median
//! centroids, each cluster pair gets a coarse scale+translation from its
//! percentile rectangles, points inside each pair are matched one-to-one and
//! filtered for outliers, and the pooled correspondences feed RANSAC followed by
//! ICP refinement.

mod assignment;
mod dbscan;
mod icp;
mod ransac;
mod spatial;

pub use assignment::{assignment_cost, solve_assignment};
pub use dbscan::{cluster_points, dbscan_labels, ClusterSet, DbscanConfig};
pub use icp::{refine_icp, IcpConfig, IcpOutcome};
pub use ransac::{estimate_affine_ransac, Correspondence, RansacConfig, RansacFit};

use std::cmp::Ordering;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Affine, Point2, Rect};
use crate::model::EdgeCloud;
use crate::scalar::Real;

/// Coordinate frame in which cluster centroids are compared.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CentroidSpace {
    /// Raw pixel coordinates of each sensor.
    Pixels,
    /// Coordinates divided by each sensor's width and height.
    Normalized,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CalibrationConfig {
    pub dbscan_eb: DbscanConfig,
    pub dbscan_rgb: DbscanConfig,
    pub percentile_lo: f64,
    pub percentile_hi: f64,
    pub outlier_percentile: f64,
    pub outlier_factor: f64,
    pub min_assignments: usize,
    pub centroid_space: CentroidSpace,
    /// Drop cluster pairs whose centroid distance exceeds this multiple of the
    /// median pair distance.
    pub cluster_gate: Option<f64>,
    /// Clusters larger than this are subsampled at an even stride before point matching.
    pub max_points_per_cluster: usize,
    pub ransac: RansacConfig,
    pub icp: IcpConfig,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self {
            dbscan_eb: DbscanConfig { eps: 70.0, min_samples: 2 },
            dbscan_rgb: DbscanConfig { eps: 40.0, min_samples: 2 },
            percentile_lo: 0.13,
            percentile_hi: 0.87,
            outlier_percentile: 0.70,
            outlier_factor: 0.5,
            min_assignments: 1,
            centroid_space: CentroidSpace::Normalized,
            cluster_gate: None,
            max_points_per_cluster: 400,
            ransac: RansacConfig::default(),
            icp: IcpConfig::default(),
        }
    }
}

impl CalibrationConfig {
    pub fn validate(&self) -> Result<()> {
        self.dbscan_eb.validate()?;
        self.dbscan_rgb.validate()?;
        self.ransac.validate()?;
        self.icp.validate()?;
        let bad = |msg: &str| Err(Error::Config(msg.to_string()));
        if !(0.0 < self.percentile_lo && self.percentile_lo < self.percentile_hi && self.percentile_hi < 1.0) {
            return bad("calibration percentiles need 0 < lo < hi < 1");
        }
        if !(0.0..=1.0).contains(&self.outlier_percentile) {
            return bad("outlier percentile must lie in [0, 1]");
        }
        if !(0.0 < self.outlier_factor && self.outlier_factor < 1.0) {
            return bad("outlier factor must lie in (0, 1)");
        }
        if self.min_assignments < 1 {
            return bad("min_assignments must be at least 1");
        }
        if self.max_points_per_cluster < 3 {
            return bad("max_points_per_cluster must be at least 3");
        }
        if let Some(g) = self.cluster_gate {
            if !(g > 0.0) {
                return bad("cluster_gate must be positive");
            }
        }
        Ok(())
    }

    /// The two DBSCAN settings compared in the ablation: `1` is coarse, `2` is fine.
    pub fn with_dbscan_setting(mut self, setting: u8) -> Result<Self> {
        let (eb, rgb) = match setting {
            1 => ((150.0, 2), (150.0, 2)),
            2 => ((70.0, 2), (40.0, 2)),
            _ => return Err(Error::Config(format!("unknown DBSCAN setting {setting}"))),
        };
        self.dbscan_eb = DbscanConfig::new(eb.0, eb.1)?;
        self.dbscan_rgb = DbscanConfig::new(rgb.0, rgb.1)?;
        Ok(self)
    }
}

/// Coarse transform and surviving point matches for one cluster pair.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterPairReport<T> {
    pub eb_cluster: usize,
    pub rgb_cluster: usize,
    pub coarse: Affine<T>,
    pub kept: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CalibrationDiagnostics {
    pub eb_points: usize,
    pub rgb_points: usize,
    pub eb_clusters: usize,
    pub rgb_clusters: usize,
    pub matched_cluster_pairs: usize,
    pub gated_cluster_pairs: usize,
    pub degenerate_cluster_pairs: usize,
    pub below_min_assignments: usize,
    pub pooled_pairs: usize,
    pub filtered_outliers: usize,
    pub ransac_inliers: usize,
    pub icp_iterations: usize,
    pub icp_refined: bool,
}

impl CalibrationDiagnostics {
    fn to_json(&self) -> String {
        serde_json::to_string(self).unwrap_or_default()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationResult<T> {
    /// Maps event-camera pixels to RGB pixels.
    pub transform: Affine<T>,
    /// RANSAC estimate before ICP refinement.
    pub coarse_transform: Affine<T>,
    pub per_cluster: Vec<ClusterPairReport<T>>,
    pub inlier_count: usize,
    pub icp_mean_distances: Vec<T>,
    pub diagnostics: CalibrationDiagnostics,
}

fn sort_reals<T: Real>(v: &mut [T]) {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap_or(Ordering::Equal));
}

/// Percentile of sorted values by linear interpolation between order statistics.
pub(crate) fn percentile_sorted<T: Real>(sorted: &[T], q: f64) -> T {
    debug_assert!(!sorted.is_empty());
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let frac = T::lit(pos - lo as f64);
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

/// Axis-aligned rectangle spanning the `lo` to `hi` coordinate percentiles.
pub fn percentile_rect<T: Real>(points: &[Point2<T>], lo: f64, hi: f64) -> Result<Rect<T>> {
    if points.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "percentile rect needs at least 2 points, got {}",
            points.len()
        )));
    }
    if !(0.0..=1.0).contains(&lo) || !(0.0..=1.0).contains(&hi) || lo > hi {
        return Err(Error::InvalidInput(format!("invalid percentile range [{lo}, {hi}]")));
    }
    let mut xs: Vec<T> = points.iter().map(|p| p.x).collect();
    let mut ys: Vec<T> = points.iter().map(|p| p.y).collect();
    sort_reals(&mut xs);
    sort_reals(&mut ys);
    Ok(Rect::new(
        percentile_sorted(&xs, lo),
        percentile_sorted(&ys, lo),
        percentile_sorted(&xs, hi),
        percentile_sorted(&ys, hi),
    ))
}

/// Per-axis scale and translation mapping `r_eb` onto `r_rgb`.
pub fn coarse_transform<T: Real>(r_eb: &Rect<T>, r_rgb: &Rect<T>) -> Result<Affine<T>> {
    let (w, h) = (r_eb.width(), r_eb.height());
    if !(w > T::zero() && h > T::zero()) {
        return Err(Error::DegenerateGeometry(format!(
            "event-camera rectangle has zero extent ({w} x {h})"
        )));
    }
    let sx = r_rgb.width() / w;
    let sy = r_rgb.height() / h;
    let tx = r_rgb.x0 - sx * r_eb.x0;
    let ty = r_rgb.y0 - sy * r_eb.y0;
    Affine::scale_translate(sx, sy, tx, ty)
        .map_err(|_| Error::DegenerateGeometry("RGB rectangle has zero extent".into()))
}

/// Per-coordinate median of a non-empty point list.
pub fn median_centroid<T: Real>(points: &[Point2<T>]) -> Option<Point2<T>> {
    if points.is_empty() {
        return None;
    }
    let mut xs: Vec<T> = points.iter().map(|p| p.x).collect();
    let mut ys: Vec<T> = points.iter().map(|p| p.y).collect();
    sort_reals(&mut xs);
    sort_reals(&mut ys);
    Some(Point2::new(percentile_sorted(&xs, 0.5), percentile_sorted(&ys, 0.5)))
}

fn match_scaled<T: Real>(eb: &ClusterSet<T>, rgb: &ClusterSet<T>, eb_scale: (T, T), rgb_scale: (T, T)) -> Result<Vec<(usize, usize)>> {
    if eb.clusters.is_empty() || rgb.clusters.is_empty() {
        return Ok(Vec::new());
    }
    let centroids = |cs: &ClusterSet<T>, (sx, sy): (T, T)| -> Vec<Point2<T>> {
        cs.clusters
            .iter()
            .map(|c| {
                let m = median_centroid(c).unwrap_or(Point2::new(T::zero(), T::zero()));
                Point2::new(m.x * sx, m.y * sy)
            })
            .collect()
    };
    let ce = centroids(eb, eb_scale);
    let cr = centroids(rgb, rgb_scale);
    let cost = DMatrix::from_fn(ce.len(), cr.len(), |i, j| ce[i].dist(&cr[j]));
    solve_assignment(&cost)
}

/// Pairs clusters by minimum total Euclidean distance between median centroids.
pub fn match_clusters<T: Real>(eb: &ClusterSet<T>, rgb: &ClusterSet<T>) -> Result<Vec<(usize, usize)>> {
    match_scaled(eb, rgb, (T::one(), T::one()), (T::one(), T::one()))
}

/// Like [`match_clusters`], with centroids divided by each sensor's resolution first.
pub fn match_clusters_normalized<T: Real>(
    eb: &ClusterSet<T>,
    rgb: &ClusterSet<T>,
    eb_size: (usize, usize),
    rgb_size: (usize, usize),
) -> Result<Vec<(usize, usize)>> {
    let inv = |(w, h): (usize, usize)| -> Result<(T, T)> {
        if w == 0 || h == 0 {
            return Err(Error::InvalidInput("sensor resolution must be non-zero".into()));
        }
        Ok((T::one() / T::lit(w as f64), T::one() / T::lit(h as f64)))
    };
    match_scaled(eb, rgb, inv(eb_size)?, inv(rgb_size)?)
}

/// Outcome of matching the points of one cluster pair.
#[derive(Debug, Clone, PartialEq)]
pub struct PointMatches<T> {
    pub kept: Vec<Correspondence<T>>,
    pub filtered: usize,
}

/// One-to-one matching of the points of a cluster pair after the coarse
/// transform, followed by the relative-length outlier filter
/// `f = (l - l_p) / l > C`. Zero-length pairs have `f = 0` and are kept.
pub fn match_cluster_points<T: Real>(
    eb_points: &[Point2<T>],
    rgb_points: &[Point2<T>],
    t_coarse: &Affine<T>,
    cfg: &CalibrationConfig,
) -> Result<PointMatches<T>> {
    if eb_points.is_empty() || rgb_points.is_empty() {
        return Ok(PointMatches { kept: Vec::new(), filtered: 0 });
    }
    let moved: Vec<Point2<T>> = eb_points.iter().map(|p| t_coarse.apply(p)).collect();
    let cost = DMatrix::from_fn(moved.len(), rgb_points.len(), |i, j| moved[i].dist(&rgb_points[j]));
    let pairs = solve_assignment(&cost)?;
    let lengths: Vec<T> = pairs.iter().map(|&(i, j)| cost[(i, j)]).collect();
    let mut sorted = lengths.clone();
    sort_reals(&mut sorted);
    let l_p = percentile_sorted(&sorted, cfg.outlier_percentile);
    let c = T::lit(cfg.outlier_factor);
    let mut kept = Vec::with_capacity(pairs.len());
    for (&(i, j), &l) in pairs.iter().zip(&lengths) {
        let f = if l > T::zero() { (l - l_p) / l } else { T::zero() };
        if f <= c {
            kept.push(Correspondence::new(eb_points[i], rgb_points[j]));
        }
    }
    let filtered = pairs.len() - kept.len();
    Ok(PointMatches { kept, filtered })
}

fn subsample<T: Copy>(points: &[T], max: usize) -> Vec<T> {
    if points.len() <= max {
        return points.to_vec();
    }
    (0..max).map(|k| points[k * points.len() / max]).collect()
}

/// End-to-end calibration from one frame's event-camera and RGB edge clouds.
pub fn calibrate_frame<T: Real>(
    eb_edges: &EdgeCloud<T>,
    rgb_edges: &EdgeCloud<T>,
    cfg: &CalibrationConfig,
) -> Result<CalibrationResult<T>> {
    cfg.validate()?;
    let mut diag = CalibrationDiagnostics {
        eb_points: eb_edges.len(),
        rgb_points: rgb_edges.len(),
        ..Default::default()
    };
    let fail = |reason: &str, diag: &CalibrationDiagnostics| Error::CalibrationFailed {
        reason: reason.to_string(),
        diagnostics: diag.to_json(),
    };
    if eb_edges.is_empty() || rgb_edges.is_empty() {
        return Err(fail("empty edge cloud", &diag));
    }

    let eb = cluster_points(&eb_edges.points, &cfg.dbscan_eb)?;
    let rgb = cluster_points(&rgb_edges.points, &cfg.dbscan_rgb)?;
    diag.eb_clusters = eb.clusters.len();
    diag.rgb_clusters = rgb.clusters.len();
    let mut pairs = match cfg.centroid_space {
        CentroidSpace::Pixels => match_clusters(&eb, &rgb)?,
        CentroidSpace::Normalized => match_clusters_normalized(
            &eb,
            &rgb,
            (eb_edges.width, eb_edges.height),
            (rgb_edges.width, rgb_edges.height),
        )?,
    };
    diag.matched_cluster_pairs = pairs.len();

    if let Some(gate) = cfg.cluster_gate {
        pairs = gate_cluster_pairs(&eb, &rgb, pairs, eb_edges, rgb_edges, cfg.centroid_space, gate);
        diag.gated_cluster_pairs = diag.matched_cluster_pairs - pairs.len();
    }

    let mut per_cluster = Vec::new();
    let mut pooled: Vec<Correspondence<T>> = Vec::new();
    let mut icp_src: Vec<Point2<T>> = Vec::new();
    let mut icp_dst: Vec<Point2<T>> = Vec::new();
    for &(ei, ri) in &pairs {
        let (ec, rc) = (&eb.clusters[ei], &rgb.clusters[ri]);
        let coarse = match (
            percentile_rect(ec, cfg.percentile_lo, cfg.percentile_hi),
            percentile_rect(rc, cfg.percentile_lo, cfg.percentile_hi),
        ) {
            (Ok(re), Ok(rr)) => coarse_transform(&re, &rr),
            (Err(e), _) | (_, Err(e)) => Err(e),
        };
        let Ok(coarse) = coarse else {
            diag.degenerate_cluster_pairs += 1;
            continue;
        };
        let ecs = subsample(ec, cfg.max_points_per_cluster);
        let rcs = subsample(rc, cfg.max_points_per_cluster);
        let matches = match_cluster_points(&ecs, &rcs, &coarse, cfg)?;
        diag.filtered_outliers += matches.filtered;
        let kept = matches.kept.len();
        per_cluster.push(ClusterPairReport { eb_cluster: ei, rgb_cluster: ri, coarse, kept });
        if kept < cfg.min_assignments {
            diag.below_min_assignments += 1;
            continue;
        }
        pooled.extend(matches.kept);
        icp_src.extend_from_slice(ec);
        icp_dst.extend_from_slice(rc);
    }
    diag.pooled_pairs = pooled.len();
    if pooled.len() < 3 {
        return Err(fail("fewer than 3 pooled correspondences", &diag));
    }

    let fit = estimate_affine_ransac(&pooled, &cfg.ransac).map_err(|e| fail(&e.to_string(), &diag))?;
    diag.ransac_inliers = fit.inliers.len();
    let icp = refine_icp(&icp_src, &icp_dst, &fit.transform, &cfg.icp)?;
    diag.icp_iterations = icp.iterations;
    diag.icp_refined = icp.refined;
    Ok(CalibrationResult {
        transform: icp.transform,
        coarse_transform: fit.transform,
        per_cluster,
        inlier_count: fit.inliers.len(),
        icp_mean_distances: icp.mean_distances,
        diagnostics: diag,
    })
}

fn gate_cluster_pairs<T: Real>(
    eb: &ClusterSet<T>,
    rgb: &ClusterSet<T>,
    pairs: Vec<(usize, usize)>,
    eb_edges: &EdgeCloud<T>,
    rgb_edges: &EdgeCloud<T>,
    space: CentroidSpace,
    gate: f64,
) -> Vec<(usize, usize)> {
    let scale = |c: &EdgeCloud<T>| match space {
        CentroidSpace::Pixels => (T::one(), T::one()),
        CentroidSpace::Normalized => (T::one() / T::lit(c.width.max(1) as f64), T::one() / T::lit(c.height.max(1) as f64)),
    };
    let (se, sr) = (scale(eb_edges), scale(rgb_edges));
    let dist = |&(ei, ri): &(usize, usize)| {
        let a = median_centroid(&eb.clusters[ei]).expect("clusters are non-empty");
        let b = median_centroid(&rgb.clusters[ri]).expect("clusters are non-empty");
        Point2::new(a.x * se.0, a.y * se.1).dist(&Point2::new(b.x * sr.0, b.y * sr.1))
    };
    let mut d: Vec<T> = pairs.iter().map(dist).collect();
    sort_reals(&mut d);
    let limit = percentile_sorted(&d, 0.5) * T::lit(gate);
    pairs.into_iter().filter(|p| dist(p) <= limit).collect()
}

/// Mean Euclidean distance between transformed event-camera points and their RGB counterparts.
pub fn reprojection_error<T: Real>(t: &Affine<T>, gt_pairs: &[Correspondence<T>]) -> Result<T> {
    if gt_pairs.is_empty() {
        return Err(Error::InvalidInput("reprojection error needs at least one pair".into()));
    }
    let sum: T = gt_pairs.iter().map(|c| t.apply(&c.eb).dist(&c.rgb)).sum();
    Ok(sum / T::lit(gt_pairs.len() as f64))
}
