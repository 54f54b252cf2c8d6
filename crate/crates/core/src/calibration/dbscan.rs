use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::spatial::GridIndex;
use crate::error::{Error, Result};
use crate::geometry::Point2;
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DbscanConfig {
    pub eps: f64,
    pub min_samples: usize,
}

impl DbscanConfig {
    pub fn new(eps: f64, min_samples: usize) -> Result<Self> {
        let cfg = Self { eps, min_samples };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eps > 0.0 && self.eps.is_finite()) || self.min_samples < 1 {
            return Err(Error::Config(format!("invalid DBSCAN config: {self:?}")));
        }
        Ok(())
    }
}

/// Partition of a point set into density clusters and noise.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterSet<T> {
    pub clusters: Vec<Vec<Point2<T>>>,
    pub noise: Vec<Point2<T>>,
}

impl<T> ClusterSet<T> {
    pub fn is_empty(&self) -> bool {
        self.clusters.is_empty()
    }
}

/// Per-point DBSCAN labels: `Some(cluster)` or `None` for noise.
///
/// Points are visited in input order and clusters are grown breadth-first with
/// neighbors in ascending index order. A border point joins the first cluster
/// that reaches it.
pub fn dbscan_labels<T: Real>(points: &[Point2<T>], cfg: &DbscanConfig) -> Result<Vec<Option<usize>>> {
    cfg.validate()?;
    if points.iter().any(|p| !p.is_finite()) {
        return Err(Error::InvalidInput("cluster points must be finite".into()));
    }
    let eps = T::lit(cfg.eps);
    let grid = GridIndex::new(points, eps);
    let mut labels: Vec<Option<usize>> = vec![None; points.len()];
    let mut visited = vec![false; points.len()];
    let mut neigh = Vec::new();
    let mut queue = VecDeque::new();
    let mut next_label = 0;

    for start in 0..points.len() {
        if visited[start] {
            continue;
        }
        visited[start] = true;
        grid.within(&points[start], eps, &mut neigh);
        if neigh.len() < cfg.min_samples {
            continue;
        }
        let label = next_label;
        next_label += 1;
        labels[start] = Some(label);
        queue.extend(neigh.iter().copied());
        while let Some(q) = queue.pop_front() {
            if labels[q].is_none() {
                labels[q] = Some(label);
            }
            if visited[q] {
                continue;
            }
            visited[q] = true;
            grid.within(&points[q], eps, &mut neigh);
            if neigh.len() >= cfg.min_samples {
                queue.extend(neigh.iter().copied().filter(|&n| !visited[n] || labels[n].is_none()));
            }
        }
    }
    Ok(labels)
}

/// Density-based clustering (DBSCAN) with Euclidean distance; the query point
/// counts toward its own neighborhood.
pub fn cluster_points<T: Real>(points: &[Point2<T>], cfg: &DbscanConfig) -> Result<ClusterSet<T>> {
    let labels = dbscan_labels(points, cfg)?;
    let n_clusters = labels.iter().flatten().max().map_or(0, |m| m + 1);
    let mut clusters = vec![Vec::new(); n_clusters];
    let mut noise = Vec::new();
    for (p, l) in points.iter().zip(&labels) {
        match l {
            Some(c) => clusters[*c].push(*p),
            None => noise.push(*p),
        }
    }
    Ok(ClusterSet { clusters, noise })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Direct-definition DBSCAN: core points, their connected components, and
    /// border points attached to some core point within eps.
    fn check_against_oracle(points: &[Point2<f64>], cfg: &DbscanConfig, labels: &[Option<usize>]) {
        let n = points.len();
        let near = |a: usize, b: usize| points[a].dist2(&points[b]) <= cfg.eps * cfg.eps;
        let core: Vec<bool> = (0..n).map(|i| (0..n).filter(|&j| near(i, j)).count() >= cfg.min_samples).collect();
        // Components over core points via repeated relaxation.
        let mut comp: Vec<usize> = (0..n).collect();
        loop {
            let mut changed = false;
            for i in 0..n {
                for j in 0..n {
                    if core[i] && core[j] && near(i, j) && comp[j] < comp[i] {
                        comp[i] = comp[j];
                        changed = true;
                    }
                }
            }
            if !changed {
                break;
            }
        }
        for i in 0..n {
            let reachable = (0..n).any(|j| core[j] && near(i, j));
            assert_eq!(labels[i].is_some(), reachable, "noise status of point {i}");
            if core[i] {
                for j in 0..n {
                    if core[j] {
                        assert_eq!(comp[i] == comp[j], labels[i] == labels[j], "core pair {i},{j}");
                    }
                }
            } else if let Some(l) = labels[i] {
                assert!((0..n).any(|j| core[j] && near(i, j) && labels[j] == Some(l)), "border {i}");
            }
        }
    }

    #[test]
    fn examples() {
        let cfg = DbscanConfig::new(70.0, 2).unwrap();
        let empty = cluster_points::<f64>(&[], &cfg).unwrap();
        assert!(empty.clusters.is_empty() && empty.noise.is_empty());

        let single = cluster_points(&[Point2::new(1.0, 1.0)], &cfg).unwrap();
        assert!(single.clusters.is_empty());
        assert_eq!(single.noise.len(), 1);

        let mut pts = Vec::new();
        for i in 0..10 {
            pts.push(Point2::new(100.0 + i as f64 * 3.0, 100.0));
            pts.push(Point2::new(600.0 + i as f64 * 3.0, 100.0));
        }
        let cs = cluster_points(&pts, &cfg).unwrap();
        assert_eq!(cs.clusters.len(), 2);
        assert!(cs.noise.is_empty());
        assert!(cs.clusters.iter().all(|c| c.len() == 10));
        assert!(DbscanConfig::new(0.0, 2).is_err());
        assert!(DbscanConfig::new(1.0, 0).is_err());
    }

    #[test]
    fn border_point_joins_first_cluster() {
        let cfg = DbscanConfig { eps: 1.0, min_samples: 4 };
        // Cores at x=0 and x=2 both reach the border point at x=1.
        let pts = [0.0, -0.1, -0.2, 1.0, 2.0, 2.1, 2.2].map(|x| Point2::new(x, 0.0));
        let labels = dbscan_labels(&pts, &cfg).unwrap();
        assert_eq!(labels[3], Some(0));
        assert_eq!(labels[4], Some(1));
    }

    proptest! {
        #[test]
        fn matches_density_oracle(
            coords in proptest::collection::vec((0.0f64..400.0, 0.0f64..400.0), 0..25),
            eps in 20.0f64..160.0,
            min_samples in 1usize..4,
        ) {
            let pts: Vec<_> = coords.iter().map(|&(x, y)| Point2::new(x, y)).collect();
            let cfg = DbscanConfig { eps, min_samples };
            let labels = dbscan_labels(&pts, &cfg).unwrap();
            check_against_oracle(&pts, &cfg, &labels);
            let cs = cluster_points(&pts, &cfg).unwrap();
            let total: usize = cs.clusters.iter().map(Vec::len).sum::<usize>() + cs.noise.len();
            prop_assert_eq!(total, pts.len());
        }
    }
}
