use serde::{Deserialize, Serialize};

use super::spatial::GridIndex;
use crate::error::{Error, Result};
use crate::geometry::{Affine, Point2};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IcpConfig {
    pub max_iterations: usize,
    pub convergence_delta: f64,
    pub max_pair_distance: f64,
}

impl Default for IcpConfig {
    fn default() -> Self {
        Self {
            max_iterations: 50,
            convergence_delta: 1e-3,
            max_pair_distance: 30.0,
        }
    }
}

impl IcpConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.convergence_delta >= 0.0) || !(self.max_pair_distance > 0.0 && self.max_pair_distance.is_finite()) {
            return Err(Error::Config(format!("invalid ICP config: {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IcpOutcome<T> {
    pub transform: Affine<T>,
    /// Accepted update steps.
    pub iterations: usize,
    /// False when too few pairs fell within range of the initial transform.
    pub refined: bool,
    /// Mean pair distance for the initial transform and after each accepted step.
    pub mean_distances: Vec<T>,
}

struct Pairing<T> {
    src: Vec<Point2<T>>,
    dst: Vec<Point2<T>>,
    mean: T,
}

fn pair_up<T: Real>(src: &[Point2<T>], dst: &[Point2<T>], grid: &GridIndex<'_, T>, t: &Affine<T>, max_d: T) -> Pairing<T> {
    let mut out = Pairing { src: Vec::new(), dst: Vec::new(), mean: T::zero() };
    let mut sum = T::zero();
    for p in src {
        if let Some((j, d)) = grid.nearest(&t.apply(p), max_d) {
            out.src.push(*p);
            out.dst.push(dst[j]);
            sum = sum + d;
        }
    }
    if !out.src.is_empty() {
        out.mean = sum / T::from_usize(out.src.len()).expect("count fits scalar");
    }
    out
}

/// Point-to-point ICP with a full affine model.
///
/// Each step pairs every transformed source point with its nearest destination
/// point within `max_pair_distance` and refits the affine by least squares. A
/// step is accepted only if it does not increase the mean pair distance, so
/// `mean_distances` is non-increasing. Stops when the improvement falls below
/// `convergence_delta`, after `max_iterations`, or on a rejected step.
pub fn refine_icp<T: Real>(src: &[Point2<T>], dst: &[Point2<T>], init: &Affine<T>, cfg: &IcpConfig) -> Result<IcpOutcome<T>> {
    cfg.validate()?;
    if src.is_empty() || dst.is_empty() {
        return Err(Error::InvalidInput("ICP needs non-empty point clouds".into()));
    }
    let max_d = T::lit(cfg.max_pair_distance);
    let delta = T::lit(cfg.convergence_delta);
    let grid = GridIndex::new(dst, max_d);
    let mut pairing = pair_up(src, dst, &grid, init, max_d);
    let mut outcome = IcpOutcome {
        transform: *init,
        iterations: 0,
        refined: false,
        mean_distances: Vec::new(),
    };
    if pairing.src.len() < 3 {
        return Ok(outcome);
    }
    outcome.refined = true;
    outcome.mean_distances.push(pairing.mean);
    for _ in 0..cfg.max_iterations {
        let Ok(candidate) = Affine::fit(&pairing.src, &pairing.dst) else {
            break;
        };
        let next = pair_up(src, dst, &grid, &candidate, max_d);
        if next.src.len() < 3 || !(next.mean <= pairing.mean) {
            break;
        }
        let improvement = pairing.mean - next.mean;
        outcome.transform = candidate;
        outcome.iterations += 1;
        outcome.mean_distances.push(next.mean);
        pairing = next;
        if improvement < delta {
            break;
        }
    }
    Ok(outcome)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sparse_cloud(seed: u64, n: usize) -> Vec<Point2<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| Point2::new(rng.random_range(0.0..600.0), rng.random_range(0.0..400.0))).collect()
    }

    #[test]
    fn identical_clouds_converge_immediately() {
        let pts = sparse_cloud(1, 80);
        let out = refine_icp(&pts, &pts, &Affine::identity(), &IcpConfig::default()).unwrap();
        assert!(out.transform.max_abs_diff(&Affine::identity()) < 1e-9);
        assert_eq!(out.iterations, 1);
        assert!(out.refined);
    }

    #[test]
    fn recovers_translation() {
        let src = sparse_cloud(2, 80);
        let dst: Vec<_> = src.iter().map(|p| Point2::new(p.x + 4.0, p.y + 3.0)).collect();
        let out = refine_icp(&src, &dst, &Affine::identity(), &IcpConfig::default()).unwrap();
        assert!(out.transform.max_abs_diff(&Affine::translation(4.0, 3.0)) < 1e-6, "{:?}", out.transform);
    }

    #[test]
    fn mean_distance_non_increasing() {
        for seed in 0..10 {
            let src = sparse_cloud(10 + seed, 150);
            let t = Affine::from_params([1.02, 0.01, 6.0, -0.015, 0.98, -4.0]).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let dst: Vec<_> = src
                .iter()
                .map(|p| {
                    let q = t.apply(p);
                    Point2::new(q.x + rng.random_range(-0.5..0.5), q.y + rng.random_range(-0.5..0.5))
                })
                .collect();
            let out = refine_icp(&src, &dst, &Affine::identity(), &IcpConfig::default()).unwrap();
            for w in out.mean_distances.windows(2) {
                assert!(w[1] <= w[0]);
            }
        }
    }

    #[test]
    fn out_of_range_returns_init() {
        let src = sparse_cloud(3, 10);
        let dst: Vec<_> = src.iter().map(|p| Point2::new(p.x + 5000.0, p.y)).collect();
        let out = refine_icp(&src, &dst, &Affine::identity(), &IcpConfig::default()).unwrap();
        assert!(!out.refined);
        assert_eq!(out.transform, Affine::identity());
        assert!(refine_icp(&[], &dst, &Affine::identity(), &IcpConfig::default()).is_err());
    }
}
