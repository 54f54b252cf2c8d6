//! Acceptance suite. Runs every criterion in sequence, prints one PASS/FAIL
//! line per criterion with the measured figures, and exits nonzero if any
//! criterion fails.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use eventfuse::calibration::{
    assignment_cost, cluster_points, estimate_affine_ransac, refine_icp, reprojection_error, solve_assignment, CalibrationConfig, Correspondence,
    DbscanConfig, IcpConfig, RansacConfig,
};
use eventfuse::evaluation::{evaluate_detections, EvalConfig};
use eventfuse::events::{filter_noise_events, NoiseFilterConfig};
use eventfuse::fusion::{simple_late_fusion, spatiotemporal_late_fusion, FusionConfig, Provenance, StlfState};
use eventfuse::geometry::{Affine, Point2};
use eventfuse::model::{BBox, BinaryMask, ClassId, Detection, DetectionSource, Event, Polarity};
use eventfuse::pipeline::{select_by_inliers, CalibrationSession, FrameCalibration, FusionMode, FusionSession, PipelineConfig};
use eventfuse::synth::{generate_scene, EventModelConfig, SceneConfig, SyntheticScene};
use eventfuse::tracking::{Sort, SortConfig};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn within(elapsed: Duration, budget_s: f64) -> bool {
    elapsed.as_secs_f64() < budget_s
}

// ---------------------------------------------------------------------------
// Calibration recovery on synthetic scenes

fn calibrate_scene(s: &SyntheticScene, cfg: &PipelineConfig) -> Vec<FrameCalibration> {
    let m = &s.manifest;
    let mut session = CalibrationSession::new(cfg, &s.events, m.eb_dims(), m.rgb_dims()).expect("valid session");
    (0..s.frames.len())
        .map(|k| session.push_frame(k, s.frame_span(k).1, &s.frames[k], &s.masks[k]).expect("frame processes"))
        .collect()
}

/// Reprojection error of the most-inlier frame against the scene's exact
/// correspondences, or `None` if no frame calibrated.
fn scene_error(cfg: &SceneConfig) -> Option<f64> {
    let s = generate_scene(cfg, &EventModelConfig::default()).expect("scene generates");
    let frames = calibrate_scene(&s, &PipelineConfig::default());
    let best = select_by_inliers(&frames)?;
    let gt: Vec<Correspondence<f64>> = s.correspondences.iter().flat_map(|c| c.pairs.clone()).collect();
    reprojection_error(&frames[best].transform?, &gt).ok()
}

fn calibration_recovery(make: impl Fn(u64) -> SceneConfig, tol_px: f64, need: usize, budget_s: f64) -> Outcome {
    let start = Instant::now();
    let errors: Vec<Option<f64>> = (0..20).map(|seed| scene_error(&make(seed))).collect();
    let elapsed = start.elapsed();
    let ok = errors.iter().filter(|e| e.is_some_and(|v| v <= tol_px)).count();
    let list: Vec<String> = errors.iter().map(|e| e.map_or("fail".into(), |v| format!("{v:.2}"))).collect();
    outcome(
        ok >= need && within(elapsed, budget_s),
        format!("{ok}/20 within {tol_px} px (need {need}), {:.1} s (budget {budget_s} s); errors [{}]", elapsed.as_secs_f64(), list.join(", ")),
    )
}

fn c1_single_object() -> Outcome {
    calibration_recovery(SceneConfig::random_single, 5.0, 18, 60.0)
}

fn c2_multi_object() -> Outcome {
    calibration_recovery(|seed| SceneConfig::random_multi(seed, 4), 10.0, 16, 120.0)
}

// ---------------------------------------------------------------------------
// Assignment

fn permutations(n: usize, k: usize) -> Vec<Vec<usize>> {
    fn go(n: usize, k: usize, cur: &mut Vec<usize>, used: &mut Vec<bool>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for j in 0..n {
            if !used[j] {
                used[j] = true;
                cur.push(j);
                go(n, k, cur, used, out);
                cur.pop();
                used[j] = false;
            }
        }
    }
    let mut out = Vec::new();
    go(n, k, &mut Vec::new(), &mut vec![false; n], &mut out);
    out
}

/// Minimum over every injective row-to-column map, summed in row order.
fn brute_force_assignment(cost: &DMatrix<f64>) -> f64 {
    let (r, c) = cost.shape();
    let (small, large, transposed) = if r <= c { (r, c, false) } else { (c, r, true) };
    let mut best = f64::INFINITY;
    for perm in permutations(large, small) {
        let mut pairs: Vec<(usize, usize)> = perm.iter().enumerate().map(|(i, &j)| if transposed { (j, i) } else { (i, j) }).collect();
        pairs.sort_unstable();
        let total = pairs.iter().fold(0.0, |acc, &(a, b)| acc + cost[(a, b)]);
        best = best.min(total);
    }
    best
}

fn c3_assignment() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut mismatches = 0;
    for case in 0..500 {
        let (r, c) = (rng.random_range(1..=7), rng.random_range(1..=7));
        // Every other matrix uses small integers so ties are common.
        let cost = DMatrix::from_fn(r, c, |_, _| if case % 2 == 0 { rng.random_range(0.0..100.0) } else { rng.random_range(0..5) as f64 });
        let pairs = solve_assignment(&cost).expect("finite costs");
        let valid = pairs.len() == r.min(c)
            && pairs.iter().map(|p| p.0).collect::<BTreeSet<_>>().len() == pairs.len()
            && pairs.iter().map(|p| p.1).collect::<BTreeSet<_>>().len() == pairs.len();
        if !valid || assignment_cost(&cost, &pairs) != brute_force_assignment(&cost) {
            mismatches += 1;
        }
    }
    let elapsed = start.elapsed();
    outcome(mismatches == 0 && within(elapsed, 10.0), format!("{mismatches} mismatches over 500 matrices, {:.2} s", elapsed.as_secs_f64()))
}

// ---------------------------------------------------------------------------
// Clustering

/// Density-connectivity by definition: core points, components of the core
/// graph, border points adjacent to a core point, noise otherwise.
struct DensityOracle {
    core_components: BTreeSet<Vec<usize>>,
    border_options: BTreeMap<usize, BTreeSet<usize>>,
    noise: BTreeSet<usize>,
}

fn density_oracle(points: &[Point2<f64>], cfg: &DbscanConfig) -> DensityOracle {
    let n = points.len();
    let near = |a: usize, b: usize| {
        let (dx, dy) = (points[a].x - points[b].x, points[a].y - points[b].y);
        dx * dx + dy * dy <= cfg.eps * cfg.eps
    };
    let core: Vec<bool> = (0..n).map(|i| (0..n).filter(|&j| near(i, j)).count() >= cfg.min_samples).collect();
    let mut component = vec![usize::MAX; n];
    let mut components = Vec::new();
    for s in 0..n {
        if !core[s] || component[s] != usize::MAX {
            continue;
        }
        let id = components.len();
        let mut members = vec![s];
        component[s] = id;
        let mut i = 0;
        while i < members.len() {
            let p = members[i];
            for q in 0..n {
                if core[q] && component[q] == usize::MAX && near(p, q) {
                    component[q] = id;
                    members.push(q);
                }
            }
            i += 1;
        }
        members.sort_unstable();
        components.push(members);
    }
    let mut border_options = BTreeMap::new();
    let mut noise = BTreeSet::new();
    for p in (0..n).filter(|&p| !core[p]) {
        let options: BTreeSet<usize> = (0..n).filter(|&q| core[q] && near(p, q)).map(|q| component[q]).collect();
        if options.is_empty() {
            noise.insert(p);
        } else {
            border_options.insert(p, options);
        }
    }
    DensityOracle {
        core_components: components.iter().cloned().collect(),
        border_options: border_options
            .into_iter()
            .map(|(p, opts)| (p, opts.into_iter().map(|c| components[c][0]).collect()))
            .collect(),
        noise,
    }
}

fn clustering_matches(points: &[Point2<f64>], cfg: &DbscanConfig) -> bool {
    let oracle = density_oracle(points, cfg);
    let set = cluster_points(points, cfg).expect("finite points");
    let index_of = |p: &Point2<f64>| points.iter().position(|q| q == p).expect("output points come from the input");
    let clusters: Vec<Vec<usize>> = set.clusters.iter().map(|c| c.iter().map(index_of).collect()).collect();
    let noise: BTreeSet<usize> = set.noise.iter().map(index_of).collect();
    if noise != oracle.noise {
        return false;
    }
    let is_border = |i: &usize| oracle.border_options.contains_key(i);
    let core_parts: BTreeSet<Vec<usize>> = clusters
        .iter()
        .map(|c| {
            let mut v: Vec<usize> = c.iter().copied().filter(|i| !is_border(i)).collect();
            v.sort_unstable();
            v
        })
        .collect();
    if core_parts != oracle.core_components || core_parts.len() != clusters.len() {
        return false;
    }
    // Each border point sits in the cluster of one of its adjacent core points;
    // components are identified by their smallest core index.
    clusters.iter().all(|c| {
        let rep = c.iter().copied().filter(|i| !is_border(i)).min();
        c.iter().filter(|i| is_border(i)).all(|b| rep.is_some_and(|r| oracle.border_options[b].contains(&r)))
    })
}

fn c4_clustering() -> Outcome {
    let start = Instant::now();
    let s1 = CalibrationConfig::default().with_dbscan_setting(1).expect("setting 1");
    let s2 = CalibrationConfig::default().with_dbscan_setting(2).expect("setting 2");
    let settings = [("S1", s1.dbscan_eb), ("S2-eb", s2.dbscan_eb), ("S2-rgb", s2.dbscan_rgb)];
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut report = Vec::new();
    let mut all_ok = true;
    for (name, cfg) in settings {
        let mut failures = 0;
        for _ in 0..1000 {
            let n = rng.random_range(0..=25);
            let extent = 5.0 * cfg.eps;
            let points: Vec<Point2<f64>> = (0..n).map(|_| Point2::new(rng.random_range(0.0..extent), rng.random_range(0.0..extent))).collect();
            if !clustering_matches(&points, &cfg) {
                failures += 1;
            }
        }
        all_ok &= failures == 0;
        report.push(format!("{name} (eps {}, min {}): {failures} mismatches", cfg.eps, cfg.min_samples));
    }
    let elapsed = start.elapsed();
    outcome(all_ok && within(elapsed, 30.0), format!("1000 sets per setting; {}; {:.2} s", report.join("; "), elapsed.as_secs_f64()))
}

// ---------------------------------------------------------------------------
// RANSAC

fn c5_ransac() -> Outcome {
    let start = Instant::now();
    let mut recovered = 0;
    let mut worst = 0.0f64;
    for trial in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(500 + trial);
        let gt = Affine::from_params([
            rng.random_range(2.7..3.2),
            rng.random_range(-0.1..0.1),
            rng.random_range(-150.0..150.0),
            rng.random_range(-0.1..0.1),
            rng.random_range(2.7..3.2),
            rng.random_range(-150.0..150.0),
        ])
        .expect("invertible");
        let n = 100;
        let pairs: Vec<Correspondence<f64>> = (0..n)
            .map(|i| {
                let eb = Point2::new(rng.random_range(0.0..640.0), rng.random_range(0.0..480.0));
                let rgb = if i % 10 < 3 { Point2::new(rng.random_range(0.0..1920.0), rng.random_range(0.0..1200.0)) } else { gt.apply(&eb) };
                Correspondence::new(eb, rgb)
            })
            .collect();
        let cfg = RansacConfig { seed: trial, ..RansacConfig::default() };
        let fit = estimate_affine_ransac(&pairs, &cfg).expect("enough pairs");
        let diff = fit.transform.max_abs_diff(&gt);
        worst = worst.max(diff);
        if diff <= 1e-2 {
            recovered += 1;
        }
    }
    let elapsed = start.elapsed();
    outcome(
        recovered >= 95 && within(elapsed, 30.0),
        format!("{recovered}/100 within 1e-2 at 30% outliers, worst diff {worst:.2e}, {:.2} s", elapsed.as_secs_f64()),
    )
}

// ---------------------------------------------------------------------------
// ICP

/// Points with pairwise separation of at least `min_sep`.
fn separated_cloud(rng: &mut ChaCha8Rng, n: usize, min_sep: f64) -> Vec<Point2<f64>> {
    let mut pts: Vec<Point2<f64>> = Vec::with_capacity(n);
    while pts.len() < n {
        let p = Point2::new(rng.random_range(0.0..600.0), rng.random_range(0.0..400.0));
        if pts.iter().all(|q| q.dist(&p) >= min_sep) {
            pts.push(p);
        }
    }
    pts
}

fn c6_icp() -> Outcome {
    let cfg = IcpConfig::default();
    let mut increases = 0;
    let mut unrefined = 0;
    for case in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(600 + case);
        let src: Vec<Point2<f64>> = (0..150).map(|_| Point2::new(rng.random_range(0.0..600.0), rng.random_range(0.0..400.0))).collect();
        let truth = Affine::from_params([
            1.0 + rng.random_range(-0.03..0.03),
            rng.random_range(-0.03..0.03),
            rng.random_range(-8.0..8.0),
            rng.random_range(-0.03..0.03),
            1.0 + rng.random_range(-0.03..0.03),
            rng.random_range(-8.0..8.0),
        ])
        .expect("near identity");
        let mut dst: Vec<Point2<f64>> = src
            .iter()
            .map(|p| {
                let q = truth.apply(p);
                Point2::new(q.x + rng.random_range(-1.0..1.0), q.y + rng.random_range(-1.0..1.0))
            })
            .collect();
        dst.extend((0..20).map(|_| Point2::new(rng.random_range(0.0..600.0), rng.random_range(0.0..400.0))));
        let out = refine_icp(&src, &dst, &Affine::identity(), &cfg).expect("non-empty clouds");
        if !out.refined {
            unrefined += 1;
        }
        if out.mean_distances.windows(2).any(|w| w[1] > w[0]) {
            increases += 1;
        }
    }

    let mut translation_fail = 0;
    let mut worst = 0.0f64;
    for case in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(700 + case);
        let src = separated_cloud(&mut rng, 80, 20.0);
        let (tx, ty) = (rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0));
        let dst: Vec<Point2<f64>> = src.iter().map(|p| Point2::new(p.x + tx, p.y + ty)).collect();
        let out = refine_icp(&src, &dst, &Affine::identity(), &cfg).expect("non-empty clouds");
        let diff = out.transform.max_abs_diff(&Affine::translation(tx, ty));
        worst = worst.max(diff);
        if diff > 1e-6 {
            translation_fail += 1;
        }
    }
    outcome(
        increases == 0 && unrefined == 0 && translation_fail == 0,
        format!(
            "{increases}/100 perturbed cases with an increasing mean distance ({unrefined} unrefined); {translation_fail}/100 translations off by more than 1e-6 (worst {worst:.1e})"
        ),
    )
}

// ---------------------------------------------------------------------------
// Noise filter

/// Events of the closed neighborhood `[x ± r_x] x [y ± r_y] x [t - r_t, t]`,
/// the event itself included, counted by scanning the whole stream.
fn brute_force_filter(events: &[Event], cfg: &NoiseFilterConfig) -> Vec<Event> {
    events
        .iter()
        .filter(|e| {
            let n = events
                .iter()
                .filter(|o| {
                    (o.x as i64 - e.x as i64).abs() <= cfg.r_x as i64
                        && (o.y as i64 - e.y as i64).abs() <= cfg.r_y as i64
                        && o.t_us <= e.t_us
                        && o.t_us + cfg.r_t_us >= e.t_us
                })
                .count();
            n >= cfg.min_events
        })
        .copied()
        .collect()
}

fn uniform_noise(rng: &mut ChaCha8Rng, n: usize) -> Vec<Event> {
    let mut ev: Vec<Event> = (0..n)
        .map(|_| {
            let p = if rng.random_bool(0.5) { Polarity::Positive } else { Polarity::Negative };
            Event::new(rng.random_range(0..640), rng.random_range(0..480), rng.random_range(0..1_000_000), p)
        })
        .collect();
    ev.sort_by_key(|e| e.t_us);
    ev
}

/// A vertical bar edge 10 rows tall sweeping one column per millisecond; every
/// pixel fires 5 events within 200 µs of the edge crossing it.
fn moving_bar(rng: &mut ChaCha8Rng, columns: u16) -> Vec<Event> {
    let (x0, y0) = (rng.random_range(20..600u16), rng.random_range(20..460u16));
    let t0 = rng.random_range(0..50_000u64);
    let dir: i32 = if rng.random_bool(0.5) { 1 } else { -1 };
    let mut ev = Vec::new();
    for c in 0..columns {
        let x = (x0 as i32 + dir * c as i32).clamp(0, 639) as u16;
        for row in 0..10 {
            for _ in 0..5 {
                ev.push(Event::new(x, y0 + row, t0 + c as u64 * 1000 + rng.random_range(0..200), Polarity::Positive));
            }
        }
    }
    ev.sort_by_key(|e| e.t_us);
    ev
}

fn c7_noise_filter() -> Outcome {
    let cfg = NoiseFilterConfig::default();
    let mut oracle_mismatch = 0;
    let mut noise_kept = 0;
    let (mut bar_steady, mut bar_steady_kept, mut bar_total, mut bar_kept) = (0, 0, 0, 0);
    let mut worst_steady = 1.0f64;
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(7000 + seed);
        let noise = uniform_noise(&mut rng, 1000);
        let kept = filter_noise_events(&noise, &cfg).expect("sorted stream");
        oracle_mismatch += usize::from(kept != brute_force_filter(&noise, &cfg));
        noise_kept += kept.len();

        let bar = moving_bar(&mut rng, 20);
        let kept = filter_noise_events(&bar, &cfg).expect("sorted stream");
        oracle_mismatch += usize::from(kept != brute_force_filter(&bar, &cfg));
        // Events whose whole look-back window lies inside the stream.
        let warm_from = bar[0].t_us + cfg.r_t_us;
        let steady: Vec<&Event> = bar.iter().filter(|e| e.t_us >= warm_from).collect();
        let steady_kept = kept.iter().filter(|e| e.t_us >= warm_from).count();
        worst_steady = worst_steady.min(steady_kept as f64 / steady.len() as f64);
        bar_steady += steady.len();
        bar_steady_kept += steady_kept;
        bar_total += bar.len();
        bar_kept += kept.len();

        let mut mixed: Vec<Event> = noise.iter().chain(&bar).copied().collect();
        mixed.sort_by_key(|e| e.t_us);
        mixed.truncate(1000);
        let kept = filter_noise_events(&mixed, &cfg).expect("sorted stream");
        oracle_mismatch += usize::from(kept != brute_force_filter(&mixed, &cfg));
    }
    let steady_rate = bar_steady_kept as f64 / bar_steady as f64;
    outcome(
        oracle_mismatch == 0 && noise_kept == 0 && worst_steady >= 0.99,
        format!(
            "oracle mismatches {oracle_mismatch}/60 streams; noise kept {noise_kept}/20000; bar retained {:.2}% after the first r_t of each stream (worst stream {:.2}%), {:.2}% including the cold start",
            100.0 * steady_rate,
            100.0 * worst_steady,
            100.0 * bar_kept as f64 / bar_total as f64
        ),
    )
}

// ---------------------------------------------------------------------------
// Simple late fusion

fn det(class: ClassId, cx: f64, cy: f64, w: f64, h: f64, conf: f64, source: DetectionSource) -> Detection {
    Detection::new(class, BBox::new(cx, cy, w, h), conf, source).expect("valid detection")
}

fn center_distance(a: &Detection, b: &Detection) -> f64 {
    let (dx, dy) = (a.bbox.cx - b.bbox.cx, a.bbox.cy - b.bbox.cy);
    (dx * dx + dy * dy).sqrt()
}

/// Optimal center-distance pairing of moving RGB and EB detections by
/// exhaustive search, with over-gate pairs dropped afterwards.
fn brute_force_pairs(rgb: &[Detection], moving: &[usize], eb: &[Detection], gate: f64) -> BTreeSet<(usize, usize)> {
    if moving.is_empty() || eb.is_empty() {
        return BTreeSet::new();
    }
    let cost = DMatrix::from_fn(moving.len(), eb.len(), |i, j| center_distance(&rgb[moving[i]], &eb[j]));
    let best = brute_force_assignment(&cost);
    let (r, c) = cost.shape();
    let (small, large, transposed) = if r <= c { (r, c, false) } else { (c, r, true) };
    for perm in permutations(large, small) {
        let mut pairs: Vec<(usize, usize)> = perm.iter().enumerate().map(|(i, &j)| if transposed { (j, i) } else { (i, j) }).collect();
        pairs.sort_unstable();
        if pairs.iter().fold(0.0, |acc, &(a, b)| acc + cost[(a, b)]) == best {
            return pairs.into_iter().filter(|&(i, j)| cost[(i, j)] <= gate).map(|(i, j)| (moving[i], j)).collect();
        }
    }
    unreachable!("the optimum is attained by some permutation")
}

fn c8_slf_union() -> Outcome {
    let cfg = FusionConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut violations = Vec::new();
    let (mut gate_exact_paired, mut gate_over_split) = (0, 0);
    for frame in 0..200 {
        let class = || ClassId::CAR;
        let mut rgb = Vec::new();
        for _ in 0..rng.random_range(0..5) {
            // Boxes sit wholly on one side of the motion boundary at x = 200.
            let cx = if rng.random_bool(0.2) { rng.random_range(0.0..130.0) } else { rng.random_range(270.0..1200.0) };
            let (w, h) = (rng.random_range(20.0..120.0), rng.random_range(20.0..120.0));
            rgb.push(det(class(), cx, rng.random_range(0.0..1100.0), w, h, rng.random_range(0.05..1.0), DetectionSource::Rgb));
        }
        let mut eb = Vec::new();
        for d in &rgb {
            if rng.random_bool(0.6) {
                let (cx, cy) = (d.bbox.cx + rng.random_range(-60.0..60.0), d.bbox.cy + rng.random_range(-60.0..60.0));
                eb.push(det(class(), cx, cy, d.bbox.w, d.bbox.h, rng.random_range(0.05..1.0), DetectionSource::Event));
            }
        }
        for _ in 0..rng.random_range(0..2) {
            eb.push(det(class(), rng.random_range(0.0..1200.0), rng.random_range(0.0..1100.0), 40.0, 40.0, 0.5, DetectionSource::Event));
        }
        // Two isolated probes: one pair at exactly the gate, one just beyond it.
        let (px, py) = (1500.0, 150.0 + (frame % 5) as f64 * 10.0);
        let exact = (rgb.len(), eb.len());
        rgb.push(det(class(), px, py, 60.0, 60.0, 0.9, DetectionSource::Rgb));
        eb.push(det(class(), px + 30.0, py + 40.0, 60.0, 60.0, 0.9, DetectionSource::Event));
        let over = (rgb.len(), eb.len());
        rgb.push(det(class(), px, py + 700.0, 60.0, 60.0, 0.9, DetectionSource::Rgb));
        eb.push(det(class(), px, py + 700.0 + cfg.distance_gate + 1e-9, 60.0, 60.0, 0.9, DetectionSource::Event));

        let motion = BinaryMask::from_fn(1920, 1200, |x, _| x >= 200);
        let out = simple_late_fusion(&rgb, &eb, &motion, &cfg);

        let moving: Vec<usize> = (0..rgb.len()).filter(|&i| rgb[i].bbox.cx >= 200.0).collect();
        let want_pairs = brute_force_pairs(&rgb, &moving, &eb, cfg.distance_gate);
        let got_pairs: BTreeSet<(usize, usize)> =
            out.iter().filter(|o| o.provenance == Provenance::Both).map(|o| (o.rgb_index.unwrap(), o.eb_index.unwrap())).collect();
        let rgb_seen: Vec<usize> = out.iter().filter_map(|o| o.rgb_index).collect();
        let eb_seen: Vec<usize> = out.iter().filter_map(|o| o.eb_index).collect();
        let no_dupes = rgb_seen.iter().collect::<BTreeSet<_>>().len() == rgb_seen.len() && eb_seen.iter().collect::<BTreeSet<_>>().len() == eb_seen.len();
        let no_loss = rgb_seen.len() == rgb.len() && eb_seen.len() == eb.len();
        let sizes = out.len() == rgb.len() + eb.len() - want_pairs.len();
        if got_pairs != want_pairs || !no_dupes || !no_loss || !sizes {
            violations.push(frame);
        }
        gate_exact_paired += usize::from(got_pairs.contains(&exact));
        gate_over_split += usize::from(!got_pairs.iter().any(|p| p.0 == over.0 || p.1 == over.1));
    }
    outcome(
        violations.is_empty() && gate_exact_paired == 200 && gate_over_split == 200,
        format!(
            "{} frames violating union semantics; pairs at exactly L={} fused in {gate_exact_paired}/200, pairs just beyond kept apart in {gate_over_split}/200",
            violations.len(),
            cfg.distance_gate
        ),
    )
}

// ---------------------------------------------------------------------------
// Spatiotemporal late fusion

fn c9_stlf_gating() -> Outcome {
    let cfg = FusionConfig::default();
    let motion = BinaryMask::full(1920, 1200);
    let (mut spurious, mut spurious_emitted) = (0, 0);
    let (mut supported, mut supported_kept) = (0, 0);
    for seq in 0..25u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(900 + seq);
        let mut state = StlfState::new(SortConfig::default()).expect("valid tracker");
        let lanes = [220.0, 520.0, 820.0];
        let objects: Vec<([f64; 2], [f64; 2], [f64; 2])> = lanes
            .iter()
            .map(|&y| {
                let start = [rng.random_range(200.0..600.0), y];
                let vel = [rng.random_range(5.0..15.0), rng.random_range(-2.0..2.0)];
                let size = [rng.random_range(80.0..160.0), rng.random_range(60.0..120.0)];
                (start, vel, size)
            })
            .collect();
        let mut first_support: Vec<Option<usize>> = vec![None; objects.len()];
        for k in 0..20 {
            let mut rgb = Vec::new();
            let mut eb = Vec::new();
            for (start, vel, size) in &objects {
                let (cx, cy) = (start[0] + vel[0] * k as f64, start[1] + vel[1] * k as f64);
                rgb.push(det(ClassId::CAR, cx + rng.random_range(-3.0..3.0), cy + rng.random_range(-3.0..3.0), size[0], size[1], rng.random_range(0.3..0.77), DetectionSource::Rgb));
                let seen = rng.random_bool(0.7);
                eb.push(seen.then(|| det(ClassId::CAR, cx + rng.random_range(-5.0..5.0), cy + rng.random_range(-5.0..5.0), size[0], size[1], 0.6, DetectionSource::Event)));
            }
            let n_true = rgb.len();
            let eb_index: Vec<Option<usize>> = eb
                .iter()
                .scan(0, |next, d| {
                    Some(d.map(|_| {
                        *next += 1;
                        *next - 1
                    }))
                })
                .collect();
            let eb: Vec<Detection> = eb.into_iter().flatten().collect();
            // Spurious RGB boxes below every lane, out of reach of any event detection.
            for _ in 0..rng.random_range(1..=2) {
                rgb.push(det(ClassId::PEDESTRIAN, rng.random_range(40.0..1880.0), rng.random_range(1000.0..1160.0), rng.random_range(40.0..80.0), rng.random_range(40.0..80.0), rng.random_range(0.3..0.77), DetectionSource::Rgb));
            }
            let out = spatiotemporal_late_fusion(&mut state, &rgb, &eb, &motion, &cfg);
            let emitted: BTreeSet<usize> = out.iter().filter_map(|o| o.rgb_index).collect();
            for i in n_true..rgb.len() {
                spurious += 1;
                spurious_emitted += usize::from(emitted.contains(&i));
            }
            for (o, support) in first_support.iter_mut().enumerate() {
                if support.is_none() && eb_index[o].is_some() {
                    *support = Some(k);
                }
                if support.is_some() {
                    supported += 1;
                    supported_kept += usize::from(emitted.contains(&o));
                }
            }
        }
    }
    let suppressed = 1.0 - spurious_emitted as f64 / spurious as f64;
    let retained = supported_kept as f64 / supported as f64;
    outcome(
        suppressed >= 0.99 && retained >= 0.99,
        format!(
            "500 frames: spurious suppressed {:.2}% ({spurious_emitted}/{spurious} emitted), supported objects retained {:.2}% ({supported_kept}/{supported})",
            100.0 * suppressed,
            100.0 * retained
        ),
    )
}

// ---------------------------------------------------------------------------
// Tracking identity

fn c10_tracking() -> Outcome {
    let mut stable = 0;
    let mut notes = Vec::new();
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let mut sort = Sort::new(SortConfig::default()).expect("valid tracker");
        let (start, vel) = ([rng.random_range(100.0..400.0), rng.random_range(200.0..800.0)], [rng.random_range(5.0..20.0), rng.random_range(-6.0..6.0)]);
        let mut ids = BTreeSet::new();
        for k in 0..50 {
            let boxes = if rng.random_bool(0.1) {
                Vec::new()
            } else {
                vec![BBox::new(start[0] + vel[0] * k as f64 + rng.random_range(-1.0..1.0), start[1] + vel[1] * k as f64 + rng.random_range(-1.0..1.0), 90.0, 60.0)]
            };
            for r in sort.update(&boxes) {
                if r.detection.is_some() {
                    ids.insert(r.id);
                }
            }
        }
        if ids.len() == 1 {
            stable += 1;
        } else {
            notes.push(format!("seed {seed}: {} ids", ids.len()));
        }
    }
    outcome(stable == 20, format!("{stable}/20 seeds kept one track id over 50 frames{}", notes.iter().map(|n| format!("; {n}")).collect::<String>()))
}

// ---------------------------------------------------------------------------
// Evaluation

fn iou_by_hand(a: &BBox, b: &BBox) -> f64 {
    let (ax0, ay0, ax1, ay1) = (a.cx - a.w / 2.0, a.cy - a.h / 2.0, a.cx + a.w / 2.0, a.cy + a.h / 2.0);
    let (bx0, by0, bx1, by1) = (b.cx - b.w / 2.0, b.cy - b.h / 2.0, b.cx + b.w / 2.0, b.cy + b.h / 2.0);
    let iw = (ax1.min(bx1) - ax0.max(bx0)).max(0.0);
    let ih = (ay1.min(by1) - ay0.max(by0)).max(0.0);
    let inter = iw * ih;
    let union = a.w * a.h + b.w * b.h - inter;
    if union > 0.0 {
        inter / union
    } else {
        0.0
    }
}

struct OracleClass {
    class: ClassId,
    tp: usize,
    fp: usize,
    fn_: usize,
    ap: Option<f64>,
}

/// PR and AP computed from first principles: retained detections in order of
/// descending confidence each take the best remaining ground truth of their
/// frame at or above the IoU threshold.
fn brute_force_metrics(dets: &[Vec<Detection>], gts: &[Vec<Detection>], conf_thr: f64, iou_thr: f64) -> (Vec<OracleClass>, Option<f64>) {
    let mut out = Vec::new();
    for class in ClassId::all() {
        let mut cand: Vec<(f64, usize, usize)> = Vec::new();
        for (f, ds) in dets.iter().enumerate() {
            for (i, d) in ds.iter().enumerate() {
                if d.class_id == class && d.confidence >= conf_thr {
                    cand.push((d.confidence, f, i));
                }
            }
        }
        let n_gt: usize = gts.iter().map(|g| g.iter().filter(|d| d.class_id == class).count()).sum();
        if cand.is_empty() && n_gt == 0 {
            continue;
        }
        cand.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then((a.1, a.2).cmp(&(b.1, b.2))));
        let mut used: BTreeSet<(usize, usize)> = BTreeSet::new();
        let (mut tp, mut fp) = (0, 0);
        let mut curve = Vec::new();
        for &(_, f, i) in &cand {
            let mut best: Option<(usize, f64)> = None;
            for (g, gt) in gts[f].iter().enumerate() {
                if gt.class_id != class || used.contains(&(f, g)) {
                    continue;
                }
                let v = iou_by_hand(&dets[f][i].bbox, &gt.bbox);
                if v >= iou_thr && best.is_none_or(|(_, bv)| v > bv) {
                    best = Some((g, v));
                }
            }
            match best {
                Some((g, _)) => {
                    used.insert((f, g));
                    tp += 1;
                }
                None => fp += 1,
            }
            let recall = if n_gt > 0 { tp as f64 / n_gt as f64 } else { 0.0 };
            curve.push((recall, tp as f64 / (tp + fp) as f64));
        }
        let ap = (n_gt > 0).then(|| {
            let mut ap = 0.0;
            let mut prev_recall = 0.0;
            for k in 0..curve.len() {
                if curve[k].0 != prev_recall {
                    let envelope = curve[k..].iter().map(|c| c.1).fold(0.0, f64::max);
                    ap += (curve[k].0 - prev_recall) * envelope;
                    prev_recall = curve[k].0;
                }
            }
            ap
        });
        out.push(OracleClass { class, tp, fp, fn_: n_gt - tp, ap });
    }
    let aps: Vec<f64> = out.iter().filter_map(|c| c.ap).collect();
    let map = (!aps.is_empty()).then(|| aps.iter().sum::<f64>() / aps.len() as f64);
    (out, map)
}

fn c11_metrics() -> Outcome {
    let cfg = EvalConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut mismatches = Vec::new();
    for case in 0..100 {
        let frames = rng.random_range(1..=4);
        let classes = [ClassId::CAR, ClassId::PEDESTRIAN, ClassId::TRUCK];
        let mut gts = Vec::new();
        let mut dets = Vec::new();
        for _ in 0..frames {
            let g: Vec<Detection> = (0..rng.random_range(0..=5))
                .map(|_| {
                    det(classes[rng.random_range(0..3)], rng.random_range(0.0..300.0), rng.random_range(0.0..300.0), rng.random_range(20.0..80.0), rng.random_range(20.0..80.0), 1.0, DetectionSource::Rgb)
                })
                .collect();
            let d: Vec<Detection> = (0..rng.random_range(0..=6))
                .map(|_| {
                    let conf = rng.random_range(0.0..1.0);
                    match g.get(rng.random_range(0..g.len().max(1) + 1)) {
                        Some(gt) if rng.random_bool(0.8) => det(
                            if rng.random_bool(0.9) { gt.class_id } else { classes[rng.random_range(0..3)] },
                            gt.bbox.cx + rng.random_range(-15.0..15.0),
                            gt.bbox.cy + rng.random_range(-15.0..15.0),
                            gt.bbox.w * rng.random_range(0.8..1.2),
                            gt.bbox.h * rng.random_range(0.8..1.2),
                            conf,
                            DetectionSource::Rgb,
                        ),
                        _ => det(classes[rng.random_range(0..3)], rng.random_range(0.0..300.0), rng.random_range(0.0..300.0), 40.0, 40.0, conf, DetectionSource::Rgb),
                    }
                })
                .collect();
            gts.push(g);
            dets.push(d);
        }
        let report = evaluate_detections(&dets, &gts, &cfg).expect("aligned frames");
        let (want, want_map) = brute_force_metrics(&dets, &gts, 0.3, 0.45);
        let same = report.classes.len() == want.len()
            && report.map == want_map
            && report.classes.iter().zip(&want).all(|(g, w)| g.class_id == w.class && g.tp == w.tp && g.fp == w.fp && g.fn_ == w.fn_ && g.ap == w.ap);
        if !same {
            mismatches.push(case);
        }
    }
    outcome(
        mismatches.is_empty() && cfg.confidence_threshold == 0.3 && cfg.iou_threshold == 0.45,
        format!("{} mismatching cases of 100 at confidence {} / IoU {} {:?}", mismatches.len(), cfg.confidence_threshold, cfg.iou_threshold, mismatches),
    )
}

// ---------------------------------------------------------------------------
// Throughput

fn c12_throughput() -> Outcome {
    let scene = generate_scene(&SceneConfig { frames: 12, ..SceneConfig::default() }, &EventModelConfig::default()).expect("scene generates");
    let cfg = PipelineConfig::default();
    let m = &scene.manifest;
    let mut session = FusionSession::new(&cfg, scene.config.ground_truth, m.eb_dims(), m.rgb_dims(), FusionMode::Stlf).expect("valid session");
    let mut times: Vec<f64> = (0..scene.frames.len())
        .map(|k| {
            let started = Instant::now();
            session
                .push_frame(&scene.frames[k], &scene.events, scene.frame_span(k).1, &scene.detections_rgb[k].detections, &scene.detections_eb[k].detections)
                .expect("frame fuses");
            started.elapsed().as_secs_f64() * 1e3
        })
        .collect();
    times.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median = times[times.len() / 2];
    outcome(
        median <= 200.0,
        format!("median {median:.1} ms per 1920x1200 + 640x480 frame pair (min {:.1}, max {:.1}) over {} frames", times[0], times[times.len() - 1], times.len()),
    )
}

// ---------------------------------------------------------------------------
// End-to-end reproducibility

fn run_pipeline(dir: &Path) -> Result<(), String> {
    let steps: [&[&str]; 5] = [
        &["synth", "--seed", "13", "--out", "seq"],
        &["calibrate", "--manifest", "seq/manifest.json", "--seed", "13", "--out", "cal"],
        &["pseudo-label", "--manifest", "seq/manifest.json", "--calibration", "cal/calibration.json", "--out", "labels"],
        &["fuse", "--mode", "slf", "--manifest", "seq/manifest.json", "--calibration", "cal/calibration.json", "--out", "fused"],
        &["eval", "--detections", "fused/fused.json", "--manifest", "seq/manifest.json", "--out", "eval"],
    ];
    for args in steps {
        let out = Command::new(env!("CARGO_BIN_EXE_eventfuse")).current_dir(dir).args(args).output().map_err(|e| e.to_string())?;
        if !out.status.success() {
            return Err(format!("`{}` exited with {}: {}", args[0], out.status, String::from_utf8_lossy(&out.stderr)));
        }
    }
    Ok(())
}

fn tree(root: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).expect("readable dir") {
            let p = e.expect("dir entry").path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p.strip_prefix(root).expect("under root").to_path_buf());
            }
        }
    }
    out.sort();
    out
}

fn c13_reproducibility() -> Outcome {
    let start = Instant::now();
    let runs = [tempfile::tempdir().expect("temp dir"), tempfile::tempdir().expect("temp dir")];
    for r in &runs {
        if let Err(e) = run_pipeline(r.path()) {
            return outcome(false, e);
        }
    }
    let (a, b) = (tree(runs[0].path()), tree(runs[1].path()));
    let differing: Vec<String> = a
        .iter()
        .filter(|f| fs::read(runs[0].path().join(f)).ok() != fs::read(runs[1].path().join(f)).ok())
        .map(|f| f.display().to_string())
        .collect();
    outcome(
        a == b && differing.is_empty(),
        format!(
            "all five steps exited 0 twice; {} files per run, {} differ {:?}, {:.1} s",
            a.len(),
            differing.len() + usize::from(a != b),
            differing,
            start.elapsed().as_secs_f64()
        ),
    )
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 13] = [
        ("calibration recovery, single object", c1_single_object),
        ("calibration recovery, four objects", c2_multi_object),
        ("assignment optimality", c3_assignment),
        ("clustering oracle", c4_clustering),
        ("RANSAC under outliers", c5_ransac),
        ("ICP monotonicity", c6_icp),
        ("event noise filter", c7_noise_filter),
        ("SLF union semantics", c8_slf_union),
        ("STLF gating", c9_stlf_gating),
        ("tracking identity", c10_tracking),
        ("metric oracle", c11_metrics),
        ("throughput budget", c12_throughput),
        ("end-to-end reproducibility", c13_reproducibility),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let o = check();
        failed += usize::from(!o.pass);
        println!("criterion {:>2} {} {name}: {}", i + 1, if o.pass { "PASS" } else { "FAIL" }, o.detail);
    }
    println!("acceptance: {}/{} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
