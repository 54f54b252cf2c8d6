use std::fmt;
use std::fs;
use std::time::Instant;

use anyhow::Result;
use eventfuse::io::{self, CalibrationMeta};
use eventfuse::pipeline::{score_frames, select_by_error, select_by_inliers, CalibrationSession, FrameCalibration};
use serde::Serialize;

use super::{fmt_opt, load_frame, open_sequence, write_text};
use crate::config::{require_files, Context};
use crate::overlay::calibration_overlay;
use crate::CalibrateArgs;

/// No frame of the sequence produced a transform.
#[derive(Debug)]
pub struct AllFramesFailed {
    pub frames: Vec<(usize, String)>,
}

impl fmt::Display for AllFramesFailed {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "calibration failed on all {} frames", self.frames.len())?;
        for (i, why) in &self.frames {
            write!(f, "; frame {i}: {why}")?;
        }
        Ok(())
    }
}

impl std::error::Error for AllFramesFailed {}

#[derive(Serialize)]
struct Summary {
    selected_frame: usize,
    selection: &'static str,
    inliers: usize,
    reprojection_error: Option<f64>,
    calibrated_frames: usize,
    total_frames: usize,
}

pub fn calibrate(ctx: &Context, args: &CalibrateArgs) -> Result<()> {
    let seq = open_sequence(&args.manifest)?;
    let m = &seq.manifest;
    let mut needed = vec![seq.resolve(&m.events)];
    for f in &m.frames {
        needed.push(seq.resolve(&f.rgb));
        needed.extend(f.masks.as_ref().map(|p| seq.resolve(p)));
    }
    needed.extend(m.gt_correspondences.as_ref().map(|p| seq.resolve(p)));
    require_files(needed)?;

    let (eb_dims, rgb_dims) = (m.eb_dims(), m.rgb_dims());
    let events = io::load_events(&seq.resolve(&m.events), Some(eb_dims))?;
    let gt = match &m.gt_correspondences {
        Some(p) => io::load_correspondences(&seq.resolve(p))?.into_iter().flat_map(|f| f.pairs).collect(),
        None => Vec::new(),
    };

    let overlay_dir = ctx.out_path("overlays");
    if ctx.overlay {
        fs::create_dir_all(&overlay_dir)?;
    }
    let mut session = CalibrationSession::new(&ctx.cfg, &events, eb_dims, rgb_dims)?.keep_edges(ctx.overlay);
    let mut frames = Vec::with_capacity(m.frames.len());
    for f in &m.frames {
        let started = Instant::now();
        let rgb = load_frame(&seq, &f.rgb)?;
        let masks = match &f.masks {
            Some(p) => io::load_masks(&seq.resolve(p), rgb_dims)?,
            None => Vec::new(),
        };
        let mut r = session.push_frame(f.index, f.t1_us, &rgb, &masks)?;
        if let (true, Some(t)) = (ctx.overlay, &r.transform) {
            let img = calibration_overlay(&rgb, r.rgb_edges.as_ref(), r.eb_edges.as_ref(), t);
            io::save_rgb_png(&overlay_dir.join(format!("calib_{:04}.png", f.index)), &img)?;
        }
        r.eb_edges = None;
        r.rgb_edges = None;
        log::info!(
            "frame {}: {:?}, {} inliers, {:.1} ms",
            f.index,
            r.status,
            r.inliers,
            started.elapsed().as_secs_f64() * 1e3
        );
        frames.push(r);
    }

    score_frames(&mut frames, &gt)?;
    write_text(&ctx.out_path("calibration_frames.csv"), &frames_csv(&frames))?;
    io::write_json(&ctx.out_path("calibration_frames.json"), &frames)?;

    let by_error = frames.iter().any(|f| f.reprojection_error.is_some());
    let selected = if by_error { select_by_error(&frames) } else { select_by_inliers(&frames) };
    let Some(k) = selected else {
        let reasons = frames
            .iter()
            .map(|f| (f.frame_index, f.message.clone().unwrap_or_else(|| format!("{:?}", f.status))))
            .collect();
        return Err(AllFramesFailed { frames: reasons }.into());
    };
    let best = &frames[k];
    let t = best.transform.expect("selected frames are calibrated");
    let meta = CalibrationMeta {
        source_resolution: m.eb_resolution,
        target_resolution: m.rgb_resolution,
        created_by: format!("eventfuse {} calibrate (frame {})", env!("CARGO_PKG_VERSION"), best.frame_index),
    };
    io::save_calibration(&ctx.out_path("calibration.json"), &t, &meta)?;
    let summary = Summary {
        selected_frame: best.frame_index,
        selection: if by_error { "min_reprojection_error" } else { "max_inliers" },
        inliers: best.inliers,
        reprojection_error: best.reprojection_error,
        calibrated_frames: frames.iter().filter(|f| f.transform.is_some()).count(),
        total_frames: frames.len(),
    };
    io::write_json(&ctx.out_path("calibration_summary.json"), &summary)?;
    println!(
        "selected frame {} ({} inliers, reprojection error {} px)",
        summary.selected_frame,
        summary.inliers,
        fmt_opt(summary.reprojection_error)
    );
    Ok(())
}

fn frames_csv(frames: &[FrameCalibration]) -> String {
    let mut s = String::from("frame_index,status,inliers,eb_edge_points,rgb_edge_points,reprojection_error_px,a,b,c,d,e,f\n");
    for f in frames {
        let status = serde_json::to_value(f.status).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default();
        let params = match &f.transform {
            Some(t) => t.params().map(|v| v.to_string()).join(","),
            None => ",,,,,".to_string(),
        };
        s.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            f.frame_index,
            status,
            f.inliers,
            f.eb_edge_points,
            f.rgb_edge_points,
            fmt_opt(f.reprojection_error),
            params
        ));
    }
    s
}
