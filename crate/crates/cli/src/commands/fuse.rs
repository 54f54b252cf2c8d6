use std::fs;
use std::path::PathBuf;
use std::time::Instant;

use anyhow::{anyhow, ensure, Result};
use eventfuse::io::{self, Sequence};
use eventfuse::model::DetectionSource;
use eventfuse::pipeline::{early_fusion_frame, FusionMode, FusionSession};
use eventfuse::Affine2D;

use super::{load_frame, open_sequence};
use crate::config::{require_files, Context};
use crate::overlay::fusion_overlay;
use crate::{FuseArgs, FuseMode};

pub fn fuse(ctx: &Context, args: &FuseArgs) -> Result<()> {
    let seq = open_sequence(&args.manifest)?;
    let m = &seq.manifest;
    let mut needed = vec![args.calibration.clone(), seq.resolve(&m.events)];
    needed.extend(m.frames.iter().map(|f| seq.resolve(&f.rgb)));
    let det_paths = match args.mode {
        FuseMode::Early => None,
        FuseMode::Slf | FuseMode::Stlf => {
            let rgb = detection_path(&seq, &args.detections_rgb, &m.detections_rgb, "RGB")?;
            let eb = detection_path(&seq, &args.detections_eb, &m.detections_eb, "event-camera")?;
            needed.push(rgb.clone());
            needed.push(eb.clone());
            Some((rgb, eb))
        }
    };
    require_files(needed)?;

    let calib = load_matching_calibration(&seq, &args.calibration)?;
    let eb_dims = m.eb_dims();
    let events = io::load_events(&seq.resolve(&m.events), Some(eb_dims))?;

    let Some((rgb_path, eb_path)) = det_paths else {
        let dir = ctx.out_path("early");
        fs::create_dir_all(&dir)?;
        for f in &m.frames {
            let started = Instant::now();
            let rgb = load_frame(&seq, &f.rgb)?;
            let blended = early_fusion_frame(&ctx.cfg, &calib, &rgb, &events, f.t1_us, eb_dims)?;
            io::save_rgb_png(&dir.join(format!("early_{:04}.png", f.index)), &blended)?;
            log::info!("frame {}: blended in {:.1} ms", f.index, started.elapsed().as_secs_f64() * 1e3);
        }
        println!("wrote {} blended frames", m.frames.len());
        return Ok(());
    };

    let indices: Vec<usize> = m.frames.iter().map(|f| f.index).collect();
    let rgb_dets = io::align_to_frames(&indices, io::load_detections(&rgb_path, DetectionSource::Rgb)?)?;
    let eb_dets = io::align_to_frames(&indices, io::load_detections(&eb_path, DetectionSource::Event)?)?;
    let mode = if args.mode == FuseMode::Stlf { FusionMode::Stlf } else { FusionMode::Slf };

    let overlay_dir = ctx.out_path("overlays");
    if ctx.overlay {
        fs::create_dir_all(&overlay_dir)?;
    }
    let mut session = FusionSession::new(&ctx.cfg, calib, eb_dims, m.rgb_dims(), mode)?;
    let mut fused = Vec::with_capacity(m.frames.len());
    for (k, f) in m.frames.iter().enumerate() {
        let started = Instant::now();
        let rgb = load_frame(&seq, &f.rgb)?;
        let out = session.push_frame(&rgb, &events, f.t1_us, &rgb_dets[k], &eb_dets[k])?;
        log::info!(
            "frame {}: {} fused objects in {:.1} ms",
            f.index,
            out.fused.len(),
            started.elapsed().as_secs_f64() * 1e3
        );
        if ctx.overlay {
            io::save_rgb_png(&overlay_dir.join(format!("fused_{:04}.png", f.index)), &fusion_overlay(&rgb, &out.fused))?;
        }
        fused.push((f.index, out.fused));
    }
    io::save_fused(&ctx.out_path("fused.json"), &fused)?;
    println!("fused {} objects over {} frames", fused.iter().map(|(_, v)| v.len()).sum::<usize>(), fused.len());
    Ok(())
}

fn detection_path(seq: &Sequence, flag: &Option<PathBuf>, manifest: &Option<PathBuf>, what: &str) -> Result<PathBuf> {
    flag.clone()
        .or_else(|| manifest.as_ref().map(|p| seq.resolve(p)))
        .ok_or_else(|| anyhow!("no {what} detections given and the manifest lists none"))
}

/// Loads a calibration and checks it was made for this sequence's sensors.
pub(super) fn load_matching_calibration(seq: &Sequence, path: &std::path::Path) -> Result<Affine2D> {
    let (t, meta) = io::load_calibration(path)?;
    let m = &seq.manifest;
    ensure!(
        meta.source_resolution == m.eb_resolution && meta.target_resolution == m.rgb_resolution,
        "calibration {} maps {:?} to {:?}, sequence has {:?} and {:?}",
        path.display(),
        meta.source_resolution,
        meta.target_resolution,
        m.eb_resolution,
        m.rgb_resolution
    );
    Ok(t)
}
