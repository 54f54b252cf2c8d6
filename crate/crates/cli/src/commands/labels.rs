use std::time::Instant;

use anyhow::{anyhow, Result};
use eventfuse::io::{self, FrameDetections};
use eventfuse::model::DetectionSource;
use eventfuse::pipeline::pseudo_labels_for_frame;
use eventfuse::rgb::to_grayscale;

use super::fuse::load_matching_calibration;
use super::{load_frame, open_sequence};
use crate::config::{require_files, Context};
use crate::PseudoLabelArgs;

pub fn pseudo_label(ctx: &Context, args: &PseudoLabelArgs) -> Result<()> {
    let seq = open_sequence(&args.manifest)?;
    let m = &seq.manifest;
    let dets_path = args
        .detections_rgb
        .clone()
        .or_else(|| m.detections_rgb.as_ref().map(|p| seq.resolve(p)))
        .ok_or_else(|| anyhow!("no RGB detections given and the manifest lists none"))?;
    let mut needed = vec![args.calibration.clone(), dets_path.clone()];
    needed.extend(m.frames.iter().map(|f| seq.resolve(&f.rgb)));
    require_files(needed)?;

    let calib = load_matching_calibration(&seq, &args.calibration)?;
    let indices: Vec<usize> = m.frames.iter().map(|f| f.index).collect();
    let dets = io::align_to_frames(&indices, io::load_detections(&dets_path, DetectionSource::Rgb)?)?;
    let grays = m.frames.iter().map(|f| load_frame(&seq, &f.rgb).map(|img| to_grayscale(&img))).collect::<Result<Vec<_>>>()?;

    let mut l_rgb = Vec::with_capacity(indices.len());
    let mut l_eb = Vec::with_capacity(indices.len());
    for (k, &frame_index) in indices.iter().enumerate() {
        let started = Instant::now();
        let labels = pseudo_labels_for_frame(&ctx.cfg, &grays, k, &dets[k], &calib, m.eb_dims())?;
        log::info!(
            "frame {frame_index}: {} RGB / {} event-camera labels in {:.1} ms",
            labels.rgb.len(),
            labels.eb.len(),
            started.elapsed().as_secs_f64() * 1e3
        );
        l_rgb.push(FrameDetections { frame_index, detections: labels.rgb });
        l_eb.push(FrameDetections { frame_index, detections: labels.eb });
    }
    io::save_labels_openlabel(&ctx.out_path("labels_rgb.json"), &l_rgb)?;
    io::save_labels_openlabel(&ctx.out_path("labels_eb.json"), &l_eb)?;
    let count = |v: &[FrameDetections]| v.iter().map(|f| f.detections.len()).sum::<usize>();
    println!("wrote {} RGB and {} event-camera labels", count(&l_rgb), count(&l_eb));
    Ok(())
}
