use std::collections::BTreeMap;

use anyhow::{anyhow, ensure, Result};
use eventfuse::evaluation::{evaluate_detections, EvalReport};
use eventfuse::io::{self, FrameDetections, Illumination};
use eventfuse::model::{Detection, DetectionSource};
use serde::Serialize;

use super::{fmt_opt, open_sequence, write_text};
use crate::config::{require_files, Context};
use crate::EvalArgs;

#[derive(Serialize)]
struct SubsetMetrics {
    subset: String,
    frames: usize,
    report: EvalReport,
}

pub fn eval(ctx: &Context, args: &EvalArgs) -> Result<()> {
    let seq = args.manifest.as_deref().map(open_sequence).transpose()?;
    let labels_path = args
        .labels
        .clone()
        .or_else(|| seq.as_ref().and_then(|s| s.manifest.labels_rgb.as_ref().map(|p| s.resolve(p))))
        .ok_or_else(|| anyhow!("no labels given and no manifest with labels"))?;
    require_files([args.detections.clone(), labels_path.clone()])?;

    let by_frame = |v: Vec<FrameDetections>| -> BTreeMap<usize, Vec<Detection>> { v.into_iter().map(|f| (f.frame_index, f.detections)).collect() };
    let dets = by_frame(io::load_detections(&args.detections, DetectionSource::Rgb)?);
    let labels = by_frame(io::load_labels_openlabel(&labels_path)?);
    let frames: Vec<usize> = labels.keys().filter(|k| dets.contains_key(k)).copied().collect();
    ensure!(!frames.is_empty(), "detections and labels share no frames");
    let unmatched = labels.len() - frames.len();
    if unmatched > 0 {
        log::warn!("{unmatched} labeled frame(s) have no detection entry and are skipped");
    }

    let mut subsets = vec![("all".to_string(), frames.clone())];
    if let Some(seq) = &seq {
        let known: BTreeMap<usize, Illumination> =
            seq.manifest.frames.iter().map(|f| (f.index, seq.manifest.frame_illumination(f))).collect();
        let mut groups: BTreeMap<Illumination, Vec<usize>> = BTreeMap::new();
        for &k in &frames {
            let ill = known.get(&k).ok_or_else(|| anyhow!("frame {k} is not in the manifest"))?;
            groups.entry(*ill).or_default().push(k);
        }
        subsets.extend(groups.into_iter().map(|(ill, v)| (ill.as_str().to_string(), v)));
    }

    let mut results = Vec::with_capacity(subsets.len());
    for (name, idx) in subsets {
        let d: Vec<Vec<Detection>> = idx.iter().map(|k| dets[k].clone()).collect();
        let g: Vec<Vec<Detection>> = idx.iter().map(|k| labels[k].clone()).collect();
        let report = evaluate_detections(&d, &g, &ctx.cfg.eval)?;
        results.push(SubsetMetrics { subset: name, frames: idx.len(), report });
    }

    write_text(&ctx.out_path("pr_curve.csv"), &pr_csv(&results))?;
    write_text(&ctx.out_path("metrics.csv"), &metrics_csv(&results))?;
    let mut summary = results;
    for s in &mut summary {
        for c in &mut s.report.classes {
            c.pr_curve.clear();
        }
    }
    io::write_json(&ctx.out_path("metrics.json"), &summary)?;
    for s in &summary {
        println!("{:>4}: mAP {} over {} frames", s.subset, fmt_opt(s.report.map), s.frames);
    }
    Ok(())
}

fn metrics_csv(results: &[SubsetMetrics]) -> String {
    let mut s = String::from("subset,class_id,class,ap,precision,recall,tp,fp,fn\n");
    for r in results {
        for c in &r.report.classes {
            s.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                r.subset,
                c.class_id.index(),
                c.class_id.name(),
                fmt_opt(c.ap),
                c.precision,
                c.recall,
                c.tp,
                c.fp,
                c.fn_
            ));
        }
        s.push_str(&format!("{},,mAP,{},,,,,\n", r.subset, fmt_opt(r.report.map)));
    }
    s
}

fn pr_csv(results: &[SubsetMetrics]) -> String {
    let mut s = String::from("subset,class_id,class,rank,confidence,precision,recall\n");
    for r in results {
        for c in &r.report.classes {
            for (rank, p) in c.pr_curve.iter().enumerate() {
                s.push_str(&format!(
                    "{},{},{},{},{},{},{}\n",
                    r.subset,
                    c.class_id.index(),
                    c.class_id.name(),
                    rank + 1,
                    p.confidence,
                    p.precision,
                    p.recall
                ));
            }
        }
    }
    s
}
