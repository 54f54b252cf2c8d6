use anyhow::{anyhow, Result};
use eventfuse::events::{filter_noise_events, NoiseFilterConfig};
use eventfuse::io;
use serde::Serialize;

use super::open_sequence;
use crate::config::{require_files, Context};
use crate::FilterEventsArgs;

#[derive(Serialize)]
struct Summary {
    input_events: usize,
    kept_events: usize,
    removed_events: usize,
    filter: NoiseFilterConfig,
}

pub fn filter_events(ctx: &Context, args: &FilterEventsArgs) -> Result<()> {
    let (path, dims) = match (&args.events, &args.manifest) {
        (Some(p), m) => (p.clone(), m.as_ref().map(|m| open_sequence(m)).transpose()?.map(|s| s.manifest.eb_dims())),
        (None, Some(m)) => {
            let seq = open_sequence(m)?;
            (seq.resolve(&seq.manifest.events), Some(seq.manifest.eb_dims()))
        }
        (None, None) => return Err(anyhow!("give --events or --manifest")),
    };
    require_files([path.clone()])?;

    let events = io::load_events(&path, dims)?;
    let filter = ctx.cfg.event.noise_filter;
    let kept = filter_noise_events(&events, &filter)?;
    io::save_events(&ctx.out_path("events_filtered.csv"), &kept)?;
    let summary = Summary { input_events: events.len(), kept_events: kept.len(), removed_events: events.len() - kept.len(), filter };
    io::write_json(&ctx.out_path("filter_summary.json"), &summary)?;
    println!("kept {} of {} events", summary.kept_events, summary.input_events);
    Ok(())
}
