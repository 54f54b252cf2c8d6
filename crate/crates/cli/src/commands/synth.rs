use anyhow::{Context as _, Result};
use eventfuse::io;
use eventfuse::synth::{generate_scene, write_scene, EventModelConfig, SceneConfig};
use serde::{Deserialize, Serialize};

use crate::config::{layer_file, require_files, Context};
use crate::{Preset, SynthArgs};

/// Scene file layout: scene keys at the top level plus an optional `event_model` table.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
struct SceneFile {
    #[serde(flatten)]
    scene: SceneConfig,
    #[serde(default)]
    event_model: EventModelConfig,
}

pub fn synth(ctx: &Context, args: &SynthArgs) -> Result<()> {
    if let Some(p) = &args.scene {
        require_files([p.clone()])?;
    }
    let seed = ctx.seed.unwrap_or(0);
    let preset = match args.preset {
        Preset::Default => SceneConfig { seed, ..SceneConfig::default() },
        Preset::Single => SceneConfig::random_single(seed),
        Preset::Multi => SceneConfig::random_multi(seed, args.objects),
    };
    let mut file = SceneFile { scene: preset, event_model: EventModelConfig::default() };
    if let Some(p) = &args.scene {
        file = layer_file(&file, p)?;
    }
    if let Some(s) = ctx.seed {
        file.scene.seed = s;
    }
    file.scene.validate().context("invalid scene configuration")?;
    file.event_model.validate().context("invalid event model")?;

    let scene = generate_scene(&file.scene, &file.event_model)?;
    let manifest = write_scene(&ctx.out, &scene)?;
    io::write_json(&ctx.out_path("scene_config.json"), &file)?;
    println!("{}", manifest.display());
    Ok(())
}
