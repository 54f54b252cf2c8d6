use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context as _, Result};
use eventfuse::io::write_json;
use eventfuse::pipeline::PipelineConfig;
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

use crate::{Command, CommonArgs};

/// Input files that do not exist, reported before any processing starts.
#[derive(Debug)]
pub struct MissingInputs(pub Vec<PathBuf>);

impl fmt::Display for MissingInputs {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let list: Vec<String> = self.0.iter().map(|p| p.display().to_string()).collect();
        write!(f, "missing input file(s): {}", list.join(", "))
    }
}

impl std::error::Error for MissingInputs {}

pub fn require_files<I: IntoIterator<Item = PathBuf>>(paths: I) -> Result<()> {
    let missing: Vec<PathBuf> = paths.into_iter().filter(|p| !p.is_file()).collect();
    if missing.is_empty() {
        Ok(())
    } else {
        Err(MissingInputs(missing).into())
    }
}

/// Resolved settings shared by every subcommand.
pub struct Context {
    pub cfg: PipelineConfig,
    pub out: PathBuf,
    pub overlay: bool,
    pub seed: Option<u64>,
}

#[derive(Serialize)]
struct RunRecord<'a> {
    tool: &'static str,
    version: &'static str,
    subcommand: &'a Command,
    common: &'a CommonArgs,
    overlay: bool,
    config: &'a PipelineConfig,
}

impl Context {
    /// Resolves the configuration (defaults, then the config file, then flags),
    /// prepares the output directory and records the run in `run.json`.
    pub fn prepare(common: &CommonArgs, command: &Command) -> Result<Self> {
        let mut cfg = PipelineConfig::default();
        if let Some(path) = &common.config {
            require_files([path.clone()])?;
            cfg = layer_file(&cfg, path)?;
        }
        apply_flags(&mut cfg, common, command);
        cfg.validate().context("invalid pipeline configuration")?;

        let out = common.out.clone();
        fs::create_dir_all(&out).with_context(|| format!("creating output directory {}", out.display()))?;
        let stale = out.join("error.json");
        if stale.exists() {
            fs::remove_file(&stale).with_context(|| format!("removing stale {}", stale.display()))?;
        }

        let overlay = !common.no_overlay;
        let record = RunRecord {
            tool: "eventfuse",
            version: env!("CARGO_PKG_VERSION"),
            subcommand: command,
            common,
            overlay,
            config: &cfg,
        };
        write_json(&out.join("run.json"), &record)?;
        Ok(Self { cfg, out, overlay, seed: common.seed })
    }

    pub fn out_path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }
}

fn apply_flags(cfg: &mut PipelineConfig, common: &CommonArgs, command: &Command) {
    if let (Some(seed), false) = (common.seed, matches!(command, Command::Synth(_))) {
        cfg.calibration.ransac.seed = seed;
    }
    match command {
        Command::Fuse(a) => {
            if let Some(v) = a.alpha {
                cfg.fusion.blend_alpha = v;
            }
        }
        Command::Eval(a) => {
            if let Some(v) = a.iou {
                cfg.eval.iou_threshold = v;
            }
            if let Some(v) = a.confidence {
                cfg.eval.confidence_threshold = v;
            }
        }
        Command::PseudoLabel(a) => {
            if let Some(v) = a.confidence {
                cfg.eval.pseudo_label_confidence = v;
            }
        }
        Command::FilterEvents(a) => {
            let nf = &mut cfg.event.noise_filter;
            nf.r_x = a.rx.unwrap_or(nf.r_x);
            nf.r_y = a.ry.unwrap_or(nf.r_y);
            nf.r_t_us = a.rt.unwrap_or(nf.r_t_us);
            nf.min_events = a.min_events.unwrap_or(nf.min_events);
        }
        Command::Calibrate(_) | Command::Synth(_) => {}
    }
}

/// Layers a TOML or JSON file over `base`. Tables merge key by key; any other
/// value replaces the base value. Keys the target type does not know are an error.
pub fn layer_file<T: Serialize + DeserializeOwned>(base: &T, path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
    let overlay: Value = if is_json {
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
    } else {
        toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
    };
    let mut merged = serde_json::to_value(base)?;
    merge(&mut merged, overlay.clone());
    let resolved: T = serde_json::from_value(merged).with_context(|| format!("applying {}", path.display()))?;

    let mut unknown = Vec::new();
    unknown_keys(&overlay, &serde_json::to_value(&resolved)?, "", &mut unknown);
    if !unknown.is_empty() {
        bail!("unknown key(s) in {}: {}", path.display(), unknown.join(", "));
    }
    Ok(resolved)
}

fn merge(base: &mut Value, overlay: Value) {
    match (base, overlay) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

fn unknown_keys(given: &Value, known: &Value, prefix: &str, out: &mut Vec<String>) {
    let (Value::Object(g), Value::Object(k)) = (given, known) else { return };
    for (key, v) in g {
        let path = if prefix.is_empty() { key.clone() } else { format!("{prefix}.{key}") };
        match k.get(key) {
            Some(kv) => unknown_keys(v, kv, &path, out),
            None => out.push(path),
        }
    }
}
