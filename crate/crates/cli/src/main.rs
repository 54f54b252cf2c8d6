//! `eventfuse`: batch front end for event/RGB calibration, fusion, evaluation
//! and pseudo-labeling.

mod commands;
mod config;
mod overlay;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::config::Context;

#[derive(Parser, Debug)]
#[command(name = "eventfuse", version, about = "Targetless event/RGB calibration and detection fusion")]
struct Cli {
    #[command(flatten)]
    common: CommonArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct CommonArgs {
    /// Pipeline configuration file (TOML, or JSON by extension). Keys not given keep their defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory, created when missing.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Write overlay images (default).
    #[arg(long, global = true, overrides_with = "no_overlay")]
    pub overlay: bool,
    /// Skip overlay images.
    #[arg(long, global = true, overrides_with = "overlay")]
    pub no_overlay: bool,
    /// Seed for RANSAC sampling, or for scene generation under `synth`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Log verbosity; repeat for more detail.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    #[serde(skip)]
    pub verbose: u8,
}

#[derive(Subcommand, Debug, Clone, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Estimate the event-camera to RGB affine from scene motion.
    Calibrate(CalibrateArgs),
    /// Fuse event-camera and RGB detections (or blend raw frames).
    Fuse(FuseArgs),
    /// Score detections against labels.
    Eval(EvalArgs),
    /// Produce RGB and event-camera pseudo-labels from RGB detections.
    PseudoLabel(PseudoLabelArgs),
    /// Write a synthetic sequence with exact ground truth.
    Synth(SynthArgs),
    /// Run the spatiotemporal event noise filter on its own.
    FilterEvents(FilterEventsArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Calibrate(_) => "calibrate",
            Command::Fuse(_) => "fuse",
            Command::Eval(_) => "eval",
            Command::PseudoLabel(_) => "pseudo-label",
            Command::Synth(_) => "synth",
            Command::FilterEvents(_) => "filter-events",
        }
    }
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct CalibrateArgs {
    #[arg(long)]
    pub manifest: PathBuf,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum FuseMode {
    Early,
    Slf,
    Stlf,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct FuseArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub calibration: PathBuf,
    #[arg(long, value_enum)]
    pub mode: FuseMode,
    /// RGB detections; defaults to the manifest entry.
    #[arg(long)]
    pub detections_rgb: Option<PathBuf>,
    /// Event-camera detections in event-camera pixels; defaults to the manifest entry.
    #[arg(long)]
    pub detections_eb: Option<PathBuf>,
    /// Blend weight of the event frame in early fusion.
    #[arg(long)]
    pub alpha: Option<f64>,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct EvalArgs {
    #[arg(long)]
    pub detections: PathBuf,
    /// OpenLABEL ground truth; defaults to the manifest's RGB labels.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Sequence manifest, for default labels and per-illumination subsets.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub iou: Option<f64>,
    #[arg(long)]
    pub confidence: Option<f64>,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct PseudoLabelArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub calibration: PathBuf,
    /// RGB detections; defaults to the manifest entry.
    #[arg(long)]
    pub detections_rgb: Option<PathBuf>,
    /// Minimum detection confidence for a label.
    #[arg(long)]
    pub confidence: Option<f64>,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    /// Four objects, one of them static.
    Default,
    /// One randomized moving rectangle.
    Single,
    /// Several randomized moving objects.
    Multi,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct SynthArgs {
    #[arg(long, value_enum, default_value = "default")]
    pub preset: Preset,
    /// Scene configuration (TOML or JSON) layered over the preset.
    #[arg(long)]
    pub scene: Option<PathBuf>,
    /// Object count for the `multi` preset.
    #[arg(long, default_value_t = 4)]
    pub objects: usize,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct FilterEventsArgs {
    /// Event CSV; defaults to the manifest's event stream.
    #[arg(long)]
    pub events: Option<PathBuf>,
    /// Sequence manifest, for the event stream and sensor bounds.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub rx: Option<u16>,
    #[arg(long)]
    pub ry: Option<u16>,
    /// Temporal radius in microseconds.
    #[arg(long)]
    pub rt: Option<u64>,
    #[arg(long)]
    pub min_events: Option<usize>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.common.verbose {
        0 => "warn",
        1 => "info",
        2 => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let name = cli.command.name();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let report = report::ErrorReport::new(name, &err);
            report.emit(&cli.common.out);
            ExitCode::FAILURE
        }
    }
}

fn run(cli: &Cli) -> anyhow::Result<()> {
    let ctx = Context::prepare(&cli.common, &cli.command)?;
    match &cli.command {
        Command::Calibrate(a) => commands::calibrate(&ctx, a),
        Command::Fuse(a) => commands::fuse(&ctx, a),
        Command::Eval(a) => commands::eval(&ctx, a),
        Command::PseudoLabel(a) => commands::pseudo_label(&ctx, a),
        Command::Synth(a) => commands::synth(&ctx, a),
        Command::FilterEvents(a) => commands::filter_events(&ctx, a),
    }
}
