mod calibrate;
mod eval;
mod filter;
mod fuse;
mod labels;
mod synth;

use std::path::Path;

use anyhow::{ensure, Context as _, Result};
use eventfuse::io::{self, Sequence};
use eventfuse::model::RgbImage;

use crate::config::require_files;

pub use calibrate::{calibrate, AllFramesFailed};
pub use eval::eval;
pub use filter::filter_events;
pub use fuse::fuse;
pub use labels::pseudo_label;
pub use synth::synth;

fn open_sequence(manifest: &Path) -> Result<Sequence> {
    require_files([manifest.to_path_buf()])?;
    io::load_manifest(manifest).with_context(|| format!("loading manifest {}", manifest.display()))
}

fn load_frame(seq: &Sequence, rgb: &Path) -> Result<RgbImage> {
    let img = io::load_rgb(&seq.resolve(rgb))?;
    let want = seq.manifest.rgb_dims();
    ensure!(img.dims() == want, "{} is {:?}, manifest declares {:?}", rgb.display(), img.dims(), want);
    Ok(img)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| x.to_string())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    io::write_atomic(path, text.as_bytes()).with_context(|| format!("writing {}", path.display()))
}
