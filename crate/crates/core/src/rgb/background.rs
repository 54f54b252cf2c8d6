//! Sample-history (KNN) background subtraction.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::model::{ensure_same_dims, BinaryMask, GrayImage};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackgroundConfig {
    /// Samples kept per pixel.
    pub history: usize,
    /// Maximum intensity distance for a sample to count as a match.
    pub match_threshold: u8,
    /// Matches needed to call a pixel background.
    pub min_matches: usize,
}

impl Default for BackgroundConfig {
    fn default() -> Self {
        Self {
            history: 10,
            match_threshold: 20,
            min_matches: 2,
        }
    }
}

/// Per-pixel ring buffer of the most recent intensity samples.
#[derive(Debug, Clone)]
pub struct BackgroundModel {
    cfg: BackgroundConfig,
    width: usize,
    height: usize,
    samples: Vec<u8>,
    filled: usize,
    next: usize,
}

impl BackgroundModel {
    pub fn new(width: usize, height: usize, cfg: BackgroundConfig) -> Self {
        let k = cfg.history.max(1);
        Self {
            cfg: BackgroundConfig { history: k, ..cfg },
            width,
            height,
            samples: vec![0; width * height * k],
            filled: 0,
            next: 0,
        }
    }

    pub fn config(&self) -> &BackgroundConfig {
        &self.cfg
    }

    /// Number of samples currently stored per pixel (at most `history`).
    pub fn history_len(&self) -> usize {
        self.filled
    }

    /// True once every pixel holds a full history.
    pub fn is_warm(&self) -> bool {
        self.filled >= self.cfg.history
    }
}

/// Classifies each pixel against its sample history, then pushes the frame into the history.
pub fn knn_background_mask(model: &mut BackgroundModel, frame: &GrayImage) -> Result<BinaryMask> {
    ensure_same_dims((model.width, model.height), frame.dims())?;
    let k = model.cfg.history;
    let thr = model.cfg.match_threshold as i16;
    let need = model.cfg.min_matches;
    let filled = model.filled;
    let mut out = vec![BinaryMask::OFF; frame.data().len()];
    for (i, (&v, o)) in frame.data().iter().zip(out.iter_mut()).enumerate() {
        let hist = &mut model.samples[i * k..(i + 1) * k];
        let matches = hist[..filled]
            .iter()
            .filter(|&&s| (s as i16 - v as i16).abs() <= thr)
            .count();
        if matches < need {
            *o = BinaryMask::ON;
        }
        hist[model.next] = v;
    }
    model.next = (model.next + 1) % k;
    model.filled = (filled + 1).min(k);
    Ok(BinaryMask::from_raw_unchecked(model.width, model.height, out))
}
