//! On-disk formats: sequence manifests, event CSV, detection JSON, an
//! OpenLABEL subset for labels, calibration JSON, run-length-encoded
//! segmentation masks, ground-truth correspondences and PNG/PGM images.
//!
//! Every writer goes through [`write_atomic`], so a crashed run never leaves a
//! truncated output behind.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::calibration::Correspondence;
use crate::error::{Error, Result};
use crate::fusion::{FusedObject, Provenance};
use crate::geometry::Affine;
use crate::model::{BBox, BinaryMask, ClassId, Detection, DetectionSource, Event, GrayImage, Polarity, RgbImage};
use crate::rgb::SegMask;

/// Writes `bytes` to a sibling temp file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    let name = path
        .file_name()
        .ok_or_else(|| Error::InvalidInput(format!("{} has no file name", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

fn json_error(path: &Path, e: serde_json::Error) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        message: e.to_string(),
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| json_error(path, e))
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

fn format_error(path: &Path, message: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

// ---------------------------------------------------------------- manifest

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Illumination {
    #[default]
    Day,
    N1,
    N2,
}

impl Illumination {
    pub fn as_str(self) -> &'static str {
        match self {
            Illumination::Day => "day",
            Illumination::N1 => "n1",
            Illumination::N2 => "n2",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameEntry {
    pub index: usize,
    /// RGB image, relative to the manifest directory.
    pub rgb: PathBuf,
    /// Event span `[t0_us, t1_us)`; the frame is exposed at `t1_us`.
    pub t0_us: u64,
    pub t1_us: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub masks: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub illumination: Option<Illumination>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceManifest {
    pub name: String,
    #[serde(default)]
    pub illumination: Illumination,
    pub eb_resolution: [usize; 2],
    pub rgb_resolution: [usize; 2],
    pub events: PathBuf,
    pub frames: Vec<FrameEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detections_rgb: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detections_eb: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels_rgb: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels_eb: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt_correspondences: Option<PathBuf>,
}

impl SequenceManifest {
    pub fn eb_dims(&self) -> (usize, usize) {
        (self.eb_resolution[0], self.eb_resolution[1])
    }

    pub fn rgb_dims(&self) -> (usize, usize) {
        (self.rgb_resolution[0], self.rgb_resolution[1])
    }

    pub fn frame_illumination(&self, f: &FrameEntry) -> Illumination {
        f.illumination.unwrap_or(self.illumination)
    }

    pub fn validate(&self) -> Result<()> {
        if self.eb_resolution.contains(&0) || self.rgb_resolution.contains(&0) {
            return Err(Error::InvalidInput("sensor resolutions must be non-zero".into()));
        }
        if self.eb_resolution.iter().any(|&v| v > u16::MAX as usize + 1) {
            return Err(Error::InvalidInput("event-camera resolution exceeds 16-bit pixel indices".into()));
        }
        for (k, f) in self.frames.iter().enumerate() {
            if f.t0_us >= f.t1_us {
                return Err(Error::InvalidInput(format!("frame {} has an empty event span", f.index)));
            }
            if k > 0 {
                let prev = &self.frames[k - 1];
                if f.index <= prev.index {
                    return Err(Error::InvalidInput(format!("frame indices not strictly increasing at {}", f.index)));
                }
                if f.t0_us < prev.t1_us {
                    return Err(Error::InvalidInput(format!("event span of frame {} overlaps its predecessor", f.index)));
                }
            }
        }
        Ok(())
    }
}

/// A manifest together with the directory its relative paths resolve against.
#[derive(Debug, Clone)]
pub struct Sequence {
    pub manifest: SequenceManifest,
    pub base: PathBuf,
}

impl Sequence {
    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base.join(p)
        }
    }

    /// Every file the manifest references, for up-front existence checks.
    pub fn referenced_paths(&self) -> Vec<PathBuf> {
        let m = &self.manifest;
        let mut out = vec![self.resolve(&m.events)];
        for f in &m.frames {
            out.push(self.resolve(&f.rgb));
            if let Some(p) = &f.masks {
                out.push(self.resolve(p));
            }
        }
        for p in [&m.detections_rgb, &m.detections_eb, &m.labels_rgb, &m.labels_eb, &m.gt_correspondences]
            .into_iter()
            .flatten()
        {
            out.push(self.resolve(p));
        }
        out
    }
}

pub fn load_manifest(path: &Path) -> Result<Sequence> {
    let manifest: SequenceManifest = read_json(path)?;
    manifest.validate().map_err(|e| format_error(path, e.to_string()))?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok(Sequence { manifest, base })
}

pub fn save_manifest(path: &Path, manifest: &SequenceManifest) -> Result<()> {
    manifest.validate()?;
    write_json(path, manifest)
}

// ---------------------------------------------------------------- events

/// Reads `t_us,x,y,p` CSV. Rows must be sorted by time; coordinates are checked
/// against `dims` when given.
pub fn load_events(path: &Path, dims: Option<(usize, usize)>) -> Result<Vec<Event>> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path).map_err(|e| csv_error(path, e))?;
    let header = reader.headers().map_err(|e| csv_error(path, e))?.clone();
    if header.iter().map(str::trim).collect::<Vec<_>>() != ["t_us", "x", "y", "p"] {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            message: format!("expected header t_us,x,y,p, found {}", header.iter().collect::<Vec<_>>().join(",")),
        });
    }
    let mut events = Vec::new();
    let mut record = csv::StringRecord::new();
    loop {
        match reader.read_record(&mut record) {
            Ok(false) => break,
            Ok(true) => {}
            Err(e) => return Err(csv_error(path, e)),
        }
        let line = record.position().map_or(0, |p| p.line() as usize);
        let parse_err = |message: String| Error::Parse { path: path.to_path_buf(), line, message };
        if record.len() != 4 {
            return Err(parse_err(format!("expected 4 fields, found {}", record.len())));
        }
        let num = |i: usize| -> Result<i64> {
            record[i]
                .trim()
                .parse::<i64>()
                .map_err(|e| parse_err(format!("field {} ({:?}): {e}", i + 1, &record[i])))
        };
        let (t, x, y, p) = (num(0)?, num(1)?, num(2)?, num(3)?);
        if t < 0 {
            return Err(parse_err(format!("negative timestamp {t}")));
        }
        let polarity = Polarity::from_i64(p).ok_or_else(|| parse_err(format!("polarity must be 1 or -1, got {p}")))?;
        let (w, h) = dims.unwrap_or((u16::MAX as usize + 1, u16::MAX as usize + 1));
        if x < 0 || y < 0 || x as usize >= w || y as usize >= h {
            return Err(parse_err(format!("coordinate ({x}, {y}) outside {w}x{h} sensor")));
        }
        if let Some(last) = events.last() {
            let last: &Event = last;
            if (t as u64) < last.t_us {
                return Err(parse_err(format!("timestamp {t} earlier than previous {}", last.t_us)));
            }
        }
        events.push(Event::new(x as u16, y as u16, t as u64, polarity));
    }
    Ok(events)
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: e.to_string(),
    }
}

pub fn events_to_csv(events: &[Event]) -> Vec<u8> {
    let mut out = String::with_capacity(16 + events.len() * 20);
    out.push_str("t_us,x,y,p\n");
    for e in events {
        out.push_str(&format!("{},{},{},{}\n", e.t_us, e.x, e.y, e.polarity.as_i8()));
    }
    out.into_bytes()
}

pub fn save_events(path: &Path, events: &[Event]) -> Result<()> {
    write_atomic(path, &events_to_csv(events))
}

// ---------------------------------------------------------------- detections

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct DetectionRecord {
    class_id: u8,
    cx: f64,
    cy: f64,
    w: f64,
    h: f64,
    confidence: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    moving: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    provenance: Option<Provenance>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    track_id: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    trusted: Option<bool>,
}

impl DetectionRecord {
    fn from_detection(d: &Detection) -> Self {
        Self {
            class_id: d.class_id.index() as u8,
            cx: d.bbox.cx,
            cy: d.bbox.cy,
            w: d.bbox.w,
            h: d.bbox.h,
            confidence: d.confidence,
            moving: None,
            provenance: None,
            track_id: None,
            trusted: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct FrameRecord {
    frame_index: usize,
    detections: Vec<DetectionRecord>,
}

/// Detections of one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameDetections {
    pub frame_index: usize,
    pub detections: Vec<Detection>,
}

/// Reads per-frame detections, tagging each with `source`. Frames come back in
/// ascending index order; duplicate indices are an error.
pub fn load_detections(path: &Path, source: DetectionSource) -> Result<Vec<FrameDetections>> {
    let records: Vec<FrameRecord> = read_json(path)?;
    let mut out = Vec::with_capacity(records.len());
    for fr in records {
        let mut dets = Vec::with_capacity(fr.detections.len());
        for (k, r) in fr.detections.iter().enumerate() {
            let ctx = |e: Error| format_error(path, format!("frame {} detection {k}: {e}", fr.frame_index));
            let class = ClassId::new(r.class_id).map_err(ctx)?;
            let src = match r.provenance {
                Some(Provenance::Both) => DetectionSource::Fused,
                Some(Provenance::EbOnly) => DetectionSource::Event,
                Some(Provenance::RgbOnly) => DetectionSource::Rgb,
                None => source,
            };
            let d = Detection::new(class, BBox::new(r.cx, r.cy, r.w, r.h), r.confidence, src).map_err(ctx)?;
            dets.push(d.with_moving(r.moving.unwrap_or(false)));
        }
        out.push(FrameDetections { frame_index: fr.frame_index, detections: dets });
    }
    out.sort_by_key(|f| f.frame_index);
    if let Some(w) = out.windows(2).find(|w| w[0].frame_index == w[1].frame_index) {
        return Err(format_error(path, format!("duplicate frame_index {}", w[0].frame_index)));
    }
    Ok(out)
}

pub fn save_detections(path: &Path, frames: &[FrameDetections]) -> Result<()> {
    let records: Vec<FrameRecord> = frames
        .iter()
        .map(|f| FrameRecord {
            frame_index: f.frame_index,
            detections: f.detections.iter().map(DetectionRecord::from_detection).collect(),
        })
        .collect();
    write_json(path, &records)
}

/// Writes fusion output in the detection format, with provenance and track fields added.
pub fn save_fused(path: &Path, frames: &[(usize, Vec<FusedObject>)]) -> Result<()> {
    let records: Vec<FrameRecord> = frames
        .iter()
        .map(|(idx, objs)| FrameRecord {
            frame_index: *idx,
            detections: objs
                .iter()
                .map(|o| DetectionRecord {
                    moving: Some(o.detection.moving),
                    provenance: Some(o.provenance),
                    track_id: o.track_id,
                    trusted: Some(o.trusted),
                    ..DetectionRecord::from_detection(&o.detection)
                })
                .collect(),
        })
        .collect();
    write_json(path, &records)
}

/// Aligns per-frame detections to the given frame indices; frames without an
/// entry get an empty list. Entries for unknown frames are an error.
pub fn align_to_frames(frames: &[usize], dets: Vec<FrameDetections>) -> Result<Vec<Vec<Detection>>> {
    let mut by_index: BTreeMap<usize, Vec<Detection>> = dets.into_iter().map(|f| (f.frame_index, f.detections)).collect();
    let known: std::collections::BTreeSet<usize> = frames.iter().copied().collect();
    if let Some(bad) = by_index.keys().find(|k| !known.contains(k)) {
        return Err(Error::InvalidInput(format!("detections reference frame {bad}, which the manifest does not list")));
    }
    Ok(frames.iter().map(|i| by_index.remove(i).unwrap_or_default()).collect())
}

// ---------------------------------------------------------------- OpenLABEL

/// Writes labels as `openlabel.frames.{i}.objects.{uid}` with `type`, and
/// `object_data` holding `bbox = [cx, cy, w, h]` plus `moving` and `confidence`
/// attributes. Object uids are unique across the file.
pub fn save_labels_openlabel(path: &Path, frames: &[FrameDetections]) -> Result<()> {
    let mut frames_json = serde_json::Map::new();
    let mut uid = 0usize;
    for f in frames {
        let mut objects = serde_json::Map::new();
        for d in &f.detections {
            objects.insert(
                uid.to_string(),
                serde_json::json!({
                    "type": d.class_id.name(),
                    "object_data": {
                        "bbox": [d.bbox.cx, d.bbox.cy, d.bbox.w, d.bbox.h],
                        "attributes": { "moving": d.moving, "confidence": d.confidence },
                    },
                }),
            );
            uid += 1;
        }
        frames_json.insert(f.frame_index.to_string(), serde_json::json!({ "objects": objects }));
    }
    let doc = serde_json::json!({
        "openlabel": {
            "metadata": { "schema_version": "1.0.0" },
            "frames": frames_json,
        }
    });
    write_json(path, &doc)
}

fn warn_unknown(path: &Path, obj: &serde_json::Map<String, Value>, known: &[&str], ctx: &str) {
    for k in obj.keys().filter(|k| !known.contains(&k.as_str())) {
        log::warn!("{}: ignoring unknown key {ctx}.{k}", path.display());
    }
}

/// Reads the OpenLABEL subset written by [`save_labels_openlabel`]. Unknown keys
/// are ignored with a warning; a missing bbox or unknown type is an error.
pub fn load_labels_openlabel(path: &Path) -> Result<Vec<FrameDetections>> {
    let doc: Value = read_json(path)?;
    let err = |m: String| format_error(path, m);
    let root = doc
        .get("openlabel")
        .and_then(Value::as_object)
        .ok_or_else(|| err("missing top-level openlabel object".into()))?;
    warn_unknown(path, root, &["metadata", "frames", "objects"], "openlabel");
    let Some(frames) = root.get("frames") else {
        return Ok(Vec::new());
    };
    let frames = frames.as_object().ok_or_else(|| err("openlabel.frames must be an object".into()))?;
    let mut out = Vec::with_capacity(frames.len());
    for (fkey, fval) in frames {
        let frame_index: usize = fkey.parse().map_err(|_| err(format!("frame key {fkey:?} is not an integer")))?;
        let fobj = fval.as_object().ok_or_else(|| err(format!("frame {fkey} must be an object")))?;
        warn_unknown(path, fobj, &["objects", "frame_properties"], &format!("frames.{fkey}"));
        let mut dets = Vec::new();
        let empty = serde_json::Map::new();
        let objects = match fobj.get("objects") {
            Some(v) => v.as_object().ok_or_else(|| err(format!("frames.{fkey}.objects must be an object")))?,
            None => &empty,
        };
        let mut entries: Vec<(&String, &Value)> = objects.iter().collect();
        entries.sort_by_key(|(k, _)| k.parse::<u64>().unwrap_or(u64::MAX));
        for (uid, o) in entries {
            let ctx = format!("frames.{fkey}.objects.{uid}");
            let o = o.as_object().ok_or_else(|| err(format!("{ctx} must be an object")))?;
            warn_unknown(path, o, &["type", "name", "object_data"], &ctx);
            let type_name = o
                .get("type")
                .and_then(Value::as_str)
                .ok_or_else(|| err(format!("{ctx} has no type")))?;
            let class = ClassId::from_name(type_name).map_err(|_| err(format!("{ctx}: unknown type {type_name:?}")))?;
            let data = o
                .get("object_data")
                .and_then(Value::as_object)
                .ok_or_else(|| err(format!("{ctx} has no object_data")))?;
            warn_unknown(path, data, &["bbox", "attributes"], &format!("{ctx}.object_data"));
            let bbox: Vec<f64> = data
                .get("bbox")
                .and_then(Value::as_array)
                .and_then(|a| a.iter().map(Value::as_f64).collect::<Option<Vec<_>>>())
                .filter(|v| v.len() == 4)
                .ok_or_else(|| err(format!("{ctx} has no numeric bbox [cx, cy, w, h]")))?;
            let attrs = data.get("attributes").and_then(Value::as_object);
            let moving = attrs.and_then(|a| a.get("moving")).and_then(Value::as_bool).unwrap_or(false);
            let confidence = attrs.and_then(|a| a.get("confidence")).and_then(Value::as_f64).unwrap_or(1.0);
            let d = Detection::new(class, BBox::new(bbox[0], bbox[1], bbox[2], bbox[3]), confidence, DetectionSource::Rgb)
                .map_err(|e| err(format!("{ctx}: {e}")))?;
            dets.push(d.with_moving(moving));
        }
        out.push(FrameDetections { frame_index, detections: dets });
    }
    out.sort_by_key(|f| f.frame_index);
    Ok(out)
}

// ---------------------------------------------------------------- calibration

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationMeta {
    pub source_resolution: [usize; 2],
    pub target_resolution: [usize; 2],
    pub created_by: String,
}

#[derive(Serialize, Deserialize)]
struct CalibrationFile {
    matrix: [f64; 9],
    source_resolution: [usize; 2],
    target_resolution: [usize; 2],
    created_by: String,
}

pub fn save_calibration(path: &Path, t: &Affine<f64>, meta: &CalibrationMeta) -> Result<()> {
    let m = t.matrix();
    let file = CalibrationFile {
        matrix: [m[0][0], m[0][1], m[0][2], m[1][0], m[1][1], m[1][2], m[2][0], m[2][1], m[2][2]],
        source_resolution: meta.source_resolution,
        target_resolution: meta.target_resolution,
        created_by: meta.created_by.clone(),
    };
    write_json(path, &file)
}

/// Loads and validates a calibration: exact `(0, 0, 1)` last row and invertible.
pub fn load_calibration(path: &Path) -> Result<(Affine<f64>, CalibrationMeta)> {
    let f: CalibrationFile = read_json(path)?;
    let m = f.matrix;
    let t = Affine::new([[m[0], m[1], m[2]], [m[3], m[4], m[5]], [m[6], m[7], m[8]]])
        .map_err(|e| format_error(path, e.to_string()))?;
    Ok((
        t,
        CalibrationMeta {
            source_resolution: f.source_resolution,
            target_resolution: f.target_resolution,
            created_by: f.created_by,
        },
    ))
}

// ---------------------------------------------------------------- masks

#[derive(Serialize, Deserialize)]
struct MaskRecord {
    class_id: u8,
    /// Alternating background/foreground run lengths in row-major order, starting with background.
    counts: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct MaskFile {
    width: usize,
    height: usize,
    masks: Vec<MaskRecord>,
}

fn rle_encode(mask: &BinaryMask) -> Vec<usize> {
    let mut counts = Vec::new();
    let mut current = BinaryMask::OFF;
    let mut run = 0usize;
    for &v in mask.data() {
        if v != current {
            counts.push(run);
            run = 0;
            current = v;
        }
        run += 1;
    }
    counts.push(run);
    counts
}

fn rle_decode(counts: &[usize], w: usize, h: usize) -> Option<BinaryMask> {
    let mut data = Vec::with_capacity(w * h);
    for (k, &c) in counts.iter().enumerate() {
        let v = if k % 2 == 0 { BinaryMask::OFF } else { BinaryMask::ON };
        if data.len() + c > w * h {
            return None;
        }
        data.extend(std::iter::repeat_n(v, c));
    }
    (data.len() == w * h).then(|| BinaryMask::from_vec(w, h, data).expect("only 0 and 255 written"))
}

pub fn save_masks(path: &Path, dims: (usize, usize), masks: &[SegMask]) -> Result<()> {
    let records = masks
        .iter()
        .map(|m| {
            if m.mask.dims() != dims {
                return Err(Error::DimensionMismatch { expected: dims, found: m.mask.dims() });
            }
            Ok(MaskRecord { class_id: m.class_id.index() as u8, counts: rle_encode(&m.mask) })
        })
        .collect::<Result<Vec<_>>>()?;
    let bytes = serde_json::to_vec(&MaskFile { width: dims.0, height: dims.1, masks: records })?;
    write_atomic(path, &bytes)
}

pub fn load_masks(path: &Path, dims: (usize, usize)) -> Result<Vec<SegMask>> {
    let f: MaskFile = read_json(path)?;
    if (f.width, f.height) != dims {
        return Err(format_error(path, format!("mask size {}x{} differs from frame size {}x{}", f.width, f.height, dims.0, dims.1)));
    }
    f.masks
        .iter()
        .enumerate()
        .map(|(k, r)| {
            let class_id = ClassId::new(r.class_id).map_err(|e| format_error(path, format!("mask {k}: {e}")))?;
            let mask = rle_decode(&r.counts, f.width, f.height)
                .ok_or_else(|| format_error(path, format!("mask {k}: run lengths do not cover the image")))?;
            Ok(SegMask { mask, class_id })
        })
        .collect()
}

// ---------------------------------------------------------------- ground truth

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameCorrespondences {
    pub frame_index: usize,
    pub pairs: Vec<Correspondence<f64>>,
}

pub fn save_correspondences(path: &Path, frames: &[FrameCorrespondences]) -> Result<()> {
    let bytes = serde_json::to_vec(frames)?;
    write_atomic(path, &bytes)
}

pub fn load_correspondences(path: &Path) -> Result<Vec<FrameCorrespondences>> {
    read_json(path)
}

// ---------------------------------------------------------------- images

fn image_error(path: &Path, e: image::ImageError) -> Error {
    format_error(path, e.to_string())
}

/// Loads PNG or binary PGM/PPM as RGB; grayscale inputs are replicated to three channels.
pub fn load_rgb(path: &Path) -> Result<RgbImage> {
    let img = image::open(path).map_err(|e| image_error(path, e))?.into_rgb8();
    let (w, h) = img.dimensions();
    RgbImage::from_vec(w as usize, h as usize, img.into_raw())
}

pub fn load_gray(path: &Path) -> Result<GrayImage> {
    let img = image::open(path).map_err(|e| image_error(path, e))?.into_luma8();
    let (w, h) = img.dimensions();
    GrayImage::from_vec(w as usize, h as usize, img.into_raw())
}

fn encode_png(data: &[u8], w: usize, h: usize, color: image::ExtendedColorType) -> Result<Vec<u8>> {
    let mut bytes = Vec::new();
    let encoder = image::codecs::png::PngEncoder::new(&mut bytes);
    image::ImageEncoder::write_image(encoder, data, w as u32, h as u32, color).map_err(|e| Error::InvalidInput(e.to_string()))?;
    Ok(bytes)
}

pub fn save_rgb_png(path: &Path, img: &RgbImage) -> Result<()> {
    let bytes = encode_png(img.data(), img.width(), img.height(), image::ExtendedColorType::Rgb8)?;
    write_atomic(path, &bytes)
}

pub fn save_gray_png(path: &Path, img: &GrayImage) -> Result<()> {
    let bytes = encode_png(img.data(), img.width(), img.height(), image::ExtendedColorType::L8)?;
    write_atomic(path, &bytes)
}
