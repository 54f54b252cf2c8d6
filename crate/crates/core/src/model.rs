//! Shared domain types: events, images, masks, edge clouds and detections.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Point2, Rect};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Polarity {
    Positive,
    Negative,
}

impl Polarity {
    pub fn as_i8(self) -> i8 {
        match self {
            Polarity::Positive => 1,
            Polarity::Negative => -1,
        }
    }

    pub fn from_i64(v: i64) -> Option<Self> {
        match v {
            1 => Some(Polarity::Positive),
            -1 => Some(Polarity::Negative),
            _ => None,
        }
    }
}

/// A single brightness-change sample from the event camera.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Event {
    pub x: u16,
    pub y: u16,
    pub t_us: u64,
    pub polarity: Polarity,
}

impl Event {
    pub fn new(x: u16, y: u16, t_us: u64, polarity: Polarity) -> Self {
        Self { x, y, t_us, polarity }
    }
}

/// Index of the first event whose timestamp is smaller than its predecessor's.
pub fn first_unsorted(events: &[Event]) -> Option<usize> {
    events
        .windows(2)
        .position(|w| w[1].t_us < w[0].t_us)
        .map(|i| i + 1)
}

/// Row-major 8-bit grayscale image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl GrayImage {
    pub fn filled(width: usize, height: usize, value: u8) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::InvalidInput(format!(
                "image buffer holds {} bytes, {width}x{height} needs {}",
                data.len(),
                width * height
            )));
        }
        Ok(Self { width, height, data })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<u8> {
        self.data
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: u8) {
        self.data[y * self.width + x] = v;
    }
}

/// Row-major interleaved 8-bit RGB image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl RgbImage {
    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Self {
        let mut data = Vec::with_capacity(width * height * 3);
        for _ in 0..width * height {
            data.extend_from_slice(&rgb);
        }
        Self { width, height, data }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != width * height * 3 {
            return Err(Error::InvalidInput(format!(
                "RGB buffer holds {} bytes, {width}x{height} needs {}",
                data.len(),
                width * height * 3
            )));
        }
        Ok(Self { width, height, data })
    }

    /// Replicates a grayscale image into three channels.
    pub fn from_gray(gray: &GrayImage) -> Self {
        let data = gray.data().iter().flat_map(|&v| [v, v, v]).collect();
        Self {
            width: gray.width(),
            height: gray.height(),
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<u8> {
        self.data
    }

    pub fn get(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }
}

/// Binary image whose pixels are exactly 0 (background) or 255 (foreground).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl BinaryMask {
    pub const ON: u8 = 255;
    pub const OFF: u8 = 0;

    pub fn empty(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![Self::OFF; width * height],
        }
    }

    pub fn full(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![Self::ON; width * height],
        }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::InvalidInput(format!(
                "mask buffer holds {} bytes, {width}x{height} needs {}",
                data.len(),
                width * height
            )));
        }
        if let Some(v) = data.iter().find(|&&v| v != Self::ON && v != Self::OFF) {
            return Err(Error::InvalidInput(format!("mask value {v} is not 0 or 255")));
        }
        Ok(Self { width, height, data })
    }

    /// Builds a mask from a per-pixel predicate.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(if f(x, y) { Self::ON } else { Self::OFF });
            }
        }
        Self { width, height, data }
    }

    pub(crate) fn from_raw_unchecked(width: usize, height: usize, data: Vec<u8>) -> Self {
        debug_assert!(data.iter().all(|&v| v == Self::ON || v == Self::OFF));
        Self { width, height, data }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn is_set(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x] == Self::ON
    }

    pub fn set(&mut self, x: usize, y: usize, on: bool) {
        self.data[y * self.width + x] = if on { Self::ON } else { Self::OFF };
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v == Self::ON).count()
    }

    /// Foreground pixel coordinates in row-major order.
    pub fn foreground(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let w = self.width;
        self.data
            .iter()
            .enumerate()
            .filter(|(_, &v)| v == Self::ON)
            .map(move |(i, _)| (i % w, i / w))
    }

    /// Counts foreground pixels inside the pixel-index box `[x0, x1) x [y0, y1)`, clipped.
    pub fn count_in(&self, x0: i64, y0: i64, x1: i64, y1: i64) -> usize {
        let cx0 = x0.clamp(0, self.width as i64) as usize;
        let cx1 = x1.clamp(0, self.width as i64) as usize;
        let cy0 = y0.clamp(0, self.height as i64) as usize;
        let cy1 = y1.clamp(0, self.height as i64) as usize;
        let mut n = 0;
        for y in cy0..cy1 {
            let row = &self.data[y * self.width..(y + 1) * self.width];
            n += row[cx0..cx1].iter().filter(|&&v| v == Self::ON).count();
        }
        n
    }

    pub fn to_gray(&self) -> GrayImage {
        GrayImage::from_vec(self.width, self.height, self.data.clone()).expect("same dims")
    }
}

pub(crate) fn ensure_same_dims(a: (usize, usize), b: (usize, usize)) -> Result<()> {
    if a != b {
        return Err(Error::DimensionMismatch {
            expected: a,
            found: b,
        });
    }
    Ok(())
}

/// Sensor a measurement came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    Event,
    Rgb,
}

/// Moving-object edge points in one modality's pixel frame.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeCloud<T> {
    pub points: Vec<Point2<T>>,
    pub source: Modality,
    /// Resolution of the image the points were extracted from.
    pub width: usize,
    pub height: usize,
}

impl<T: Real> EdgeCloud<T> {
    pub fn new(points: Vec<Point2<T>>, source: Modality, width: usize, height: usize) -> Self {
        Self {
            points,
            source,
            width,
            height,
        }
    }

    /// Collects the foreground of a mask, in row-major order.
    pub fn from_mask(mask: &BinaryMask, source: Modality) -> Self {
        let points = mask
            .foreground()
            .map(|(x, y)| Point2::new(T::lit(x as f64), T::lit(y as f64)))
            .collect();
        Self::new(points, source, mask.width(), mask.height())
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Object class taxonomy shared by detections, labels and metrics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct ClassId(u8);

impl ClassId {
    pub const NAMES: [&'static str; 7] = [
        "pedestrian",
        "bicycle",
        "car",
        "motorcycle",
        "bus",
        "truck",
        "trailer",
    ];
    pub const COUNT: usize = 7;

    pub const PEDESTRIAN: ClassId = ClassId(0);
    pub const BICYCLE: ClassId = ClassId(1);
    pub const CAR: ClassId = ClassId(2);
    pub const MOTORCYCLE: ClassId = ClassId(3);
    pub const BUS: ClassId = ClassId(4);
    pub const TRUCK: ClassId = ClassId(5);
    pub const TRAILER: ClassId = ClassId(6);

    pub fn new(id: u8) -> Result<Self> {
        if (id as usize) < Self::COUNT {
            Ok(Self(id))
        } else {
            Err(Error::InvalidInput(format!(
                "class id {id} outside taxonomy 0..={}",
                Self::COUNT - 1
            )))
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        Self::NAMES
            .iter()
            .position(|n| n.eq_ignore_ascii_case(name))
            .map(|i| Self(i as u8))
            .ok_or_else(|| Error::InvalidInput(format!("unknown class name {name:?}")))
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn name(self) -> &'static str {
        Self::NAMES[self.index()]
    }

    pub fn all() -> impl Iterator<Item = ClassId> {
        (0..Self::COUNT as u8).map(ClassId)
    }
}

impl TryFrom<u8> for ClassId {
    type Error = Error;

    fn try_from(v: u8) -> Result<Self> {
        Self::new(v)
    }
}

impl From<ClassId> for u8 {
    fn from(c: ClassId) -> u8 {
        c.0
    }
}

impl fmt::Display for ClassId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectionSource {
    Rgb,
    Event,
    Fused,
}

/// Center-based box in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub fn new(cx: f64, cy: f64, w: f64, h: f64) -> Self {
        Self { cx, cy, w, h }
    }

    pub fn from_rect(r: &Rect<f64>) -> Self {
        let c = r.center();
        Self::new(c.x, c.y, r.width(), r.height())
    }

    pub fn to_rect(&self) -> Rect<f64> {
        Rect::from_center(self.cx, self.cy, self.w, self.h)
    }

    pub fn center(&self) -> Point2<f64> {
        Point2::new(self.cx, self.cy)
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub class_id: ClassId,
    pub bbox: BBox,
    pub confidence: f64,
    pub source: DetectionSource,
    pub moving: bool,
}

impl Detection {
    pub fn new(
        class_id: ClassId,
        bbox: BBox,
        confidence: f64,
        source: DetectionSource,
    ) -> Result<Self> {
        let d = Self {
            class_id,
            bbox,
            confidence,
            source,
            moving: false,
        };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        let b = &self.bbox;
        if !(b.w > 0.0 && b.h > 0.0) || !b.cx.is_finite() || !b.cy.is_finite() || !b.w.is_finite() || !b.h.is_finite() {
            return Err(Error::InvalidInput(format!(
                "box needs finite center and positive size, got {b:?}"
            )));
        }
        if !(0.0..=1.0).contains(&self.confidence) {
            return Err(Error::InvalidInput(format!(
                "confidence {} outside [0, 1]",
                self.confidence
            )));
        }
        Ok(())
    }

    pub fn rect(&self) -> Rect<f64> {
        self.bbox.to_rect()
    }

    pub fn with_moving(mut self, moving: bool) -> Self {
        self.moving = moving;
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn class_taxonomy_round_trips() {
        assert_eq!(ClassId::from_name("car").unwrap(), ClassId::CAR);
        assert_eq!(ClassId::CAR.index(), 2);
        assert_eq!(ClassId::new(6).unwrap().name(), "trailer");
        assert!(ClassId::new(7).is_err());
        assert!(ClassId::from_name("tram").is_err());
    }

    #[test]
    fn detection_validation() {
        let b = BBox::new(10.0, 10.0, 4.0, 4.0);
        assert!(Detection::new(ClassId::CAR, b, 1.0, DetectionSource::Rgb).is_ok());
        assert!(Detection::new(ClassId::CAR, b, 1.01, DetectionSource::Rgb).is_err());
        let zero = BBox::new(10.0, 10.0, 0.0, 4.0);
        assert!(Detection::new(ClassId::CAR, zero, 0.5, DetectionSource::Rgb).is_err());
    }

    #[test]
    fn box_rect_conversion() {
        let b = BBox::new(10.0, 20.0, 4.0, 6.0);
        let r = b.to_rect();
        assert_eq!((r.x0, r.y0, r.x1, r.y1), (8.0, 17.0, 12.0, 23.0));
        assert_eq!(BBox::from_rect(&r), b);
    }

    #[test]
    fn mask_rejects_non_binary_values() {
        assert!(BinaryMask::from_vec(2, 1, vec![0, 128]).is_err());
        let m = BinaryMask::from_vec(2, 2, vec![0, 255, 255, 0]).unwrap();
        assert_eq!(m.count(), 2);
        assert_eq!(m.foreground().collect::<Vec<_>>(), vec![(1, 0), (0, 1)]);
        assert_eq!(m.count_in(0, 0, 1, 2), 1);
    }

    #[test]
    fn unsorted_detection() {
        let e = |t| Event::new(0, 0, t, Polarity::Positive);
        assert_eq!(first_unsorted(&[e(1), e(1), e(3)]), None);
        assert_eq!(first_unsorted(&[e(1), e(3), e(2)]), Some(2));
    }
}
