//! Shared domain types: defect taxonomy, images, boxes, detections and
//! the severity / condition-state scales.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Millimetres per inch, used for every imperial threshold.
pub const MM_PER_INCH: f64 = 25.4;
/// Millimetres per foot.
pub const MM_PER_FOOT: f64 = 304.8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TypeError {
    #[error("invalid image: {0}")]
    BadImage(String),
    #[error("invalid bounding box ({x_min}, {y_min}, {x_max}, {y_max})")]
    InvalidBox {
        x_min: f64,
        y_min: f64,
        x_max: f64,
        y_max: f64,
    },
    #[error("box does not intersect the image")]
    EmptyIntersection,
    #[error("confidence {0} outside [0, 1]")]
    ConfidenceOutOfRange(f64),
    #[error("unknown defect class '{0}'")]
    UnknownClass(String),
}

/// The six concrete defect classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DefectClass {
    Cracking,
    Rusting,
    Spalling,
    Efflorescence,
    JointDamage,
    Delamination,
}

impl DefectClass {
    pub const ALL: [DefectClass; 6] = [
        DefectClass::Cracking,
        DefectClass::Rusting,
        DefectClass::Spalling,
        DefectClass::Efflorescence,
        DefectClass::JointDamage,
        DefectClass::Delamination,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            DefectClass::Cracking => "cracking",
            DefectClass::Rusting => "rusting",
            DefectClass::Spalling => "spalling",
            DefectClass::Efflorescence => "efflorescence",
            DefectClass::JointDamage => "joint_damage",
            DefectClass::Delamination => "delamination",
        }
    }
}

impl fmt::Display for DefectClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DefectClass {
    type Err = TypeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.trim().to_ascii_lowercase().replace([' ', '-'], "_");
        DefectClass::ALL
            .into_iter()
            .find(|c| c.as_str() == norm)
            .ok_or_else(|| TypeError::UnknownClass(s.to_string()))
    }
}

/// 8-bit image, row-major, origin top-left, y down.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageBuffer {
    width: u32,
    height: u32,
    channels: u8,
    data: Vec<u8>,
}

impl ImageBuffer {
    pub fn new(width: u32, height: u32, channels: u8, data: Vec<u8>) -> Result<Self, TypeError> {
        if width == 0 || height == 0 {
            return Err(TypeError::BadImage("zero-sized image".into()));
        }
        if channels != 1 && channels != 3 {
            return Err(TypeError::BadImage(format!("unsupported channel count {channels}")));
        }
        let expected = width as usize * height as usize * channels as usize;
        if data.len() != expected {
            return Err(TypeError::BadImage(format!(
                "buffer length {} != {expected}",
                data.len()
            )));
        }
        Ok(Self { width, height, channels, data })
    }

    /// Single-channel image filled with `value`.
    pub fn filled(width: u32, height: u32, value: u8) -> Result<Self, TypeError> {
        Self::new(width, height, 1, vec![value; width as usize * height as usize])
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn channels(&self) -> u8 {
        self.channels
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn into_data(self) -> Vec<u8> {
        self.data
    }

    /// Luma value at `(x, y)`; RGB uses integer Rec. 601 weights.
    pub fn gray_at(&self, x: u32, y: u32) -> u8 {
        let i = (y as usize * self.width as usize + x as usize) * self.channels as usize;
        if self.channels == 1 {
            self.data[i]
        } else {
            let (r, g, b) = (self.data[i] as u32, self.data[i + 1] as u32, self.data[i + 2] as u32);
            ((299 * r + 587 * g + 114 * b + 500) / 1000) as u8
        }
    }

    pub fn set_gray(&mut self, x: u32, y: u32, value: u8) {
        let c = self.channels as usize;
        let i = (y as usize * self.width as usize + x as usize) * c;
        self.data[i..i + c].fill(value);
    }

    pub fn to_gray(&self) -> ImageBuffer {
        if self.channels == 1 {
            return self.clone();
        }
        let mut data = Vec::with_capacity(self.width as usize * self.height as usize);
        for y in 0..self.height {
            for x in 0..self.width {
                data.push(self.gray_at(x, y));
            }
        }
        ImageBuffer { width: self.width, height: self.height, channels: 1, data }
    }

    /// Copies the pixel-aligned region covering `bbox` (see [`PixelRect::covering`]).
    pub fn crop(&self, bbox: &BoundingBox) -> Result<ImageBuffer, TypeError> {
        let rect = PixelRect::covering(bbox);
        if rect.x1() > self.width || rect.y1() > self.height {
            return Err(TypeError::EmptyIntersection);
        }
        let c = self.channels as usize;
        let mut data = Vec::with_capacity(rect.width as usize * rect.height as usize * c);
        for y in rect.y..rect.y1() {
            let start = (y as usize * self.width as usize + rect.x as usize) * c;
            data.extend_from_slice(&self.data[start..start + rect.width as usize * c]);
        }
        ImageBuffer::new(rect.width, rect.height, self.channels, data)
    }

    pub fn decode_png(bytes: &[u8]) -> Result<ImageBuffer, TypeError> {
        let img = image::load_from_memory_with_format(bytes, image::ImageFormat::Png)
            .map_err(|e| TypeError::BadImage(e.to_string()))?;
        let (w, h) = (img.width(), img.height());
        let (channels, data) = match img {
            image::DynamicImage::ImageLuma8(buf) => (1, buf.into_raw()),
            other => (3, other.to_rgb8().into_raw()),
        };
        ImageBuffer::new(w, h, channels, data)
    }

    pub fn encode_png(&self) -> Vec<u8> {
        let color = if self.channels == 1 {
            image::ExtendedColorType::L8
        } else {
            image::ExtendedColorType::Rgb8
        };
        let mut out = Vec::new();
        let encoder = image::codecs::png::PngEncoder::new(&mut out);
        image::ImageEncoder::write_image(encoder, &self.data, self.width, self.height, color)
            .expect("in-memory PNG encoding of a validated buffer");
        out
    }
}

/// Axis-aligned box in continuous pixel coordinates; max edges exclusive
/// when rasterized.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl BoundingBox {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<Self, TypeError> {
        let b = Self { x_min, y_min, x_max, y_max };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<(), TypeError> {
        let finite = [self.x_min, self.y_min, self.x_max, self.y_max]
            .iter()
            .all(|v| v.is_finite());
        if finite && self.x_min < self.x_max && self.y_min < self.y_max {
            Ok(())
        } else {
            Err(TypeError::InvalidBox {
                x_min: self.x_min,
                y_min: self.y_min,
                x_max: self.x_max,
                y_max: self.y_max,
            })
        }
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.x_min + self.x_max) * 0.5, (self.y_min + self.y_max) * 0.5)
    }

    pub fn intersection(&self, other: &BoundingBox) -> Option<BoundingBox> {
        let b = BoundingBox {
            x_min: self.x_min.max(other.x_min),
            y_min: self.y_min.max(other.y_min),
            x_max: self.x_max.min(other.x_max),
            y_max: self.y_max.min(other.y_max),
        };
        (b.x_min < b.x_max && b.y_min < b.y_max).then_some(b)
    }

    pub fn is_within(&self, width: u32, height: u32) -> bool {
        self.x_min >= 0.0
            && self.y_min >= 0.0
            && self.x_max <= width as f64
            && self.y_max <= height as f64
    }

    pub fn translated(&self, dx: f64, dy: f64) -> BoundingBox {
        BoundingBox {
            x_min: self.x_min + dx,
            y_min: self.y_min + dy,
            x_max: self.x_max + dx,
            y_max: self.y_max + dy,
        }
    }
}

/// Integer pixel rectangle a box rasterizes onto: origin `floor(min)`,
/// extent `ceil(max - min)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PixelRect {
    pub x: u32,
    pub y: u32,
    pub width: u32,
    pub height: u32,
}

impl PixelRect {
    pub fn covering(bbox: &BoundingBox) -> PixelRect {
        PixelRect {
            x: bbox.x_min.max(0.0).floor() as u32,
            y: bbox.y_min.max(0.0).floor() as u32,
            width: bbox.width().ceil().max(1.0) as u32,
            height: bbox.height().ceil().max(1.0) as u32,
        }
    }

    pub fn x1(&self) -> u32 {
        self.x + self.width
    }

    pub fn y1(&self) -> u32 {
        self.y + self.height
    }

    pub fn len(&self) -> usize {
        self.width as usize * self.height as usize
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Intersects `bbox` with `[0, width] x [0, height]`.
pub fn clamp_box(bbox: &BoundingBox, width: u32, height: u32) -> Result<BoundingBox, TypeError> {
    let frame = BoundingBox { x_min: 0.0, y_min: 0.0, x_max: width as f64, y_max: height as f64 };
    bbox.intersection(&frame).ok_or(TypeError::EmptyIntersection)
}

/// Intersection over union of two valid boxes.
pub fn box_iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let inter = a.intersection(b).map_or(0.0, |i| i.area());
    if inter == 0.0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

pub type DetectionId = u32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReviewState {
    Proposed,
    Confirmed,
    Rejected,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub id: DetectionId,
    pub class: DefectClass,
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
    pub confidence: f64,
    pub review: ReviewState,
}

impl Detection {
    pub fn new(
        id: DetectionId,
        class: DefectClass,
        bbox: BoundingBox,
        confidence: f64,
    ) -> Result<Self, TypeError> {
        bbox.validate()?;
        if !(0.0..=1.0).contains(&confidence) {
            return Err(TypeError::ConfidenceOutOfRange(confidence));
        }
        Ok(Self { id, class, bbox, confidence, review: ReviewState::Proposed })
    }
}

/// Defect-level severity, totally ordered from `None` to `MediumSevere`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeverityBand {
    None,
    HairlineMinor,
    NarrowModerate,
    MediumSevere,
}

impl SeverityBand {
    pub const ALL: [SeverityBand; 4] = [
        SeverityBand::None,
        SeverityBand::HairlineMinor,
        SeverityBand::NarrowModerate,
        SeverityBand::MediumSevere,
    ];

    pub fn label(self) -> &'static str {
        match self {
            SeverityBand::None => "None",
            SeverityBand::HairlineMinor => "Hairline - Minor",
            SeverityBand::NarrowModerate => "Narrow - Moderate",
            SeverityBand::MediumSevere => "Medium - Severe",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ConditionLevel {
    CS1,
    CS2,
    CS3,
    CS4,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaintenanceAction {
    DoNothing,
    Protect,
    Repair,
    Rehab,
    Replace,
}

impl MaintenanceAction {
    pub fn label(self) -> &'static str {
        match self {
            MaintenanceAction::DoNothing => "do nothing",
            MaintenanceAction::Protect => "protect",
            MaintenanceAction::Repair => "repair",
            MaintenanceAction::Rehab => "rehab",
            MaintenanceAction::Replace => "replace",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConditionState {
    pub state: ConditionLevel,
    pub label: String,
    pub actions: Vec<MaintenanceAction>,
}

impl ConditionState {
    pub fn of(level: ConditionLevel) -> ConditionState {
        use MaintenanceAction::*;
        let (label, actions) = match level {
            ConditionLevel::CS1 => ("Good", vec![DoNothing, Protect]),
            ConditionLevel::CS2 => ("Fair", vec![DoNothing, Protect, Repair]),
            ConditionLevel::CS3 => ("Poor", vec![DoNothing, Protect, Repair, Rehab]),
            ConditionLevel::CS4 => ("Severe", vec![DoNothing, Repair, Rehab, Replace]),
        };
        ConditionState { state: level, label: label.to_string(), actions }
    }
}
