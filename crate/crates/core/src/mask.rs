//! Box-local probability and binary masks, human edits, and run-length
//! encoding.
//!
//! Masks are stored in the pixel frame of the box they cover, so a
//! foreground pixel outside its box cannot be represented.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::{BoundingBox, PixelRect};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MaskError {
    #[error("mask dimensions {width}x{height} do not match box raster {expected_w}x{expected_h}")]
    DimensionMismatch {
        width: u32,
        height: u32,
        expected_w: u32,
        expected_h: u32,
    },
    #[error("probability {0} outside [0, 1]")]
    ProbabilityOutOfRange(f64),
    #[error("threshold {0} outside [0, 1]")]
    ThresholdOutOfRange(f64),
    #[error("edit region lies outside the mask box")]
    OutsideBox,
    #[error("edit region is degenerate")]
    DegenerateRegion,
    #[error("run-length payload does not fit a {width}x{height} mask")]
    BadRle { width: u32, height: u32 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbabilityMask {
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
    pub width: u32,
    pub height: u32,
    pub probabilities: Vec<f64>,
}

impl ProbabilityMask {
    pub fn new(bbox: BoundingBox, probabilities: Vec<f64>) -> Result<Self, MaskError> {
        let rect = PixelRect::covering(&bbox);
        if probabilities.len() != rect.len() {
            return Err(MaskError::DimensionMismatch {
                width: probabilities.len() as u32,
                height: 1,
                expected_w: rect.width,
                expected_h: rect.height,
            });
        }
        if let Some(&p) = probabilities.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(MaskError::ProbabilityOutOfRange(p));
        }
        Ok(Self { bbox, width: rect.width, height: rect.height, probabilities })
    }

    pub fn get(&self, x: u32, y: u32) -> f64 {
        self.probabilities[y as usize * self.width as usize + x as usize]
    }
}

/// Region in box-local pixel coordinates (origin at the box raster's
/// top-left pixel corner). A pixel belongs to a region when its center does.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum EditRegion {
    Rect { x_min: f64, y_min: f64, x_max: f64, y_max: f64 },
    Polygon { points: Vec<[f64; 2]> },
}

impl EditRegion {
    fn extent(&self) -> Option<(f64, f64, f64, f64)> {
        match self {
            EditRegion::Rect { x_min, y_min, x_max, y_max } => {
                let ok = [x_min, y_min, x_max, y_max].iter().all(|v| v.is_finite());
                (ok && x_min < x_max && y_min < y_max).then_some((*x_min, *y_min, *x_max, *y_max))
            }
            EditRegion::Polygon { points } => {
                if points.len() < 3 || points.iter().flatten().any(|v| !v.is_finite()) {
                    return None;
                }
                let mut e = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
                for [x, y] in points {
                    e = (e.0.min(*x), e.1.min(*y), e.2.max(*x), e.3.max(*y));
                }
                (e.0 < e.2 && e.1 < e.3).then_some(e)
            }
        }
    }

    fn contains(&self, px: f64, py: f64) -> bool {
        match self {
            EditRegion::Rect { x_min, y_min, x_max, y_max } => {
                px >= *x_min && px < *x_max && py >= *y_min && py < *y_max
            }
            EditRegion::Polygon { points } => {
                // even-odd crossing test
                let mut inside = false;
                let n = points.len();
                for i in 0..n {
                    let [xi, yi] = points[i];
                    let [xj, yj] = points[(i + n - 1) % n];
                    if (yi > py) != (yj > py) && px < (xj - xi) * (py - yi) / (yj - yi) + xi {
                        inside = !inside;
                    }
                }
                inside
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EditOp {
    Add,
    Remove,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskEdit {
    pub op: EditOp,
    pub region: EditRegion,
}

/// Serialized through its run-length form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "MaskDoc", try_from = "MaskDoc")]
pub struct BinaryMask {
    pub bbox: BoundingBox,
    pub width: u32,
    pub height: u32,
    bits: Vec<bool>,
    pub edit_log: Vec<MaskEdit>,
}

impl BinaryMask {
    pub fn empty(bbox: BoundingBox) -> Self {
        let rect = PixelRect::covering(&bbox);
        Self {
            bbox,
            width: rect.width,
            height: rect.height,
            bits: vec![false; rect.len()],
            edit_log: Vec::new(),
        }
    }

    pub fn from_bits(bbox: BoundingBox, bits: Vec<bool>) -> Result<Self, MaskError> {
        let rect = PixelRect::covering(&bbox);
        if bits.len() != rect.len() {
            return Err(MaskError::DimensionMismatch {
                width: bits.len() as u32,
                height: 1,
                expected_w: rect.width,
                expected_h: rect.height,
            });
        }
        Ok(Self { bbox, width: rect.width, height: rect.height, bits, edit_log: Vec::new() })
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, x: u32, y: u32) -> bool {
        self.bits[y as usize * self.width as usize + x as usize]
    }

    pub fn area(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    pub fn origin(&self) -> (u32, u32) {
        let r = PixelRect::covering(&self.bbox);
        (r.x, r.y)
    }

    /// Applies an edit in place and appends it to the log.
    pub fn apply(&mut self, edit: MaskEdit) -> Result<(), MaskError> {
        self.paint(&edit)?;
        self.edit_log.push(edit);
        Ok(())
    }

    /// Paints an edit without logging it.
    pub(crate) fn paint(&mut self, edit: &MaskEdit) -> Result<(), MaskError> {
        let (x0, y0, x1, y1) = edit.region.extent().ok_or(MaskError::DegenerateRegion)?;
        if x1 <= 0.0 || y1 <= 0.0 || x0 >= self.width as f64 || y0 >= self.height as f64 {
            return Err(MaskError::OutsideBox);
        }
        let value = edit.op == EditOp::Add;
        let xs = x0.max(0.0).floor() as u32..(x1.ceil().min(self.width as f64) as u32);
        let ys = y0.max(0.0).floor() as u32..(y1.ceil().min(self.height as f64) as u32);
        for y in ys {
            for x in xs.clone() {
                if edit.region.contains(x as f64 + 0.5, y as f64 + 0.5) {
                    self.bits[y as usize * self.width as usize + x as usize] = value;
                }
            }
        }
        Ok(())
    }

    pub fn to_rle(&self) -> Rle {
        Rle::encode(self.width, self.height, &self.bits)
    }
}

#[derive(Serialize, Deserialize)]
struct MaskDoc {
    #[serde(rename = "box")]
    bbox: BoundingBox,
    rle: Rle,
    #[serde(default)]
    edit_log: Vec<MaskEdit>,
}

impl From<BinaryMask> for MaskDoc {
    fn from(m: BinaryMask) -> Self {
        MaskDoc { bbox: m.bbox, rle: m.to_rle(), edit_log: m.edit_log }
    }
}

impl TryFrom<MaskDoc> for BinaryMask {
    type Error = MaskError;

    fn try_from(doc: MaskDoc) -> Result<Self, MaskError> {
        let rect = PixelRect::covering(&doc.bbox);
        if (doc.rle.width, doc.rle.height) != (rect.width, rect.height) {
            return Err(MaskError::BadRle { width: doc.rle.width, height: doc.rle.height });
        }
        let mut m = BinaryMask::from_bits(doc.bbox, doc.rle.decode()?)?;
        m.edit_log = doc.edit_log;
        Ok(m)
    }
}

/// Alternating `(skip, run)` counts over the row-major box raster, starting
/// with a skip. Pixels after the last run are background.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rle {
    pub width: u32,
    pub height: u32,
    pub counts: Vec<u32>,
}

impl Rle {
    pub fn encode(width: u32, height: u32, bits: &[bool]) -> Rle {
        let mut counts = Vec::new();
        let mut current = false;
        let mut len = 0u32;
        for &b in bits {
            if b == current {
                len += 1;
            } else {
                counts.push(len);
                current = b;
                len = 1;
            }
        }
        if current {
            counts.push(len);
        }
        Rle { width, height, counts }
    }

    pub fn decode(&self) -> Result<Vec<bool>, MaskError> {
        let total = self.width as usize * self.height as usize;
        let bad = || MaskError::BadRle { width: self.width, height: self.height };
        let mut bits = Vec::with_capacity(total);
        for (i, &c) in self.counts.iter().enumerate() {
            if bits.len() + c as usize > total {
                return Err(bad());
            }
            bits.extend(std::iter::repeat_n(i % 2 == 1, c as usize));
        }
        bits.resize(total, false);
        Ok(bits)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn bx() -> BoundingBox {
        BoundingBox::new(10.0, 10.0, 30.0, 30.0).unwrap()
    }

    fn rect(op: EditOp, x0: f64, y0: f64, x1: f64, y1: f64) -> MaskEdit {
        MaskEdit { op, region: EditRegion::Rect { x_min: x0, y_min: y0, x_max: x1, y_max: y1 } }
    }

    #[test]
    fn add_full_box_fills_everything() {
        let mut m = BinaryMask::empty(bx());
        m.apply(rect(EditOp::Add, -5.0, -5.0, 50.0, 50.0)).unwrap();
        assert_eq!(m.area(), 400);
        assert_eq!(m.edit_log.len(), 1);
    }

    #[test]
    fn add_ten_by_ten() {
        let mut m = BinaryMask::empty(bx());
        m.apply(rect(EditOp::Add, 2.0, 2.0, 12.0, 12.0)).unwrap();
        assert_eq!(m.area(), 100);
    }

    #[test]
    fn remove_then_add_equals_add() {
        let mut a = BinaryMask::empty(bx());
        a.apply(rect(EditOp::Add, 0.0, 0.0, 5.0, 20.0)).unwrap();
        let mut b = a.clone();
        a.apply(rect(EditOp::Add, 3.0, 3.0, 9.0, 9.0)).unwrap();
        b.apply(rect(EditOp::Remove, 3.0, 3.0, 9.0, 9.0)).unwrap();
        b.apply(rect(EditOp::Add, 3.0, 3.0, 9.0, 9.0)).unwrap();
        assert_eq!(a.bits(), b.bits());
    }

    #[test]
    fn serde_goes_through_rle() {
        let mut m = BinaryMask::empty(bx());
        m.apply(rect(EditOp::Add, 2.0, 2.0, 12.0, 4.0)).unwrap();
        let json = serde_json::to_string(&m).unwrap();
        assert!(json.contains("\"rle\"") && !json.contains("true,"));
        let back: BinaryMask = serde_json::from_str(&json).unwrap();
        assert_eq!(back, m);
        let bad = json.replace("\"width\":20", "\"width\":21");
        assert!(serde_json::from_str::<BinaryMask>(&bad).is_err());
    }

    #[test]
    fn edit_outside_box_rejected() {
        let mut m = BinaryMask::empty(bx());
        assert_eq!(m.apply(rect(EditOp::Add, 25.0, 0.0, 40.0, 5.0)), Err(MaskError::OutsideBox));
        assert_eq!(m.apply(rect(EditOp::Add, -9.0, -9.0, -1.0, -1.0)), Err(MaskError::OutsideBox));
        assert!(m.edit_log.is_empty());
    }

    #[test]
    fn polygon_triangle() {
        let mut m = BinaryMask::empty(bx());
        let tri = EditRegion::Polygon { points: vec![[0.0, 0.0], [20.0, 0.0], [0.0, 20.0]] };
        m.apply(MaskEdit { op: EditOp::Add, region: tri }).unwrap();
        // centers with x + y < 20, i.e. i + j <= 18
        let expected: usize = (0..20).map(|j: usize| 19usize.saturating_sub(j)).sum();
        assert_eq!(m.area(), expected);
    }

    #[test]
    fn rle_layout() {
        let bits = [false, false, true, true, true, false, true];
        let rle = Rle::encode(7, 1, &bits);
        assert_eq!(rle.counts, vec![2, 3, 1, 1]);
        let leading = Rle::encode(3, 1, &[true, false, false]);
        assert_eq!(leading.counts, vec![0, 1]);
        assert_eq!(leading.decode().unwrap(), vec![true, false, false]);
        assert!(Rle { width: 2, height: 1, counts: vec![1, 5] }.decode().is_err());
    }

    proptest! {
        #[test]
        fn rle_round_trip(w in 1u32..20, h in 1u32..20, seed in any::<u64>()) {
            let n = (w * h) as usize;
            let bits: Vec<bool> = (0..n).map(|i| (seed.rotate_left(i as u32 % 64) ^ i as u64) & 3 == 0).collect();
            let rle = Rle::encode(w, h, &bits);
            prop_assert_eq!(rle.decode().unwrap(), bits);
        }
    }
}
