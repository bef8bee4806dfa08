//! Geometric and photometric augmentation with matching box transforms.
//!
//! Rotations are clockwise on screen (y down). A clockwise quarter turn maps
//! `(x, y)` to `(H - y, x)` and swaps the image dimensions; arbitrary angles
//! rotate about the image center and keep the canvas size.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{DatasetError, LabeledBox};
use crate::types::{BoundingBox, ImageBuffer};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Rotation {
    QuarterTurns { quarter_turns: u8 },
    Degrees { degrees: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum AugmentationOp {
    Rotate(Rotation),
    Scale { factor: f64 },
    Translate { dx: f64, dy: f64 },
    GaussianNoise { sigma: f64, seed: u64 },
}

impl AugmentationOp {
    pub fn validate(&self) -> Result<(), DatasetError> {
        let bad = |m: String| Err(DatasetError::InvalidOp(m));
        match *self {
            AugmentationOp::Rotate(Rotation::QuarterTurns { quarter_turns }) if !(1..=3).contains(&quarter_turns) => {
                bad(format!("quarter_turns {quarter_turns} not in 1..=3"))
            }
            AugmentationOp::Rotate(Rotation::Degrees { degrees }) if !degrees.is_finite() => {
                bad("rotation angle must be finite".into())
            }
            AugmentationOp::Scale { factor } if !(factor > 0.0 && factor.is_finite()) => {
                bad(format!("scale factor {factor} must be positive"))
            }
            AugmentationOp::Translate { dx, dy } if !(dx.is_finite() && dy.is_finite()) => {
                bad("translation must be finite".into())
            }
            AugmentationOp::GaussianNoise { sigma, .. } if !(sigma >= 0.0 && sigma.is_finite()) => {
                bad(format!("sigma {sigma} must be non-negative"))
            }
            _ => Ok(()),
        }
    }
}

type PointMap = Box<dyn Fn(f64, f64) -> (f64, f64)>;

/// Applies `op` to the image and its boxes. Boxes are mapped by their four
/// corners, hulled, clamped, and dropped below 1 px² of area.
pub fn augment(
    image: &ImageBuffer,
    boxes: &[LabeledBox],
    op: &AugmentationOp,
) -> Result<(ImageBuffer, Vec<LabeledBox>), DatasetError> {
    op.validate()?;
    let (w, h) = (image.width() as f64, image.height() as f64);
    let (out, map): (ImageBuffer, PointMap) = match *op {
        AugmentationOp::Rotate(Rotation::QuarterTurns { quarter_turns }) => {
            let mut img = image.clone();
            let mut pts: Vec<PointMap> = Vec::new();
            for _ in 0..quarter_turns {
                let hh = img.height() as f64;
                pts.push(Box::new(move |x, y| (hh - y, x)));
                img = quarter_turn(&img);
            }
            (img, Box::new(move |x, y| pts.iter().fold((x, y), |p, f| f(p.0, p.1))))
        }
        AugmentationOp::Rotate(Rotation::Degrees { degrees }) => {
            let (s, c) = degrees.to_radians().sin_cos();
            let (cx, cy) = (w / 2.0, h / 2.0);
            let fwd = move |x: f64, y: f64| {
                let (dx, dy) = (x - cx, y - cy);
                (cx + c * dx - s * dy, cy + s * dx + c * dy)
            };
            let inv = move |x: f64, y: f64| {
                let (dx, dy) = (x - cx, y - cy);
                (cx + c * dx + s * dy, cy - s * dx + c * dy)
            };
            (resample(image, image.width(), image.height(), inv), Box::new(fwd))
        }
        AugmentationOp::Scale { factor } => {
            let nw = ((w * factor).round() as u32).max(1);
            let nh = ((h * factor).round() as u32).max(1);
            let (sx, sy) = (nw as f64 / w, nh as f64 / h);
            (resample(image, nw, nh, move |x, y| (x / sx, y / sy)), Box::new(move |x, y| (x * sx, y * sy)))
        }
        AugmentationOp::Translate { dx, dy } => (
            resample(image, image.width(), image.height(), move |x, y| (x - dx, y - dy)),
            Box::new(move |x, y| (x + dx, y + dy)),
        ),
        AugmentationOp::GaussianNoise { sigma, seed } => {
            return Ok((gaussian_noise(image, sigma, seed), boxes.to_vec()));
        }
    };
    let mapped = map_boxes(boxes, &map, out.width(), out.height());
    if !boxes.is_empty() && mapped.is_empty() {
        return Err(DatasetError::DegenerateResult);
    }
    Ok((out, mapped))
}

/// Applies each op in turn.
pub fn augment_chain(
    image: &ImageBuffer,
    boxes: &[LabeledBox],
    ops: &[AugmentationOp],
) -> Result<(ImageBuffer, Vec<LabeledBox>), DatasetError> {
    let mut cur = (image.clone(), boxes.to_vec());
    for op in ops {
        cur = augment(&cur.0, &cur.1, op)?;
    }
    Ok(cur)
}

fn map_boxes(boxes: &[LabeledBox], map: &dyn Fn(f64, f64) -> (f64, f64), w: u32, h: u32) -> Vec<LabeledBox> {
    boxes
        .iter()
        .filter_map(|b| {
            let bb = &b.bbox;
            let corners = [(bb.x_min, bb.y_min), (bb.x_max, bb.y_min), (bb.x_min, bb.y_max), (bb.x_max, bb.y_max)]
                .map(|(x, y)| map(x, y));
            let xs = corners.map(|p| p.0);
            let ys = corners.map(|p| p.1);
            let fold = |v: [f64; 4], f: fn(f64, f64) -> f64, init: f64| v.into_iter().fold(init, f);
            let x0 = fold(xs, f64::min, f64::INFINITY).clamp(0.0, w as f64);
            let x1 = fold(xs, f64::max, f64::NEG_INFINITY).clamp(0.0, w as f64);
            let y0 = fold(ys, f64::min, f64::INFINITY).clamp(0.0, h as f64);
            let y1 = fold(ys, f64::max, f64::NEG_INFINITY).clamp(0.0, h as f64);
            if (x1 - x0) * (y1 - y0) < 1.0 {
                return None;
            }
            Some(LabeledBox { label: b.label.clone(), bbox: BoundingBox::new(x0, y0, x1, y1).ok()? })
        })
        .collect()
}

/// Lossless clockwise quarter turn: `out[x][H-1-y] = in[y][x]`.
pub fn quarter_turn(image: &ImageBuffer) -> ImageBuffer {
    let (w, h, ch) = (image.width() as usize, image.height() as usize, image.channels() as usize);
    let src = image.data();
    let mut out = vec![0u8; src.len()];
    // output is h wide and w tall
    for y in 0..h {
        for x in 0..w {
            let (ox, oy) = (h - 1 - y, x);
            let s = (y * w + x) * ch;
            let d = (oy * h + ox) * ch;
            out[d..d + ch].copy_from_slice(&src[s..s + ch]);
        }
    }
    ImageBuffer::new(h as u32, w as u32, ch as u8, out).expect("dimensions are preserved")
}

/// Inverse-mapped bilinear resampling with edge replication. `src_of` maps
/// a continuous output point to its continuous source point.
fn resample(image: &ImageBuffer, out_w: u32, out_h: u32, src_of: impl Fn(f64, f64) -> (f64, f64)) -> ImageBuffer {
    let (w, h, ch) = (image.width() as usize, image.height() as usize, image.channels() as usize);
    let src = image.data();
    let at = |x: usize, y: usize, c: usize| src[(y * w + x) * ch + c] as f64;
    let mut out = Vec::with_capacity(out_w as usize * out_h as usize * ch);
    for oy in 0..out_h {
        for ox in 0..out_w {
            let (sx, sy) = src_of(ox as f64 + 0.5, oy as f64 + 0.5);
            // pixel centers sit at half-integers
            let fx = (sx - 0.5).clamp(0.0, (w - 1) as f64);
            let fy = (sy - 0.5).clamp(0.0, (h - 1) as f64);
            let (x0, y0) = (fx.floor() as usize, fy.floor() as usize);
            let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
            let (tx, ty) = (fx - x0 as f64, fy - y0 as f64);
            for c in 0..ch {
                let top = at(x0, y0, c) * (1.0 - tx) + at(x1, y0, c) * tx;
                let bot = at(x0, y1, c) * (1.0 - tx) + at(x1, y1, c) * tx;
                out.push((top * (1.0 - ty) + bot * ty).round().clamp(0.0, 255.0) as u8);
            }
        }
    }
    ImageBuffer::new(out_w, out_h, ch as u8, out).expect("resample keeps channel layout")
}

fn gaussian_noise(image: &ImageBuffer, sigma: f64, seed: u64) -> ImageBuffer {
    if sigma == 0.0 {
        return image.clone();
    }
    let normal = Normal::new(0.0, sigma).expect("sigma validated");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = image
        .data()
        .iter()
        .map(|&v| (v as f64 + normal.sample(&mut rng)).round().clamp(0.0, 255.0) as u8)
        .collect();
    ImageBuffer::new(image.width(), image.height(), image.channels(), data).expect("same layout")
}

/// Ranges for randomly drawn augmentations. These are tool defaults, not
/// values from any published training setup.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentationPolicy {
    pub max_degrees: f64,
    pub scale_min: f64,
    pub scale_max: f64,
    /// Maximum shift as a fraction of each image dimension.
    pub translate_fraction: f64,
    pub sigma: f64,
}

impl Default for AugmentationPolicy {
    fn default() -> Self {
        Self { max_degrees: 15.0, scale_min: 0.8, scale_max: 1.2, translate_fraction: 0.1, sigma: 5.0 }
    }
}

impl AugmentationPolicy {
    /// Rotation, scale, translation and noise drawn from `rng`.
    pub fn sample(&self, rng: &mut impl Rng, width: u32, height: u32) -> Vec<AugmentationOp> {
        let degrees = rng.random_range(-self.max_degrees..=self.max_degrees);
        let factor = rng.random_range(self.scale_min..=self.scale_max);
        let tx = self.translate_fraction * width as f64;
        let ty = self.translate_fraction * height as f64;
        let dx = rng.random_range(-tx..=tx).round();
        let dy = rng.random_range(-ty..=ty).round();
        vec![
            AugmentationOp::Rotate(Rotation::Degrees { degrees }),
            AugmentationOp::Scale { factor },
            AugmentationOp::Translate { dx, dy },
            AugmentationOp::GaussianNoise { sigma: self.sigma, seed: rng.random() },
        ]
    }
}
