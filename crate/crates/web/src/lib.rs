//! Browser bindings for three engine operations: detection threshold
//! steering, attention-guided vs whole-image segmentation, and crack width
//! measurement with grading. Everything runs client side on synthetic
//! scenes. The plain-Rust functions are what the native tests call; the
//! `#[wasm_bindgen]` items only convert errors.

use inspekt_core::geometry::Calibration;
use inspekt_core::mask::BinaryMask;
use inspekt_core::segmenter::{binarize, segment_region, segment_whole_image, ReferenceSegmenter};
use inspekt_core::session::{run_headless, Engine, InspectionSession};
use inspekt_core::synth::{straight_crack_scene, two_spall_scene, Canvas};
use inspekt_core::types::{BoundingBox, ImageBuffer};
use serde::Serialize;
use wasm_bindgen::prelude::*;

fn js(e: String) -> JsError {
    JsError::new(&e)
}

/// Gray image as RGBA for `ImageData`.
pub fn to_rgba(image: &ImageBuffer) -> Vec<u8> {
    let g = image.to_gray();
    g.data().iter().flat_map(|&v| [v, v, v, 255]).collect()
}

#[derive(Debug, Serialize)]
pub struct VisibleBox {
    pub id: u32,
    pub class: String,
    pub confidence: f64,
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

/// The two-spall scene with proposals computed once; moving the threshold
/// only refilters.
#[wasm_bindgen]
pub struct ThresholdDemo {
    engine: Engine,
    session: InspectionSession,
    image: ImageBuffer,
}

impl ThresholdDemo {
    pub fn create() -> Result<Self, String> {
        let engine = Engine::reference();
        let png = two_spall_scene().encode_png();
        let (mut session, image) =
            engine.create_session("demo", &png, Calibration::Scale { mm_per_pixel: 0.5 }).map_err(|e| e.to_string())?;
        engine.propose(&mut session, &image).map_err(|e| e.to_string())?;
        Ok(Self { engine, session, image })
    }

    pub fn visible_at(&mut self, threshold: f64) -> Result<Vec<VisibleBox>, String> {
        self.engine.set_detection_threshold(&mut self.session, threshold).map_err(|e| e.to_string())?;
        Ok(self
            .session
            .visible()
            .into_iter()
            .map(|d| VisibleBox {
                id: d.id,
                class: d.class.as_str().to_string(),
                confidence: d.confidence,
                x_min: d.bbox.x_min,
                y_min: d.bbox.y_min,
                x_max: d.bbox.x_max,
                y_max: d.bbox.y_max,
            })
            .collect())
    }
}

#[wasm_bindgen]
impl ThresholdDemo {
    #[wasm_bindgen(constructor)]
    pub fn new() -> Result<ThresholdDemo, JsError> {
        Self::create().map_err(js)
    }

    pub fn width(&self) -> u32 {
        self.image.width()
    }

    pub fn height(&self) -> u32 {
        self.image.height()
    }

    pub fn rgba(&self) -> Vec<u8> {
        to_rgba(&self.image)
    }

    /// JSON array of the boxes visible at `threshold`.
    pub fn set_threshold(&mut self, threshold: f64) -> Result<String, JsError> {
        let v = self.visible_at(threshold).map_err(js)?;
        Ok(serde_json::to_string(&v).expect("serializable"))
    }
}

pub const ATTENTION_BOX: (u32, u32, u32, u32) = (30, 30, 80, 70);

/// Dark speckle everywhere except the box, one defect inside it.
pub fn attention_scene() -> ImageBuffer {
    Canvas::new(120, 120, 235)
        .speckle_outside(11, 600, 10, ATTENTION_BOX)
        .rect(40, 40, 70, 60, 40)
        .into_image()
}

#[derive(Debug, Serialize)]
pub struct AttentionCounts {
    pub inside_whole: usize,
    pub outside_whole: usize,
    pub inside_guided: usize,
    pub outside_guided: usize,
}

fn split(mask: &BinaryMask) -> (usize, usize) {
    let (b0x, b0y, b1x, b1y) = ATTENTION_BOX;
    let (ox, oy) = mask.origin();
    let mut counts = (0, 0);
    for y in 0..mask.height {
        for x in 0..mask.width {
            if mask.get(x, y) {
                let (gx, gy) = (ox + x, oy + y);
                if gx >= b0x && gx < b1x && gy >= b0y && gy < b1y {
                    counts.0 += 1;
                } else {
                    counts.1 += 1;
                }
            }
        }
    }
    counts
}

fn attention_masks(threshold: f64) -> Result<(ImageBuffer, BinaryMask, BinaryMask), String> {
    let image = attention_scene();
    let seg = ReferenceSegmenter::default();
    let (x0, y0, x1, y1) = ATTENTION_BOX;
    let bbox = BoundingBox::new(x0 as f64, y0 as f64, x1 as f64, y1 as f64).map_err(|e| e.to_string())?;
    let whole = segment_whole_image(&image, &seg).and_then(|p| binarize(&p, threshold)).map_err(|e| e.to_string())?;
    let guided = segment_region(&image, &bbox, &seg).and_then(|p| binarize(&p, threshold)).map_err(|e| e.to_string())?;
    Ok((image, whole, guided))
}

pub fn attention_counts(threshold: f64) -> Result<AttentionCounts, String> {
    let (_, whole, guided) = attention_masks(threshold)?;
    let (inside_whole, outside_whole) = split(&whole);
    let (inside_guided, outside_guided) = split(&guided);
    Ok(AttentionCounts { inside_whole, outside_whole, inside_guided, outside_guided })
}

/// Scene with foreground tinted red; `guided` picks the box-restricted mask.
pub fn attention_overlay(threshold: f64, guided: bool) -> Result<Vec<u8>, String> {
    let (image, whole, boxed) = attention_masks(threshold)?;
    let mask = if guided { boxed } else { whole };
    let mut rgba = to_rgba(&image);
    let (ox, oy) = mask.origin();
    for y in 0..mask.height {
        for x in 0..mask.width {
            if mask.get(x, y) {
                let i = 4 * ((oy + y) * image.width() + ox + x) as usize;
                rgba[i..i + 3].copy_from_slice(&[230, 40, 40]);
            }
        }
    }
    Ok(rgba)
}

#[wasm_bindgen]
pub fn attention_size() -> u32 {
    attention_scene().width()
}

/// JSON `{inside_whole, outside_whole, inside_guided, outside_guided}`.
#[wasm_bindgen]
pub fn attention_demo(threshold: f64) -> Result<String, JsError> {
    let c = attention_counts(threshold).map_err(js)?;
    Ok(serde_json::to_string(&c).expect("serializable"))
}

#[wasm_bindgen]
pub fn attention_rgba(threshold: f64, guided: bool) -> Result<Vec<u8>, JsError> {
    attention_overlay(threshold, guided).map_err(js)
}

#[derive(Debug, Serialize)]
pub struct CrackResult {
    pub true_width_mm: f64,
    pub width_mm: f64,
    pub length_mm: f64,
    pub band: String,
    pub condition: String,
}

/// Renders a straight crack `thickness_px` wide and measures it headlessly.
pub fn measure_crack(thickness_px: u32, mm_per_pixel: f64) -> Result<CrackResult, String> {
    if !(1..=60).contains(&thickness_px) {
        return Err(format!("thickness {thickness_px} px outside 1..=60"));
    }
    let engine = Engine::reference();
    let png = straight_crack_scene(300, thickness_px).encode_png();
    let (mut s, image) = engine.create_session("crack", &png, Calibration::Scale { mm_per_pixel }).map_err(|e| e.to_string())?;
    let out = run_headless(&engine, &mut s, &image, 0.5, 0.5).map_err(|e| e.to_string())?;
    let a = out.report.detections.first().ok_or("no detection")?;
    let m = a.measurement.ok_or("no measurement")?;
    Ok(CrackResult {
        true_width_mm: thickness_px as f64 * mm_per_pixel,
        width_mm: m.max_width_mm.ok_or("not measured as a crack")?,
        length_mm: m.length_mm.unwrap_or(0.0),
        band: a.band.label().to_string(),
        condition: format!("{:?} ({})", a.condition.state, a.condition.label),
    })
}

/// JSON `{true_width_mm, width_mm, length_mm, band, condition}`.
#[wasm_bindgen]
pub fn crack_demo(thickness_px: u32, mm_per_pixel: f64) -> Result<String, JsError> {
    let r = measure_crack(thickness_px, mm_per_pixel).map_err(js)?;
    Ok(serde_json::to_string(&r).expect("serializable"))
}
