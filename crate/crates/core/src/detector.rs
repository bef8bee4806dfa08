//! Defect proposals: the pluggable backend interface, the deterministic
//! reference backend, confidence filtering and class-aware NMS.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::imgproc::{self, Component, Grid};
use crate::types::{box_iou, clamp_box, BoundingBox, DefectClass, Detection, ImageBuffer};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DetectorError {
    #[error("detector backend failed: {0}")]
    BackendFailure(String),
    #[error("invalid detector configuration: {0}")]
    InvalidConfig(String),
    #[error("threshold {0} outside [0, 1]")]
    ThresholdOutOfRange(f64),
    #[error("unknown detector backend '{0}'")]
    UnknownBackend(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorConfig {
    /// Confidence floor; proposals below it are never cached.
    pub confidence_floor: f64,
    pub nms_iou: f64,
    pub min_blob_area: usize,
    /// Side of the local-mean window of the reference backend.
    pub window: usize,
    /// How much darker than the local mean a pixel must be.
    pub offset: f64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self { confidence_floor: 0.01, nms_iou: 0.5, min_blob_area: 25, window: 31, offset: 10.0 }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<(), DetectorError> {
        if !(0.0..1.0).contains(&self.confidence_floor) {
            return Err(DetectorError::InvalidConfig(format!(
                "confidence floor {} not in [0, 1)",
                self.confidence_floor
            )));
        }
        if !(self.nms_iou > 0.0 && self.nms_iou <= 1.0) {
            return Err(DetectorError::InvalidConfig(format!("nms_iou {} not in (0, 1]", self.nms_iou)));
        }
        if self.window == 0 {
            return Err(DetectorError::InvalidConfig("window must be positive".into()));
        }
        Ok(())
    }
}

/// Produces raw detections for an image. Implementations must be
/// deterministic for identical input and return boxes inside the image.
pub trait DetectorBackend: Send + Sync {
    fn name(&self) -> &str;

    fn detect(&self, image: &ImageBuffer, config: &DetectorConfig) -> Result<Vec<Detection>, DetectorError>;
}

/// Classical stand-in for a trained detector: local-mean adaptive threshold,
/// 8-connected blobs, contrast-derived confidence.
#[derive(Debug, Clone, Copy, Default)]
pub struct ReferenceDetector;

/// Elongation at or above which a blob is called a crack.
pub const CRACK_ELONGATION: f64 = 5.0;

impl ReferenceDetector {
    pub const NAME: &'static str = "reference";
}

/// Per-blob evidence computed by the reference backend.
#[derive(Debug, Clone)]
pub struct BlobEvidence {
    pub bbox: BoundingBox,
    pub area: usize,
    pub object_mean: f64,
    pub background_mean: f64,
    pub elongation: f64,
    pub class: DefectClass,
}

impl BlobEvidence {
    pub fn contrast(&self) -> f64 {
        (self.background_mean - self.object_mean) / 255.0
    }
}

/// Contrast score mapped to a confidence: `(background - object) / 255`
/// clamped to `[floor, 0.99]`.
pub fn contrast_confidence(object_mean: f64, background_mean: f64, floor: f64) -> f64 {
    ((background_mean - object_mean) / 255.0).clamp(floor, 0.99)
}

/// Blob elongation: max of box aspect ratio, principal-axis ratio and
/// `skeleton_length² / area`, all over the hole-filled blob.
fn elongation(filled: &Grid) -> f64 {
    let (w, h) = (filled.width as f64, filled.height as f64);
    let aspect = w.max(h) / w.min(h);

    let mut n = 0.0;
    let (mut sx, mut sy) = (0.0, 0.0);
    for y in 0..filled.height {
        for x in 0..filled.width {
            if filled.get(x, y) {
                n += 1.0;
                sx += x as f64;
                sy += y as f64;
            }
        }
    }
    let (mx, my) = (sx / n, sy / n);
    let (mut cxx, mut cyy, mut cxy) = (0.0, 0.0, 0.0);
    for y in 0..filled.height {
        for x in 0..filled.width {
            if filled.get(x, y) {
                let (dx, dy) = (x as f64 - mx, y as f64 - my);
                cxx += dx * dx;
                cyy += dy * dy;
                cxy += dx * dy;
            }
        }
    }
    // pixel extent adds 1/12 per axis so single rows stay finite
    let (cxx, cyy, cxy) = (cxx / n + 1.0 / 12.0, cyy / n + 1.0 / 12.0, cxy / n);
    let tr = cxx + cyy;
    let disc = ((cxx - cyy) * (cxx - cyy) + 4.0 * cxy * cxy).sqrt();
    let principal = ((tr + disc) / (tr - disc)).sqrt();

    let skel = imgproc::thin(filled);
    let len = imgproc::skeleton_path_length(&skel);
    let thinness = len * len / n;

    aspect.max(principal).max(thinness.sqrt())
}

/// Runs the reference pipeline and returns the evidence for every blob
/// that passes the area filter, in raster order.
pub fn reference_blobs(image: &ImageBuffer, config: &DetectorConfig) -> Vec<BlobEvidence> {
    let (w, h) = (image.width() as usize, image.height() as usize);
    let gray = imgproc::gray_plane(image);
    let fg = imgproc::adaptive_threshold(&gray, w, h, config.window, config.offset);
    let margin = config.window / 2;

    imgproc::connected_components(&fg)
        .into_iter()
        .filter(|c| c.area() >= config.min_blob_area)
        .map(|c| blob_evidence(&c, &fg, &gray, w, h, margin))
        .collect()
}

fn blob_evidence(c: &Component, fg: &Grid, gray: &[u8], w: usize, h: usize, margin: usize) -> BlobEvidence {
    let filled = imgproc::fill_holes(&c.local_grid());
    let mut object_sum = 0.0;
    let mut object_n = 0usize;
    for y in 0..filled.height {
        for x in 0..filled.width {
            if filled.get(x, y) {
                object_sum += gray[(y + c.y_min) * w + x + c.x_min] as f64;
                object_n += 1;
            }
        }
    }

    let x0 = c.x_min.saturating_sub(margin);
    let y0 = c.y_min.saturating_sub(margin);
    let x1 = (c.x_max + margin + 1).min(w);
    let y1 = (c.y_max + margin + 1).min(h);
    let mut bg_sum = 0.0;
    let mut bg_n = 0usize;
    for y in y0..y1 {
        for x in x0..x1 {
            let in_object = x >= c.x_min
                && x <= c.x_max
                && y >= c.y_min
                && y <= c.y_max
                && filled.get(x - c.x_min, y - c.y_min);
            if !in_object && !fg.get(x, y) {
                bg_sum += gray[y * w + x] as f64;
                bg_n += 1;
            }
        }
    }
    let object_mean = object_sum / object_n as f64;
    let background_mean = if bg_n == 0 { 255.0 } else { bg_sum / bg_n as f64 };

    let elong = elongation(&filled);
    let class = if elong >= CRACK_ELONGATION { DefectClass::Cracking } else { DefectClass::Spalling };

    // one pixel of context on each side so the segmenter sees background
    let bbox = BoundingBox {
        x_min: c.x_min.saturating_sub(1) as f64,
        y_min: c.y_min.saturating_sub(1) as f64,
        x_max: (c.x_max + 2).min(w) as f64,
        y_max: (c.y_max + 2).min(h) as f64,
    };
    BlobEvidence { bbox, area: c.area(), object_mean, background_mean, elongation: elong, class }
}

impl DetectorBackend for ReferenceDetector {
    fn name(&self) -> &str {
        Self::NAME
    }

    fn detect(&self, image: &ImageBuffer, config: &DetectorConfig) -> Result<Vec<Detection>, DetectorError> {
        config.validate()?;
        reference_blobs(image, config)
            .into_iter()
            .enumerate()
            .map(|(i, b)| {
                let conf = contrast_confidence(b.object_mean, b.background_mean, config.confidence_floor);
                Detection::new(i as u32, b.class, b.bbox, conf)
                    .map_err(|e| DetectorError::BackendFailure(e.to_string()))
            })
            .collect()
    }
}

/// Looks up a built-in backend by name.
pub fn backend_by_name(name: &str) -> Result<Box<dyn DetectorBackend>, DetectorError> {
    match name {
        ReferenceDetector::NAME => Ok(Box::new(ReferenceDetector)),
        other => Err(DetectorError::UnknownBackend(other.to_string())),
    }
}

/// Runs `backend` and post-processes: floor filter, clamp to the image,
/// sort by descending confidence, NMS, then renumber ids in output order.
pub fn propose_detections(
    backend: &dyn DetectorBackend,
    image: &ImageBuffer,
    config: &DetectorConfig,
) -> Result<Vec<Detection>, DetectorError> {
    config.validate()?;
    let raw = backend.detect(image, config)?;
    let mut kept = Vec::with_capacity(raw.len());
    for mut d in raw {
        if !(0.0..=1.0).contains(&d.confidence) {
            return Err(DetectorError::BackendFailure(format!("confidence {} out of range", d.confidence)));
        }
        if d.confidence < config.confidence_floor {
            continue;
        }
        match clamp_box(&d.bbox, image.width(), image.height()) {
            Ok(b) => d.bbox = b,
            Err(_) => continue,
        }
        kept.push(d);
    }
    // stable sort keeps backend order among ties
    kept.sort_by(|a, b| b.confidence.total_cmp(&a.confidence));
    let mut out = non_max_suppression(&kept, config.nms_iou);
    for (i, d) in out.iter_mut().enumerate() {
        d.id = i as u32;
    }
    Ok(out)
}

/// Detections with `confidence >= threshold`, order preserved.
pub fn filter_by_threshold(detections: &[Detection], threshold: f64) -> Result<Vec<Detection>, DetectorError> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(DetectorError::ThresholdOutOfRange(threshold));
    }
    Ok(detections.iter().filter(|d| d.confidence >= threshold).cloned().collect())
}

/// Greedy class-aware NMS over detections sorted by descending confidence.
pub fn non_max_suppression(detections: &[Detection], iou_threshold: f64) -> Vec<Detection> {
    let mut kept: Vec<Detection> = Vec::new();
    for d in detections {
        let suppressed = kept
            .iter()
            .any(|k| k.class == d.class && box_iou(&k.bbox, &d.bbox) >= iou_threshold);
        if !suppressed {
            kept.push(d.clone());
        }
    }
    kept
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::Canvas;
    use proptest::prelude::*;

    fn det(id: u32, class: DefectClass, b: (f64, f64, f64, f64), conf: f64) -> Detection {
        Detection::new(id, class, BoundingBox::new(b.0, b.1, b.2, b.3).unwrap(), conf).unwrap()
    }

    #[test]
    fn blank_image_has_no_proposals() {
        let img = ImageBuffer::filled(200, 200, 255).unwrap();
        assert!(propose_detections(&ReferenceDetector, &img, &DetectorConfig::default()).unwrap().is_empty());
    }

    #[test]
    fn single_blob_box_matches_pixel_bounds() {
        let img = Canvas::new(200, 160, 230).rect(40, 50, 90, 85, 60).into_image();
        let dets = propose_detections(&ReferenceDetector, &img, &DetectorConfig::default()).unwrap();
        assert_eq!(dets.len(), 1);

        // exhaustive scan for the dark pixel bounds
        let (mut x0, mut y0, mut x1, mut y1) = (u32::MAX, u32::MAX, 0, 0);
        for y in 0..img.height() {
            for x in 0..img.width() {
                if img.gray_at(x, y) < 128 {
                    x0 = x0.min(x);
                    y0 = y0.min(y);
                    x1 = x1.max(x + 1);
                    y1 = y1.max(y + 1);
                }
            }
        }
        let b = dets[0].bbox;
        for (got, want) in [(b.x_min, x0), (b.y_min, y0), (b.x_max, x1), (b.y_max, y1)] {
            assert!((got - want as f64).abs() <= 1.0, "{got} vs {want}");
        }
        assert_eq!(dets[0].class, DefectClass::Spalling);
    }

    #[test]
    fn stronger_blob_scores_higher() {
        let img = Canvas::new(300, 150, 230)
            .rect(30, 40, 80, 90, 40)
            .rect(180, 40, 230, 90, 170)
            .into_image();
        let dets = propose_detections(&ReferenceDetector, &img, &DetectorConfig::default()).unwrap();
        assert_eq!(dets.len(), 2);

        // contrast oracle straight from pixel statistics: blob mean vs the
        // surrounding 15 px ring
        let contrast = |x0: u32, y0: u32, x1: u32, y1: u32| {
            let (mut obj, mut no, mut bg, mut nb) = (0.0, 0.0, 0.0, 0.0);
            for y in y0.saturating_sub(15)..(y1 + 15).min(img.height()) {
                for x in x0.saturating_sub(15)..(x1 + 15).min(img.width()) {
                    let g = img.gray_at(x, y) as f64;
                    if (x0..x1).contains(&x) && (y0..y1).contains(&y) {
                        obj += g;
                        no += 1.0;
                    } else {
                        bg += g;
                        nb += 1.0;
                    }
                }
            }
            (bg / nb - obj / no) / 255.0
        };
        let strong = contrast(30, 40, 80, 90);
        let faint = contrast(180, 40, 230, 90);
        assert!(strong > faint);
        assert!(dets[0].confidence > dets[1].confidence);
        assert!(dets[0].bbox.x_min < 100.0);
        assert!((dets[0].confidence - strong).abs() < 1e-12);
        assert!((dets[1].confidence - faint).abs() < 1e-12);
    }

    #[test]
    fn thin_line_is_a_crack() {
        let img = Canvas::new(300, 100, 220).thick_line(20.0, 30.0, 260.0, 70.0, 3.0, 50).into_image();
        let dets = propose_detections(&ReferenceDetector, &img, &DetectorConfig::default()).unwrap();
        assert_eq!(dets.len(), 1);
        assert_eq!(dets[0].class, DefectClass::Cracking);
    }

    #[test]
    fn proposals_are_deterministic() {
        let img = Canvas::new(120, 120, 200).speckle(7, 300, 40).disc(60.0, 60.0, 20.0, 30).into_image();
        let cfg = DetectorConfig::default();
        let a = propose_detections(&ReferenceDetector, &img, &cfg).unwrap();
        let b = propose_detections(&ReferenceDetector, &img, &cfg).unwrap();
        assert_eq!(a, b);
        for d in &a {
            assert!(d.bbox.is_within(120, 120));
            assert!(d.confidence >= cfg.confidence_floor);
        }
        assert!(a.windows(2).all(|w| w[0].confidence >= w[1].confidence));
    }

    #[test]
    fn threshold_filter_cases() {
        let list = vec![
            det(0, DefectClass::Spalling, (0.0, 0.0, 5.0, 5.0), 0.85),
            det(1, DefectClass::Spalling, (10.0, 0.0, 15.0, 5.0), 0.45),
        ];
        let f = filter_by_threshold(&list, 0.5).unwrap();
        assert_eq!(f.len(), 1);
        assert_eq!(f[0].confidence, 0.85);
        assert_eq!(filter_by_threshold(&list, 0.0).unwrap(), list);
        assert!(filter_by_threshold(&list, 1.01).is_err());
    }

    #[test]
    fn nms_keeps_highest_of_overlapping_pair() {
        // IoU of these two is 0.8: shift 10/9 on a 10x10 box
        let a = det(0, DefectClass::Spalling, (0.0, 0.0, 10.0, 10.0), 0.9);
        let b = det(1, DefectClass::Spalling, (10.0 / 9.0, 0.0, 10.0 + 10.0 / 9.0, 10.0), 0.7);
        assert!((box_iou(&a.bbox, &b.bbox) - 0.8).abs() < 1e-12);
        assert_eq!(non_max_suppression(&[a.clone(), b], 0.5), vec![a.clone()]);
        let c = det(2, DefectClass::Spalling, (50.0, 50.0, 60.0, 60.0), 0.6);
        assert_eq!(non_max_suppression(&[a, c], 0.5).len(), 2);
    }

    /// Greedy NMS equals the lexicographically greatest (in confidence order)
    /// subset with no same-class pair at or above the IoU threshold.
    fn lexmax_independent(dets: &[Detection], thr: f64) -> Vec<usize> {
        let n = dets.len();
        let mut best: Option<Vec<bool>> = None;
        for mask in 0u32..(1 << n) {
            let chosen: Vec<bool> = (0..n).map(|i| mask & (1 << i) != 0).collect();
            let ok = (0..n).all(|i| {
                (i + 1..n).all(|j| {
                    !(chosen[i] && chosen[j])
                        || dets[i].class != dets[j].class
                        || box_iou(&dets[i].bbox, &dets[j].bbox) < thr
                })
            });
            if ok && best.as_ref().is_none_or(|b| chosen > *b) {
                best = Some(chosen);
            }
        }
        best.unwrap().iter().enumerate().filter(|(_, c)| **c).map(|(i, _)| i).collect()
    }

    #[test]
    fn nms_chain_keeps_ends() {
        // A-B and B-C overlap with IoU 1/3, A and C only touch
        let a = det(0, DefectClass::Cracking, (0.0, 0.0, 10.0, 10.0), 0.9);
        let b = det(1, DefectClass::Cracking, (5.0, 0.0, 15.0, 10.0), 0.8);
        let c = det(2, DefectClass::Cracking, (10.0, 0.0, 20.0, 10.0), 0.7);
        let all = [a.clone(), b, c.clone()];
        let kept = non_max_suppression(&all, 0.3);
        assert_eq!(kept, vec![a, c]);
        assert_eq!(lexmax_independent(&all, 0.3), vec![0, 2]);
    }

    proptest! {
        #[test]
        fn nms_matches_subset_oracle(
            boxes in prop::collection::vec((0.0f64..40.0, 0.0f64..40.0, 2.0f64..20.0, 2.0f64..20.0, 0usize..2), 1..8),
            thr in 0.1f64..0.9,
        ) {
            let mut dets: Vec<Detection> = boxes.iter().enumerate().map(|(i, &(x, y, w, h, c))| {
                let class = if c == 0 { DefectClass::Spalling } else { DefectClass::Cracking };
                det(i as u32, class, (x, y, x + w, y + h), 1.0 - i as f64 * 0.1)
            }).collect();
            dets.sort_by(|a, b| b.confidence.total_cmp(&a.confidence));
            let kept: Vec<u32> = non_max_suppression(&dets, thr).iter().map(|d| d.id).collect();
            let oracle: Vec<u32> = lexmax_independent(&dets, thr).into_iter().map(|i| dets[i].id).collect();
            prop_assert_eq!(kept, oracle);
        }

        #[test]
        fn threshold_filter_is_monotone(
            confs in prop::collection::vec(0.0f64..=1.0, 0..30),
            t1 in 0.0f64..=1.0,
            t2 in 0.0f64..=1.0,
        ) {
            let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
            let dets: Vec<Detection> = confs.iter().enumerate()
                .map(|(i, &c)| det(i as u32, DefectClass::Spalling, (0.0, 0.0, 1.0, 1.0), c)).collect();
            let loose: Vec<u32> = filter_by_threshold(&dets, lo).unwrap().iter().map(|d| d.id).collect();
            for d in filter_by_threshold(&dets, hi).unwrap() {
                prop_assert!(loose.contains(&d.id));
            }
        }
    }
}
