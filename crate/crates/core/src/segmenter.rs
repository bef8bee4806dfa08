//! Attention-guided segmentation: the segmenter only ever sees the crop
//! inside a confirmed box, so nothing outside the box can be labeled.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::imgproc::{self, Grid};
use crate::mask::{BinaryMask, MaskEdit, MaskError, ProbabilityMask};
use crate::types::{BoundingBox, ImageBuffer, TypeError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SegmenterError {
    #[error("segmenter backend failed: {0}")]
    BackendFailure(String),
    #[error("box is not inside the image")]
    BoxOutsideImage,
    #[error("mask is empty")]
    EmptyMask,
    #[error("unknown segmenter backend '{0}'")]
    UnknownBackend(String),
    #[error(transparent)]
    Mask(#[from] MaskError),
    #[error(transparent)]
    Type(#[from] TypeError),
}

/// Foreground probabilities for a crop, row-major, one per crop pixel.
pub trait SegmenterBackend: Send + Sync {
    fn name(&self) -> &str;

    fn segment(&self, crop: &ImageBuffer) -> Result<Vec<f64>, SegmenterError>;
}

/// Otsu cut on the crop histogram, softened by a logistic over the signed
/// intensity distance to the cut. Darker than the cut means foreground.
#[derive(Debug, Clone, Copy)]
pub struct ReferenceSegmenter {
    /// Intensity levels per logistic unit.
    pub scale: f64,
}

impl Default for ReferenceSegmenter {
    fn default() -> Self {
        Self { scale: 10.0 }
    }
}

impl ReferenceSegmenter {
    pub const NAME: &'static str = "reference";
}

impl SegmenterBackend for ReferenceSegmenter {
    fn name(&self) -> &str {
        Self::NAME
    }

    fn segment(&self, crop: &ImageBuffer) -> Result<Vec<f64>, SegmenterError> {
        let gray = imgproc::gray_plane(crop);
        // the cut sits half a level above the last background-side level
        let cut = match imgproc::otsu_threshold(&gray) {
            Some(t) => t as f64 + 0.5,
            // nothing separable: put the cut just below the darkest level
            None => *gray.iter().min().expect("crop is non-empty") as f64 - 0.5,
        };
        Ok(gray
            .iter()
            .map(|&g| 1.0 / (1.0 + (-(cut - g as f64) / self.scale).exp()))
            .collect())
    }
}

pub fn backend_by_name(name: &str) -> Result<Box<dyn SegmenterBackend>, SegmenterError> {
    match name {
        ReferenceSegmenter::NAME => Ok(Box::new(ReferenceSegmenter::default())),
        other => Err(SegmenterError::UnknownBackend(other.to_string())),
    }
}

/// Segments only the pixels covered by `bbox`.
pub fn segment_region(
    image: &ImageBuffer,
    bbox: &BoundingBox,
    backend: &dyn SegmenterBackend,
) -> Result<ProbabilityMask, SegmenterError> {
    bbox.validate()?;
    if !bbox.is_within(image.width(), image.height()) {
        return Err(SegmenterError::BoxOutsideImage);
    }
    let crop = image.crop(bbox)?;
    let probs = backend.segment(&crop)?;
    if probs.len() != crop.width() as usize * crop.height() as usize {
        return Err(SegmenterError::BackendFailure(format!(
            "backend returned {} probabilities for a {}x{} crop",
            probs.len(),
            crop.width(),
            crop.height()
        )));
    }
    Ok(ProbabilityMask::new(*bbox, probs)?)
}

/// Runs the backend over the whole image, without attention guidance.
pub fn segment_whole_image(image: &ImageBuffer, backend: &dyn SegmenterBackend) -> Result<ProbabilityMask, SegmenterError> {
    let frame = BoundingBox::new(0.0, 0.0, image.width() as f64, image.height() as f64)?;
    segment_region(image, &frame, backend)
}

/// Foreground is every pixel with probability `>= threshold`.
pub fn binarize(mask: &ProbabilityMask, threshold: f64) -> Result<BinaryMask, SegmenterError> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(MaskError::ThresholdOutOfRange(threshold).into());
    }
    let bits = mask.probabilities.iter().map(|&p| p >= threshold).collect();
    Ok(BinaryMask::from_bits(mask.bbox, bits)?)
}

/// Binarizes, then replays `edits` in order. The result carries the edits
/// as its log.
pub fn binarize_with_edits(
    mask: &ProbabilityMask,
    threshold: f64,
    edits: &[MaskEdit],
) -> Result<BinaryMask, SegmenterError> {
    let mut out = binarize(mask, threshold)?;
    for edit in edits {
        out.apply(edit.clone())?;
    }
    Ok(out)
}

/// Adds or removes a box-local region; fails with `OutsideBox` when the
/// region misses the box.
pub fn apply_edit(mask: &BinaryMask, edit: MaskEdit) -> Result<BinaryMask, SegmenterError> {
    let mut out = mask.clone();
    out.apply(edit)?;
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaskMetrics {
    pub area: f64,
    pub skeleton_length: f64,
    pub max_thickness: f64,
    pub component_count: usize,
}

fn mask_grid(mask: &BinaryMask) -> Grid {
    Grid::from_cells(mask.width as usize, mask.height as usize, mask.bits().to_vec())
}

/// Skeleton with at least one pixel per input component; thinning can
/// erase tiny blobs such as a 2x2 square.
fn robust_skeleton(grid: &Grid, dt: &[f64]) -> Grid {
    let mut skel = imgproc::thin(grid);
    for comp in imgproc::connected_components(grid) {
        if comp.pixels.iter().any(|&(x, y)| skel.get(x, y)) {
            continue;
        }
        let &(x, y) = comp
            .pixels
            .iter()
            .max_by(|a, b| dt[a.1 * grid.width + a.0].total_cmp(&dt[b.1 * grid.width + b.0]).then(b.cmp(a)))
            .expect("components are non-empty");
        skel.set(x, y, true);
    }
    skel
}

/// Length lost at a skeleton end: keep stepping away from the end's only
/// neighbor while still on foreground.
fn end_extension(grid: &Grid, skel: &Grid, x: usize, y: usize) -> f64 {
    let (xi, yi) = (x as isize, y as isize);
    let Some(&(dx, dy)) = imgproc::neighbors_8()
        .iter()
        .find(|(dx, dy)| skel.get_signed(xi + dx, yi + dy))
    else {
        return 0.0;
    };
    let (sx, sy) = (-dx, -dy);
    let step = if sx != 0 && sy != 0 { std::f64::consts::SQRT_2 } else { 1.0 };
    let mut k = 0;
    while grid.get_signed(xi + sx * (k + 1), yi + sy * (k + 1)) {
        k += 1;
    }
    k as f64 * step
}

/// True when the offset runs within ~40° of one of the skeleton directions,
/// i.e. it continues the ridge rather than crossing it.
fn along_any(dx: isize, dy: isize, tangents: &[(isize, isize)]) -> bool {
    tangents.iter().any(|&(tx, ty)| {
        let dot = (dx * tx + dy * ty) as f64;
        let norm = (((dx * dx + dy * dy) * (tx * tx + ty * ty)) as f64).sqrt();
        (dot / norm).abs() > 0.75
    })
}

/// Pixel metrics of a binary mask.
///
/// Skeleton length is the thinned path length extended at each free end to
/// the mask boundary. Thickness at a skeleton pixel with distance value `d`
/// is `2d - 1`, plus one when a non-skeleton neighbor shares the same
/// distance (an even-width ridge straddling two pixel rows).
pub fn mask_metrics(mask: &BinaryMask) -> Result<MaskMetrics, SegmenterError> {
    let grid = mask_grid(mask);
    let area = grid.count();
    if area == 0 {
        return Err(SegmenterError::EmptyMask);
    }
    let dt = imgproc::distance_transform(&grid);
    let skel = robust_skeleton(&grid, &dt);

    let mut length = imgproc::skeleton_path_length(&skel);
    let mut thickness: f64 = 0.0;
    for y in 0..skel.height {
        for x in 0..skel.width {
            if !skel.get(x, y) {
                continue;
            }
            if imgproc::neighbor_count(&skel, x, y) == 1 {
                length += end_extension(&grid, &skel, x, y);
            }
            let d = dt[y * grid.width + x];
            let tangents: Vec<(isize, isize)> = imgproc::neighbors_8()
                .iter()
                .copied()
                .filter(|(dx, dy)| skel.get_signed(x as isize + dx, y as isize + dy))
                .collect();
            let plateau = imgproc::neighbors_8().iter().any(|&(dx, dy)| {
                let (nx, ny) = (x as isize + dx, y as isize + dy);
                grid.get_signed(nx, ny)
                    && !skel.get_signed(nx, ny)
                    && !along_any(dx, dy, &tangents)
                    && (dt[ny as usize * grid.width + nx as usize] - d).abs() < 1e-9
            });
            thickness = thickness.max(2.0 * d - 1.0 + if plateau { 1.0 } else { 0.0 });
        }
    }
    let limit = mask.width.min(mask.height) as f64;
    Ok(MaskMetrics {
        area: area as f64,
        skeleton_length: length,
        max_thickness: thickness.min(limit),
        component_count: imgproc::connected_components(&grid).len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mask::{EditOp, EditRegion};
    use crate::synth::Canvas;
    use proptest::prelude::*;

    fn bx(x0: f64, y0: f64, x1: f64, y1: f64) -> BoundingBox {
        BoundingBox::new(x0, y0, x1, y1).unwrap()
    }

    fn mask_from(w: u32, h: u32, f: impl Fn(u32, u32) -> bool) -> BinaryMask {
        let bits = (0..h).flat_map(|y| (0..w).map(move |x| (x, y))).map(|(x, y)| f(x, y)).collect();
        BinaryMask::from_bits(bx(0.0, 0.0, w as f64, h as f64), bits).unwrap()
    }

    /// Otsu straight from pixel values: maximize between-class variance.
    fn otsu_oracle(gray: &[u8]) -> Option<u8> {
        let mut best: Option<(u8, f64)> = None;
        for t in 0..=254u8 {
            let c0: Vec<f64> = gray.iter().filter(|g| **g <= t).map(|g| *g as f64).collect();
            let c1: Vec<f64> = gray.iter().filter(|g| **g > t).map(|g| *g as f64).collect();
            if c0.is_empty() || c1.is_empty() {
                continue;
            }
            let m0 = c0.iter().sum::<f64>() / c0.len() as f64;
            let m1 = c1.iter().sum::<f64>() / c1.len() as f64;
            let v = c0.len() as f64 * c1.len() as f64 * (m0 - m1).powi(2);
            if best.is_none_or(|(_, b)| v > b * (1.0 + 1e-12)) {
                best = Some((t, v));
            }
        }
        best.map(|(t, _)| t)
    }

    #[test]
    fn dark_rectangle_is_foreground() {
        let img = Canvas::new(100, 100, 240).rect(30, 40, 60, 55, 50).into_image();
        let b = bx(20.0, 30.0, 70.0, 65.0);
        let pm = segment_region(&img, &b, &ReferenceSegmenter::default()).unwrap();
        assert_eq!((pm.width, pm.height), (50, 35));
        let crop = img.crop(&b).unwrap();
        let t = otsu_oracle(crop.data()).unwrap();
        for y in 0..35 {
            for x in 0..50 {
                let on_rect = (10..40).contains(&x) && (10..25).contains(&y);
                assert_eq!(crop.gray_at(x, y) <= t, on_rect);
                assert_eq!(pm.get(x, y) >= 0.5, on_rect, "pixel {x},{y}");
            }
        }
    }

    #[test]
    fn uniform_crop_is_background() {
        let img = ImageBuffer::filled(50, 50, 128).unwrap();
        let pm = segment_region(&img, &bx(5.0, 5.0, 25.0, 25.0), &ReferenceSegmenter::default()).unwrap();
        let p0 = pm.probabilities[0];
        assert!(p0 < 0.5);
        assert!(pm.probabilities.iter().all(|&p| p == p0));
    }

    #[test]
    fn outside_pixels_do_not_matter() {
        let clean = Canvas::new(120, 120, 235).rect(40, 40, 70, 60, 40).into_image();
        let noisy = Canvas::new(120, 120, 235)
            .speckle_outside(11, 600, 10, (30, 30, 80, 70))
            .rect(40, 40, 70, 60, 40)
            .into_image();
        let b = bx(30.0, 30.0, 80.0, 70.0);
        let seg = ReferenceSegmenter::default();
        assert_eq!(segment_region(&clean, &b, &seg).unwrap(), segment_region(&noisy, &b, &seg).unwrap());
    }

    #[test]
    fn segment_region_rejects_out_of_image_box() {
        let img = ImageBuffer::filled(10, 10, 0).unwrap();
        let r = segment_region(&img, &bx(5.0, 5.0, 12.0, 8.0), &ReferenceSegmenter::default());
        assert_eq!(r, Err(SegmenterError::BoxOutsideImage));
    }

    #[test]
    fn binarize_thresholds() {
        let pm = ProbabilityMask::new(bx(0.0, 0.0, 3.0, 1.0), vec![0.0, 0.4, 1.0]).unwrap();
        assert_eq!(binarize(&pm, 0.0).unwrap().area(), 3);
        assert_eq!(binarize(&pm, 1.0).unwrap().bits(), &[false, false, true]);
        assert!(binarize(&pm, 1.0 + 1e-9).is_err());
        assert!(binarize(&pm, -0.1).is_err());
    }

    #[test]
    fn edit_then_rebinarize_keeps_edits() {
        let pm = ProbabilityMask::new(bx(0.0, 0.0, 4.0, 4.0), vec![0.2; 16]).unwrap();
        let edit = MaskEdit { op: EditOp::Add, region: EditRegion::Rect { x_min: 0.0, y_min: 0.0, x_max: 2.0, y_max: 2.0 } };
        let m = binarize_with_edits(&pm, 0.5, std::slice::from_ref(&edit)).unwrap();
        assert_eq!(m.area(), 4);
        assert_eq!(m.edit_log, vec![edit.clone()]);
        assert_eq!(apply_edit(&binarize(&pm, 0.5).unwrap(), edit).unwrap(), m);
    }

    #[test]
    fn metrics_of_horizontal_bar() {
        let m = mask_from(110, 12, |x, y| (5..105).contains(&x) && (3..9).contains(&y));
        let mm = mask_metrics(&m).unwrap();
        assert_eq!(mm.area, 600.0);
        assert!((mm.skeleton_length - 100.0).abs() <= 2.0, "{}", mm.skeleton_length);
        assert!((mm.max_thickness - 6.0).abs() <= 1.0, "{}", mm.max_thickness);
        assert_eq!(mm.component_count, 1);
    }

    #[test]
    fn bar_thickness_matches_distance_oracle() {
        // brute-force distance: for the center rows of an even bar, the
        // nearest background center is exactly half the width away
        for t in [2u32, 3, 4, 5, 8, 16] {
            let m = mask_from(80, t + 4, |x, y| (5..75).contains(&x) && (2..2 + t).contains(&y));
            let mm = mask_metrics(&m).unwrap();
            let mut best = 0.0f64;
            for y in 2..2 + t {
                let mut nearest = f64::INFINITY;
                for by in 0..t + 4 {
                    if !(2..2 + t).contains(&by) {
                        nearest = nearest.min((by as f64 - y as f64).abs());
                    }
                }
                best = best.max(nearest);
            }
            let even = t % 2 == 0;
            let oracle = 2.0 * best - 1.0 + if even { 1.0 } else { 0.0 };
            assert_eq!(oracle, t as f64);
            assert_eq!(mm.max_thickness, oracle, "thickness {t}");
        }
    }

    #[test]
    fn metrics_of_single_pixel() {
        let m = mask_from(5, 5, |x, y| x == 2 && y == 2);
        let mm = mask_metrics(&m).unwrap();
        assert_eq!((mm.area, mm.skeleton_length, mm.max_thickness), (1.0, 1.0, 1.0));
    }

    #[test]
    fn metrics_of_l_shape() {
        let m = mask_from(60, 60, |x, y| ((2..6).contains(&x) && (2..52).contains(&y)) || ((2..52).contains(&x) && (48..52).contains(&y)));
        let mm = mask_metrics(&m).unwrap();
        assert!((mm.skeleton_length - 100.0).abs() <= 4.0, "{}", mm.skeleton_length);
        // the inner corner widens the inscribed circle a little
        assert!((4.0..=5.0).contains(&mm.max_thickness), "{}", mm.max_thickness);
    }

    #[test]
    fn tiny_blobs_keep_a_skeleton() {
        let m = mask_from(6, 6, |x, y| (2..4).contains(&x) && (2..4).contains(&y));
        let mm = mask_metrics(&m).unwrap();
        assert_eq!(mm.skeleton_length, 1.0);
        assert_eq!(mm.max_thickness, 2.0);
    }

    #[test]
    fn empty_mask_has_no_metrics() {
        let m = mask_from(5, 5, |_, _| false);
        assert_eq!(mask_metrics(&m), Err(SegmenterError::EmptyMask));
    }

    proptest! {
        #[test]
        fn binarize_is_monotone(probs in prop::collection::vec(0.0f64..=1.0, 64), t1 in 0.0f64..=1.0, t2 in 0.0f64..=1.0) {
            let pm = ProbabilityMask::new(bx(0.0, 0.0, 8.0, 8.0), probs.clone()).unwrap();
            let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
            let loose = binarize(&pm, lo).unwrap();
            let tight = binarize(&pm, hi).unwrap();
            for (i, &p) in probs.iter().enumerate() {
                // per-pixel oracle
                prop_assert_eq!(tight.bits()[i], p >= hi);
                prop_assert!(!tight.bits()[i] || loose.bits()[i]);
            }
        }

        #[test]
        fn metrics_invariant_under_translation(dx in 0.0f64..50.0, dy in 0.0f64..50.0, seed in 0u64..1000) {
            let img = Canvas::new(40, 30, 255).thick_line(5.0, 5.0, 35.0, 5.0 + (seed % 20) as f64, 3.0, 0).into_image();
            let bits: Vec<bool> = img.data().iter().map(|&g| g < 128).collect();
            let a = BinaryMask::from_bits(bx(0.0, 0.0, 40.0, 30.0), bits.clone()).unwrap();
            let b = BinaryMask::from_bits(bx(dx.floor(), dy.floor(), dx.floor() + 40.0, dy.floor() + 30.0), bits).unwrap();
            prop_assert_eq!(mask_metrics(&a).unwrap(), mask_metrics(&b).unwrap());
        }

        #[test]
        fn metric_invariants(w in 1u32..30, h in 1u32..30, seed in any::<u64>()) {
            let m = mask_from(w, h, |x, y| (seed.rotate_left((x * 7 + y * 13) % 64) & 3) != 0);
            if let Ok(mm) = mask_metrics(&m) {
                prop_assert!(mm.area > 0.0 && mm.skeleton_length > 0.0);
                prop_assert!(mm.max_thickness >= 1.0 && mm.max_thickness <= w.min(h) as f64);
                prop_assert!(mm.component_count >= 1);
            }
        }
    }
}
