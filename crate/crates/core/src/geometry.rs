//! Pinhole projection `w·(u, v, 1)ᵀ = K [R | t] (X, 1)ᵀ`, its inverse onto a
//! plane, planar mm-per-pixel scales and physical measurements.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::segmenter::MaskMetrics;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("point is behind the camera (depth {0})")]
    BehindCamera(f64),
    #[error("viewing ray is parallel to the plane")]
    RayParallelToPlane,
    #[error("plane lies behind the camera along this ray")]
    PlaneBehindCamera,
    #[error("{0} must be positive and finite")]
    NonPositiveInput(&'static str),
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("rotation is not orthonormal with determinant 1")]
    InvalidRotation,
    #[error("plane normal must be non-zero")]
    InvalidPlane,
    #[error("mask is empty")]
    EmptyMask,
}

const ROTATION_TOL: f64 = 1e-9;

/// Focal lengths and principal point in pixels; `skew` is the K₁₂ entry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    #[serde(default)]
    pub skew: f64,
    pub cx: f64,
    pub cy: f64,
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, skew: f64, cx: f64, cy: f64) -> Result<Self, GeometryError> {
        let k = Self { fx, fy, skew, cx, cy };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if !(self.fx > 0.0 && self.fy > 0.0 && self.fx.is_finite() && self.fy.is_finite()) {
            return Err(GeometryError::InvalidIntrinsics(format!("fx={} fy={}", self.fx, self.fy)));
        }
        if ![self.skew, self.cx, self.cy].iter().all(|v| v.is_finite()) {
            return Err(GeometryError::InvalidIntrinsics("non-finite entry".into()));
        }
        Ok(())
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, self.skew, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    /// Closed-form inverse of the upper-triangular K.
    pub fn inverse_matrix(&self) -> Matrix3<f64> {
        let (a, s, u0, b, v0) = (self.fx, self.skew, self.cx, self.fy, self.cy);
        Matrix3::new(
            1.0 / a,
            -s / (a * b),
            (s * v0 - u0 * b) / (a * b),
            0.0,
            1.0 / b,
            -v0 / b,
            0.0,
            0.0,
            1.0,
        )
    }
}

/// World-to-camera rotation and translation (mm).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Extrinsics {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl Extrinsics {
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self, GeometryError> {
        let ortho = (rotation.transpose() * rotation - Matrix3::identity()).abs().max();
        let det = rotation.determinant();
        if !(ortho <= ROTATION_TOL && (det - 1.0).abs() <= ROTATION_TOL) {
            return Err(GeometryError::InvalidRotation);
        }
        if !translation.iter().all(|v| v.is_finite()) {
            return Err(GeometryError::NonPositiveInput("translation"));
        }
        Ok(Self { rotation, translation })
    }

    pub fn identity() -> Self {
        Self { rotation: Matrix3::identity(), translation: Vector3::zeros() }
    }

    /// Row-major rotation and translation as plain arrays.
    pub fn from_arrays(r: [f64; 9], t: [f64; 3]) -> Result<Self, GeometryError> {
        Self::new(Matrix3::from_row_slice(&r), Vector3::from(t))
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    /// Camera center in world coordinates, `-Rᵀt`.
    pub fn camera_center(&self) -> Vector3<f64> {
        -(self.rotation.transpose() * self.translation)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraModel {
    pub intrinsics: Intrinsics,
    pub extrinsics: Extrinsics,
}

/// Plane through `point` with normal `normal`, world mm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Plane {
    pub point: [f64; 3],
    pub normal: [f64; 3],
}

impl Plane {
    pub fn new(point: [f64; 3], normal: [f64; 3]) -> Result<Self, GeometryError> {
        let n = Vector3::from(normal);
        if !(n.norm() > 0.0 && n.iter().all(|v| v.is_finite()) && point.iter().all(|v| v.is_finite())) {
            return Err(GeometryError::InvalidPlane);
        }
        Ok(Self { point, normal })
    }
}

impl CameraModel {
    pub fn new(intrinsics: Intrinsics, extrinsics: Extrinsics) -> Result<Self, GeometryError> {
        intrinsics.validate()?;
        Ok(Self { intrinsics, extrinsics })
    }

    /// Image coordinates of world point `x` (mm).
    pub fn project(&self, x: [f64; 3]) -> Result<(f64, f64), GeometryError> {
        let cam = self.extrinsics.rotation * Vector3::from(x) + self.extrinsics.translation;
        let h = self.intrinsics.matrix() * cam;
        let w = h.z;
        if w <= 0.0 {
            return Err(GeometryError::BehindCamera(w));
        }
        Ok((h.x / w, h.y / w))
    }

    /// World-frame direction of the ray through pixel `(u, v)`.
    pub fn ray_direction(&self, u: f64, v: f64) -> Vector3<f64> {
        let cam = self.intrinsics.inverse_matrix() * Vector3::new(u, v, 1.0);
        self.extrinsics.rotation.transpose() * cam
    }

    /// Intersects the ray through `(u, v)` with `plane`.
    pub fn back_project_to_plane(&self, pixel: (f64, f64), plane: &Plane) -> Result<[f64; 3], GeometryError> {
        let origin = self.extrinsics.camera_center();
        let dir = self.ray_direction(pixel.0, pixel.1);
        let n = Vector3::from(plane.normal);
        let denom = dir.normalize().dot(&n.normalize());
        if denom.abs() <= 1e-12 {
            return Err(GeometryError::RayParallelToPlane);
        }
        let s = n.dot(&(Vector3::from(plane.point) - origin)) / n.dot(&dir);
        if s <= 0.0 {
            return Err(GeometryError::PlaneBehindCamera);
        }
        let p = origin + dir * s;
        Ok([p.x, p.y, p.z])
    }

    /// Local mm-per-pixel on `plane` around pixel `(u, v)`: mean world length
    /// of a one-pixel step along u and along v.
    pub fn local_scale(&self, pixel: (f64, f64), plane: &Plane) -> Result<PlanarScale, GeometryError> {
        let (u, v) = pixel;
        let step = |a: (f64, f64), b: (f64, f64)| -> Result<f64, GeometryError> {
            let pa = Vector3::from(self.back_project_to_plane(a, plane)?);
            let pb = Vector3::from(self.back_project_to_plane(b, plane)?);
            Ok((pa - pb).norm())
        };
        let du = step((u - 0.5, v), (u + 0.5, v))?;
        let dv = step((u, v - 0.5), (u, v + 0.5))?;
        PlanarScale::new((du + dv) / 2.0, ScaleSource::PinholeDistance)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScaleSource {
    ReferenceObject,
    PinholeDistance,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlanarScale {
    pub mm_per_pixel: f64,
    pub source: ScaleSource,
}

impl PlanarScale {
    pub fn new(mm_per_pixel: f64, source: ScaleSource) -> Result<Self, GeometryError> {
        if !(mm_per_pixel > 0.0 && mm_per_pixel.is_finite()) {
            return Err(GeometryError::NonPositiveInput("mm_per_pixel"));
        }
        Ok(Self { mm_per_pixel, source })
    }
}

/// Scale by proportioning a known length to its span in pixels.
pub fn scale_from_reference(reference_length_mm: f64, reference_span_px: f64) -> Result<PlanarScale, GeometryError> {
    if !(reference_length_mm > 0.0 && reference_length_mm.is_finite()) {
        return Err(GeometryError::NonPositiveInput("reference_length_mm"));
    }
    if !(reference_span_px > 0.0 && reference_span_px.is_finite()) {
        return Err(GeometryError::NonPositiveInput("reference_span_px"));
    }
    PlanarScale::new(reference_length_mm / reference_span_px, ScaleSource::ReferenceObject)
}

/// Fronto-parallel scale at a given surface distance: `distance / fx`.
pub fn scale_from_pinhole(camera: &CameraModel, surface_distance_mm: f64) -> Result<PlanarScale, GeometryError> {
    if !(surface_distance_mm > 0.0 && surface_distance_mm.is_finite()) {
        return Err(GeometryError::NonPositiveInput("surface_distance_mm"));
    }
    PlanarScale::new(surface_distance_mm / camera.intrinsics.fx, ScaleSource::PinholeDistance)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeasurementKind {
    Crack,
    Spall,
}

/// Physical size of a defect. Cracks carry length and width; area defects
/// carry area and equivalent diameter. Depth and rebar come from the
/// inspector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    pub kind: MeasurementKind,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub length_mm: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub max_width_mm: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub area_mm2: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub equivalent_diameter_mm: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub depth_mm: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub exposed_rebar: Option<bool>,
}

pub fn equivalent_diameter(area_mm2: f64) -> f64 {
    2.0 * (area_mm2 / std::f64::consts::PI).sqrt()
}

pub fn measure_crack(metrics: &MaskMetrics, scale: &PlanarScale) -> Result<Measurement, GeometryError> {
    if metrics.area <= 0.0 {
        return Err(GeometryError::EmptyMask);
    }
    Ok(Measurement {
        kind: MeasurementKind::Crack,
        length_mm: Some(metrics.skeleton_length * scale.mm_per_pixel),
        max_width_mm: Some(metrics.max_thickness * scale.mm_per_pixel),
        area_mm2: None,
        equivalent_diameter_mm: None,
        depth_mm: None,
        exposed_rebar: None,
    })
}

pub fn measure_spall(metrics: &MaskMetrics, scale: &PlanarScale) -> Result<Measurement, GeometryError> {
    if metrics.area <= 0.0 {
        return Err(GeometryError::EmptyMask);
    }
    let area_mm2 = metrics.area * scale.mm_per_pixel * scale.mm_per_pixel;
    Ok(Measurement {
        kind: MeasurementKind::Spall,
        length_mm: None,
        max_width_mm: None,
        area_mm2: Some(area_mm2),
        equivalent_diameter_mm: Some(equivalent_diameter(area_mm2)),
        depth_mm: None,
        exposed_rebar: None,
    })
}

/// On-disk calibration: either a camera (with the surface plane or a
/// fronto-parallel distance) or a direct scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Calibration {
    Scale {
        mm_per_pixel: f64,
    },
    Camera {
        fx: f64,
        fy: f64,
        #[serde(default)]
        skew: f64,
        cx: f64,
        cy: f64,
        #[serde(rename = "R")]
        r: [f64; 9],
        t: [f64; 3],
        #[serde(default, skip_serializing_if = "Option::is_none")]
        plane: Option<Plane>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        surface_distance_mm: Option<f64>,
    },
}

/// Validated calibration ready for measurement.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ResolvedCalibration {
    Scale(PlanarScale),
    Camera { camera: CameraModel, plane: Plane },
}

impl Calibration {
    pub fn resolve(&self) -> Result<ResolvedCalibration, GeometryError> {
        match self {
            Calibration::Scale { mm_per_pixel } => {
                Ok(ResolvedCalibration::Scale(PlanarScale::new(*mm_per_pixel, ScaleSource::ReferenceObject)?))
            }
            Calibration::Camera { fx, fy, skew, cx, cy, r, t, plane, surface_distance_mm } => {
                let camera = CameraModel::new(
                    Intrinsics::new(*fx, *fy, *skew, *cx, *cy)?,
                    Extrinsics::from_arrays(*r, *t)?,
                )?;
                match (plane, surface_distance_mm) {
                    (Some(p), _) => Ok(ResolvedCalibration::Camera { camera, plane: Plane::new(p.point, p.normal)? }),
                    (None, Some(d)) => Ok(ResolvedCalibration::Scale(scale_from_pinhole(&camera, *d)?)),
                    (None, None) => Err(GeometryError::NonPositiveInput("plane or surface_distance_mm")),
                }
            }
        }
    }
}

impl ResolvedCalibration {
    /// Scale at image location `(u, v)`.
    pub fn scale_at(&self, pixel: (f64, f64)) -> Result<PlanarScale, GeometryError> {
        match self {
            ResolvedCalibration::Scale(s) => Ok(*s),
            ResolvedCalibration::Camera { camera, plane } => camera.local_scale(pixel, plane),
        }
    }
}
