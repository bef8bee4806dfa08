//! Table 3 severity bands and condition states with maintenance actions.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Measurement, MeasurementKind, PlanarScale};
use crate::types::{ConditionLevel, ConditionState, DefectClass, Detection, DetectionId, SeverityBand, MM_PER_FOOT};

pub const GUIDELINE: &str = "AASHTO";
pub const NOT_GRADED: &str = "not graded";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AssessmentError {
    #[error("{0} must be positive and finite")]
    NonPositiveInput(&'static str),
    #[error("crack spacing needs at least 2 cracks, got {0}")]
    InsufficientCracks(usize),
    #[error("invalid thresholds: {0}")]
    InvalidThresholds(String),
    #[error("{0} requires a measurement")]
    MissingMeasurement(DefectClass),
}

/// Table 3 limits. Feet are authoritative for crack density.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AssessmentThresholds {
    pub crack_minor_max_mm: f64,
    pub crack_moderate_max_mm: f64,
    pub spall_depth_mm: f64,
    pub spall_diameter_mm: f64,
    pub density_minor_min_ft: f64,
    pub density_severe_max_ft: f64,
}

impl Default for AssessmentThresholds {
    fn default() -> Self {
        Self {
            crack_minor_max_mm: 1.6,
            crack_moderate_max_mm: 3.2,
            spall_depth_mm: 25.0,
            // 6 in; the literal avoids 6.0 * 25.4 rounding below 152.4
            spall_diameter_mm: 152.4,
            density_minor_min_ft: 3.0,
            density_severe_max_ft: 1.0,
        }
    }
}

impl AssessmentThresholds {
    pub fn validate(&self) -> Result<(), AssessmentError> {
        let all = [
            self.crack_minor_max_mm,
            self.crack_moderate_max_mm,
            self.spall_depth_mm,
            self.spall_diameter_mm,
            self.density_minor_min_ft,
            self.density_severe_max_ft,
        ];
        if !all.iter().all(|v| *v > 0.0 && v.is_finite()) {
            return Err(AssessmentError::InvalidThresholds("all limits must be positive".into()));
        }
        if self.crack_minor_max_mm >= self.crack_moderate_max_mm {
            return Err(AssessmentError::InvalidThresholds("crack minor bound must be below moderate".into()));
        }
        if self.density_severe_max_ft >= self.density_minor_min_ft {
            return Err(AssessmentError::InvalidThresholds("density severe bound must be below minor".into()));
        }
        Ok(())
    }
}

fn positive(v: f64, what: &'static str) -> Result<(), AssessmentError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(AssessmentError::NonPositiveInput(what))
    }
}

pub fn grade_crack(max_width_mm: f64, t: &AssessmentThresholds) -> Result<SeverityBand, AssessmentError> {
    positive(max_width_mm, "crack width")?;
    Ok(if max_width_mm < t.crack_minor_max_mm {
        SeverityBand::HairlineMinor
    } else if max_width_mm <= t.crack_moderate_max_mm {
        SeverityBand::NarrowModerate
    } else {
        SeverityBand::MediumSevere
    })
}

/// Spalls have no hairline band in Table 3.
pub fn grade_spall(
    diameter_mm: f64,
    depth_mm: Option<f64>,
    exposed_rebar: bool,
    t: &AssessmentThresholds,
) -> Result<SeverityBand, AssessmentError> {
    positive(diameter_mm, "spall diameter")?;
    if let Some(d) = depth_mm {
        positive(d, "spall depth")?;
    }
    let deep = depth_mm.is_some_and(|d| d > t.spall_depth_mm);
    Ok(if exposed_rebar || deep || diameter_mm > t.spall_diameter_mm {
        SeverityBand::MediumSevere
    } else {
        SeverityBand::NarrowModerate
    })
}

pub fn grade_crack_density(mean_spacing_ft: f64, t: &AssessmentThresholds) -> Result<SeverityBand, AssessmentError> {
    positive(mean_spacing_ft, "crack spacing")?;
    Ok(if mean_spacing_ft > t.density_minor_min_ft {
        SeverityBand::HairlineMinor
    } else if mean_spacing_ft >= t.density_severe_max_ft {
        SeverityBand::NarrowModerate
    } else {
        SeverityBand::MediumSevere
    })
}

pub fn grade_efflorescence(heavy_buildup: bool, rust_staining: bool) -> SeverityBand {
    if heavy_buildup && rust_staining {
        SeverityBand::MediumSevere
    } else {
        SeverityBand::NarrowModerate
    }
}

pub fn to_condition_state(band: SeverityBand) -> ConditionState {
    ConditionState::of(match band {
        SeverityBand::None => ConditionLevel::CS1,
        SeverityBand::HairlineMinor => ConditionLevel::CS2,
        SeverityBand::NarrowModerate => ConditionLevel::CS3,
        SeverityBand::MediumSevere => ConditionLevel::CS4,
    })
}

/// Mean nearest-neighbor distance between box centers, in feet.
pub fn crack_spacing_ft(cracks: &[Detection], scale: &PlanarScale) -> Result<f64, AssessmentError> {
    if cracks.len() < 2 {
        return Err(AssessmentError::InsufficientCracks(cracks.len()));
    }
    let centers: Vec<(f64, f64)> = cracks.iter().map(|d| d.bbox.center()).collect();
    let total: f64 = centers
        .iter()
        .enumerate()
        .map(|(i, a)| {
            centers
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(_, b)| (a.0 - b.0).hypot(a.1 - b.1))
                .fold(f64::INFINITY, f64::min)
        })
        .sum();
    let mean_px = total / centers.len() as f64;
    Ok(mean_px * scale.mm_per_pixel / MM_PER_FOOT)
}

/// Inspector-supplied facts that vision cannot measure.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HumanAttributes {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub depth_mm: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub exposed_rebar: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub heavy_buildup: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rust_staining: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DefectAssessment {
    pub detection_id: DetectionId,
    pub class: DefectClass,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub measurement: Option<Measurement>,
    pub band: SeverityBand,
    pub condition: ConditionState,
    pub guideline: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub note: Option<String>,
}

/// Grades one defect. Cracks and spalls need a measurement; efflorescence
/// uses the flags only; the remaining classes pass through ungraded.
pub fn assess_defect(
    detection_id: DetectionId,
    class: DefectClass,
    measurement: Option<Measurement>,
    attrs: &HumanAttributes,
    t: &AssessmentThresholds,
) -> Result<DefectAssessment, AssessmentError> {
    let mut measurement = measurement;
    if let Some(m) = measurement.as_mut() {
        if m.kind == MeasurementKind::Spall {
            m.depth_mm = attrs.depth_mm;
            m.exposed_rebar = attrs.exposed_rebar;
        }
    }
    let (band, note) = match class {
        DefectClass::Cracking => {
            let m = measurement.as_ref().ok_or(AssessmentError::MissingMeasurement(class))?;
            let w = m.max_width_mm.ok_or(AssessmentError::MissingMeasurement(class))?;
            (grade_crack(w, t)?, None)
        }
        DefectClass::Spalling => {
            let m = measurement.as_ref().ok_or(AssessmentError::MissingMeasurement(class))?;
            let d = m.equivalent_diameter_mm.ok_or(AssessmentError::MissingMeasurement(class))?;
            (grade_spall(d, attrs.depth_mm, attrs.exposed_rebar.unwrap_or(false), t)?, None)
        }
        DefectClass::Efflorescence => (
            grade_efflorescence(attrs.heavy_buildup.unwrap_or(false), attrs.rust_staining.unwrap_or(false)),
            None,
        ),
        DefectClass::Rusting | DefectClass::JointDamage | DefectClass::Delamination => {
            (SeverityBand::None, Some(NOT_GRADED.to_string()))
        }
    };
    Ok(DefectAssessment {
        detection_id,
        class,
        measurement,
        band,
        condition: to_condition_state(band),
        guideline: GUIDELINE.to_string(),
        note,
    })
}
