//! Pascal VOC 2012 annotations, augmentation with box transforms, and
//! dataset summaries.

pub mod augment;
pub mod summary;
pub mod voc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::capture::AnnotationRecord;
use crate::types::{BoundingBox, DefectClass};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DatasetError {
    #[error("malformed VOC XML: {0}")]
    MalformedXml(String),
    #[error("invalid box: {0}")]
    InvalidBox(String),
    #[error("invalid augmentation: {0}")]
    InvalidOp(String),
    #[error("every box fell outside the augmented image")]
    DegenerateResult,
}

/// A box with its label. Labels outside the defect taxonomy are kept
/// verbatim.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledBox {
    pub label: String,
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
}

impl LabeledBox {
    pub fn new(class: DefectClass, bbox: BoundingBox) -> Self {
        Self { label: class.as_str().to_string(), bbox }
    }

    pub fn class(&self) -> Option<DefectClass> {
        self.label.parse().ok()
    }
}

/// Confirmed annotations of a record as labeled boxes; hard negatives are
/// not part of a VOC export.
pub fn record_boxes(record: &AnnotationRecord) -> Vec<LabeledBox> {
    record.annotations.iter().map(|a| LabeledBox::new(a.class, a.bbox)).collect()
}
