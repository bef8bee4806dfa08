//! Append-only capture of human-verified annotations (`annotations.jsonl`)
//! and replay of stored masks.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::assessment::{DefectAssessment, HumanAttributes};
use crate::mask::{BinaryMask, MaskEdit, Rle};
use crate::segmenter::{binarize_with_edits, segment_region, SegmenterBackend, SegmenterError};
use crate::types::{BoundingBox, DefectClass, DetectionId, ImageBuffer};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CaptureError {
    #[error("capture store i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("capture store line {line} is corrupt: {reason}")]
    Corrupt { line: usize, reason: String },
    #[error("record serialization failed: {0}")]
    Serialize(String),
}

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error("image checksum {actual} does not match record {expected}")]
    ImageMismatch { expected: String, actual: String },
    #[error("image does not decode: {0}")]
    BadImage(String),
    #[error(transparent)]
    Segmenter(#[from] SegmenterError),
    #[error("replayed mask for detection {0} differs from the stored mask")]
    MaskDiffers(DetectionId),
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Content-addressed image reference; `id` is the SHA-256 of the encoded bytes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageRef {
    pub id: String,
    pub width: u32,
    pub height: u32,
    pub channels: u8,
}

impl ImageRef {
    pub fn of(bytes: &[u8], image: &ImageBuffer) -> Self {
        Self { id: sha256_hex(bytes), width: image.width(), height: image.height(), channels: image.channels() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotatedDefect {
    pub detection_id: DetectionId,
    pub class: DefectClass,
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
    pub confidence: f64,
    pub mask_threshold: f64,
    pub mask: Rle,
    pub edit_log: Vec<MaskEdit>,
    pub attributes: HumanAttributes,
    pub assessment: DefectAssessment,
}

/// A rejected proposal, kept for retraining.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HardNegative {
    pub detection_id: DetectionId,
    pub class: DefectClass,
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
    pub confidence: f64,
    pub rejected: bool,
}

/// One finalized session. `checksum` is the SHA-256 of the JSON line
/// serialized with `checksum` empty; it is always the last field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub schema_version: u32,
    pub session_id: String,
    pub image: ImageRef,
    pub inspector_id: String,
    pub timestamp: String,
    pub detection_threshold: f64,
    pub detector: String,
    pub segmenter: String,
    pub annotations: Vec<AnnotatedDefect>,
    pub hard_negatives: Vec<HardNegative>,
    pub checksum: String,
}

const CHECKSUM_TAIL: &str = ",\"checksum\":\"\"}";

impl AnnotationRecord {
    /// Fills `checksum` and returns the exact JSON line (no newline).
    pub fn seal(&mut self) -> Result<String, CaptureError> {
        self.checksum.clear();
        let blank = serde_json::to_string(self).map_err(|e| CaptureError::Serialize(e.to_string()))?;
        let digest = sha256_hex(blank.as_bytes());
        let head = blank
            .strip_suffix(CHECKSUM_TAIL)
            .ok_or_else(|| CaptureError::Serialize("checksum is not the last field".into()))?;
        let line = format!("{head},\"checksum\":\"{digest}\"}}");
        self.checksum = digest;
        Ok(line)
    }

    /// Parses one store line and checks its checksum against the raw bytes.
    pub fn from_line(line: &str) -> Result<Self, String> {
        let record: AnnotationRecord = serde_json::from_str(line).map_err(|e| e.to_string())?;
        let tail = format!(",\"checksum\":\"{}\"}}", record.checksum);
        let head = line.strip_suffix(&tail).ok_or("checksum is not the last field")?;
        let actual = sha256_hex(format!("{head}{CHECKSUM_TAIL}").as_bytes());
        if actual != record.checksum {
            return Err(format!("checksum mismatch: stored {} computed {actual}", record.checksum));
        }
        if record.schema_version != SCHEMA_VERSION {
            return Err(format!("unsupported schema_version {}", record.schema_version));
        }
        Ok(record)
    }
}

/// Append-only JSON-lines file. Appends are serialized and synced before
/// returning.
#[derive(Debug)]
pub struct CaptureStore {
    path: PathBuf,
    file: Mutex<File>,
}

impl CaptureStore {
    pub fn open(path: impl AsRef<Path>) -> Result<Self, CaptureError> {
        let path = path.as_ref().to_path_buf();
        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        Ok(Self { path, file: Mutex::new(file) })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Seals `record` and appends its line.
    pub fn append(&self, record: &mut AnnotationRecord) -> Result<(), CaptureError> {
        let mut line = record.seal()?;
        line.push('\n');
        let mut file = self.file.lock().unwrap_or_else(|p| p.into_inner());
        file.write_all(line.as_bytes())?;
        file.flush()?;
        file.sync_data()?;
        Ok(())
    }

    pub fn records(&self) -> Result<Vec<AnnotationRecord>, CaptureError> {
        read_records(&self.path)
    }
}

/// Reads and verifies every record. A missing file is an empty store.
pub fn read_records(path: impl AsRef<Path>) -> Result<Vec<AnnotationRecord>, CaptureError> {
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(e.into()),
    };
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        out.push(AnnotationRecord::from_line(&line).map_err(|reason| CaptureError::Corrupt { line: i + 1, reason })?);
    }
    Ok(out)
}

/// Rebuilds every stored mask from the image, box, threshold and edit log.
pub fn replay_masks(
    record: &AnnotationRecord,
    image_bytes: &[u8],
    segmenter: &dyn SegmenterBackend,
) -> Result<Vec<BinaryMask>, ReplayError> {
    let actual = sha256_hex(image_bytes);
    if actual != record.image.id {
        return Err(ReplayError::ImageMismatch { expected: record.image.id.clone(), actual });
    }
    let image = ImageBuffer::decode_png(image_bytes).map_err(|e| ReplayError::BadImage(e.to_string()))?;
    record
        .annotations
        .iter()
        .map(|a| {
            let probs = segment_region(&image, &a.bbox, segmenter)?;
            Ok(binarize_with_edits(&probs, a.mask_threshold, &a.edit_log)?)
        })
        .collect()
}

/// Replays the record and compares each mask with the stored RLE.
pub fn verify_replay(
    record: &AnnotationRecord,
    image_bytes: &[u8],
    segmenter: &dyn SegmenterBackend,
) -> Result<(), ReplayError> {
    let masks = replay_masks(record, image_bytes, segmenter)?;
    for (a, m) in record.annotations.iter().zip(&masks) {
        if m.to_rle() != a.mask {
            return Err(ReplayError::MaskDiffers(a.detection_id));
        }
    }
    Ok(())
}
