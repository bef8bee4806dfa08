//! Per-class and per-source counts over a directory of VOC files. The
//! source of a file is its first-level subdirectory.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use walkdir::WalkDir;

use super::voc::import_voc;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub images: usize,
    pub labels: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkippedFile {
    pub path: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub per_class: BTreeMap<String, Counts>,
    pub per_source: BTreeMap<String, Counts>,
    pub totals: Counts,
    pub skipped: Vec<SkippedFile>,
}

pub const ROOT_SOURCE: &str = ".";

/// Scans `*.xml` under `dir`. Unreadable or invalid files land in `skipped`.
pub fn dataset_summary(dir: &Path) -> DatasetSummary {
    let mut summary = DatasetSummary::default();
    let walker = WalkDir::new(dir).sort_by_file_name().into_iter();
    for entry in walker {
        let entry = match entry {
            Ok(e) => e,
            Err(e) => {
                let path = e.path().map(|p| p.display().to_string()).unwrap_or_default();
                summary.skipped.push(SkippedFile { path, reason: e.to_string() });
                continue;
            }
        };
        let path = entry.path();
        if !entry.file_type().is_file() || path.extension().and_then(|e| e.to_str()) != Some("xml") {
            continue;
        }
        let rel = path.strip_prefix(dir).unwrap_or(path);
        let parsed = std::fs::read_to_string(path)
            .map_err(|e| e.to_string())
            .and_then(|text| import_voc(&text).map_err(|e| e.to_string()));
        let doc = match parsed {
            Ok((doc, _)) => doc,
            Err(reason) => {
                summary.skipped.push(SkippedFile { path: rel.display().to_string(), reason });
                continue;
            }
        };
        let source = match rel.components().count() {
            0 | 1 => ROOT_SOURCE.to_string(),
            _ => rel.components().next().unwrap().as_os_str().to_string_lossy().into_owned(),
        };
        let src = summary.per_source.entry(source).or_default();
        src.images += 1;
        src.labels += doc.objects.len();
        summary.totals.images += 1;
        summary.totals.labels += doc.objects.len();
        let mut seen = BTreeSet::new();
        for o in &doc.objects {
            let c = summary.per_class.entry(o.label.clone()).or_default();
            c.labels += 1;
            if seen.insert(o.label.clone()) {
                c.images += 1;
            }
        }
    }
    summary
}
