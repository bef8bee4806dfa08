use std::path::{Path, PathBuf};

use clap::Args;
use inspekt_core::geometry::Calibration;
use inspekt_core::session::{run_headless, AssessmentReport, Engine, Skipped};
use serde::{Deserialize, Serialize};

use crate::Status;

#[derive(Args)]
pub struct AssessArgs {
    /// Directory of PNG images (not recursive).
    #[arg(long)]
    images: PathBuf,
    /// Calibration JSON (`{"mm_per_pixel": ..}` or a camera model).
    #[arg(long)]
    calib: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    det_threshold: f64,
    #[arg(long, default_value_t = 0.5)]
    seg_threshold: f64,
    /// Report JSON path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ImageResult {
    pub file: String,
    pub image_id: String,
    pub report: AssessmentReport,
    pub skipped: Vec<Skipped>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct InputError {
    pub file: String,
    pub reason: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct BatchReport {
    pub detection_threshold: f64,
    pub mask_threshold: f64,
    pub images: Vec<ImageResult>,
    pub errors: Vec<InputError>,
}

pub fn run(args: &AssessArgs) -> Status {
    let calibration: Calibration = match std::fs::read(&args.calib)
        .map_err(|e| e.to_string())
        .and_then(|b| serde_json::from_slice(&b).map_err(|e| e.to_string()))
    {
        Ok(c) => c,
        Err(e) => {
            log::error!("calibration {}: {e}", args.calib.display());
            return Status::Fatal;
        }
    };
    if let Err(e) = calibration.resolve() {
        log::error!("calibration {}: {e}", args.calib.display());
        return Status::Fatal;
    }
    for (name, t) in [("--det-threshold", args.det_threshold), ("--seg-threshold", args.seg_threshold)] {
        if !(0.0..=1.0).contains(&t) {
            log::error!("{name} {t} is outside [0, 1]");
            return Status::Fatal;
        }
    }
    let files = match png_files(&args.images) {
        Ok(f) => f,
        Err(e) => {
            log::error!("images {}: {e}", args.images.display());
            return Status::Fatal;
        }
    };

    let engine = Engine::reference();
    let mut report = BatchReport {
        detection_threshold: args.det_threshold,
        mask_threshold: args.seg_threshold,
        images: Vec::new(),
        errors: Vec::new(),
    };
    for path in files {
        let file = path.file_name().unwrap_or_default().to_string_lossy().into_owned();
        match assess_one(&engine, &path, &file, &calibration, args.det_threshold, args.seg_threshold) {
            Ok(r) => report.images.push(r),
            Err(reason) => {
                log::warn!("{file}: {reason}");
                report.errors.push(InputError { file, reason });
            }
        }
    }

    let json = serde_json::to_vec_pretty(&report).expect("report serializes");
    if let Err(e) = std::fs::write(&args.out, json) {
        log::error!("writing {}: {e}", args.out.display());
        return Status::Fatal;
    }
    if report.errors.is_empty() {
        Status::Ok
    } else {
        Status::Partial
    }
}

fn png_files(dir: &Path) -> std::io::Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
        .collect();
    files.sort();
    Ok(files)
}

/// The session id is the file name, so reruns produce identical reports.
fn assess_one(
    engine: &Engine,
    path: &Path,
    file: &str,
    calibration: &Calibration,
    det: f64,
    seg: f64,
) -> Result<ImageResult, String> {
    let bytes = std::fs::read(path).map_err(|e| e.to_string())?;
    let (mut session, image) = engine.create_session(file, &bytes, calibration.clone()).map_err(|e| e.to_string())?;
    let out = run_headless(engine, &mut session, &image, det, seg).map_err(|e| e.to_string())?;
    Ok(ImageResult { file: file.to_string(), image_id: session.image.id, report: out.report, skipped: out.skipped })
}
