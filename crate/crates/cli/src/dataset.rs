use std::path::{Path, PathBuf};

use clap::{Args, Subcommand};
use inspekt_core::capture::read_records;
use inspekt_core::dataset::augment::{augment_chain, AugmentationOp, AugmentationPolicy};
use inspekt_core::dataset::record_boxes;
use inspekt_core::dataset::summary::dataset_summary;
use inspekt_core::dataset::voc::{export_voc, import_voc, ImageSize};
use inspekt_core::dataset::DatasetError;
use inspekt_core::types::ImageBuffer;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::Status;

/// Draws per image before giving up on a variant whose boxes all left the frame.
const MAX_DRAWS: usize = 10;

#[derive(Subcommand)]
pub enum DatasetCmd {
    /// Write `<stem>_augN.png/.xml` for every `<stem>.png` + `<stem>.xml` pair.
    Augment(AugmentArgs),
    /// Capture store (`.jsonl` file) to VOC, or re-export a VOC directory.
    Convert(ConvertArgs),
    /// Per-class and per-source counts over a VOC directory.
    Summary(SummaryArgs),
}

#[derive(Args)]
pub struct AugmentArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// JSON array of explicit ops applied instead of random draws.
    #[arg(long)]
    ops: Option<PathBuf>,
    #[arg(long, default_value_t = 15.0)]
    max_degrees: f64,
    #[arg(long, default_value_t = 0.8)]
    scale_min: f64,
    #[arg(long, default_value_t = 1.2)]
    scale_max: f64,
    #[arg(long, default_value_t = 0.1)]
    translate: f64,
    #[arg(long, default_value_t = 5.0)]
    sigma: f64,
}

#[derive(Args)]
pub struct ConvertArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
pub struct SummaryArgs {
    #[arg(long)]
    dir: PathBuf,
    /// Write JSON here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn run(cmd: &DatasetCmd) -> Status {
    match cmd {
        DatasetCmd::Augment(a) => augment(a),
        DatasetCmd::Convert(c) => convert(c),
        DatasetCmd::Summary(s) => summary(s),
    }
}

fn fatal(msg: impl std::fmt::Display) -> Status {
    log::error!("{msg}");
    Status::Fatal
}

fn finish(failures: usize) -> Status {
    if failures == 0 {
        Status::Ok
    } else {
        log::warn!("{failures} file(s) failed");
        Status::Partial
    }
}

fn sorted_files(dir: &Path, ext: &str) -> std::io::Result<Vec<PathBuf>> {
    let mut v: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|x| x == ext))
        .collect();
    v.sort();
    Ok(v)
}

fn augment(a: &AugmentArgs) -> Status {
    let policy = AugmentationPolicy {
        max_degrees: a.max_degrees,
        scale_min: a.scale_min,
        scale_max: a.scale_max,
        translate_fraction: a.translate,
        sigma: a.sigma,
    };
    if !(policy.max_degrees >= 0.0 && policy.scale_min > 0.0 && policy.scale_min <= policy.scale_max && policy.translate_fraction >= 0.0 && policy.sigma >= 0.0) {
        return fatal("augmentation ranges are invalid");
    }
    let fixed: Option<Vec<AugmentationOp>> = match &a.ops {
        None => None,
        Some(p) => match std::fs::read(p).map_err(|e| e.to_string()).and_then(|b| serde_json::from_slice(&b).map_err(|e| e.to_string())) {
            Ok(ops) => Some(ops),
            Err(e) => return fatal(format!("ops {}: {e}", p.display())),
        },
    };
    if let Some(op) = fixed.iter().flatten().find(|op| op.validate().is_err()) {
        return fatal(format!("invalid op {op:?}"));
    }
    let images = match sorted_files(&a.input, "png") {
        Ok(f) => f,
        Err(e) => return fatal(format!("input {}: {e}", a.input.display())),
    };
    if let Err(e) = std::fs::create_dir_all(&a.out) {
        return fatal(format!("out {}: {e}", a.out.display()));
    }

    let mut failures = 0;
    for (index, png) in images.iter().enumerate() {
        let stem = png.file_stem().unwrap_or_default().to_string_lossy().into_owned();
        // one independent stream per input keeps outputs stable when other files change
        let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
        rng.set_stream(index as u64);
        let result = (|| -> Result<(), String> {
            let image = ImageBuffer::decode_png(&std::fs::read(png).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
            let xml = std::fs::read_to_string(png.with_extension("xml")).map_err(|e| format!("annotation: {e}"))?;
            let (doc, warnings) = import_voc(&xml).map_err(|e| e.to_string())?;
            for w in warnings {
                log::warn!("{stem}: {w}");
            }
            let variants = if fixed.is_some() { 1 } else { a.count };
            for n in 0..variants {
                let (out_img, boxes) = match &fixed {
                    Some(ops) => augment_chain(&image, &doc.objects, ops).map_err(|e| e.to_string())?,
                    None => draw(&image, &doc.objects, &policy, &mut rng)?,
                };
                let name = format!("{stem}_aug{n}");
                let size = ImageSize { width: out_img.width(), height: out_img.height(), depth: out_img.channels() as u32 };
                let xml = export_voc(&format!("{name}.png"), size, &boxes).map_err(|e| e.to_string())?;
                std::fs::write(a.out.join(format!("{name}.png")), out_img.encode_png()).map_err(|e| e.to_string())?;
                std::fs::write(a.out.join(format!("{name}.xml")), xml).map_err(|e| e.to_string())?;
            }
            Ok(())
        })();
        if let Err(e) = result {
            log::warn!("{}: {e}", png.display());
            failures += 1;
        }
    }
    finish(failures)
}

fn draw(
    image: &ImageBuffer,
    boxes: &[inspekt_core::dataset::LabeledBox],
    policy: &AugmentationPolicy,
    rng: &mut ChaCha8Rng,
) -> Result<(ImageBuffer, Vec<inspekt_core::dataset::LabeledBox>), String> {
    for _ in 0..MAX_DRAWS {
        let ops = policy.sample(rng, image.width(), image.height());
        match augment_chain(image, boxes, &ops) {
            Err(DatasetError::DegenerateResult) => continue,
            other => return other.map_err(|e| e.to_string()),
        }
    }
    Err(format!("no draw kept any box after {MAX_DRAWS} attempts"))
}

fn convert(c: &ConvertArgs) -> Status {
    if let Err(e) = std::fs::create_dir_all(&c.out) {
        return fatal(format!("out {}: {e}", c.out.display()));
    }
    if c.input.is_file() {
        capture_to_voc(&c.input, &c.out)
    } else if c.input.is_dir() {
        voc_reexport(&c.input, &c.out)
    } else {
        fatal(format!("input {} does not exist", c.input.display()))
    }
}

/// `<session_id>.xml` per record, naming `<image_id>.png`.
fn capture_to_voc(path: &Path, out: &Path) -> Status {
    let records = match read_records(path) {
        Ok(r) => r,
        Err(e) => return fatal(e),
    };
    let mut failures = 0;
    for r in &records {
        let size = ImageSize { width: r.image.width, height: r.image.height, depth: r.image.channels as u32 };
        let written = export_voc(&format!("{}.png", r.image.id), size, &record_boxes(r))
            .map_err(|e| e.to_string())
            .and_then(|xml| std::fs::write(out.join(format!("{}.xml", r.session_id)), xml).map_err(|e| e.to_string()));
        if let Err(e) = written {
            log::warn!("session {}: {e}", r.session_id);
            failures += 1;
        }
    }
    finish(failures)
}

fn voc_reexport(dir: &Path, out: &Path) -> Status {
    let files = match sorted_files(dir, "xml") {
        Ok(f) => f,
        Err(e) => return fatal(e),
    };
    let mut failures = 0;
    for f in files {
        let result = std::fs::read_to_string(&f)
            .map_err(|e| e.to_string())
            .and_then(|t| import_voc(&t).map_err(|e| e.to_string()))
            .and_then(|(doc, warnings)| {
                for w in warnings {
                    log::warn!("{}: {w}", f.display());
                }
                export_voc(&doc.filename, doc.size, &doc.objects).map_err(|e| e.to_string())
            })
            .and_then(|xml| std::fs::write(out.join(f.file_name().unwrap_or_default()), xml).map_err(|e| e.to_string()));
        if let Err(e) = result {
            log::warn!("{}: {e}", f.display());
            failures += 1;
        }
    }
    finish(failures)
}

fn summary(s: &SummaryArgs) -> Status {
    if !s.dir.is_dir() {
        return fatal(format!("{} is not a directory", s.dir.display()));
    }
    let summary = dataset_summary(&s.dir);
    let json = serde_json::to_string_pretty(&summary).expect("summary serializes");
    match &s.out {
        Some(p) => {
            if let Err(e) = std::fs::write(p, json) {
                return fatal(format!("{}: {e}", p.display()));
            }
        }
        None => println!("{json}"),
    }
    finish(summary.skipped.len())
}
