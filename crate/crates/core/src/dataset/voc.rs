//! VOC XML. Files hold 1-based inclusive integer pixel indices; internally
//! boxes are 0-based continuous, so `xmin = floor(x_min) + 1` and
//! `xmax = ceil(x_max)`, and import maps back with `x_min = xmin - 1`.

use serde::{Deserialize, Serialize};

use super::{DatasetError, LabeledBox};
use crate::types::{BoundingBox, DefectClass};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageSize {
    pub width: u32,
    pub height: u32,
    pub depth: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VocAnnotation {
    pub filename: String,
    pub size: ImageSize,
    pub objects: Vec<LabeledBox>,
}

#[derive(Serialize, Deserialize)]
struct XmlAnnotation {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    folder: Option<String>,
    filename: String,
    size: ImageSize,
    #[serde(default)]
    segmented: u32,
    #[serde(default)]
    object: Vec<XmlObject>,
}

#[derive(Serialize, Deserialize)]
struct XmlObject {
    name: String,
    #[serde(default = "unspecified")]
    pose: String,
    #[serde(default)]
    truncated: u32,
    #[serde(default)]
    difficult: u32,
    bndbox: XmlBox,
}

fn unspecified() -> String {
    "Unspecified".into()
}

/// Read as reals so files written with `48.0` still load.
#[derive(Serialize, Deserialize)]
struct XmlBox {
    xmin: f64,
    ymin: f64,
    xmax: f64,
    ymax: f64,
}

pub fn export_voc(filename: &str, size: ImageSize, objects: &[LabeledBox]) -> Result<String, DatasetError> {
    let mut object = Vec::with_capacity(objects.len());
    for o in objects {
        let b = &o.bbox;
        b.validate().map_err(|e| DatasetError::InvalidBox(e.to_string()))?;
        let xb = XmlBox {
            xmin: b.x_min.floor() + 1.0,
            ymin: b.y_min.floor() + 1.0,
            xmax: b.x_max.ceil(),
            ymax: b.y_max.ceil(),
        };
        check_voc_box(&xb, size)?;
        object.push(XmlObject {
            name: o.label.clone(),
            pose: unspecified(),
            truncated: 0,
            difficult: 0,
            bndbox: xb,
        });
    }
    let doc = XmlAnnotation { folder: None, filename: filename.to_string(), size, segmented: 0, object };
    let mut out = String::new();
    let mut ser = quick_xml::se::Serializer::with_root(&mut out, Some("annotation"))
        .map_err(|e| DatasetError::MalformedXml(e.to_string()))?;
    ser.indent(' ', 2);
    doc.serialize(ser).map_err(|e| DatasetError::MalformedXml(e.to_string()))?;
    out.push('\n');
    Ok(out)
}

fn check_voc_box(b: &XmlBox, size: ImageSize) -> Result<(), DatasetError> {
    let ok = [b.xmin, b.ymin, b.xmax, b.ymax].iter().all(|v| v.is_finite())
        && 1.0 <= b.xmin
        && b.xmin <= b.xmax
        && b.xmax <= size.width as f64
        && 1.0 <= b.ymin
        && b.ymin <= b.ymax
        && b.ymax <= size.height as f64;
    if ok {
        Ok(())
    } else {
        Err(DatasetError::InvalidBox(format!(
            "({}, {}, {}, {}) in {}x{}",
            b.xmin, b.ymin, b.xmax, b.ymax, size.width, size.height
        )))
    }
}

/// Parses a VOC document. Labels outside the taxonomy are kept and reported
/// in the returned warnings.
pub fn import_voc(xml: &str) -> Result<(VocAnnotation, Vec<String>), DatasetError> {
    if !xml.contains("<annotation") {
        return Err(DatasetError::MalformedXml("missing <annotation> root".into()));
    }
    let doc: XmlAnnotation = quick_xml::de::from_str(xml).map_err(|e| DatasetError::MalformedXml(e.to_string()))?;
    let mut warnings = Vec::new();
    let mut objects = Vec::with_capacity(doc.object.len());
    for o in doc.object {
        check_voc_box(&o.bndbox, doc.size)?;
        if o.name.parse::<DefectClass>().is_err() {
            log::warn!("unknown VOC label {:?} kept as opaque", o.name);
            warnings.push(format!("unknown label {:?}", o.name));
        }
        let b = &o.bndbox;
        let bbox = BoundingBox::new(b.xmin - 1.0, b.ymin - 1.0, b.xmax, b.ymax)
            .map_err(|e| DatasetError::InvalidBox(e.to_string()))?;
        objects.push(LabeledBox { label: o.name, bbox });
    }
    Ok((VocAnnotation { filename: doc.filename, size: doc.size, objects }, warnings))
}
