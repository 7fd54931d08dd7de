//! Line-delimited JSON catalog records.
//!
//! One record per line:
//!
//! ```text
//! {"record_id":"r1","item_id":"p1","source_id":"shop","text_fields":["Blue shirt","..."],"features":[0.1,0.2]}
//! {"record_id":"r2","item_id":"p1","source_id":"shop","text_fields":["Blue shirt"],"image":[[[0.5,0.1,0.0]]]}
//! ```
//!
//! Exactly one of `features` (flat vector) or `image` (height x width x
//! channels, values in [0, 1]) must be present. Labeled catalogs used for
//! linear probes add `class` (integer) and/or `attributes` (integer list).

use std::collections::HashSet;
use std::io::BufRead;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum ImageInput {
    Features(Vec<f64>),
    Image {
        height: usize,
        width: usize,
        channels: usize,
        /// Row-major, channels innermost.
        data: Vec<f64>,
    },
}

impl ImageInput {
    /// The flat input vector fed to an extractor.
    pub fn as_flat(&self) -> &[f64] {
        match self {
            ImageInput::Features(v) => v,
            ImageInput::Image { data, .. } => data,
        }
    }

    pub fn len(&self) -> usize {
        self.as_flat().len()
    }

    pub fn is_empty(&self) -> bool {
        self.as_flat().is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CatalogRecord {
    pub record_id: String,
    pub item_id: String,
    pub source_id: String,
    pub text_fields: Vec<String>,
    pub image_input: ImageInput,
}

/// Anything that can be embedded: ids plus a flat extractor input.
pub trait ImageSource {
    fn record_id(&self) -> &str;
    fn item_id(&self) -> &str;
    fn input(&self) -> &[f64];
}

impl ImageSource for CatalogRecord {
    fn record_id(&self) -> &str {
        &self.record_id
    }
    fn item_id(&self) -> &str {
        &self.item_id
    }
    fn input(&self) -> &[f64] {
        self.image_input.as_flat()
    }
}

/// Supervised targets attached to a labeled catalog record.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ProbeLabel {
    pub class: Option<usize>,
    pub attributes: Option<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledRecord {
    pub record: CatalogRecord,
    pub label: ProbeLabel,
}

#[derive(Serialize, Deserialize)]
struct RawRecord {
    record_id: String,
    item_id: String,
    source_id: String,
    text_fields: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    features: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    image: Option<Vec<Vec<Vec<f64>>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    class: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    attributes: Option<Vec<usize>>,
}

fn convert(raw: RawRecord) -> std::result::Result<LabeledRecord, String> {
    if raw.text_fields.is_empty() {
        return Err("text_fields must contain at least one field".into());
    }
    let image_input = match (raw.features, raw.image) {
        (Some(_), Some(_)) => return Err("record has both `features` and `image`".into()),
        (None, None) => return Err("record has neither `features` nor `image`".into()),
        (Some(f), None) => {
            if f.is_empty() {
                return Err("`features` is empty".into());
            }
            ImageInput::Features(f)
        }
        (None, Some(img)) => {
            let height = img.len();
            let width = img.first().map_or(0, Vec::len);
            let channels = img.first().and_then(|r| r.first()).map_or(0, Vec::len);
            if height == 0 || width == 0 || channels == 0 {
                return Err("`image` is empty".into());
            }
            let mut data = Vec::with_capacity(height * width * channels);
            for row in &img {
                if row.len() != width {
                    return Err("`image` rows have different widths".into());
                }
                for px in row {
                    if px.len() != channels {
                        return Err("`image` pixels have different channel counts".into());
                    }
                    if px.iter().any(|v| !(0.0..=1.0).contains(v)) {
                        return Err("`image` values must lie in [0, 1]".into());
                    }
                    data.extend_from_slice(px);
                }
            }
            ImageInput::Image {
                height,
                width,
                channels,
                data,
            }
        }
    };
    if image_input.as_flat().iter().any(|v| !v.is_finite()) {
        return Err("image input contains non-finite values".into());
    }
    Ok(LabeledRecord {
        record: CatalogRecord {
            record_id: raw.record_id,
            item_id: raw.item_id,
            source_id: raw.source_id,
            text_fields: raw.text_fields,
            image_input,
        },
        label: ProbeLabel {
            class: raw.class,
            attributes: raw.attributes,
        },
    })
}

/// Parse a labeled catalog. Errors carry the 1-based line number.
pub fn read_labeled_catalog<R: BufRead>(reader: R) -> Result<Vec<LabeledRecord>> {
    let mut out = Vec::new();
    let mut ids = HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawRecord = serde_json::from_str(&line).map_err(|e| Error::Malformed {
            line: line_no,
            message: e.to_string(),
        })?;
        let rec = convert(raw).map_err(|message| Error::Malformed { line: line_no, message })?;
        if !ids.insert(rec.record.record_id.clone()) {
            return Err(Error::Malformed {
                line: line_no,
                message: format!("duplicate record_id {:?}", rec.record.record_id),
            });
        }
        out.push(rec);
    }
    Ok(out)
}

pub fn read_catalog<R: BufRead>(reader: R) -> Result<Vec<CatalogRecord>> {
    Ok(read_labeled_catalog(reader)?.into_iter().map(|r| r.record).collect())
}

pub fn read_catalog_file(path: impl AsRef<Path>) -> Result<Vec<CatalogRecord>> {
    let file = std::fs::File::open(path)?;
    read_catalog(std::io::BufReader::new(file))
}

/// Serialize one record as a JSON line (without the trailing newline).
pub fn write_catalog_line(record: &CatalogRecord, label: Option<&ProbeLabel>) -> String {
    let (features, image) = match &record.image_input {
        ImageInput::Features(f) => (Some(f.clone()), None),
        ImageInput::Image {
            height,
            width,
            channels,
            data,
        } => {
            let img = (0..*height)
                .map(|y| {
                    (0..*width)
                        .map(|x| {
                            let start = (y * width + x) * channels;
                            data[start..start + channels].to_vec()
                        })
                        .collect()
                })
                .collect();
            (None, Some(img))
        }
    };
    let raw = RawRecord {
        record_id: record.record_id.clone(),
        item_id: record.item_id.clone(),
        source_id: record.source_id.clone(),
        text_fields: record.text_fields.clone(),
        features,
        image,
        class: label.and_then(|l| l.class),
        attributes: label.and_then(|l| l.attributes.clone()),
    };
    serde_json::to_string(&raw).expect("record serializes")
}
