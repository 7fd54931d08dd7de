//! Loading images from dataset files or catalogs, and models from checkpoints.

use std::fs::File;
use std::io::{BufReader, Read};
use std::path::{Path, PathBuf};

use anyhow::Context;
use weakcat::corpus::{read_dataset, read_labeled_catalog, ImageSource, ProbeLabel, Vocabulary, DATASET_MAGIC};
use weakcat::model::{load_checkpoint, EmbeddingModel};

/// An image to embed, from either input format.
pub struct Image {
    pub record_id: String,
    pub item_id: String,
    pub input: Vec<f64>,
    /// Only catalogs carry probe labels.
    pub label: ProbeLabel,
}

impl ImageSource for Image {
    fn record_id(&self) -> &str {
        &self.record_id
    }

    fn item_id(&self) -> &str {
        &self.item_id
    }

    fn input(&self) -> &[f64] {
        &self.input
    }
}

fn is_dataset(path: &Path) -> anyhow::Result<bool> {
    let mut head = [0u8; 4];
    let mut f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let n = f.read(&mut head)?;
    Ok(n == 4 && &head == DATASET_MAGIC)
}

/// Read a binary dataset or a JSON-lines catalog, detected by magic bytes.
pub fn load_images(path: &Path) -> anyhow::Result<Vec<Image>> {
    let ctx = || format!("reading {}", path.display());
    if is_dataset(path)? {
        let bytes = std::fs::read(path).with_context(ctx)?;
        let ds = read_dataset(&bytes).with_context(ctx)?;
        Ok(ds
            .samples
            .into_iter()
            .map(|s| Image {
                record_id: s.record_id,
                item_id: s.item_id,
                input: s.input,
                label: ProbeLabel {
                    class: None,
                    attributes: None,
                },
            })
            .collect())
    } else {
        let file = File::open(path).with_context(ctx)?;
        let records = read_labeled_catalog(BufReader::new(file)).with_context(ctx)?;
        Ok(records
            .into_iter()
            .map(|r| Image {
                record_id: r.record.record_id.clone(),
                item_id: r.record.item_id.clone(),
                input: r.record.image_input.as_flat().to_vec(),
                label: r.label,
            })
            .collect())
    }
}

/// Load a checkpoint, checking it against a vocabulary file when given.
pub fn load_model(checkpoint: &Path, vocab: Option<&PathBuf>) -> anyhow::Result<EmbeddingModel> {
    let fingerprint = match vocab {
        Some(p) => Some(
            Vocabulary::load(p)
                .with_context(|| format!("reading {}", p.display()))?
                .fingerprint(),
        ),
        None => None,
    };
    load_checkpoint(checkpoint, fingerprint.as_ref()).with_context(|| format!("loading {}", checkpoint.display()))
}

/// Parse a comma-separated list of positive integers.
pub fn parse_ks(text: &str) -> anyhow::Result<Vec<usize>> {
    let ks: Vec<usize> = text
        .split(',')
        .map(|t| t.trim().parse::<usize>())
        .collect::<Result<_, _>>()
        .map_err(|_| crate::usage(format!("invalid k list {text:?}")))?;
    if ks.is_empty() || ks.contains(&0) {
        return Err(crate::usage(format!("k values must be positive, got {text:?}")));
    }
    Ok(ks)
}

pub fn write_json(path: &Path, value: &impl serde::Serialize) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}
