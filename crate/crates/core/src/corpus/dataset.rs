//! Training samples and the `WCAT` binary dataset format.
//!
//! Layout (little-endian):
//!
//! ```text
//! "WCAT" | version u16 | K u32 | N u64
//! N x { record_id: u32 len + UTF-8 | item_id: u32 len + UTF-8
//!       | label count u16 | labels u32... | feature len u32 | f32... }
//! ```
//!
//! Image inputs are stored as f32. [`build_dataset`] rounds inputs through
//! f32 so that an in-memory dataset equals its reloaded copy.

use std::collections::BTreeSet;
use std::path::Path;

use super::catalog::{CatalogRecord, ImageSource};
use super::text::{preprocess_text, PreprocessConfig};
use super::vocab::Vocabulary;
use crate::binio::{Reader, Writer};
use crate::error::{Error, Result};

pub const DATASET_MAGIC: &[u8; 4] = b"WCAT";
pub const DATASET_VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSample {
    pub record_id: String,
    pub item_id: String,
    /// Flat extractor input.
    pub input: Vec<f64>,
    /// Vocabulary indices of the bag, sorted ascending, no duplicates.
    pub labels: Vec<usize>,
}

impl ImageSource for TrainingSample {
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

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// Vocabulary size K.
    pub n_words: usize,
    pub samples: Vec<TrainingSample>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetBuild {
    pub samples: Vec<TrainingSample>,
    /// Records whose bag was empty after filtering and OOV removal.
    pub dropped: usize,
}

/// One sample per record: tokens mapped through `vocab`, out-of-vocabulary
/// tokens dropped, bag deduplicated. Records with an empty bag are dropped
/// and counted. Images of the same item stay separate samples.
pub fn build_dataset<'a, I>(records: I, vocab: &Vocabulary, config: &PreprocessConfig) -> DatasetBuild
where
    I: IntoIterator<Item = &'a CatalogRecord>,
{
    let mut samples = Vec::new();
    let mut dropped = 0;
    for rec in records {
        let labels: BTreeSet<usize> = preprocess_text(&rec.text_fields, config)
            .iter()
            .filter_map(|t| vocab.index_of(t))
            .collect();
        if labels.is_empty() {
            dropped += 1;
            continue;
        }
        samples.push(TrainingSample {
            record_id: rec.record_id.clone(),
            item_id: rec.item_id.clone(),
            input: rec.input().iter().map(|&v| v as f32 as f64).collect(),
            labels: labels.into_iter().collect(),
        });
    }
    DatasetBuild { samples, dropped }
}

pub fn write_dataset(dataset: &Dataset) -> Result<Vec<u8>> {
    let mut w = Writer::new();
    w.bytes(DATASET_MAGIC);
    w.u16(DATASET_VERSION);
    w.u32(to_u32(dataset.n_words, "vocabulary size")?);
    w.u64(dataset.samples.len() as u64);
    for s in &dataset.samples {
        w.str(&s.record_id);
        w.str(&s.item_id);
        let count = u16::try_from(s.labels.len()).map_err(|_| {
            Error::InvalidInput(format!(
                "record {}: {} labels exceed the u16 label count",
                s.record_id,
                s.labels.len()
            ))
        })?;
        w.u16(count);
        for &l in &s.labels {
            if l >= dataset.n_words {
                return Err(Error::IndexOutOfRange {
                    index: l,
                    len: dataset.n_words,
                });
            }
            w.u32(l as u32);
        }
        w.u32(to_u32(s.input.len(), "feature length")?);
        for &v in &s.input {
            w.f32(v as f32);
        }
    }
    Ok(w.finish())
}

fn to_u32(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::InvalidInput(format!("{what} {v} exceeds u32")))
}

pub fn read_dataset(bytes: &[u8]) -> Result<Dataset> {
    const KIND: &str = "dataset";
    let mut r = Reader::new(bytes, KIND);
    if r.take(4, "magic")? != DATASET_MAGIC {
        return Err(Error::corrupt(KIND, "bad magic"));
    }
    let version = r.u16("version")?;
    if version != DATASET_VERSION {
        return Err(Error::corrupt(KIND, format!("unsupported version {version}")));
    }
    let n_words = r.u32("vocabulary size")? as usize;
    let n = r.u64("sample count")?;
    let mut samples = Vec::new();
    for i in 0..n {
        let record_id = r.str("record id")?;
        let item_id = r.str("item id")?;
        let count = r.u16("label count")? as usize;
        if count == 0 {
            return Err(Error::corrupt(KIND, format!("sample {i} has an empty bag")));
        }
        let mut labels = Vec::with_capacity(count);
        for _ in 0..count {
            let l = r.u32("label")? as usize;
            if l >= n_words {
                return Err(Error::corrupt(KIND, format!("sample {i}: label {l} >= K={n_words}")));
            }
            if labels.last().is_some_and(|&prev| prev >= l) {
                return Err(Error::corrupt(
                    KIND,
                    format!("sample {i}: labels not strictly ascending"),
                ));
            }
            labels.push(l);
        }
        let len = r.u32("feature length")? as usize;
        if len > r.remaining() / 4 {
            return Err(Error::corrupt(
                KIND,
                format!("sample {i}: feature length {len} past end of file"),
            ));
        }
        let mut input = Vec::with_capacity(len);
        for _ in 0..len {
            let v = r.f32("feature")?;
            if !v.is_finite() {
                return Err(Error::corrupt(KIND, format!("sample {i}: non-finite feature")));
            }
            input.push(v as f64);
        }
        samples.push(TrainingSample {
            record_id,
            item_id,
            input,
            labels,
        });
    }
    r.expect_end()?;
    Ok(Dataset { n_words, samples })
}

pub fn write_dataset_file(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, write_dataset(dataset)?)?;
    Ok(())
}

pub fn read_dataset_file(path: impl AsRef<Path>) -> Result<Dataset> {
    read_dataset(&std::fs::read(path)?)
}
