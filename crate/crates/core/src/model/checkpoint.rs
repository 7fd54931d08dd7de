//! `WMDL` checkpoint files.
//!
//! Layout (little-endian):
//!
//! ```text
//! "WMDL" | version u16 | I u32 | K u32 | extractor kind u8
//! | layer count u32 | layer widths u32... | vocab fingerprint [u8; 32]
//! | theta f64... | W f64... (column-major, I x K)
//! ```
//!
//! Kind codes: 0 precomputed, 1 linear, 2 mlp. Values are stored as f64 so
//! a save/load round trip is bit-exact.

use std::path::Path;

use super::{EmbeddingModel, ExtractorKind, FeatureExtractor, WordEmbeddingMatrix};
use crate::binio::{Reader, Writer};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"WMDL";
pub const CHECKPOINT_VERSION: u16 = 1;

pub(crate) fn to_bytes(model: &EmbeddingModel) -> Vec<u8> {
    let mut w = Writer::new();
    w.bytes(CHECKPOINT_MAGIC);
    w.u16(CHECKPOINT_VERSION);
    w.u32(model.dim() as u32);
    w.u32(model.n_words() as u32);
    w.u8(model.extractor.kind().code());
    w.u32(model.extractor.dims().len() as u32);
    for &d in model.extractor.dims() {
        w.u32(d as u32);
    }
    w.bytes(&model.vocab_fingerprint);
    for &p in model.extractor.params() {
        w.f64(p);
    }
    for &p in model.words.as_slice() {
        w.f64(p);
    }
    w.finish()
}

pub(crate) fn from_bytes(bytes: &[u8], expected_fingerprint: Option<&[u8; 32]>) -> Result<EmbeddingModel> {
    let corrupt = |m: String| Error::CorruptCheckpoint(m);
    let mut r = Reader::new(bytes, "checkpoint");
    let wrap = |e: Error| match e {
        Error::CorruptFile { message, .. } => Error::CorruptCheckpoint(message),
        other => other,
    };
    let magic = r.take(4, "magic").map_err(wrap)?;
    if magic != CHECKPOINT_MAGIC {
        return Err(corrupt("bad magic".into()));
    }
    let version = r.u16("version").map_err(wrap)?;
    if version != CHECKPOINT_VERSION {
        return Err(corrupt(format!("unsupported version {version}")));
    }
    let dim = r.u32("I").map_err(wrap)? as usize;
    let n_words = r.u32("K").map_err(wrap)? as usize;
    let kind_code = r.u8("extractor kind").map_err(wrap)?;
    let kind =
        ExtractorKind::from_code(kind_code).ok_or_else(|| corrupt(format!("unknown extractor kind {kind_code}")))?;
    let n_dims = r.u32("layer count").map_err(wrap)? as usize;
    if n_dims == 0 || n_dims > r.remaining() / 4 {
        return Err(corrupt(format!("implausible layer count {n_dims}")));
    }
    let dims = (0..n_dims)
        .map(|_| r.u32("layer width").map(|d| d as usize))
        .collect::<Result<Vec<_>>>()
        .map_err(wrap)?;
    if dims.last() != Some(&dim) {
        return Err(corrupt(format!(
            "extractor output {:?} does not match I={dim}",
            dims.last()
        )));
    }
    let mut fingerprint = [0u8; 32];
    fingerprint.copy_from_slice(r.take(32, "vocab fingerprint").map_err(wrap)?);

    let n_theta: usize = dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
    let n_w = dim
        .checked_mul(n_words)
        .ok_or_else(|| corrupt("I x K overflows".into()))?;
    let expected = (n_theta + n_w)
        .checked_mul(8)
        .ok_or_else(|| corrupt("parameter count overflows".into()))?;
    if r.remaining() != expected {
        return Err(corrupt(format!(
            "expected {expected} parameter bytes, found {}",
            r.remaining()
        )));
    }
    let mut read_f64s = |n: usize| -> Result<Vec<f64>> {
        (0..n)
            .map(|_| r.f64("parameter"))
            .collect::<Result<Vec<_>>>()
            .map_err(wrap)
    };
    let theta = read_f64s(n_theta)?;
    let w = read_f64s(n_w)?;
    if theta.iter().chain(&w).any(|v| !v.is_finite()) {
        return Err(corrupt("non-finite parameter".into()));
    }

    if let Some(expected) = expected_fingerprint {
        if expected != &fingerprint {
            return Err(Error::VocabMismatch);
        }
    }
    let extractor = FeatureExtractor::from_parts(kind, dims, theta).map_err(|e| corrupt(e.to_string()))?;
    let words = WordEmbeddingMatrix::from_columns(dim, n_words, w)?;
    EmbeddingModel::new(extractor, words, fingerprint)
}

pub fn save_checkpoint(model: &EmbeddingModel, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, to_bytes(model))?;
    Ok(())
}

/// Load a checkpoint; with `expected_fingerprint`, reject models trained on
/// another vocabulary.
pub fn load_checkpoint(path: impl AsRef<Path>, expected_fingerprint: Option<&[u8; 32]>) -> Result<EmbeddingModel> {
    from_bytes(&std::fs::read(path)?, expected_fingerprint)
}
