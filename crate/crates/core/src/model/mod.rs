//! The embedding model: a feature extractor `z = f(x, theta)` followed by a
//! word-embedding layer scored as `softmax(W^T z)` over candidate words.

mod checkpoint;
mod extractor;
mod head;

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use extractor::{ExtractorKind, FeatureExtractor, ForwardTrace};
pub(crate) use head::clamp_rounding;
pub use head::{head_gradients, log_sum_exp, loss, scores, softmax, HeadGradients, WordEmbeddingMatrix};

use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingModel {
    pub extractor: FeatureExtractor,
    pub words: WordEmbeddingMatrix,
    /// SHA-256 of the vocabulary token list.
    pub vocab_fingerprint: [u8; 32],
}

/// Per-sample gradients of the sampled loss.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub loss: f64,
    /// Sparse `dL/dW`: only candidate columns.
    pub columns: Vec<(usize, Vec<f64>)>,
    /// `dL/dtheta`; empty when not requested or for precomputed extractors.
    pub extractor: Vec<f64>,
    pub feature_norm: f64,
}

impl EmbeddingModel {
    pub fn new(extractor: FeatureExtractor, words: WordEmbeddingMatrix, vocab_fingerprint: [u8; 32]) -> Result<Self> {
        if extractor.output_dim() != words.dim() {
            return Err(Error::DimensionMismatch {
                expected: words.dim(),
                actual: extractor.output_dim(),
            });
        }
        Ok(Self {
            extractor,
            words,
            vocab_fingerprint,
        })
    }

    /// Random word matrix for `n_words` words on top of `extractor`.
    pub fn initialize(extractor: FeatureExtractor, n_words: usize, vocab_fingerprint: [u8; 32], rng: &mut Rng) -> Self {
        let words = WordEmbeddingMatrix::random(extractor.output_dim(), n_words, rng);
        Self {
            extractor,
            words,
            vocab_fingerprint,
        }
    }

    pub fn dim(&self) -> usize {
        self.words.dim()
    }

    pub fn n_words(&self) -> usize {
        self.words.n_words()
    }

    /// Visual feature `z` for a flat image input.
    pub fn extract(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.extractor.forward(input)
    }

    /// Loss of predicting `candidates[positive_slot]` from `input`.
    pub fn loss(&self, input: &[f64], positive_slot: usize, candidates: &[usize]) -> Result<f64> {
        let z = self.extract(input)?;
        loss(&z, positive_slot, candidates, &self.words)
    }

    /// Loss and gradients for one (image, positive word, negatives) instance.
    /// `dtheta` is backpropagated through the extractor only when
    /// `with_extractor` is set.
    pub fn gradients(
        &self,
        input: &[f64],
        positive_slot: usize,
        candidates: &[usize],
        with_extractor: bool,
    ) -> Result<Gradients> {
        let trace = self.extractor.forward_trace(input)?;
        let head = head_gradients(&trace.output, positive_slot, candidates, &self.words)?;
        let extractor = if with_extractor && self.extractor.n_params() > 0 {
            self.extractor.backward(&trace, &head.dz)
        } else {
            Vec::new()
        };
        Ok(Gradients {
            loss: head.loss,
            columns: head.columns,
            extractor,
            feature_norm: trace.output.iter().map(|v| v * v).sum::<f64>().sqrt(),
        })
    }
}
