//! Word-embedding classification layer and the candidate-restricted
//! softmax cross-entropy.

use super::extractor::dot;
use crate::error::{Error, Result};
use crate::rng::{self, Rng};

/// `I x K` matrix whose column `k` is the embedding of word `k`.
/// Stored column-major so that a word's embedding is contiguous.
#[derive(Debug, Clone, PartialEq)]
pub struct WordEmbeddingMatrix {
    dim: usize,
    n_words: usize,
    data: Vec<f64>,
}

impl WordEmbeddingMatrix {
    pub fn zeros(dim: usize, n_words: usize) -> Self {
        Self {
            dim,
            n_words,
            data: vec![0.0; dim * n_words],
        }
    }

    /// Entries uniform in `[-1/sqrt(I), 1/sqrt(I)]`.
    pub fn random(dim: usize, n_words: usize, rng: &mut Rng) -> Self {
        let bound = 1.0 / (dim as f64).sqrt();
        Self {
            dim,
            n_words,
            data: (0..dim * n_words).map(|_| rng::uniform(rng, -bound, bound)).collect(),
        }
    }

    pub fn from_columns(dim: usize, n_words: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != dim * n_words {
            return Err(Error::DimensionMismatch {
                expected: dim * n_words,
                actual: data.len(),
            });
        }
        Ok(Self { dim, n_words, data })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_words(&self) -> usize {
        self.n_words
    }

    pub fn column(&self, word: usize) -> &[f64] {
        &self.data[word * self.dim..(word + 1) * self.dim]
    }

    pub fn column_mut(&mut self, word: usize) -> &mut [f64] {
        &mut self.data[word * self.dim..(word + 1) * self.dim]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// All K logits `W^T z`.
    pub fn full_scores(&self, z: &[f64]) -> Vec<f64> {
        self.data.chunks_exact(self.dim).map(|col| dot(col, z)).collect()
    }
}

/// `logit_j = w_{candidates[j]} . z`.
pub fn scores(z: &[f64], candidates: &[usize], words: &WordEmbeddingMatrix) -> Result<Vec<f64>> {
    if z.len() != words.dim() {
        return Err(Error::DimensionMismatch {
            expected: words.dim(),
            actual: z.len(),
        });
    }
    candidates
        .iter()
        .map(|&c| {
            if c >= words.n_words() {
                Err(Error::IndexOutOfRange {
                    index: c,
                    len: words.n_words(),
                })
            } else {
                Ok(dot(words.column(c), z))
            }
        })
        .collect()
}

/// Max-subtracted softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// `log sum exp(logits)`, stable.
pub fn log_sum_exp(logits: &[f64]) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + logits.iter().map(|&l| (l - max).exp()).sum::<f64>().ln()
}

/// `-log softmax(scores)[positive_slot]`.
pub fn loss(z: &[f64], positive_slot: usize, candidates: &[usize], words: &WordEmbeddingMatrix) -> Result<f64> {
    let logits = scores(z, candidates, words)?;
    slot_loss(&logits, positive_slot)
}

pub(crate) fn slot_loss(logits: &[f64], positive_slot: usize) -> Result<f64> {
    let positive = *logits.get(positive_slot).ok_or(Error::IndexOutOfRange {
        index: positive_slot,
        len: logits.len(),
    })?;
    Ok(clamp_rounding(log_sum_exp(logits) - positive))
}

/// Clamp the tiny negative rounding of a perfect prediction to zero while
/// letting NaN through.
pub(crate) fn clamp_rounding(loss: f64) -> f64 {
    if loss < 0.0 {
        0.0
    } else {
        loss
    }
}

/// Gradients of the candidate-restricted loss with respect to the
/// candidate columns of `W` and to `z`.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadGradients {
    pub loss: f64,
    /// `(word, dL/dw_word)` for each candidate, in candidate order.
    pub columns: Vec<(usize, Vec<f64>)>,
    pub dz: Vec<f64>,
}

pub fn head_gradients(
    z: &[f64],
    positive_slot: usize,
    candidates: &[usize],
    words: &WordEmbeddingMatrix,
) -> Result<HeadGradients> {
    let logits = scores(z, candidates, words)?;
    let loss = slot_loss(&logits, positive_slot)?;
    let probs = softmax(&logits);
    let mut dz = vec![0.0; z.len()];
    let columns = candidates
        .iter()
        .zip(&probs)
        .enumerate()
        .map(|(j, (&c, &p))| {
            let coef = p - if j == positive_slot { 1.0 } else { 0.0 };
            for (d, &w) in dz.iter_mut().zip(words.column(c)) {
                *d += coef * w;
            }
            (c, z.iter().map(|&v| coef * v).collect())
        })
        .collect();
    Ok(HeadGradients { loss, columns, dz })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn matrix(dim: usize, cols: &[&[f64]]) -> WordEmbeddingMatrix {
        WordEmbeddingMatrix::from_columns(dim, cols.len(), cols.concat()).unwrap()
    }

    #[test]
    fn orthogonal_candidates_score_zero() {
        let w = matrix(2, &[&[0.0, 1.0], &[0.0, -3.0]]);
        assert_eq!(scores(&[2.0, 0.0], &[0, 1], &w).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn self_column_scores_squared_norm() {
        let z = [0.6, 0.8];
        let w = matrix(2, &[&[1.0, 0.0], &z]);
        let s = scores(&z, &[1], &w).unwrap();
        assert!((s[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn scores_gather_full_matrix() {
        let mut r = rng::seeded(3);
        let w = WordEmbeddingMatrix::random(6, 30, &mut r);
        let z: Vec<f64> = (0..6).map(|_| rng::normal(&mut r)).collect();
        // full product computed entry by entry from the column-major buffer
        let full: Vec<f64> = (0..30)
            .map(|k| (0..6).map(|i| w.as_slice()[k * 6 + i] * z[i]).sum())
            .collect();
        let cands = [29, 0, 7, 13];
        let got = scores(&z, &cands, &w).unwrap();
        for (g, &c) in got.iter().zip(&cands) {
            assert_eq!(*g, full[c]);
        }
        assert_eq!(w.full_scores(&z), full);
    }

    #[test]
    fn scores_errors() {
        let w = WordEmbeddingMatrix::zeros(2, 3);
        assert!(matches!(
            scores(&[0.0, 0.0], &[3], &w),
            Err(Error::IndexOutOfRange { index: 3, len: 3 })
        ));
        assert!(matches!(scores(&[0.0], &[0], &w), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn softmax_cases() {
        assert_eq!(softmax(&[0.0, 0.0]), vec![0.5, 0.5]);
        for p in softmax(&[1000.0, 1000.0, 1000.0]) {
            assert!((p - 1.0 / 3.0).abs() < 1e-15);
        }
        for c in [-50.0, 0.0, 3.5, 700.0] {
            let p = softmax(&[c, c + 3f64.ln()]);
            assert!((p[0] - 0.25).abs() < 1e-12 && (p[1] - 0.75).abs() < 1e-12, "{c}: {p:?}");
        }
    }

    #[test]
    fn loss_cases() {
        let w = matrix(1, &[&[1.0], &[1.0]]);
        let l = loss(&[0.3], 0, &[0, 1], &w).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-15);

        let w = matrix(1, &[&[20.0], &[0.0]]);
        let l = loss(&[1.0], 0, &[0, 1], &w).unwrap();
        assert!((0.0..1e-8).contains(&l));
        assert!(l <= (-20f64).exp());
    }

    #[test]
    fn loss_matches_full_softmax_probability() {
        let mut r = rng::seeded(9);
        for _ in 0..50 {
            let w = WordEmbeddingMatrix::random(5, 12, &mut r);
            let z: Vec<f64> = (0..5).map(|_| 2.0 * rng::normal(&mut r)).collect();
            let cands: Vec<usize> = (0..12).collect();
            let slot = rng::below(&mut r, 12);
            // brute force: exponentiate every logit directly
            let e: Vec<f64> = (0..12).map(|k| dot(w.column(k), &z).exp()).collect();
            let p = e[slot] / e.iter().sum::<f64>();
            let l = loss(&z, slot, &cands, &w).unwrap();
            assert!((l + p.ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn perfect_prediction_is_fixed_point() {
        let w = matrix(1, &[&[800.0], &[0.0], &[-5.0]]);
        let g = head_gradients(&[1.0], 0, &[0, 1, 2], &w).unwrap();
        for (_, col) in &g.columns {
            assert!(col.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn column_gradients_sum_to_zero() {
        let mut r = rng::seeded(10);
        let w = WordEmbeddingMatrix::random(4, 10, &mut r);
        let z = [0.5, -1.0, 2.0, 0.1];
        let g = head_gradients(&z, 2, &[3, 1, 7, 9], &w).unwrap();
        for i in 0..4 {
            let s: f64 = g.columns.iter().map(|(_, c)| c[i]).sum();
            assert!(s.abs() < 1e-14);
        }
    }

    proptest! {
        #[test]
        fn softmax_normalized_and_shift_invariant(
            logits in prop::collection::vec(-300.0f64..300.0, 1..20),
            shift in -300.0f64..300.0,
        ) {
            let p = softmax(&logits);
            prop_assert!(p.iter().all(|&v| v >= 0.0));
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            let shifted: Vec<f64> = logits.iter().map(|l| l + shift).collect();
            let q = softmax(&shifted);
            for (a, b) in p.iter().zip(&q) {
                prop_assert!((a - b).abs() <= 1e-12);
            }
        }

        #[test]
        fn loss_nonnegative(z in prop::collection::vec(-5.0f64..5.0, 3), seed in 0u64..500, slot in 0usize..4) {
            let mut r = rng::seeded(seed);
            let w = WordEmbeddingMatrix::random(3, 4, &mut r);
            let cands = [0, 1, 2, 3];
            let l = loss(&z, slot, &cands, &w).unwrap();
            let p = softmax(&scores(&z, &cands, &w).unwrap());
            prop_assert!(l >= 0.0);
            prop_assert!((l + p[slot].ln()).abs() < 1e-12);
        }
    }
}
