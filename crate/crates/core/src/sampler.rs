//! Uniform word-then-image sampling and negative words.
//!
//! Word frequencies in catalog text are heavily skewed, so training pairs
//! are drawn word first: a word uniformly among the words that occur in at
//! least one sample, then an image uniformly among the samples whose bag
//! contains it.

use std::collections::HashSet;

use crate::corpus::TrainingSample;
use crate::error::{Error, Result};
use crate::rng::{self, Rng};

/// Word to sample-position postings.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InvertedIndex {
    postings: Vec<Vec<usize>>,
    active_words: Vec<usize>,
}

impl InvertedIndex {
    /// Postings for a vocabulary of `n_words`. Labels must be `< n_words`.
    pub fn build(samples: &[TrainingSample], n_words: usize) -> Result<Self> {
        let mut postings = vec![Vec::new(); n_words];
        for (pos, s) in samples.iter().enumerate() {
            for &w in &s.labels {
                let list: &mut Vec<usize> = postings
                    .get_mut(w)
                    .ok_or(Error::IndexOutOfRange { index: w, len: n_words })?;
                // bags are sets, but guard against unsorted input
                if list.last() != Some(&pos) {
                    list.push(pos);
                }
            }
        }
        let active_words = postings
            .iter()
            .enumerate()
            .filter(|(_, p)| !p.is_empty())
            .map(|(w, _)| w)
            .collect();
        Ok(Self { postings, active_words })
    }

    pub fn n_words(&self) -> usize {
        self.postings.len()
    }

    pub fn postings(&self, word: usize) -> &[usize] {
        &self.postings[word]
    }

    pub fn active_words(&self) -> &[usize] {
        &self.active_words
    }

    /// Draw a word uniformly over active words, then a sample uniformly
    /// over that word's postings. Returns `(word, sample_position)`.
    pub fn sample_pair(&self, rng: &mut Rng) -> Result<(usize, usize)> {
        if self.active_words.is_empty() {
            return Err(Error::EmptyIndex);
        }
        let word = self.active_words[rng::below(rng, self.active_words.len())];
        let list = &self.postings[word];
        Ok((word, list[rng::below(rng, list.len())]))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SamplerConfig {
    pub n_negatives: usize,
    pub seed: u64,
    /// Also keep the sample's other bag words out of the negatives.
    pub exclude_bag_words_from_negatives: bool,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            n_negatives: 50,
            seed: 0,
            exclude_bag_words_from_negatives: false,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self, n_words: usize) -> Result<()> {
        if self.n_negatives == 0 || self.n_negatives + 1 > n_words {
            return Err(Error::InvalidConfig(format!(
                "n_negatives must be in 1..={} for a vocabulary of {n_words}, got {}",
                n_words.saturating_sub(1),
                self.n_negatives
            )));
        }
        Ok(())
    }
}

/// Draw `config.n_negatives` distinct words other than `positive`, uniformly
/// without replacement. With `exclude_bag_words_from_negatives`, words of
/// `bag` are ineligible too. `bag` must be sorted ascending.
pub fn sample_negatives(
    positive: usize,
    bag: &[usize],
    config: &SamplerConfig,
    n_words: usize,
    rng: &mut Rng,
) -> Result<Vec<usize>> {
    if positive >= n_words {
        return Err(Error::IndexOutOfRange {
            index: positive,
            len: n_words,
        });
    }
    let excluded_from_bag = |w: usize| config.exclude_bag_words_from_negatives && bag.binary_search(&w).is_ok();
    let eligible = |w: usize| w != positive && !excluded_from_bag(w);
    let mut n_excluded = 1;
    if config.exclude_bag_words_from_negatives {
        n_excluded += bag.iter().filter(|&&w| w != positive && w < n_words).count();
    }
    let available = n_words - n_excluded;
    let requested = config.n_negatives;
    if requested > available {
        return Err(Error::NotEnoughCandidates { available, requested });
    }

    if 2 * requested <= available {
        // rejection sampling: every accepted draw is uniform over the
        // eligible words not yet chosen
        let mut chosen = Vec::with_capacity(requested);
        let mut seen = HashSet::with_capacity(requested);
        while chosen.len() < requested {
            let w = rng::below(rng, n_words);
            if eligible(w) && seen.insert(w) {
                chosen.push(w);
            }
        }
        Ok(chosen)
    } else {
        let mut pool: Vec<usize> = (0..n_words).filter(|&w| eligible(w)).collect();
        for i in 0..requested {
            let j = i + rng::below(rng, pool.len() - i);
            pool.swap(i, j);
        }
        pool.truncate(requested);
        Ok(pool)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(labels: Vec<usize>) -> TrainingSample {
        TrainingSample {
            record_id: String::new(),
            item_id: String::new(),
            input: vec![0.0],
            labels,
        }
    }

    #[test]
    fn postings_small() {
        let idx = InvertedIndex::build(&[sample(vec![0, 1]), sample(vec![1])], 3).unwrap();
        assert_eq!(idx.postings(0), &[0]);
        assert_eq!(idx.postings(1), &[0, 1]);
        assert!(idx.postings(2).is_empty());
        assert_eq!(idx.active_words(), &[0, 1]);
    }

    #[test]
    fn out_of_range_label() {
        assert!(matches!(
            InvertedIndex::build(&[sample(vec![5])], 3),
            Err(Error::IndexOutOfRange { index: 5, len: 3 })
        ));
    }

    #[test]
    fn postings_match_membership_scan() {
        let mut r = rng::seeded(17);
        let k = 40;
        let samples: Vec<_> = (0..500)
            .map(|_| {
                let mut l: Vec<usize> = (0..1 + rng::below(&mut r, 6)).map(|_| rng::below(&mut r, k)).collect();
                l.sort_unstable();
                l.dedup();
                sample(l)
            })
            .collect();
        let idx = InvertedIndex::build(&samples, k).unwrap();
        for w in 0..k {
            let scan: Vec<usize> = (0..samples.len()).filter(|&i| samples[i].labels.contains(&w)).collect();
            assert_eq!(idx.postings(w), scan.as_slice());
            assert_eq!(idx.active_words().contains(&w), !scan.is_empty());
        }
    }

    #[test]
    fn empty_index() {
        let idx = InvertedIndex::build(&[], 4).unwrap();
        assert!(matches!(idx.sample_pair(&mut rng::seeded(0)), Err(Error::EmptyIndex)));
    }

    #[test]
    fn single_pair() {
        let idx = InvertedIndex::build(&[sample(vec![2])], 3).unwrap();
        let mut r = rng::seeded(0);
        for _ in 0..20 {
            assert_eq!(idx.sample_pair(&mut r).unwrap(), (2, 0));
        }
    }

    #[test]
    fn drawn_sample_contains_word() {
        let samples: Vec<_> = (0..50).map(|i| sample(vec![i % 5, 5 + i % 3])).collect();
        let idx = InvertedIndex::build(&samples, 8).unwrap();
        let mut r = rng::seeded(1);
        for _ in 0..1000 {
            let (w, s) = idx.sample_pair(&mut r).unwrap();
            assert!(samples[s].labels.contains(&w));
        }
    }

    #[test]
    fn forced_negative_set() {
        let cfg = SamplerConfig {
            n_negatives: 2,
            ..Default::default()
        };
        let mut r = rng::seeded(0);
        for _ in 0..20 {
            let mut neg = sample_negatives(0, &[0], &cfg, 3, &mut r).unwrap();
            neg.sort_unstable();
            assert_eq!(neg, vec![1, 2]);
        }
    }

    #[test]
    fn negatives_contract() {
        let cfg = SamplerConfig {
            n_negatives: 5,
            ..Default::default()
        };
        let mut r = rng::seeded(4);
        for _ in 0..200 {
            let pos = rng::below(&mut r, 1000);
            let neg = sample_negatives(pos, &[pos], &cfg, 1000, &mut r).unwrap();
            assert_eq!(neg.len(), 5);
            assert!(!neg.contains(&pos));
            let set: HashSet<_> = neg.iter().collect();
            assert_eq!(set.len(), 5);
        }
    }

    #[test]
    fn bag_exclusion() {
        let cfg = SamplerConfig {
            n_negatives: 3,
            exclude_bag_words_from_negatives: true,
            ..Default::default()
        };
        let bag = [1, 2, 4];
        let mut r = rng::seeded(8);
        for _ in 0..100 {
            let neg = sample_negatives(2, &bag, &cfg, 7, &mut r).unwrap();
            assert!(neg.iter().all(|w| !bag.contains(w)));
        }
        let too_many = SamplerConfig { n_negatives: 5, ..cfg };
        assert!(matches!(
            sample_negatives(2, &bag, &too_many, 7, &mut r),
            Err(Error::NotEnoughCandidates {
                available: 4,
                requested: 5
            })
        ));
    }

    #[test]
    fn config_validation() {
        let cfg = SamplerConfig {
            n_negatives: 3,
            ..Default::default()
        };
        assert!(cfg.validate(4).is_ok());
        assert!(cfg.validate(3).is_err());
        assert!(SamplerConfig { n_negatives: 0, ..cfg }.validate(10).is_err());
    }

    #[test]
    fn deterministic_draws() {
        let samples: Vec<_> = (0..30).map(|i| sample(vec![i % 7])).collect();
        let idx = InvertedIndex::build(&samples, 7).unwrap();
        let draw = |seed| {
            let mut r = rng::seeded(seed);
            (0..100).map(|_| idx.sample_pair(&mut r).unwrap()).collect::<Vec<_>>()
        };
        assert_eq!(draw(3), draw(3));
    }
}
