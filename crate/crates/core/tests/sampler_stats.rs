use statrs::distribution::{ChiSquared, ContinuousCDF};

use weakcat::corpus::TrainingSample;
use weakcat::rng::{self, Rng};
use weakcat::sampler::{sample_negatives, InvertedIndex, SamplerConfig};

const ALPHA: f64 = 0.001;
const DRAWS: usize = 100_000;
const WORDS: usize = 50;

fn critical(dof: usize) -> f64 {
    ChiSquared::new(dof as f64).unwrap().inverse_cdf(1.0 - ALPHA)
}

fn pearson(observed: &[u64], expected: &[f64]) -> f64 {
    observed
        .iter()
        .zip(expected)
        .map(|(&o, &e)| (o as f64 - e).powi(2) / e)
        .sum()
}

/// Skewed corpus: word w appears in roughly (w + 1) of every 60 samples.
fn corpus(r: &mut Rng) -> Vec<TrainingSample> {
    (0..600)
        .map(|i| {
            let mut labels: Vec<usize> = (0..WORDS).filter(|&w| rng::below(r, 60) <= w).collect();
            if labels.is_empty() {
                labels.push(i % WORDS);
            }
            TrainingSample {
                record_id: format!("r{i}"),
                item_id: format!("i{i}"),
                input: vec![0.0],
                labels,
            }
        })
        .collect()
}

#[test]
fn word_marginal_is_uniform() {
    let mut r = rng::seeded(1);
    let samples = corpus(&mut r);
    let index = InvertedIndex::build(&samples, WORDS).unwrap();
    assert_eq!(index.active_words().len(), WORDS);
    let mut counts = vec![0u64; WORDS];
    let mut draw = rng::seeded(2);
    for _ in 0..DRAWS {
        counts[index.sample_pair(&mut draw).unwrap().0] += 1;
    }
    let expected = vec![DRAWS as f64 / WORDS as f64; WORDS];
    let stat = pearson(&counts, &expected);
    assert!(stat < critical(WORDS - 1), "chi2 {stat}");
}

#[test]
fn image_given_word_is_uniform() {
    let mut r = rng::seeded(3);
    // small postings so every cell has a healthy expected count
    let samples: Vec<TrainingSample> = (0..200)
        .map(|i| TrainingSample {
            record_id: format!("r{i}"),
            item_id: format!("i{i}"),
            input: vec![0.0],
            labels: {
                let mut l = vec![i % WORDS];
                let extra = rng::below(&mut r, WORDS);
                if extra != i % WORDS {
                    l.push(extra);
                }
                l.sort_unstable();
                l
            },
        })
        .collect();
    let index = InvertedIndex::build(&samples, WORDS).unwrap();
    let mut counts: Vec<Vec<u64>> = (0..WORDS).map(|w| vec![0; index.postings(w).len()]).collect();
    let mut draw = rng::seeded(4);
    for _ in 0..DRAWS {
        let (w, pos) = index.sample_pair(&mut draw).unwrap();
        let slot = index.postings(w).iter().position(|&p| p == pos).unwrap();
        counts[w][slot] += 1;
    }
    let mut stat = 0.0;
    let mut dof = 0;
    for c in &counts {
        let n: u64 = c.iter().sum();
        let expected = vec![n as f64 / c.len() as f64; c.len()];
        stat += pearson(c, &expected);
        dof += c.len() - 1;
    }
    assert!(stat < critical(dof), "chi2 {stat} on {dof} dof");
}

/// Inclusion counts of a without-replacement draw of `n` out of `m` eligible
/// words have covariance `p(1-p) m/(m-1) (I - 11ᵀ/m)` per draw, so the
/// rescaled Pearson statistic is chi-square with `m - 1` degrees of freedom.
fn negatives_uniform(n_negatives: usize, exclude_bag: bool, seed: u64) {
    let positive = 7;
    let bag = [3, 7, 20, 41];
    let cfg = SamplerConfig {
        n_negatives,
        seed,
        exclude_bag_words_from_negatives: exclude_bag,
    };
    let eligible: Vec<usize> = (0..WORDS)
        .filter(|&w| w != positive && !(exclude_bag && bag.contains(&w)))
        .collect();
    let m = eligible.len();
    let mut counts = vec![0u64; WORDS];
    let mut r = rng::seeded(seed);
    for _ in 0..DRAWS {
        let neg = sample_negatives(positive, &bag, &cfg, WORDS, &mut r).unwrap();
        assert_eq!(neg.len(), n_negatives);
        for w in neg {
            counts[w] += 1;
        }
    }
    for (w, &c) in counts.iter().enumerate() {
        if !eligible.contains(&w) {
            assert_eq!(c, 0, "ineligible word {w} drawn");
        }
    }
    let p = n_negatives as f64 / m as f64;
    let e = DRAWS as f64 * p;
    let scale = (1.0 - p) * m as f64 / (m as f64 - 1.0);
    let stat: f64 = eligible
        .iter()
        .map(|&w| (counts[w] as f64 - e).powi(2) / (e * scale))
        .sum();
    assert!(stat < critical(m - 1), "chi2 {stat} for n={n_negatives}");
}

#[test]
fn negatives_uniform_rejection_path() {
    negatives_uniform(5, false, 10);
}

#[test]
fn negatives_uniform_shuffle_path() {
    negatives_uniform(40, false, 11);
}

#[test]
fn negatives_uniform_excluding_bag() {
    negatives_uniform(10, true, 12);
}
