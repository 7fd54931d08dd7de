use std::collections::HashMap;

use super::dataset::TrainingSample;
use super::text::PreprocessConfig;
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationSplit {
    pub train: Vec<TrainingSample>,
    pub valid: Vec<TrainingSample>,
    /// Validation labels that could not be covered by the training side
    /// within the repair budget.
    pub uncovered_labels: Vec<usize>,
}

/// Hold out `max(1, round(fraction * N))` samples for validation.
///
/// Samples are drawn by record after a seeded shuffle. Validation samples
/// carrying a label absent from the training side are swapped with
/// training samples (at most `4 * K` attempts, where K is the number of
/// distinct labels) so that validation only uses labels seen in training.
/// Both sides keep the input order.
pub fn split_validation(samples: Vec<TrainingSample>, config: &PreprocessConfig) -> Result<ValidationSplit> {
    config.validate()?;
    let n = samples.len();
    if n < 2 {
        return Err(Error::DegenerateSplit(format!("need at least 2 samples, got {n}")));
    }
    let n_valid = ((config.validation_fraction * n as f64).round() as usize).max(1);
    if n_valid >= n {
        return Err(Error::DegenerateSplit(format!(
            "validation would take {n_valid} of {n} samples, leaving no training data"
        )));
    }

    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = rng::seeded(config.seed);
    rng::shuffle(&mut rng, &mut order);
    let mut valid: Vec<usize> = order[..n_valid].to_vec();
    let mut train: Vec<usize> = order[n_valid..].to_vec();

    let mut train_count: HashMap<usize, usize> = HashMap::new();
    for &t in &train {
        for &l in &samples[t].labels {
            *train_count.entry(l).or_insert(0) += 1;
        }
    }
    let covered = |counts: &HashMap<usize, usize>, l: usize| counts.get(&l).copied().unwrap_or(0) > 0;

    let distinct_labels = {
        let mut all: Vec<usize> = samples.iter().flat_map(|s| s.labels.iter().copied()).collect();
        all.sort_unstable();
        all.dedup();
        all.len()
    };
    let mut budget = 4 * distinct_labels;
    let mut next_candidate = 0;

    for v_slot in valid.iter_mut() {
        let v = *v_slot;
        if samples[v].labels.iter().all(|&l| covered(&train_count, l)) {
            continue;
        }
        // Find a training sample whose labels stay covered once it leaves
        // the training side and `v` joins it.
        while budget > 0 && next_candidate < train.len() {
            budget -= 1;
            let t_slot = next_candidate;
            next_candidate += 1;
            let t = train[t_slot];
            let t_ok = samples[t].labels.iter().all(|l| {
                let after = train_count.get(l).copied().unwrap_or(0) - 1
                    + usize::from(samples[v].labels.binary_search(l).is_ok());
                after > 0
            });
            if !t_ok {
                continue;
            }
            for &l in &samples[t].labels {
                *train_count.get_mut(&l).expect("counted") -= 1;
            }
            for &l in &samples[v].labels {
                *train_count.entry(l).or_insert(0) += 1;
            }
            train[t_slot] = v;
            *v_slot = t;
            break;
        }
    }

    let mut uncovered: Vec<usize> = valid
        .iter()
        .flat_map(|&v| samples[v].labels.iter().copied())
        .filter(|&l| !covered(&train_count, l))
        .collect();
    uncovered.sort_unstable();
    uncovered.dedup();
    if !uncovered.is_empty() {
        log::warn!(
            "{} validation labels have no training occurrence after repair",
            uncovered.len()
        );
    }

    let mut is_valid = vec![false; n];
    for &v in &valid {
        is_valid[v] = true;
    }
    let mut train_out = Vec::with_capacity(n - n_valid);
    let mut valid_out = Vec::with_capacity(n_valid);
    for (i, s) in samples.into_iter().enumerate() {
        if is_valid[i] {
            valid_out.push(s);
        } else {
            train_out.push(s);
        }
    }
    Ok(ValidationSplit {
        train: train_out,
        valid: valid_out,
        uncovered_labels: uncovered,
    })
}
