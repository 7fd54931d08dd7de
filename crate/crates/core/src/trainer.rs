//! SGD training with epoch accounting, a step learning-rate schedule, early
//! stopping and two-phase (head-only, then fine-tune) training.
//!
//! An "epoch" is a number of draws, not a pass over the data: each epoch
//! draws `ceil(N * epoch_fraction)` (word, image) pairs, rounded up to
//! whole batches. Each epoch uses its own RNG stream derived from the seed
//! and the epoch number, so a resumed run draws the same pairs as an
//! uninterrupted one.

use std::collections::BTreeMap;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::TrainingSample;
use crate::error::{Error, NonFiniteDump, Result};
use crate::model::{clamp_rounding, log_sum_exp, scores, EmbeddingModel, Gradients};
use crate::rng::{self, Rng};
use crate::sampler::{sample_negatives, InvertedIndex, SamplerConfig};

/// Stream id reserved for validation negatives; epochs use streams 1, 2, ...
const VALIDATION_STREAM: u64 = 0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    /// Evaluation of the starting parameters, before any update.
    Init,
    HeadOnly,
    FineTune,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValidationMode {
    /// Full softmax when `K <= full_softmax_max_words`, sampled otherwise.
    Auto,
    Full,
    Sampled,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub initial_lr: f64,
    pub lr_divisor: f64,
    pub lr_patience_epochs: usize,
    pub stop_patience_epochs: usize,
    pub head_only_epochs: usize,
    pub epoch_fraction: f64,
    pub improvement_epsilon: f64,
    pub seed: u64,
    /// Last epoch number to run, if any.
    pub max_epochs: Option<usize>,
    /// Restart from `initial_lr` when fine-tuning begins.
    pub reset_lr_on_fine_tune: bool,
    /// Score every word instead of sampled negatives (small K only).
    pub full_softmax: bool,
    pub validation: ValidationMode,
    pub full_softmax_max_words: usize,
    #[serde(skip)]
    pub sampler: SamplerConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 20,
            initial_lr: 0.1,
            lr_divisor: 10.0,
            lr_patience_epochs: 10,
            stop_patience_epochs: 20,
            head_only_epochs: 20,
            epoch_fraction: 0.1,
            improvement_epsilon: 1e-5,
            seed: 0,
            max_epochs: None,
            reset_lr_on_fine_tune: false,
            full_softmax: false,
            validation: ValidationMode::Auto,
            full_softmax_max_words: 512,
            sampler: SamplerConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, n_words: usize) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if !(self.epoch_fraction > 0.0 && self.epoch_fraction <= 1.0) {
            return bad(format!("epoch_fraction must be in (0, 1], got {}", self.epoch_fraction));
        }
        if self.lr_patience_epochs == 0 || self.stop_patience_epochs == 0 {
            return bad("patience values must be at least 1".into());
        }
        if !(self.initial_lr >= 0.0 && self.initial_lr.is_finite()) {
            return bad(format!(
                "initial_lr must be finite and non-negative, got {}",
                self.initial_lr
            ));
        }
        if self.lr_divisor.is_nan() || self.lr_divisor <= 0.0 {
            return bad(format!("lr_divisor must be positive, got {}", self.lr_divisor));
        }
        if !self.full_softmax || !use_full_validation(self, n_words) {
            self.sampler.validate(n_words)?;
        }
        Ok(())
    }

    /// SGD steps per epoch for a training set of `n` samples.
    pub fn steps_per_epoch(&self, n: usize) -> usize {
        let draws = (n as f64 * self.epoch_fraction).ceil() as usize;
        draws.div_ceil(self.batch_size)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub phase: Phase,
    pub learning_rate: f64,
    /// Mean per-sample training loss; `None` for the initial evaluation.
    pub train_loss: Option<f64>,
    pub validation_loss: f64,
    /// Wall-clock seconds; kept out of serialized logs so that reruns
    /// produce identical files.
    #[serde(skip)]
    pub wall_time_secs: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    NoImprovement,
    MaxEpochs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub records: Vec<EpochRecord>,
    pub best_validation: f64,
    pub best_epoch: usize,
    pub final_epoch: usize,
    /// Learning rate the next epoch would use; lets a resumed run continue
    /// the schedule.
    pub next_learning_rate: f64,
    pub stop_reason: StopReason,
}

/// Where a resumed run picks up.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResumePoint {
    pub epoch: usize,
    pub learning_rate: f64,
}

/// Candidate list with the positive word in slot 0.
fn candidates_for(
    word: usize,
    bag: &[usize],
    n_words: usize,
    full_softmax: bool,
    sampler: &SamplerConfig,
    rng: &mut Rng,
) -> Result<(Vec<usize>, usize)> {
    if full_softmax {
        Ok(((0..n_words).collect(), word))
    } else {
        let mut cands = Vec::with_capacity(sampler.n_negatives + 1);
        cands.push(word);
        cands.extend(sample_negatives(word, bag, sampler, n_words, rng)?);
        Ok((cands, 0))
    }
}

/// Run one epoch of SGD in place and return the mean per-sample loss.
///
/// In the head-only phase the extractor parameters are frozen.
pub fn run_epoch(
    model: &mut EmbeddingModel,
    index: &InvertedIndex,
    samples: &[TrainingSample],
    config: &TrainConfig,
    phase: Phase,
    learning_rate: f64,
    rng: &mut Rng,
) -> Result<f64> {
    run_epoch_numbered(model, index, samples, config, phase, learning_rate, rng, 0)
}

#[allow(clippy::too_many_arguments)]
fn run_epoch_numbered(
    model: &mut EmbeddingModel,
    index: &InvertedIndex,
    samples: &[TrainingSample],
    config: &TrainConfig,
    phase: Phase,
    learning_rate: f64,
    rng: &mut Rng,
    epoch: usize,
) -> Result<f64> {
    let n_words = model.n_words();
    let steps = config.steps_per_epoch(samples.len());
    let train_extractor = phase == Phase::FineTune && model.extractor.n_params() > 0;
    let mut total_loss = 0.0;
    let mut n_draws = 0usize;

    for step in 0..steps {
        // draws are sequential so the RNG stream does not depend on threading
        let mut batch = Vec::with_capacity(config.batch_size);
        for _ in 0..config.batch_size {
            let (word, pos) = index.sample_pair(rng)?;
            let (cands, slot) = candidates_for(
                word,
                &samples[pos].labels,
                n_words,
                config.full_softmax,
                &config.sampler,
                rng,
            )?;
            batch.push((word, pos, cands, slot));
        }
        let grads: Vec<Gradients> = {
            let m = &*model;
            batch
                .par_iter()
                .map(|(_, pos, cands, slot)| m.gradients(&samples[*pos].input, *slot, cands, train_extractor))
                .collect::<Result<_>>()?
        };

        for (g, (word, pos, _, _)) in grads.iter().zip(&batch) {
            if !g.loss.is_finite() {
                return Err(Error::NonFiniteLoss(Box::new(NonFiniteDump {
                    epoch,
                    step,
                    learning_rate,
                    word: Some(*word),
                    record_id: samples[*pos].record_id.clone(),
                    loss: g.loss,
                    feature_norm: g.feature_norm,
                    max_abs_word_weight: max_abs(model.words.as_slice()),
                    max_abs_extractor_param: max_abs(model.extractor.params()),
                })));
            }
            total_loss += g.loss;
        }
        n_draws += grads.len();

        // reduce in batch order; BTreeMap keeps column updates ordered
        let scale = learning_rate / config.batch_size as f64;
        let mut column_sums: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
        for g in &grads {
            for (word, col) in &g.columns {
                let acc = column_sums.entry(*word).or_insert_with(|| vec![0.0; col.len()]);
                acc.iter_mut().zip(col).for_each(|(a, c)| *a += c);
            }
        }
        if train_extractor {
            let mut theta_sum = vec![0.0; model.extractor.n_params()];
            for g in &grads {
                theta_sum.iter_mut().zip(&g.extractor).for_each(|(a, c)| *a += c);
            }
            model
                .extractor
                .params_mut()
                .iter_mut()
                .zip(&theta_sum)
                .for_each(|(p, g)| *p -= scale * g);
        }
        for (word, sum) in column_sums {
            model
                .words
                .column_mut(word)
                .iter_mut()
                .zip(&sum)
                .for_each(|(p, g)| *p -= scale * g);
        }
    }
    Ok(if n_draws == 0 { 0.0 } else { total_loss / n_draws as f64 })
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn use_full_validation(config: &TrainConfig, n_words: usize) -> bool {
    match config.validation {
        ValidationMode::Full => true,
        ValidationMode::Sampled => false,
        ValidationMode::Auto => n_words <= config.full_softmax_max_words,
    }
}

/// Mean loss over every (validation sample, bag label) pair.
///
/// Uses the full softmax for small vocabularies and otherwise a negative
/// set drawn from a fixed RNG stream, so repeated calls on the same model
/// return the same value.
pub fn validate(model: &EmbeddingModel, valid: &[TrainingSample], config: &TrainConfig) -> Result<f64> {
    if valid.is_empty() {
        return Err(Error::InvalidInput("validation set is empty".into()));
    }
    let n_words = model.n_words();
    let full = use_full_validation(config, n_words);
    let mut rng = rng::seeded_stream(config.seed, VALIDATION_STREAM);
    let mut total = 0.0;
    let mut terms = 0usize;
    for s in valid {
        let z = model.extract(&s.input)?;
        if full {
            let logits = model.words.full_scores(&z);
            let lse = log_sum_exp(&logits);
            for &l in &s.labels {
                total += clamp_rounding(lse - logits[l]);
                terms += 1;
            }
        } else {
            for &l in &s.labels {
                let (cands, slot) = candidates_for(l, &s.labels, n_words, false, &config.sampler, &mut rng)?;
                let logits = scores(&z, &cands, &model.words)?;
                total += clamp_rounding(log_sum_exp(&logits) - logits[slot]);
                terms += 1;
            }
        }
    }
    Ok(total / terms as f64)
}

/// Train with the full protocol and return the best-validation parameters.
///
/// Epochs `1..=head_only_epochs` update only `W`; later epochs also update
/// the extractor. After every epoch the validation loss is compared to the
/// best so far (improvement means lower by more than
/// `improvement_epsilon`). After `lr_patience_epochs` epochs without
/// improvement the learning rate is divided by `lr_divisor` and the
/// learning-rate counter restarts; after `stop_patience_epochs` epochs
/// without improvement training stops. Both counters reset on improvement.
pub fn fit(
    train: &[TrainingSample],
    valid: &[TrainingSample],
    model: EmbeddingModel,
    config: &TrainConfig,
) -> Result<(EmbeddingModel, TrainLog)> {
    fit_with(train, valid, model, config, None, |_| {})
}

/// [`fit`] with an optional resume point and a per-epoch callback.
pub fn fit_with(
    train: &[TrainingSample],
    valid: &[TrainingSample],
    mut model: EmbeddingModel,
    config: &TrainConfig,
    resume: Option<ResumePoint>,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<(EmbeddingModel, TrainLog)> {
    let n_words = model.n_words();
    config.validate(n_words)?;
    if train.is_empty() {
        return Err(Error::InvalidInput("training set is empty".into()));
    }
    let index = InvertedIndex::build(train, n_words)?;
    let start_epoch = resume.map_or(0, |r| r.epoch);
    let mut lr = resume.map_or(config.initial_lr, |r| r.learning_rate);

    let clock = Instant::now();
    let initial = validate(&model, valid, config)?;
    let mut records = vec![EpochRecord {
        epoch: start_epoch,
        phase: Phase::Init,
        learning_rate: lr,
        train_loss: None,
        validation_loss: initial,
        wall_time_secs: clock.elapsed().as_secs_f64(),
    }];
    on_epoch(&records[0]);

    let mut best = initial;
    let mut best_epoch = start_epoch;
    let mut best_model = model.clone();
    let mut lr_wait = 0;
    let mut stop_wait = 0;
    let mut epoch = start_epoch;
    let stop_reason = loop {
        if config.max_epochs.is_some_and(|m| epoch >= m) {
            break StopReason::MaxEpochs;
        }
        epoch += 1;
        let phase = if epoch <= config.head_only_epochs {
            Phase::HeadOnly
        } else {
            Phase::FineTune
        };
        if config.reset_lr_on_fine_tune && epoch == config.head_only_epochs + 1 && epoch > 1 {
            lr = config.initial_lr;
        }
        let started = Instant::now();
        let mut rng = rng::seeded_stream(config.seed, epoch as u64);
        let train_loss = run_epoch_numbered(&mut model, &index, train, config, phase, lr, &mut rng, epoch)?;
        let validation_loss = validate(&model, valid, config)?;
        if !validation_loss.is_finite() {
            return Err(Error::NonFiniteLoss(Box::new(NonFiniteDump {
                epoch,
                step: config.steps_per_epoch(train.len()),
                learning_rate: lr,
                word: None,
                record_id: "<validation>".into(),
                loss: validation_loss,
                feature_norm: f64::NAN,
                max_abs_word_weight: max_abs(model.words.as_slice()),
                max_abs_extractor_param: max_abs(model.extractor.params()),
            })));
        }
        let record = EpochRecord {
            epoch,
            phase,
            learning_rate: lr,
            train_loss: Some(train_loss),
            validation_loss,
            wall_time_secs: started.elapsed().as_secs_f64(),
        };
        on_epoch(&record);
        records.push(record);

        if validation_loss < best - config.improvement_epsilon {
            best = validation_loss;
            best_epoch = epoch;
            best_model = model.clone();
            lr_wait = 0;
            stop_wait = 0;
        } else {
            lr_wait += 1;
            stop_wait += 1;
            if stop_wait >= config.stop_patience_epochs {
                break StopReason::NoImprovement;
            }
            if lr_wait >= config.lr_patience_epochs {
                lr /= config.lr_divisor;
                lr_wait = 0;
            }
        }
    };

    Ok((
        best_model,
        TrainLog {
            records,
            best_validation: best,
            best_epoch,
            final_epoch: epoch,
            next_learning_rate: lr,
            stop_reason,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{FeatureExtractor, WordEmbeddingMatrix};

    fn sample(id: usize, input: Vec<f64>, labels: Vec<usize>) -> TrainingSample {
        TrainingSample {
            record_id: format!("r{id}"),
            item_id: format!("i{id}"),
            input,
            labels,
        }
    }

    fn toy(n: usize, n_words: usize) -> Vec<TrainingSample> {
        let mut r = rng::seeded(99);
        (0..n)
            .map(|i| {
                let c = i % n_words;
                let input: Vec<f64> = (0..4)
                    .map(|d| if d == c % 4 { 1.0 } else { 0.0 } + 0.1 * rng::normal(&mut r))
                    .collect();
                sample(i, input, vec![c])
            })
            .collect()
    }

    fn linear_model(n_words: usize, seed: u64) -> EmbeddingModel {
        let mut r = rng::seeded(seed);
        let ex = FeatureExtractor::linear(4, 3, &mut r);
        EmbeddingModel::initialize(ex, n_words, [0; 32], &mut r)
    }

    fn small_config() -> TrainConfig {
        TrainConfig {
            sampler: SamplerConfig {
                n_negatives: 2,
                ..Default::default()
            },
            ..Default::default()
        }
    }

    #[test]
    fn step_count() {
        let cfg = TrainConfig::default();
        // ceil(ceil(1000 * 0.1) / 20) = 5
        assert_eq!(cfg.steps_per_epoch(1000), 5);
        // ceil(ceil(101 * 0.1) / 20) = ceil(11 / 20) = 1
        assert_eq!(cfg.steps_per_epoch(101), 1);
        assert_eq!(cfg.steps_per_epoch(4001), 21);
    }

    #[test]
    fn zero_learning_rate_changes_nothing() {
        let data = toy(40, 4);
        let index = InvertedIndex::build(&data, 4).unwrap();
        let mut m = linear_model(4, 1);
        let before = m.clone();
        let mut r = rng::seeded(0);
        run_epoch(&mut m, &index, &data, &small_config(), Phase::FineTune, 0.0, &mut r).unwrap();
        assert_eq!(m, before);
    }

    #[test]
    fn head_only_freezes_extractor() {
        let data = toy(40, 4);
        let index = InvertedIndex::build(&data, 4).unwrap();
        let mut m = linear_model(4, 1);
        let theta = m.extractor.params().to_vec();
        let w = m.words.clone();
        let mut r = rng::seeded(0);
        run_epoch(&mut m, &index, &data, &small_config(), Phase::HeadOnly, 0.5, &mut r).unwrap();
        assert_eq!(m.extractor.params(), theta.as_slice());
        assert_ne!(m.words, w);
    }

    #[test]
    fn epoch_is_deterministic() {
        let data = toy(40, 4);
        let index = InvertedIndex::build(&data, 4).unwrap();
        let run = || {
            let mut m = linear_model(4, 1);
            let mut r = rng::seeded(5);
            run_epoch(&mut m, &index, &data, &small_config(), Phase::FineTune, 0.1, &mut r).unwrap();
            m
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn single_sample_loss_decreases() {
        let data = vec![sample(0, vec![1.0, 0.5, -0.5, 0.2], vec![1])];
        let index = InvertedIndex::build(&data, 3).unwrap();
        let mut m = linear_model(3, 2);
        let cfg = TrainConfig {
            full_softmax: true,
            batch_size: 1,
            epoch_fraction: 1.0,
            ..Default::default()
        };
        let mut prev = f64::INFINITY;
        for epoch in 0..50 {
            let mut r = rng::seeded(epoch);
            run_epoch(&mut m, &index, &data, &cfg, Phase::FineTune, 0.1, &mut r).unwrap();
            let l = validate(&m, &data, &cfg).unwrap();
            assert!(l < prev, "epoch {epoch}: {l} >= {prev}");
            prev = l;
        }
    }

    #[test]
    fn validation_deterministic_and_zero_weights() {
        let data = toy(30, 6);
        let mut m = linear_model(6, 3);
        let cfg = TrainConfig {
            validation: ValidationMode::Sampled,
            ..small_config()
        };
        assert_eq!(validate(&m, &data, &cfg).unwrap(), validate(&m, &data, &cfg).unwrap());

        m.words = WordEmbeddingMatrix::zeros(3, 6);
        let sampled = validate(&m, &data, &cfg).unwrap();
        assert!((sampled - 3f64.ln()).abs() < 1e-12);
        let full = validate(
            &m,
            &data,
            &TrainConfig {
                validation: ValidationMode::Full,
                ..cfg
            },
        )
        .unwrap();
        assert!((full - 6f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn sampled_validation_bounds() {
        // every sampled term drops denominator mass, so it never exceeds the
        // full-softmax term; with all K-1 negatives the two coincide
        let data = toy(30, 6);
        let m = linear_model(6, 3);
        let full = validate(
            &m,
            &data,
            &TrainConfig {
                validation: ValidationMode::Full,
                ..small_config()
            },
        )
        .unwrap();
        for n_neg in 1..5 {
            let cfg = TrainConfig {
                validation: ValidationMode::Sampled,
                sampler: SamplerConfig {
                    n_negatives: n_neg,
                    ..Default::default()
                },
                ..Default::default()
            };
            assert!(validate(&m, &data, &cfg).unwrap() <= full + 1e-12);
        }
        let all = TrainConfig {
            validation: ValidationMode::Sampled,
            sampler: SamplerConfig {
                n_negatives: 5,
                ..Default::default()
            },
            ..Default::default()
        };
        assert!((validate(&m, &data, &all).unwrap() - full).abs() < 1e-12);
    }

    #[test]
    fn fit_returns_best_and_is_deterministic() {
        let data = toy(200, 4);
        let valid = toy(20, 4);
        let cfg = TrainConfig {
            max_epochs: Some(30),
            head_only_epochs: 5,
            epoch_fraction: 0.5,
            ..small_config()
        };
        let (m1, log1) = fit(&data, &valid, linear_model(4, 7), &cfg).unwrap();
        let (m2, log2) = fit(&data, &valid, linear_model(4, 7), &cfg).unwrap();
        assert_eq!(m1, m2);
        assert_eq!(log1.records.len(), log2.records.len());
        let min = log1
            .records
            .iter()
            .map(|r| r.validation_loss)
            .fold(f64::INFINITY, f64::min);
        assert_eq!(log1.best_validation, min);
        assert_eq!(validate(&m1, &valid, &cfg).unwrap(), min);
        assert!(log1.best_validation < 0.5 * log1.records[0].validation_loss);
    }

    #[test]
    fn rejects_bad_config() {
        let data = toy(10, 4);
        let bad = TrainConfig {
            batch_size: 0,
            ..small_config()
        };
        assert!(matches!(
            fit(&data, &data, linear_model(4, 1), &bad),
            Err(Error::InvalidConfig(_))
        ));
        let bad = TrainConfig {
            epoch_fraction: 1.5,
            ..small_config()
        };
        assert!(fit(&data, &data, linear_model(4, 1), &bad).is_err());
        let bad = TrainConfig::default(); // 50 negatives for K = 4
        assert!(fit(&data, &data, linear_model(4, 1), &bad).is_err());
    }

    #[test]
    fn non_finite_loss_aborts() {
        let data = toy(20, 4);
        let index = InvertedIndex::build(&data, 4).unwrap();
        let mut m = linear_model(4, 1);
        m.words.as_mut_slice()[0] = f64::INFINITY;
        m.words.as_mut_slice()[3] = f64::INFINITY;
        m.words.as_mut_slice()[6] = f64::INFINITY;
        m.words.as_mut_slice()[9] = f64::INFINITY;
        let mut r = rng::seeded(0);
        let err = run_epoch(&mut m, &index, &data, &small_config(), Phase::FineTune, 0.1, &mut r).unwrap_err();
        assert!(err.is_numeric());
        assert!(err.to_string().contains("max |W|"));
    }
}
