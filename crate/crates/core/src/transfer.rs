//! Linear probes on frozen visual features and the tagging metrics: top-k
//! class accuracy, top-k attribute recall and ROC-AUC.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, NonFiniteDump, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeHead {
    /// Single-label classification with cross-entropy.
    Softmax,
    /// Multi-label prediction with mean binary cross-entropy.
    Sigmoid,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ProbeTargets {
    Classes {
        labels: Vec<usize>,
        n_classes: usize,
    },
    Attributes {
        labels: Vec<Vec<bool>>,
        n_attributes: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeDataset {
    pub features: Vec<Vec<f64>>,
    pub targets: ProbeTargets,
}

impl ProbeDataset {
    pub fn classes(features: Vec<Vec<f64>>, labels: Vec<usize>, n_classes: usize) -> Result<Self> {
        let data = Self {
            features,
            targets: ProbeTargets::Classes { labels, n_classes },
        };
        data.validate()?;
        Ok(data)
    }

    /// `labels[i]` lists the positive attribute indices of sample `i`.
    pub fn attributes(features: Vec<Vec<f64>>, labels: &[Vec<usize>], n_attributes: usize) -> Result<Self> {
        let mut matrix = Vec::with_capacity(labels.len());
        for (i, row) in labels.iter().enumerate() {
            let mut bits = vec![false; n_attributes];
            for &a in row {
                if a >= n_attributes {
                    return Err(Error::InvalidInput(format!(
                        "sample {i}: attribute {a} out of range ({n_attributes} attributes)"
                    )));
                }
                bits[a] = true;
            }
            matrix.push(bits);
        }
        let data = Self {
            features,
            targets: ProbeTargets::Attributes {
                labels: matrix,
                n_attributes,
            },
        };
        data.validate()?;
        Ok(data)
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.first().map_or(0, Vec::len)
    }

    pub fn n_outputs(&self) -> usize {
        match &self.targets {
            ProbeTargets::Classes { n_classes, .. } => *n_classes,
            ProbeTargets::Attributes { n_attributes, .. } => *n_attributes,
        }
    }

    pub fn head(&self) -> ProbeHead {
        match self.targets {
            ProbeTargets::Classes { .. } => ProbeHead::Softmax,
            ProbeTargets::Attributes { .. } => ProbeHead::Sigmoid,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.features.len() < 2 {
            return Err(Error::InvalidInput("probe dataset needs at least 2 samples".into()));
        }
        let dim = self.dim();
        if dim == 0 {
            return Err(Error::InvalidInput("probe features are empty".into()));
        }
        for f in &self.features {
            if f.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    actual: f.len(),
                });
            }
            if f.iter().any(|x| !x.is_finite()) {
                return Err(Error::InvalidInput("probe features must be finite".into()));
            }
        }
        let n_outputs = self.n_outputs();
        if n_outputs == 0 {
            return Err(Error::InvalidInput("probe needs at least one output".into()));
        }
        match &self.targets {
            ProbeTargets::Classes { labels, n_classes } => {
                if labels.len() != self.features.len() {
                    return Err(Error::DimensionMismatch {
                        expected: self.features.len(),
                        actual: labels.len(),
                    });
                }
                if let Some(&bad) = labels.iter().find(|&&c| c >= *n_classes) {
                    return Err(Error::IndexOutOfRange {
                        index: bad,
                        len: *n_classes,
                    });
                }
            }
            ProbeTargets::Attributes { labels, n_attributes } => {
                if labels.len() != self.features.len() {
                    return Err(Error::DimensionMismatch {
                        expected: self.features.len(),
                        actual: labels.len(),
                    });
                }
                if let Some(row) = labels.iter().find(|r| r.len() != *n_attributes) {
                    return Err(Error::DimensionMismatch {
                        expected: *n_attributes,
                        actual: row.len(),
                    });
                }
            }
        }
        Ok(())
    }
}

/// Affine layer: `scores = Wᵀx + b`, with `W` stored column-major (one
/// column of length `dim` per output).
#[derive(Debug, Clone, PartialEq)]
pub struct LinearProbe {
    pub head: ProbeHead,
    pub dim: usize,
    pub n_outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl LinearProbe {
    pub fn zeros(head: ProbeHead, dim: usize, n_outputs: usize) -> Self {
        Self {
            head,
            dim,
            n_outputs,
            weights: vec![0.0; dim * n_outputs],
            bias: vec![0.0; n_outputs],
        }
    }

    pub fn column(&self, j: usize) -> &[f64] {
        &self.weights[j * self.dim..(j + 1) * self.dim]
    }

    /// Raw (pre-activation) scores.
    pub fn scores(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n_outputs)
            .map(|j| self.bias[j] + self.column(j).iter().zip(x).map(|(w, v)| w * v).sum::<f64>())
            .collect()
    }

    /// Class probabilities (softmax) or per-attribute probabilities (sigmoid).
    pub fn predict(&self, x: &[f64]) -> Vec<f64> {
        let s = self.scores(x);
        match self.head {
            ProbeHead::Softmax => softmax(&s),
            ProbeHead::Sigmoid => s.iter().map(|&v| sigmoid(v)).collect(),
        }
    }

    fn check(&self, data: &ProbeDataset) -> Result<()> {
        if data.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: data.dim(),
            });
        }
        if data.n_outputs() != self.n_outputs {
            return Err(Error::DimensionMismatch {
                expected: self.n_outputs,
                actual: data.n_outputs(),
            });
        }
        if data.head() != self.head {
            return Err(Error::InvalidInput(format!(
                "{:?} probe cannot be used with {:?} targets",
                self.head,
                data.head()
            )));
        }
        Ok(())
    }

    fn max_abs_weight(&self) -> f64 {
        self.weights.iter().chain(&self.bias).fold(0.0, |m, v| m.max(v.abs()))
    }
}

fn softmax(s: &[f64]) -> Vec<f64> {
    let m = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = s.iter().map(|v| (v - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}

fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// log(1 + e^v) without overflow.
fn softplus(v: f64) -> f64 {
    if v > 0.0 {
        v + (-v).exp().ln_1p()
    } else {
        v.exp().ln_1p()
    }
}

/// Per-sample loss and its gradient with respect to the scores.
fn score_loss(probe: &LinearProbe, scores: &[f64], data: &ProbeDataset, i: usize) -> (f64, Vec<f64>) {
    match &data.targets {
        ProbeTargets::Classes { labels, .. } => {
            let p = softmax(scores);
            let y = labels[i];
            let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + scores.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            let mut g = p;
            g[y] -= 1.0;
            (lse - scores[y], g)
        }
        ProbeTargets::Attributes { labels, .. } => {
            let a = probe.n_outputs as f64;
            let row = &labels[i];
            let mut loss = 0.0;
            let mut g = Vec::with_capacity(scores.len());
            for (&s, &y) in scores.iter().zip(row) {
                // -y log σ(s) - (1-y) log(1-σ(s))
                loss += if y { softplus(-s) } else { softplus(s) };
                g.push((sigmoid(s) - if y { 1.0 } else { 0.0 }) / a);
            }
            (loss / a, g)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeGradients {
    pub loss: f64,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Mean loss over `batch` and its gradient with respect to the probe
/// parameters.
pub fn probe_gradients(probe: &LinearProbe, data: &ProbeDataset, batch: &[usize]) -> Result<ProbeGradients> {
    probe.check(data)?;
    let n = batch.len().max(1) as f64;
    let mut out = ProbeGradients {
        loss: 0.0,
        weights: vec![0.0; probe.weights.len()],
        bias: vec![0.0; probe.n_outputs],
    };
    for &i in batch {
        let x = &data.features[i];
        let (loss, g) = score_loss(probe, &probe.scores(x), data, i);
        out.loss += loss / n;
        for (j, gj) in g.iter().enumerate() {
            out.bias[j] += gj / n;
            let col = &mut out.weights[j * probe.dim..(j + 1) * probe.dim];
            for (w, v) in col.iter_mut().zip(x) {
                *w += gj * v / n;
            }
        }
    }
    Ok(out)
}

/// Mean loss over the whole dataset.
pub fn probe_loss(probe: &LinearProbe, data: &ProbeDataset) -> Result<f64> {
    probe.check(data)?;
    let total: f64 = (0..data.len())
        .into_par_iter()
        .map(|i| score_loss(probe, &probe.scores(&data.features[i]), data, i).0)
        .collect::<Vec<_>>()
        .iter()
        .sum();
    Ok(total / data.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProbeConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            batch_size: 32,
            epochs: 200,
            seed: 0,
        }
    }
}

impl ProbeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig("probe learning rate must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("probe batch size must be at least 1".into()));
        }
        if self.epochs == 0 {
            return Err(Error::InvalidConfig("probe epochs must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeFit {
    pub probe: LinearProbe,
    /// Mean training loss of each epoch, as seen during the epoch.
    pub epoch_losses: Vec<f64>,
}

/// Mini-batch SGD from a zero initialization. Samples are reshuffled every
/// epoch from a stream derived from the seed.
pub fn train_probe(data: &ProbeDataset, head: ProbeHead, cfg: &ProbeConfig) -> Result<ProbeFit> {
    cfg.validate()?;
    data.validate()?;
    let mut probe = LinearProbe::zeros(head, data.dim(), data.n_outputs());
    probe.check(data)?;
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let mut r = rng::seeded_stream(cfg.seed, epoch as u64);
        rng::shuffle(&mut r, &mut order);
        let mut total = 0.0;
        for (step, batch) in order.chunks(cfg.batch_size).enumerate() {
            let g = probe_gradients(&probe, data, batch)?;
            if !g.loss.is_finite() {
                return Err(Error::NonFiniteLoss(Box::new(NonFiniteDump {
                    epoch,
                    step,
                    learning_rate: cfg.learning_rate,
                    word: None,
                    record_id: format!("sample {}", batch[0]),
                    loss: g.loss,
                    feature_norm: data.features[batch[0]].iter().map(|v| v * v).sum::<f64>().sqrt(),
                    max_abs_word_weight: probe.max_abs_weight(),
                    max_abs_extractor_param: 0.0,
                })));
            }
            total += g.loss * batch.len() as f64;
            for (w, d) in probe.weights.iter_mut().zip(&g.weights) {
                *w -= cfg.learning_rate * d;
            }
            for (b, d) in probe.bias.iter_mut().zip(&g.bias) {
                *b -= cfg.learning_rate * d;
            }
        }
        let mean = total / data.len() as f64;
        log::debug!("probe epoch {epoch}: loss {mean:.6}");
        epoch_losses.push(mean);
    }
    Ok(ProbeFit { probe, epoch_losses })
}

/// Outputs ordered by descending score, ties by ascending index.
fn ranked(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
    });
    idx
}

/// Fraction of samples whose true class is among the `k` best-scored classes.
pub fn topk_class_accuracy(probe: &LinearProbe, data: &ProbeDataset, ks: &[usize]) -> Result<BTreeMap<usize, f64>> {
    probe.check(data)?;
    let ProbeTargets::Classes { labels, .. } = &data.targets else {
        return Err(Error::InvalidInput("top-k accuracy needs class targets".into()));
    };
    let ranks: Vec<usize> = data
        .features
        .par_iter()
        .zip(labels)
        .map(|(x, &y)| {
            let s = probe.scores(x);
            // 1-based rank of the true class
            1 + s
                .iter()
                .enumerate()
                .filter(|&(j, &v)| v > s[y] || (v == s[y] && j < y))
                .count()
        })
        .collect();
    Ok(ks
        .iter()
        .map(|&k| {
            let hits = ranks.iter().filter(|&&r| r <= k).count();
            (k, hits as f64 / ranks.len() as f64)
        })
        .collect())
}

/// How samples without any positive attribute in a group are treated.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmptyGroupPolicy {
    #[default]
    Skip,
    CountZero,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupRecall {
    /// Samples that entered the mean.
    pub evaluated: usize,
    /// Empty when no sample was evaluated.
    pub recall: BTreeMap<usize, f64>,
}

/// Top-k attribute recall, per group when `groups` maps each attribute to a
/// group id and over all attributes (group 0) otherwise.
pub fn topk_attribute_recall(
    probe: &LinearProbe,
    data: &ProbeDataset,
    ks: &[usize],
    groups: Option<&[usize]>,
    policy: EmptyGroupPolicy,
) -> Result<BTreeMap<usize, GroupRecall>> {
    probe.check(data)?;
    let ProbeTargets::Attributes { labels, n_attributes } = &data.targets else {
        return Err(Error::InvalidInput("top-k recall needs attribute targets".into()));
    };
    let assignment: Vec<usize> = match groups {
        Some(g) if g.len() != *n_attributes => {
            return Err(Error::DimensionMismatch {
                expected: *n_attributes,
                actual: g.len(),
            })
        }
        Some(g) => g.to_vec(),
        None => vec![0; *n_attributes],
    };
    let mut members: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (a, &g) in assignment.iter().enumerate() {
        members.entry(g).or_default().push(a);
    }

    // per sample, per group: Some(recall at each k) or None if skipped
    let per_sample: Vec<Vec<Option<Vec<f64>>>> = data
        .features
        .par_iter()
        .zip(labels)
        .map(|(x, truth)| {
            let s = probe.scores(x);
            members
                .values()
                .map(|attrs| {
                    let positives = attrs.iter().filter(|&&a| truth[a]).count();
                    if positives == 0 {
                        return match policy {
                            EmptyGroupPolicy::Skip => None,
                            EmptyGroupPolicy::CountZero => Some(vec![0.0; ks.len()]),
                        };
                    }
                    let local: Vec<f64> = attrs.iter().map(|&a| s[a]).collect();
                    let order = ranked(&local);
                    Some(
                        ks.iter()
                            .map(|&k| {
                                let found = order.iter().take(k).filter(|&&i| truth[attrs[i]]).count();
                                found as f64 / positives as f64
                            })
                            .collect(),
                    )
                })
                .collect()
        })
        .collect();

    Ok(members
        .keys()
        .enumerate()
        .map(|(gi, &group)| {
            let rows: Vec<&Vec<f64>> = per_sample.iter().filter_map(|r| r[gi].as_ref()).collect();
            let recall = if rows.is_empty() {
                BTreeMap::new()
            } else {
                ks.iter()
                    .enumerate()
                    .map(|(ki, &k)| (k, rows.iter().map(|r| r[ki]).sum::<f64>() / rows.len() as f64))
                    .collect()
            };
            (
                group,
                GroupRecall {
                    evaluated: rows.len(),
                    recall,
                },
            )
        })
        .collect())
}

/// Area under the ROC curve: the probability that a random positive
/// outscores a random negative, ties counting one half. Rank-sum form.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: labels.len(),
            actual: scores.len(),
        });
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::InvalidInput("AUC scores contain NaN".into()));
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::DegenerateLabels);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap_or(Ordering::Equal));
    let mut pos_rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1..=j+1 share their mean
        let rank = (i + j + 2) as f64 / 2.0;
        let positives = order[i..=j].iter().filter(|&&o| labels[o]).count();
        pos_rank_sum += rank * positives as f64;
        i = j + 1;
    }
    let u = pos_rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

/// One-vs-rest AUC of each output's score; `None` where the labels of that
/// output are single-class.
pub fn auc_per_output(probe: &LinearProbe, data: &ProbeDataset) -> Result<Vec<Option<f64>>> {
    probe.check(data)?;
    let scores: Vec<Vec<f64>> = data.features.par_iter().map(|x| probe.scores(x)).collect();
    (0..probe.n_outputs)
        .into_par_iter()
        .map(|j| {
            let s: Vec<f64> = scores.iter().map(|r| r[j]).collect();
            let l: Vec<bool> = match &data.targets {
                ProbeTargets::Classes { labels, .. } => labels.iter().map(|&c| c == j).collect(),
                ProbeTargets::Attributes { labels, .. } => labels.iter().map(|r| r[j]).collect(),
            };
            match roc_auc(&s, &l) {
                Ok(v) => Ok(Some(v)),
                Err(Error::DegenerateLabels) => Ok(None),
                Err(e) => Err(e),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute_auc(scores: &[f64], labels: &[bool]) -> f64 {
        let mut num = 0.0;
        let mut pairs = 0.0;
        for (i, &li) in labels.iter().enumerate() {
            if !li {
                continue;
            }
            for (j, &lj) in labels.iter().enumerate() {
                if lj {
                    continue;
                }
                pairs += 1.0;
                if scores[i] > scores[j] {
                    num += 1.0;
                } else if scores[i] == scores[j] {
                    num += 0.5;
                }
            }
        }
        num / pairs
    }

    #[test]
    fn auc_examples() {
        let l = [true, true, false, false];
        assert_eq!(roc_auc(&[0.9, 0.8, 0.2, 0.1], &l).unwrap(), 1.0);
        assert_eq!(roc_auc(&[0.3; 4], &l).unwrap(), 0.5);
        assert_eq!(roc_auc(&[0.8, 0.4, 0.6, 0.2], &l).unwrap(), 0.75);
        assert!(matches!(
            roc_auc(&[0.1, 0.2], &[true, true]),
            Err(Error::DegenerateLabels)
        ));
        assert!(matches!(
            roc_auc(&[0.1], &[true, false]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn auc_matches_brute_force() {
        let mut r = rng::seeded(11);
        for _ in 0..50 {
            let n = 2 + rng::below(&mut r, 300) as usize;
            let levels = 1 + rng::below(&mut r, 20);
            let scores: Vec<f64> = (0..n).map(|_| rng::below(&mut r, levels) as f64 / 7.0).collect();
            let mut labels: Vec<bool> = (0..n).map(|_| rng::below(&mut r, 2) == 1).collect();
            labels[0] = true;
            labels[1] = false;
            assert_eq!(roc_auc(&scores, &labels).unwrap(), brute_auc(&scores, &labels));
        }
    }

    #[test]
    fn auc_complement_without_ties() {
        let mut r = rng::seeded(12);
        for _ in 0..30 {
            let n = 40;
            let scores: Vec<f64> = (0..n).map(|_| rng::normal(&mut r)).collect();
            let neg: Vec<f64> = scores.iter().map(|s| -s).collect();
            let labels: Vec<bool> = (0..n).map(|i| i % 3 == 0).collect();
            let sum = roc_auc(&scores, &labels).unwrap() + roc_auc(&neg, &labels).unwrap();
            assert!((sum - 1.0).abs() < 1e-12);
        }
    }

    fn separable() -> ProbeDataset {
        let mut r = rng::seeded(3);
        let mut features = Vec::new();
        let mut labels = Vec::new();
        for i in 0..100 {
            let c = i % 2;
            let cx = if c == 0 { -2.0 } else { 2.0 };
            features.push(vec![
                cx + rng::uniform(&mut r, -1.0, 1.0),
                rng::uniform(&mut r, -1.0, 1.0),
            ]);
            labels.push(c);
        }
        ProbeDataset::classes(features, labels, 2).unwrap()
    }

    #[test]
    fn separable_toy_reaches_full_accuracy() {
        let data = separable();
        let fit = train_probe(&data, ProbeHead::Softmax, &ProbeConfig::default()).unwrap();
        let acc = topk_class_accuracy(&fit.probe, &data, &[1, 2]).unwrap();
        assert_eq!(acc[&1], 1.0);
        assert_eq!(acc[&2], 1.0);
        assert_eq!(fit.epoch_losses.len(), 200);
        assert!(fit.epoch_losses.last().unwrap() < &fit.epoch_losses[0]);
    }

    #[test]
    fn training_is_seed_deterministic() {
        let data = separable();
        let cfg = ProbeConfig {
            epochs: 5,
            ..Default::default()
        };
        let a = train_probe(&data, ProbeHead::Softmax, &cfg).unwrap();
        let b = train_probe(&data, ProbeHead::Softmax, &cfg).unwrap();
        assert_eq!(a, b);
        let c = train_probe(&data, ProbeHead::Softmax, &ProbeConfig { seed: 9, ..cfg }).unwrap();
        assert_ne!(a.probe, c.probe);
    }

    #[test]
    fn single_class_predicts_that_class() {
        let features: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64 / 10.0, 1.0]).collect();
        let data = ProbeDataset::classes(features, vec![2; 20], 3).unwrap();
        let fit = train_probe(&data, ProbeHead::Softmax, &ProbeConfig::default()).unwrap();
        let acc = topk_class_accuracy(&fit.probe, &data, &[1]).unwrap();
        assert_eq!(acc[&1], 1.0);
    }

    #[test]
    fn head_must_match_targets() {
        let data = separable();
        assert!(train_probe(&data, ProbeHead::Sigmoid, &ProbeConfig::default()).is_err());
    }

    #[test]
    fn class_accuracy_ties_by_index_and_k_equals_c() {
        let probe = LinearProbe::zeros(ProbeHead::Softmax, 1, 4);
        let data = ProbeDataset::classes(vec![vec![1.0]; 4], vec![0, 1, 2, 3], 4).unwrap();
        let acc = topk_class_accuracy(&probe, &data, &[1, 2, 3, 4]).unwrap();
        assert_eq!(acc[&1], 0.25);
        assert_eq!(acc[&2], 0.5);
        assert_eq!(acc[&4], 1.0);
    }

    #[test]
    fn random_probe_accuracy_near_k_over_c() {
        let mut r = rng::seeded(21);
        let c = 8;
        let n = 4000;
        let mut probe = LinearProbe::zeros(ProbeHead::Softmax, 4, c);
        for w in probe.weights.iter_mut() {
            *w = rng::normal(&mut r);
        }
        let features: Vec<Vec<f64>> = (0..n).map(|_| (0..4).map(|_| rng::normal(&mut r)).collect()).collect();
        let labels: Vec<usize> = (0..n).map(|i| i % c).collect();
        let data = ProbeDataset::classes(features, labels, c).unwrap();
        let acc = topk_class_accuracy(&probe, &data, &[1, 3, 5]).unwrap();
        for (&k, &a) in &acc {
            let p = k as f64 / c as f64;
            let sigma = (p * (1.0 - p) / n as f64).sqrt();
            assert!((a - p).abs() <= 3.0 * sigma, "k={k}: {a} vs {p}");
        }
    }

    #[test]
    fn hand_computed_recall() {
        // scores are the bias only; attribute order by score: 1, 3, 0, 4, 2
        let mut probe = LinearProbe::zeros(ProbeHead::Sigmoid, 1, 5);
        probe.bias = vec![0.5, 0.9, 0.1, 0.7, 0.3];
        let labels = vec![vec![1, 3], vec![0, 2], vec![4], vec![]];
        let data = ProbeDataset::attributes(vec![vec![0.0]; 4], &labels, 5).unwrap();
        let rec = topk_attribute_recall(&probe, &data, &[1, 2, 3, 5], None, EmptyGroupPolicy::Skip).unwrap();
        let g = &rec[&0];
        assert_eq!(g.evaluated, 3);
        // k=1: 1/2, 0, 0 ; k=2: 1, 0, 0 ; k=3: 1, 1/2, 0 ; k=5: 1, 1, 1
        assert!((g.recall[&1] - 0.5 / 3.0).abs() < 1e-15);
        assert!((g.recall[&2] - 1.0 / 3.0).abs() < 1e-15);
        assert!((g.recall[&3] - 1.5 / 3.0).abs() < 1e-15);
        assert_eq!(g.recall[&5], 1.0);

        let zero = topk_attribute_recall(&probe, &data, &[5], None, EmptyGroupPolicy::CountZero).unwrap();
        assert_eq!(zero[&0].evaluated, 4);
        assert_eq!(zero[&0].recall[&5], 0.75);
    }

    #[test]
    fn grouped_recall() {
        let mut probe = LinearProbe::zeros(ProbeHead::Sigmoid, 1, 4);
        probe.bias = vec![0.1, 0.2, 0.9, 0.8];
        let labels = vec![vec![0, 2], vec![3]];
        let data = ProbeDataset::attributes(vec![vec![0.0]; 2], &labels, 4).unwrap();
        let rec = topk_attribute_recall(&probe, &data, &[1, 2], Some(&[0, 0, 1, 1]), EmptyGroupPolicy::Skip).unwrap();
        assert_eq!(rec[&0].evaluated, 1);
        assert_eq!(rec[&0].recall[&1], 0.0);
        assert_eq!(rec[&0].recall[&2], 1.0);
        assert_eq!(rec[&1].evaluated, 2);
        assert_eq!(rec[&1].recall[&1], 0.5);
        assert_eq!(rec[&1].recall[&2], 1.0);
    }

    #[test]
    fn probe_gradients_match_finite_differences() {
        let mut r = rng::seeded(31);
        for head in [ProbeHead::Softmax, ProbeHead::Sigmoid] {
            for _ in 0..10 {
                let n = 6;
                let features: Vec<Vec<f64>> = (0..n).map(|_| (0..3).map(|_| rng::normal(&mut r)).collect()).collect();
                let data = match head {
                    ProbeHead::Softmax => ProbeDataset::classes(features, (0..n).map(|i| i % 4).collect(), 4).unwrap(),
                    ProbeHead::Sigmoid => {
                        let labels: Vec<Vec<usize>> = (0..n).map(|i| vec![i % 4, (i + 1) % 4]).collect();
                        ProbeDataset::attributes(features, &labels, 4).unwrap()
                    }
                };
                let mut probe = LinearProbe::zeros(head, 3, 4);
                for w in probe.weights.iter_mut().chain(probe.bias.iter_mut()) {
                    *w = rng::normal(&mut r);
                }
                let batch: Vec<usize> = (0..n).collect();
                let g = probe_gradients(&probe, &data, &batch).unwrap();
                let h = 1e-6;
                let analytic: Vec<f64> = g.weights.iter().chain(&g.bias).copied().collect();
                for (p, &a) in analytic.iter().enumerate() {
                    let nudge = |delta: f64| {
                        let mut q = probe.clone();
                        let nw = q.weights.len();
                        if p < nw {
                            q.weights[p] += delta;
                        } else {
                            q.bias[p - nw] += delta;
                        }
                        probe_gradients(&q, &data, &batch).unwrap().loss
                    };
                    let fd = (nudge(h) - nudge(-h)) / (2.0 * h);
                    let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-3);
                    assert!(rel < 1e-4, "{head:?} param {p}: {a} vs {fd}");
                }
            }
        }
    }

    #[test]
    fn per_output_auc_skips_degenerate() {
        let mut probe = LinearProbe::zeros(ProbeHead::Sigmoid, 1, 2);
        probe.weights = vec![1.0, -1.0];
        let data =
            ProbeDataset::attributes(vec![vec![0.0], vec![1.0], vec![2.0]], &[vec![], vec![0], vec![0]], 2).unwrap();
        let auc = auc_per_output(&probe, &data).unwrap();
        assert_eq!(auc, vec![Some(1.0), None]);
    }
}
