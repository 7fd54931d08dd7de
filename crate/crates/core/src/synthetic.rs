//! Synthetic weakly annotated catalog.
//!
//! Images are drawn around cluster centers in a low-dimensional signal
//! subspace, padded with nuisance dimensions. Each cluster owns a set of
//! visual words; an image carries one of them, and the word shifts the
//! image's features away from its cluster center. Noise words are sprinkled
//! independently of the image. Filler text consists of stopwords and digits
//! so that preprocessing with the default configuration keeps exactly the
//! visual and noise words.

use serde::{Deserialize, Serialize};

use crate::corpus::{CatalogRecord, ImageInput, LabeledRecord, ProbeLabel};
use crate::error::{Error, Result};
use crate::rng::{self, Rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub clusters: usize,
    pub words_per_cluster: usize,
    pub noise_words: usize,
    /// Probability that a given noise word appears in a record.
    pub noise_rate: f64,
    pub samples_per_cluster: usize,
    /// Extra records per cluster, generated separately for held-out evaluation.
    pub heldout_per_cluster: usize,
    pub images_per_item: usize,
    pub feature_dim: usize,
    pub signal_dim: usize,
    pub cluster_spread: f64,
    pub word_spread: f64,
    pub sample_noise: f64,
    pub nuisance_scale: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            clusters: 8,
            words_per_cluster: 5,
            noise_words: 60,
            noise_rate: 0.002,
            samples_per_cluster: 500,
            heldout_per_cluster: 0,
            images_per_item: 1,
            feature_dim: 32,
            signal_dim: 8,
            cluster_spread: 9.0,
            word_spread: 4.5,
            sample_noise: 0.9,
            nuisance_scale: 3.0,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.clusters == 0 || self.words_per_cluster == 0 {
            return bad("need at least one cluster and one word per cluster");
        }
        if self.samples_per_cluster == 0 {
            return bad("samples per cluster must be at least 1");
        }
        if self.images_per_item == 0 {
            return bad("images per item must be at least 1");
        }
        if self.signal_dim == 0 || self.signal_dim > self.feature_dim {
            return bad("signal dimension must be in 1..=feature dimension");
        }
        if !(0.0..=1.0).contains(&self.noise_rate) {
            return bad("noise rate must be in [0, 1]");
        }
        for v in [
            self.cluster_spread,
            self.word_spread,
            self.sample_noise,
            self.nuisance_scale,
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad("spreads and scales must be finite and non-negative");
            }
        }
        Ok(())
    }

    pub fn n_visual_words(&self) -> usize {
        self.clusters * self.words_per_cluster
    }
}

/// Lowercase letters spelling `n` in base 26, at least two letters long.
fn letters(mut n: usize) -> String {
    let mut out = Vec::new();
    loop {
        out.push(b'a' + (n % 26) as u8);
        n /= 26;
        if n == 0 && out.len() >= 2 {
            break;
        }
    }
    out.reverse();
    String::from_utf8(out).unwrap()
}

pub fn visual_word(index: usize) -> String {
    format!("vis{}", letters(index))
}

pub fn noise_word(index: usize) -> String {
    format!("noise{}", letters(index))
}

const FILLERS: &[&str] = &["the", "with", "and", "for", "in", "of", "this", "a"];

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCatalog {
    pub records: Vec<LabeledRecord>,
    pub heldout: Vec<LabeledRecord>,
}

struct Layout {
    centers: Vec<Vec<f64>>,
    offsets: Vec<Vec<f64>>,
}

fn gaussian(r: &mut Rng, dim: usize, scale: f64) -> Vec<f64> {
    (0..dim).map(|_| scale * rng::normal(r)).collect()
}

/// Generate the catalog. Labels: `class` is the cluster, `attributes` the
/// visual word indices.
pub fn generate(cfg: &SyntheticConfig) -> Result<SyntheticCatalog> {
    cfg.validate()?;
    let mut r = rng::seeded(cfg.seed);
    let layout = Layout {
        centers: (0..cfg.clusters)
            .map(|_| gaussian(&mut r, cfg.signal_dim, cfg.cluster_spread))
            .collect(),
        offsets: (0..cfg.n_visual_words())
            .map(|_| gaussian(&mut r, cfg.signal_dim, cfg.word_spread))
            .collect(),
    };
    let records = generate_split(
        cfg,
        &layout,
        cfg.samples_per_cluster,
        "r",
        &mut rng::seeded_stream(cfg.seed, 1),
    );
    let heldout = generate_split(
        cfg,
        &layout,
        cfg.heldout_per_cluster,
        "h",
        &mut rng::seeded_stream(cfg.seed, 2),
    );
    Ok(SyntheticCatalog { records, heldout })
}

fn generate_split(
    cfg: &SyntheticConfig,
    layout: &Layout,
    per_cluster: usize,
    prefix: &str,
    r: &mut Rng,
) -> Vec<LabeledRecord> {
    let mut out = Vec::with_capacity(per_cluster * cfg.clusters);
    for c in 0..cfg.clusters {
        for j in 0..per_cluster {
            let word = c * cfg.words_per_cluster + rng::below(r, cfg.words_per_cluster);
            let mut features = Vec::with_capacity(cfg.feature_dim);
            for d in 0..cfg.signal_dim {
                features.push(layout.centers[c][d] + layout.offsets[word][d] + cfg.sample_noise * rng::normal(r));
            }
            for _ in cfg.signal_dim..cfg.feature_dim {
                features.push(cfg.nuisance_scale * rng::normal(r));
            }

            let mut title = vec![FILLERS[rng::below(r, FILLERS.len())].to_string(), visual_word(word)];
            let mut description = vec![FILLERS[rng::below(r, FILLERS.len())].to_string()];
            for n in 0..cfg.noise_words {
                if rng::uniform(r, 0.0, 1.0) < cfg.noise_rate {
                    description.push(noise_word(n));
                    description.push(FILLERS[rng::below(r, FILLERS.len())].to_string());
                }
            }
            title.push(format!("{}", 1000 + rng::below(r, 9000)));

            let record = CatalogRecord {
                record_id: format!("{prefix}{c:02}-{j:05}"),
                item_id: format!("c{c:02}-i{:05}", j / cfg.images_per_item),
                source_id: "synthetic".to_string(),
                text_fields: vec![title.join(" "), description.join(" ")],
                image_input: ImageInput::Features(features),
            };
            out.push(LabeledRecord {
                record,
                label: ProbeLabel {
                    class: Some(c),
                    attributes: Some(vec![word]),
                },
            });
        }
    }
    out
}
