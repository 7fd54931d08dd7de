use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

const STOPWORDS_EN: &str = include_str!("../../data/stopwords/en.txt");
const STOPWORDS_FR: &str = include_str!("../../data/stopwords/fr.txt");

/// Frequent tokens that carry no visual meaning in catalog descriptions.
pub const DEFAULT_BLACKLIST: &[&str] = &["buy", "collection"];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PreprocessConfig {
    /// Stopword sets keyed by language code.
    pub stopword_sets: BTreeMap<String, BTreeSet<String>>,
    /// Site names and other frequent non-relevant tokens.
    pub blacklist: BTreeSet<String>,
    /// Minimum token length in characters.
    pub min_token_length: usize,
    pub vocabulary_max_size: usize,
    pub validation_fraction: f64,
    pub seed: u64,
}

impl Default for PreprocessConfig {
    /// Bundled English and French stopwords, the default blacklist, a
    /// 30,000-word vocabulary and a 0.5% validation split.
    fn default() -> Self {
        let mut stopword_sets = BTreeMap::new();
        stopword_sets.insert("en".to_string(), parse_word_list(STOPWORDS_EN));
        stopword_sets.insert("fr".to_string(), parse_word_list(STOPWORDS_FR));
        Self {
            stopword_sets,
            blacklist: DEFAULT_BLACKLIST.iter().map(|s| s.to_string()).collect(),
            min_token_length: 1,
            vocabulary_max_size: 30_000,
            validation_fraction: 0.005,
            seed: 0,
        }
    }
}

impl PreprocessConfig {
    /// No stopwords, no blacklist; otherwise the defaults.
    pub fn unfiltered() -> Self {
        Self {
            stopword_sets: BTreeMap::new(),
            blacklist: BTreeSet::new(),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "validation_fraction must be in (0, 1), got {}",
                self.validation_fraction
            )));
        }
        if self.vocabulary_max_size == 0 {
            return Err(Error::InvalidConfig("vocabulary_max_size must be at least 1".into()));
        }
        Ok(())
    }

    pub fn is_filtered(&self, token: &str) -> bool {
        token.chars().count() < self.min_token_length
            || self.blacklist.contains(token)
            || self.stopword_sets.values().any(|set| set.contains(token))
    }

    /// SHA-256 over everything that decides which tokens end up in the
    /// vocabulary (stopwords, blacklist, minimum length, maximum size).
    pub fn fingerprint(&self) -> [u8; 32] {
        let mut hasher = Sha256::new();
        for (lang, words) in &self.stopword_sets {
            hasher.update(b"stopwords:");
            hasher.update(lang.as_bytes());
            for w in words {
                hasher.update(b"\n");
                hasher.update(w.as_bytes());
            }
            hasher.update(b"\0");
        }
        hasher.update(b"blacklist:");
        for w in &self.blacklist {
            hasher.update(b"\n");
            hasher.update(w.as_bytes());
        }
        hasher.update(b"\0");
        hasher.update((self.min_token_length as u64).to_le_bytes());
        hasher.update((self.vocabulary_max_size as u64).to_le_bytes());
        hasher.finalize().into()
    }
}

/// One token per line; blank lines and `#` comments ignored; lowercased.
pub(crate) fn parse_word_list(text: &str) -> BTreeSet<String> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_lowercase)
        .collect()
}

/// Turn raw text fields into a token list.
///
/// Fields are joined with single spaces and lowercased; tokens are the
/// maximal runs of alphabetic characters. Stopwords, blacklisted tokens and
/// tokens shorter than `min_token_length` are removed. Order is preserved
/// and duplicates are kept.
pub fn preprocess_text<S: AsRef<str>>(text_fields: &[S], config: &PreprocessConfig) -> Vec<String> {
    let joined = text_fields
        .iter()
        .map(AsRef::as_ref)
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase();
    joined
        .split(|c: char| !c.is_alphabetic())
        .filter(|t| !t.is_empty() && !config.is_filtered(t))
        .map(str::to_string)
        .collect()
}
