use std::collections::{HashMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::text::PreprocessConfig;
use crate::error::{Error, Result};

const VOCAB_FORMAT: &str = "weakcat-vocabulary";
const VOCAB_VERSION: u32 = 1;

/// Document frequencies accumulated over token bags.
///
/// Counts from separate shards can be merged with [`TokenCounts::merge`];
/// the merge is commutative so sharded counting gives the same vocabulary.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TokenCounts {
    counts: HashMap<String, u64>,
    bags: u64,
}

impl TokenCounts {
    pub fn new() -> Self {
        Self::default()
    }

    /// Count each distinct token of the bag once.
    pub fn add_bag<S: AsRef<str>>(&mut self, bag: &[S]) {
        self.bags += 1;
        let mut seen = HashSet::with_capacity(bag.len());
        for tok in bag {
            let tok = tok.as_ref();
            if seen.insert(tok) {
                *self.counts.entry(tok.to_string()).or_insert(0) += 1;
            }
        }
    }

    pub fn merge(&mut self, other: TokenCounts) {
        self.bags += other.bags;
        for (tok, n) in other.counts {
            *self.counts.entry(tok).or_insert(0) += n;
        }
    }

    pub fn bags(&self) -> u64 {
        self.bags
    }

    pub fn distinct_tokens(&self) -> usize {
        self.counts.len()
    }

    pub fn get(&self, token: &str) -> u64 {
        self.counts.get(token).copied().unwrap_or(0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VocabularyEntry {
    pub token: String,
    pub frequency: u64,
}

/// Token to dense index map, ordered by (document frequency desc, token asc).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    entries: Vec<VocabularyEntry>,
    index_of: HashMap<String, usize>,
    max_size: usize,
    config_fingerprint: String,
}

#[derive(Serialize, Deserialize)]
struct VocabularyFile {
    format: String,
    version: u32,
    max_size: usize,
    config_fingerprint: String,
    tokens: Vec<VocabularyEntry>,
}

/// Count document frequencies over `token_bags` and keep the
/// `config.vocabulary_max_size` most frequent tokens.
pub fn build_vocabulary<I, B>(token_bags: I, config: &PreprocessConfig) -> Result<Vocabulary>
where
    I: IntoIterator<Item = B>,
    B: AsRef<[String]>,
{
    let mut counts = TokenCounts::new();
    for bag in token_bags {
        counts.add_bag(bag.as_ref());
    }
    Vocabulary::from_counts(&counts, config)
}

impl Vocabulary {
    pub fn from_counts(counts: &TokenCounts, config: &PreprocessConfig) -> Result<Self> {
        config.validate()?;
        if counts.counts.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let mut entries: Vec<VocabularyEntry> = counts
            .counts
            .iter()
            .map(|(token, &frequency)| VocabularyEntry {
                token: token.clone(),
                frequency,
            })
            .collect();
        entries.sort_by(|a, b| b.frequency.cmp(&a.frequency).then_with(|| a.token.cmp(&b.token)));
        entries.truncate(config.vocabulary_max_size);
        Ok(Self::from_entries(
            entries,
            config.vocabulary_max_size,
            hex(&config.fingerprint()),
        ))
    }

    fn from_entries(entries: Vec<VocabularyEntry>, max_size: usize, config_fingerprint: String) -> Self {
        let index_of = entries.iter().enumerate().map(|(i, e)| (e.token.clone(), i)).collect();
        Self {
            entries,
            index_of,
            max_size,
            config_fingerprint,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn max_size(&self) -> usize {
        self.max_size
    }

    pub fn index_of(&self, token: &str) -> Option<usize> {
        self.index_of.get(token).copied()
    }

    pub fn token(&self, index: usize) -> Option<&str> {
        self.entries.get(index).map(|e| e.token.as_str())
    }

    pub fn frequency(&self, index: usize) -> Option<u64> {
        self.entries.get(index).map(|e| e.frequency)
    }

    pub fn entries(&self) -> &[VocabularyEntry] {
        &self.entries
    }

    pub fn tokens(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.token.as_str())
    }

    /// Hex SHA-256 of the preprocessing configuration the vocabulary was built with.
    pub fn config_fingerprint(&self) -> &str {
        &self.config_fingerprint
    }

    /// SHA-256 of the ordered token list; identifies the label space a
    /// model was trained on.
    pub fn fingerprint(&self) -> [u8; 32] {
        let mut hasher = Sha256::new();
        for e in &self.entries {
            hasher.update(e.token.as_bytes());
            hasher.update(b"\n");
        }
        hasher.finalize().into()
    }

    pub fn to_json(&self) -> String {
        let file = VocabularyFile {
            format: VOCAB_FORMAT.to_string(),
            version: VOCAB_VERSION,
            max_size: self.max_size,
            config_fingerprint: self.config_fingerprint.clone(),
            tokens: self.entries.clone(),
        };
        let mut s = serde_json::to_string_pretty(&file).expect("vocabulary serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: VocabularyFile =
            serde_json::from_str(text).map_err(|e| Error::corrupt("vocabulary", e.to_string()))?;
        if file.format != VOCAB_FORMAT {
            return Err(Error::corrupt(
                "vocabulary",
                format!("unknown format {:?}", file.format),
            ));
        }
        if file.version != VOCAB_VERSION {
            return Err(Error::corrupt(
                "vocabulary",
                format!("unsupported version {}", file.version),
            ));
        }
        if file.tokens.len() > file.max_size {
            return Err(Error::corrupt("vocabulary", "more tokens than max_size"));
        }
        let mut seen = HashSet::new();
        for (i, e) in file.tokens.iter().enumerate() {
            if e.token.is_empty() || !e.token.chars().all(char::is_alphabetic) {
                return Err(Error::corrupt("vocabulary", format!("invalid token {:?}", e.token)));
            }
            if !seen.insert(e.token.as_str()) {
                return Err(Error::corrupt("vocabulary", format!("duplicate token {:?}", e.token)));
            }
            if i > 0 {
                let prev = &file.tokens[i - 1];
                let ordered = prev.frequency > e.frequency || (prev.frequency == e.frequency && prev.token < e.token);
                if !ordered {
                    return Err(Error::corrupt("vocabulary", format!("tokens out of order at {i}")));
                }
            }
        }
        Ok(Self::from_entries(file.tokens, file.max_size, file.config_fingerprint))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
