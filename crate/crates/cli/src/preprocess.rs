use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::BufReader;
use std::path::PathBuf;

use anyhow::Context;
use serde::Serialize;
use weakcat::corpus::{
    build_dataset, preprocess_text, read_catalog, split_validation, write_dataset_file, CatalogRecord, Dataset,
    PreprocessConfig, TokenCounts, Vocabulary,
};

use crate::inputs::write_json;

#[derive(clap::Args)]
pub struct Args {
    /// Catalog files (JSON lines).
    #[arg(required = true)]
    catalogs: Vec<PathBuf>,
    /// Directory receiving vocab.json, train.wcat, valid.wcat and stats.json.
    #[arg(long)]
    out_dir: PathBuf,
    /// Keep this many most frequent words.
    #[arg(long, default_value_t = 30_000)]
    vocab_size: usize,
    /// Fraction of samples held out for validation.
    #[arg(long, default_value_t = 0.005)]
    validation_fraction: f64,
    #[arg(long, default_value_t = 1)]
    min_token_length: usize,
    /// Bundled stopword lists to apply, comma-separated ("none" for none).
    #[arg(long, default_value = "en,fr")]
    stopwords: String,
    /// Blacklisted tokens, comma-separated ("none" for none).
    #[arg(long, default_value = "buy,collection")]
    blacklist: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Rows of the frequency table.
    #[arg(long, default_value_t = 50)]
    top: usize,
}

fn list(text: &str) -> Vec<String> {
    if text.trim() == "none" {
        return Vec::new();
    }
    text.split(',')
        .map(|t| t.trim().to_lowercase())
        .filter(|t| !t.is_empty())
        .collect()
}

fn config(a: &Args) -> anyhow::Result<PreprocessConfig> {
    let defaults = PreprocessConfig::default();
    let mut stopword_sets = BTreeMap::new();
    for lang in list(&a.stopwords) {
        let set = defaults
            .stopword_sets
            .get(&lang)
            .ok_or_else(|| crate::usage(format!("no bundled stopword list {lang:?} (available: en, fr)")))?;
        stopword_sets.insert(lang, set.clone());
    }
    let cfg = PreprocessConfig {
        stopword_sets,
        blacklist: list(&a.blacklist).into_iter().collect(),
        min_token_length: a.min_token_length,
        vocabulary_max_size: a.vocab_size,
        validation_fraction: a.validation_fraction,
        seed: a.seed,
    };
    cfg.validate()?;
    Ok(cfg)
}

#[derive(Serialize)]
struct ConfigEcho {
    stopwords: Vec<String>,
    blacklist: Vec<String>,
    min_token_length: usize,
    vocabulary_max_size: usize,
    validation_fraction: f64,
    seed: u64,
}

#[derive(Serialize)]
struct FrequencyRow {
    rank: usize,
    token: String,
    frequency: u64,
    /// Share of samples whose bag holds the token.
    share: f64,
}

#[derive(Serialize)]
struct Stats {
    format: &'static str,
    version: u32,
    config: ConfigEcho,
    config_fingerprint: String,
    vocabulary_fingerprint: String,
    records: usize,
    samples: usize,
    dropped_empty_bags: usize,
    train_samples: usize,
    validation_samples: usize,
    distinct_tokens: usize,
    vocabulary_size: usize,
    mean_labels_per_sample: f64,
    max_labels_per_sample: usize,
    uncovered_validation_labels: Vec<String>,
    top_frequencies: Vec<FrequencyRow>,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn read_all(paths: &[PathBuf]) -> anyhow::Result<Vec<CatalogRecord>> {
    let mut records = Vec::new();
    let mut seen = HashSet::new();
    for path in paths {
        let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
        let batch = read_catalog(BufReader::new(file)).with_context(|| format!("reading {}", path.display()))?;
        for r in batch {
            if !seen.insert(r.record_id.clone()) {
                return Err(weakcat::Error::InvalidInput(format!(
                    "duplicate record_id {:?}",
                    r.record_id
                )))
                .with_context(|| format!("reading {}", path.display()));
            }
            records.push(r);
        }
    }
    Ok(records)
}

pub fn run(a: Args) -> anyhow::Result<()> {
    let cfg = config(&a)?;
    let records = read_all(&a.catalogs)?;

    let mut counts = TokenCounts::new();
    for r in &records {
        counts.add_bag(&preprocess_text(&r.text_fields, &cfg));
    }
    let vocab = Vocabulary::from_counts(&counts, &cfg)?;
    let build = build_dataset(&records, &vocab, &cfg);
    let n_samples = build.samples.len();
    let total_labels: usize = build.samples.iter().map(|s| s.labels.len()).sum();
    let max_labels = build.samples.iter().map(|s| s.labels.len()).max().unwrap_or(0);
    let split = split_validation(build.samples, &cfg)?;

    std::fs::create_dir_all(&a.out_dir).with_context(|| format!("creating {}", a.out_dir.display()))?;
    vocab.save(a.out_dir.join("vocab.json"))?;
    for (name, samples) in [("train.wcat", &split.train), ("valid.wcat", &split.valid)] {
        let ds = Dataset {
            n_words: vocab.len(),
            samples: samples.clone(),
        };
        write_dataset_file(&ds, a.out_dir.join(name))?;
    }

    let stats = Stats {
        format: "weakcat-stats",
        version: 1,
        config: ConfigEcho {
            stopwords: cfg.stopword_sets.keys().cloned().collect(),
            blacklist: cfg.blacklist.iter().cloned().collect(),
            min_token_length: cfg.min_token_length,
            vocabulary_max_size: cfg.vocabulary_max_size,
            validation_fraction: cfg.validation_fraction,
            seed: cfg.seed,
        },
        config_fingerprint: vocab.config_fingerprint().to_string(),
        vocabulary_fingerprint: hex(&vocab.fingerprint()),
        records: records.len(),
        samples: n_samples,
        dropped_empty_bags: build.dropped,
        train_samples: split.train.len(),
        validation_samples: split.valid.len(),
        distinct_tokens: counts.distinct_tokens(),
        vocabulary_size: vocab.len(),
        mean_labels_per_sample: total_labels as f64 / n_samples as f64,
        max_labels_per_sample: max_labels,
        uncovered_validation_labels: split
            .uncovered_labels
            .iter()
            .filter_map(|&w| vocab.token(w).map(str::to_string))
            .collect(),
        top_frequencies: vocab
            .entries()
            .iter()
            .take(a.top)
            .enumerate()
            .map(|(i, e)| FrequencyRow {
                rank: i + 1,
                token: e.token.clone(),
                frequency: e.frequency,
                share: e.frequency as f64 / n_samples as f64,
            })
            .collect(),
    };
    write_json(&a.out_dir.join("stats.json"), &stats)?;

    println!("records            {}", stats.records);
    println!(
        "samples            {} ({} dropped with empty bags)",
        stats.samples, stats.dropped_empty_bags
    );
    println!(
        "train / validation {} / {}",
        stats.train_samples, stats.validation_samples
    );
    println!("distinct tokens    {}", stats.distinct_tokens);
    println!("vocabulary size    {}", stats.vocabulary_size);
    println!("mean labels/sample {:.4}", stats.mean_labels_per_sample);
    println!();
    println!("{:>4}  {:<24} {:>9}  {:>6}", "rank", "token", "frequency", "share");
    for row in &stats.top_frequencies {
        println!(
            "{:>4}  {:<24} {:>9}  {:>6.4}",
            row.rank, row.token, row.frequency, row.share
        );
    }
    Ok(())
}
