use std::io::Write;
use std::path::PathBuf;

use anyhow::Context;
use weakcat::corpus::{write_catalog_line, LabeledRecord};
use weakcat::synthetic::{generate, SyntheticConfig};

#[derive(clap::Args)]
pub struct Args {
    /// Output catalog (JSON lines).
    #[arg(long)]
    out: PathBuf,
    /// Also write held-out records to this file.
    #[arg(long)]
    heldout_out: Option<PathBuf>,
    #[arg(long, default_value_t = 8)]
    clusters: usize,
    #[arg(long, default_value_t = 5)]
    words_per_cluster: usize,
    #[arg(long, default_value_t = 60)]
    noise_words: usize,
    /// Probability of each noise word appearing in a record.
    #[arg(long, default_value_t = 0.002)]
    noise_rate: f64,
    #[arg(long, default_value_t = 500)]
    samples_per_cluster: usize,
    #[arg(long, default_value_t = 0)]
    heldout_per_cluster: usize,
    #[arg(long, default_value_t = 1)]
    images_per_item: usize,
    #[arg(long, default_value_t = 32)]
    feature_dim: usize,
    #[arg(long, default_value_t = 8)]
    signal_dim: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn write(path: &PathBuf, records: &[LabeledRecord]) -> anyhow::Result<()> {
    let file = std::fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut out = std::io::BufWriter::new(file);
    for r in records {
        writeln!(out, "{}", write_catalog_line(&r.record, Some(&r.label)))?;
    }
    out.flush()?;
    Ok(())
}

pub fn run(a: Args) -> anyhow::Result<()> {
    let cfg = SyntheticConfig {
        clusters: a.clusters,
        words_per_cluster: a.words_per_cluster,
        noise_words: a.noise_words,
        noise_rate: a.noise_rate,
        samples_per_cluster: a.samples_per_cluster,
        heldout_per_cluster: a.heldout_per_cluster,
        images_per_item: a.images_per_item,
        feature_dim: a.feature_dim,
        signal_dim: a.signal_dim,
        seed: a.seed,
        ..SyntheticConfig::default()
    };
    if a.heldout_per_cluster > 0 && a.heldout_out.is_none() {
        return Err(crate::usage("--heldout-per-cluster needs --heldout-out"));
    }
    let catalog = generate(&cfg)?;
    write(&a.out, &catalog.records)?;
    println!("records: {}", catalog.records.len());
    if let Some(path) = &a.heldout_out {
        write(path, &catalog.heldout)?;
        println!("held-out records: {}", catalog.heldout.len());
    }
    Ok(())
}
