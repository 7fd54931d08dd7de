use std::collections::BTreeMap;
use std::io::Write;
use std::path::PathBuf;

use anyhow::{anyhow, Context};
use clap::ValueEnum;
use serde::Serialize;
use weakcat::retrieval::{embed_queries, topk_accuracy, RetrievalIndex};

use crate::inputs::{load_images, load_model, parse_ks, write_json, Image};

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ExcludeSelf {
    /// Exclude when the query and gallery files are the same.
    Auto,
    True,
    False,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchOn {
    /// Same item id.
    Item,
    /// Same class label (labeled catalogs only).
    Class,
}

#[derive(clap::Args)]
pub struct Args {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Vocabulary the checkpoint must have been trained on.
    #[arg(long)]
    vocab: Option<PathBuf>,
    /// Query images (dataset or catalog).
    #[arg(long)]
    query: PathBuf,
    /// Gallery images; defaults to the query file.
    #[arg(long)]
    gallery: Option<PathBuf>,
    #[arg(long, default_value = "1,5,10,20,30,40,50")]
    topk: String,
    #[arg(long, value_enum, default_value_t = ExcludeSelf::Auto)]
    exclude_self: ExcludeSelf,
    #[arg(long = "match", value_enum, default_value_t = MatchOn::Item)]
    match_on: MatchOn,
    /// Metrics report (JSON).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Per-query first-match ranks (JSON lines).
    #[arg(long)]
    rank_dump: Option<PathBuf>,
    /// Persist the gallery index.
    #[arg(long)]
    save_index: Option<PathBuf>,
}

#[derive(Serialize)]
struct Report {
    format: &'static str,
    version: u32,
    queries: usize,
    gallery: usize,
    exclude_self: bool,
    match_on: MatchOn,
    accuracy: BTreeMap<usize, f64>,
}

fn relabel(images: &mut [Image], match_on: MatchOn) -> anyhow::Result<()> {
    if match_on == MatchOn::Item {
        return Ok(());
    }
    for img in images {
        let class = img.label.class.ok_or_else(|| {
            anyhow!(weakcat::Error::InvalidInput(format!(
                "record {} has no class label",
                img.record_id
            )))
        })?;
        img.item_id = format!("class:{class}");
    }
    Ok(())
}

pub fn run(a: Args) -> anyhow::Result<()> {
    let ks = parse_ks(&a.topk)?;
    let model = load_model(&a.checkpoint, a.vocab.as_ref())?;
    let gallery_path = a.gallery.clone().unwrap_or_else(|| a.query.clone());
    let same_file = match a.gallery.as_ref() {
        None => true,
        Some(g) => std::fs::canonicalize(g).ok() == std::fs::canonicalize(&a.query).ok(),
    };
    let exclude_self = match a.exclude_self {
        ExcludeSelf::Auto => same_file,
        ExcludeSelf::True => true,
        ExcludeSelf::False => false,
    };

    let mut queries = load_images(&a.query)?;
    let mut gallery = if same_file {
        load_images(&a.query)?
    } else {
        load_images(&gallery_path)?
    };
    relabel(&mut queries, a.match_on)?;
    relabel(&mut gallery, a.match_on)?;

    let index = RetrievalIndex::build(&model, &gallery).context("building the gallery index")?;
    if let Some(p) = &a.save_index {
        index.save(p).with_context(|| format!("writing {}", p.display()))?;
    }
    let embedded = embed_queries(&model, &queries).context("embedding queries")?;
    let result = topk_accuracy(&index, &embedded, &ks, exclude_self)?;

    if let Some(p) = &a.rank_dump {
        let file = std::fs::File::create(p).with_context(|| format!("creating {}", p.display()))?;
        let mut out = std::io::BufWriter::new(file);
        for r in &result.ranks {
            writeln!(out, "{}", serde_json::to_string(r)?)?;
        }
        out.flush()?;
    }
    let report = Report {
        format: "weakcat-retrieval",
        version: 1,
        queries: queries.len(),
        gallery: gallery.len(),
        exclude_self,
        match_on: a.match_on,
        accuracy: result.accuracy,
    };
    if let Some(p) = &a.out {
        write_json(p, &report)?;
    }

    println!(
        "{} queries, {} gallery images, exclude self: {exclude_self}",
        report.queries, report.gallery
    );
    println!("{:>4}  {:>8}", "k", "accuracy");
    for (k, acc) in &report.accuracy {
        println!("{k:>4}  {acc:>8.4}");
    }
    Ok(())
}
