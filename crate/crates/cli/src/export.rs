use std::io::{BufWriter, Write};
use std::path::PathBuf;

use anyhow::Context;
use rayon::prelude::*;

use crate::inputs::{load_images, load_model};

#[derive(clap::Args)]
pub struct Args {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    vocab: Option<PathBuf>,
    /// Images to embed (dataset or catalog).
    #[arg(long)]
    input: PathBuf,
    /// Output file; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// One row per image: record_id, item_id, then the I feature values.
pub fn run(a: Args) -> anyhow::Result<()> {
    let model = load_model(&a.checkpoint, a.vocab.as_ref())?;
    let images = load_images(&a.input)?;
    let rows: Vec<Vec<f64>> = images
        .par_iter()
        .map(|i| model.extract(&i.input))
        .collect::<Result<_, _>>()?;
    let sink: Box<dyn Write> = match &a.out {
        Some(p) => Box::new(std::fs::File::create(p).with_context(|| format!("creating {}", p.display()))?),
        None => Box::new(std::io::stdout().lock()),
    };
    let mut out = BufWriter::new(sink);
    for (img, z) in images.iter().zip(&rows) {
        write!(out, "{}\t{}", img.record_id, img.item_id)?;
        for v in z {
            write!(out, "\t{v}")?;
        }
        writeln!(out)?;
    }
    out.flush()?;
    Ok(())
}
