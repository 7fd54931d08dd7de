use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use clap::ValueEnum;
use rayon::prelude::*;
use serde::Serialize;
use weakcat::model::EmbeddingModel;
use weakcat::transfer::{
    auc_per_output, topk_attribute_recall, topk_class_accuracy, train_probe, EmptyGroupPolicy, LinearProbe,
    ProbeConfig, ProbeDataset, ProbeHead,
};

use crate::inputs::{load_images, load_model, parse_ks, write_json, Image};

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Head {
    /// Single-label classes, cross-entropy.
    Softmax,
    /// Multi-label attributes, binary cross-entropy.
    Sigmoid,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum EmptyGroups {
    Skip,
    Zero,
}

#[derive(clap::Args)]
pub struct Args {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    vocab: Option<PathBuf>,
    /// Labeled catalog used to fit the probe.
    #[arg(long)]
    train: PathBuf,
    /// Labeled catalog used for the metrics; defaults to the training file.
    #[arg(long)]
    test: Option<PathBuf>,
    #[arg(long, value_enum)]
    head: Head,
    #[arg(long, default_value = "3,5")]
    topk: String,
    /// Attribute groups: line i names the group of attribute i.
    #[arg(long)]
    groups: Option<PathBuf>,
    /// Samples without a positive attribute in a group are skipped or count as zero recall.
    #[arg(long, value_enum, default_value_t = EmptyGroups::Skip)]
    empty_groups: EmptyGroups,
    /// Number of classes or attributes; defaults to the largest label + 1.
    #[arg(long)]
    n_outputs: Option<usize>,
    #[arg(long, default_value_t = 0.01)]
    lr: f64,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    #[arg(long, default_value_t = 200)]
    epochs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Metrics report (JSON).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Trained probe parameters (JSON).
    #[arg(long)]
    probe_out: Option<PathBuf>,
}

fn missing(record: &str, what: &str) -> anyhow::Error {
    anyhow!(weakcat::Error::InvalidInput(format!(
        "record {record} has no {what} label"
    )))
}

fn features(model: &EmbeddingModel, images: &[Image]) -> anyhow::Result<Vec<Vec<f64>>> {
    Ok(images
        .par_iter()
        .map(|i| model.extract(&i.input))
        .collect::<Result<_, _>>()?)
}

fn dataset(model: &EmbeddingModel, images: &[Image], head: Head, n_outputs: usize) -> anyhow::Result<ProbeDataset> {
    let feats = features(model, images)?;
    Ok(match head {
        Head::Softmax => {
            let labels = images
                .iter()
                .map(|i| i.label.class.ok_or_else(|| missing(&i.record_id, "class")))
                .collect::<anyhow::Result<Vec<_>>>()?;
            ProbeDataset::classes(feats, labels, n_outputs)?
        }
        Head::Sigmoid => {
            let labels = images
                .iter()
                .map(|i| {
                    i.label
                        .attributes
                        .clone()
                        .ok_or_else(|| missing(&i.record_id, "attributes"))
                })
                .collect::<anyhow::Result<Vec<_>>>()?;
            ProbeDataset::attributes(feats, &labels, n_outputs)?
        }
    })
}

fn largest_label(images: &[Image], head: Head) -> usize {
    images
        .iter()
        .filter_map(|i| match head {
            Head::Softmax => i.label.class,
            Head::Sigmoid => i.label.attributes.as_ref().and_then(|a| a.iter().max().copied()),
        })
        .max()
        .unwrap_or(0)
}

/// Group names from a file and the group id of each attribute.
fn read_groups(path: &Path, n_attributes: usize) -> anyhow::Result<(Vec<String>, Vec<usize>)> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let lines: Vec<&str> = text.lines().map(str::trim).filter(|l| !l.is_empty()).collect();
    if lines.len() != n_attributes {
        return Err(anyhow!(weakcat::Error::DimensionMismatch {
            expected: n_attributes,
            actual: lines.len(),
        }))
        .with_context(|| format!("{} must name one group per attribute", path.display()));
    }
    let names: Vec<String> = lines
        .iter()
        .map(|l| l.to_string())
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect();
    let ids = lines
        .iter()
        .map(|l| names.iter().position(|n| n == l).unwrap())
        .collect();
    Ok((names, ids))
}

#[derive(Serialize)]
struct AucRow {
    output: usize,
    auc: Option<f64>,
}

#[derive(Serialize)]
struct RecallRow {
    evaluated: usize,
    recall: BTreeMap<usize, f64>,
}

#[derive(Serialize)]
struct Report {
    format: &'static str,
    version: u32,
    head: ProbeHead,
    config: ProbeConfig,
    train_samples: usize,
    test_samples: usize,
    outputs: usize,
    epoch_losses: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    topk_accuracy: Option<BTreeMap<usize, f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    topk_recall: Option<BTreeMap<String, RecallRow>>,
    auc: Vec<AucRow>,
    mean_auc: Option<f64>,
}

#[derive(Serialize)]
struct ProbeFile<'a> {
    format: &'static str,
    version: u32,
    head: ProbeHead,
    dim: usize,
    outputs: usize,
    /// Column-major: one column of `dim` weights per output.
    weights: &'a [f64],
    bias: &'a [f64],
}

pub fn run(a: Args) -> anyhow::Result<()> {
    let ks = parse_ks(&a.topk)?;
    let cfg = ProbeConfig {
        learning_rate: a.lr,
        batch_size: a.batch_size,
        epochs: a.epochs,
        seed: a.seed,
    };
    cfg.validate()?;
    if a.groups.is_some() && a.head == Head::Softmax {
        return Err(crate::usage("--groups applies to the sigmoid head only"));
    }
    let model = load_model(&a.checkpoint, a.vocab.as_ref())?;
    let train_images = load_images(&a.train)?;
    let test_images = match &a.test {
        Some(p) => load_images(p)?,
        None => load_images(&a.train)?,
    };
    let n_outputs = a
        .n_outputs
        .unwrap_or_else(|| 1 + largest_label(&train_images, a.head).max(largest_label(&test_images, a.head)));
    let train = dataset(&model, &train_images, a.head, n_outputs).with_context(|| format!("{}", a.train.display()))?;
    let test = dataset(&model, &test_images, a.head, n_outputs)?;
    let head = match a.head {
        Head::Softmax => ProbeHead::Softmax,
        Head::Sigmoid => ProbeHead::Sigmoid,
    };

    let fit = train_probe(&train, head, &cfg)?;
    let probe: &LinearProbe = &fit.probe;
    let auc: Vec<AucRow> = auc_per_output(probe, &test)?
        .into_iter()
        .enumerate()
        .map(|(output, auc)| AucRow { output, auc })
        .collect();
    let defined: Vec<f64> = auc.iter().filter_map(|r| r.auc).collect();
    let mean_auc = (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64);

    let (topk_accuracy, topk_recall) = match a.head {
        Head::Softmax => (Some(topk_class_accuracy(probe, &test, &ks)?), None),
        Head::Sigmoid => {
            let (names, ids) = match &a.groups {
                Some(p) => read_groups(p, n_outputs)?,
                None => (vec!["all".to_string()], vec![0; n_outputs]),
            };
            let policy = match a.empty_groups {
                EmptyGroups::Skip => EmptyGroupPolicy::Skip,
                EmptyGroups::Zero => EmptyGroupPolicy::CountZero,
            };
            let rec = topk_attribute_recall(probe, &test, &ks, Some(&ids), policy)?;
            let named = rec
                .into_iter()
                .map(|(g, r)| {
                    (
                        names[g].clone(),
                        RecallRow {
                            evaluated: r.evaluated,
                            recall: r.recall,
                        },
                    )
                })
                .collect();
            (None, Some(named))
        }
    };

    let report = Report {
        format: "weakcat-probe",
        version: 1,
        head,
        config: cfg,
        train_samples: train.len(),
        test_samples: test.len(),
        outputs: n_outputs,
        epoch_losses: fit.epoch_losses.clone(),
        topk_accuracy,
        topk_recall,
        auc,
        mean_auc,
    };
    if let Some(p) = &a.out {
        write_json(p, &report)?;
    }
    if let Some(p) = &a.probe_out {
        write_json(
            p,
            &ProbeFile {
                format: "weakcat-probe-parameters",
                version: 1,
                head,
                dim: probe.dim,
                outputs: probe.n_outputs,
                weights: &probe.weights,
                bias: &probe.bias,
            },
        )?;
    }

    println!(
        "{} probe, {} outputs, {} train / {} test samples, final train loss {:.6}",
        match head {
            ProbeHead::Softmax => "softmax",
            ProbeHead::Sigmoid => "sigmoid",
        },
        n_outputs,
        report.train_samples,
        report.test_samples,
        fit.epoch_losses.last().copied().unwrap_or(f64::NAN)
    );
    if let Some(acc) = &report.topk_accuracy {
        println!("{:>4}  {:>8}", "k", "accuracy");
        for (k, v) in acc {
            println!("{k:>4}  {v:>8.4}");
        }
    }
    if let Some(rec) = &report.topk_recall {
        println!("{:<16} {:>9} {:>4}  {:>8}", "group", "evaluated", "k", "recall");
        for (name, row) in rec {
            for (k, v) in &row.recall {
                println!("{name:<16} {:>9} {k:>4}  {v:>8.4}", row.evaluated);
            }
        }
    }
    match report.mean_auc {
        Some(m) => println!("mean AUC {m:.4} over {} outputs", defined.len()),
        None => println!("mean AUC undefined (every output is single-class)"),
    }
    Ok(())
}
