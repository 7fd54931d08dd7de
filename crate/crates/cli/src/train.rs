use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{anyhow, Context};
use clap::ValueEnum;
use serde::{Deserialize, Serialize};
use weakcat::corpus::{read_dataset_file, Vocabulary};
use weakcat::model::{save_checkpoint, EmbeddingModel, FeatureExtractor};
use weakcat::rng;
use weakcat::sampler::SamplerConfig;
use weakcat::trainer::{fit_with, EpochRecord, ResumePoint, StopReason, TrainConfig, ValidationMode};

/// RNG stream for parameter initialization; epochs and validation use low ids.
const INIT_STREAM: u64 = u64::MAX;

#[derive(Clone, Copy, ValueEnum)]
pub enum Extractor {
    Precomputed,
    Linear,
    Mlp,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum Validation {
    Auto,
    Full,
    Sampled,
}

#[derive(clap::Args)]
pub struct Args {
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    valid: PathBuf,
    #[arg(long)]
    vocab: PathBuf,
    /// Checkpoint to write (best validation epoch).
    #[arg(long)]
    out: PathBuf,
    /// Training log (JSON lines); defaults to <out>.log.jsonl.
    #[arg(long)]
    log: Option<PathBuf>,
    #[arg(long, default_value_t = 20)]
    batch_size: usize,
    #[arg(long, default_value_t = 0.1)]
    lr: f64,
    #[arg(long, default_value_t = 10.0)]
    lr_divisor: f64,
    /// Negative words drawn per positive.
    #[arg(long, default_value_t = 50)]
    n_negatives: usize,
    /// Keep the image's other bag words out of the negatives.
    #[arg(long)]
    exclude_bag_negatives: bool,
    /// Share of the training set drawn per epoch.
    #[arg(long, default_value_t = 0.1)]
    epoch_fraction: f64,
    /// Epochs training only the word matrix before fine-tuning the extractor.
    #[arg(long, default_value_t = 20)]
    head_only_epochs: usize,
    /// Epochs without improvement before dividing the learning rate.
    #[arg(long, default_value_t = 10)]
    lr_patience: usize,
    /// Epochs without improvement before stopping.
    #[arg(long, default_value_t = 20)]
    stop_patience: usize,
    #[arg(long, default_value_t = 1e-5)]
    improvement_epsilon: f64,
    /// Last epoch to run.
    #[arg(long)]
    max_epochs: Option<usize>,
    /// Restart from the initial learning rate when fine-tuning begins.
    #[arg(long)]
    reset_lr_on_fine_tune: bool,
    /// Train against every word instead of sampled negatives.
    #[arg(long)]
    full_softmax: bool,
    #[arg(long, value_enum, default_value_t = Validation::Auto)]
    validation: Validation,
    #[arg(long, value_enum, default_value_t = Extractor::Mlp)]
    extractor: Extractor,
    /// Hidden layer widths of the mlp extractor.
    #[arg(long, default_value = "64,64")]
    hidden: String,
    /// Embedding dimension (precomputed: the input dimension).
    #[arg(long, default_value_t = 64)]
    dim: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Continue from this checkpoint.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Log of the run being resumed; defaults to <resume>.log.jsonl.
    #[arg(long)]
    resume_log: Option<PathBuf>,
}

#[derive(Serialize)]
struct HeaderConfig<'a> {
    #[serde(flatten)]
    train: &'a TrainConfig,
    n_negatives: usize,
    exclude_bag_words_from_negatives: bool,
    extractor: &'static str,
    layer_dims: Vec<usize>,
    train_samples: usize,
    validation_samples: usize,
    vocabulary_size: usize,
    resumed_from_epoch: Option<usize>,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum LogLine<T> {
    Header {
        timestamp: u64,
        version: String,
        config: T,
    },
    Epoch(EpochRecord),
    Summary {
        best_validation: f64,
        best_epoch: usize,
        final_epoch: usize,
        next_learning_rate: f64,
        stop_reason: StopReason,
    },
}

fn default_log(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".log.jsonl");
    PathBuf::from(s)
}

fn parse_widths(text: &str) -> anyhow::Result<Vec<usize>> {
    let widths: Vec<usize> = text
        .split(',')
        .map(|t| t.trim().parse::<usize>())
        .collect::<Result<_, _>>()
        .map_err(|_| crate::usage(format!("invalid --hidden {text:?}")))?;
    if widths.contains(&0) {
        return Err(crate::usage("hidden widths must be positive"));
    }
    Ok(widths)
}

/// Resume point from the summary line of a previous log.
fn read_resume_point(path: &Path) -> anyhow::Result<ResumePoint> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut point = None;
    for line in BufReader::new(file).lines() {
        let line = line?;
        if let Ok(LogLine::<serde_json::Value>::Summary {
            final_epoch,
            next_learning_rate,
            ..
        }) = serde_json::from_str(&line)
        {
            point = Some(ResumePoint {
                epoch: final_epoch,
                learning_rate: next_learning_rate,
            });
        }
    }
    point.ok_or_else(|| {
        anyhow!(weakcat::Error::InvalidInput(format!(
            "{} has no summary line to resume from",
            path.display()
        )))
    })
}

fn build_model(a: &Args, input_dim: usize, vocab: &Vocabulary) -> anyhow::Result<EmbeddingModel> {
    let mut r = rng::seeded_stream(a.seed, INIT_STREAM);
    let extractor = match a.extractor {
        Extractor::Precomputed => FeatureExtractor::precomputed(input_dim),
        Extractor::Linear => FeatureExtractor::linear(input_dim, a.dim, &mut r),
        Extractor::Mlp => FeatureExtractor::mlp(input_dim, &parse_widths(&a.hidden)?, a.dim, &mut r),
    };
    Ok(EmbeddingModel::initialize(
        extractor,
        vocab.len(),
        vocab.fingerprint(),
        &mut r,
    ))
}

fn fmt_num(v: f64) -> String {
    if v.is_finite() && v.abs() < 1e6 {
        format!("{v:.6}")
    } else {
        format!("{v:.4e}")
    }
}

fn fmt_lr(v: f64) -> String {
    if (1e-6..1e6).contains(&v) {
        v.to_string()
    } else {
        format!("{v:e}")
    }
}

pub fn run(a: Args) -> anyhow::Result<()> {
    let vocab = Vocabulary::load(&a.vocab).with_context(|| format!("reading {}", a.vocab.display()))?;
    let train = read_dataset_file(&a.train).with_context(|| format!("reading {}", a.train.display()))?;
    let valid = read_dataset_file(&a.valid).with_context(|| format!("reading {}", a.valid.display()))?;
    for (path, ds) in [(&a.train, &train), (&a.valid, &valid)] {
        if ds.n_words != vocab.len() {
            return Err(anyhow!(weakcat::Error::VocabMismatch)).with_context(|| {
                format!(
                    "{} was built for {} words, vocabulary has {}",
                    path.display(),
                    ds.n_words,
                    vocab.len()
                )
            });
        }
    }
    let input_dim = train
        .samples
        .first()
        .map(|s| s.input.len())
        .ok_or_else(|| anyhow!(weakcat::Error::InvalidInput("training set is empty".into())))?;

    let cfg = TrainConfig {
        batch_size: a.batch_size,
        initial_lr: a.lr,
        lr_divisor: a.lr_divisor,
        lr_patience_epochs: a.lr_patience,
        stop_patience_epochs: a.stop_patience,
        head_only_epochs: a.head_only_epochs,
        epoch_fraction: a.epoch_fraction,
        improvement_epsilon: a.improvement_epsilon,
        seed: a.seed,
        max_epochs: a.max_epochs,
        reset_lr_on_fine_tune: a.reset_lr_on_fine_tune,
        full_softmax: a.full_softmax,
        validation: match a.validation {
            Validation::Auto => ValidationMode::Auto,
            Validation::Full => ValidationMode::Full,
            Validation::Sampled => ValidationMode::Sampled,
        },
        sampler: SamplerConfig {
            n_negatives: a.n_negatives,
            seed: a.seed,
            exclude_bag_words_from_negatives: a.exclude_bag_negatives,
        },
        ..TrainConfig::default()
    };

    let (model, resume) = match &a.resume {
        Some(path) => {
            let model = crate::inputs::load_model(path, Some(&a.vocab))?;
            let log = a.resume_log.clone().unwrap_or_else(|| default_log(path));
            (model, Some(read_resume_point(&log)?))
        }
        None => (build_model(&a, input_dim, &vocab)?, None),
    };
    if model.extractor.input_dim() != input_dim {
        return Err(anyhow!(weakcat::Error::DimensionMismatch {
            expected: model.extractor.input_dim(),
            actual: input_dim,
        }));
    }

    let log_path = a.log.clone().unwrap_or_else(|| default_log(&a.out));
    let file = File::create(&log_path).with_context(|| format!("creating {}", log_path.display()))?;
    let mut log = BufWriter::new(file);
    let header = LogLine::Header {
        timestamp: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
        version: env!("CARGO_PKG_VERSION").to_string(),
        config: HeaderConfig {
            train: &cfg,
            n_negatives: cfg.sampler.n_negatives,
            exclude_bag_words_from_negatives: cfg.sampler.exclude_bag_words_from_negatives,
            extractor: model.extractor.kind().name(),
            layer_dims: model.extractor.dims().to_vec(),
            train_samples: train.samples.len(),
            validation_samples: valid.samples.len(),
            vocabulary_size: vocab.len(),
            resumed_from_epoch: resume.map(|r| r.epoch),
        },
    };
    writeln!(log, "{}", serde_json::to_string(&header)?)?;

    println!(
        "{} extractor {:?}, {} train / {} validation samples, {} words",
        model.extractor.kind().name(),
        model.extractor.dims(),
        train.samples.len(),
        valid.samples.len(),
        vocab.len()
    );
    println!(
        "{:>5}  {:<9} {:>8}  {:>10}  {:>10}",
        "epoch", "phase", "lr", "train", "valid"
    );
    let mut write_err = None;
    let result = fit_with(&train.samples, &valid.samples, model, &cfg, resume, |rec| {
        let phase = serde_json::to_value(rec.phase)
            .ok()
            .and_then(|v| v.as_str().map(str::to_string));
        println!(
            "{:>5}  {:<9} {:>8}  {:>10}  {:>10}",
            rec.epoch,
            phase.unwrap_or_default(),
            fmt_lr(rec.learning_rate),
            rec.train_loss.map_or_else(|| "-".to_string(), fmt_num),
            fmt_num(rec.validation_loss)
        );
        let line = serde_json::to_string(&LogLine::<()>::Epoch(rec.clone())).map_err(anyhow::Error::from);
        let res = line.and_then(|l| {
            writeln!(log, "{l}")?;
            log.flush()?;
            Ok(())
        });
        if let Err(e) = res {
            write_err.get_or_insert(e);
        }
    });
    if let Some(e) = write_err {
        return Err(e.context(format!("writing {}", log_path.display())));
    }
    let (model, train_log) = result?;
    let summary = LogLine::<()>::Summary {
        best_validation: train_log.best_validation,
        best_epoch: train_log.best_epoch,
        final_epoch: train_log.final_epoch,
        next_learning_rate: train_log.next_learning_rate,
        stop_reason: train_log.stop_reason,
    };
    writeln!(log, "{}", serde_json::to_string(&summary)?)?;
    log.flush()?;
    save_checkpoint(&model, &a.out).with_context(|| format!("writing {}", a.out.display()))?;

    let reason = match train_log.stop_reason {
        StopReason::NoImprovement => "no improvement",
        StopReason::MaxEpochs => "epoch limit",
    };
    println!(
        "best validation {:.6} at epoch {}; stopped after epoch {} ({reason})",
        train_log.best_validation, train_log.best_epoch, train_log.final_epoch
    );
    Ok(())
}
