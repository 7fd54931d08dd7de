//! Learn a joint image/word embedding from weakly annotated catalog data.
//!
//! Each catalog image comes with a noisy bag of words harvested from its
//! title, description and category fields. Training draws a word uniformly
//! from the vocabulary, then an image whose bag contains it, and asks the
//! model to pick that word out of a small set of randomly drawn negatives.
//! The image feature extractor learned this way is then evaluated on
//! cosine-similarity retrieval and on linear probes.
//!
//! The pipeline is split into modules:
//!
//! - [`corpus`]: text normalization, vocabulary, training samples, validation split
//! - [`sampler`]: inverted index, uniform word-then-image draws, negative words
//! - [`model`]: feature extractors, word-embedding matrix, sampled softmax, checkpoints
//! - [`trainer`]: SGD epochs, learning-rate schedule, early stopping, two-phase training
//! - [`retrieval`]: gallery index and top-k retrieval accuracy
//! - [`transfer`]: linear probes, top-k accuracy/recall, ROC-AUC
//! - [`synthetic`]: desk-scale synthetic catalog generator

pub mod corpus;
pub mod error;
pub mod model;
pub mod retrieval;
pub mod rng;
pub mod sampler;
pub mod synthetic;
pub mod trainer;
pub mod transfer;

mod binio;

pub use error::{Error, Result};
