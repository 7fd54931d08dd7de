//! Catalog ingestion: text normalization, vocabulary, training samples and
//! the held-out validation split.

mod catalog;
mod dataset;
mod split;
mod text;
mod vocab;

pub use catalog::{
    read_catalog, read_catalog_file, read_labeled_catalog, write_catalog_line, CatalogRecord, ImageInput, ImageSource,
    LabeledRecord, ProbeLabel,
};
pub use dataset::{
    build_dataset, read_dataset, read_dataset_file, write_dataset, write_dataset_file, Dataset, DatasetBuild,
    TrainingSample, DATASET_MAGIC, DATASET_VERSION,
};
pub use split::{split_validation, ValidationSplit};
pub use text::{preprocess_text, PreprocessConfig, DEFAULT_BLACKLIST};
pub use vocab::{build_vocabulary, TokenCounts, Vocabulary, VocabularyEntry};
