//! Per-image feature records: loading, validation, splits, normalisation
//! and summary statistics.

mod normalize;
mod records;
mod split;
mod stats;
mod vocab;

pub use normalize::{NormalizationStats, Z_EPSILON};
pub use records::{
    load_dataset, parse_dataset, write_dataset, Dataset, Detection, Header, ImageRecord, Split,
    DEFAULT_MAX_INSTANCES, SCHEMA,
};
pub use split::{apply_split_csv, assign_kfold, fold_to_split, stratified_kfold, write_split_csv};
pub use stats::{cardinality_vector, confidence_vector, cooccurrence_histogram, share_at_most_one, HistogramBin};
pub use vocab::{EntityVocabulary, COCO_OBJECTS, DEFAULT_SCENES, PRIVACY_NAMES};
