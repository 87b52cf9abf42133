//! CSV ingestion, encoding, shuffling and fold splits.

mod preprocess;
mod raw;
mod schema;
mod split;
mod store;

pub use preprocess::{EncodedDataset, Encoder, FeatureGroup, Preprocessor, PREPROCESSOR_VERSION};
pub use raw::{load_csv, parse_csv, Cell, RawDataset, RawRecord};
pub use schema::{
    nsl_kdd_labels, nsl_kdd_schema, unsw_nb15_labels, unsw_nb15_schema, Column, ColumnKind, LabelMap, LabelSpec,
    LabelVocabulary, Schema, Task, NSL_KDD_FEATURES, UNSW_NB15_FEATURES,
};
pub use split::{permutation, shuffle, stratified_kfold, Fold, SparseClassPolicy};
pub use store::{sidecar_path, DataFormat, DATA_MAGIC, DATA_VERSION};
