//! Seeded synthetic tasks with known ground truth, and the sparse selector.

mod dataset;
mod generators;
mod io;

pub use dataset::{Annotation, Split, SparseDataset, TaskKind};
pub use generators::{
    cluster_sigma, gen_multiclass, gen_multilabel, gen_sequences, subsample, MulticlassConfig,
    MultilabelConfig, SequenceConfig, SequenceVocab, SplitFractions, SubsamplePolicy,
    CENTROID_SPACING, REFERENCES_PER_INPUT,
};
pub use io::{load_dataset, read_dataset, save_dataset, write_dataset, DatasetHeader};
