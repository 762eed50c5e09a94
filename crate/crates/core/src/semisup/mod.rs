//! Infected-region segmenter and the pseudo-labelling loop that grows its
//! mask-labelled training set.

mod pool;
mod segmenter;

pub use pool::{
    pseudo_label_round, run_algorithm1, Algorithm1Report, LabeledItem, Provenance, PseudoLabelPool, RoundReport,
    SemisupConfig, UnlabeledItem,
};
pub use segmenter::{train_segmenter, Segmenter, SegmenterConfig};
