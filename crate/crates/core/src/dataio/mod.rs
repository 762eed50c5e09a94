//! Manifests, image files, synthetic data, checkpoints, configs, reports
//! and the pipeline steps behind the CLI.

mod checkpoint;
mod config;
mod images;
mod manifest;
pub mod pipeline;
mod report;
mod synth;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::RunConfig;
pub use images::{encode_pgm, read_gray, read_mask, write_gray, write_mask};
pub use manifest::{load_manifest, manifest_to_string, parse_manifest, Manifest, ManifestRow, Role, Split, MANIFEST_HEADER};
pub use report::{parse_report, validate_report, MetricsReport, RESULT_KEYS};
pub use synth::{generate_synthetic, synth_assignments, synth_sample, SynthSample};
