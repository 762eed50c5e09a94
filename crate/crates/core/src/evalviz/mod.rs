//! Accuracy, F1 and ROC AUC; exact t-SNE embeddings; CAM overlays.

mod metrics;
mod overlay;
mod tsne;

pub use metrics::{auc, auc_pairwise, classification_metrics, confusion, Confusion, EvalResult};
pub use overlay::{cam_overlay_rgb, render_cam_overlay};
pub use tsne::{nearest_centroid_purity, tsne_embed, Embedding, TsneConfig};
