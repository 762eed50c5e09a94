//! Heat-map normalisation, binarisation, connected regions, boxes and crops.

mod components;
mod geometry;
mod heatmap;
mod types;

pub use components::max_connected_component;
pub use geometry::{bbox_of_mask, crop_resize, resize, resize_heatmap, split_infected_lr, SplitFlags};
pub use heatmap::{binarize, heatmap_normalize};
pub use types::{BinaryMask, BoundingBox, GrayImage, HeatMap};
