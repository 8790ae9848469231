//! Datasets: synthetic generation, manifest loading, corruption and
//! client partitioning.

mod corruption;
mod image;
mod manifest;
mod partition;
mod synthetic;

pub use corruption::{apply_corruption, corrupt_dataset, CorruptionKind, CorruptionSpec, OCCLUSION_FILL};
pub use image::{images_to_batch, Dataset, Image, LabeledExample};
pub use manifest::{byte_to_pixel, load_manifest_dataset, pixel_to_byte, save_manifest_dataset, Manifest};
pub use partition::{largest_remainder, partition, partition_indices, PartitionPlan, PartitionScheme};
pub use synthetic::{make_synthetic_dataset, render_pattern, Pattern};
