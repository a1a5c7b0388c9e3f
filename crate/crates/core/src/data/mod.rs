//! Manifests, eye alignment, cropping and the procedural toy dataset.

mod align;
mod image;
mod manifest;
mod toy;

pub use align::{align_and_crop, align_image, eye_transform, random_crop, SimilarityTransform};
pub use image::{batch_tensor, ImageBuffer};
pub use manifest::{load_catalog, load_manifest, read_records, write_manifest, Manifest, Modality, SampleRecord};
pub use toy::{generate_toy_dataset, render_identity, sketch_transform, ToyDataset, ToyDatasetSpec};
