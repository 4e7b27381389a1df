//! Feature tensors, their binary file format, and dataset manifests.

mod manifest;
mod tensor;

pub use manifest::{file_checksum, load_manifest, save_manifest, DatasetManifest, ManifestEntry, FOLDS};
pub use tensor::{read_tensor, write_tensor, Dims, FeatureTensor, ENERGY_FLOOR, LOG_FLOOR};
