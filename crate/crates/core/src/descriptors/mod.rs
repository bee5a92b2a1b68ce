//! Dense local descriptors with receptive-field tracking, and PCA reduction.

mod cache;
mod dense;
mod pca;

pub use cache::{decode_descriptors, encode_descriptors, read_descriptor_cache, write_descriptor_cache, DESCRIPTOR_MAGIC};
pub use dense::{extract_dense, Area, DenseParams, DescriptorSet, LocalDescriptor, DESCRIPTOR_LEN};
pub use pca::{pca_fit, PcaModel};
