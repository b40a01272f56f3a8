//! Toy taxonomy and the two label-similarity measures built on it.

mod similarity;
mod taxonomy;

pub use similarity::{lch_similarity, path_similarity, SimilarityMatrix};
pub use taxonomy::{ClassMap, NodeId, Taxonomy, TOY_CLASSES, TOY_TAXONOMY};
