//! Semantic-aware knowledge preservation (SAKE) for zero-shot sketch-based
//! image retrieval, at desk scale.
//!
//! A conditional-SE convolutional network embeds photos and sketches into a
//! shared space. During fine-tuning on source classes a frozen teacher keeps
//! the network's original-domain predictions alive, with the teacher's
//! logits blended with taxonomy similarity. Embeddings are evaluated by
//! nearest-neighbour retrieval on unseen classes, as real vectors or ITQ
//! binary codes.

pub mod datagen;
pub mod error;
pub mod hashing;
pub mod losses;
pub mod model;
pub mod numerics;
pub mod retrieval;
pub mod semantics;
pub mod training;

pub use error::{Error, Result};
