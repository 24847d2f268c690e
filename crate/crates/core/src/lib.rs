//! Face-verification based deepfake detection, as a pure algorithmic core.
//!
//! The crate is `no_std` (it needs `alloc`) and holds everything that does not
//! touch a filesystem: embedding primitives and the EMB1 byte codec, the
//! combined-margin loss family with hand-derived gradients, a desk-scale
//! embedder trainer with embedding-space deepfake simulators, the gallery/probe
//! matching protocol, ROC/AUC/EER metrics and exact t-SNE.
//!
//! File IO, configuration and the command line live in the `deepverify` crate.
#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod emb1;
pub mod embedding;
pub mod linalg;
pub mod margin;
pub mod metrics;
pub mod pipeline;
pub mod protocol;
pub mod seed;
pub mod simulate;
pub mod trainer;
pub mod tsne;

pub use embedding::{
    cosine_similarity, l2_normalize, EmbeddingDataset, EmbeddingError, EmbeddingVector,
    LabeledEmbedding, Method, Realness, SwapKind,
};
pub use linalg::Matrix;
