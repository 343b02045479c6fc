//! GARD: a semantic-evolvement graph autoencoder toolkit for rumor detection.
//!
//! Events are rooted propagation graphs of posts (a source plus timestamped
//! replies with feature vectors). The model couples three self-supervised
//! signals with a supervised classifier:
//!
//! - a **local branch**: two MLP autoencoders reconstructing child features
//!   from parents (top-down) and parent features from children (bottom-up);
//! - a **global branch**: masked node-feature reconstruction over the
//!   normalized undirected graph with a 2-layer GCN encoder and a 1-layer
//!   GCN decoder;
//! - a **uniformity regularizer** pushing event representations apart to
//!   prevent feature collapse;
//! - a **readout + classifier**: per-encoder mean-pooling, concatenation,
//!   and a softmax head trained with cross-entropy.
//!
//! Everything runs on a small reverse-mode tensor kernel ([`tape::Tape`])
//! whose gradients are verified against central finite differences
//! ([`gradcheck::grad_check`]). [`datagen`] builds deterministic synthetic
//! corpora whose class signal lives purely in feature evolution along edges,
//! for end-to-end verification; [`training`] provides Adam, k-fold
//! cross-validation, ablation variants, and early-detection curves.

pub mod corpus;
pub mod datagen;
pub mod gradcheck;
pub mod graph;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod scalar;
pub mod seeding;
pub mod selfcheck;
pub mod tape;
pub mod tensor;
pub mod training;

pub use scalar::Scalar;

/// Default training precision.
pub type Tensor64 = tensor::Tensor<f64>;
/// Reduced-precision tensor for size-sensitive callers.
pub type Tensor32 = tensor::Tensor<f32>;
/// Model parameters at the default precision.
pub type ModelParams64 = model::ModelParams<f64>;
/// Tape at the default precision.
pub type Tape64 = tape::Tape<f64>;
