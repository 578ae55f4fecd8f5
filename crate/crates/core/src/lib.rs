//! Label-relation branch of a graph attention transformer network for
//! multi-label classification.
//!
//! The pipeline runs from label word embeddings to per-class classifier
//! weights:
//!
//! 1. [`corr`] builds a thresholded, re-weighted adjacency from embedding
//!    cosine similarity (or label co-occurrence).
//! 2. [`gat`] transforms that adjacency with `k` multi-head self-attention
//!    branches fused by matrix product.
//! 3. [`gcn`] propagates the embeddings over the normalized result.
//! 4. [`model`] scores pooled image features against the label features,
//!    computes binary cross-entropy with exact gradients and trains with
//!    momentum SGD.
//! 5. [`metrics`] reports mAP and the per-class / overall P, R, F1 family.

pub mod corr;
pub mod dataset;
pub mod dot;
pub mod embeddings;
pub mod error;
pub mod experiment;
pub mod gat;
pub mod gcn;
pub mod linalg;
pub mod metrics;
pub mod model;
pub mod synth;

pub use corr::{AdjacencyMatrix, CorrPipelineConfig, Stage};
pub use dataset::Dataset;
pub use embeddings::{EmbeddingMatrix, EmbeddingTable, LabelVocabulary};
pub use error::{Error, Result};
pub use linalg::Matrix;
pub use metrics::{DecisionRule, MetricsReport};
pub use model::{GatnParams, Gradients, LabeledSample, TrainConfig};
