//! Re-ranking engine for clothes-changing person re-identification.
//!
//! Each sample carries three embeddings (original, clothes-irrelevant,
//! clothes-relevant). Queries and gallery samples are matched through
//! intermediaries in the other space, the routes are weighted by how
//! feasible they are, and the result is fused with the direct distance.

pub mod ablation;
pub mod artifacts;
pub mod bundle;
pub mod bundle_io;
pub mod checks;
pub mod decoupling;
pub mod distance;
pub mod error;
pub mod eval;
pub mod feasibility;
pub mod gnn;
pub mod kreciprocal;
pub mod oracle;
pub mod pipeline;
pub mod routes;
pub mod synth;

pub use bundle::{EmbeddingBundle, FeatureKind, FeatureMatrix, ReliabilityScore, Role, SampleMeta};
pub use distance::DistanceMatrix;
pub use error::{Error, Result};
pub use pipeline::{rerank, RerankConfig, RerankOutput};
pub use routes::Mode;
