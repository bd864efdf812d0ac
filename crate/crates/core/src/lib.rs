//! Slice discovery for auditing image-text alignment models.
//!
//! Given unit-normalized image embeddings and a baseline/augmented caption
//! pair, the engine picks the working set of images most aligned with the
//! baseline caption, scores each image by how much its rank changes under
//! the augmented caption (`delta_c`), clusters the working set by visual
//! similarity and `delta_c` consistency, and supports building slices with
//! similar/counterfactual recommendations and correlation checks.

pub mod affinity;
pub mod analysis;
pub mod clustering;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod slicing;
pub mod store;
pub mod validation;

pub use affinity::{AffinityProfile, Query};
pub use analysis::QueryContext;
pub use clustering::{Cluster, ClusteringConfig};
pub use error::{Error, Result};
pub use slicing::{Recommendation, RecommendationKind, Slice};
pub use store::{EmbeddingMatrix, ImageRecord, WorkingSet};
pub use validation::CorrelationReport;
