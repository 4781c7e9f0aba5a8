//! Retrieval-augmented local template prediction over labeled graphs.
//!
//! A message-passing classifier scores templates per atom and bond; datastores
//! of `(hidden state, template)` pairs built from the training set are queried
//! at inference, and the classifier's distribution is mixed with a
//! temperature-weighted nearest-neighbor distribution. A small adapter network
//! predicts the temperature and mixing weight per site.
//!
//! Numeric code is generic over [`Scalar`] (`f32` / `f64`); the aliases
//! below fix the precisions used by the pipeline: networks train in `f64`,
//! datastore keys and indexes are `f32`.

pub mod adapter;
pub mod backbone;
pub mod binio;
pub mod config;
pub mod error;
pub mod graphio;
pub mod harness;
pub mod linalg;
pub mod optim;
pub mod retrieve;
pub mod scalar;
pub mod store;
pub mod vindex;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Training precision.
pub type Real = f64;
/// Datastore key precision.
pub type KeyReal = f32;

pub type Backbone = backbone::BackboneParams<Real>;
pub type Embeddings = backbone::EmbeddingSet<Real>;
pub type Adapter = adapter::AdapterParams<Real>;
pub type FlatIndex = vindex::FlatIndex<KeyReal>;
pub type IvfPqIndex = vindex::IvfPqIndex<KeyReal>;
pub type VectorIndex = vindex::VectorIndex<KeyReal>;
pub type Neighbor = vindex::Neighbor<KeyReal>;
