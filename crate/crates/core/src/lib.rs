//! Heterogeneity-aware anomaly detection on attributed heterogeneous graphs.
//!
//! A multi-view heterogeneous graph transformer encodes every view
//! combination, a view-level attention aggregator fuses the embeddings, and
//! three decoders reconstruct structure, attributes and node types. Per-node
//! reconstruction residuals become anomaly scores.

pub mod aggregate;
pub mod decode;
pub mod encoder;
pub mod error;
pub mod experiment;
pub mod hetgraph;
pub mod inject;
pub mod metrics;
pub mod params;
pub mod plot;
pub mod preprocess;
pub mod rng;
pub mod synth;
pub mod tape;
pub mod train;

pub use error::{AheadError, Result};
pub use hetgraph::{HetGraph, Matrix};
