//! Classification pipeline for multivariate sensor time series.
//!
//! The crate covers the full path from raw recordings to explained
//! predictions: dataset containers and validation ([`data`]), file formats
//! ([`io`]), signal conditioning ([`preprocess`]), statistical feature
//! extraction ([`features`]) and hypothesis-test based selection
//! ([`selection`]), learned feature-space transforms ([`transforms`]),
//! nearest-neighbour classifiers with elastic distances ([`classifiers`]),
//! classifier ensembles ([`ensemble`]), result analysis ([`analysis`]) and
//! perturbation-based local explanations ([`explain`]). [`pipeline`] wires
//! the stages together for end-to-end runs.

pub mod analysis;
pub mod classifiers;
pub mod data;
pub mod ensemble;
pub mod error;
pub mod explain;
pub mod features;
pub mod io;
pub mod pipeline;
pub mod preprocess;
pub mod selection;
pub mod transforms;

pub use error::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// Library version, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
