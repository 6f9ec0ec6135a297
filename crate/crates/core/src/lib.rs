//! Federated deep multi-view clustering.
//!
//! Simulates `M` clients, each holding one view of a partially overlapping
//! sample set, and a server that aligns cluster assignments across clients,
//! imputes missing embedded features from global prototypes and view-specific
//! patterns, and distributes global self-supervision (prototypes and
//! pseudo-labels) back to the clients.
//!
//! Module layout:
//! - [`matrix`], [`rng`]: dense f64 matrices, shared solvers, and the
//!   deterministic splittable random streams everything else builds on.
//! - [`autoencoder`]: per-client MLP encoder/decoder with exact analytic
//!   gradients.
//! - [`clustering`]: k-means, Student's-t soft assignment, sharpening,
//!   hard prediction.
//! - [`alignment`]: Hungarian matching of cluster indices across clients.
//! - [`client`], [`server`]: the two federated roles.
//! - [`federation`]: data partitioning, synthetic data, and the epoch loop.
//! - [`message`]: the binary wire format crossing the client/server boundary.
//! - [`metrics`], [`dataset`]: clustering metrics (ACC/NMI/ARI) and CSV
//!   dataset IO.

pub mod alignment;
pub mod autoencoder;
mod bytes;
pub mod client;
pub mod clustering;
pub mod dataset;
pub mod error;
pub mod federation;
pub mod matrix;
pub mod message;
pub mod metrics;
pub mod rng;
pub mod server;

pub use error::{Error, Result};
pub use matrix::Matrix;
pub use rng::RngStream;
