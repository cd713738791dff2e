//! Federated landmark learning for distributed dimensionality reduction.
//!
//! Clients holding horizontally partitioned data jointly learn a small set of
//! landmark points whose distribution matches the union of their data under a
//! Gaussian-kernel maximum mean discrepancy ([`feddl`]). Each client then
//! uploads only its point-to-landmark distance or kernel block, and the server
//! completes the full matrix by Nyström extension ([`nystrom`]) before running
//! t-SNE, UMAP ([`embed`]) or spectral clustering ([`cluster`]).
//! Optional Gaussian perturbation of data, gradients or landmarks lives in
//! [`privacy`]; [`pipeline`] wires everything into reproducible runs.

pub mod cluster;
pub mod embed;
pub mod error;
pub mod feddl;
pub mod kernel;
pub mod linalg;
pub mod nystrom;
pub mod pipeline;
pub mod privacy;
pub mod rng;

pub use error::{Error, ErrorClass, Result};
pub use kernel::{DataMatrix, KernelParams};

/// Library version echoed into run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
