//! Spectral clustering, k-means and the evaluation metrics (CA, NPA, NMI,
//! silhouette, ARI).

pub mod kmeans;
pub mod metrics;
pub mod spectral;

use serde::Serialize;

pub use kmeans::{kmeans, kmeans_with};
pub use metrics::{ari, ca_knn, evaluate, nmi, npa_knn, npa_knn_labels, silhouette, MetricsReport, MetricsSummary};
pub use spectral::spectral_cluster;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClusterAssignment {
    pub labels: Vec<usize>,
    /// Number of cluster ids in use; ids lie in `0..c`.
    pub c: usize,
    pub inertia: f64,
}
