//! Dataset ingestion, client partitioning and end-to-end runs with
//! reproducible manifests.

pub mod config;
pub mod data;
pub mod fdlm;
pub mod partition;
pub mod run;
pub mod svg;

pub use config::{Command, RunConfig, RunManifest};
pub use data::{generate_blobs, load_csv, load_idx, load_dataset, BlobSpec, DataSource, Dataset, DatasetSpec, Normalize};
pub use partition::{partition, PartitionMode, PartitionSpec};
pub use run::{
    evaluate_embedding_csv, learn_landmarks, prepare, read_embedding_csv, rerun_manifest, run_command, run_embedding, run_fed_speclust, run_fed_tsne, run_fed_umap,
    run_feddl_fit, run_speclust, upload_and_complete, ClusterRun, EmbedRun, Engine, FitRun, LandmarkRun, Prepared, Rerun, RunContext,
};
pub use svg::{emit_scatter_svg, render_scatter_svg};
