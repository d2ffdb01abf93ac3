//! Coalition detection from agent hidden states.
//!
//! The pipeline: per-agent hidden activations ([`HiddenStateDataset`]) are
//! binned and turned into a pairwise mutual-information graph ([`MiMatrix`]);
//! the sign pattern of the Fiedler vector of its normalized Laplacian gives the
//! candidate coalition boundary ([`fiedler_partition`]), which can be applied
//! recursively ([`recursive_decompose`]) or window by window
//! ([`track_partitions`]). A small statistics kit supports seed-level
//! reporting.

pub mod dataset;
pub mod decompose;
pub mod eigen;
pub mod error;
pub mod metrics;
pub mod mi;
pub mod mi_matrix;
pub mod partition;
pub mod report;
pub mod spectral;
pub mod stats;

pub use dataset::{HiddenStateDataset, SampleKind};
pub use decompose::{
    recursive_decompose, track_partitions, BootstrapReplicates, CoalitionTree, DecompositionConfig,
    PartitionTimeline, ReplicateSource, StopReason,
};
pub use error::{Error, Result};
pub use metrics::{adjusted_rand_index, clean_level1, isolates_a_group, total_cross_mi};
pub use mi::{discretize, estimate_mi_matrix, mi_discrete, plugin_entropy, BinStrategy, MiEstimationConfig};
pub use mi_matrix::MiMatrix;
pub use partition::Partition;
pub use report::{ExperimentReport, SeedRecord};
pub use spectral::{
    brute_force_min_ncut, cut_statistics, fiedler_partition, normalized_laplacian, partition_contrast,
    phi_spectral, planted_block, planted_split, team_separation, CutStats, SpectralResult,
};
pub use stats::{bootstrap_ci, paired_t_test, Interval, TTest};
