//! Detection of large-scale topology anomalies from time-binned traceroute
//! snapshots.
//!
//! Each snapshot is reduced to the network path change coefficient
//!
//! ```text
//! r = (D_max - D_effective) / (D_max - SP)
//! ```
//!
//! and a sliding normal domain built from recent normal snapshots decides
//! whether the next one is anomalous.
//!
//! - [`graph`]: compressed-row snapshot graph and BFS.
//! - [`metrics`]: diameters, mean shortest path, NPCC.
//! - [`detector`]: the streaming normal-domain classifier.
//! - [`ingest`]: path records to per-bin snapshots.
//! - [`simulate`]: BA graphs, attack trajectories, synthetic labelled streams.
//! - [`evaluate`]: confusion counts, F-scores, k-sweeps, ROC.
//! - [`formats`]: CSV tables exchanged between pipeline stages.

pub mod detector;
pub mod evaluate;
pub mod formats;
pub mod graph;
pub mod ingest;
pub mod metrics;
pub mod simulate;

pub use detector::{Detector, DetectorConfig, Label, TauMode, Verdict};
pub use graph::{NodeId, SnapshotGraph};
pub use metrics::{DmaxVariant, MetricsConfig, MetricsMode, Npcc, SnapshotMetrics};
