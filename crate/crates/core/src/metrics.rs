//! Path-length statistics of a snapshot and the network path change
//! coefficient (NPCC)
//!
//! ```text
//! r = (D_max - D_effective) / (D_max - SP)
//! ```
//!
//! All global quantities are computed on the giant component from BFS runs
//! over a set of sources (every node in exact mode, a seeded uniform sample
//! otherwise). Per-source results are reduced as exact integers, so the
//! outcome does not depend on worker scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{NodeId, SnapshotGraph};

/// Denominators below this many hops make the NPCC undefined.
pub const DEGENERACY_EPSILON: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("graph is disconnected; reduce to the giant component first")]
    Disconnected,
    #[error("need at least two nodes, graph has {0}")]
    TooFewNodes(usize),
    #[error("node id {0} out of range")]
    InvalidNode(NodeId),
    #[error("npcc precondition violated: d_max={d_max}, d_effective={d_effective}, sp={sp}")]
    Precondition {
        d_max: f64,
        d_effective: f64,
        sp: f64,
    },
    #[error("sample size must be at least 1")]
    ZeroSampleSize,
}

/// How the network diameter aggregates node eccentricities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DmaxVariant {
    /// Largest eccentricity (the true diameter).
    #[default]
    Max,
    /// Mean eccentricity over all nodes, the form written as a mean.
    Mean,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum MetricsMode {
    Exact,
    Sampled { sample_size: usize, seed: u64 },
}

/// The NPCC of one snapshot, or a flag that it is undefined.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Npcc {
    Value(f64),
    Degenerate,
}

impl Npcc {
    pub fn value(self) -> Option<f64> {
        match self {
            Npcc::Value(r) => Some(r),
            Npcc::Degenerate => None,
        }
    }

    pub fn is_degenerate(self) -> bool {
        matches!(self, Npcc::Degenerate)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotMetrics {
    pub bin_id: i64,
    pub node_count: usize,
    pub edge_count: usize,
    /// Share of the snapshot's nodes that lie in the giant component.
    pub giant_fraction: f64,
    pub d_max: f64,
    pub d_effective: f64,
    pub sp: f64,
    pub r: Npcc,
    pub mode: MetricsMode,
}

impl SnapshotMetrics {
    pub fn is_degenerate(&self) -> bool {
        self.r.is_degenerate()
    }
}

/// Selects the diameter variant and the exact/sampled source set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetricsConfig {
    pub variant: DmaxVariant,
    pub mode: MetricsMode,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        MetricsConfig {
            variant: DmaxVariant::Max,
            mode: MetricsMode::Exact,
        }
    }
}

impl MetricsConfig {
    pub fn compute(&self, g: &SnapshotGraph) -> Result<SnapshotMetrics, MetricsError> {
        match self.mode {
            MetricsMode::Exact => Ok(snapshot_metrics(g, self.variant)),
            MetricsMode::Sampled { sample_size, seed } => {
                snapshot_metrics_sampled(g, sample_size, seed, self.variant)
            }
        }
    }
}

/// Integer summary of BFS runs from a set of sources on a connected graph.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
struct DistanceProfile {
    sources: u64,
    /// Reached non-source nodes per source (|V| - 1 on a connected graph).
    targets_per_source: u64,
    ecc_max: u32,
    ecc_sum: u64,
    dist_sum: u64,
    /// `histogram[d]` = number of (source, target) pairs at distance d.
    histogram: Vec<u64>,
}

impl DistanceProfile {
    fn merge(mut self, other: DistanceProfile) -> DistanceProfile {
        self.sources += other.sources;
        self.targets_per_source = self.targets_per_source.max(other.targets_per_source);
        self.ecc_max = self.ecc_max.max(other.ecc_max);
        self.ecc_sum += other.ecc_sum;
        self.dist_sum += other.dist_sum;
        if self.histogram.len() < other.histogram.len() {
            self.histogram.resize(other.histogram.len(), 0);
        }
        for (a, b) in self.histogram.iter_mut().zip(other.histogram) {
            *a += b;
        }
        self
    }

    fn pooled(&self) -> u64 {
        self.sources * self.targets_per_source
    }

    /// Ceiling-index order statistic at 90% of the pooled distances.
    fn percentile_90(&self) -> u32 {
        let m = self.pooled();
        let k = (9 * m).div_ceil(10);
        let mut seen = 0u64;
        for (d, &c) in self.histogram.iter().enumerate() {
            seen += c;
            if seen >= k && c > 0 {
                return d as u32;
            }
        }
        0
    }

    fn mean_distance(&self) -> f64 {
        self.dist_sum as f64 / self.pooled() as f64
    }

    fn d_max(&self, variant: DmaxVariant) -> f64 {
        match variant {
            DmaxVariant::Max => self.ecc_max as f64,
            DmaxVariant::Mean => self.ecc_sum as f64 / self.sources as f64,
        }
    }
}

/// Bit-parallel BFS from up to 64 sources at once. Bit `i` of `seen[v]`
/// records that source `i` has reached `v`; each level pulls the frontier
/// bits of a node's neighbours, so one sweep over the adjacency advances all
/// sources by one hop.
fn batch_profile(
    g: &SnapshotGraph,
    sources: &[NodeId],
    buf: &mut BatchBuffers,
) -> Result<DistanceProfile, MetricsError> {
    debug_assert!(!sources.is_empty() && sources.len() <= 64);
    let n = g.node_count();
    let full = if sources.len() == 64 {
        u64::MAX
    } else {
        (1u64 << sources.len()) - 1
    };
    buf.reset(n);
    for (i, &s) in sources.iter().enumerate() {
        buf.seen[s as usize] |= 1 << i;
        buf.frontier[s as usize] |= 1 << i;
    }
    let mut ecc = [0u32; 64];
    let mut p = DistanceProfile {
        sources: sources.len() as u64,
        targets_per_source: (n - 1) as u64,
        histogram: vec![0],
        ..Default::default()
    };
    let mut level = 0u32;
    loop {
        level += 1;
        let mut any = 0u64;
        let mut reached = 0u64;
        for w in 0..n {
            let unseen = full & !buf.seen[w];
            if unseen == 0 {
                buf.next[w] = 0;
                continue;
            }
            let mut acc = 0u64;
            for &u in g.neighbors(w as NodeId) {
                acc |= buf.frontier[u as usize];
            }
            acc &= unseen;
            buf.next[w] = acc;
            any |= acc;
            reached += acc.count_ones() as u64;
        }
        if any == 0 {
            break;
        }
        for (s, &x) in buf.seen.iter_mut().zip(&buf.next) {
            *s |= x;
        }
        std::mem::swap(&mut buf.frontier, &mut buf.next);
        p.histogram.push(reached);
        p.dist_sum += level as u64 * reached;
        let mut bits = any;
        while bits != 0 {
            ecc[bits.trailing_zeros() as usize] = level;
            bits &= bits - 1;
        }
    }
    if buf.seen.iter().any(|&s| s != full) {
        return Err(MetricsError::Disconnected);
    }
    let ecc = &ecc[..sources.len()];
    p.ecc_max = ecc.iter().copied().max().unwrap_or(0);
    p.ecc_sum = ecc.iter().map(|&e| e as u64).sum();
    Ok(p)
}

#[derive(Debug, Default)]
struct BatchBuffers {
    seen: Vec<u64>,
    frontier: Vec<u64>,
    next: Vec<u64>,
}

impl BatchBuffers {
    fn reset(&mut self, n: usize) {
        for v in [&mut self.seen, &mut self.frontier, &mut self.next] {
            v.clear();
            v.resize(n, 0);
        }
    }
}

/// Runs BFS from every source and folds the results. Errors if any source
/// fails to reach the whole graph.
fn profile(g: &SnapshotGraph, sources: &[NodeId]) -> Result<DistanceProfile, MetricsError> {
    sources
        .par_chunks(64)
        .map_init(BatchBuffers::default, |buf, batch| {
            batch_profile(g, batch, buf)
        })
        .try_reduce(DistanceProfile::default, |a, b| Ok(a.merge(b)))
}

fn require_pairs(g: &SnapshotGraph) -> Result<(), MetricsError> {
    if g.node_count() < 2 {
        Err(MetricsError::TooFewNodes(g.node_count()))
    } else {
        Ok(())
    }
}

fn all_sources(g: &SnapshotGraph) -> Vec<NodeId> {
    g.nodes().collect()
}

fn single_source(g: &SnapshotGraph, v: NodeId) -> Result<DistanceProfile, MetricsError> {
    g.check_node(v).map_err(|_| MetricsError::InvalidNode(v))?;
    profile(g, &[v])
}

/// Node diameter: largest hop distance from `v` to any other node.
pub fn eccentricity(g: &SnapshotGraph, v: NodeId) -> Result<u32, MetricsError> {
    Ok(single_source(g, v)?.ecc_max)
}

/// Mean hop distance from `v` to every other node.
pub fn node_mean_sp(g: &SnapshotGraph, v: NodeId) -> Result<f64, MetricsError> {
    g.check_node(v).map_err(|_| MetricsError::InvalidNode(v))?;
    require_pairs(g)?;
    Ok(single_source(g, v)?.mean_distance())
}

pub fn network_diameter(g: &SnapshotGraph, variant: DmaxVariant) -> Result<f64, MetricsError> {
    require_pairs(g)?;
    Ok(profile(g, &all_sources(g))?.d_max(variant))
}

/// Hop count within which 90% of node pairs lie (ceiling-index order
/// statistic, no interpolation).
pub fn effective_diameter(g: &SnapshotGraph) -> Result<u32, MetricsError> {
    require_pairs(g)?;
    Ok(profile(g, &all_sources(g))?.percentile_90())
}

/// Mean over nodes of the node mean shortest path.
pub fn mean_shortest_path(g: &SnapshotGraph) -> Result<f64, MetricsError> {
    require_pairs(g)?;
    Ok(profile(g, &all_sources(g))?.mean_distance())
}

/// `(d_max - d_effective) / (d_max - sp)`, or [`Npcc::Degenerate`] when the
/// denominator is below [`DEGENERACY_EPSILON`].
pub fn npcc(d_max: f64, d_effective: f64, sp: f64) -> Result<Npcc, MetricsError> {
    if !(d_max >= d_effective && d_max >= sp) {
        return Err(MetricsError::Precondition {
            d_max,
            d_effective,
            sp,
        });
    }
    Ok(npcc_unchecked(d_max, d_effective, sp))
}

/// Raw ratio without the ordering precondition. The mean-eccentricity
/// diameter can fall below the effective diameter, giving negative r.
fn npcc_unchecked(d_max: f64, d_effective: f64, sp: f64) -> Npcc {
    let denom = d_max - sp;
    if denom < DEGENERACY_EPSILON {
        Npcc::Degenerate
    } else {
        Npcc::Value((d_max - d_effective) / denom)
    }
}

fn degenerate_record(g: &SnapshotGraph, giant_nodes: usize, mode: MetricsMode) -> SnapshotMetrics {
    SnapshotMetrics {
        bin_id: g.bin_id(),
        node_count: g.node_count(),
        edge_count: g.edge_count(),
        giant_fraction: giant_fraction(g.node_count(), giant_nodes),
        d_max: 0.0,
        d_effective: 0.0,
        sp: 0.0,
        r: Npcc::Degenerate,
        mode,
    }
}

fn giant_fraction(total: usize, giant: usize) -> f64 {
    if total == 0 {
        0.0
    } else {
        giant as f64 / total as f64
    }
}

fn assemble(
    g: &SnapshotGraph,
    giant_nodes: usize,
    p: &DistanceProfile,
    variant: DmaxVariant,
    mode: MetricsMode,
) -> SnapshotMetrics {
    let d_max = p.d_max(variant);
    let d_effective = p.percentile_90() as f64;
    let sp = p.mean_distance();
    SnapshotMetrics {
        bin_id: g.bin_id(),
        node_count: g.node_count(),
        edge_count: g.edge_count(),
        giant_fraction: giant_fraction(g.node_count(), giant_nodes),
        d_max,
        d_effective,
        sp,
        r: npcc_unchecked(d_max, d_effective, sp),
        mode,
    }
}

/// Exact metrics from all-sources BFS on the giant component.
pub fn snapshot_metrics(g: &SnapshotGraph, variant: DmaxVariant) -> SnapshotMetrics {
    let giant = g.largest_component();
    if giant.node_count() < 2 {
        return degenerate_record(g, giant.node_count(), MetricsMode::Exact);
    }
    let p = profile(&giant, &all_sources(&giant)).expect("giant component is connected");
    assemble(g, giant.node_count(), &p, variant, MetricsMode::Exact)
}

/// Metrics estimated from `min(sample_size, |V|)` distinct BFS sources drawn
/// uniformly from the giant component. With `sample_size >= |V|` every node
/// is a source and the result equals [`snapshot_metrics`] bit for bit.
pub fn snapshot_metrics_sampled(
    g: &SnapshotGraph,
    sample_size: usize,
    seed: u64,
    variant: DmaxVariant,
) -> Result<SnapshotMetrics, MetricsError> {
    if sample_size == 0 {
        return Err(MetricsError::ZeroSampleSize);
    }
    let mode = MetricsMode::Sampled { sample_size, seed };
    let giant = g.largest_component();
    let n = giant.node_count();
    if n < 2 {
        return Ok(degenerate_record(g, n, mode));
    }
    let sources = if sample_size >= n {
        all_sources(&giant)
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut picked: Vec<NodeId> = rand::seq::index::sample(&mut rng, n, sample_size)
            .into_iter()
            .map(|i| i as NodeId)
            .collect();
        picked.sort_unstable();
        picked
    };
    let p = profile(&giant, &sources).expect("giant component is connected");
    Ok(assemble(g, n, &p, variant, mode))
}
