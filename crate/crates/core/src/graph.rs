//! Compact immutable undirected graph for a single topology snapshot.
//!
//! Adjacency is stored in compressed-row form:
//!
//!   offsets[v] .. offsets[v+1]  indexes the sorted neighbour ids of v
//!
//! Node ids are dense `u32`s assigned in order of first appearance while
//! building; the external labels (IP strings, router names) live in a side
//! table.

use std::collections::{HashMap, VecDeque};
use std::fmt;
use std::io::{BufRead, Write};

use thiserror::Error;

/// Dense node identifier.
pub type NodeId = u32;

/// Sentinel distance for nodes not reachable from the BFS source.
pub const UNREACHABLE: u32 = u32::MAX;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GraphError {
    #[error("node id {id} out of range for graph with {node_count} nodes")]
    InvalidNode { id: NodeId, node_count: usize },
    #[error("line {line}: expected two whitespace-separated labels")]
    MalformedEdgeLine { line: usize },
    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for GraphError {
    fn from(e: std::io::Error) -> Self {
        GraphError::Io(e.to_string())
    }
}

#[derive(Clone, PartialEq, Eq)]
pub struct SnapshotGraph {
    offsets: Vec<usize>,
    neighbors: Vec<NodeId>,
    labels: Vec<String>,
    index: HashMap<String, NodeId>,
    bin_id: i64,
}

impl fmt::Debug for SnapshotGraph {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SnapshotGraph")
            .field("bin_id", &self.bin_id)
            .field("node_count", &self.node_count())
            .field("edge_count", &self.edge_count())
            .finish()
    }
}

impl Default for SnapshotGraph {
    fn default() -> Self {
        SnapshotGraph {
            offsets: vec![0],
            neighbors: Vec::new(),
            labels: Vec::new(),
            index: HashMap::new(),
            bin_id: 0,
        }
    }
}

impl SnapshotGraph {
    /// Builds a simple undirected graph from labelled edges.
    ///
    /// Self-loops and duplicate edges (in either orientation) are dropped.
    /// Every label that appears, including on a dropped self-loop, becomes a
    /// node; ids follow order of first appearance.
    pub fn from_edges<I, A, B>(edges: I) -> Self
    where
        I: IntoIterator<Item = (A, B)>,
        A: AsRef<str>,
        B: AsRef<str>,
    {
        let mut index: HashMap<String, NodeId> = HashMap::new();
        let mut labels: Vec<String> = Vec::new();
        let mut pairs: Vec<(NodeId, NodeId)> = Vec::new();
        let mut intern = |label: &str| -> NodeId {
            if let Some(&id) = index.get(label) {
                return id;
            }
            let id = labels.len() as NodeId;
            labels.push(label.to_owned());
            index.insert(label.to_owned(), id);
            id
        };
        for (a, b) in edges {
            let u = intern(a.as_ref());
            let v = intern(b.as_ref());
            if u != v {
                pairs.push((u, v));
            }
        }
        Self::from_id_pairs(labels, index, &pairs)
    }

    /// Builds a graph over `node_count` nodes labelled `"0"`, `"1"`, ... from
    /// integer endpoint pairs. Out-of-range ids are a caller bug.
    pub fn from_indexed_edges(node_count: usize, edges: &[(NodeId, NodeId)]) -> Self {
        let labels: Vec<String> = (0..node_count).map(|i| i.to_string()).collect();
        let index = labels
            .iter()
            .enumerate()
            .map(|(i, l)| (l.clone(), i as NodeId))
            .collect();
        let pairs: Vec<(NodeId, NodeId)> = edges.iter().copied().filter(|(u, v)| u != v).collect();
        assert!(
            pairs
                .iter()
                .all(|&(u, v)| (u as usize) < node_count && (v as usize) < node_count),
            "edge endpoint out of range"
        );
        Self::from_id_pairs(labels, index, &pairs)
    }

    fn from_id_pairs(
        labels: Vec<String>,
        index: HashMap<String, NodeId>,
        pairs: &[(NodeId, NodeId)],
    ) -> Self {
        let n = labels.len();
        let mut degree = vec![0usize; n + 1];
        for &(u, v) in pairs {
            degree[u as usize] += 1;
            degree[v as usize] += 1;
        }
        let mut offsets = vec![0usize; n + 1];
        for v in 0..n {
            offsets[v + 1] = offsets[v] + degree[v];
        }
        let mut cursor = offsets.clone();
        let mut raw = vec![0 as NodeId; offsets[n]];
        for &(u, v) in pairs {
            raw[cursor[u as usize]] = v;
            cursor[u as usize] += 1;
            raw[cursor[v as usize]] = u;
            cursor[v as usize] += 1;
        }
        // Sort and dedup each row, then compact.
        let mut neighbors = Vec::with_capacity(raw.len());
        let mut compact = vec![0usize; n + 1];
        for v in 0..n {
            let row = &mut raw[offsets[v]..offsets[v + 1]];
            row.sort_unstable();
            let mut last = None;
            for &w in row.iter() {
                if last != Some(w) {
                    neighbors.push(w);
                    last = Some(w);
                }
            }
            compact[v + 1] = neighbors.len();
        }
        neighbors.shrink_to_fit();
        SnapshotGraph {
            offsets: compact,
            neighbors,
            labels,
            index,
            bin_id: 0,
        }
    }

    pub fn with_bin_id(mut self, bin_id: i64) -> Self {
        self.bin_id = bin_id;
        self
    }

    pub fn bin_id(&self) -> i64 {
        self.bin_id
    }

    pub fn node_count(&self) -> usize {
        self.labels.len()
    }

    pub fn edge_count(&self) -> usize {
        self.neighbors.len() / 2
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    #[inline]
    pub fn neighbors(&self, v: NodeId) -> &[NodeId] {
        let v = v as usize;
        &self.neighbors[self.offsets[v]..self.offsets[v + 1]]
    }

    #[inline]
    pub fn degree(&self, v: NodeId) -> usize {
        let v = v as usize;
        self.offsets[v + 1] - self.offsets[v]
    }

    pub fn label(&self, v: NodeId) -> &str {
        &self.labels[v as usize]
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn node_id(&self, label: &str) -> Option<NodeId> {
        self.index.get(label).copied()
    }

    pub fn nodes(&self) -> impl Iterator<Item = NodeId> {
        0..self.node_count() as NodeId
    }

    /// Each undirected edge once, as `(u, v)` with `u < v`, in id order.
    pub fn edges(&self) -> impl Iterator<Item = (NodeId, NodeId)> + '_ {
        self.nodes().flat_map(move |u| {
            self.neighbors(u)
                .iter()
                .copied()
                .filter(move |&v| u < v)
                .map(move |v| (u, v))
        })
    }

    pub fn check_node(&self, v: NodeId) -> Result<(), GraphError> {
        if (v as usize) < self.node_count() {
            Ok(())
        } else {
            Err(GraphError::InvalidNode {
                id: v,
                node_count: self.node_count(),
            })
        }
    }

    /// Exact hop distances from `source`.
    pub fn bfs_distances(&self, source: NodeId) -> Result<DistanceVector, GraphError> {
        self.check_node(source)?;
        let mut buf = BfsBuffers::new(self.node_count());
        self.bfs_fill(source, &mut buf);
        Ok(DistanceVector {
            source,
            distances: buf.dist,
        })
    }

    /// BFS into caller-owned buffers. Returns the number of nodes reached
    /// (including the source). `buf.dist` must be sized to `node_count`.
    fn bfs_fill(&self, source: NodeId, buf: &mut BfsBuffers) -> usize {
        buf.dist.fill(UNREACHABLE);
        buf.queue.clear();
        buf.dist[source as usize] = 0;
        buf.queue.push(source);
        let mut head = 0;
        while head < buf.queue.len() {
            let u = buf.queue[head];
            head += 1;
            let next = buf.dist[u as usize] + 1;
            for &w in self.neighbors(u) {
                let slot = &mut buf.dist[w as usize];
                if *slot == UNREACHABLE {
                    *slot = next;
                    buf.queue.push(w);
                }
            }
        }
        buf.queue.len()
    }

    /// Component id per node, numbered in order of smallest member id.
    pub fn components(&self) -> (Vec<u32>, Vec<usize>) {
        let n = self.node_count();
        let mut comp = vec![u32::MAX; n];
        let mut sizes = Vec::new();
        let mut queue = VecDeque::new();
        for start in 0..n {
            if comp[start] != u32::MAX {
                continue;
            }
            let c = sizes.len() as u32;
            comp[start] = c;
            queue.push_back(start as NodeId);
            let mut size = 0usize;
            while let Some(u) = queue.pop_front() {
                size += 1;
                for &w in self.neighbors(u) {
                    if comp[w as usize] == u32::MAX {
                        comp[w as usize] = c;
                        queue.push_back(w);
                    }
                }
            }
            sizes.push(size);
        }
        (comp, sizes)
    }

    pub fn is_connected(&self) -> bool {
        self.components().1.len() <= 1
    }

    /// Induced subgraph on the largest connected component. Ties go to the
    /// component holding the smallest node id.
    pub fn largest_component(&self) -> SnapshotGraph {
        let (comp, sizes) = self.components();
        if sizes.len() <= 1 {
            return self.clone();
        }
        // Components are numbered by smallest member, so the first maximum
        // wins the tie.
        let mut best = 0usize;
        for (c, &s) in sizes.iter().enumerate() {
            if s > sizes[best] {
                best = c;
            }
        }
        let keep: Vec<bool> = comp.iter().map(|&c| c as usize == best).collect();
        self.induced_subgraph(&keep)
    }

    /// Induced subgraph on nodes with `keep[v] == true`. Surviving nodes keep
    /// their relative order and labels.
    pub fn induced_subgraph(&self, keep: &[bool]) -> SnapshotGraph {
        assert_eq!(keep.len(), self.node_count());
        let mut remap = vec![UNREACHABLE; self.node_count()];
        let mut labels = Vec::new();
        let mut index = HashMap::new();
        for v in 0..self.node_count() {
            if keep[v] {
                let id = labels.len() as NodeId;
                remap[v] = id;
                labels.push(self.labels[v].clone());
                index.insert(self.labels[v].clone(), id);
            }
        }
        let mut offsets = Vec::with_capacity(labels.len() + 1);
        offsets.push(0);
        let mut neighbors = Vec::new();
        for v in 0..self.node_count() {
            if !keep[v] {
                continue;
            }
            // Old ids are sorted and remap is monotone, so rows stay sorted.
            neighbors.extend(
                self.neighbors(v as NodeId)
                    .iter()
                    .filter(|&&w| keep[w as usize])
                    .map(|&w| remap[w as usize]),
            );
            offsets.push(neighbors.len());
        }
        SnapshotGraph {
            offsets,
            neighbors,
            labels,
            index,
            bin_id: self.bin_id,
        }
    }

    /// Reads the edge-list text format: two whitespace-separated labels per
    /// line, `#` comments and blank lines ignored.
    pub fn read_edge_list<R: BufRead>(reader: R) -> Result<SnapshotGraph, GraphError> {
        let mut edges = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut parts = line.split_whitespace();
            match (parts.next(), parts.next(), parts.next()) {
                (Some(a), Some(b), None) => edges.push((a.to_owned(), b.to_owned())),
                _ => return Err(GraphError::MalformedEdgeLine { line: i + 1 }),
            }
        }
        Ok(SnapshotGraph::from_edges(edges))
    }

    /// Writes one `label label` line per edge in id order.
    pub fn write_edge_list<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for (u, v) in self.edges() {
            writeln!(out, "{} {}", self.label(u), self.label(v))?;
        }
        Ok(())
    }
}

/// Scratch space for repeated BFS over one graph.
#[derive(Debug, Clone)]
struct BfsBuffers {
    dist: Vec<u32>,
    queue: Vec<NodeId>,
}

impl BfsBuffers {
    fn new(n: usize) -> Self {
        BfsBuffers {
            dist: vec![UNREACHABLE; n],
            queue: Vec::with_capacity(n),
        }
    }
}

/// Hop distances from one source; [`UNREACHABLE`] marks other components.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DistanceVector {
    pub source: NodeId,
    pub distances: Vec<u32>,
}

impl DistanceVector {
    pub fn get(&self, v: NodeId) -> Option<u32> {
        match self.distances[v as usize] {
            UNREACHABLE => None,
            d => Some(d),
        }
    }
}
