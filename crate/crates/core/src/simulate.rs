//! Scale-free graph generation, node-removal attacks and synthetic labelled
//! snapshot streams.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evaluate::GroundTruth;
use crate::graph::{NodeId, SnapshotGraph};
use crate::metrics::{MetricsConfig, MetricsError, SnapshotMetrics};

/// Share of edges rewired in each normal tick of a synthetic stream.
pub const NORMAL_REWIRE_FRACTION: f64 = 0.005;

#[derive(Debug, Error, PartialEq)]
pub enum SimulateError {
    #[error("need n > m >= 1, got n={n}, m={m}")]
    BadGenerator { n: usize, m: usize },
    #[error("need 0 < step_fraction <= max_fraction <= 1, got step={step}, max={max}")]
    BadSchedule { step: f64, max: f64 },
    #[error("no nodes left to remove")]
    Exhausted,
    #[error("anomaly window {start}..{end} is empty or outside 0..{ticks}")]
    WindowRange {
        start: usize,
        end: usize,
        ticks: usize,
    },
    #[error("anomaly fraction must lie in (0, 1), got {0}")]
    WindowFraction(f64),
    #[error("anomaly windows {0:?} and {1:?} overlap")]
    OverlappingWindows((usize, usize), (usize, usize)),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

/// Barabási–Albert preferential attachment. Starts from a clique on `m + 1`
/// nodes; every later node links to `m` distinct earlier nodes chosen with
/// probability proportional to their current degree.
pub fn generate_ba(n: usize, m: usize, seed: u64) -> Result<SnapshotGraph, SimulateError> {
    if m == 0 || n <= m {
        return Err(SimulateError::BadGenerator { n, m });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut edges: Vec<(NodeId, NodeId)> = Vec::with_capacity(m * n);
    // Each node appears here once per incident edge.
    let mut endpoints: Vec<NodeId> = Vec::with_capacity(2 * m * n);
    for u in 0..=m as NodeId {
        for v in u + 1..=m as NodeId {
            edges.push((u, v));
            endpoints.push(u);
            endpoints.push(v);
        }
    }
    let mut chosen: Vec<NodeId> = Vec::with_capacity(m);
    for new in (m + 1)..n {
        chosen.clear();
        while chosen.len() < m {
            let t = endpoints[rng.gen_range(0..endpoints.len())];
            if !chosen.contains(&t) {
                chosen.push(t);
            }
        }
        for &t in &chosen {
            edges.push((t, new as NodeId));
            endpoints.push(t);
            endpoints.push(new as NodeId);
        }
    }
    Ok(SnapshotGraph::from_indexed_edges(n, &edges))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackStrategy {
    /// Highest current degree among surviving nodes.
    TargetedAdaptive,
    /// Highest degree in the intact graph.
    TargetedStatic,
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttackSchedule {
    pub strategy: AttackStrategy,
    pub step_fraction: f64,
    pub max_fraction: f64,
    pub seed: u64,
}

impl AttackSchedule {
    pub fn validate(&self) -> Result<(), SimulateError> {
        let (step, max) = (self.step_fraction, self.max_fraction);
        if step > 0.0 && step <= max && max <= 1.0 {
            Ok(())
        } else {
            Err(SimulateError::BadSchedule { step, max })
        }
    }

    /// Nodes removed per step.
    pub fn step_count(&self, n: usize) -> usize {
        fraction_count(self.step_fraction, n).max(1)
    }

    /// Total nodes removed by the end of the schedule.
    pub fn budget(&self, n: usize) -> usize {
        fraction_count(self.max_fraction, n)
    }
}

/// `ceil(fraction * n)`, tolerant of representation error such as
/// `0.15 * 2000 = 300.00000000000006`.
fn fraction_count(fraction: f64, n: usize) -> usize {
    ((fraction * n as f64) - 1e-9).ceil().max(0.0) as usize
}

/// Picks the next `ceil(step_fraction * n)` nodes to remove. Degree ties go
/// to the smaller node id. Random picks are seeded by the schedule seed and
/// the number of nodes already removed.
pub fn attack_step(
    g: &SnapshotGraph,
    schedule: &AttackSchedule,
    removed: &[bool],
) -> Result<Vec<NodeId>, SimulateError> {
    assert_eq!(removed.len(), g.node_count());
    let remaining: Vec<NodeId> = g.nodes().filter(|&v| !removed[v as usize]).collect();
    if remaining.is_empty() {
        return Err(SimulateError::Exhausted);
    }
    let count = schedule.step_count(g.node_count()).min(remaining.len());
    let by_degree = |degree: &dyn Fn(NodeId) -> usize| {
        let mut ranked: Vec<(usize, NodeId)> = remaining.iter().map(|&v| (degree(v), v)).collect();
        ranked.sort_unstable_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
        ranked
            .into_iter()
            .take(count)
            .map(|(_, v)| v)
            .collect::<Vec<_>>()
    };
    Ok(match schedule.strategy {
        AttackStrategy::TargetedAdaptive => by_degree(&|v| {
            g.neighbors(v)
                .iter()
                .filter(|&&w| !removed[w as usize])
                .count()
        }),
        AttackStrategy::TargetedStatic => by_degree(&|v| g.degree(v)),
        AttackStrategy::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(schedule.seed);
            rng.set_stream((g.node_count() - remaining.len()) as u64);
            let mut picked: Vec<NodeId> = remaining
                .choose_multiple(&mut rng, count)
                .copied()
                .collect();
            picked.sort_unstable();
            picked
        }
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub removed_fraction: f64,
    pub metrics: SnapshotMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackTrajectory {
    /// The intact graph.
    pub baseline: TrajectoryPoint,
    /// One point after each cumulative removal step.
    pub points: Vec<TrajectoryPoint>,
}

impl AttackTrajectory {
    pub fn all_points(&self) -> impl Iterator<Item = &TrajectoryPoint> {
        std::iter::once(&self.baseline).chain(self.points.iter())
    }
}

/// Runs the schedule against `g`, measuring the residual graph after every
/// step.
pub fn attack_trajectory(
    g: &SnapshotGraph,
    schedule: &AttackSchedule,
    metrics: &MetricsConfig,
) -> Result<AttackTrajectory, SimulateError> {
    schedule.validate()?;
    let n = g.node_count();
    let measure =
        |removed: &[bool], count: usize, step: i64| -> Result<TrajectoryPoint, SimulateError> {
            let keep: Vec<bool> = removed.iter().map(|&r| !r).collect();
            let residual = g.induced_subgraph(&keep).with_bin_id(step);
            Ok(TrajectoryPoint {
                removed_fraction: if n == 0 { 0.0 } else { count as f64 / n as f64 },
                metrics: metrics.compute(&residual)?,
            })
        };
    let mut removed = vec![false; n];
    let mut count = 0usize;
    let baseline = measure(&removed, 0, 0)?;
    let budget = schedule.budget(n);
    let mut points = Vec::new();
    while count < budget {
        let mut next = attack_step(g, schedule, &removed)?;
        next.truncate(budget - count);
        for v in next {
            removed[v as usize] = true;
            count += 1;
        }
        points.push(measure(&removed, count, points.len() as i64 + 1)?);
    }
    Ok(AttackTrajectory { baseline, points })
}

/// Generates `BA(n, m)` from `schedule.seed` and attacks it.
pub fn simulate_attack_curve(
    n: usize,
    m: usize,
    schedule: &AttackSchedule,
    metrics: &MetricsConfig,
) -> Result<AttackTrajectory, SimulateError> {
    schedule.validate()?;
    let g = generate_ba(n, m, schedule.seed)?;
    attack_trajectory(&g, schedule, metrics)
}

/// Degree-preserving double edge swaps on `count` random edge pairs.
/// Swaps that would create a self-loop or a duplicate edge are retried a
/// bounded number of times and then skipped.
pub fn rewire(g: &SnapshotGraph, count: usize, rng: &mut ChaCha8Rng) -> SnapshotGraph {
    let mut edges: Vec<(NodeId, NodeId)> = g.edges().collect();
    if edges.len() < 2 {
        return g.clone();
    }
    let mut present: HashSet<(NodeId, NodeId)> = edges.iter().copied().collect();
    let key = |a: NodeId, b: NodeId| if a < b { (a, b) } else { (b, a) };
    for _ in 0..count {
        for _attempt in 0..16 {
            let i = rng.gen_range(0..edges.len());
            let j = rng.gen_range(0..edges.len());
            if i == j {
                continue;
            }
            let (a, b) = edges[i];
            let (c, d) = if rng.gen::<bool>() {
                edges[j]
            } else {
                (edges[j].1, edges[j].0)
            };
            if a == d || c == b {
                continue;
            }
            let (e1, e2) = (key(a, d), key(c, b));
            if present.contains(&e1) || present.contains(&e2) {
                continue;
            }
            present.remove(&key(a, b));
            present.remove(&key(c, d));
            present.insert(e1);
            present.insert(e2);
            edges[i] = e1;
            edges[j] = e2;
            break;
        }
    }
    SnapshotGraph::from_indexed_edges(g.node_count(), &edges)
}

/// Removes `ceil(fraction * n)` hubs one at a time, recomputing degrees
/// after every removal.
pub fn remove_hubs(g: &SnapshotGraph, fraction: f64) -> SnapshotGraph {
    let n = g.node_count();
    let target = fraction_count(fraction, n);
    let schedule = AttackSchedule {
        strategy: AttackStrategy::TargetedAdaptive,
        step_fraction: 1.0 / n.max(1) as f64,
        max_fraction: 1.0,
        seed: 0,
    };
    let mut removed = vec![false; n];
    let mut degree: Vec<usize> = g.nodes().map(|v| g.degree(v)).collect();
    for _ in 0..target.min(n) {
        // Same ranking as attack_step with a one-node step.
        let hub = g
            .nodes()
            .filter(|&v| !removed[v as usize])
            .max_by(|&a, &b| degree[a as usize].cmp(&degree[b as usize]).then(b.cmp(&a)))
            .expect("target <= n");
        debug_assert_eq!(attack_step(g, &schedule, &removed).unwrap(), vec![hub]);
        removed[hub as usize] = true;
        for &w in g.neighbors(hub) {
            degree[w as usize] -= 1;
        }
    }
    let keep: Vec<bool> = removed.iter().map(|&r| !r).collect();
    g.induced_subgraph(&keep)
}

/// A half-open tick range `[start, end)` during which `fraction` of hubs are
/// knocked out.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnomalyWindow {
    pub start: usize,
    pub end: usize,
    pub fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledStream {
    pub metrics: Vec<SnapshotMetrics>,
    pub labels: Vec<(i64, GroundTruth)>,
}

fn validate_windows(ticks: usize, windows: &[AnomalyWindow]) -> Result<(), SimulateError> {
    for w in windows {
        if w.start >= w.end || w.end > ticks {
            return Err(SimulateError::WindowRange {
                start: w.start,
                end: w.end,
                ticks,
            });
        }
        if !(w.fraction > 0.0 && w.fraction < 1.0) {
            return Err(SimulateError::WindowFraction(w.fraction));
        }
    }
    let mut sorted: Vec<&AnomalyWindow> = windows.iter().collect();
    sorted.sort_by_key(|w| w.start);
    for pair in sorted.windows(2) {
        if pair[1].start < pair[0].end {
            return Err(SimulateError::OverlappingWindows(
                (pair[0].start, pair[0].end),
                (pair[1].start, pair[1].end),
            ));
        }
    }
    Ok(())
}

/// Builds the graph observed at `tick`: `base` with a seeded 0.5% of edges
/// rewired, minus the hubs of any anomaly window covering the tick.
pub fn stream_snapshot(
    base: &SnapshotGraph,
    tick: usize,
    windows: &[AnomalyWindow],
    seed: u64,
) -> SnapshotGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(tick as u64);
    let swaps = ((base.edge_count() as f64 * NORMAL_REWIRE_FRACTION).ceil()) as usize;
    let perturbed = rewire(base, swaps, &mut rng);
    let g = match windows.iter().find(|w| (w.start..w.end).contains(&tick)) {
        Some(w) => remove_hubs(&perturbed, w.fraction),
        None => perturbed,
    };
    g.with_bin_id(tick as i64)
}

/// Metrics and ground truth for `ticks` synthetic snapshots of `base`.
pub fn synthesize_labeled_stream(
    base: &SnapshotGraph,
    ticks: usize,
    windows: &[AnomalyWindow],
    seed: u64,
    metrics: &MetricsConfig,
) -> Result<LabeledStream, SimulateError> {
    validate_windows(ticks, windows)?;
    let measured: Result<Vec<SnapshotMetrics>, MetricsError> = (0..ticks)
        .into_par_iter()
        .map(|t| metrics.compute(&stream_snapshot(base, t, windows, seed)))
        .collect();
    let labels = (0..ticks)
        .map(|t| {
            let abnormal = windows.iter().any(|w| (w.start..w.end).contains(&t));
            let truth = if abnormal {
                GroundTruth::Abnormal
            } else {
                GroundTruth::Normal
            };
            (t as i64, truth)
        })
        .collect();
    Ok(LabeledStream {
        metrics: measured?,
        labels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::fixtures::*;
    use crate::metrics::{DmaxVariant, MetricsMode};

    fn schedule(strategy: AttackStrategy, step: f64, max: f64) -> AttackSchedule {
        AttackSchedule {
            strategy,
            step_fraction: step,
            max_fraction: max,
            seed: 11,
        }
    }

    #[test]
    fn ba_edge_count_matches_construction() {
        let g = generate_ba(100, 2, 42).unwrap();
        assert_eq!(g.node_count(), 100);
        assert_eq!(g.edge_count(), 197);
        let total: usize = g.nodes().map(|v| g.degree(v)).sum();
        assert_eq!(total, 2 * g.edge_count());
        for (n, m) in [(50, 1), (200, 3), (31, 5)] {
            let g = generate_ba(n, m, 1).unwrap();
            assert_eq!(g.edge_count(), m * (n - m - 1) + m * (m + 1) / 2);
            assert!(g.is_connected());
        }
    }

    #[test]
    fn ba_small_and_errors() {
        let g = generate_ba(3, 1, 5).unwrap();
        assert_eq!(g.edge_count(), 2);
        assert!(g.is_connected());
        assert_eq!(
            generate_ba(2, 2, 0),
            Err(SimulateError::BadGenerator { n: 2, m: 2 })
        );
        assert!(generate_ba(5, 0, 0).is_err());
    }

    #[test]
    fn ba_is_deterministic() {
        let a = generate_ba(500, 2, 9).unwrap();
        let b = generate_ba(500, 2, 9).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, generate_ba(500, 2, 10).unwrap());
    }

    #[test]
    fn attack_picks() {
        let s = star(6);
        let sched = schedule(AttackStrategy::TargetedAdaptive, 1.0 / 7.0, 1.0);
        assert_eq!(attack_step(&s, &sched, &[false; 7]).unwrap(), vec![0]);

        let p = path(5);
        let sched = schedule(AttackStrategy::TargetedAdaptive, 0.2, 1.0);
        assert_eq!(attack_step(&p, &sched, &[false; 5]).unwrap(), vec![1]);
        // After removing node 1, node 3 has the top current degree.
        let removed = [false, true, false, false, false];
        assert_eq!(attack_step(&p, &sched, &removed).unwrap(), vec![3]);
        let stat = schedule(AttackStrategy::TargetedStatic, 0.2, 1.0);
        assert_eq!(attack_step(&p, &stat, &removed).unwrap(), vec![2]);

        let rnd = schedule(AttackStrategy::Random, 0.4, 1.0);
        let a = attack_step(&p, &rnd, &[false; 5]).unwrap();
        assert_eq!(a, attack_step(&p, &rnd, &[false; 5]).unwrap());
        assert_eq!(a.len(), 2);

        assert_eq!(
            attack_step(&p, &sched, &[true; 5]),
            Err(SimulateError::Exhausted)
        );
    }

    #[test]
    fn schedule_validation_and_counts() {
        assert!(schedule(AttackStrategy::Random, 0.0, 0.1)
            .validate()
            .is_err());
        assert!(schedule(AttackStrategy::Random, 0.2, 0.1)
            .validate()
            .is_err());
        assert!(schedule(AttackStrategy::Random, 0.1, 1.5)
            .validate()
            .is_err());
        let s = schedule(AttackStrategy::TargetedAdaptive, 0.005, 0.15);
        assert_eq!(s.step_count(2000), 10);
        assert_eq!(s.budget(2000), 300);
    }

    #[test]
    fn removing_star_center_isolates_leaves() {
        let s = star(9);
        let sched = schedule(AttackStrategy::TargetedAdaptive, 0.1, 0.1);
        let t = attack_trajectory(&s, &sched, &MetricsConfig::default()).unwrap();
        assert_eq!(t.points.len(), 1);
        let last = &t.points[0].metrics;
        assert_eq!(last.giant_fraction, 1.0 / 9.0);
        assert!(last.is_degenerate());
    }

    #[test]
    fn trajectory_has_one_point_per_step() {
        let sched = AttackSchedule {
            strategy: AttackStrategy::TargetedAdaptive,
            step_fraction: 0.005,
            max_fraction: 0.15,
            seed: 7,
        };
        let cfg = MetricsConfig {
            variant: DmaxVariant::Max,
            mode: MetricsMode::Sampled {
                sample_size: 16,
                seed: 1,
            },
        };
        let t = simulate_attack_curve(400, 2, &sched, &cfg).unwrap();
        assert_eq!(t.points.len(), 30);
        assert_eq!(t.baseline.removed_fraction, 0.0);
        assert!((t.points.last().unwrap().removed_fraction - 0.15).abs() < 1e-12);
        assert!(t
            .all_points()
            .collect::<Vec<_>>()
            .windows(2)
            .all(|w| w[0].removed_fraction <= w[1].removed_fraction));
        assert_eq!(t, simulate_attack_curve(400, 2, &sched, &cfg).unwrap());
    }

    #[test]
    fn rewire_preserves_degrees() {
        let g = generate_ba(300, 2, 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let h = rewire(&g, 20, &mut rng);
        assert_eq!(h.edge_count(), g.edge_count());
        for v in g.nodes() {
            assert_eq!(g.degree(v), h.degree(v));
        }
        assert_ne!(g, h);
    }

    #[test]
    fn remove_hubs_takes_highest_degrees() {
        let g = generate_ba(200, 2, 3).unwrap();
        let h = remove_hubs(&g, 0.05);
        assert_eq!(h.node_count(), 190);
        let mut degrees: Vec<(usize, NodeId)> = g.nodes().map(|v| (g.degree(v), v)).collect();
        degrees.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
        assert!(h.node_id(&degrees[0].1.to_string()).is_none());
    }

    #[test]
    fn window_validation() {
        let base = path(10);
        let cfg = MetricsConfig::default();
        let w = |start, end, fraction| AnomalyWindow {
            start,
            end,
            fraction,
        };
        assert!(matches!(
            synthesize_labeled_stream(&base, 10, &[w(5, 12, 0.1)], 0, &cfg),
            Err(SimulateError::WindowRange { .. })
        ));
        assert!(matches!(
            synthesize_labeled_stream(&base, 10, &[w(1, 3, 1.0)], 0, &cfg),
            Err(SimulateError::WindowFraction(_))
        ));
        assert!(matches!(
            synthesize_labeled_stream(&base, 10, &[w(1, 4, 0.1), w(3, 6, 0.1)], 0, &cfg),
            Err(SimulateError::OverlappingWindows(..))
        ));
    }

    #[test]
    fn stream_labels_follow_windows() {
        let base = generate_ba(150, 2, 1).unwrap();
        let cfg = MetricsConfig::default();
        let s = synthesize_labeled_stream(&base, 60, &[], 3, &cfg).unwrap();
        assert_eq!(s.metrics.len(), 60);
        assert!(s.labels.iter().all(|(_, l)| *l == GroundTruth::Normal));

        let win = AnomalyWindow {
            start: 10,
            end: 46,
            fraction: 0.06,
        };
        let s = synthesize_labeled_stream(&base, 60, &[win], 3, &cfg).unwrap();
        let abnormal = s
            .labels
            .iter()
            .filter(|(_, l)| *l == GroundTruth::Abnormal)
            .count();
        assert_eq!(abnormal, 36);
        assert!(s
            .metrics
            .iter()
            .enumerate()
            .all(|(t, m)| m.bin_id == t as i64));
        assert_eq!(
            s,
            synthesize_labeled_stream(&base, 60, &[win], 3, &cfg).unwrap()
        );
    }
}
