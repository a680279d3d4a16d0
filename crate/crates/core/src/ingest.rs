//! Traceroute path records to per-bin topology snapshots.
//!
//! Input lines look like `timestamp|hop1|hop2|...`, with `*` for a hop that
//! did not answer. Paths longer than [`MAX_HOPS`] are rejected, consecutive
//! resolved hops become undirected links, and links are grouped into
//! fixed-width time bins.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::BufRead;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::SnapshotGraph;

/// Longest accepted path, in hops.
pub const MAX_HOPS: usize = 64;

/// Default bin width: ten minutes.
pub const DEFAULT_BIN_SECONDS: u64 = 600;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Hop {
    Resolved(String),
    Unresolved,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PathRecord {
    pub timestamp: u64,
    pub hops: Vec<Hop>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum Rejection {
    /// More than [`MAX_HOPS`] hops. The timestamp is kept so the rejection can
    /// be attributed to its bin.
    #[error("path longer than {MAX_HOPS} hops")]
    TooLong { timestamp: u64 },
    #[error("malformed record")]
    Malformed,
}

/// Parses one record line. Comment and blank lines are the caller's business;
/// [`read_records`] skips them.
pub fn parse_path_record(line: &str) -> Result<PathRecord, Rejection> {
    let mut fields = line.trim_end_matches(['\r', '\n']).split('|');
    let timestamp = fields
        .next()
        .and_then(|t| t.trim().parse::<u64>().ok())
        .ok_or(Rejection::Malformed)?;
    let mut hops = Vec::new();
    for f in fields {
        let f = f.trim();
        if f.is_empty() {
            return Err(Rejection::Malformed);
        }
        hops.push(if f == "*" {
            Hop::Unresolved
        } else {
            Hop::Resolved(f.to_owned())
        });
    }
    if hops.is_empty() {
        return Err(Rejection::Malformed);
    }
    if hops.len() > MAX_HOPS {
        return Err(Rejection::TooLong { timestamp });
    }
    Ok(PathRecord { timestamp, hops })
}

/// Links between consecutive resolved hops. An unresolved hop breaks the
/// chain; repeated hops yield no self-link.
pub fn edges_from_path(rec: &PathRecord) -> Vec<(&str, &str)> {
    rec.hops
        .windows(2)
        .filter_map(|w| match (&w[0], &w[1]) {
            (Hop::Resolved(a), Hop::Resolved(b)) if a != b => Some((a.as_str(), b.as_str())),
            _ => None,
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinSpec {
    pub bin_seconds: u64,
    pub origin: i64,
}

impl Default for BinSpec {
    fn default() -> Self {
        BinSpec {
            bin_seconds: DEFAULT_BIN_SECONDS,
            origin: 0,
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("bin width must be positive")]
pub struct ZeroBinWidth;

impl BinSpec {
    pub fn new(bin_seconds: u64, origin: i64) -> Result<Self, ZeroBinWidth> {
        if bin_seconds == 0 {
            return Err(ZeroBinWidth);
        }
        Ok(BinSpec {
            bin_seconds,
            origin,
        })
    }

    pub fn bin_of(&self, timestamp: u64) -> i64 {
        (timestamp as i64 - self.origin).div_euclid(self.bin_seconds as i64)
    }
}

/// Per-bin link set and record counters.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct BinAccumulator {
    links: BTreeSet<(String, String)>,
    pub record_count: u64,
    pub rejected_count: u64,
}

impl BinAccumulator {
    fn add(&mut self, rec: &PathRecord) {
        self.record_count += 1;
        for (a, b) in edges_from_path(rec) {
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            self.links.insert((lo.to_owned(), hi.to_owned()));
        }
    }

    pub fn link_count(&self) -> usize {
        self.links.len()
    }

    /// Links are kept sorted, so the graph does not depend on record order.
    pub fn to_graph(&self, bin_id: i64) -> SnapshotGraph {
        SnapshotGraph::from_edges(self.links.iter().map(|(a, b)| (a.as_str(), b.as_str())))
            .with_bin_id(bin_id)
    }
}

/// Streaming binner: feed records or raw lines, then collect snapshots.
#[derive(Debug, Clone, Default)]
pub struct Binner {
    spec: BinSpec,
    bins: BTreeMap<i64, BinAccumulator>,
    /// Malformed lines carry no usable timestamp and are counted here.
    pub unbinned_rejects: u64,
}

impl Binner {
    pub fn new(spec: BinSpec) -> Self {
        Binner {
            spec,
            ..Default::default()
        }
    }

    pub fn push(&mut self, rec: &PathRecord) {
        let bin = self.spec.bin_of(rec.timestamp);
        self.bins.entry(bin).or_default().add(rec);
    }

    pub fn push_outcome(&mut self, outcome: Result<PathRecord, Rejection>) {
        match outcome {
            Ok(rec) => self.push(&rec),
            Err(Rejection::TooLong { timestamp }) => {
                let bin = self.spec.bin_of(timestamp);
                self.bins.entry(bin).or_default().rejected_count += 1;
            }
            Err(Rejection::Malformed) => self.unbinned_rejects += 1,
        }
    }

    pub fn bins(&self) -> &BTreeMap<i64, BinAccumulator> {
        &self.bins
    }

    /// Snapshot per bin holding at least one link.
    pub fn snapshots(&self) -> BTreeMap<i64, SnapshotGraph> {
        self.bins
            .iter()
            .filter(|(_, acc)| acc.link_count() > 0)
            .map(|(&id, acc)| (id, acc.to_graph(id)))
            .collect()
    }
}

/// Groups records into time bins and builds one snapshot per non-empty bin.
pub fn bin_paths<'a, I>(records: I, spec: BinSpec) -> BTreeMap<i64, SnapshotGraph>
where
    I: IntoIterator<Item = &'a PathRecord>,
{
    let mut binner = Binner::new(spec);
    for rec in records {
        binner.push(rec);
    }
    binner.snapshots()
}

/// Reads a path file into a [`Binner`], skipping `#` comments and blanks.
pub fn read_records<R: BufRead>(reader: R, spec: BinSpec) -> std::io::Result<Binner> {
    let mut binner = Binner::new(spec);
    for line in reader.lines() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        binner.push_outcome(parse_path_record(trimmed));
    }
    Ok(binner)
}

impl fmt::Display for PathRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.timestamp)?;
        for h in &self.hops {
            match h {
                Hop::Resolved(l) => write!(f, "|{l}")?,
                Hop::Unresolved => f.write_str("|*")?,
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rec(ts: u64, hops: &[&str]) -> PathRecord {
        PathRecord {
            timestamp: ts,
            hops: hops
                .iter()
                .map(|h| {
                    if *h == "*" {
                        Hop::Unresolved
                    } else {
                        Hop::Resolved(h.to_string())
                    }
                })
                .collect(),
        }
    }

    #[test]
    fn parses_plain_record() {
        let r = parse_path_record("1300000000|10.0.0.1|10.0.0.2|10.0.0.3").unwrap();
        assert_eq!(r.timestamp, 1_300_000_000);
        assert_eq!(r.hops.len(), 3);
        let r = parse_path_record("5|a|*|b").unwrap();
        assert_eq!(r.hops[1], Hop::Unresolved);
    }

    #[test]
    fn rejects_long_and_malformed() {
        let long: String = std::iter::once("7".to_string())
            .chain((0..65).map(|i| format!("10.0.{}.{}", i / 256, i % 256)))
            .collect::<Vec<_>>()
            .join("|");
        assert_eq!(
            parse_path_record(&long),
            Err(Rejection::TooLong { timestamp: 7 })
        );
        let ok: String = std::iter::once("7".to_string())
            .chain((0..64).map(|i| format!("h{i}")))
            .collect::<Vec<_>>()
            .join("|");
        assert_eq!(parse_path_record(&ok).unwrap().hops.len(), 64);

        assert_eq!(
            parse_path_record("abc|10.0.0.1|10.0.0.2"),
            Err(Rejection::Malformed)
        );
        assert_eq!(parse_path_record("123"), Err(Rejection::Malformed));
        assert_eq!(parse_path_record("-5|a|b"), Err(Rejection::Malformed));
        assert_eq!(parse_path_record("5|a||b"), Err(Rejection::Malformed));
    }

    #[test]
    fn gap_rule() {
        assert_eq!(
            edges_from_path(&rec(0, &["a", "b", "c"])),
            vec![("a", "b"), ("b", "c")]
        );
        assert!(edges_from_path(&rec(0, &["a", "*", "c"])).is_empty());
        assert_eq!(
            edges_from_path(&rec(0, &["a", "b", "*", "d", "e"])),
            vec![("a", "b"), ("d", "e")]
        );
        assert!(edges_from_path(&rec(0, &["a", "a"])).is_empty());
    }

    #[test]
    fn bin_boundaries() {
        let spec = BinSpec::default();
        assert_eq!(spec.bin_of(0), 0);
        assert_eq!(spec.bin_of(599), 0);
        assert_eq!(spec.bin_of(600), 1);
        let shifted = BinSpec::new(600, 100).unwrap();
        assert_eq!(shifted.bin_of(99), -1);
        assert_eq!(BinSpec::new(0, 0), Err(ZeroBinWidth));

        let records = [
            rec(0, &["a", "b"]),
            rec(599, &["b", "c"]),
            rec(600, &["c", "d"]),
        ];
        let bins = bin_paths(&records, spec);
        assert_eq!(bins.len(), 2);
        assert_eq!(bins[&0].edge_count(), 2);
        assert_eq!(bins[&1].edge_count(), 1);
        assert_eq!(bins[&1].bin_id(), 1);
        assert!(bin_paths(&[], spec).is_empty());
    }

    #[test]
    fn bins_without_links_are_omitted() {
        let records = [rec(0, &["a", "*", "b"]), rec(700, &["x", "y"])];
        let bins = bin_paths(&records, BinSpec::default());
        assert_eq!(bins.keys().copied().collect::<Vec<_>>(), vec![1]);
    }

    #[test]
    fn three_days_fit_in_432_bins() {
        let records: Vec<PathRecord> = (0..3 * 86_400u64)
            .step_by(97)
            .map(|t| rec(t, &["a", &format!("n{}", t % 13), "z"]))
            .collect();
        let bins = bin_paths(&records, BinSpec::default());
        assert!(bins.len() <= 432);
        assert_eq!(bins.len(), 432);
    }

    #[test]
    fn reader_counts_rejections() {
        let long = format!("650|{}", vec!["h"; 65].join("|"));
        let text = format!("# header\n10|a|b\n\nbad line\n{long}\n20|b|c\n");
        let binner = read_records(text.as_bytes(), BinSpec::default()).unwrap();
        assert_eq!(binner.unbinned_rejects, 1);
        assert_eq!(binner.bins()[&0].record_count, 2);
        assert_eq!(binner.bins()[&1].rejected_count, 1);
        assert_eq!(binner.bins()[&1].record_count, 0);
        assert_eq!(binner.snapshots().len(), 1);
    }

    fn arb_record() -> impl Strategy<Value = PathRecord> {
        let hop = prop_oneof![
            1 => Just(Hop::Unresolved),
            4 => (0u8..12).prop_map(|i| Hop::Resolved(format!("10.0.0.{i}"))),
        ];
        (0u64..5000, proptest::collection::vec(hop, 1..12))
            .prop_map(|(timestamp, hops)| PathRecord { timestamp, hops })
    }

    proptest! {
        #[test]
        fn binning_is_order_insensitive(
            records in proptest::collection::vec(arb_record(), 0..40),
            seed in any::<u64>(),
        ) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let mut shuffled = records.clone();
            shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            prop_assert_eq!(
                bin_paths(&records, BinSpec::default()),
                bin_paths(&shuffled, BinSpec::default())
            );
        }

        #[test]
        fn no_link_spans_an_unresolved_hop(r in arb_record()) {
            for (a, b) in edges_from_path(&r) {
                let adjacent = r.hops.windows(2).any(|w| {
                    w[0] == Hop::Resolved(a.to_owned()) && w[1] == Hop::Resolved(b.to_owned())
                });
                prop_assert!(adjacent);
            }
        }

        #[test]
        fn display_parse_round_trip(r in arb_record()) {
            let parsed = parse_path_record(&r.to_string()).unwrap();
            prop_assert!(!parsed.hops.is_empty() && parsed.hops.len() <= MAX_HOPS);
            prop_assert_eq!(parsed, r);
        }
    }
}
