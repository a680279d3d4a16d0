//! Text formats exchanged between pipeline stages.
//!
//! All tables are comma-separated with a fixed header row. Lines starting
//! with `#` carry `key=value` provenance (the effective configuration and
//! seeds) and are ignored by the readers. Floats are written in shortest
//! round-trip form, so reading a file back yields the same bits.

use std::io::{self, BufRead, Write};

use thiserror::Error;

use crate::detector::{Interval, Label, NormalDomain, Verdict};
use crate::evaluate::{GroundTruth, RocCurve, SweepRow};
use crate::ingest::BinAccumulator;
use crate::metrics::{MetricsMode, Npcc, SnapshotMetrics};
use crate::simulate::{AttackTrajectory, TrajectoryPoint};

pub const METRICS_HEADER: &str =
    "bin_id,node_count,edge_count,giant_fraction,d_max,d_effective,sp,r,degenerate,mode,sample_size,seed";
pub const VERDICT_HEADER: &str = "tick,r,label,domain";
pub const LABEL_HEADER: &str = "tick,label";
pub const TRAJECTORY_HEADER: &str = "removed_fraction,d_max,d_effective,sp,r,giant_fraction";
pub const SWEEP_HEADER: &str = "k,accuracy,precision,recall,f_score,tp,fp,tn,fn,skipped";
pub const ROC_HEADER: &str = "lambda,fpr,tpr";
pub const INDEX_HEADER: &str = "bin_id,record_count,rejected_count";

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("line {line}: {message}")]
    Schema { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

fn schema(line: usize, message: impl Into<String>) -> FormatError {
    FormatError::Schema {
        line,
        message: message.into(),
    }
}

/// Writes `# key=value` provenance lines.
pub fn write_provenance<W: Write>(out: &mut W, pairs: &[(String, String)]) -> io::Result<()> {
    for (k, v) in pairs {
        writeln!(out, "# {k}={v}")?;
    }
    Ok(())
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn npcc_field(r: Npcc) -> String {
    opt(r.value())
}

/// Data rows of a table: provenance and blank lines skipped, header checked.
fn table_rows<R: BufRead>(
    reader: R,
    header: &str,
) -> Result<Vec<(usize, Vec<String>)>, FormatError> {
    let mut rows = Vec::new();
    let mut seen_header = false;
    let width = header.split(',').count();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        if !seen_header {
            if line.trim() != header {
                return Err(schema(i + 1, format!("expected header `{header}`")));
            }
            seen_header = true;
            continue;
        }
        let fields: Vec<String> = line.split(',').map(|f| f.trim().to_owned()).collect();
        if fields.len() != width {
            return Err(schema(
                i + 1,
                format!("expected {width} fields, found {}", fields.len()),
            ));
        }
        rows.push((i + 1, fields));
    }
    if !seen_header {
        return Err(schema(0, format!("missing header `{header}`")));
    }
    Ok(rows)
}

fn parse<T: std::str::FromStr>(line: usize, name: &str, s: &str) -> Result<T, FormatError> {
    s.parse()
        .map_err(|_| schema(line, format!("bad {name} `{s}`")))
}

pub fn write_metrics<W: Write>(mut out: W, rows: &[SnapshotMetrics]) -> io::Result<()> {
    writeln!(out, "{METRICS_HEADER}")?;
    for m in rows {
        let (mode, size, seed) = match m.mode {
            MetricsMode::Exact => ("exact", String::new(), String::new()),
            MetricsMode::Sampled { sample_size, seed } => {
                ("sampled", sample_size.to_string(), seed.to_string())
            }
        };
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            m.bin_id,
            m.node_count,
            m.edge_count,
            m.giant_fraction,
            m.d_max,
            m.d_effective,
            m.sp,
            npcc_field(m.r),
            u8::from(m.is_degenerate()),
            mode,
            size,
            seed
        )?;
    }
    Ok(())
}

pub fn read_metrics<R: BufRead>(reader: R) -> Result<Vec<SnapshotMetrics>, FormatError> {
    table_rows(reader, METRICS_HEADER)?
        .into_iter()
        .map(|(line, f)| {
            let degenerate = match f[8].as_str() {
                "0" => false,
                "1" => true,
                other => return Err(schema(line, format!("bad degenerate flag `{other}`"))),
            };
            let r = if degenerate {
                Npcc::Degenerate
            } else {
                Npcc::Value(parse(line, "r", &f[7])?)
            };
            let mode = match f[9].as_str() {
                "exact" => MetricsMode::Exact,
                "sampled" => MetricsMode::Sampled {
                    sample_size: parse(line, "sample_size", &f[10])?,
                    seed: parse(line, "seed", &f[11])?,
                },
                other => return Err(schema(line, format!("bad mode `{other}`"))),
            };
            Ok(SnapshotMetrics {
                bin_id: parse(line, "bin_id", &f[0])?,
                node_count: parse(line, "node_count", &f[1])?,
                edge_count: parse(line, "edge_count", &f[2])?,
                giant_fraction: parse(line, "giant_fraction", &f[3])?,
                d_max: parse(line, "d_max", &f[4])?,
                d_effective: parse(line, "d_effective", &f[5])?,
                sp: parse(line, "sp", &f[6])?,
                r,
                mode,
            })
        })
        .collect()
}

pub fn write_verdicts<W: Write>(mut out: W, rows: &[Verdict]) -> io::Result<()> {
    writeln!(out, "{VERDICT_HEADER}")?;
    for v in rows {
        writeln!(
            out,
            "{},{},{},{}",
            v.tick,
            npcc_field(v.r),
            v.label,
            v.domain
        )?;
    }
    Ok(())
}

fn parse_domain(line: usize, s: &str) -> Result<NormalDomain, FormatError> {
    if s.is_empty() {
        return Ok(NormalDomain::default());
    }
    let intervals = s
        .split(';')
        .map(|part| {
            let (lo, hi) = part
                .split_once("..")
                .ok_or_else(|| schema(line, format!("bad interval `{part}`")))?;
            Ok(Interval {
                lo: parse(line, "interval bound", lo)?,
                hi: parse(line, "interval bound", hi)?,
            })
        })
        .collect::<Result<Vec<_>, FormatError>>()?;
    Ok(NormalDomain::from_intervals(intervals))
}

pub fn read_verdicts<R: BufRead>(reader: R) -> Result<Vec<Verdict>, FormatError> {
    table_rows(reader, VERDICT_HEADER)?
        .into_iter()
        .map(|(line, f)| {
            let label =
                Label::parse(&f[2]).ok_or_else(|| schema(line, format!("bad label `{}`", f[2])))?;
            let r = if f[1].is_empty() {
                Npcc::Degenerate
            } else {
                Npcc::Value(parse(line, "r", &f[1])?)
            };
            Ok(Verdict {
                tick: parse(line, "tick", &f[0])?,
                r,
                label,
                domain: parse_domain(line, &f[3])?,
                warmup: false,
            })
        })
        .collect()
}

pub fn write_labels<W: Write>(mut out: W, rows: &[(i64, GroundTruth)]) -> io::Result<()> {
    writeln!(out, "{LABEL_HEADER}")?;
    for (tick, l) in rows {
        writeln!(out, "{tick},{l}")?;
    }
    Ok(())
}

pub fn read_labels<R: BufRead>(reader: R) -> Result<Vec<(i64, GroundTruth)>, FormatError> {
    table_rows(reader, LABEL_HEADER)?
        .into_iter()
        .map(|(line, f)| {
            let l = GroundTruth::parse(&f[1])
                .ok_or_else(|| schema(line, format!("bad label `{}`", f[1])))?;
            Ok((parse(line, "tick", &f[0])?, l))
        })
        .collect()
}

fn trajectory_fields(p: &TrajectoryPoint) -> String {
    let m = &p.metrics;
    format!(
        "{},{},{},{},{},{}",
        p.removed_fraction,
        m.d_max,
        m.d_effective,
        m.sp,
        npcc_field(m.r),
        m.giant_fraction
    )
}

/// One row per removal step. The intact graph goes into a `# baseline=`
/// provenance line in the same column order, so the table itself holds
/// exactly the steps.
pub fn write_trajectory<W: Write>(mut out: W, t: &AttackTrajectory) -> io::Result<()> {
    writeln!(out, "# baseline={}", trajectory_fields(&t.baseline))?;
    writeln!(out, "{TRAJECTORY_HEADER}")?;
    for p in &t.points {
        writeln!(out, "{}", trajectory_fields(p))?;
    }
    Ok(())
}

pub fn write_sweep<W: Write>(mut out: W, rows: &[SweepRow]) -> io::Result<()> {
    writeln!(out, "{SWEEP_HEADER}")?;
    for row in rows {
        let (s, c) = (&row.scores, &row.counts);
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            row.k,
            opt(s.accuracy),
            opt(s.precision),
            opt(s.recall),
            opt(s.f_score),
            c.tp,
            c.fp,
            c.tn,
            c.fn_,
            c.skipped
        )?;
    }
    Ok(())
}

pub fn write_roc<W: Write>(mut out: W, roc: &RocCurve) -> io::Result<()> {
    writeln!(out, "# auc={}", roc.auc)?;
    writeln!(out, "{ROC_HEADER}")?;
    for p in &roc.points {
        writeln!(out, "{},{},{}", p.lambda, p.fpr, p.tpr)?;
    }
    Ok(())
}

pub fn write_index<'a, W, I>(mut out: W, bins: I) -> io::Result<()>
where
    W: Write,
    I: IntoIterator<Item = (&'a i64, &'a BinAccumulator)>,
{
    writeln!(out, "{INDEX_HEADER}")?;
    for (id, acc) in bins {
        writeln!(out, "{id},{},{}", acc.record_count, acc.rejected_count)?;
    }
    Ok(())
}
