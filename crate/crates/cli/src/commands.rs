use std::cmp::Ordering;
use std::collections::BTreeSet;
use std::fs::{self, File};
use std::io::{self, BufReader, Write};
use std::path::{Path, PathBuf};

use serde_json::Value;

use npcc::detector::{Detector, DetectorConfig};
use npcc::evaluate::{evaluate_stream, k_sweep, roc_curve, GroundTruth};
use npcc::formats::{self, write_provenance};
use npcc::graph::SnapshotGraph;
use npcc::ingest::{read_records, BinSpec};
use npcc::metrics::SnapshotMetrics;
use npcc::simulate::{
    generate_ba, simulate_attack_curve, synthesize_labeled_stream, AnomalyWindow, AttackSchedule,
};

use crate::args::*;
use crate::failure::{Failure, Outcome};

pub fn run(command: &Command) -> Outcome<()> {
    let header = provenance(command);
    match command {
        Command::Ingest(a) => ingest(a, &header),
        Command::Metrics(a) => metrics(a, &header),
        Command::Detect(a) => detect(a, &header),
        Command::Simulate(SimulateCommand::Attack(a)) => attack(a, &header),
        Command::Simulate(SimulateCommand::Stream(a)) => stream(a, &header),
        Command::Evaluate(a) => evaluate(a, command),
        Command::Sweep(a) => sweep(a, &header),
        Command::Roc(a) => roc(a, &header),
    }
}

type Header = Vec<(String, String)>;

/// Version, command and every effective argument, defaults included.
fn provenance(command: &Command) -> Header {
    let mut pairs = vec![
        ("npcc".to_owned(), env!("CARGO_PKG_VERSION").to_owned()),
        ("command".to_owned(), command.name().to_owned()),
    ];
    if let Ok(Value::Object(map)) = serde_json::to_value(command) {
        for (k, v) in map {
            pairs.push((k, plain(&v)));
        }
    }
    pairs
}

fn plain(v: &Value) -> String {
    match v {
        Value::Null => String::new(),
        Value::String(s) => s.clone(),
        Value::Array(items) => items.iter().map(plain).collect::<Vec<_>>().join(";"),
        other => other.to_string(),
    }
}

fn open(path: &Path) -> Outcome<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Failure::from(e).at(path))
}

/// Writes to `path`, or to stdout when there is none.
fn emit(path: Option<&Path>, bytes: &[u8]) -> Outcome<()> {
    match path {
        Some(p) => fs::write(p, bytes).map_err(|e| Failure::from(e).at(p)),
        None => {
            let mut out = io::stdout().lock();
            out.write_all(bytes)?;
            out.flush()?;
            Ok(())
        }
    }
}

fn with_header(
    header: &Header,
    body: impl FnOnce(&mut Vec<u8>) -> io::Result<()>,
) -> Outcome<Vec<u8>> {
    let mut buf = Vec::new();
    write_provenance(&mut buf, header)?;
    body(&mut buf)?;
    Ok(buf)
}

fn check_sample(mode: &MetricsModeArgs) -> Outcome<()> {
    if mode.sample == Some(0) {
        return Err(Failure::validation("--sample must be at least 1"));
    }
    Ok(())
}

fn check_beta(beta: f64) -> Outcome<()> {
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(Failure::validation(format!(
            "--beta must be positive and finite, got {beta}"
        )));
    }
    Ok(())
}

fn read_metrics(path: &Path) -> Outcome<Vec<SnapshotMetrics>> {
    formats::read_metrics(open(path)?).map_err(|e| Failure::from(e).at(path))
}

fn read_labels(path: &Path) -> Outcome<Vec<(i64, GroundTruth)>> {
    formats::read_labels(open(path)?).map_err(|e| Failure::from(e).at(path))
}

fn ingest(a: &IngestArgs, header: &Header) -> Outcome<()> {
    let spec = BinSpec::new(a.bin_seconds, a.origin).map_err(Failure::validation)?;
    let binner = read_records(open(&a.input)?, spec).map_err(|e| Failure::from(e).at(&a.input))?;
    fs::create_dir_all(&a.out_dir).map_err(|e| Failure::from(e).at(&a.out_dir))?;
    for (id, g) in binner.snapshots() {
        let mut pairs = header.clone();
        pairs.push(("bin_id".to_owned(), id.to_string()));
        let bytes = with_header(&pairs, |buf| g.write_edge_list(buf))?;
        emit(Some(&a.out_dir.join(format!("bin_{id}.edges"))), &bytes)?;
    }
    let mut pairs = header.clone();
    pairs.push((
        "unbinned_rejects".to_owned(),
        binner.unbinned_rejects.to_string(),
    ));
    let bytes = with_header(&pairs, |buf| formats::write_index(buf, binner.bins()))?;
    emit(Some(&a.out_dir.join("index.csv")), &bytes)
}

/// `bin_<id>.edges` carries its own bin id.
fn bin_id_from_name(path: &Path) -> Option<i64> {
    path.file_stem()?
        .to_str()?
        .strip_prefix("bin_")?
        .parse()
        .ok()
}

fn metrics(a: &MetricsArgs, header: &Header) -> Outcome<()> {
    check_sample(&a.mode)?;
    let config = a.mode.config(a.seed);
    let ids: Vec<(i64, &PathBuf)> = a
        .inputs
        .iter()
        .enumerate()
        .map(|(pos, p)| (bin_id_from_name(p).unwrap_or(pos as i64), p))
        .collect();
    let mut seen = BTreeSet::new();
    for (id, p) in &ids {
        if !seen.insert(*id) {
            return Err(Failure::validation(format!("bin id {id} appears twice")).at(p));
        }
    }
    let mut rows = Vec::with_capacity(ids.len());
    for (id, p) in ids {
        let g = SnapshotGraph::read_edge_list(open(p)?).map_err(|e| Failure::from(e).at(p))?;
        let row = config
            .compute(&g.with_bin_id(id))
            .map_err(|e| Failure::from(e).at(p))?;
        rows.push(row);
    }
    rows.sort_by_key(|r| r.bin_id);
    let bytes = with_header(header, |buf| formats::write_metrics(buf, &rows))?;
    emit(a.out.as_deref(), &bytes)
}

fn detect(a: &DetectArgs, header: &Header) -> Outcome<()> {
    let config = a.detector.config(a.k);
    config.validate()?;
    let mut detector = match &a.resume {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Failure::from(e).at(p))?;
            let d = Detector::from_checkpoint_json(&text).map_err(|e| Failure::from(e).at(p))?;
            if *d.config() != config {
                return Err(Failure::validation(
                    "saved state was made with a different detector configuration",
                )
                .at(p));
            }
            d
        }
        None => Detector::new(config)?,
    };
    let rows = read_metrics(&a.input)?;
    let verdicts = rows
        .iter()
        .map(|m| detector.classify(m.bin_id, m.r))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| Failure::from(e).at(&a.input))?;
    let bytes = with_header(header, |buf| formats::write_verdicts(buf, &verdicts))?;
    emit(a.out.as_deref(), &bytes)?;
    if let Some(p) = &a.save_state {
        emit(Some(p), detector.checkpoint_json().as_bytes())?;
    }
    Ok(())
}

fn attack(a: &AttackArgs, header: &Header) -> Outcome<()> {
    check_sample(&a.mode)?;
    let schedule = AttackSchedule {
        strategy: a.strategy.into(),
        step_fraction: a.step,
        max_fraction: a.max,
        seed: a.seed,
    };
    schedule.validate()?;
    let trajectory = simulate_attack_curve(a.n, a.m, &schedule, &a.mode.config(a.seed))?;
    let bytes = with_header(header, |buf| formats::write_trajectory(buf, &trajectory))?;
    emit(a.out.as_deref(), &bytes)
}

fn parse_windows(s: &str) -> Outcome<Vec<AnomalyWindow>> {
    if s.trim().is_empty() {
        return Ok(Vec::new());
    }
    s.split(',')
        .map(|w| {
            let bad = || {
                Failure::validation(format!("--windows: expected start:end:fraction, got `{w}`"))
            };
            let parts: Vec<&str> = w.trim().split(':').collect();
            let [start, end, fraction] = parts[..] else {
                return Err(bad());
            };
            Ok(AnomalyWindow {
                start: start.parse().map_err(|_| bad())?,
                end: end.parse().map_err(|_| bad())?,
                fraction: fraction.parse().map_err(|_| bad())?,
            })
        })
        .collect()
}

fn stream(a: &StreamArgs, header: &Header) -> Outcome<()> {
    check_sample(&a.mode)?;
    let windows = parse_windows(&a.windows)?;
    let base = generate_ba(a.n, a.m, a.graph_seed)?;
    let s = synthesize_labeled_stream(&base, a.ticks, &windows, a.seed, &a.mode.config(a.seed))?;
    let metrics = with_header(header, |buf| formats::write_metrics(buf, &s.metrics))?;
    let labels = with_header(header, |buf| formats::write_labels(buf, &s.labels))?;
    emit(Some(&a.out), &metrics)?;
    emit(Some(&a.labels), &labels)
}

fn evaluate(a: &EvaluateArgs, command: &Command) -> Outcome<()> {
    let config = a.detector.config(a.k);
    config.validate()?;
    check_beta(a.beta)?;
    let metrics = read_metrics(&a.metrics)?;
    let labels = read_labels(&a.labels)?;
    let report = evaluate_stream(&metrics, &labels, &config, a.beta)?;
    let mut doc = serde_json::to_value(&report)
        .map_err(|e| Failure::new(crate::failure::Kind::Compute, e))?;
    if let Value::Object(map) = &mut doc {
        let mut arguments = serde_json::Map::new();
        for (k, v) in provenance(command) {
            arguments.insert(k, Value::String(v));
        }
        map.insert("arguments".to_owned(), Value::Object(arguments));
    }
    let mut bytes = serde_json::to_vec_pretty(&doc)
        .map_err(|e| Failure::new(crate::failure::Kind::Compute, e))?;
    bytes.push(b'\n');
    emit(a.out.as_deref(), &bytes)
}

fn sweep(a: &SweepArgs, header: &Header) -> Outcome<()> {
    let grid: Vec<usize> = parse_list("--k-grid", &a.k_grid)?;
    let base = a.detector.config(DetectorConfig::default().k);
    for &k in &grid {
        DetectorConfig { k, ..base }.validate()?;
    }
    check_beta(a.beta)?;
    let metrics = read_metrics(&a.metrics)?;
    let labels = read_labels(&a.labels)?;
    let rows = k_sweep(&metrics, &labels, &base, &grid, a.beta)?;
    let bytes = with_header(header, |buf| formats::write_sweep(buf, &rows))?;
    emit(a.out.as_deref(), &bytes)
}

fn roc(a: &RocArgs, header: &Header) -> Outcome<()> {
    let grid: Vec<f64> = parse_list("--lambda-grid", &a.lambda_grid)?;
    let base = a.base();
    for &lambda in &grid {
        DetectorConfig { lambda, ..base }.validate()?;
    }
    if grid
        .windows(2)
        .any(|w| w[0].partial_cmp(&w[1]) != Some(Ordering::Less))
    {
        return Err(Failure::validation(
            "--lambda-grid must be strictly ascending",
        ));
    }
    let metrics = read_metrics(&a.metrics)?;
    let labels = read_labels(&a.labels)?;
    let curve = roc_curve(&metrics, &labels, &base, &grid)?;
    let bytes = with_header(header, |buf| formats::write_roc(buf, &curve))?;
    emit(a.out.as_deref(), &bytes)
}
