//! Scoring verdict streams against ground truth.

use std::cmp::Ordering;
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detector::{run_stream, DetectorConfig, DetectorError, Label, Verdict};
use crate::metrics::SnapshotMetrics;

#[derive(Debug, Error, PartialEq)]
pub enum EvaluateError {
    #[error("{verdicts} verdicts but {labels} labels")]
    LengthMismatch { verdicts: usize, labels: usize },
    #[error("verdict tick {verdict} does not match label tick {label} at row {row}")]
    TickMismatch {
        row: usize,
        verdict: i64,
        label: i64,
    },
    #[error("grid is empty")]
    EmptyGrid,
    #[error("lambda grid must be strictly ascending")]
    UnsortedGrid,
    #[error("no {0} ticks among the scored ticks; rate undefined")]
    UndefinedRate(&'static str),
    #[error(transparent)]
    Detector(#[from] DetectorError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum GroundTruth {
    Normal,
    Abnormal,
}

impl GroundTruth {
    pub fn as_str(self) -> &'static str {
        match self {
            GroundTruth::Normal => "NORMAL",
            GroundTruth::Abnormal => "ABNORMAL",
        }
    }

    pub fn parse(s: &str) -> Option<GroundTruth> {
        match s {
            "NORMAL" => Some(GroundTruth::Normal),
            "ABNORMAL" => Some(GroundTruth::Abnormal),
            _ => None,
        }
    }
}

impl fmt::Display for GroundTruth {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Four-way table over scored ticks. `skipped` ticks sit outside the table.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub skipped: u64,
}

impl ConfusionCounts {
    pub fn scored(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }
}

/// ABNORMAL is the positive class.
pub fn confusion(
    verdicts: &[Verdict],
    labels: &[(i64, GroundTruth)],
) -> Result<ConfusionCounts, EvaluateError> {
    if verdicts.len() != labels.len() {
        return Err(EvaluateError::LengthMismatch {
            verdicts: verdicts.len(),
            labels: labels.len(),
        });
    }
    let mut c = ConfusionCounts::default();
    for (row, (v, &(tick, truth))) in verdicts.iter().zip(labels).enumerate() {
        if v.tick != tick {
            return Err(EvaluateError::TickMismatch {
                row,
                verdict: v.tick,
                label: tick,
            });
        }
        match (v.label, truth) {
            (Label::Skipped, _) => c.skipped += 1,
            (Label::Abnormal, GroundTruth::Abnormal) => c.tp += 1,
            (Label::Abnormal, GroundTruth::Normal) => c.fp += 1,
            (Label::Normal, GroundTruth::Normal) => c.tn += 1,
            (Label::Normal, GroundTruth::Abnormal) => c.fn_ += 1,
        }
    }
    Ok(c)
}

/// Accuracy, precision, recall and F-beta. `None` marks a 0/0 ratio.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub accuracy: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f_score: Option<f64>,
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// F-beta from precision and recall: `(1 + b^2) p r / (b^2 p + r)`.
pub fn f_beta(precision: f64, recall: f64, beta: f64) -> Option<f64> {
    let b2 = beta * beta;
    let den = b2 * precision + recall;
    (den > 0.0).then(|| (1.0 + b2) * precision * recall / den)
}

pub fn scores(c: &ConfusionCounts, beta: f64) -> Scores {
    let precision = ratio(c.tp, c.tp + c.fp);
    let recall = ratio(c.tp, c.tp + c.fn_);
    Scores {
        accuracy: ratio(c.tp + c.tn, c.scored()),
        precision,
        recall,
        f_score: match (precision, recall) {
            (Some(p), Some(r)) => f_beta(p, r, beta),
            _ => None,
        },
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub counts: ConfusionCounts,
    pub scores: Scores,
    pub skipped: u64,
    pub beta: f64,
    pub config: DetectorConfig,
}

pub fn evaluate_verdicts(
    verdicts: &[Verdict],
    labels: &[(i64, GroundTruth)],
    config: &DetectorConfig,
    beta: f64,
) -> Result<EvaluationReport, EvaluateError> {
    let counts = confusion(verdicts, labels)?;
    Ok(EvaluationReport {
        counts,
        scores: scores(&counts, beta),
        skipped: counts.skipped,
        beta,
        config: *config,
    })
}

/// Runs the detector over `stream` and scores it.
pub fn evaluate_stream(
    stream: &[SnapshotMetrics],
    labels: &[(i64, GroundTruth)],
    config: &DetectorConfig,
    beta: f64,
) -> Result<EvaluationReport, EvaluateError> {
    let verdicts = run_stream(stream, config)?;
    evaluate_verdicts(&verdicts, labels, config, beta)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub lambda: f64,
    pub fpr: f64,
    pub tpr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
    pub auc: f64,
}

/// Trapezoidal area under the points, anchored at (0,0) and (1,1).
pub fn trapezoid_auc(points: &[RocPoint]) -> f64 {
    let mut xy: Vec<(f64, f64)> = points.iter().map(|p| (p.fpr, p.tpr)).collect();
    xy.push((0.0, 0.0));
    xy.push((1.0, 1.0));
    xy.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    xy.windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[0].1 + w[1].1) / 2.0)
        .sum()
}

/// ROC from precomputed verdict runs, one per lambda.
pub fn roc_from_runs(
    runs: &[(f64, Vec<Verdict>)],
    labels: &[(i64, GroundTruth)],
) -> Result<RocCurve, EvaluateError> {
    if runs.is_empty() {
        return Err(EvaluateError::EmptyGrid);
    }
    let points = runs
        .iter()
        .map(|(lambda, verdicts)| {
            let c = confusion(verdicts, labels)?;
            let tpr = ratio(c.tp, c.tp + c.fn_).ok_or(EvaluateError::UndefinedRate("abnormal"))?;
            let fpr = ratio(c.fp, c.fp + c.tn).ok_or(EvaluateError::UndefinedRate("normal"))?;
            Ok(RocPoint {
                lambda: *lambda,
                fpr,
                tpr,
            })
        })
        .collect::<Result<Vec<_>, EvaluateError>>()?;
    let auc = trapezoid_auc(&points);
    Ok(RocCurve { points, auc })
}

/// One detector run per lambda in an ascending grid.
pub fn roc_curve(
    stream: &[SnapshotMetrics],
    labels: &[(i64, GroundTruth)],
    base: &DetectorConfig,
    lambda_grid: &[f64],
) -> Result<RocCurve, EvaluateError> {
    if lambda_grid.is_empty() {
        return Err(EvaluateError::EmptyGrid);
    }
    if lambda_grid
        .windows(2)
        .any(|w| w[0].partial_cmp(&w[1]) != Some(Ordering::Less))
    {
        return Err(EvaluateError::UnsortedGrid);
    }
    let runs = lambda_grid
        .par_iter()
        .map(|&lambda| {
            let cfg = DetectorConfig { lambda, ..*base };
            Ok((lambda, run_stream(stream, &cfg)?))
        })
        .collect::<Result<Vec<_>, EvaluateError>>()?;
    roc_from_runs(&runs, labels)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub k: usize,
    pub counts: ConfusionCounts,
    pub scores: Scores,
}

/// One evaluation per window size.
pub fn k_sweep(
    stream: &[SnapshotMetrics],
    labels: &[(i64, GroundTruth)],
    base: &DetectorConfig,
    k_grid: &[usize],
    beta: f64,
) -> Result<Vec<SweepRow>, EvaluateError> {
    if k_grid.is_empty() {
        return Err(EvaluateError::EmptyGrid);
    }
    k_grid
        .par_iter()
        .map(|&k| {
            let cfg = DetectorConfig { k, ..*base };
            let report = evaluate_stream(stream, labels, &cfg, beta)?;
            Ok(SweepRow {
                k,
                counts: report.counts,
                scores: report.scores,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detector::NormalDomain;
    use crate::metrics::Npcc;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn verdict(tick: i64, label: Label) -> Verdict {
        Verdict {
            tick,
            r: Npcc::Value(0.5),
            label,
            domain: NormalDomain::default(),
            warmup: false,
        }
    }

    fn verdicts(labels: &[Label]) -> Vec<Verdict> {
        labels
            .iter()
            .enumerate()
            .map(|(t, &l)| verdict(t as i64, l))
            .collect()
    }

    fn truth(labels: &[GroundTruth]) -> Vec<(i64, GroundTruth)> {
        labels
            .iter()
            .enumerate()
            .map(|(t, &l)| (t as i64, l))
            .collect()
    }

    use GroundTruth::{Abnormal as TA, Normal as TN};
    use Label::{Abnormal as A, Normal as N, Skipped as S};

    #[test]
    fn four_way_table() {
        let c = confusion(&verdicts(&[A, A, N, N]), &truth(&[TA, TN, TN, TA])).unwrap();
        assert_eq!((c.tp, c.fp, c.tn, c.fn_), (1, 1, 1, 1));
        let c = confusion(&verdicts(&[A, N, N]), &truth(&[TA, TN, TN])).unwrap();
        assert_eq!((c.fp, c.fn_), (0, 0));
        let mut vs = vec![N; 10];
        vs[4] = S;
        let c = confusion(&verdicts(&vs), &truth(&[TN; 10])).unwrap();
        assert_eq!(c.scored(), 9);
        assert_eq!(c.skipped, 1);
    }

    #[test]
    fn misalignment_errors() {
        assert!(matches!(
            confusion(&verdicts(&[A, N]), &truth(&[TA])),
            Err(EvaluateError::LengthMismatch { .. })
        ));
        let labels = vec![(0, TA), (5, TN)];
        assert_eq!(
            confusion(&verdicts(&[A, N]), &labels),
            Err(EvaluateError::TickMismatch {
                row: 1,
                verdict: 1,
                label: 5
            })
        );
    }

    #[test]
    fn score_arithmetic() {
        let c = ConfusionCounts {
            tp: 2,
            fp: 1,
            tn: 6,
            fn_: 1,
            skipped: 0,
        };
        let s = scores(&c, 1.0);
        assert!((s.accuracy.unwrap() - 0.8).abs() < 1e-12);
        assert!((s.precision.unwrap() - 2.0 / 3.0).abs() < 1e-12);
        assert!((s.recall.unwrap() - 2.0 / 3.0).abs() < 1e-12);
        assert!((s.f_score.unwrap() - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn f1_from_published_pairs() {
        assert!((f_beta(0.9024, 0.7708, 1.0).unwrap() - 0.8315).abs() < 5e-4);
        assert!((f_beta(0.8333, 0.9804, 1.0).unwrap() - 0.9009).abs() < 5e-4);
    }

    #[test]
    fn undefined_ratios_stay_undefined() {
        let s = scores(&ConfusionCounts::default(), 1.0);
        assert_eq!(
            s,
            Scores {
                accuracy: None,
                precision: None,
                recall: None,
                f_score: None
            }
        );
        let s = scores(
            &ConfusionCounts {
                tn: 5,
                ..Default::default()
            },
            1.0,
        );
        assert_eq!(s.accuracy, Some(1.0));
        assert_eq!(s.precision, None);
        assert_eq!(s.recall, None);
        let s = scores(
            &ConfusionCounts {
                fp: 2,
                fn_: 3,
                ..Default::default()
            },
            1.0,
        );
        assert_eq!(
            (s.precision, s.recall, s.f_score),
            (Some(0.0), Some(0.0), None)
        );
    }

    #[test]
    fn perfect_detector_auc() {
        let labels = truth(&[TN, TA, TN, TA, TN]);
        let vs = verdicts(&[N, A, N, A, N]);
        let runs: Vec<(f64, Vec<Verdict>)> =
            [0.5, 1.0, 2.0].iter().map(|&l| (l, vs.clone())).collect();
        let roc = roc_from_runs(&runs, &labels).unwrap();
        assert!(roc.points.iter().all(|p| p.fpr == 0.0 && p.tpr == 1.0));
        assert_eq!(roc.auc, 1.0);
    }

    #[test]
    fn roc_needs_both_classes() {
        let runs = vec![(1.0, verdicts(&[N, N]))];
        assert_eq!(
            roc_from_runs(&runs, &truth(&[TN, TN])),
            Err(EvaluateError::UndefinedRate("abnormal"))
        );
        assert_eq!(
            roc_from_runs(&[], &truth(&[])),
            Err(EvaluateError::EmptyGrid)
        );
    }

    #[test]
    fn roc_grid_checks() {
        assert_eq!(
            roc_curve(&[], &[], &DetectorConfig::default(), &[]),
            Err(EvaluateError::EmptyGrid)
        );
        assert_eq!(
            roc_curve(&[], &[], &DetectorConfig::default(), &[2.0, 1.0]),
            Err(EvaluateError::UnsortedGrid)
        );
    }

    proptest! {
        #[test]
        fn scores_satisfy_identities(
            rows in proptest::collection::vec((0u8..3, any::<bool>()), 1..80),
            beta in 0.25f64..4.0,
        ) {
            let labels: Vec<Label> = rows.iter().map(|(l, _)| [N, A, S][*l as usize]).collect();
            let truths: Vec<GroundTruth> = rows.iter().map(|(_, t)| if *t { TA } else { TN }).collect();
            let c = confusion(&verdicts(&labels), &truth(&truths)).unwrap();
            // Naive recount.
            let count = |pred: Label, t: GroundTruth| {
                labels.iter().zip(&truths).filter(|(l, tt)| **l == pred && **tt == t).count() as u64
            };
            prop_assert_eq!(c.tp, count(A, TA));
            prop_assert_eq!(c.fp, count(A, TN));
            prop_assert_eq!(c.tn, count(N, TN));
            prop_assert_eq!(c.fn_, count(N, TA));
            prop_assert_eq!(c.scored() + c.skipped, rows.len() as u64);
            let s = scores(&c, beta);
            for v in [s.accuracy, s.precision, s.recall, s.f_score].into_iter().flatten() {
                prop_assert!((0.0..=1.0).contains(&v));
            }
            if let (Some(p), Some(r), Some(f)) = (s.precision, s.recall, s.f_score) {
                let b2 = beta * beta;
                prop_assert!((f * (b2 * p + r) - (1.0 + b2) * p * r).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn trapezoid_on_diagonal_is_half() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let pts: Vec<RocPoint> = (0..5)
            .map(|i| {
                let x = rng.gen::<f64>();
                RocPoint {
                    lambda: i as f64,
                    fpr: x,
                    tpr: x,
                }
            })
            .collect();
        assert!((trapezoid_auc(&pts) - 0.5).abs() < 1e-12);
    }
}
