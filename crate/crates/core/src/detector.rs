//! Sliding normal-domain classifier over a stream of NPCC values.
//!
//! Each NORMAL snapshot contributes a redundancy range `[r - tau, r + tau]`.
//! The normal domain is the union of the ranges of the `k` most recent NORMAL
//! snapshots; a new snapshot whose `r` falls outside it is ABNORMAL and never
//! enters the window.

use std::collections::VecDeque;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::{Npcc, SnapshotMetrics};

/// Version tag written into detector checkpoints.
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error, PartialEq)]
pub enum DetectorError {
    #[error("k must be at least 1")]
    ZeroWindow,
    #[error("lambda must be positive and finite, got {0}")]
    BadLambda(f64),
    #[error("cannot compute tau from an empty history")]
    EmptyHistory,
    #[error("tau must be non-negative, got {0}")]
    NegativeTau(f64),
    #[error("tick {tick} does not follow previous tick {previous}")]
    NonIncreasingTick { tick: i64, previous: i64 },
    #[error("unsupported checkpoint version {0}")]
    CheckpointVersion(u32),
    #[error("checkpoint json: {0}")]
    Checkpoint(String),
}

/// How the fluctuation half-width tau is derived from the window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TauMode {
    /// `tau = mean + lambda * sd`.
    Literal,
    /// `tau = lambda * sd`.
    #[default]
    Deviation,
}

/// Treatment of snapshots seen before the window is full.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WarmupPolicy {
    /// Every usable snapshot is NORMAL until the window holds `k` entries.
    #[default]
    AssumeNormal,
    /// Only the first usable snapshot is assumed NORMAL; later ones are
    /// classified against the partial window.
    PartialWindow,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    pub k: usize,
    pub lambda: f64,
    pub tau_mode: TauMode,
    #[serde(default)]
    pub warmup: WarmupPolicy,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            k: 36,
            lambda: 1.96,
            tau_mode: TauMode::Deviation,
            warmup: WarmupPolicy::AssumeNormal,
        }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<(), DetectorError> {
        if self.k == 0 {
            return Err(DetectorError::ZeroWindow);
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(DetectorError::BadLambda(self.lambda));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }
}

impl fmt::Display for Interval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}..{}", self.lo, self.hi)
    }
}

/// Sorted, pairwise disjoint closed intervals.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct NormalDomain(Vec<Interval>);

impl NormalDomain {
    pub fn from_intervals<I: IntoIterator<Item = Interval>>(intervals: I) -> Self {
        let mut v: Vec<Interval> = intervals.into_iter().collect();
        v.sort_by(|a, b| a.lo.total_cmp(&b.lo).then(a.hi.total_cmp(&b.hi)));
        let mut merged: Vec<Interval> = Vec::with_capacity(v.len());
        for iv in v {
            match merged.last_mut() {
                Some(last) if iv.lo <= last.hi => last.hi = last.hi.max(iv.hi),
                _ => merged.push(iv),
            }
        }
        NormalDomain(merged)
    }

    pub fn contains(&self, x: f64) -> bool {
        // Few intervals in practice; k is at most a few dozen.
        self.0.iter().any(|iv| iv.contains(x))
    }

    pub fn intervals(&self) -> &[Interval] {
        &self.0
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl fmt::Display for NormalDomain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, iv) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(";")?;
            }
            write!(f, "{iv}")?;
        }
        Ok(())
    }
}

/// Half-width of the redundancy range from the window's r-values. The
/// standard deviation uses the n-1 divisor and is 0 for a single value.
pub fn compute_tau(history_rs: &[f64], lambda: f64, mode: TauMode) -> Result<f64, DetectorError> {
    if history_rs.is_empty() {
        return Err(DetectorError::EmptyHistory);
    }
    let n = history_rs.len() as f64;
    let mean = history_rs.iter().sum::<f64>() / n;
    let sd = if history_rs.len() < 2 {
        0.0
    } else {
        let ss: f64 = history_rs.iter().map(|r| (r - mean) * (r - mean)).sum();
        (ss / (n - 1.0)).sqrt()
    };
    Ok(match mode {
        TauMode::Literal => mean + lambda * sd,
        TauMode::Deviation => lambda * sd,
    })
}

/// Redundancy range `[r0 - tau, r0 + tau]`, not clamped to `[0, 1]`.
pub fn make_eta(r0: f64, tau: f64) -> Result<Interval, DetectorError> {
    if tau.is_nan() || tau < 0.0 {
        return Err(DetectorError::NegativeTau(tau));
    }
    Ok(Interval {
        lo: r0 - tau,
        hi: r0 + tau,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub tick: i64,
    pub r: f64,
    pub eta: Interval,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DetectorState {
    pub history: VecDeque<HistoryEntry>,
    pub total_ticks_seen: u64,
    pub last_tick: Option<i64>,
}

impl DetectorState {
    pub fn history_rs(&self) -> Vec<f64> {
        self.history.iter().map(|e| e.r).collect()
    }
}

/// Union of the redundancy ranges currently in the window.
pub fn normal_domain(state: &DetectorState) -> NormalDomain {
    NormalDomain::from_intervals(state.history.iter().map(|e| e.eta))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Label {
    Normal,
    Abnormal,
    Skipped,
}

impl Label {
    pub fn as_str(self) -> &'static str {
        match self {
            Label::Normal => "NORMAL",
            Label::Abnormal => "ABNORMAL",
            Label::Skipped => "SKIPPED",
        }
    }

    pub fn parse(s: &str) -> Option<Label> {
        match s {
            "NORMAL" => Some(Label::Normal),
            "ABNORMAL" => Some(Label::Abnormal),
            "SKIPPED" => Some(Label::Skipped),
            _ => None,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub tick: i64,
    pub r: Npcc,
    pub label: Label,
    /// Domain the decision was made against (empty for warm-up and skips).
    pub domain: NormalDomain,
    /// True when the label came from the warm-up policy, not a comparison.
    pub warmup: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detector {
    config: DetectorConfig,
    state: DetectorState,
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    version: u32,
    config: DetectorConfig,
    state: DetectorState,
}

impl Detector {
    pub fn new(config: DetectorConfig) -> Result<Self, DetectorError> {
        config.validate()?;
        Ok(Detector {
            config,
            state: DetectorState::default(),
        })
    }

    pub fn config(&self) -> &DetectorConfig {
        &self.config
    }

    pub fn state(&self) -> &DetectorState {
        &self.state
    }

    fn in_warmup(&self) -> bool {
        match self.config.warmup {
            WarmupPolicy::AssumeNormal => self.state.history.len() < self.config.k,
            WarmupPolicy::PartialWindow => self.state.history.is_empty(),
        }
    }

    fn admit(&mut self, tick: i64, r: f64) {
        let rs = if self.state.history.is_empty() {
            vec![r]
        } else {
            self.state.history_rs()
        };
        let tau = compute_tau(&rs, self.config.lambda, self.config.tau_mode)
            .expect("history basis is nonempty");
        let eta = make_eta(r, tau.max(0.0)).expect("tau is non-negative");
        self.state.history.push_back(HistoryEntry { tick, r, eta });
        while self.state.history.len() > self.config.k {
            self.state.history.pop_front();
        }
    }

    /// Classifies one snapshot and updates the window. On error the state is
    /// left untouched.
    pub fn classify(&mut self, tick: i64, r: Npcc) -> Result<Verdict, DetectorError> {
        if let Some(previous) = self.state.last_tick {
            if tick <= previous {
                return Err(DetectorError::NonIncreasingTick { tick, previous });
            }
        }
        self.state.last_tick = Some(tick);
        self.state.total_ticks_seen += 1;

        let value = match r {
            Npcc::Degenerate => {
                return Ok(Verdict {
                    tick,
                    r,
                    label: Label::Skipped,
                    domain: NormalDomain::default(),
                    warmup: false,
                })
            }
            Npcc::Value(v) => v,
        };

        if self.in_warmup() {
            self.admit(tick, value);
            return Ok(Verdict {
                tick,
                r,
                label: Label::Normal,
                domain: NormalDomain::default(),
                warmup: true,
            });
        }

        let domain = normal_domain(&self.state);
        let label = if domain.contains(value) {
            self.admit(tick, value);
            Label::Normal
        } else {
            Label::Abnormal
        };
        Ok(Verdict {
            tick,
            r,
            label,
            domain,
            warmup: false,
        })
    }

    pub fn checkpoint_json(&self) -> String {
        serde_json::to_string_pretty(&Checkpoint {
            version: CHECKPOINT_VERSION,
            config: self.config,
            state: self.state.clone(),
        })
        .expect("checkpoint serializes")
    }

    pub fn from_checkpoint_json(text: &str) -> Result<Self, DetectorError> {
        let cp: Checkpoint =
            serde_json::from_str(text).map_err(|e| DetectorError::Checkpoint(e.to_string()))?;
        if cp.version != CHECKPOINT_VERSION {
            return Err(DetectorError::CheckpointVersion(cp.version));
        }
        cp.config.validate()?;
        Ok(Detector {
            config: cp.config,
            state: cp.state,
        })
    }
}

/// Folds [`Detector::classify`] over a metrics stream sorted by `bin_id`.
pub fn run_stream(
    metrics: &[SnapshotMetrics],
    config: &DetectorConfig,
) -> Result<Vec<Verdict>, DetectorError> {
    let mut det = Detector::new(*config)?;
    metrics
        .iter()
        .map(|m| det.classify(m.bin_id, m.r))
        .collect()
}

/// Same as [`run_stream`] over bare `(tick, r)` pairs.
pub fn run_values(
    values: &[(i64, Npcc)],
    config: &DetectorConfig,
) -> Result<Vec<Verdict>, DetectorError> {
    let mut det = Detector::new(*config)?;
    values.iter().map(|&(t, r)| det.classify(t, r)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-12
    }

    fn cfg(k: usize, lambda: f64, tau_mode: TauMode) -> DetectorConfig {
        DetectorConfig {
            k,
            lambda,
            tau_mode,
            warmup: WarmupPolicy::AssumeNormal,
        }
    }

    #[test]
    fn tau_modes() {
        let rs = [0.50, 0.52, 0.48];
        assert!(close(
            compute_tau(&rs, 1.96, TauMode::Literal).unwrap(),
            0.5392
        ));
        assert!(close(
            compute_tau(&rs, 1.96, TauMode::Deviation).unwrap(),
            0.0392
        ));
        assert_eq!(compute_tau(&[0.5], 3.0, TauMode::Literal), Ok(0.5));
        assert_eq!(compute_tau(&[0.5], 3.0, TauMode::Deviation), Ok(0.0));
        assert_eq!(
            compute_tau(&[], 1.0, TauMode::Deviation),
            Err(DetectorError::EmptyHistory)
        );
    }

    #[test]
    fn eta_ranges() {
        let iv = make_eta(0.50, 0.04).unwrap();
        assert!(close(iv.lo, 0.46) && close(iv.hi, 0.54));
        assert_eq!(make_eta(0.5, 0.0), Ok(Interval { lo: 0.5, hi: 0.5 }));
        let iv = make_eta(0.02, 0.05).unwrap();
        assert!(close(iv.lo, -0.03) && close(iv.hi, 0.07));
        assert_eq!(make_eta(0.5, -0.1), Err(DetectorError::NegativeTau(-0.1)));
    }

    fn state_with(etas: &[(f64, f64, f64)]) -> DetectorState {
        DetectorState {
            history: etas
                .iter()
                .enumerate()
                .map(|(i, &(r, lo, hi))| HistoryEntry {
                    tick: i as i64,
                    r,
                    eta: Interval { lo, hi },
                })
                .collect(),
            total_ticks_seen: etas.len() as u64,
            last_tick: etas.len().checked_sub(1).map(|t| t as i64),
        }
    }

    #[test]
    fn domain_union() {
        let d = normal_domain(&state_with(&[(0.5, 0.46, 0.54), (0.54, 0.50, 0.58)]));
        assert_eq!(d.intervals(), &[Interval { lo: 0.46, hi: 0.58 }]);
        let d = normal_domain(&state_with(&[(0.15, 0.1, 0.2), (0.45, 0.4, 0.5)]));
        assert_eq!(d.intervals().len(), 2);
        assert_eq!(d.to_string(), "0.1..0.2;0.4..0.5");
        assert!(normal_domain(&DetectorState::default()).is_empty());
    }

    fn detector_with(k: usize, entries: &[(f64, f64, f64)]) -> Detector {
        let mut d = Detector::new(cfg(k, 1.96, TauMode::Deviation)).unwrap();
        d.state = state_with(entries);
        d
    }

    #[test]
    fn classify_in_and_out_of_domain() {
        let mut d = detector_with(1, &[(0.50, 0.46, 0.54)]);
        let v = d.classify(5, Npcc::Value(0.52)).unwrap();
        assert_eq!(v.label, Label::Normal);
        assert_eq!(d.state().history.len(), 1);
        assert_eq!(d.state().history[0].r, 0.52);

        let mut d = detector_with(1, &[(0.50, 0.46, 0.54)]);
        let v = d.classify(5, Npcc::Value(0.30)).unwrap();
        assert_eq!(v.label, Label::Abnormal);
        assert_eq!(d.state().history.len(), 1);
        assert_eq!(d.state().history[0].r, 0.50);
    }

    #[test]
    fn first_tick_is_warmup_normal() {
        let mut d = Detector::new(DetectorConfig::default()).unwrap();
        let v = d.classify(0, Npcc::Value(0.7)).unwrap();
        assert_eq!(v.label, Label::Normal);
        assert!(v.warmup);
        assert_eq!(d.state().history_rs(), vec![0.7]);
    }

    #[test]
    fn degenerate_is_skipped_without_state_change() {
        let mut d = Detector::new(DetectorConfig::default()).unwrap();
        let v = d.classify(0, Npcc::Degenerate).unwrap();
        assert_eq!(v.label, Label::Skipped);
        assert!(d.state().history.is_empty());
    }

    #[test]
    fn ticks_must_increase() {
        let mut d = Detector::new(DetectorConfig::default()).unwrap();
        d.classify(3, Npcc::Value(0.5)).unwrap();
        let before = d.state().clone();
        assert_eq!(
            d.classify(3, Npcc::Value(0.5)),
            Err(DetectorError::NonIncreasingTick {
                tick: 3,
                previous: 3
            })
        );
        assert_eq!(d.state(), &before);
    }

    #[test]
    fn config_validation() {
        assert_eq!(
            Detector::new(cfg(0, 1.0, TauMode::Deviation)).unwrap_err(),
            DetectorError::ZeroWindow
        );
        assert!(matches!(
            Detector::new(cfg(3, 0.0, TauMode::Deviation)),
            Err(DetectorError::BadLambda(_))
        ));
    }

    #[test]
    fn window_evicts_oldest_first() {
        let mut d = Detector::new(cfg(3, 1.96, TauMode::Literal)).unwrap();
        for t in 0..10 {
            d.classify(t, Npcc::Value(0.5)).unwrap();
        }
        let ticks: Vec<i64> = d.state().history.iter().map(|e| e.tick).collect();
        assert_eq!(ticks, vec![7, 8, 9]);
    }

    #[test]
    fn partial_window_policy_compares_after_first_tick() {
        let c = DetectorConfig {
            warmup: WarmupPolicy::PartialWindow,
            ..cfg(5, 1.96, TauMode::Literal)
        };
        let vs = run_values(
            &[
                (0, Npcc::Value(0.5)),
                (1, Npcc::Value(0.9)),
                (2, Npcc::Value(1.2)),
            ],
            &c,
        )
        .unwrap();
        // Literal tau from [0.5] is 0.5, so the first range is [0, 1].
        assert!(vs[0].warmup);
        assert_eq!(vs[1].label, Label::Normal);
        assert!(!vs[1].warmup);
        assert_eq!(vs[2].label, Label::Normal);
    }

    #[test]
    fn constant_stream_all_normal() {
        let values: Vec<(i64, Npcc)> = (0..100).map(|t| (t, Npcc::Value(0.5))).collect();
        for mode in [TauMode::Deviation, TauMode::Literal] {
            for k in [1, 12, 36] {
                let vs = run_values(&values, &cfg(k, 1.96, mode)).unwrap();
                assert!(vs.iter().all(|v| v.label == Label::Normal));
            }
        }
    }

    #[test]
    fn single_displaced_value_is_flagged() {
        // Repeating 0.48, 0.50, 0.52 pattern: sd over a full window is close
        // to 0.0164; displace one tick by far more than ten of those.
        let base = [0.48, 0.50, 0.52];
        let mut values: Vec<(i64, Npcc)> = (0..200)
            .map(|t| (t, Npcc::Value(base[t as usize % 3])))
            .collect();
        let sd = {
            let w: Vec<f64> = (0..36).map(|t| base[t % 3]).collect();
            let m = w.iter().sum::<f64>() / 36.0;
            (w.iter().map(|x| (x - m).powi(2)).sum::<f64>() / 35.0).sqrt()
        };
        values[120].1 = Npcc::Value(0.50 + 10.0 * sd);
        let vs = run_values(&values, &cfg(36, 1.96, TauMode::Deviation)).unwrap();
        let flagged: Vec<i64> = vs
            .iter()
            .filter(|v| v.label == Label::Abnormal)
            .map(|v| v.tick)
            .collect();
        assert_eq!(flagged, vec![120]);
    }

    #[test]
    fn all_degenerate_stream_is_skipped() {
        let values: Vec<(i64, Npcc)> = (0..20).map(|t| (t, Npcc::Degenerate)).collect();
        let vs = run_values(&values, &DetectorConfig::default()).unwrap();
        assert!(vs.iter().all(|v| v.label == Label::Skipped));
    }

    #[test]
    fn k_one_compares_against_previous_normal_only() {
        let mut d = Detector::new(cfg(1, 1.96, TauMode::Literal)).unwrap();
        d.classify(0, Npcc::Value(0.4)).unwrap();
        let domain = normal_domain(d.state());
        let v = d.classify(1, Npcc::Value(0.5)).unwrap();
        assert_eq!(v.domain, domain);
        assert_eq!(d.state().history.len(), 1);
        assert_eq!(d.state().history[0].tick, 1);
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut d = Detector::new(DetectorConfig::default()).unwrap();
        for t in 0..40 {
            d.classify(t, Npcc::Value(0.5 + 0.001 * (t % 4) as f64))
                .unwrap();
        }
        let text = d.checkpoint_json();
        assert!(text.contains("\"version\": 1"));
        let back = Detector::from_checkpoint_json(&text).unwrap();
        assert_eq!(back, d);
        let bumped = text.replace("\"version\": 1", "\"version\": 7");
        assert_eq!(
            Detector::from_checkpoint_json(&bumped),
            Err(DetectorError::CheckpointVersion(7))
        );
    }

    #[test]
    fn unsorted_stream_errors() {
        let values = [(2, Npcc::Value(0.5)), (1, Npcc::Value(0.5))];
        assert!(matches!(
            run_values(&values, &DetectorConfig::default()),
            Err(DetectorError::NonIncreasingTick { .. })
        ));
    }
}
