//! Scoring detected events against a ground-truth charge log: greedy
//! one-to-one matching within a time tolerance, then per-kind and overall
//! counts and timing-error statistics.

use crate::ingest::ChargeLog;
use crate::peaks::{EventKind, PhaseEvent};
use serde::{Deserialize, Serialize};
use std::fmt;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("tolerance must be positive and finite, got {0}")]
    BadTolerance(f64),
}

/// One matched prediction/truth pair of the same kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchedPair {
    pub kind: EventKind,
    pub pred_ts: f64,
    pub truth_ts: f64,
}

impl MatchedPair {
    pub fn abs_distance(&self) -> f64 {
        (self.pred_ts - self.truth_ts).abs()
    }
}

/// Outcome of matching predictions to truth events.
#[derive(Debug, Clone, PartialEq)]
pub struct Matching {
    pub pairs: Vec<MatchedPair>,
    pub unmatched_predictions: Vec<PhaseEvent>,
    pub unmatched_truth: Vec<(EventKind, f64)>,
}

/// Greedy nearest-first matching on one kind's timestamp lists. Candidate
/// pairs within tolerance are taken closest-first; ties are broken by the
/// earlier truth timestamp, then the earlier prediction timestamp.
fn greedy_match_kind(
    pred_ts: &[f64],
    truth_ts: &[f64],
    tolerance: f64,
) -> Vec<(usize, usize)> {
    let mut candidates: Vec<(f64, usize, usize)> = Vec::new();
    for (ti, &t) in truth_ts.iter().enumerate() {
        for (pi, &p) in pred_ts.iter().enumerate() {
            let d = (p - t).abs();
            if d <= tolerance {
                candidates.push((d, ti, pi));
            }
        }
    }
    candidates.sort_by(|a, b| {
        a.0.total_cmp(&b.0)
            .then(truth_ts[a.1].total_cmp(&truth_ts[b.1]))
            .then(pred_ts[a.2].total_cmp(&pred_ts[b.2]))
    });
    let mut truth_used = vec![false; truth_ts.len()];
    let mut pred_used = vec![false; pred_ts.len()];
    let mut pairs = Vec::new();
    for (_, ti, pi) in candidates {
        if !truth_used[ti] && !pred_used[pi] {
            truth_used[ti] = true;
            pred_used[pi] = true;
            pairs.push((pi, ti));
        }
    }
    pairs
}

/// Matches predicted events to the charge log's starts and ends, each kind
/// independently, one-to-one within `tolerance` seconds.
pub fn match_events(
    predicted: &[PhaseEvent],
    truth: &ChargeLog,
    tolerance: f64,
) -> Result<Matching, EvalError> {
    if !(tolerance > 0.0) || !tolerance.is_finite() {
        return Err(EvalError::BadTolerance(tolerance));
    }
    let mut pairs = Vec::new();
    let mut unmatched_predictions = Vec::new();
    let mut unmatched_truth = Vec::new();
    for kind in [EventKind::Start, EventKind::End] {
        let preds: Vec<&PhaseEvent> =
            predicted.iter().filter(|e| e.kind == kind).collect();
        let pred_ts: Vec<f64> = preds.iter().map(|e| e.timestamp).collect();
        let truth_ts: Vec<f64> = truth
            .entries()
            .iter()
            .map(|c| match kind {
                EventKind::Start => c.start_ts,
                EventKind::End => c.end_ts,
            })
            .collect();
        let matched = greedy_match_kind(&pred_ts, &truth_ts, tolerance);
        let mut pred_used = vec![false; pred_ts.len()];
        let mut truth_used = vec![false; truth_ts.len()];
        for &(pi, ti) in &matched {
            pred_used[pi] = true;
            truth_used[ti] = true;
            pairs.push(MatchedPair { kind, pred_ts: pred_ts[pi], truth_ts: truth_ts[ti] });
        }
        for (pi, used) in pred_used.iter().enumerate() {
            if !used {
                unmatched_predictions.push(preds[pi].clone());
            }
        }
        for (ti, used) in truth_used.iter().enumerate() {
            if !used {
                unmatched_truth.push((kind, truth_ts[ti]));
            }
        }
    }
    Ok(Matching { pairs, unmatched_predictions, unmatched_truth })
}

/// Counts and timing-error statistics for one event kind (or pooled).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KindReport {
    pub truth_count: usize,
    pub matched: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
    /// Mean |predicted − truth| over matched pairs; absent when none matched.
    pub mean_abs_distance: Option<f64>,
    /// Largest |predicted − truth| over matched pairs; absent when none matched.
    pub max_abs_distance: Option<f64>,
}

impl KindReport {
    fn from_parts(truth_count: usize, distances: &[f64], false_positives: usize) -> Self {
        let matched = distances.len();
        let mean = if matched > 0 {
            Some(distances.iter().sum::<f64>() / matched as f64)
        } else {
            None
        };
        let max = distances.iter().copied().reduce(f64::max);
        KindReport {
            truth_count,
            matched,
            false_positives,
            false_negatives: truth_count - matched,
            mean_abs_distance: mean,
            max_abs_distance: max,
        }
    }
}

/// Full evaluation: per-kind reports, a pooled report, and the tolerance
/// the matching used.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub starts: KindReport,
    pub ends: KindReport,
    pub overall: KindReport,
    pub tolerance: f64,
}

/// Matches and scores in one step.
pub fn evaluate(
    predicted: &[PhaseEvent],
    truth: &ChargeLog,
    tolerance: f64,
) -> Result<EvalReport, EvalError> {
    let matching = match_events(predicted, truth, tolerance)?;
    let report_for = |kind: Option<EventKind>| {
        let keep = |k: EventKind| kind.is_none() || kind == Some(k);
        let distances: Vec<f64> = matching
            .pairs
            .iter()
            .filter(|p| keep(p.kind))
            .map(|p| p.abs_distance())
            .collect();
        let false_positives = matching
            .unmatched_predictions
            .iter()
            .filter(|e| keep(e.kind))
            .count();
        let truth_count = match kind {
            None => 2 * truth.len(),
            Some(_) => truth.len(),
        };
        KindReport::from_parts(truth_count, &distances, false_positives)
    };
    Ok(EvalReport {
        starts: report_for(Some(EventKind::Start)),
        ends: report_for(Some(EventKind::End)),
        overall: report_for(None),
        tolerance,
    })
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fn stat(v: Option<f64>) -> String {
            match v {
                Some(v) => format!("{v:.1}"),
                None => "-".to_string(),
            }
        }
        writeln!(f, "event evaluation (tolerance {} s)", self.tolerance)?;
        writeln!(
            f,
            "{:<8} {:>6} {:>8} {:>4} {:>4} {:>10} {:>10}",
            "kind", "truth", "matched", "FP", "FN", "mean |d|", "max |d|"
        )?;
        for (name, r) in [
            ("starts", &self.starts),
            ("ends", &self.ends),
            ("overall", &self.overall),
        ] {
            writeln!(
                f,
                "{:<8} {:>6} {:>8} {:>4} {:>4} {:>10} {:>10}",
                name,
                r.truth_count,
                r.matched,
                r.false_positives,
                r.false_negatives,
                stat(r.mean_abs_distance),
                stat(r.max_abs_distance),
            )?;
        }
        Ok(())
    }
}
