//! Event recovery: slide the trained model over a normalized series to get
//! a prediction curve, then turn its thresholded local extrema into unique
//! start/end timestamps.

use crate::ingest::UniformSeries;
use crate::model::{forward, ModelError, ModelParams};
use crate::nn::Tensor2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum PeaksError {
    #[error("series has {len} samples, shorter than the window of {w}")]
    SeriesTooShort { len: usize, w: usize },
    #[error("stride must be at least 1")]
    BadStride,
    #[error("threshold must be in (0, 1), got {0}")]
    BadThreshold(f64),
    #[error("min_separation must be non-negative, got {0}")]
    BadSeparation(f64),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("events CSV line {line}: {message}")]
    EventsCsv { line: usize, message: String },
    #[error("events CSV: missing header `kind,timestamp,score`")]
    EventsHeader,
}

/// Model outputs along a segment, stamped with window-center timestamps
/// (uniformly spaced at `dt` = stride × the segment's grid step).
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionSeries {
    t0: f64,
    dt: f64,
    values: Vec<f64>,
    segment_id: usize,
}

impl PredictionSeries {
    pub fn new(t0: f64, dt: f64, values: Vec<f64>, segment_id: usize) -> Self {
        Self { t0, dt, values, segment_id }
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn segment_id(&self) -> usize {
        self.segment_id
    }

    pub fn timestamp(&self, i: usize) -> f64 {
        self.t0 + (i as f64) * self.dt
    }
}

/// Kind of phase boundary an extremum represents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EventKind {
    Start,
    End,
}

impl EventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::Start => "start",
            EventKind::End => "end",
        }
    }
}

/// A recovered phase boundary: positive peaks are starts, negative ones
/// ends; `score` is the absolute prediction value at the apex.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseEvent {
    pub kind: EventKind,
    pub timestamp: f64,
    pub score: f64,
}

/// Slides the model over `s` (already normalized with the training stats)
/// and records one prediction per window position, stamped with the
/// window-center timestamp. The window length comes from the model config.
pub fn predict_series(
    m: &ModelParams,
    s: &UniformSeries,
    stride: usize,
    segment_id: usize,
) -> Result<PredictionSeries, PeaksError> {
    if stride == 0 {
        return Err(PeaksError::BadStride);
    }
    let w = m.config.window_len;
    if s.len() < w {
        return Err(PeaksError::SeriesTooShort { len: s.len(), w });
    }
    let channels = s.channel_names().len();
    let mut values = Vec::new();
    let mut start = 0usize;
    while start + w <= s.len() {
        let mut flat = Vec::with_capacity(w * channels);
        for row in &s.values()[start..start + w] {
            flat.extend_from_slice(row);
        }
        let input = Tensor2::from_vec(w, channels, flat).map_err(ModelError::from)?;
        values.push(forward(m, &input)?);
        start += stride;
    }
    Ok(PredictionSeries {
        t0: s.timestamp(w / 2),
        dt: s.dt() * stride as f64,
        values,
        segment_id,
    })
}

/// A candidate extremum before suppression.
#[derive(Debug, Clone, Copy)]
struct Candidate {
    index: usize,
    kind: EventKind,
    value: f64,
}

/// Finds strict local extrema, treating a plateau as one candidate at its
/// earliest sample. The first and last samples are never candidates.
fn local_extrema(values: &[f64]) -> Vec<Candidate> {
    let mut candidates = Vec::new();
    let n = values.len();
    let mut i = 0usize;
    while i < n {
        // The plateau of equal values starting at i covers [i, j).
        let mut j = i + 1;
        while j < n && values[j] == values[i] {
            j += 1;
        }
        if i > 0 && j < n {
            let v = values[i];
            if v > values[i - 1] && v > values[j] {
                candidates.push(Candidate { index: i, kind: EventKind::Start, value: v });
            } else if v < values[i - 1] && v < values[j] {
                candidates.push(Candidate { index: i, kind: EventKind::End, value: v });
            }
        }
        i = j;
    }
    candidates
}

/// Extracts unique phase events from a prediction curve.
///
/// Candidate starts are strict local maxima with value at least
/// `threshold`; candidate ends are strict local minima with value at most
/// `-threshold`. Per kind, non-maximum suppression keeps the
/// highest-scoring candidate within any `min_separation` span (ties go to
/// the earlier timestamp). The result is sorted by timestamp.
pub fn extract_events(
    p: &PredictionSeries,
    threshold: f64,
    min_separation: f64,
) -> Result<Vec<PhaseEvent>, PeaksError> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(PeaksError::BadThreshold(threshold));
    }
    if !(min_separation >= 0.0) {
        return Err(PeaksError::BadSeparation(min_separation));
    }

    // The filter is signed: a positive-valued dip or a negative-valued bump
    // is noise between peaks of one kind, not an event of the other.
    let mut candidates: Vec<Candidate> = local_extrema(p.values())
        .into_iter()
        .filter(|c| match c.kind {
            EventKind::Start => c.value >= threshold,
            EventKind::End => c.value <= -threshold,
        })
        .collect();
    // Score-descending order (ties by earlier timestamp) makes suppression
    // decisions depend only on already-accepted, stronger candidates; that
    // is what keeps the output monotone in the threshold.
    candidates.sort_by(|a, b| {
        b.value
            .abs()
            .total_cmp(&a.value.abs())
            .then(a.index.cmp(&b.index))
    });

    let mut accepted: Vec<Candidate> = Vec::new();
    for c in candidates {
        let suppressed = accepted.iter().any(|a| {
            a.kind == c.kind
                && (p.timestamp(a.index) - p.timestamp(c.index)).abs() < min_separation
        });
        if !suppressed {
            accepted.push(c);
        }
    }

    accepted.sort_by(|a, b| a.index.cmp(&b.index));
    Ok(accepted
        .into_iter()
        .map(|c| PhaseEvent {
            kind: c.kind,
            timestamp: p.timestamp(c.index),
            score: c.value.abs(),
        })
        .collect())
}

/// Serializes events as `kind,timestamp,score` CSV.
pub fn events_to_csv(events: &[PhaseEvent]) -> String {
    let mut out = String::from("kind,timestamp,score\n");
    for e in events {
        out.push_str(&format!("{},{},{}\n", e.kind.as_str(), e.timestamp, e.score));
    }
    out
}

/// Parses the `kind,timestamp,score` CSV written by [`events_to_csv`].
pub fn parse_events_csv(text: &str) -> Result<Vec<PhaseEvent>, PeaksError> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or(PeaksError::EventsHeader)?;
    let cells: Vec<String> = header
        .trim_end_matches('\r')
        .split(',')
        .map(|c| c.trim().to_string())
        .collect();
    if cells != ["kind", "timestamp", "score"] {
        return Err(PeaksError::EventsHeader);
    }
    let mut events = Vec::new();
    for (idx, line) in lines {
        let cells: Vec<&str> = line.trim_end_matches('\r').split(',').collect();
        if cells.len() != 3 {
            return Err(PeaksError::EventsCsv {
                line: idx + 1,
                message: format!("expected 3 fields, got {}", cells.len()),
            });
        }
        let kind = match cells[0].trim() {
            "start" => EventKind::Start,
            "end" => EventKind::End,
            other => {
                return Err(PeaksError::EventsCsv {
                    line: idx + 1,
                    message: format!("unknown kind `{other}`"),
                })
            }
        };
        let parse = |cell: &str, what: &str| {
            cell.trim().parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| {
                PeaksError::EventsCsv {
                    line: idx + 1,
                    message: format!("unparseable {what} `{}`", cell.trim()),
                }
            })
        };
        events.push(PhaseEvent {
            kind,
            timestamp: parse(cells[1], "timestamp")?,
            score: parse(cells[2], "score")?,
        });
    }
    Ok(events)
}

/// Serializes a prediction curve as `ts,pred` CSV for plotting.
pub fn predictions_to_csv(p: &PredictionSeries) -> String {
    let mut out = String::from("ts,pred\n");
    for (i, v) in p.values().iter().enumerate() {
        out.push_str(&format!("{},{}\n", p.timestamp(i), v));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_model, ModelConfig};
    use proptest::prelude::*;

    fn preds(values: &[f64]) -> PredictionSeries {
        PredictionSeries::new(0.0, 60.0, values.to_vec(), 0)
    }

    /// Independent restatement of the extraction rule: per-index extremum
    /// scan with plateau handling, threshold filter, then repeated global
    /// best-pick suppression.
    fn brute_force_events(p: &PredictionSeries, threshold: f64, min_sep: f64) -> Vec<PhaseEvent> {
        let v = p.values();
        let n = v.len();
        let mut pool: Vec<(usize, EventKind, f64)> = Vec::new();
        for i in 1..n.saturating_sub(1) {
            // i must open its plateau: the previous value differs.
            if v[i] == v[i - 1] {
                continue;
            }
            // Find the first differing value to the right.
            let mut j = i + 1;
            while j < n && v[j] == v[i] {
                j += 1;
            }
            if j == n {
                continue; // plateau runs into the boundary
            }
            if v[i] > v[i - 1] && v[i] > v[j] && v[i] >= threshold {
                pool.push((i, EventKind::Start, v[i]));
            }
            if v[i] < v[i - 1] && v[i] < v[j] && v[i] <= -threshold {
                pool.push((i, EventKind::End, v[i]));
            }
        }
        let mut accepted: Vec<(usize, EventKind, f64)> = Vec::new();
        while !pool.is_empty() {
            // Pick the globally strongest remaining candidate.
            let best = pool
                .iter()
                .enumerate()
                .min_by(|(_, a), (_, b)| {
                    b.2.abs().total_cmp(&a.2.abs()).then(a.0.cmp(&b.0))
                })
                .map(|(idx, _)| idx)
                .unwrap();
            let chosen = pool.remove(best);
            pool.retain(|c| {
                c.1 != chosen.1
                    || (p.timestamp(c.0) - p.timestamp(chosen.0)).abs() >= min_sep
            });
            accepted.push(chosen);
        }
        accepted.sort_by(|a, b| a.0.cmp(&b.0));
        accepted
            .into_iter()
            .map(|(i, kind, value)| PhaseEvent {
                kind,
                timestamp: p.timestamp(i),
                score: value.abs(),
            })
            .collect()
    }

    #[test]
    fn all_zero_predictions_give_no_events() {
        let p = preds(&[0.0; 20]);
        assert!(extract_events(&p, 0.5, 0.0).unwrap().is_empty());
    }

    #[test]
    fn single_triangle_yields_one_start_at_apex() {
        let p = preds(&[0.0, 0.3, 0.6, 0.9, 0.6, 0.3, 0.0]);
        let events = extract_events(&p, 0.5, 0.0).unwrap();
        assert_eq!(events.len(), 1);
        assert_eq!(events[0].kind, EventKind::Start);
        assert_eq!(events[0].timestamp, 180.0);
        assert_eq!(events[0].score, 0.9);
    }

    #[test]
    fn weak_peak_below_threshold_is_dropped() {
        let p = preds(&[0.0, 0.2, 0.4, 0.2, 0.0]);
        assert!(extract_events(&p, 0.5, 0.0).unwrap().is_empty());
    }

    #[test]
    fn negative_trough_yields_an_end() {
        let p = preds(&[0.0, -0.4, -0.8, -0.4, 0.0]);
        let events = extract_events(&p, 0.5, 0.0).unwrap();
        assert_eq!(events.len(), 1);
        assert_eq!(events[0].kind, EventKind::End);
        assert_eq!(events[0].score, 0.8);
    }

    #[test]
    fn plateau_apex_takes_earliest_sample() {
        let p = preds(&[0.0, 0.9, 0.9, 0.9, 0.0]);
        let events = extract_events(&p, 0.5, 0.0).unwrap();
        assert_eq!(events.len(), 1);
        assert_eq!(events[0].timestamp, 60.0);
    }

    #[test]
    fn boundary_samples_are_not_candidates() {
        let p = preds(&[0.9, 0.5, 0.0, 0.5, 0.9]);
        assert!(extract_events(&p, 0.5, 0.0).unwrap().is_empty());
    }

    #[test]
    fn suppression_keeps_the_stronger_peak() {
        // Two maxima 120 s apart; separation 300 s keeps only the higher.
        let p = preds(&[0.0, 0.7, 0.5, 0.9, 0.0]);
        let events = extract_events(&p, 0.5, 300.0).unwrap();
        assert_eq!(events.len(), 1);
        assert_eq!(events[0].timestamp, 180.0);

        // With separation below their distance both survive.
        let events = extract_events(&p, 0.5, 100.0).unwrap();
        assert_eq!(events.len(), 2);
    }

    #[test]
    fn suppression_tie_goes_to_earlier_peak() {
        let p = preds(&[0.0, 0.8, 0.5, 0.8, 0.0]);
        let events = extract_events(&p, 0.5, 300.0).unwrap();
        assert_eq!(events.len(), 1);
        assert_eq!(events[0].timestamp, 60.0);
    }

    #[test]
    fn starts_and_ends_are_suppressed_independently_and_sorted() {
        let p = preds(&[0.0, 0.9, 0.0, -0.85, 0.0, 0.7, 0.0]);
        let events = extract_events(&p, 0.5, 1000.0).unwrap();
        let kinds: Vec<EventKind> = events.iter().map(|e| e.kind).collect();
        assert_eq!(kinds, vec![EventKind::Start, EventKind::End]);
        assert!(events.windows(2).all(|w| w[0].timestamp <= w[1].timestamp));
    }

    #[test]
    fn validates_parameters() {
        let p = preds(&[0.0; 5]);
        assert_eq!(extract_events(&p, 0.0, 0.0).unwrap_err(), PeaksError::BadThreshold(0.0));
        assert_eq!(extract_events(&p, 1.0, 0.0).unwrap_err(), PeaksError::BadThreshold(1.0));
        assert_eq!(
            extract_events(&p, 0.5, -1.0).unwrap_err(),
            PeaksError::BadSeparation(-1.0)
        );
    }

    #[test]
    fn predict_series_counts_and_timestamps() {
        let cfg = ModelConfig {
            window_len: 5,
            in_channels: 1,
            conv_filters: 3,
            kernel_size: 3,
            pool_size: 2,
            hidden_units: 4,
            hidden_activation: crate::nn::Activation::Relu,
            output_activation: crate::nn::Activation::Tanh,
            seed: 5,
        };
        let m = build_model(&cfg).unwrap();
        let s = UniformSeries::new(
            100.0,
            60.0,
            vec!["c".to_string()],
            (0..9).map(|i| vec![i as f64 * 0.1]).collect(),
        )
        .unwrap();
        let p = predict_series(&m, &s, 1, 3).unwrap();
        assert_eq!(p.len(), 5);
        assert_eq!(p.t0(), 100.0 + 2.0 * 60.0);
        assert_eq!(p.dt(), 60.0);
        assert_eq!(p.segment_id(), 3);

        // Exactly one window fits a series of length w.
        let short = s.slice(0, 5).unwrap();
        assert_eq!(predict_series(&m, &short, 1, 0).unwrap().len(), 1);
        let too_short = s.slice(0, 4).unwrap();
        assert_eq!(
            predict_series(&m, &too_short, 1, 0).unwrap_err(),
            PeaksError::SeriesTooShort { len: 4, w: 5 }
        );
    }

    #[test]
    fn constant_series_with_zero_model_predicts_zero() {
        let cfg = ModelConfig {
            window_len: 5,
            in_channels: 1,
            conv_filters: 3,
            kernel_size: 3,
            pool_size: 2,
            hidden_units: 4,
            hidden_activation: crate::nn::Activation::Relu,
            output_activation: crate::nn::Activation::Tanh,
            seed: 5,
        };
        let mut m = build_model(&cfg).unwrap();
        let zeros = vec![0.0; m.param_count()];
        m.set_flat_params(&zeros).unwrap();
        let s = UniformSeries::new(
            0.0,
            60.0,
            vec!["c".to_string()],
            vec![vec![3.5]; 8],
        )
        .unwrap();
        let p = predict_series(&m, &s, 1, 0).unwrap();
        assert!(p.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn events_csv_round_trips() {
        let events = vec![
            PhaseEvent { kind: EventKind::Start, timestamp: 600.0, score: 0.91 },
            PhaseEvent { kind: EventKind::End, timestamp: 8000.0, score: 0.77 },
        ];
        let csv = events_to_csv(&events);
        assert_eq!(parse_events_csv(&csv).unwrap(), events);
        assert_eq!(
            parse_events_csv("kind,ts\n").unwrap_err(),
            PeaksError::EventsHeader
        );
        assert!(matches!(
            parse_events_csv("kind,timestamp,score\nmiddle,1,0.5\n").unwrap_err(),
            PeaksError::EventsCsv { .. }
        ));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        /// The implementation agrees with the brute-force enumeration, and
        /// raising the threshold never adds events.
        #[test]
        fn matches_brute_force_and_is_threshold_monotone(
            // A coarse value grid makes plateaus and exact ties common.
            raw in prop::collection::vec(-4i8..=4, 3..200),
            threshold_step in 1usize..=7,
            min_sep_steps in 0usize..20,
        ) {
            let values: Vec<f64> = raw.iter().map(|&v| v as f64 / 4.0).collect();
            let p = preds(&values);
            let threshold = threshold_step as f64 / 8.0;
            let min_sep = min_sep_steps as f64 * 60.0;

            let got = extract_events(&p, threshold, min_sep).unwrap();
            let expected = brute_force_events(&p, threshold, min_sep);
            prop_assert_eq!(&got, &expected);

            // Invariants: scores honor the threshold, same-kind events are
            // separated, and output is sorted.
            for e in &got {
                prop_assert!(e.score >= threshold);
            }
            for (i, a) in got.iter().enumerate() {
                for b in &got[i + 1..] {
                    if a.kind == b.kind {
                        prop_assert!((b.timestamp - a.timestamp).abs() >= min_sep);
                    }
                }
            }

            // Monotonicity: a higher threshold yields a subset.
            let higher = (threshold + 0.125).min(0.99);
            let fewer = extract_events(&p, higher, min_sep).unwrap();
            for e in &fewer {
                prop_assert!(got.contains(e), "event {e:?} appeared only at the higher threshold");
            }
        }
    }
}
