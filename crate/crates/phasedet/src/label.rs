//! Triangular regression labels: +1 exactly at a charge start, −1 exactly at
//! a charge end, decaying linearly to 0 at half a window duration away, and
//! 0 everywhere else.

use crate::ingest::{ChargeLog, UniformSeries};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum LabelError {
    #[error("window duration {t_sw} s must be at least twice the grid step ({dt} s)")]
    WindowTooNarrow { t_sw: f64, dt: f64 },
    #[error("label {value} is outside [-1, 1]")]
    LabelOutOfRange { value: f64 },
    #[error("index {index} out of range for {len} labels")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("invalid label config: {0}")]
    BadConfig(String),
}

/// Labeling parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabelConfig {
    /// Full window duration in seconds; a label triangle spans `t_sw / 2`
    /// on each side of its event.
    pub t_sw: f64,
    /// Tolerance for classifying a label as start/end (values within
    /// `class_epsilon` of ±1).
    pub class_epsilon: f64,
}

impl Default for LabelConfig {
    fn default() -> Self {
        Self {
            t_sw: 1200.0,
            class_epsilon: 0.05,
        }
    }
}

impl LabelConfig {
    pub fn validate(&self) -> Result<(), LabelError> {
        if !(self.t_sw > 0.0) || !self.t_sw.is_finite() {
            return Err(LabelError::BadConfig(format!("t_sw must be positive, got {}", self.t_sw)));
        }
        if !(self.class_epsilon > 0.0 && self.class_epsilon < 1.0) {
            return Err(LabelError::BadConfig(format!(
                "class_epsilon must be in (0, 1), got {}",
                self.class_epsilon
            )));
        }
        Ok(())
    }
}

/// Regression targets aligned sample-for-sample with a [`UniformSeries`].
#[derive(Debug, Clone, PartialEq)]
pub struct LabelSeries {
    t0: f64,
    dt: f64,
    labels: Vec<f64>,
}

impl LabelSeries {
    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    pub fn timestamp(&self, i: usize) -> f64 {
        self.t0 + (i as f64) * self.dt
    }
}

/// Interpretation of a label value.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelClass {
    Start,
    Between,
    End,
}

/// One labeling event: a charge boundary with its sign.
#[derive(Debug, Clone, Copy)]
struct LabelEvent {
    ts: f64,
    /// true for a charge start (+1 apex), false for an end (−1 apex).
    is_start: bool,
}

/// Charge boundaries in tie-preference order: ascending timestamp, starts
/// before ends at identical timestamps.
fn events_in_preference_order(log: &ChargeLog) -> Vec<LabelEvent> {
    let mut events: Vec<LabelEvent> = log
        .entries()
        .iter()
        .flat_map(|e| {
            [
                LabelEvent { ts: e.start_ts, is_start: true },
                LabelEvent { ts: e.end_ts, is_start: false },
            ]
        })
        .collect();
    events.sort_by(|a, b| a.ts.total_cmp(&b.ts).then(b.is_start.cmp(&a.is_start)));
    events
}

/// Computes the label at distance `d` from an event (`None` beyond the
/// triangle): `1 - d / (t_sw / 2)` for starts, mirrored negative for ends.
fn triangle_value(d: f64, half: f64, is_start: bool) -> Option<f64> {
    if d > half {
        return None;
    }
    let v = 1.0 - d / half;
    Some(if is_start { v } else { -v })
}

/// Generates the label series for `s`: per sample, every event within
/// `t_sw / 2` contributes a linearly decaying candidate, and the candidate
/// with the largest absolute value wins. Ties go to the earlier event
/// (starts win over ends at identical timestamps). Samples beyond every
/// triangle get 0.
pub fn generate_labels(
    s: &UniformSeries,
    log: &ChargeLog,
    cfg: &LabelConfig,
) -> Result<LabelSeries, LabelError> {
    cfg.validate()?;
    if cfg.t_sw < 2.0 * s.dt() {
        return Err(LabelError::WindowTooNarrow { t_sw: cfg.t_sw, dt: s.dt() });
    }

    let half = cfg.t_sw / 2.0;
    let n = s.len();
    let mut labels = vec![0.0f64; n];
    // Events are visited in preference order, so a strict improvement test
    // leaves ties resolved toward the earlier (or start) event.
    for ev in events_in_preference_order(log) {
        if n == 0 {
            break;
        }
        // Candidate sample range for this event's triangle, widened by one
        // sample per side so float rounding at the feet cannot drop a
        // sample; the exact distance test below re-checks each one.
        let lo = ((ev.ts - half - s.t0()) / s.dt()).floor().max(0.0) as usize;
        let hi_f = ((ev.ts + half - s.t0()) / s.dt()).ceil();
        if hi_f < 0.0 {
            continue;
        }
        let hi = (hi_f as usize).min(n - 1);
        for i in lo..=hi {
            let d = (ev.ts - s.timestamp(i)).abs();
            if let Some(cand) = triangle_value(d, half, ev.is_start) {
                if cand.abs() > labels[i].abs() {
                    labels[i] = cand;
                }
            }
        }
    }
    Ok(LabelSeries { t0: s.t0(), dt: s.dt(), labels })
}

/// Maps a label value to its interpretation: values within `eps` of +1 are
/// starts, within `eps` of −1 are ends, everything else is in between.
pub fn classify_label(l: f64, eps: f64) -> Result<LabelClass, LabelError> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(LabelError::BadConfig(format!("epsilon must be in (0, 1), got {eps}")));
    }
    if !(l.abs() <= 1.0) {
        return Err(LabelError::LabelOutOfRange { value: l });
    }
    Ok(if l >= 1.0 - eps {
        LabelClass::Start
    } else if l <= -1.0 + eps {
        LabelClass::End
    } else {
        LabelClass::Between
    })
}

/// The regression target of a window is the label of its center sample.
pub fn window_target(labels: &LabelSeries, center_index: usize) -> Result<f64, LabelError> {
    labels
        .labels()
        .get(center_index)
        .copied()
        .ok_or(LabelError::IndexOutOfRange { index: center_index, len: labels.len() })
}

/// Serializes a label series as `ts,label` CSV for plotting.
pub fn labels_to_csv(series: &LabelSeries) -> String {
    let mut out = String::from("ts,label\n");
    for (i, l) in series.labels().iter().enumerate() {
        out.push_str(&format!("{},{}\n", series.timestamp(i), l));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{ChargeEntry, ChargeLog};
    use proptest::prelude::*;

    fn uniform(t0: f64, dt: f64, n: usize) -> UniformSeries {
        UniformSeries::new(t0, dt, vec!["c".to_string()], vec![vec![0.0]; n]).unwrap()
    }

    fn charges(bounds: &[(f64, f64)]) -> ChargeLog {
        ChargeLog::new(
            bounds
                .iter()
                .enumerate()
                .map(|(i, &(start_ts, end_ts))| ChargeEntry {
                    id: format!("c{i}"),
                    start_ts,
                    end_ts,
                })
                .collect(),
        )
        .unwrap()
    }

    /// Per-sample loop over all events — the straightforward restatement of
    /// the labeling rule that `generate_labels` must reproduce.
    fn naive_labels(s: &UniformSeries, log: &ChargeLog, t_sw: f64) -> Vec<f64> {
        let half = t_sw / 2.0;
        let mut events: Vec<(f64, bool)> = log
            .entries()
            .iter()
            .flat_map(|e| [(e.start_ts, true), (e.end_ts, false)])
            .collect();
        events.sort_by(|a, b| a.0.total_cmp(&b.0).then(b.1.cmp(&a.1)));
        (0..s.len())
            .map(|i| {
                let t = s.timestamp(i);
                let mut best = 0.0f64;
                for &(ev_ts, is_start) in &events {
                    let d = (ev_ts - t).abs();
                    if d <= half {
                        let v = 1.0 - d / half;
                        let cand = if is_start { v } else { -v };
                        if cand.abs() > best.abs() {
                            best = cand;
                        }
                    }
                }
                best
            })
            .collect()
    }

    #[test]
    fn apex_is_exactly_one() {
        // Start at t = 600 lands exactly on sample 10 (dt = 60).
        let s = uniform(0.0, 60.0, 40);
        let log = charges(&[(600.0, 1800.0)]);
        let cfg = LabelConfig { t_sw: 1200.0, class_epsilon: 0.05 };
        let labels = generate_labels(&s, &log, &cfg).unwrap();
        assert_eq!(labels.labels()[10], 1.0);
        assert_eq!(labels.labels()[30], -1.0); // end apex at t = 1800
    }

    #[test]
    fn triangle_foot_is_zero() {
        // Sample at distance exactly t_sw / 2 = 600 from the only event.
        let s = uniform(0.0, 60.0, 40);
        let log = charges(&[(600.0, 100000.0)]);
        let cfg = LabelConfig::default();
        let labels = generate_labels(&s, &log, &cfg).unwrap();
        assert_eq!(labels.labels()[0], 0.0); // d = 600 = t_sw/2
        assert_eq!(labels.labels()[20], 0.0); // d = 600 on the other side
    }

    #[test]
    fn end_event_at_quarter_window_is_minus_half() {
        // d = t_sw / 4 from an end: -(1 - (t_sw/4)/(t_sw/2)) = -0.5.
        let s = uniform(0.0, 60.0, 60);
        let log = charges(&[(-100000.0, 1200.0)]);
        let cfg = LabelConfig::default();
        let labels = generate_labels(&s, &log, &cfg).unwrap();
        // t_sw/4 = 300 s from the end at 1200 → samples at 900 and 1500.
        assert_eq!(labels.labels()[15], -0.5);
        assert_eq!(labels.labels()[25], -0.5);
    }

    #[test]
    fn halfway_down_a_start_triangle_is_half() {
        let s = uniform(0.0, 60.0, 40);
        let log = charges(&[(600.0, 100000.0)]);
        let labels = generate_labels(&s, &log, &LabelConfig::default()).unwrap();
        // 300 s from the start apex: 1 - 300/600 = 0.5.
        assert_eq!(window_target(&labels, 5).unwrap(), 0.5);
        assert_eq!(window_target(&labels, 15).unwrap(), 0.5);
    }

    #[test]
    fn far_samples_are_zero() {
        let s = uniform(0.0, 60.0, 100);
        let log = charges(&[(30000.0, 40000.0)]);
        let labels = generate_labels(&s, &log, &LabelConfig::default()).unwrap();
        assert!(labels.labels().iter().all(|&l| l == 0.0));
    }

    #[test]
    fn rejects_window_narrower_than_grid() {
        let s = uniform(0.0, 60.0, 10);
        let log = charges(&[(0.0, 600.0)]);
        let cfg = LabelConfig { t_sw: 100.0, class_epsilon: 0.05 };
        assert_eq!(
            generate_labels(&s, &log, &cfg).unwrap_err(),
            LabelError::WindowTooNarrow { t_sw: 100.0, dt: 60.0 }
        );
    }

    #[test]
    fn overlap_resolves_to_largest_absolute_value() {
        // End at 1000, next start at 1100, t_sw = 800 (half = 400): the
        // triangles overlap between the events.
        let s = uniform(0.0, 100.0, 20);
        let log = charges(&[(0.0, 1000.0), (1100.0, 2000.0)]);
        let cfg = LabelConfig { t_sw: 800.0, class_epsilon: 0.05 };
        let labels = generate_labels(&s, &log, &cfg).unwrap();
        // Sample at 1000: end apex -1 beats the start candidate 0.75.
        assert_eq!(labels.labels()[10], -1.0);
        // Sample at 1100: start apex +1.
        assert_eq!(labels.labels()[11], 1.0);
    }

    #[test]
    fn tie_goes_to_earlier_event() {
        // End at 300 and start at 500 (t_sw = 400, half = 200): the sample
        // at 400 is 100 s from both, so candidates are -0.5 and +0.5. The
        // earlier event (the end) wins.
        let s = uniform(0.0, 100.0, 10);
        let log = charges(&[(0.0, 300.0), (500.0, 900.0)]);
        let cfg = LabelConfig { t_sw: 400.0, class_epsilon: 0.05 };
        let labels = generate_labels(&s, &log, &cfg).unwrap();
        assert_eq!(labels.labels()[4], -0.5);
    }

    #[test]
    fn classify_thresholds() {
        assert_eq!(classify_label(1.0, 0.05).unwrap(), LabelClass::Start);
        assert_eq!(classify_label(0.0, 0.05).unwrap(), LabelClass::Between);
        assert_eq!(classify_label(-0.97, 0.05).unwrap(), LabelClass::End);
        assert_eq!(
            classify_label(1.5, 0.05).unwrap_err(),
            LabelError::LabelOutOfRange { value: 1.5 }
        );
    }

    #[test]
    fn classify_finds_apexes_only() {
        // With eps below one grid step's label decrement, only apex samples
        // classify as start.
        let s = uniform(0.0, 60.0, 40);
        let log = charges(&[(600.0, 100000.0)]);
        let labels = generate_labels(&s, &log, &LabelConfig::default()).unwrap();
        let eps = 60.0 / 600.0 * 0.5; // half a step's decrement
        let starts: Vec<usize> = (0..labels.len())
            .filter(|&i| classify_label(labels.labels()[i], eps).unwrap() == LabelClass::Start)
            .collect();
        assert_eq!(starts, vec![10]);
    }

    #[test]
    fn window_target_bounds_check() {
        let s = uniform(0.0, 60.0, 5);
        let labels = generate_labels(&s, &charges(&[(0.0, 600.0)]), &LabelConfig::default())
            .unwrap();
        assert_eq!(
            window_target(&labels, 5).unwrap_err(),
            LabelError::IndexOutOfRange { index: 5, len: 5 }
        );
    }

    #[test]
    fn csv_export_is_plot_ready() {
        let s = uniform(0.0, 60.0, 3);
        let labels = generate_labels(&s, &charges(&[(60.0, 100000.0)]), &LabelConfig::default())
            .unwrap();
        let csv = labels_to_csv(&labels);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "ts,label");
        assert_eq!(lines[2], "60,1");
    }

    #[test]
    fn second_differences_vanish_inside_triangle_flanks() {
        let s = uniform(0.0, 60.0, 40);
        let log = charges(&[(600.0, 100000.0)]);
        let labels = generate_labels(&s, &log, &LabelConfig::default()).unwrap();
        let l = labels.labels();
        // Apex index 10, feet at 0 and 20: flanks are linear.
        for i in 1..20usize {
            if i == 10 {
                continue; // apex is a kink
            }
            let dd = l[i + 1] - 2.0 * l[i] + l[i - 1];
            assert!(dd.abs() < 1e-12, "index {i}: {dd}");
        }
        let apex_dd = l[11] - 2.0 * l[10] + l[9];
        assert!(apex_dd < -0.1, "apex should be a kink, got {apex_dd}");
    }

    #[test]
    fn triangle_is_symmetric_around_event() {
        let s = uniform(0.0, 60.0, 40);
        let log = charges(&[(600.0, 100000.0)]);
        let labels = generate_labels(&s, &log, &LabelConfig::default()).unwrap();
        let l = labels.labels();
        for k in 0..=10usize {
            assert_eq!(l[10 - k], l[10 + k], "offset {k}");
        }
    }

    proptest! {
        /// The range-limited implementation agrees with the per-sample loop
        /// over all events on random logs and grids.
        #[test]
        fn matches_naive_oracle(
            n in 1usize..500,
            dt in prop::sample::select(vec![30.0, 60.0, 90.0]),
            t0 in -1000.0f64..1000.0,
            t_sw in 200.0f64..3000.0,
            raw_bounds in prop::collection::vec((0.0f64..30000.0, 60.0f64..5000.0), 1..5),
        ) {
            prop_assume!(t_sw >= 2.0 * dt);
            // Build non-overlapping charges by laying them end to end.
            let mut bounds = Vec::new();
            let mut cursor = -5000.0;
            for (gap, dur) in raw_bounds {
                let start = cursor + gap;
                bounds.push((start, start + dur));
                cursor = start + dur;
            }
            let log = charges(&bounds);
            let s = uniform(t0, dt, n);
            let cfg = LabelConfig { t_sw, class_epsilon: 0.05 };
            let got = generate_labels(&s, &log, &cfg).unwrap();
            let expected = naive_labels(&s, &log, t_sw);
            for (i, (a, b)) in got.labels().iter().zip(&expected).enumerate() {
                prop_assert!((a - b).abs() <= 1e-12, "sample {i}: {a} vs {b}");
            }
        }

        /// Labels always stay within [-1, 1].
        #[test]
        fn labels_bounded(
            n in 1usize..300,
            t_sw in 200.0f64..2000.0,
            starts in prop::collection::vec(0.0f64..20000.0, 1..4),
        ) {
            prop_assume!(t_sw >= 120.0);
            let mut bounds: Vec<(f64, f64)> = Vec::new();
            let mut cursor = 0.0;
            for gap in starts {
                let start = cursor + gap;
                bounds.push((start, start + 3000.0));
                cursor = start + 3000.0;
            }
            let log = charges(&bounds);
            let s = uniform(0.0, 60.0, n);
            let cfg = LabelConfig { t_sw, class_epsilon: 0.05 };
            let labels = generate_labels(&s, &log, &cfg).unwrap();
            for &l in labels.labels() {
                prop_assert!(l.abs() <= 1.0);
            }
        }
    }
}
