//! End-to-end orchestration: resampling, normalization, labeling,
//! windowing, training, detection, and evaluation wired together with a
//! single parameter set and deterministic seed fan-out.

use crate::eval::{evaluate, EvalError, EvalReport};
use crate::ingest::{
    apply_normalization, fit_normalization, resample, split_by_charge, ChargeLog, IngestError,
    NormStats, TimeSeries, UniformSeries,
};
use crate::label::{generate_labels, LabelConfig, LabelError, LabelSeries};
use crate::model::{
    build_model, train, ModelConfig, ModelError, ModelParams, TrainConfig,
};
use crate::peaks::{
    extract_events, predict_series, EventKind, PeaksError, PhaseEvent, PredictionSeries,
};
use crate::window::{make_windows_for_segments, rebalance, WindowError};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum PipelineError {
    #[error("bad pipeline parameters: {0}")]
    BadParams(String),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Label(#[from] LabelError),
    #[error(transparent)]
    Window(#[from] WindowError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Peaks(#[from] PeaksError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

/// Stage seeds derived from one user-facing seed, so each random consumer
/// has an independent stream and changing one stage never perturbs another.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PipelineSeeds {
    pub synth: u64,
    pub init: u64,
    pub shuffle: u64,
    pub rebalance: u64,
}

pub fn fan_out_seeds(global: u64) -> PipelineSeeds {
    PipelineSeeds {
        synth: global.wrapping_add(1),
        init: global.wrapping_add(2),
        shuffle: global.wrapping_add(3),
        rebalance: global.wrapping_add(4),
    }
}

/// One knob set for the whole pipeline. Defaults reflect a 60 s sensor
/// grid with a 20-minute label triangle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineParams {
    /// Resampling grid step, seconds.
    pub dt: f64,
    /// Gaps in the raw data longer than this split the trace, seconds.
    pub gap_threshold: f64,
    /// Full width of the triangular label around each event, seconds.
    pub t_sw: f64,
    /// Samples per model input window (odd).
    pub window_len: usize,
    /// Window step during training and inference.
    pub stride: usize,
    /// Minimum |prediction| for a peak to become an event.
    pub threshold: f64,
    /// Minimum spacing between detected events of one kind, seconds.
    pub min_separation: f64,
    /// Match tolerance between detection and truth, seconds.
    pub tolerance: f64,
    /// |label| at or above which a window always survives rebalancing.
    pub near_threshold: f64,
    /// Keep probability for the remaining far-from-event windows.
    pub keep_far_ratio: f64,
    /// Fraction of charges that go to the training side.
    pub split_ratio: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Convolution filters in the model's first layer.
    pub conv_filters: usize,
    /// Convolution kernel width, samples.
    pub kernel_size: usize,
    /// Max-pooling block size.
    pub pool_size: usize,
    /// Units in the dense hidden layer.
    pub hidden_units: usize,
    pub seed: u64,
}

impl Default for PipelineParams {
    fn default() -> Self {
        let t_sw = 1200.0;
        PipelineParams {
            dt: 60.0,
            gap_threshold: 300.0,
            t_sw,
            window_len: 21,
            stride: 1,
            threshold: 0.5,
            min_separation: t_sw,
            tolerance: t_sw / 2.0,
            near_threshold: 0.05,
            keep_far_ratio: 0.1,
            split_ratio: 0.8,
            epochs: 50,
            batch_size: 32,
            learning_rate: 1e-3,
            conv_filters: 64,
            kernel_size: 3,
            pool_size: 2,
            hidden_units: 64,
            seed: 0,
        }
    }
}

/// A trained model together with everything needed to run it on new data.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedDetector {
    pub model: ModelParams,
    pub stats: NormStats,
    /// Mean training loss per epoch.
    pub history: Vec<f64>,
    /// Window count before rebalancing.
    pub windows_total: usize,
    /// Window count actually trained on.
    pub windows_kept: usize,
    /// Segments skipped because they were shorter than one window.
    pub segments_too_short: usize,
}

/// Keeps the samples of `s` up to and including `cut_ts`.
fn cut_before(s: &UniformSeries, cut_ts: f64) -> Option<UniformSeries> {
    if s.is_empty() || s.timestamp(0) > cut_ts {
        return None;
    }
    if s.timestamp(s.len() - 1) <= cut_ts {
        return Some(s.clone());
    }
    let i_max = ((cut_ts - s.t0()) / s.dt()).floor() as usize;
    let k = (i_max + 1).min(s.len());
    Some(s.slice(0, k).expect("k is in range"))
}

/// Keeps the samples of `s` at or after `from_ts`.
fn cut_from(s: &UniformSeries, from_ts: f64) -> Option<UniformSeries> {
    if s.is_empty() || s.timestamp(s.len() - 1) < from_ts {
        return None;
    }
    if s.timestamp(0) >= from_ts {
        return Some(s.clone());
    }
    let j = ((from_ts - s.t0()) / s.dt()).ceil() as usize;
    let j = j.min(s.len() - 1);
    Some(s.slice(j, s.len()).expect("j is in range"))
}

/// Fits normalization, labels, windows, rebalances, and trains a fresh
/// model on the given segments against the given charge log.
pub fn train_on_segments(
    segments: &[UniformSeries],
    log: &ChargeLog,
    p: &PipelineParams,
) -> Result<TrainedDetector, PipelineError> {
    if !(p.learning_rate > 0.0) || !p.learning_rate.is_finite() {
        return Err(PipelineError::BadParams(format!(
            "learning_rate must be positive, got {}",
            p.learning_rate
        )));
    }
    let seeds = fan_out_seeds(p.seed);
    let stats = fit_normalization(segments)?;
    let normed: Vec<UniformSeries> = segments
        .iter()
        .map(|s| apply_normalization(s, &stats))
        .collect::<Result<_, _>>()?;
    let label_cfg = LabelConfig { t_sw: p.t_sw, ..LabelConfig::default() };
    let labels: Vec<LabelSeries> = normed
        .iter()
        .map(|s| generate_labels(s, log, &label_cfg))
        .collect::<Result<_, _>>()?;
    let (all, segments_too_short) =
        make_windows_for_segments(&normed, &labels, p.window_len, p.stride)?;
    let windows_total = all.len();
    let kept = rebalance(&all, p.near_threshold, p.keep_far_ratio, seeds.rebalance)?;

    let channels = segments.first().map_or(0, |s| s.channel_names().len());
    let mut cfg = ModelConfig::new(p.window_len, channels).with_seed(seeds.init);
    cfg.conv_filters = p.conv_filters;
    cfg.kernel_size = p.kernel_size;
    cfg.pool_size = p.pool_size;
    cfg.hidden_units = p.hidden_units;
    let fresh = build_model(&cfg)?;
    let tc = TrainConfig {
        epochs: p.epochs,
        batch_size: p.batch_size,
        learning_rate: p.learning_rate,
        shuffle_seed: seeds.shuffle,
        ..TrainConfig::default()
    };
    let (model, history) = train(&fresh, &kept, &tc)?;
    Ok(TrainedDetector {
        model,
        stats,
        history,
        windows_total,
        windows_kept: kept.len(),
        segments_too_short,
    })
}

/// Resamples a raw trace and trains a detector on all of it.
pub fn train_detector(
    series: &TimeSeries,
    log: &ChargeLog,
    p: &PipelineParams,
) -> Result<TrainedDetector, PipelineError> {
    let (segments, _dropped) = resample(series, p.dt, p.gap_threshold)?;
    train_on_segments(&segments, log, p)
}

fn kind_rank(k: EventKind) -> u8 {
    match k {
        EventKind::Start => 0,
        EventKind::End => 1,
    }
}

/// Runs the detector over raw (unnormalized) segments and returns one
/// prediction curve per segment long enough to hold a window; shorter
/// segments are skipped. Curves carry their source segment index.
pub fn predict_on_segments(
    model: &ModelParams,
    stats: &NormStats,
    segments: &[UniformSeries],
    p: &PipelineParams,
) -> Result<Vec<PredictionSeries>, PipelineError> {
    let mut curves = Vec::new();
    for (id, seg) in segments.iter().enumerate() {
        if seg.len() < model.config.window_len {
            continue;
        }
        let normed = apply_normalization(seg, stats)?;
        curves.push(predict_series(model, &normed, p.stride, id)?);
    }
    Ok(curves)
}

/// Runs the detector over raw (unnormalized) segments and merges the
/// recovered events in chronological order. Segments shorter than one
/// window are skipped.
pub fn detect_on_segments(
    model: &ModelParams,
    stats: &NormStats,
    segments: &[UniformSeries],
    p: &PipelineParams,
) -> Result<Vec<PhaseEvent>, PipelineError> {
    let mut events = Vec::new();
    for preds in predict_on_segments(model, stats, segments, p)? {
        events.extend(extract_events(&preds, p.threshold, p.min_separation)?);
    }
    events.sort_by(|a, b| {
        a.timestamp
            .total_cmp(&b.timestamp)
            .then_with(|| kind_rank(a.kind).cmp(&kind_rank(b.kind)))
    });
    Ok(events)
}

/// Resamples a raw trace and detects events on all of it.
pub fn detect_events(
    model: &ModelParams,
    stats: &NormStats,
    series: &TimeSeries,
    p: &PipelineParams,
) -> Result<Vec<PhaseEvent>, PipelineError> {
    let (segments, _dropped) = resample(series, p.dt, p.gap_threshold)?;
    detect_on_segments(model, stats, segments.as_slice(), p)
}

/// Everything a train/evaluate split run produces.
#[derive(Debug, Clone, PartialEq)]
pub struct EndToEndOutput {
    pub report: EvalReport,
    pub detector: TrainedDetector,
    pub events: Vec<PhaseEvent>,
    pub train_log: ChargeLog,
    pub test_log: ChargeLog,
    /// Start of the first held-out charge; the time axis splits here.
    pub boundary: f64,
}

/// Splits the charges chronologically, trains on the early side, detects
/// on the held-out side, and scores the detections.
///
/// Training data ends half a label triangle before the first held-out
/// charge starts, so no training window sees a held-out event. Detection
/// starts one full triangle before that charge, giving the model enough
/// input margin to localize the first held-out start.
pub fn run_end_to_end(
    series: &TimeSeries,
    log: &ChargeLog,
    p: &PipelineParams,
) -> Result<EndToEndOutput, PipelineError> {
    let (train_log, test_log) = split_by_charge(log, p.split_ratio)?;
    let boundary = test_log.entries()[0].start_ts;
    let (segments, _dropped) = resample(series, p.dt, p.gap_threshold)?;

    let train_cut = boundary - p.t_sw / 2.0;
    let test_from = boundary - p.t_sw;
    let train_segments: Vec<UniformSeries> =
        segments.iter().filter_map(|s| cut_before(s, train_cut)).collect();
    let test_segments: Vec<UniformSeries> =
        segments.iter().filter_map(|s| cut_from(s, test_from)).collect();

    let detector = train_on_segments(&train_segments, &train_log, p)?;
    let events = detect_on_segments(&detector.model, &detector.stats, &test_segments, p)?;
    let report = evaluate(&events, &test_log, p.tolerance)?;
    Ok(EndToEndOutput { report, detector, events, train_log, test_log, boundary })
}
