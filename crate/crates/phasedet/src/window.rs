//! Sliding-window construction: fixed-length slices of the uniform stream,
//! each carrying the label of its center sample as regression target, plus
//! rebalancing of the zero-dominated training set.

use crate::ingest::UniformSeries;
use crate::label::{window_target, LabelSeries};
use crate::nn::Tensor2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum WindowError {
    #[error("window length must be odd and at least 3, got {w}")]
    BadWindowLen { w: usize },
    #[error("stride must be at least 1")]
    BadStride,
    #[error("labels misaligned with series: {message}")]
    Misaligned { message: String },
    #[error("invalid rebalance parameter: {message}")]
    BadParam { message: String },
}

/// One training/inference example: a `w x channels` input slice and the
/// label of its center sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    /// Index of the source segment the window was cut from.
    pub segment_id: usize,
    /// Index of the center sample within its segment.
    pub center_index: usize,
    /// Timestamp of the center sample.
    pub center_ts: f64,
    /// Input matrix, `window_len` rows by `channels` columns.
    pub input: Tensor2,
    /// Regression target in [-1, 1].
    pub target: f64,
}

/// A batch of windows cut with common geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowSet {
    pub window_len: usize,
    pub stride: usize,
    pub channels: usize,
    pub items: Vec<Window>,
}

impl WindowSet {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

fn validate_geometry(w: usize, stride: usize) -> Result<(), WindowError> {
    // Odd length gives every window a unique center sample.
    if w < 3 || w % 2 == 0 {
        return Err(WindowError::BadWindowLen { w });
    }
    if stride == 0 {
        return Err(WindowError::BadStride);
    }
    Ok(())
}

/// Cuts windows from one segment at starts `0, stride, 2*stride, ...`. A
/// segment shorter than `w` yields an empty set. The target of each window
/// is the label at its center index, `start + w/2`.
pub fn make_windows(
    s: &UniformSeries,
    labels: &LabelSeries,
    w: usize,
    stride: usize,
    segment_id: usize,
) -> Result<WindowSet, WindowError> {
    validate_geometry(w, stride)?;
    if labels.len() != s.len() || labels.t0() != s.t0() || labels.dt() != s.dt() {
        return Err(WindowError::Misaligned {
            message: format!(
                "series has {} samples at (t0={}, dt={}), labels {} at (t0={}, dt={})",
                s.len(),
                s.t0(),
                s.dt(),
                labels.len(),
                labels.t0(),
                labels.dt()
            ),
        });
    }

    let channels = s.channel_names().len();
    let mut items = Vec::new();
    if s.len() >= w {
        let mut start = 0usize;
        while start + w <= s.len() {
            let center_index = start + w / 2;
            let mut flat = Vec::with_capacity(w * channels);
            for row in &s.values()[start..start + w] {
                flat.extend_from_slice(row);
            }
            let input = Tensor2::from_vec(w, channels, flat).expect("validated series rows");
            let target = window_target(labels, center_index).expect("center inside segment");
            debug_assert!(target.abs() <= 1.0);
            items.push(Window {
                segment_id,
                center_index,
                center_ts: s.timestamp(center_index),
                input,
                target,
            });
            start += stride;
        }
    }
    Ok(WindowSet {
        window_len: w,
        stride,
        channels,
        items,
    })
}

/// Cuts windows from several segments (paired with their label series) and
/// merges them in segment order. Windows never span a segment boundary.
/// Returns the merged set plus the number of segments too short to yield
/// any window.
pub fn make_windows_for_segments(
    segments: &[UniformSeries],
    labels: &[LabelSeries],
    w: usize,
    stride: usize,
) -> Result<(WindowSet, usize), WindowError> {
    validate_geometry(w, stride)?;
    if segments.len() != labels.len() {
        return Err(WindowError::Misaligned {
            message: format!("{} segments but {} label series", segments.len(), labels.len()),
        });
    }
    let channels = segments.first().map_or(0, |s| s.channel_names().len());
    let mut items = Vec::new();
    let mut too_short = 0usize;
    for (id, (s, l)) in segments.iter().zip(labels).enumerate() {
        let ws = make_windows(s, l, w, stride, id)?;
        if ws.is_empty() && s.len() < w {
            too_short += 1;
        }
        items.extend(ws.items);
    }
    Ok((
        WindowSet {
            window_len: w,
            stride,
            channels,
            items,
        },
        too_short,
    ))
}

/// Thins out far-from-event windows: every window with `|target| >=
/// near_threshold` is kept; each remaining window survives independently
/// with probability `keep_far_ratio`, drawn from a generator seeded with
/// `seed`. Relative order is preserved and the result is deterministic per
/// seed.
pub fn rebalance(
    ws: &WindowSet,
    near_threshold: f64,
    keep_far_ratio: f64,
    seed: u64,
) -> Result<WindowSet, WindowError> {
    if !(0.0..=1.0).contains(&near_threshold) {
        return Err(WindowError::BadParam {
            message: format!("near_threshold must be in [0, 1], got {near_threshold}"),
        });
    }
    if !(keep_far_ratio > 0.0 && keep_far_ratio <= 1.0) {
        return Err(WindowError::BadParam {
            message: format!("keep_far_ratio must be in (0, 1], got {keep_far_ratio}"),
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let items = ws
        .items
        .iter()
        .filter(|win| {
            win.target.abs() >= near_threshold || rng.random::<f64>() < keep_far_ratio
        })
        .cloned()
        .collect();
    Ok(WindowSet {
        window_len: ws.window_len,
        stride: ws.stride,
        channels: ws.channels,
        items,
    })
}
