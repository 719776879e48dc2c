//! Sensor and charge-log ingestion: CSV parsing, resampling onto a uniform
//! grid, per-channel normalization, and chronological train/test splitting.
//!
//! Timestamps are carried as real seconds since the epoch. CSV files may
//! give them as plain numbers or as ISO-8601 datetimes; both are converted
//! on parse.

use chrono::{DateTime, NaiveDateTime};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum IngestError {
    #[error("input is empty")]
    EmptyInput,
    #[error("missing header row (first line starts with a timestamp, so it looks like data)")]
    MissingHeader,
    #[error("header declares no data channels")]
    NoChannels,
    #[error("no valid data rows after parsing")]
    NoValidRows,
    #[error("charge CSV header must be `charge_id,start_ts,end_ts`, got `{got}`")]
    ChargeHeader { got: String },
    #[error("charge CSV line {line}: {message}")]
    ChargeRow { line: usize, message: String },
    #[error("start is not before end for charge `{id}`")]
    StartNotBeforeEnd { id: String },
    #[error("charges `{first}` and `{second}` overlap in time")]
    OverlappingCharges { first: String, second: String },
    #[error("channel `{name}` is constant; cannot normalize")]
    ConstantChannel { name: String },
    #[error("channel mismatch: {message}")]
    ChannelMismatch { message: String },
    #[error("unknown channel `{name}`")]
    UnknownChannel { name: String },
    #[error("need at least 2 charges to split, got {n}")]
    TooFewCharges { n: usize },
    #[error("split leaves the {side} set empty; adjust the ratio")]
    EmptySplit { side: &'static str },
    #[error("{context}: {message}")]
    InvalidArg {
        context: &'static str,
        message: String,
    },
}

fn invalid(context: &'static str, message: impl Into<String>) -> IngestError {
    IngestError::InvalidArg {
        context,
        message: message.into(),
    }
}

/// Raw multichannel samples at irregular timestamps.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries {
    timestamps: Vec<f64>,
    channel_names: Vec<String>,
    /// One row per timestamp, one column per channel.
    values: Vec<Vec<f64>>,
}

impl TimeSeries {
    /// Validates the invariants: strictly increasing finite timestamps, at
    /// least one channel, rectangular finite values.
    pub fn new(
        timestamps: Vec<f64>,
        channel_names: Vec<String>,
        values: Vec<Vec<f64>>,
    ) -> Result<Self, IngestError> {
        if channel_names.is_empty() {
            return Err(IngestError::NoChannels);
        }
        if timestamps.len() != values.len() {
            return Err(invalid(
                "TimeSeries",
                format!("{} timestamps but {} rows", timestamps.len(), values.len()),
            ));
        }
        for pair in timestamps.windows(2) {
            if !(pair[0] < pair[1]) {
                return Err(invalid(
                    "TimeSeries",
                    format!("timestamps not strictly increasing at {}", pair[1]),
                ));
            }
        }
        for (i, row) in values.iter().enumerate() {
            if row.len() != channel_names.len() {
                return Err(invalid(
                    "TimeSeries",
                    format!("row {i} has {} values, expected {}", row.len(), channel_names.len()),
                ));
            }
            if !row.iter().all(|v| v.is_finite()) || !timestamps[i].is_finite() {
                return Err(invalid("TimeSeries", format!("non-finite value in row {i}")));
            }
        }
        Ok(Self {
            timestamps,
            channel_names,
            values,
        })
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    pub fn timestamps(&self) -> &[f64] {
        &self.timestamps
    }

    pub fn channel_names(&self) -> &[String] {
        &self.channel_names
    }

    pub fn values(&self) -> &[Vec<f64>] {
        &self.values
    }

    /// Keeps only the named channels, in the order given.
    pub fn select_channels(&self, names: &[String]) -> Result<TimeSeries, IngestError> {
        let indices: Vec<usize> = names
            .iter()
            .map(|n| {
                self.channel_names
                    .iter()
                    .position(|c| c == n)
                    .ok_or_else(|| IngestError::UnknownChannel { name: n.clone() })
            })
            .collect::<Result<_, _>>()?;
        let values = self
            .values
            .iter()
            .map(|row| indices.iter().map(|&i| row[i]).collect())
            .collect();
        TimeSeries::new(self.timestamps.clone(), names.to_vec(), values)
    }
}

/// Samples on an exact uniform grid: sample `i` sits at `t0 + i * dt`.
#[derive(Debug, Clone, PartialEq)]
pub struct UniformSeries {
    t0: f64,
    dt: f64,
    channel_names: Vec<String>,
    values: Vec<Vec<f64>>,
}

impl UniformSeries {
    pub fn new(
        t0: f64,
        dt: f64,
        channel_names: Vec<String>,
        values: Vec<Vec<f64>>,
    ) -> Result<Self, IngestError> {
        if !(dt > 0.0) || !dt.is_finite() || !t0.is_finite() {
            return Err(invalid("UniformSeries", format!("bad grid t0={t0}, dt={dt}")));
        }
        if channel_names.is_empty() {
            return Err(IngestError::NoChannels);
        }
        for (i, row) in values.iter().enumerate() {
            if row.len() != channel_names.len() {
                return Err(invalid(
                    "UniformSeries",
                    format!("row {i} has {} values, expected {}", row.len(), channel_names.len()),
                ));
            }
            if !row.iter().all(|v| v.is_finite()) {
                return Err(invalid("UniformSeries", format!("non-finite value in row {i}")));
            }
        }
        Ok(Self {
            t0,
            dt,
            channel_names,
            values,
        })
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

    pub fn channel_names(&self) -> &[String] {
        &self.channel_names
    }

    pub fn values(&self) -> &[Vec<f64>] {
        &self.values
    }

    pub fn timestamp(&self, i: usize) -> f64 {
        self.t0 + (i as f64) * self.dt
    }

    /// Sub-series covering sample indices `[from, to)`.
    pub fn slice(&self, from: usize, to: usize) -> Result<UniformSeries, IngestError> {
        if from > to || to > self.len() {
            return Err(invalid(
                "UniformSeries::slice",
                format!("range {from}..{to} out of bounds for length {}", self.len()),
            ));
        }
        UniformSeries::new(
            self.timestamp(from),
            self.dt,
            self.channel_names.clone(),
            self.values[from..to].to_vec(),
        )
    }
}

/// One production phase with its ground-truth boundaries.
#[derive(Debug, Clone, PartialEq)]
pub struct ChargeEntry {
    pub id: String,
    pub start_ts: f64,
    pub end_ts: f64,
}

/// Validated, chronologically sorted list of production phases.
#[derive(Debug, Clone, PartialEq)]
pub struct ChargeLog {
    entries: Vec<ChargeEntry>,
}

impl ChargeLog {
    /// Sorts by start timestamp and validates ordering: every start precedes
    /// its end, and no two charges overlap (touching boundaries are allowed).
    pub fn new(mut entries: Vec<ChargeEntry>) -> Result<Self, IngestError> {
        for e in &entries {
            if !e.start_ts.is_finite() || !e.end_ts.is_finite() {
                return Err(invalid("ChargeLog", format!("non-finite timestamp for `{}`", e.id)));
            }
            if e.start_ts >= e.end_ts {
                return Err(IngestError::StartNotBeforeEnd { id: e.id.clone() });
            }
        }
        entries.sort_by(|a, b| a.start_ts.total_cmp(&b.start_ts));
        for pair in entries.windows(2) {
            if pair[1].start_ts < pair[0].end_ts {
                return Err(IngestError::OverlappingCharges {
                    first: pair[0].id.clone(),
                    second: pair[1].id.clone(),
                });
            }
        }
        Ok(Self { entries })
    }

    pub fn entries(&self) -> &[ChargeEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Per-channel mean and standard deviation fitted on training data.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct NormStats {
    pub channel_names: Vec<String>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Parses a timestamp cell: epoch seconds (integer or real), RFC 3339, or a
/// plain `YYYY-MM-DDTHH:MM:SS` datetime interpreted as UTC.
fn parse_timestamp(cell: &str) -> Option<f64> {
    let cell = cell.trim();
    if let Ok(v) = cell.parse::<f64>() {
        return v.is_finite().then_some(v);
    }
    if let Ok(dt) = DateTime::parse_from_rfc3339(cell) {
        let nanos = dt.timestamp_subsec_nanos() as f64;
        return Some(dt.timestamp() as f64 + nanos * 1e-9);
    }
    for fmt in ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S"] {
        if let Ok(dt) = NaiveDateTime::parse_from_str(cell, fmt) {
            return Some(dt.and_utc().timestamp() as f64);
        }
    }
    None
}

/// Parses sensor CSV: header row, column 1 = timestamp, remaining columns =
/// channels. Rows are sorted by timestamp; duplicate timestamps keep the
/// last occurrence in file order; malformed rows are dropped and counted.
///
/// Returns the series together with the dropped-row count.
pub fn parse_sensor_csv(text: &str) -> Result<(TimeSeries, usize), IngestError> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or(IngestError::EmptyInput)?;
    let header_cells: Vec<&str> = header.trim_end_matches('\r').split(',').collect();
    if parse_timestamp(header_cells[0]).is_some() {
        return Err(IngestError::MissingHeader);
    }
    if header_cells.len() < 2 {
        return Err(IngestError::NoChannels);
    }
    let channel_names: Vec<String> = header_cells[1..].iter().map(|s| s.trim().to_string()).collect();

    let n_channels = channel_names.len();
    let mut rows: Vec<(f64, usize, Vec<f64>)> = Vec::new();
    let mut dropped = 0usize;
    for (order, (_, line)) in lines.enumerate() {
        let cells: Vec<&str> = line.trim_end_matches('\r').split(',').collect();
        let parsed = (cells.len() == n_channels + 1)
            .then(|| {
                let ts = parse_timestamp(cells[0])?;
                let values: Option<Vec<f64>> = cells[1..]
                    .iter()
                    .map(|c| c.trim().parse::<f64>().ok().filter(|v| v.is_finite()))
                    .collect();
                Some((ts, values?))
            })
            .flatten();
        match parsed {
            Some((ts, values)) => rows.push((ts, order, values)),
            None => dropped += 1,
        }
    }
    if rows.is_empty() {
        return Err(IngestError::NoValidRows);
    }

    // Sort by timestamp, then file order, so the last occurrence of a
    // duplicate timestamp ends a run and wins the dedup below.
    rows.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut timestamps = Vec::with_capacity(rows.len());
    let mut values = Vec::with_capacity(rows.len());
    for (ts, _, row) in rows {
        if timestamps.last() == Some(&ts) {
            *values.last_mut().unwrap() = row;
        } else {
            timestamps.push(ts);
            values.push(row);
        }
    }
    Ok((TimeSeries::new(timestamps, channel_names, values)?, dropped))
}

/// Parses charge CSV with the exact header `charge_id,start_ts,end_ts`.
pub fn parse_charge_csv(text: &str) -> Result<ChargeLog, IngestError> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or(IngestError::EmptyInput)?;
    let normalized: Vec<String> = header
        .trim_end_matches('\r')
        .split(',')
        .map(|c| c.trim().to_string())
        .collect();
    if normalized != ["charge_id", "start_ts", "end_ts"] {
        return Err(IngestError::ChargeHeader {
            got: header.trim_end_matches('\r').to_string(),
        });
    }

    let mut entries = Vec::new();
    for (idx, line) in lines {
        let cells: Vec<&str> = line.trim_end_matches('\r').split(',').collect();
        if cells.len() != 3 {
            return Err(IngestError::ChargeRow {
                line: idx + 1,
                message: format!("expected 3 fields, got {}", cells.len()),
            });
        }
        let id = cells[0].trim().to_string();
        let start_ts = parse_timestamp(cells[1]).ok_or_else(|| IngestError::ChargeRow {
            line: idx + 1,
            message: format!("unparseable start timestamp `{}`", cells[1].trim()),
        })?;
        let end_ts = parse_timestamp(cells[2]).ok_or_else(|| IngestError::ChargeRow {
            line: idx + 1,
            message: format!("unparseable end timestamp `{}`", cells[2].trim()),
        })?;
        entries.push(ChargeEntry { id, start_ts, end_ts });
    }
    ChargeLog::new(entries)
}

/// Serializes a sensor series back to the CSV format `parse_sensor_csv`
/// reads, with timestamps as plain seconds.
pub fn write_sensor_csv(ts: &TimeSeries) -> String {
    let mut out = String::from("ts");
    for name in ts.channel_names() {
        out.push(',');
        out.push_str(name);
    }
    out.push('\n');
    for (t, row) in ts.timestamps().iter().zip(ts.values()) {
        out.push_str(&t.to_string());
        for v in row {
            out.push(',');
            out.push_str(&v.to_string());
        }
        out.push('\n');
    }
    out
}

/// Serializes a charge log to the CSV format `parse_charge_csv` reads.
pub fn write_charge_csv(log: &ChargeLog) -> String {
    let mut out = String::from("charge_id,start_ts,end_ts\n");
    for e in log.entries() {
        out.push_str(&format!("{},{},{}\n", e.id, e.start_ts, e.end_ts));
    }
    out
}

/// Resamples an irregular series onto a uniform grid by linear
/// interpolation. A raw gap wider than `gap_threshold` splits the output
/// into separate segments rather than interpolating across the outage.
///
/// Each segment's grid starts at its first raw timestamp and never extends
/// beyond its last. Segments with fewer than 2 raw samples are skipped;
/// their count is returned alongside the segments.
pub fn resample(
    ts: &TimeSeries,
    dt: f64,
    gap_threshold: f64,
) -> Result<(Vec<UniformSeries>, usize), IngestError> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(invalid("resample", format!("dt must be positive, got {dt}")));
    }
    if !(gap_threshold >= dt) {
        return Err(invalid(
            "resample",
            format!("gap_threshold ({gap_threshold}) must be at least dt ({dt})"),
        ));
    }

    // Split raw indices into runs whose internal gaps stay within threshold.
    let stamps = ts.timestamps();
    let mut runs: Vec<(usize, usize)> = Vec::new();
    let mut run_start = 0usize;
    for i in 1..stamps.len() {
        if stamps[i] - stamps[i - 1] > gap_threshold {
            runs.push((run_start, i));
            run_start = i;
        }
    }
    if !stamps.is_empty() {
        runs.push((run_start, stamps.len()));
    }

    let mut segments = Vec::new();
    let mut skipped = 0usize;
    for (lo, hi) in runs {
        if hi - lo < 2 {
            skipped += 1;
            continue;
        }
        let t0 = stamps[lo];
        let t_last = stamps[hi - 1];
        let mut rows = Vec::new();
        let mut cursor = lo; // raw index of the left bracket for the current grid point
        let mut i = 0usize;
        loop {
            let t = t0 + (i as f64) * dt;
            if t > t_last {
                break;
            }
            while cursor + 1 < hi - 1 && stamps[cursor + 1] <= t {
                cursor += 1;
            }
            rows.push(interpolate_row(ts, cursor, t));
            i += 1;
        }
        segments.push(UniformSeries::new(
            t0,
            dt,
            ts.channel_names().to_vec(),
            rows,
        )?);
    }
    Ok((segments, skipped))
}

/// Linear interpolation of all channels at time `t`, bracketed by raw
/// samples `left` and `left + 1`. Exact raw timestamps pass their values
/// through untouched, and results are clamped to the bracketing values so
/// rounding can never overshoot them.
fn interpolate_row(ts: &TimeSeries, left: usize, t: f64) -> Vec<f64> {
    let stamps = ts.timestamps();
    let rows = ts.values();
    if t == stamps[left] {
        return rows[left].clone();
    }
    let right = left + 1;
    if t == stamps[right] {
        return rows[right].clone();
    }
    let u = (t - stamps[left]) / (stamps[right] - stamps[left]);
    rows[left]
        .iter()
        .zip(&rows[right])
        .map(|(&a, &b)| (a + (b - a) * u).clamp(a.min(b), a.max(b)))
        .collect()
}

/// Fits per-channel mean and standard deviation over all samples of all
/// given series pooled together. Uses the population convention (divide by
/// n, not n − 1). Constant channels are rejected.
pub fn fit_normalization(train: &[UniformSeries]) -> Result<NormStats, IngestError> {
    let first = train.first().ok_or_else(|| invalid("fit_normalization", "no series given"))?;
    let names = first.channel_names().to_vec();
    for s in train {
        if s.channel_names() != names {
            return Err(IngestError::ChannelMismatch {
                message: format!("{:?} vs {:?}", s.channel_names(), names),
            });
        }
    }

    let n_channels = names.len();
    let mut count = 0usize;
    let mut sum = vec![0.0; n_channels];
    for s in train {
        for row in s.values() {
            for (acc, v) in sum.iter_mut().zip(row) {
                *acc += v;
            }
            count += 1;
        }
    }
    if count == 0 {
        return Err(invalid("fit_normalization", "series contain no samples"));
    }
    let mean: Vec<f64> = sum.iter().map(|s| s / count as f64).collect();

    let mut sq = vec![0.0; n_channels];
    for s in train {
        for row in s.values() {
            for ((acc, v), m) in sq.iter_mut().zip(row).zip(&mean) {
                let d = v - m;
                *acc += d * d;
            }
        }
    }
    let std: Vec<f64> = sq.iter().map(|s| (s / count as f64).sqrt()).collect();
    for (name, s) in names.iter().zip(&std) {
        if *s == 0.0 {
            return Err(IngestError::ConstantChannel { name: name.clone() });
        }
    }
    Ok(NormStats {
        channel_names: names,
        mean,
        std,
    })
}

/// Maps every value to `(v - mean) / std` per channel.
pub fn apply_normalization(s: &UniformSeries, stats: &NormStats) -> Result<UniformSeries, IngestError> {
    if s.channel_names() != stats.channel_names {
        return Err(IngestError::ChannelMismatch {
            message: format!("{:?} vs {:?}", s.channel_names(), stats.channel_names),
        });
    }
    let values = s
        .values()
        .iter()
        .map(|row| {
            row.iter()
                .zip(&stats.mean)
                .zip(&stats.std)
                .map(|((v, m), sd)| (v - m) / sd)
                .collect()
        })
        .collect();
    UniformSeries::new(s.t0(), s.dt(), s.channel_names().to_vec(), values)
}

/// Chronological split: the first `ceil(ratio * n)` charges go to train,
/// the rest to test. Charges are never split internally, so all training
/// data precedes all test data in time.
pub fn split_by_charge(log: &ChargeLog, ratio: f64) -> Result<(ChargeLog, ChargeLog), IngestError> {
    if log.len() < 2 {
        return Err(IngestError::TooFewCharges { n: log.len() });
    }
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(invalid("split_by_charge", format!("ratio must be in (0,1), got {ratio}")));
    }
    let n_train = (ratio * log.len() as f64).ceil() as usize;
    if n_train == 0 {
        return Err(IngestError::EmptySplit { side: "train" });
    }
    if n_train >= log.len() {
        return Err(IngestError::EmptySplit { side: "test" });
    }
    let train = ChargeLog::new(log.entries()[..n_train].to_vec())?;
    let test = ChargeLog::new(log.entries()[n_train..].to_vec())?;
    Ok((train, test))
}
