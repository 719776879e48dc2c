//! Synthetic furnace traces with a known charge log, for tests, demos,
//! and end-to-end validation.
//!
//! Each charge stamps a characteristic response onto a slowly drifting
//! baseline: a sharp dip at the start that recovers as the melt rises
//! toward a plateau, then a sharp drop at the end that decays back to the
//! baseline. The discontinuities sit exactly on the logged timestamps, so
//! a detector's timing error against the returned log is meaningful.

use crate::ingest::{ChargeEntry, ChargeLog, IngestError, TimeSeries};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum SynthError {
    #[error("bad generator config: {0}")]
    BadConfig(String),
    #[error("horizon {horizon} s ends before the drawn schedule ({required} s)")]
    HorizonTooShort { required: f64, horizon: f64 },
    #[error(transparent)]
    Ingest(#[from] IngestError),
}

/// Generator parameters. Interval fields are `(low, high)` bounds for a
/// uniform draw per charge; a collapsed interval (`high <= low`) pins the
/// value to `low`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_charges: usize,
    /// Charge length in seconds.
    pub charge_duration_s: (f64, f64),
    /// Idle time before each charge (and after the last one).
    pub gap_s: (f64, f64),
    /// Sampling interval in seconds.
    pub dt: f64,
    /// Standard deviation of the additive Gaussian measurement noise.
    pub noise_std: f64,
    /// Depth of the dip right after a charge start.
    pub dip_depth: (f64, f64),
    /// Recovery time constant of the start dip, seconds.
    pub dip_tau_s: (f64, f64),
    /// Height of the in-charge plateau above the baseline.
    pub plateau_rise: (f64, f64),
    /// Time constant of the rise toward the plateau, seconds.
    pub rise_tau_s: (f64, f64),
    /// Size of the sharp drop at the charge end.
    pub end_drop: (f64, f64),
    /// Decay time constant back to the baseline after the end, seconds.
    pub end_tau_s: (f64, f64),
    /// Idle-state sensor level.
    pub baseline: f64,
    /// Amplitude of the slow sinusoidal baseline drift.
    pub drift_amplitude: f64,
    /// Period of the baseline drift, seconds.
    pub drift_period_s: f64,
    /// Timestamp jitter as a fraction of `dt`, in `[0, 0.49]`; zero keeps
    /// the grid exactly uniform.
    pub jitter_frac: f64,
    /// Emit a correlated off-gas temperature channel alongside the
    /// carbon-potential channel.
    pub aux_channels: bool,
    /// Fixed trace length in seconds; `None` extends one drawn gap past
    /// the last charge end.
    pub horizon_s: Option<f64>,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_charges: 10,
            charge_duration_s: (7200.0, 14400.0),
            gap_s: (1800.0, 7200.0),
            dt: 60.0,
            noise_std: 0.01,
            dip_depth: (0.25, 0.4),
            dip_tau_s: (120.0, 240.0),
            plateau_rise: (0.5, 0.8),
            rise_tau_s: (600.0, 900.0),
            end_drop: (0.3, 0.5),
            end_tau_s: (300.0, 600.0),
            baseline: 0.35,
            drift_amplitude: 0.02,
            drift_period_s: 86_400.0,
            jitter_frac: 0.0,
            aux_channels: false,
            horizon_s: None,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |msg: String| Err(SynthError::BadConfig(msg));
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return bad(format!("dt must be positive, got {}", self.dt));
        }
        for (name, (lo, _)) in [
            ("charge_duration_s", self.charge_duration_s),
            ("gap_s", self.gap_s),
            ("dip_tau_s", self.dip_tau_s),
            ("rise_tau_s", self.rise_tau_s),
            ("end_tau_s", self.end_tau_s),
        ] {
            if !(lo > 0.0) || !lo.is_finite() {
                return bad(format!("{name} low bound must be positive, got {lo}"));
            }
        }
        for (name, (lo, hi)) in [
            ("charge_duration_s", self.charge_duration_s),
            ("gap_s", self.gap_s),
            ("dip_depth", self.dip_depth),
            ("dip_tau_s", self.dip_tau_s),
            ("plateau_rise", self.plateau_rise),
            ("rise_tau_s", self.rise_tau_s),
            ("end_drop", self.end_drop),
            ("end_tau_s", self.end_tau_s),
        ] {
            if !lo.is_finite() || !hi.is_finite() || lo < 0.0 {
                return bad(format!("{name} bounds must be finite and non-negative, got ({lo}, {hi})"));
            }
        }
        if !(self.noise_std >= 0.0) || !self.noise_std.is_finite() {
            return bad(format!("noise_std must be non-negative, got {}", self.noise_std));
        }
        if !self.baseline.is_finite() {
            return bad(format!("baseline must be finite, got {}", self.baseline));
        }
        if !(self.drift_amplitude >= 0.0) || !self.drift_amplitude.is_finite() {
            return bad(format!("drift_amplitude must be non-negative, got {}", self.drift_amplitude));
        }
        if !(self.drift_period_s > 0.0) || !self.drift_period_s.is_finite() {
            return bad(format!("drift_period_s must be positive, got {}", self.drift_period_s));
        }
        if !(0.0..=0.49).contains(&self.jitter_frac) {
            return bad(format!("jitter_frac must be in [0, 0.49], got {}", self.jitter_frac));
        }
        if let Some(h) = self.horizon_s {
            if !(h > 0.0) || !h.is_finite() {
                return bad(format!("horizon_s must be positive, got {h}"));
            }
        }
        Ok(())
    }
}

/// Per-charge response parameters drawn from the config intervals.
#[derive(Debug, Clone, Copy)]
struct ChargeShape {
    start: f64,
    end: f64,
    dip: f64,
    dip_tau: f64,
    rise: f64,
    rise_tau: f64,
    drop: f64,
    end_tau: f64,
}

impl ChargeShape {
    /// Response above the baseline while the charge is running, valid for
    /// `t >= self.start`.
    fn running(&self, t: f64) -> f64 {
        let dt = t - self.start;
        self.rise * (1.0 - (-dt / self.rise_tau).exp()) - self.dip * (-dt / self.dip_tau).exp()
    }

    /// Response above the baseline at or after the charge end.
    fn tail(&self, t: f64) -> f64 {
        (self.running(self.end) - self.drop) * (-(t - self.end) / self.end_tau).exp()
    }

    /// Response at any time at or after the charge start.
    fn response(&self, t: f64) -> f64 {
        if t < self.end {
            self.running(t)
        } else {
            self.tail(t)
        }
    }
}

fn sample_range(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi <= lo {
        lo
    } else {
        rng.random_range(lo..hi)
    }
}

/// Generates a sensor trace and the charge log that produced it.
///
/// The same seed always yields the same bytes. Draw order is fixed:
/// schedule and shape parameters charge by charge, one trailing gap, then
/// per sample a jitter offset (only when `jitter_frac > 0`) followed by
/// one noise value per channel (only when `noise_std > 0`).
pub fn generate(cfg: &SynthConfig) -> Result<(TimeSeries, ChargeLog), SynthError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let mut shapes: Vec<ChargeShape> = Vec::with_capacity(cfg.n_charges);
    let mut cursor = 0.0f64;
    for _ in 0..cfg.n_charges {
        let gap = sample_range(&mut rng, cfg.gap_s);
        let duration = sample_range(&mut rng, cfg.charge_duration_s);
        let start = cursor + gap;
        let end = start + duration;
        shapes.push(ChargeShape {
            start,
            end,
            dip: sample_range(&mut rng, cfg.dip_depth),
            dip_tau: sample_range(&mut rng, cfg.dip_tau_s),
            rise: sample_range(&mut rng, cfg.plateau_rise),
            rise_tau: sample_range(&mut rng, cfg.rise_tau_s),
            drop: sample_range(&mut rng, cfg.end_drop),
            end_tau: sample_range(&mut rng, cfg.end_tau_s),
        });
        cursor = end;
    }
    let trailing_gap = sample_range(&mut rng, cfg.gap_s);
    let horizon = match cfg.horizon_s {
        Some(h) => {
            if h < cursor {
                return Err(SynthError::HorizonTooShort { required: cursor, horizon: h });
            }
            h
        }
        None => cursor + trailing_gap,
    };

    let n_samples = (horizon / cfg.dt).floor() as usize + 1;
    let noise = if cfg.noise_std > 0.0 {
        Some(Normal::new(0.0, cfg.noise_std).expect("validated noise_std"))
    } else {
        None
    };

    let mut channel_names = vec!["carbon_potential".to_string()];
    if cfg.aux_channels {
        channel_names.push("off_gas_temp".to_string());
    }

    let mut timestamps = Vec::with_capacity(n_samples);
    let mut values = Vec::with_capacity(n_samples);
    // Index of the earliest charge that could still shape the signal.
    let mut active = 0usize;
    for i in 0..n_samples {
        let mut t = i as f64 * cfg.dt;
        if cfg.jitter_frac > 0.0 {
            let j = cfg.jitter_frac * cfg.dt;
            t += rng.random_range(-j..j);
        }
        while active + 1 < shapes.len() && shapes[active + 1].start <= t {
            active += 1;
        }
        let response = match shapes.get(active) {
            Some(shape) if t >= shape.start => shape.response(t),
            _ => 0.0,
        };
        let base = cfg.baseline + cfg.drift_amplitude * (TAU * t / cfg.drift_period_s).sin();

        let mut row = Vec::with_capacity(channel_names.len());
        let mut draw = |scale: f64| noise.map_or(0.0, |n| scale * n.sample(&mut rng));
        row.push(base + response + draw(1.0));
        if cfg.aux_channels {
            // The off-gas temperature tracks the melt response more weakly
            // and with a noisier sensor.
            row.push(0.55 + 0.2 * response + draw(2.0));
        }
        timestamps.push(t);
        values.push(row);
    }

    let entries: Vec<ChargeEntry> = shapes
        .iter()
        .enumerate()
        .map(|(i, s)| ChargeEntry {
            id: format!("charge-{:03}", i + 1),
            start_ts: s.start,
            end_ts: s.end,
        })
        .collect();

    let series = TimeSeries::new(timestamps, channel_names, values)?;
    let log = ChargeLog::new(entries)?;
    Ok((series, log))
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Config with every interval collapsed so the trace is an exact
    /// closed-form template: no noise, no drift, no jitter.
    fn pinned() -> SynthConfig {
        SynthConfig {
            n_charges: 1,
            charge_duration_s: (7200.0, 7200.0),
            gap_s: (1800.0, 1800.0),
            noise_std: 0.0,
            dip_depth: (0.3, 0.3),
            dip_tau_s: (200.0, 200.0),
            plateau_rise: (0.6, 0.6),
            rise_tau_s: (700.0, 700.0),
            end_drop: (0.4, 0.4),
            end_tau_s: (400.0, 400.0),
            drift_amplitude: 0.0,
            ..SynthConfig::default()
        }
    }

    fn value_at(series: &TimeSeries, t: f64) -> f64 {
        let i = series
            .timestamps()
            .iter()
            .position(|&ts| ts == t)
            .unwrap_or_else(|| panic!("no sample at t={t}"));
        series.values()[i][0]
    }

    #[test]
    fn pinned_config_matches_the_closed_form_template() {
        let (series, log) = generate(&pinned()).unwrap();
        let (s, e) = (1800.0, 9000.0);
        assert_eq!(log.entries()[0].start_ts, s);
        assert_eq!(log.entries()[0].end_ts, e);

        let tol = 1e-12;
        // Idle before the charge.
        assert!((value_at(&series, 0.0) - 0.35).abs() < tol);
        assert!((value_at(&series, 1740.0) - 0.35).abs() < tol);
        // The dip lands exactly on the logged start.
        assert!((value_at(&series, s) - (0.35 - 0.3)).abs() < tol);
        // One sample in, the dip recovers and the rise begins.
        let expect_1860 =
            0.35 + 0.6 * (1.0 - (-60.0f64 / 700.0).exp()) - 0.3 * (-60.0f64 / 200.0).exp();
        assert!((value_at(&series, 1860.0) - expect_1860).abs() < tol);
        // Deep inside the charge the response approaches the plateau.
        let expect_mid = 0.35 + 0.6 * (1.0 - (-5400.0f64 / 700.0).exp())
            - 0.3 * (-5400.0f64 / 200.0).exp();
        assert!((value_at(&series, 7200.0) - expect_mid).abs() < tol);
        // The drop lands exactly on the logged end and then decays.
        let r_end =
            0.6 * (1.0 - (-7200.0f64 / 700.0).exp()) - 0.3 * (-7200.0f64 / 200.0).exp();
        assert!((value_at(&series, e) - (0.35 + r_end - 0.4)).abs() < tol);
        let expect_9060 = 0.35 + (r_end - 0.4) * (-60.0f64 / 400.0).exp();
        assert!((value_at(&series, 9060.0) - expect_9060).abs() < tol);
    }

    #[test]
    fn same_seed_reproduces_the_trace_exactly() {
        let cfg = SynthConfig { n_charges: 4, seed: 17, jitter_frac: 0.2, aux_channels: true, ..SynthConfig::default() };
        let a = generate(&cfg).unwrap();
        let b = generate(&cfg).unwrap();
        assert_eq!(a, b);
        let c = generate(&SynthConfig { seed: 18, ..cfg }).unwrap();
        assert_ne!(a.0, c.0);
    }

    #[test]
    fn log_honors_schedule_bounds() {
        let cfg = SynthConfig { n_charges: 8, seed: 3, ..SynthConfig::default() };
        let (series, log) = generate(&cfg).unwrap();
        assert_eq!(log.len(), 8);
        let mut prev_end = 0.0;
        for c in log.entries() {
            let gap = c.start_ts - prev_end;
            assert!(gap >= cfg.gap_s.0 && gap < cfg.gap_s.1);
            let dur = c.end_ts - c.start_ts;
            assert!(dur >= cfg.charge_duration_s.0 && dur < cfg.charge_duration_s.1);
            prev_end = c.end_ts;
        }
        // The trace extends past the last end by at least the minimum gap.
        let last_ts = *series.timestamps().last().unwrap();
        assert!(last_ts >= prev_end + cfg.gap_s.0 - cfg.dt);
    }

    #[test]
    fn boundary_steps_dominate_measurement_noise() {
        // The jump across each logged boundary must stay well above the
        // noise floor, or the labels would be unlearnable.
        for seed in 0..5 {
            let cfg = SynthConfig { n_charges: 6, seed, noise_std: 0.0, ..SynthConfig::default() };
            let (series, log) = generate(&cfg).unwrap();
            let ts = series.timestamps();
            for c in log.entries() {
                for boundary in [c.start_ts, c.end_ts] {
                    let i = ts.iter().position(|&t| t >= boundary).unwrap();
                    let step = (series.values()[i][0] - series.values()[i - 1][0]).abs();
                    assert!(
                        step >= 5.0 * 0.01,
                        "seed {seed}: step {step} at boundary {boundary} is too small"
                    );
                }
            }
        }
    }

    #[test]
    fn sharpest_local_change_sits_on_the_boundary() {
        let cfg = SynthConfig { n_charges: 5, seed: 11, noise_std: 0.0, ..SynthConfig::default() };
        let (series, log) = generate(&cfg).unwrap();
        let ts = series.timestamps();
        let vals = series.values();
        for c in log.entries() {
            for boundary in [c.start_ts, c.end_ts] {
                let i = ts.iter().position(|&t| t >= boundary).unwrap();
                let step = (vals[i][0] - vals[i - 1][0]).abs();
                for k in i.saturating_sub(5)..(i + 5).min(ts.len() - 1) {
                    if k + 1 == i {
                        continue;
                    }
                    let other = (vals[k + 1][0] - vals[k][0]).abs();
                    assert!(
                        other < step,
                        "diff at {} rivals the boundary step at {boundary}",
                        ts[k]
                    );
                }
            }
        }
    }

    #[test]
    fn fixed_horizon_truncates_or_rejects() {
        let mut cfg = pinned();
        cfg.horizon_s = Some(12_000.0);
        let (series, _) = generate(&cfg).unwrap();
        let last = *series.timestamps().last().unwrap();
        assert!(last <= 12_000.0 && last > 12_000.0 - cfg.dt);

        // Two charges need 2 * (1800 + 7200) = 18000 s; 10000 is too short.
        cfg.n_charges = 2;
        cfg.horizon_s = Some(10_000.0);
        assert_eq!(
            generate(&cfg).unwrap_err(),
            SynthError::HorizonTooShort { required: 18_000.0, horizon: 10_000.0 }
        );
    }

    #[test]
    fn jitter_perturbs_timestamps_without_reordering() {
        let cfg = SynthConfig { jitter_frac: 0.3, seed: 7, ..SynthConfig::default() };
        let (series, _) = generate(&cfg).unwrap();
        let ts = series.timestamps();
        // Strict increase is enforced by construction; the grid must not
        // be uniform anymore.
        let d0 = ts[1] - ts[0];
        assert!(ts.windows(2).any(|w| (w[1] - w[0] - d0).abs() > 1e-9));
    }

    #[test]
    fn aux_channel_is_emitted_on_request() {
        let cfg = SynthConfig { aux_channels: true, n_charges: 2, ..SynthConfig::default() };
        let (series, _) = generate(&cfg).unwrap();
        assert_eq!(series.channel_names(), ["carbon_potential", "off_gas_temp"]);
        assert_eq!(series.values()[0].len(), 2);
    }

    #[test]
    fn zero_charges_gives_a_flat_noisy_trace() {
        let cfg = SynthConfig { n_charges: 0, noise_std: 0.0, drift_amplitude: 0.0, ..SynthConfig::default() };
        let (series, log) = generate(&cfg).unwrap();
        assert!(log.is_empty());
        assert!(series.values().iter().all(|r| r[0] == 0.35));
    }

    #[test]
    fn rejects_bad_configs() {
        for (mutate, fragment) in [
            (Box::new(|c: &mut SynthConfig| c.dt = 0.0) as Box<dyn Fn(&mut SynthConfig)>, "dt"),
            (Box::new(|c: &mut SynthConfig| c.noise_std = -0.1), "noise_std"),
            (Box::new(|c: &mut SynthConfig| c.jitter_frac = 0.5), "jitter_frac"),
            (Box::new(|c: &mut SynthConfig| c.gap_s = (0.0, 10.0)), "gap_s"),
            (Box::new(|c: &mut SynthConfig| c.drift_period_s = 0.0), "drift_period_s"),
            (Box::new(|c: &mut SynthConfig| c.horizon_s = Some(-5.0)), "horizon_s"),
        ] {
            let mut cfg = SynthConfig::default();
            mutate(&mut cfg);
            match generate(&cfg).unwrap_err() {
                SynthError::BadConfig(msg) => {
                    assert!(msg.contains(fragment), "message `{msg}` lacks `{fragment}`")
                }
                other => panic!("expected BadConfig, got {other:?}"),
            }
        }
    }
}
