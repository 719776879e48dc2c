//! Config-file parsing and the three-level merge: built-in defaults are
//! overridden by the config file, which is overridden by flags.

use crate::{Cli, CliError};
use phasedet::pipeline::{fan_out_seeds, PipelineParams};
use phasedet::synth::SynthConfig;
use serde::Deserialize;
use std::path::{Path, PathBuf};

/// Optional fields recognized in the TOML or JSON config file. Anything
/// unset falls back to the built-in default; unknown keys are rejected.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub sensor_csv: Option<PathBuf>,
    pub charge_csv: Option<PathBuf>,
    pub model_file: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
    pub dt: Option<f64>,
    pub gap_threshold: Option<f64>,
    pub t_sw: Option<f64>,
    pub window_len: Option<usize>,
    pub stride: Option<usize>,
    pub threshold: Option<f64>,
    pub min_separation: Option<f64>,
    pub tolerance: Option<f64>,
    pub near_threshold: Option<f64>,
    pub keep_far_ratio: Option<f64>,
    pub split_ratio: Option<f64>,
    pub seed: Option<u64>,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub synth: SynthSection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub conv_filters: Option<usize>,
    pub kernel_size: Option<usize>,
    pub pool_size: Option<usize>,
    pub hidden_units: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub learning_rate: Option<f64>,
}

/// Generator overrides; interval fields are `[low, high]` pairs.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSection {
    pub n_charges: Option<usize>,
    pub dt: Option<f64>,
    pub charge_duration_s: Option<(f64, f64)>,
    pub gap_s: Option<(f64, f64)>,
    pub noise_std: Option<f64>,
    pub dip_depth: Option<(f64, f64)>,
    pub dip_tau_s: Option<(f64, f64)>,
    pub plateau_rise: Option<(f64, f64)>,
    pub rise_tau_s: Option<(f64, f64)>,
    pub end_drop: Option<(f64, f64)>,
    pub end_tau_s: Option<(f64, f64)>,
    pub baseline: Option<f64>,
    pub drift_amplitude: Option<f64>,
    pub drift_period_s: Option<f64>,
    pub jitter_frac: Option<f64>,
    pub aux_channels: Option<bool>,
    pub horizon_s: Option<f64>,
}

fn load_file_config(path: Option<&Path>) -> Result<FileConfig, CliError> {
    let Some(path) = path else {
        return Ok(FileConfig::default());
    };
    if !path.exists() {
        return Err(CliError::Usage(format!("config file not found: {}", path.display())));
    }
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
    match ext {
        "toml" => toml::from_str(&text)
            .map_err(|e| CliError::Usage(format!("invalid config {}: {e}", path.display()))),
        "json" => serde_json::from_str(&text)
            .map_err(|e| CliError::Usage(format!("invalid config {}: {e}", path.display()))),
        other => Err(CliError::Usage(format!(
            "config file must end in .toml or .json, got `.{other}` ({})",
            path.display()
        ))),
    }
}

/// Fully resolved run settings.
#[derive(Debug)]
pub struct Settings {
    pub params: PipelineParams,
    pub synth: SynthConfig,
    /// Directory used to derive default file locations.
    pub dir: PathBuf,
    pub sensor_csv: Option<PathBuf>,
    pub charge_csv: Option<PathBuf>,
    pub model_file: Option<PathBuf>,
}

impl Settings {
    /// Conventional location for an artifact: explicit path if given,
    /// otherwise the named default inside the working directory.
    pub fn path_or_default(&self, explicit: &Option<PathBuf>, name: &str) -> PathBuf {
        explicit.clone().unwrap_or_else(|| self.dir.join(name))
    }

    pub fn sensor_path(&self, flag: &Option<PathBuf>) -> PathBuf {
        flag.clone()
            .or_else(|| self.sensor_csv.clone())
            .unwrap_or_else(|| self.dir.join("sensor.csv"))
    }

    pub fn charges_path(&self, flag: &Option<PathBuf>) -> PathBuf {
        flag.clone()
            .or_else(|| self.charge_csv.clone())
            .unwrap_or_else(|| self.dir.join("charges.csv"))
    }

    pub fn model_path(&self, flag: &Option<PathBuf>) -> PathBuf {
        flag.clone()
            .or_else(|| self.model_file.clone())
            .unwrap_or_else(|| self.dir.join("model.json"))
    }
}

macro_rules! layer {
    ($target:expr, $file:expr, $flag:expr) => {
        if let Some(v) = $file {
            $target = v;
        }
        if let Some(v) = $flag {
            $target = v;
        }
    };
}

/// Merges defaults, config file, and flags into one settings object and
/// validates the numeric ranges.
pub fn resolve(cli: &Cli) -> Result<Settings, CliError> {
    let fc = load_file_config(cli.config.as_deref())?;
    let mut p = PipelineParams::default();

    layer!(p.dt, fc.dt, cli.dt);
    layer!(p.t_sw, fc.t_sw, cli.t_sw);
    // Derived defaults follow the fields they derive from unless set.
    p.gap_threshold = cli.gap_threshold.or(fc.gap_threshold).unwrap_or(5.0 * p.dt);
    p.min_separation = cli.min_separation.or(fc.min_separation).unwrap_or(p.t_sw);
    p.tolerance = cli.tolerance.or(fc.tolerance).unwrap_or(p.t_sw / 2.0);
    layer!(p.window_len, fc.window_len, cli.window_len);
    layer!(p.stride, fc.stride, cli.stride);
    layer!(p.threshold, fc.threshold, cli.threshold);
    layer!(p.near_threshold, fc.near_threshold, cli.near_threshold);
    layer!(p.keep_far_ratio, fc.keep_far_ratio, cli.keep_far_ratio);
    layer!(p.split_ratio, fc.split_ratio, cli.split_ratio);
    layer!(p.seed, fc.seed, cli.seed);
    layer!(p.epochs, fc.train.epochs, cli.epochs);
    layer!(p.batch_size, fc.train.batch_size, cli.batch_size);
    layer!(p.learning_rate, fc.train.learning_rate, cli.learning_rate);
    layer!(p.conv_filters, fc.model.conv_filters, cli.conv_filters);
    layer!(p.kernel_size, fc.model.kernel_size, cli.kernel_size);
    layer!(p.pool_size, fc.model.pool_size, cli.pool_size);
    layer!(p.hidden_units, fc.model.hidden_units, cli.hidden_units);
    validate_params(&p)?;

    let mut synth = SynthConfig {
        dt: fc.synth.dt.unwrap_or(p.dt),
        seed: fan_out_seeds(p.seed).synth,
        ..SynthConfig::default()
    };
    let s = fc.synth;
    layer!(synth.n_charges, s.n_charges, cli.n_charges);
    layer!(synth.charge_duration_s, s.charge_duration_s, None);
    layer!(synth.gap_s, s.gap_s, None);
    layer!(synth.noise_std, s.noise_std, None);
    layer!(synth.dip_depth, s.dip_depth, None);
    layer!(synth.dip_tau_s, s.dip_tau_s, None);
    layer!(synth.plateau_rise, s.plateau_rise, None);
    layer!(synth.rise_tau_s, s.rise_tau_s, None);
    layer!(synth.end_drop, s.end_drop, None);
    layer!(synth.end_tau_s, s.end_tau_s, None);
    layer!(synth.baseline, s.baseline, None);
    layer!(synth.drift_amplitude, s.drift_amplitude, None);
    layer!(synth.drift_period_s, s.drift_period_s, None);
    layer!(synth.jitter_frac, s.jitter_frac, None);
    layer!(synth.aux_channels, s.aux_channels, None);
    if let Some(h) = s.horizon_s {
        synth.horizon_s = Some(h);
    }
    synth.validate().map_err(|e| CliError::Usage(e.to_string()))?;

    let dir = cli
        .output_dir
        .clone()
        .or(fc.output_dir)
        .unwrap_or_else(|| PathBuf::from("."));

    Ok(Settings {
        params: p,
        synth,
        dir,
        sensor_csv: fc.sensor_csv,
        charge_csv: fc.charge_csv,
        model_file: fc.model_file,
    })
}

/// Range checks for every user-settable numeric field, so mistakes fail
/// fast as config errors rather than surfacing mid-run.
fn validate_params(p: &PipelineParams) -> Result<(), CliError> {
    let usage = |msg: String| Err(CliError::Usage(msg));
    if !(p.dt > 0.0) || !p.dt.is_finite() {
        return usage(format!("dt must be positive, got {}", p.dt));
    }
    if !(p.gap_threshold >= p.dt) {
        return usage(format!(
            "gap_threshold ({}) must be at least dt ({})",
            p.gap_threshold, p.dt
        ));
    }
    if !(p.t_sw >= 2.0 * p.dt) {
        return usage(format!(
            "t_sw ({}) must be at least twice dt ({})",
            p.t_sw, p.dt
        ));
    }
    if p.window_len < 3 || p.window_len % 2 == 0 {
        return usage(format!("window_len must be odd and at least 3, got {}", p.window_len));
    }
    if p.stride == 0 {
        return usage("stride must be at least 1".to_string());
    }
    if !(p.threshold > 0.0 && p.threshold < 1.0) {
        return usage(format!("threshold must be in (0, 1), got {}", p.threshold));
    }
    if !(p.min_separation >= 0.0) {
        return usage(format!("min_separation must be non-negative, got {}", p.min_separation));
    }
    if !(p.tolerance > 0.0) || !p.tolerance.is_finite() {
        return usage(format!("tolerance must be positive, got {}", p.tolerance));
    }
    if !(0.0..=1.0).contains(&p.near_threshold) {
        return usage(format!("near_threshold must be in [0, 1], got {}", p.near_threshold));
    }
    if !(p.keep_far_ratio > 0.0 && p.keep_far_ratio <= 1.0) {
        return usage(format!("keep_far_ratio must be in (0, 1], got {}", p.keep_far_ratio));
    }
    if !(p.split_ratio > 0.0 && p.split_ratio < 1.0) {
        return usage(format!("split_ratio must be in (0, 1), got {}", p.split_ratio));
    }
    if p.epochs == 0 {
        return usage("epochs must be at least 1".to_string());
    }
    if p.batch_size == 0 {
        return usage("batch_size must be at least 1".to_string());
    }
    if !(p.learning_rate > 0.0) || !p.learning_rate.is_finite() {
        return usage(format!("learning_rate must be positive, got {}", p.learning_rate));
    }
    for (name, v) in [
        ("conv_filters", p.conv_filters),
        ("kernel_size", p.kernel_size),
        ("pool_size", p.pool_size),
        ("hidden_units", p.hidden_units),
    ] {
        if v == 0 {
            return usage(format!("{name} must be at least 1"));
        }
    }
    if p.kernel_size > p.window_len {
        return usage(format!(
            "kernel_size ({}) cannot exceed window_len ({})",
            p.kernel_size, p.window_len
        ));
    }
    Ok(())
}
