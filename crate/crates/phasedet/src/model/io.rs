//! Versioned model serialization: JSON with base64-encoded little-endian
//! 64-bit float arrays, so round trips are byte-identical and files stay
//! portable across platforms.

use super::{ModelConfig, ModelError, ModelParams};
use crate::ingest::NormStats;
use crate::nn::{Tensor2, Tensor3};
use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use serde::{Deserialize, Serialize};

/// Format tag every model file must carry.
pub const MODEL_FORMAT: &str = "furnace-phase-model";
/// File version this build reads and writes.
pub const MODEL_VERSION: u64 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct ModelFile {
    format: String,
    version: u64,
    config: ModelConfig,
    /// Normalization fitted on the training data, carried along so
    /// inference can reproduce the training-time scaling.
    norm_stats: Option<NormStats>,
    params: ParamBlobs,
}

#[derive(Debug, Serialize, Deserialize)]
struct ParamBlobs {
    conv_kernel: String,
    conv_bias: String,
    hidden_weights: String,
    hidden_bias: String,
    output_weights: String,
    output_bias: String,
}

fn encode_f64s(values: &[f64]) -> String {
    let mut bytes = Vec::with_capacity(values.len() * 8);
    for v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    BASE64.encode(bytes)
}

fn decode_f64s(field: &str, blob: &str, expected: usize) -> Result<Vec<f64>, ModelError> {
    let bytes = BASE64
        .decode(blob)
        .map_err(|e| ModelError::Corrupted(format!("field `{field}` is not valid base64: {e}")))?;
    if bytes.len() % 8 != 0 {
        return Err(ModelError::Corrupted(format!(
            "field `{field}` holds {} bytes, not a multiple of 8",
            bytes.len()
        )));
    }
    let values: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    if values.len() != expected {
        return Err(ModelError::FieldShape {
            field: field.to_string(),
            expected,
            got: values.len(),
        });
    }
    if !values.iter().all(|v| v.is_finite()) {
        return Err(ModelError::Corrupted(format!(
            "field `{field}` contains non-finite values"
        )));
    }
    Ok(values)
}

/// Serializes a model (and optionally its normalization stats) to the
/// versioned JSON format. Identical inputs produce identical bytes.
pub fn save_model_with_stats(m: &ModelParams, stats: Option<&NormStats>) -> Vec<u8> {
    let file = ModelFile {
        format: MODEL_FORMAT.to_string(),
        version: MODEL_VERSION,
        config: m.config,
        norm_stats: stats.cloned(),
        params: ParamBlobs {
            conv_kernel: encode_f64s(m.conv_kernel.data()),
            conv_bias: encode_f64s(&m.conv_bias),
            hidden_weights: encode_f64s(m.hidden_weights.data()),
            hidden_bias: encode_f64s(&m.hidden_bias),
            output_weights: encode_f64s(m.output_weights.data()),
            output_bias: encode_f64s(&m.output_bias),
        },
    };
    serde_json::to_vec_pretty(&file).expect("model file serialization cannot fail")
}

/// Serializes a model without normalization stats.
pub fn save_model(m: &ModelParams) -> Vec<u8> {
    save_model_with_stats(m, None)
}

/// Parses a model file, returning the parameters and any stored
/// normalization stats. Corruption, an unknown format tag, an unsupported
/// version, and shape inconsistencies are reported as distinct errors.
pub fn load_model_with_stats(bytes: &[u8]) -> Result<(ModelParams, Option<NormStats>), ModelError> {
    // Probe format and version before strict deserialization so those
    // errors are reported precisely even for files this build cannot read.
    let value: serde_json::Value = serde_json::from_slice(bytes)
        .map_err(|e| ModelError::Corrupted(format!("not valid JSON: {e}")))?;
    match value.get("format").and_then(|f| f.as_str()) {
        Some(MODEL_FORMAT) => {}
        Some(other) => {
            return Err(ModelError::UnknownFormat { found: other.to_string() });
        }
        None => return Err(ModelError::Corrupted("missing `format` tag".to_string())),
    }
    match value.get("version").and_then(|v| v.as_u64()) {
        Some(MODEL_VERSION) => {}
        Some(other) => return Err(ModelError::VersionMismatch { found: other }),
        None => return Err(ModelError::Corrupted("missing `version` field".to_string())),
    }

    let file: ModelFile = serde_json::from_value(value)
        .map_err(|e| ModelError::Corrupted(format!("malformed model file: {e}")))?;
    let cfg = file.config;
    cfg.validate()?;

    let (k, c, f) = (cfg.kernel_size, cfg.in_channels, cfg.conv_filters);
    let flat = cfg.flatten_size();
    let h = cfg.hidden_units;
    let params = ModelParams {
        config: cfg,
        conv_kernel: Tensor3::from_vec(
            [k, c, f],
            decode_f64s("conv_kernel", &file.params.conv_kernel, k * c * f)?,
        )?,
        conv_bias: decode_f64s("conv_bias", &file.params.conv_bias, f)?,
        hidden_weights: Tensor2::from_vec(
            flat,
            h,
            decode_f64s("hidden_weights", &file.params.hidden_weights, flat * h)?,
        )?,
        hidden_bias: decode_f64s("hidden_bias", &file.params.hidden_bias, h)?,
        output_weights: Tensor2::from_vec(
            h,
            1,
            decode_f64s("output_weights", &file.params.output_weights, h)?,
        )?,
        output_bias: decode_f64s("output_bias", &file.params.output_bias, 1)?,
    };
    Ok((params, file.norm_stats))
}

/// Parses a model file, dropping any stored normalization stats.
pub fn load_model(bytes: &[u8]) -> Result<ModelParams, ModelError> {
    Ok(load_model_with_stats(bytes)?.0)
}
