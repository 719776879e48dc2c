//! The detection network: one valid 1-D convolution block (64 filters of
//! kernel size 3 by default) with ReLU and max pooling, flattened into a
//! dense hidden layer and a single tanh output unit covering the [-1, 1]
//! target range. Includes seeded initialization, exact backprop, mini-batch
//! training, and a versioned serialization format.

mod io;
mod train;

pub use io::{
    load_model, load_model_with_stats, save_model, save_model_with_stats, MODEL_FORMAT,
    MODEL_VERSION,
};
pub use train::{history_to_csv, train, TrainConfig};

use crate::nn::{
    conv1d_backward, conv1d_forward, dense_backward, dense_forward, maxpool1d_backward,
    maxpool1d_forward, Activation, NnError, Tensor2, Tensor3,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("window shape mismatch: expected {expected}, got {got}")]
    WindowShape { expected: String, got: String },
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("invalid train config: {0}")]
    BadTrainConfig(String),
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("corrupted model file: {0}")]
    Corrupted(String),
    #[error("unsupported model format `{found}`")]
    UnknownFormat { found: String },
    #[error("unsupported model file version {found} (this build reads version 1)")]
    VersionMismatch { found: u64 },
    #[error("shape mismatch in model file field `{field}`: expected {expected} values, got {got}")]
    FieldShape {
        field: String,
        expected: usize,
        got: usize,
    },
}

/// Architecture hyperparameters. `window_len` and `in_channels` must match
/// the windows the model will see; they are never inferred.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub window_len: usize,
    pub in_channels: usize,
    pub conv_filters: usize,
    pub kernel_size: usize,
    pub pool_size: usize,
    pub hidden_units: usize,
    pub hidden_activation: Activation,
    pub output_activation: Activation,
    /// Seed for weight initialization.
    pub seed: u64,
}

impl ModelConfig {
    /// Config with the standard architecture (64 conv filters of size 3,
    /// pool 2, 64 hidden units, ReLU inside, tanh out) for the given window
    /// geometry.
    pub fn new(window_len: usize, in_channels: usize) -> Self {
        Self {
            window_len,
            in_channels,
            conv_filters: 64,
            kernel_size: 3,
            pool_size: 2,
            hidden_units: 64,
            hidden_activation: Activation::Relu,
            output_activation: Activation::Tanh,
            seed: 0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let sizes = [
            ("window_len", self.window_len),
            ("in_channels", self.in_channels),
            ("conv_filters", self.conv_filters),
            ("kernel_size", self.kernel_size),
            ("pool_size", self.pool_size),
            ("hidden_units", self.hidden_units),
        ];
        for (name, v) in sizes {
            if v < 1 {
                return Err(ModelError::BadConfig(format!("{name} must be at least 1")));
            }
        }
        if self.kernel_size > self.window_len {
            return Err(ModelError::BadConfig(format!(
                "kernel_size {} exceeds window_len {}",
                self.kernel_size, self.window_len
            )));
        }
        if self.conv_output_len() < self.pool_size {
            return Err(ModelError::BadConfig(format!(
                "pooling {} values from a conv output of {} leaves nothing to flatten",
                self.pool_size,
                self.conv_output_len()
            )));
        }
        Ok(())
    }

    /// Length of the valid convolution output: `window_len - kernel_size + 1`.
    pub fn conv_output_len(&self) -> usize {
        self.window_len - self.kernel_size + 1
    }

    /// Rows surviving max pooling.
    pub fn pooled_len(&self) -> usize {
        self.conv_output_len() / self.pool_size
    }

    /// Input width of the hidden dense layer.
    pub fn flatten_size(&self) -> usize {
        self.pooled_len() * self.conv_filters
    }
}

/// All trainable parameters plus the config that shaped them.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub conv_kernel: Tensor3,
    pub conv_bias: Vec<f64>,
    pub hidden_weights: Tensor2,
    pub hidden_bias: Vec<f64>,
    pub output_weights: Tensor2,
    pub output_bias: Vec<f64>,
}

fn glorot_uniform(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize, count: usize) -> Vec<f64> {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    (0..count).map(|_| rng.random_range(-bound..bound)).collect()
}

/// Builds a model with Glorot-uniform weights (bound
/// `sqrt(6 / (fan_in + fan_out))`) drawn from a generator seeded with
/// `cfg.seed`, and zero biases. Identical configs produce bitwise-identical
/// parameters.
pub fn build_model(cfg: &ModelConfig) -> Result<ModelParams, ModelError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (k, c, f) = (cfg.kernel_size, cfg.in_channels, cfg.conv_filters);
    // Receptive-field fans for the conv kernel; plain in/out for dense.
    let conv_kernel = Tensor3::from_vec([k, c, f], glorot_uniform(&mut rng, k * c, k * f, k * c * f))?;
    let flat = cfg.flatten_size();
    let h = cfg.hidden_units;
    let hidden_weights = Tensor2::from_vec(flat, h, glorot_uniform(&mut rng, flat, h, flat * h))?;
    let output_weights = Tensor2::from_vec(h, 1, glorot_uniform(&mut rng, h, 1, h))?;
    Ok(ModelParams {
        config: *cfg,
        conv_kernel,
        conv_bias: vec![0.0; f],
        hidden_weights,
        hidden_bias: vec![0.0; h],
        output_weights,
        output_bias: vec![0.0; 1],
    })
}

impl ModelParams {
    pub fn param_count(&self) -> usize {
        self.conv_kernel.data().len()
            + self.conv_bias.len()
            + self.hidden_weights.data().len()
            + self.hidden_bias.len()
            + self.output_weights.data().len()
            + self.output_bias.len()
    }

    /// All parameters concatenated in a fixed order (conv kernel, conv
    /// bias, hidden weights, hidden bias, output weights, output bias), the
    /// layout the optimizer works on.
    pub fn flat_params(&self) -> Vec<f64> {
        let mut flat = Vec::with_capacity(self.param_count());
        flat.extend_from_slice(self.conv_kernel.data());
        flat.extend_from_slice(&self.conv_bias);
        flat.extend_from_slice(self.hidden_weights.data());
        flat.extend_from_slice(&self.hidden_bias);
        flat.extend_from_slice(self.output_weights.data());
        flat.extend_from_slice(&self.output_bias);
        flat
    }

    /// Writes a flat vector (in `flat_params` order) back into the
    /// structured parameters.
    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<(), ModelError> {
        if flat.len() != self.param_count() {
            return Err(ModelError::BadConfig(format!(
                "flat parameter vector has {} values, model needs {}",
                flat.len(),
                self.param_count()
            )));
        }
        let mut offset = 0usize;
        let mut take = |n: usize| {
            let slice = &flat[offset..offset + n];
            offset += n;
            slice
        };
        let n = self.conv_kernel.data().len();
        self.conv_kernel.data_mut().copy_from_slice(take(n));
        let n = self.conv_bias.len();
        self.conv_bias.copy_from_slice(take(n));
        let n = self.hidden_weights.data().len();
        self.hidden_weights.data_mut().copy_from_slice(take(n));
        let n = self.hidden_bias.len();
        self.hidden_bias.copy_from_slice(take(n));
        let n = self.output_weights.data().len();
        self.output_weights.data_mut().copy_from_slice(take(n));
        let n = self.output_bias.len();
        self.output_bias.copy_from_slice(take(n));
        Ok(())
    }
}

/// Intermediate activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Convolution output after ReLU.
    conv_act: Tensor2,
    pool_argmax: Vec<usize>,
    /// Pooled activations; their row-major data is the flattened dense input.
    pool_out: Tensor2,
    hidden_act: Vec<f64>,
    pub output: f64,
}

fn check_window_shape(m: &ModelParams, window: &Tensor2) -> Result<(), ModelError> {
    let expected = (m.config.window_len, m.config.in_channels);
    if window.shape() != expected {
        return Err(ModelError::WindowShape {
            expected: format!("{}x{}", expected.0, expected.1),
            got: format!("{}x{}", window.shape().0, window.shape().1),
        });
    }
    Ok(())
}

/// Runs the network on one window and keeps every intermediate needed by
/// [`backward`].
pub fn forward_cached(m: &ModelParams, window: &Tensor2) -> Result<ForwardCache, ModelError> {
    check_window_shape(m, window)?;
    let mut conv_act = conv1d_forward(window, &m.conv_kernel, &m.conv_bias)?;
    for v in conv_act.data_mut() {
        *v = Activation::Relu.apply(*v);
    }
    let (pool_out, pool_argmax) = maxpool1d_forward(&conv_act, m.config.pool_size)?;
    let hidden_act = dense_forward(
        pool_out.data(),
        &m.hidden_weights,
        &m.hidden_bias,
        m.config.hidden_activation,
    )?;
    let out = dense_forward(
        &hidden_act,
        &m.output_weights,
        &m.output_bias,
        m.config.output_activation,
    )?;
    Ok(ForwardCache {
        conv_act,
        pool_argmax,
        pool_out,
        hidden_act,
        output: out[0],
    })
}

/// Single-window inference: conv → ReLU → max pool → flatten → dense →
/// dense(1). With the default tanh output the result lies strictly inside
/// (-1, 1).
pub fn forward(m: &ModelParams, window: &Tensor2) -> Result<f64, ModelError> {
    Ok(forward_cached(m, window)?.output)
}

/// Per-parameter gradients, shaped exactly like [`ModelParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGrads {
    pub conv_kernel: Tensor3,
    pub conv_bias: Vec<f64>,
    pub hidden_weights: Tensor2,
    pub hidden_bias: Vec<f64>,
    pub output_weights: Tensor2,
    pub output_bias: Vec<f64>,
}

impl ModelGrads {
    pub fn zeros_like(m: &ModelParams) -> Self {
        Self {
            conv_kernel: Tensor3::zeros(m.conv_kernel.dims()),
            conv_bias: vec![0.0; m.conv_bias.len()],
            hidden_weights: Tensor2::zeros(
                m.hidden_weights.rows(),
                m.hidden_weights.cols(),
            ),
            hidden_bias: vec![0.0; m.hidden_bias.len()],
            output_weights: Tensor2::zeros(m.output_weights.rows(), m.output_weights.cols()),
            output_bias: vec![0.0; m.output_bias.len()],
        }
    }

    /// Adds `other` elementwise; used to accumulate per-example gradients
    /// over a batch in a fixed order.
    pub fn accumulate(&mut self, other: &ModelGrads) {
        fn add(a: &mut [f64], b: &[f64]) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        add(self.conv_kernel.data_mut(), other.conv_kernel.data());
        add(&mut self.conv_bias, &other.conv_bias);
        add(self.hidden_weights.data_mut(), other.hidden_weights.data());
        add(&mut self.hidden_bias, &other.hidden_bias);
        add(self.output_weights.data_mut(), other.output_weights.data());
        add(&mut self.output_bias, &other.output_bias);
    }

    /// Gradients flattened in `ModelParams::flat_params` order.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut flat = Vec::new();
        flat.extend_from_slice(self.conv_kernel.data());
        flat.extend_from_slice(&self.conv_bias);
        flat.extend_from_slice(self.hidden_weights.data());
        flat.extend_from_slice(&self.hidden_bias);
        flat.extend_from_slice(self.output_weights.data());
        flat.extend_from_slice(&self.output_bias);
        flat
    }
}

/// Exact gradients of the scalar output path for one window, given
/// `grad_output` = dLoss/dOutput. The cache must come from
/// [`forward_cached`] on the same window and parameters.
pub fn backward(
    m: &ModelParams,
    window: &Tensor2,
    cache: &ForwardCache,
    grad_output: f64,
) -> Result<ModelGrads, ModelError> {
    check_window_shape(m, window)?;
    let out_grads = dense_backward(
        &cache.hidden_act,
        &m.output_weights,
        &[cache.output],
        &[grad_output],
        m.config.output_activation,
    )?;
    let hidden_grads = dense_backward(
        cache.pool_out.data(),
        &m.hidden_weights,
        &cache.hidden_act,
        &out_grads.d_input,
        m.config.hidden_activation,
    )?;
    let d_pool = Tensor2::from_vec(
        cache.pool_out.rows(),
        cache.pool_out.cols(),
        hidden_grads.d_input.clone(),
    )?;
    let mut d_conv = maxpool1d_backward(&d_pool, &cache.pool_argmax, cache.conv_act.rows())?;
    for (g, a) in d_conv.data_mut().iter_mut().zip(cache.conv_act.data()) {
        *g *= Activation::Relu.grad_from_output(*a);
    }
    let conv_grads = conv1d_backward(window, &m.conv_kernel, &d_conv)?;
    Ok(ModelGrads {
        conv_kernel: conv_grads.d_kernel,
        conv_bias: conv_grads.d_bias,
        hidden_weights: hidden_grads.d_weights,
        hidden_bias: hidden_grads.d_bias,
        output_weights: out_grads.d_weights,
        output_bias: out_grads.d_bias,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::finite_diff_gradient;

    fn tiny_config(seed: u64) -> ModelConfig {
        ModelConfig {
            window_len: 7,
            in_channels: 1,
            conv_filters: 4,
            kernel_size: 3,
            pool_size: 2,
            hidden_units: 3,
            hidden_activation: Activation::Relu,
            output_activation: Activation::Tanh,
            seed,
        }
    }

    fn window_for(cfg: &ModelConfig, seed: u64) -> Tensor2 {
        let n = cfg.window_len * cfg.in_channels;
        let vals: Vec<f64> = (0..n)
            .map(|i| {
                let x = (i as u64 + 1).wrapping_mul(seed.wrapping_mul(2654435761).wrapping_add(97));
                ((x >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
            })
            .collect();
        Tensor2::from_vec(cfg.window_len, cfg.in_channels, vals).unwrap()
    }

    #[test]
    fn default_architecture_flattens_to_576() {
        let cfg = ModelConfig::new(21, 1);
        assert_eq!(cfg.conv_output_len(), 19);
        assert_eq!(cfg.pooled_len(), 9);
        assert_eq!(cfg.flatten_size(), 576);
    }

    #[test]
    fn build_is_deterministic_per_seed() {
        let cfg = ModelConfig::new(21, 1).with_seed(7);
        let a = build_model(&cfg).unwrap();
        let b = build_model(&cfg).unwrap();
        assert_eq!(a, b);
        let c = build_model(&ModelConfig::new(21, 1).with_seed(8)).unwrap();
        assert_ne!(a.conv_kernel, c.conv_kernel);
    }

    #[test]
    fn build_rejects_bad_shapes() {
        let mut cfg = ModelConfig::new(5, 1);
        cfg.kernel_size = 7;
        assert!(matches!(build_model(&cfg).unwrap_err(), ModelError::BadConfig(_)));

        let mut cfg = ModelConfig::new(3, 1);
        cfg.pool_size = 4; // conv output is 1 row, nothing to pool
        assert!(matches!(build_model(&cfg).unwrap_err(), ModelError::BadConfig(_)));
    }

    #[test]
    fn initialization_respects_glorot_bound() {
        let cfg = tiny_config(3);
        let m = build_model(&cfg).unwrap();
        let bound = (6.0 / (cfg.kernel_size * cfg.in_channels + cfg.kernel_size * cfg.conv_filters)
            as f64)
            .sqrt();
        for &v in m.conv_kernel.data() {
            assert!(v.abs() < bound);
        }
        assert!(m.conv_bias.iter().all(|&b| b == 0.0));
        assert!(m.hidden_bias.iter().all(|&b| b == 0.0));
        assert_eq!(m.output_bias, vec![0.0]);
    }

    #[test]
    fn zero_parameters_give_zero_output() {
        let cfg = tiny_config(0);
        let mut m = build_model(&cfg).unwrap();
        let zeros = vec![0.0; m.param_count()];
        m.set_flat_params(&zeros).unwrap();
        let out = forward(&m, &window_for(&cfg, 5)).unwrap();
        assert_eq!(out, 0.0);
    }

    #[test]
    fn output_is_strictly_inside_unit_interval() {
        let cfg = tiny_config(11);
        let m = build_model(&cfg).unwrap();
        for seed in 0..50 {
            let out = forward(&m, &window_for(&cfg, seed)).unwrap();
            assert!(out > -1.0 && out < 1.0, "got {out}");
        }
    }

    #[test]
    fn forward_is_reproducible() {
        let cfg = tiny_config(2);
        let m = build_model(&cfg).unwrap();
        let w = window_for(&cfg, 9);
        assert_eq!(forward(&m, &w).unwrap(), forward(&m, &w).unwrap());
    }

    #[test]
    fn forward_rejects_wrong_window_shape() {
        let cfg = tiny_config(2);
        let m = build_model(&cfg).unwrap();
        let bad = Tensor2::zeros(5, 1);
        assert!(matches!(
            forward(&m, &bad).unwrap_err(),
            ModelError::WindowShape { .. }
        ));
    }

    #[test]
    fn flat_params_round_trip() {
        let cfg = tiny_config(4);
        let m = build_model(&cfg).unwrap();
        let mut copy = m.clone();
        let flat = m.flat_params();
        assert_eq!(flat.len(), m.param_count());
        copy.set_flat_params(&flat).unwrap();
        assert_eq!(copy, m);
    }

    /// Fills every parameter (biases included) with pseudorandom nonzero
    /// values so the loss is evaluated away from ReLU kinks, where central
    /// differences are meaningful.
    fn randomize_params(m: &mut ModelParams, seed: u64) {
        let flat: Vec<f64> = (0..m.param_count())
            .map(|i| {
                let x = (i as u64 + 13).wrapping_mul(seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407));
                (((x >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0) * 0.6
            })
            .collect();
        m.set_flat_params(&flat).unwrap();
    }

    /// The end-to-end analytic gradient of a squared-error loss with
    /// respect to every parameter matches central finite differences.
    #[test]
    fn full_model_gradient_matches_finite_differences() {
        for seed in 0..5u64 {
            let cfg = tiny_config(seed);
            let mut m = build_model(&cfg).unwrap();
            randomize_params(&mut m, seed.wrapping_add(17));
            let window = window_for(&cfg, seed + 100);
            let target = 0.4;

            let cache = forward_cached(&m, &window).unwrap();
            // loss = (out - target)^2, dLoss/dOut = 2 (out - target)
            let grads = backward(&m, &window, &cache, 2.0 * (cache.output - target)).unwrap();
            let analytic = grads.to_flat();

            let loss_at = |flat: &[f64]| {
                let mut probe = m.clone();
                probe.set_flat_params(flat).unwrap();
                let out = forward(&probe, &window).unwrap();
                (out - target) * (out - target)
            };
            let numeric = finite_diff_gradient(loss_at, &m.flat_params(), 1e-6);
            for (i, (a, n)) in analytic.iter().zip(&numeric).enumerate() {
                assert!(
                    (a - n).abs() <= 1e-5 * n.abs().max(1e-3),
                    "seed {seed}, param {i}: analytic {a} vs numeric {n}"
                );
            }
        }
    }

    #[test]
    fn batch_gradient_is_sum_of_example_gradients() {
        let cfg = tiny_config(6);
        let m = build_model(&cfg).unwrap();
        let w1 = window_for(&cfg, 1);
        let w2 = window_for(&cfg, 2);
        let c1 = forward_cached(&m, &w1).unwrap();
        let c2 = forward_cached(&m, &w2).unwrap();
        let g1 = backward(&m, &w1, &c1, 0.5).unwrap();
        let g2 = backward(&m, &w2, &c2, -0.25).unwrap();
        let mut acc = ModelGrads::zeros_like(&m);
        acc.accumulate(&g1);
        acc.accumulate(&g2);
        let flat = acc.to_flat();
        for (i, v) in flat.iter().enumerate() {
            assert_eq!(*v, g1.to_flat()[i] + g2.to_flat()[i]);
        }
    }
}
