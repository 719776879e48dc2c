//! Mini-batch training loop: seeded shuffling, MSE loss, Adam updates.

use super::{backward, forward_cached, ModelError, ModelGrads, ModelParams};
use crate::nn::{adam_step, mse_loss, AdamParams, AdamState};
use crate::window::WindowSet;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Optimization hyperparameters. Defaults: 50 epochs, batch 32, learning
/// rate 1e-3, Adam decay 0.9 / 0.999 with epsilon 1e-8.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Seed for the per-epoch shuffle of the training windows.
    pub shuffle_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 32,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            shuffle_seed: 0,
        }
    }
}

impl TrainConfig {
    /// A zero learning rate is accepted here (the loop then records a flat
    /// loss history without moving parameters); front ends that always want
    /// progress should check for it separately.
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.epochs < 1 {
            return Err(ModelError::BadTrainConfig("epochs must be at least 1".to_string()));
        }
        if self.batch_size < 1 {
            return Err(ModelError::BadTrainConfig("batch_size must be at least 1".to_string()));
        }
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            return Err(ModelError::BadTrainConfig(format!(
                "learning_rate must be finite and non-negative, got {}",
                self.learning_rate
            )));
        }
        for (name, beta) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&beta) {
                return Err(ModelError::BadTrainConfig(format!(
                    "{name} must be in [0, 1), got {beta}"
                )));
            }
        }
        if !(self.epsilon > 0.0) {
            return Err(ModelError::BadTrainConfig(format!(
                "epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        Ok(())
    }
}

/// Trains a copy of `m` on `data` with mini-batch Adam on MSE.
///
/// Windows are reshuffled every epoch from one generator seeded with
/// `shuffle_seed`, batches are processed in order, and gradients are
/// accumulated example-by-example in a fixed order, so identical inputs
/// yield bitwise-identical results. The returned history holds one
/// sample-weighted mean loss per epoch.
pub fn train(
    m: &ModelParams,
    data: &WindowSet,
    tc: &TrainConfig,
) -> Result<(ModelParams, Vec<f64>), ModelError> {
    tc.validate()?;
    if data.is_empty() {
        return Err(ModelError::EmptyTrainingSet);
    }
    if data.window_len != m.config.window_len || data.channels != m.config.in_channels {
        return Err(ModelError::WindowShape {
            expected: format!("{}x{}", m.config.window_len, m.config.in_channels),
            got: format!("{}x{}", data.window_len, data.channels),
        });
    }

    let mut model = m.clone();
    let mut flat = model.flat_params();
    let mut adam = AdamState::new(flat.len());
    let hp = AdamParams {
        lr: tc.learning_rate,
        beta1: tc.beta1,
        beta2: tc.beta2,
        eps: tc.epsilon,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(tc.shuffle_seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut history = Vec::with_capacity(tc.epochs);

    for epoch in 0..tc.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for (batch_idx, batch) in order.chunks(tc.batch_size).enumerate() {
            let mut caches = Vec::with_capacity(batch.len());
            let mut preds = Vec::with_capacity(batch.len());
            let mut targets = Vec::with_capacity(batch.len());
            for &i in batch {
                let cache = forward_cached(&model, &data.items[i].input)?;
                preds.push(cache.output);
                targets.push(data.items[i].target);
                caches.push(cache);
            }
            let (loss, grad) = mse_loss(&preds, &targets)?;
            if !loss.is_finite() {
                return Err(ModelError::NonFiniteLoss { epoch, batch: batch_idx });
            }
            loss_sum += loss * batch.len() as f64;

            let mut acc = ModelGrads::zeros_like(&model);
            for ((&i, cache), g) in batch.iter().zip(&caches).zip(&grad) {
                let grads = backward(&model, &data.items[i].input, cache, *g)?;
                acc.accumulate(&grads);
            }
            adam_step(&mut flat, &acc.to_flat(), &mut adam, &hp)?;
            model.set_flat_params(&flat)?;
        }
        history.push(loss_sum / data.len() as f64);
    }
    Ok((model, history))
}

/// Serializes a loss history as `epoch,loss` CSV.
pub fn history_to_csv(history: &[f64]) -> String {
    let mut out = String::from("epoch,loss\n");
    for (i, loss) in history.iter().enumerate() {
        out.push_str(&format!("{},{}\n", i + 1, loss));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_model, forward, ModelConfig};
    use crate::nn::Tensor2;
    use crate::window::{Window, WindowSet};

    fn toy_data(cfg: &ModelConfig, n: usize) -> WindowSet {
        let items: Vec<Window> = (0..n)
            .map(|i| {
                let vals: Vec<f64> = (0..cfg.window_len)
                    .map(|j| ((i * 7 + j * 3) as f64 * 0.7).sin())
                    .collect();
                // Target is a smooth function of the input, so the mapping
                // is consistent and a tiny network can fit it.
                let target = 0.7 * vals.iter().sum::<f64>() / vals.len() as f64;
                Window {
                    segment_id: 0,
                    center_index: i + cfg.window_len / 2,
                    center_ts: i as f64,
                    input: Tensor2::from_vec(cfg.window_len, 1, vals).unwrap(),
                    target,
                }
            })
            .collect();
        WindowSet {
            window_len: cfg.window_len,
            stride: 1,
            channels: 1,
            items,
        }
    }

    fn tiny_config(seed: u64) -> ModelConfig {
        ModelConfig {
            window_len: 7,
            in_channels: 1,
            conv_filters: 4,
            kernel_size: 3,
            pool_size: 2,
            hidden_units: 8,
            hidden_activation: crate::nn::Activation::Relu,
            output_activation: crate::nn::Activation::Tanh,
            seed,
        }
    }

    #[test]
    fn zero_learning_rate_changes_nothing() {
        let cfg = tiny_config(1);
        let m = build_model(&cfg).unwrap();
        let data = toy_data(&cfg, 10);
        let tc = TrainConfig {
            epochs: 3,
            learning_rate: 0.0,
            ..TrainConfig::default()
        };
        let (trained, history) = train(&m, &data, &tc).unwrap();
        assert_eq!(trained, m);
        assert_eq!(history.len(), 3);
        assert_eq!(history[0], history[1]);
        assert_eq!(history[1], history[2]);
    }

    #[test]
    fn training_is_deterministic() {
        let cfg = tiny_config(2);
        let m = build_model(&cfg).unwrap();
        let data = toy_data(&cfg, 20);
        let tc = TrainConfig {
            epochs: 5,
            batch_size: 4,
            ..TrainConfig::default()
        };
        let (m1, h1) = train(&m, &data, &tc).unwrap();
        let (m2, h2) = train(&m, &data, &tc).unwrap();
        assert_eq!(m1, m2);
        assert_eq!(h1, h2);
    }

    #[test]
    fn loss_decreases_on_learnable_data() {
        let cfg = tiny_config(3);
        let m = build_model(&cfg).unwrap();
        let data = toy_data(&cfg, 16);
        let tc = TrainConfig {
            epochs: 60,
            batch_size: 8,
            learning_rate: 3e-3,
            ..TrainConfig::default()
        };
        let (_, history) = train(&m, &data, &tc).unwrap();
        assert!(history.iter().all(|l| l.is_finite()));
        let first = history[0];
        let last = *history.last().unwrap();
        assert!(last < first * 0.5, "no progress: {first} -> {last}");
    }

    #[test]
    fn trained_model_predicts_training_targets() {
        let cfg = tiny_config(4);
        let m = build_model(&cfg).unwrap();
        let data = toy_data(&cfg, 8);
        let tc = TrainConfig {
            epochs: 300,
            batch_size: 8,
            learning_rate: 5e-3,
            ..TrainConfig::default()
        };
        let (trained, _) = train(&m, &data, &tc).unwrap();
        for w in &data.items {
            let out = forward(&trained, &w.input).unwrap();
            assert!((out - w.target).abs() < 0.1, "target {} got {out}", w.target);
        }
    }

    #[test]
    fn rejects_empty_and_mismatched_data() {
        let cfg = tiny_config(5);
        let m = build_model(&cfg).unwrap();
        let empty = WindowSet {
            window_len: 7,
            stride: 1,
            channels: 1,
            items: vec![],
        };
        assert_eq!(
            train(&m, &empty, &TrainConfig::default()).unwrap_err(),
            ModelError::EmptyTrainingSet
        );

        let wrong = toy_data(&tiny_config(5), 4);
        let narrow = build_model(&ModelConfig {
            window_len: 9,
            ..tiny_config(5)
        })
        .unwrap();
        assert!(matches!(
            train(&narrow, &wrong, &TrainConfig::default()).unwrap_err(),
            ModelError::WindowShape { .. }
        ));
    }

    #[test]
    fn validates_hyperparameters() {
        let bad = TrainConfig { epochs: 0, ..TrainConfig::default() };
        assert!(bad.validate().is_err());
        let bad = TrainConfig { batch_size: 0, ..TrainConfig::default() };
        assert!(bad.validate().is_err());
        let bad = TrainConfig { learning_rate: -0.1, ..TrainConfig::default() };
        assert!(bad.validate().is_err());
        let bad = TrainConfig { beta1: 1.0, ..TrainConfig::default() };
        assert!(bad.validate().is_err());
        let bad = TrainConfig { epsilon: 0.0, ..TrainConfig::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn history_csv_format() {
        let csv = history_to_csv(&[0.5, 0.25]);
        assert_eq!(csv, "epoch,loss\n1,0.5\n2,0.25\n");
    }
}
