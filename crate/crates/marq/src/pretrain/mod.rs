//! Training loop machinery: cosine schedule with linear warm-up, AdamW,
//! per-step metrics, and checkpoint-exact state.
//!
//! Determinism contract: every stochastic decision at step `k` is a pure
//! function of `(root_seed, k)` via the [`rng`](crate::rng) derivation
//! rule, so a run restored from a step-`k` checkpoint continues
//! bit-identically to an uninterrupted run. Nothing about the RNG needs to
//! be serialized beyond the seed and the step counter.

mod adam;

pub use adam::AdamW;

use crate::encoder::{
    loss_and_gradient, BatchItem, EncoderConfig, EncoderError, EncoderParams,
};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("train split is empty")]
    EmptyData,
    #[error("loss became non-finite at step {step}")]
    NonFiniteLoss { step: u64 },
    #[error("invalid train config: {0}")]
    BadConfig(String),
    #[error("encoder error: {0}")]
    Encoder(#[from] EncoderError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Pipeline(String),
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct TrainConfig {
    pub steps: u64,
    pub warmup_steps: u64,
    pub max_lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub segment_seconds: f64,
    pub seed: u64,
    /// Global-norm clip threshold; absent means abort on instability
    /// instead of clipping.
    pub grad_clip: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 2000,
            warmup_steps: 100,
            max_lr: 1e-4,
            weight_decay: 1e-2,
            batch_size: 8,
            segment_seconds: 4.0,
            seed: 0,
            grad_clip: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.warmup_steps >= self.steps {
            return Err(TrainError::BadConfig("warmup_steps must be < steps".into()));
        }
        if self.max_lr <= 0.0 {
            return Err(TrainError::BadConfig("max_lr must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(TrainError::BadConfig("batch_size must be positive".into()));
        }
        Ok(())
    }
}

/// Linear warm-up to `max_lr`, then cosine annealing to zero at `steps`.
pub fn lr_at(step: u64, cfg: &TrainConfig) -> f64 {
    if step <= cfg.warmup_steps {
        return cfg.max_lr * step as f64 / cfg.warmup_steps as f64;
    }
    let progress = (step - cfg.warmup_steps) as f64 / (cfg.steps - cfg.warmup_steps) as f64;
    cfg.max_lr * 0.5 * (1.0 + (std::f64::consts::PI * progress.min(1.0)).cos())
}

/// One metrics-log line.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct StepRecord {
    pub step: u64,
    pub lr: f64,
    pub loss: f64,
    pub acc: Vec<f64>,
}

/// Everything needed to continue training bit-exactly.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub step: u64,
    pub params: EncoderParams,
    pub opt: AdamW,
    pub root_seed: u64,
}

impl TrainState {
    pub fn new(params: EncoderParams, root_seed: u64) -> Self {
        let n = params.param_count();
        TrainState { step: 0, params, opt: AdamW::new(n), root_seed }
    }
}

/// Advance `state` from `state.step` to `stop_after`, pulling batches from
/// `next_batch` and emitting one [`StepRecord`] per step.
///
/// Dropout for step `k` is seeded by `derive(root_seed, "train/step=k")`;
/// the batch provider is expected to follow the same per-step rule.
pub fn run_training(
    state: &mut TrainState,
    enc_cfg: &EncoderConfig,
    train_cfg: &TrainConfig,
    stop_after: u64,
    mut next_batch: impl FnMut(u64) -> Result<Vec<BatchItem>, TrainError>,
    mut on_record: impl FnMut(&StepRecord) -> Result<(), TrainError>,
) -> Result<Vec<StepRecord>, TrainError> {
    train_cfg.validate()?;
    let mut records = Vec::new();
    let mut flat = state.params.flat();
    while state.step < stop_after {
        let step = state.step + 1;
        let batch = next_batch(step)?;
        let seed = crate::rng::derive_seed(state.root_seed, &format!("train/step={step}"));
        let report = loss_and_gradient(&batch, &state.params, enc_cfg, seed).map_err(|e| {
            match e {
                EncoderError::NonFiniteLoss => TrainError::NonFiniteLoss { step },
                other => TrainError::Encoder(other),
            }
        })?;
        let mut grad = report.grad;
        if let Some(threshold) = train_cfg.grad_clip {
            clip_global_norm(&mut grad, threshold);
        }
        let lr = lr_at(step, train_cfg);
        state.opt.step(&mut flat, &grad, lr, train_cfg.weight_decay);
        state.params.overwrite_from_flat(&flat)?;
        state.step = step;
        let record =
            StepRecord { step, lr, loss: report.loss, acc: report.per_head_accuracy };
        on_record(&record)?;
        records.push(record);
    }
    Ok(records)
}

fn clip_global_norm(grad: &mut [f64], threshold: f64) {
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > threshold {
        let scale = threshold / norm;
        for g in grad {
            *g *= scale;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::FeatureMatrix;
    use crate::masking::make_mask;
    use crate::quantizers::TargetTensor;
    use crate::rate::Rate;
    use rand::Rng;

    fn cfg() -> TrainConfig {
        TrainConfig { steps: 1000, warmup_steps: 100, max_lr: 1e-3, ..TrainConfig::default() }
    }

    #[test]
    fn warmup_boundary_values() {
        let c = cfg();
        assert_eq!(lr_at(0, &c), 0.0);
        assert_eq!(lr_at(100, &c), c.max_lr);
        assert!(lr_at(1000, &c).abs() < 1e-18);
    }

    #[test]
    fn schedule_is_continuous_and_non_negative() {
        let c = cfg();
        for step in 0..=1000 {
            let lr = lr_at(step, &c);
            assert!(lr >= 0.0);
            if step > 0 {
                let prev = lr_at(step - 1, &c);
                assert!((lr - prev).abs() < c.max_lr * 0.02, "jump at {step}");
            }
        }
    }

    fn tiny_setup() -> (EncoderConfig, Vec<BatchItem>) {
        let enc = EncoderConfig {
            layers: 1,
            model_dims: 16,
            heads: 2,
            conv_kernel: 5,
            ffn_expansion: 2.0,
            dropout: 0.0,
            input_dims: 4,
            vocab_sizes: vec![13],
            ..EncoderConfig::default()
        };
        let mut rng = crate::rng::stream_raw(5);
        let frames = 12;
        let batch: Vec<BatchItem> = (0..2)
            .map(|i| {
                let data: Vec<f64> =
                    (0..frames * 4).map(|_| rng.gen_range(-1.0..1.0)).collect();
                BatchItem {
                    features: FeatureMatrix::new("mel", Rate::from_hz(10), 4, data),
                    targets: TargetTensor {
                        frames,
                        heads: 1,
                        labels: (0..frames).map(|t| ((t * 3 + i) % 13) as u32).collect(),
                        head_vocab_sizes: vec![13],
                    },
                    mask: make_mask(frames, Rate::from_hz(10), 0.4, 0.6, 70 + i as u64).unwrap(),
                }
            })
            .collect();
        (enc, batch)
    }

    #[test]
    fn single_step_descends_on_the_same_batch() {
        let (enc, batch) = tiny_setup();
        let params = EncoderParams::init(&enc, 3).unwrap();
        let train = TrainConfig {
            steps: 10,
            warmup_steps: 1,
            max_lr: 1e-6,
            weight_decay: 0.0,
            ..TrainConfig::default()
        };
        let before = loss_and_gradient(&batch, &params, &enc, 1).unwrap().loss;
        let mut state = TrainState::new(params, 0);
        // Hold lr at max by stepping past warm-up manually.
        let mut flat = state.params.flat();
        let report = loss_and_gradient(&batch, &state.params, &enc, 1).unwrap();
        state.opt.step(&mut flat, &report.grad, 1e-6, 0.0);
        state.params.overwrite_from_flat(&flat).unwrap();
        let after = loss_and_gradient(&batch, &state.params, &enc, 1).unwrap().loss;
        assert!(after < before, "{after} !< {before}");
        drop(train);
    }

    #[test]
    fn two_runs_with_the_same_seed_are_bit_identical() {
        let (enc, batch) = tiny_setup();
        let train = TrainConfig {
            steps: 8,
            warmup_steps: 2,
            max_lr: 1e-3,
            ..TrainConfig::default()
        };
        let run = || {
            let params = EncoderParams::init(&enc, 3).unwrap();
            let mut state = TrainState::new(params, 7);
            let records = run_training(
                &mut state,
                &enc,
                &train,
                8,
                |_| Ok(batch.clone()),
                |_| Ok(()),
            )
            .unwrap();
            (records, state.params.flat())
        };
        let (ra, pa) = run();
        let (rb, pb) = run();
        assert_eq!(ra, rb);
        assert_eq!(
            pa.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            pb.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn resume_matches_uninterrupted_run_bit_exactly() {
        let (enc, batch) = tiny_setup();
        let train = TrainConfig {
            steps: 20,
            warmup_steps: 2,
            max_lr: 1e-3,
            ..TrainConfig::default()
        };
        let straight = {
            let params = EncoderParams::init(&enc, 3).unwrap();
            let mut state = TrainState::new(params, 7);
            run_training(&mut state, &enc, &train, 12, |_| Ok(batch.clone()), |_| Ok(()))
                .unwrap();
            state
        };
        let resumed = {
            let params = EncoderParams::init(&enc, 3).unwrap();
            let mut state = TrainState::new(params, 7);
            run_training(&mut state, &enc, &train, 6, |_| Ok(batch.clone()), |_| Ok(()))
                .unwrap();
            // Round-trip optimizer state through the checkpoint wire shape.
            let snapshot = (state.step, state.params.flat(), state.opt.clone());
            let mut restored = TrainState::new(
                EncoderParams::from_flat(&enc, &snapshot.1).unwrap(),
                7,
            );
            restored.step = snapshot.0;
            restored.opt = snapshot.2;
            run_training(&mut restored, &enc, &train, 12, |_| Ok(batch.clone()), |_| Ok(()))
                .unwrap();
            restored
        };
        assert_eq!(
            straight.params.flat().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            resumed.params.flat().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
        assert_eq!(straight.opt, resumed.opt);
    }

    #[test]
    fn records_are_monotone_in_step() {
        let (enc, batch) = tiny_setup();
        let train = TrainConfig { steps: 6, warmup_steps: 1, ..TrainConfig::default() };
        let params = EncoderParams::init(&enc, 3).unwrap();
        let mut state = TrainState::new(params, 7);
        let records =
            run_training(&mut state, &enc, &train, 5, |_| Ok(batch.clone()), |_| Ok(()))
                .unwrap();
        assert_eq!(records.len(), 5);
        assert!(records.windows(2).all(|w| w[1].step == w[0].step + 1));
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let bad = TrainConfig { steps: 10, warmup_steps: 10, ..TrainConfig::default() };
        assert!(bad.validate().is_err());
        let bad = TrainConfig { max_lr: 0.0, ..TrainConfig::default() };
        assert!(bad.validate().is_err());
    }
}
