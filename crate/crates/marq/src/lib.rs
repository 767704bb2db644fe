//! Masked-token-prediction pipeline for audio representation learning.
//!
//! The crate is organized as a chain of small, independently testable stages:
//!
//! 1. [`audio_io`] — WAV ingestion, dataset manifests, and the `MARQFC01`
//!    binary feature cache that decouples feature extraction from training.
//! 2. [`features`] — deterministic DSP front-ends (mel spectrogram, CQT, raw
//!    waveform patches) plus ingestion of externally precomputed features.
//! 3. [`quantizers`] — frozen random-projection codebooks and finite scalar
//!    quantization turning feature frames into discrete target labels.
//! 4. [`masking`] — chunked span masks and input corruption.
//! 5. [`encoder`] — a Conformer-style encoder with rotary attention and
//!    DeepNorm residual scaling, built on the [`autodiff`] tape.
//! 6. [`pretrain`] — seeded training loop: AdamW, cosine schedule with
//!    warm-up, JSONL metrics, and `MARQCK01` checkpoints.
//! 7. [`probes`] — MLP probes over frozen embeddings with mAP / accuracy /
//!    MSE / event-F1 metrics.
//!
//! [`config`] ties the stages together behind a TOML pipeline description
//! with named presets, and [`cli`] exposes them as the `marq` binary.
//!
//! Every random decision in the crate flows from a single root seed through
//! the derivation rule in [`rng`], so full pipeline runs are bit-reproducible.

pub mod audio_io;
pub mod autodiff;
pub mod cli;
pub mod config;
pub mod encoder;
pub mod features;
pub mod masking;
pub mod pipeline;
pub mod pretrain;
pub mod probes;
pub mod quantizers;
pub mod rate;
pub mod rng;
pub mod synth;

pub use rate::Rate;
