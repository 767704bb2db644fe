//! Chunked span masks and input corruption for masked-token pre-training.
//!
//! The frame axis is tiled with non-overlapping chunks of
//! `round(chunk_seconds * frame_rate)` frames (the last chunk may be short)
//! and a uniformly random subset of chunks is masked without replacement.
//! This pins the masked fraction within one chunk of the target.

use crate::features::FeatureMatrix;
use crate::rate::Rate;
use crate::rng::stream_raw;
use rand::seq::index::sample;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MaskError {
    #[error("target fraction must lie in (0, 1), got {0}")]
    BadFraction(f64),
    #[error("mask plan covers {plan} frames but features have {feat}")]
    FrameMismatch { plan: usize, feat: usize },
    #[error("need at least one frame")]
    NoFrames,
}

/// A seeded mask over one clip's frame axis.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskPlan {
    pub frames: usize,
    pub chunk_frames: usize,
    pub mask: Vec<bool>,
    pub target_fraction: f64,
    pub rng_seed: u64,
}

impl MaskPlan {
    pub fn masked_frames(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn masked_fraction(&self) -> f64 {
        self.masked_frames() as f64 / self.frames as f64
    }
}

/// How masked frames are filled by [`apply_mask`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskFill {
    /// Replace masked rows with i.i.d. N(0, std^2) draws.
    GaussianNoise,
    /// Replace masked rows with distinct rows sampled from the original
    /// matrix (without replacement).
    WaveformShuffle,
}

/// Build a chunked span mask, deterministic in `seed`.
///
/// `chunk_frames = max(1, round(chunk_seconds * frame_rate))`; the number
/// of masked chunks is `round(target_fraction * num_chunks)`.
pub fn make_mask(
    frames: usize,
    frame_rate: Rate,
    chunk_seconds: f64,
    target_fraction: f64,
    seed: u64,
) -> Result<MaskPlan, MaskError> {
    if frames == 0 {
        return Err(MaskError::NoFrames);
    }
    if !(target_fraction > 0.0 && target_fraction < 1.0) {
        return Err(MaskError::BadFraction(target_fraction));
    }
    let chunk_frames = ((chunk_seconds * frame_rate.to_f64()).round() as usize).max(1);
    let num_chunks = frames.div_ceil(chunk_frames);
    let masked_chunks = (target_fraction * num_chunks as f64).round() as usize;
    let mut rng = stream_raw(seed);
    let chosen = sample(&mut rng, num_chunks, masked_chunks.min(num_chunks));
    let mut mask = vec![false; frames];
    for chunk in chosen.iter() {
        let start = chunk * chunk_frames;
        let end = (start + chunk_frames).min(frames);
        for m in &mut mask[start..end] {
            *m = true;
        }
    }
    Ok(MaskPlan { frames, chunk_frames, mask, target_fraction, rng_seed: seed })
}

/// Corrupt masked rows; unmasked rows are bit-identical to the input.
pub fn apply_mask(
    feat: &FeatureMatrix,
    plan: &MaskPlan,
    strategy: MaskFill,
    noise_std: f64,
    seed: u64,
) -> Result<FeatureMatrix, MaskError> {
    if feat.frames() != plan.frames {
        return Err(MaskError::FrameMismatch { plan: plan.frames, feat: feat.frames() });
    }
    let dims = feat.dims;
    let mut data = feat.data.clone();
    let mut rng = stream_raw(seed);
    match strategy {
        MaskFill::GaussianNoise => {
            let normal = Normal::new(0.0, noise_std).expect("std must be finite");
            for (t, &masked) in plan.mask.iter().enumerate() {
                if masked {
                    for v in &mut data[t * dims..(t + 1) * dims] {
                        *v = normal.sample(&mut rng);
                    }
                }
            }
        }
        MaskFill::WaveformShuffle => {
            let masked: Vec<usize> =
                (0..plan.frames).filter(|&t| plan.mask[t]).collect();
            // Source rows drawn from the whole matrix without replacement.
            let sources = sample(&mut rng, plan.frames, masked.len().min(plan.frames));
            for (&t, src) in masked.iter().zip(sources.iter()) {
                let row: Vec<f64> = feat.row(src).to_vec();
                data[t * dims..(t + 1) * dims].copy_from_slice(&row);
            }
        }
    }
    Ok(FeatureMatrix::new(&feat.feature_name, feat.frame_rate, dims, data))
}
