//! Finite scalar quantization.
//!
//! Each projection channel is squashed to `floor(L/2) * tanh(x)` and
//! rounded half away from zero, giving `2*floor(L/2) + 1` attainable
//! integer levels per channel. The joint index packs channel codes in
//! little-endian base `2*floor(L/2) + 1`.

use super::{Codebook, QuantizerError};
use crate::features::FeatureMatrix;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct FsqConfig {
    pub channels: usize,
    /// Formula parameter L in `floor(L/2) * tanh(x)`.
    pub levels: usize,
}

impl Default for FsqConfig {
    fn default() -> Self {
        FsqConfig { channels: 5, levels: 6 }
    }
}

impl FsqConfig {
    /// `floor(L / 2)`: the per-channel code bound.
    pub fn half_levels(&self) -> i64 {
        (self.levels / 2) as i64
    }

    /// Attainable integer values per channel: `2 * floor(L/2) + 1`.
    pub fn values_per_channel(&self) -> usize {
        2 * (self.levels / 2) + 1
    }

    /// Total distinct codes: `values_per_channel ^ channels`.
    pub fn vocab_size(&self) -> usize {
        self.values_per_channel().pow(self.channels as u32)
    }
}

/// Quantize one projected vector: per-channel codes in
/// `[-floor(L/2), +floor(L/2)]` and the packed lattice index.
pub fn fsq_quantize(z: &[f64], cfg: &FsqConfig) -> (Vec<i64>, u64) {
    assert_eq!(z.len(), cfg.channels, "channel count mismatch");
    let half = cfg.half_levels() as f64;
    // f64::round is half-away-from-zero, matching the contract.
    let code: Vec<i64> = z.iter().map(|&x| (half * x.tanh()).round() as i64).collect();
    let base = cfg.values_per_channel() as u64;
    let mut index = 0u64;
    let mut scale = 1u64;
    for &c in &code {
        index += (c + cfg.half_levels()) as u64 * scale;
        scale *= base;
    }
    (code, index)
}

/// Inverse of the index packing: recover per-channel codes.
pub fn fsq_decode(index: u64, cfg: &FsqConfig) -> Vec<i64> {
    let base = cfg.values_per_channel() as u64;
    let mut rest = index;
    (0..cfg.channels)
        .map(|_| {
            let digit = (rest % base) as i64;
            rest /= base;
            digit - cfg.half_levels()
        })
        .collect()
}

/// Per-frame FSQ labels from a projection-bearing codebook
/// (`proj_dims == channels`; the codeword table is unused).
pub fn fsq_tokenize(
    feat: &FeatureMatrix,
    projection: &Codebook,
    cfg: &FsqConfig,
    normalize_input: bool,
) -> Result<Vec<u32>, QuantizerError> {
    if feat.dims != projection.input_dims {
        return Err(QuantizerError::DimMismatch {
            expected: projection.input_dims,
            got: feat.dims,
        });
    }
    if projection.proj_dims != cfg.channels {
        return Err(QuantizerError::DimMismatch {
            expected: cfg.channels,
            got: projection.proj_dims,
        });
    }
    let mut labels = Vec::with_capacity(feat.frames());
    for t in 0..feat.frames() {
        let z = projection.project_frame(feat.row(t), normalize_input);
        let (_, index) = fsq_quantize(&z, cfg);
        labels.push(index as u32);
    }
    Ok(labels)
}
