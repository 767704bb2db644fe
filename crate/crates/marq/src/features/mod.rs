//! Deterministic DSP front-ends.
//!
//! Every extractor here is a pure function of its input: identical input
//! yields bit-identical output. Frame counts per extractor:
//!
//! * `stft` / `mel_spectrogram` / `cqt`: centered frames with reflect
//!   padding, frame `t` centered at sample `t * hop`, so
//!   `frames = floor(n / hop) + 1`.
//! * `waveform_patches`: no padding, `frames = floor((n - patch_len) / hop) + 1`.
//!
//! Frame-rate metadata is exact rational `sample_rate / hop`.

mod cqt;
mod mel;
mod stft;

pub use cqt::{cqt, CqtConfig};
pub use mel::{mel_filterbank, mel_spectrogram, MelConfig};
pub use stft::{stft, Stft};

use crate::audio_io::{find_record, AudioBuffer, FeatureCacheRecord, Payload};
use crate::rate::Rate;
use thiserror::Error;

/// Natural-log compression floor shared by the spectral extractors.
pub const LOG_FLOOR: f64 = 1e-5;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("audio too short: need at least {need} samples, got {got}")]
    TooShort { need: usize, got: usize },
    #[error("empty input")]
    EmptyInput,
    #[error("invalid config: {0}")]
    BadConfig(String),
    #[error("missing cache record {clip_id}/{feature_name}")]
    MissingRecord { clip_id: String, feature_name: String },
    #[error("record {clip_id}/{feature_name} holds tokens, not features")]
    NotFloatPayload { clip_id: String, feature_name: String },
}

/// A `frames x dims` real matrix with frame-rate metadata — the currency
/// between DSP, quantizers, masking, and the encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub feature_name: String,
    pub frame_rate: Rate,
    pub dims: usize,
    /// Row-major, time-major: `data[t * dims + d]`.
    pub data: Vec<f64>,
}

impl FeatureMatrix {
    pub fn new(feature_name: &str, frame_rate: Rate, dims: usize, data: Vec<f64>) -> Self {
        debug_assert!(dims > 0 && data.len() % dims == 0);
        FeatureMatrix { feature_name: feature_name.to_string(), frame_rate, dims, data }
    }

    pub fn frames(&self) -> usize {
        if self.dims == 0 { 0 } else { self.data.len() / self.dims }
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.data[t * self.dims..(t + 1) * self.dims]
    }

    /// Convert to a cache record, casting values to f32.
    pub fn to_cache_record(&self, clip_id: &str) -> FeatureCacheRecord {
        FeatureCacheRecord {
            clip_id: clip_id.to_string(),
            feature_name: self.feature_name.clone(),
            frame_rate: self.frame_rate,
            frames: self.frames() as u32,
            dims: self.dims as u32,
            payload: Payload::F32(self.data.iter().map(|&v| v as f32).collect()),
        }
    }

    pub fn from_cache_record(rec: &FeatureCacheRecord) -> Result<Self, FeatureError> {
        let values = match &rec.payload {
            Payload::F32(v) => v.iter().map(|&x| f64::from(x)).collect(),
            Payload::I64(_) => {
                return Err(FeatureError::NotFloatPayload {
                    clip_id: rec.clip_id.clone(),
                    feature_name: rec.feature_name.clone(),
                })
            }
        };
        Ok(FeatureMatrix {
            feature_name: rec.feature_name.clone(),
            frame_rate: rec.frame_rate,
            dims: rec.dims as usize,
            data: values,
        })
    }
}

/// Slice the raw waveform into (possibly overlapping) frames.
///
/// Row `t` is `samples[t*hop .. t*hop + patch_len]`; no padding, so
/// `frames = floor((n - patch_len) / hop) + 1`.
pub fn waveform_patches(
    audio: &AudioBuffer,
    patch_len: usize,
    hop: usize,
) -> Result<FeatureMatrix, FeatureError> {
    if hop == 0 || patch_len < hop {
        return Err(FeatureError::BadConfig(format!(
            "need patch_len >= hop >= 1, got patch_len={patch_len} hop={hop}"
        )));
    }
    let n = audio.samples.len();
    if n < patch_len {
        return Err(FeatureError::TooShort { need: patch_len, got: n });
    }
    let frames = (n - patch_len) / hop + 1;
    let mut data = Vec::with_capacity(frames * patch_len);
    for t in 0..frames {
        data.extend_from_slice(&audio.samples[t * hop..t * hop + patch_len]);
    }
    Ok(FeatureMatrix::new(
        "audio",
        Rate::per_hop(audio.sample_rate, hop),
        patch_len,
        data,
    ))
}

/// Load one clip's externally computed features from cache records.
pub fn load_external_features(
    records: &[FeatureCacheRecord],
    clip_id: &str,
    feature_name: &str,
) -> Result<FeatureMatrix, FeatureError> {
    let rec = find_record(records, clip_id, feature_name).map_err(|_| {
        FeatureError::MissingRecord {
            clip_id: clip_id.to_string(),
            feature_name: feature_name.to_string(),
        }
    })?;
    FeatureMatrix::from_cache_record(rec)
}

/// Nearest-frame resampling onto a new frame grid.
///
/// Output frame `t` copies input frame `round(t * input_rate / target_rate)`
/// (half rounded up, clamped to the last frame);
/// `frames_out = round(frames_in * target_rate / input_rate)`.
pub fn resample_frames(
    feat: &FeatureMatrix,
    target_rate: Rate,
) -> Result<FeatureMatrix, FeatureError> {
    let frames_in = feat.frames();
    if frames_in == 0 {
        return Err(FeatureError::EmptyInput);
    }
    if feat.frame_rate == target_rate {
        return Ok(feat.clone());
    }
    let frames_out = target_rate.map_index(frames_in as u64, feat.frame_rate) as usize;
    let mut data = Vec::with_capacity(frames_out * feat.dims);
    for t in 0..frames_out {
        let src = (feat.frame_rate.map_index(t as u64, target_rate) as usize).min(frames_in - 1);
        data.extend_from_slice(feat.row(src));
    }
    Ok(FeatureMatrix::new(&feat.feature_name, target_rate, feat.dims, data))
}

/// Per-dimension standardization over the clip: `(x - mean) / (std + 1e-8)`.
///
/// This is the encoder's input normalization; masking fills standardized
/// frames with unit-variance noise, so the two stages agree on scale.
pub fn standardize(feat: &FeatureMatrix) -> FeatureMatrix {
    let frames = feat.frames();
    let dims = feat.dims;
    if frames == 0 {
        return feat.clone();
    }
    let mut mean = vec![0.0; dims];
    for t in 0..frames {
        for (d, &v) in feat.row(t).iter().enumerate() {
            mean[d] += v;
        }
    }
    for m in &mut mean {
        *m /= frames as f64;
    }
    let mut var = vec![0.0; dims];
    for t in 0..frames {
        for (d, &v) in feat.row(t).iter().enumerate() {
            let c = v - mean[d];
            var[d] += c * c;
        }
    }
    let mut data = Vec::with_capacity(frames * dims);
    let std: Vec<f64> = var.iter().map(|&v| (v / frames as f64).sqrt() + 1e-8).collect();
    for t in 0..frames {
        for (d, &v) in feat.row(t).iter().enumerate() {
            data.push((v - mean[d]) / std[d]);
        }
    }
    FeatureMatrix::new(&feat.feature_name, feat.frame_rate, dims, data)
}

/// Reflect-padded sample access used by the centered extractors.
pub(crate) fn sample_reflect(samples: &[f64], index: isize) -> f64 {
    let n = samples.len() as isize;
    debug_assert!(n > 1);
    let mut i = index;
    // Fold until in range; cheap because pad widths are < n for valid input.
    loop {
        if i < 0 {
            i = -i;
        } else if i >= n {
            i = 2 * (n - 1) - i;
        } else {
            return samples[i as usize];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn buffer(samples: Vec<f64>) -> AudioBuffer {
        AudioBuffer { samples, sample_rate: 16000 }
    }

    #[test]
    fn non_overlapping_patches_reshape_the_signal() {
        let samples: Vec<f64> = (0..32).map(f64::from).collect();
        let feat = waveform_patches(&buffer(samples.clone()), 4, 4).unwrap();
        assert_eq!(feat.frames(), 8);
        assert_eq!(feat.data, samples);
    }

    #[test]
    fn ramp_patch_row_is_a_window() {
        let samples: Vec<f64> = (0..20).map(f64::from).collect();
        let feat = waveform_patches(&buffer(samples), 4, 2).unwrap();
        assert_eq!(feat.row(1), &[2.0, 3.0, 4.0, 5.0]);
    }

    #[test]
    fn resample_identity() {
        let feat = FeatureMatrix::new("mel", Rate::from_hz(10), 2, vec![1.0; 20]);
        let out = resample_frames(&feat, Rate::from_hz(10)).unwrap();
        assert_eq!(out, feat);
    }

    #[test]
    fn resample_downsamples_by_index_formula() {
        let data: Vec<f64> = (0..10).map(f64::from).collect();
        let feat = FeatureMatrix::new("mel", Rate::from_hz(10), 1, data);
        let out = resample_frames(&feat, Rate::from_hz(5)).unwrap();
        assert_eq!(out.frames(), 5);
        assert_eq!(out.data, vec![0.0, 2.0, 4.0, 6.0, 8.0]);
    }

    #[test]
    fn resample_upsamples_by_index_formula() {
        let data: Vec<f64> = (0..5).map(f64::from).collect();
        let feat = FeatureMatrix::new("mel", Rate::from_hz(10), 1, data);
        let out = resample_frames(&feat, Rate::from_hz(20)).unwrap();
        assert_eq!(out.frames(), 10);
        // Oracle: out[t] = in[round(t/2)], half rounded up.
        let expect: Vec<f64> = (0..10u64)
            .map(|t| f64::from(u32::try_from((t + 1) / 2).unwrap()).min(4.0))
            .collect();
        assert_eq!(out.data, expect);
    }

    #[test]
    fn standardize_produces_zero_mean_unit_std() {
        let data = vec![1.0, 10.0, 2.0, 20.0, 3.0, 30.0, 4.0, 40.0];
        let feat = FeatureMatrix::new("mel", Rate::from_hz(10), 2, data);
        let out = standardize(&feat);
        for d in 0..2 {
            let mean: f64 = (0..4).map(|t| out.row(t)[d]).sum::<f64>() / 4.0;
            let var: f64 = (0..4).map(|t| (out.row(t)[d] - mean).powi(2)).sum::<f64>() / 4.0;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn external_features_round_trip() {
        let feat = FeatureMatrix::new("enc", Rate::from_hz(75), 3, vec![0.5; 12]);
        let rec = feat.to_cache_record("clip");
        let records = vec![rec];
        let back = load_external_features(&records, "clip", "enc").unwrap();
        assert_eq!(back, feat);
        assert!(matches!(
            load_external_features(&records, "other", "enc"),
            Err(FeatureError::MissingRecord { .. })
        ));
    }

    proptest! {
        #[test]
        fn patch_frame_count_matches_counting_oracle(
            n in 8usize..400,
            hop in 1usize..16,
            extra in 0usize..16,
        ) {
            let patch_len = hop + extra;
            prop_assume!(n >= patch_len);
            let samples = vec![0.25; n];
            let feat = waveform_patches(&buffer(samples), patch_len, hop).unwrap();
            // Counting oracle: enumerate valid start offsets.
            let expected = (0..).take_while(|t| t * hop + patch_len <= n).count();
            prop_assert_eq!(feat.frames(), expected);
            prop_assert_eq!(feat.frames(), (n - patch_len) / hop + 1);
        }

        #[test]
        fn resample_count_matches_formula(frames in 1usize..200, a in 1u64..40, b in 1u64..40) {
            let feat = FeatureMatrix::new("x", Rate::new(a, 1), 1, vec![0.0; frames]);
            let out = resample_frames(&feat, Rate::new(b, 1)).unwrap();
            let expected = ((frames as u128 * b as u128 * 2 + a as u128) / (2 * a as u128)) as usize;
            prop_assert_eq!(out.frames(), expected);
        }
    }
}
