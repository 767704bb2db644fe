//! Audio ingestion, dataset manifests, and the binary feature cache.
//!
//! Ingestion is WAV-only (16-bit PCM or 32-bit float); compressed formats
//! are converted offline. Everything here is pure or file-scoped, so
//! concurrent use on distinct files is safe.

mod cache;
mod manifest;
mod wav;

pub use cache::{
    find_record, read_feature_cache, read_feature_cache_with_meta, write_feature_cache,
    write_feature_cache_with_meta, FeatureCacheRecord, Payload,
};
pub use manifest::{load_manifest, DatasetManifest, ManifestEntry, Split};
pub use wav::write_wav;

use std::path::Path;
use thiserror::Error;

/// Sample rates accepted by [`load_audio`].
pub const SUPPORTED_RATES: [u32; 5] = [8000, 16000, 22050, 24000, 44100];

#[derive(Debug, Error)]
pub enum AudioIoError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("unsupported wav encoding: {0}")]
    UnsupportedEncoding(String),
    #[error("zero-length audio in {0}")]
    ZeroLength(String),
    #[error("unsupported target sample rate {0} Hz")]
    UnsupportedRate(u32),
    #[error("feature cache magic mismatch (expected MARQFC01)")]
    BadMagic,
    #[error("truncated feature cache: {0}")]
    Truncated(String),
    #[error("feature cache field overflow: {0}")]
    Overflow(String),
    #[error("empty record list")]
    EmptyRecords,
    #[error("record {clip_id}/{feature_name} has zero dims")]
    ZeroDims { clip_id: String, feature_name: String },
    #[error("missing cache record {clip_id}/{feature_name}")]
    MissingRecord { clip_id: String, feature_name: String },
    #[error("duplicate clip_id {0} in manifest")]
    DuplicateClipId(String),
    #[error("unknown split token {token:?} on row {row}")]
    UnknownSplit { token: String, row: usize },
    #[error("malformed manifest row {row}: {reason}")]
    MalformedRow { row: usize, reason: String },
    #[error("manifest header must be clip_id,audio_path,split,labels (got {0:?})")]
    BadHeader(String),
}

/// Mono audio at a known sample rate. Samples are finite and bounded by
/// 1 + 1e-6 after ingestion; multichannel input is mean-downmixed.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioBuffer {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl AudioBuffer {
    pub fn duration_seconds(&self) -> f64 {
        self.samples.len() as f64 / f64::from(self.sample_rate)
    }

    /// Always 1: ingestion downmixes to mono.
    pub fn channel_count(&self) -> usize {
        1
    }
}

/// Load a WAV file as mono audio at `target_sample_rate`.
///
/// Multichannel input is mean-downmixed before resampling. Resampling uses
/// a Hann-windowed sinc kernel (24 input samples per side) with passband
/// 0 – 0.45 × min(source, target) Hz; equal rates pass through untouched.
/// If the decoded/resampled peak exceeds 1, the buffer is peak-normalized.
pub fn load_audio(path: &Path, target_sample_rate: u32) -> Result<AudioBuffer, AudioIoError> {
    if !SUPPORTED_RATES.contains(&target_sample_rate) {
        return Err(AudioIoError::UnsupportedRate(target_sample_rate));
    }
    let (samples, source_rate) = wav::read_wav_mono(path)?;
    if samples.is_empty() {
        return Err(AudioIoError::ZeroLength(path.display().to_string()));
    }
    let samples = if source_rate == target_sample_rate {
        samples
    } else {
        resample(&samples, source_rate, target_sample_rate)
    };
    Ok(normalize_peak(samples, target_sample_rate))
}

fn normalize_peak(mut samples: Vec<f64>, sample_rate: u32) -> AudioBuffer {
    let peak = samples.iter().fold(0.0f64, |m, &s| m.max(s.abs()));
    if peak > 1.0 {
        for s in &mut samples {
            *s /= peak;
        }
    }
    AudioBuffer { samples, sample_rate }
}

/// Windowed-sinc resampler. Output length is `round(n * target / source)`.
fn resample(input: &[f64], source_rate: u32, target_rate: u32) -> Vec<f64> {
    const HALF_WIDTH: isize = 24;
    let ratio = f64::from(target_rate) / f64::from(source_rate);
    // Anti-alias cutoff, in cycles per *input* sample.
    let cutoff = 0.45 * ratio.min(1.0);
    let out_len = ((input.len() as f64) * ratio).round() as usize;
    let n = input.len() as isize;
    let mut out = Vec::with_capacity(out_len);
    for i in 0..out_len {
        let center = i as f64 / ratio;
        let lo = (center.ceil() as isize - HALF_WIDTH).max(0);
        let hi = (center.floor() as isize + HALF_WIDTH).min(n - 1);
        let mut acc = 0.0;
        let mut gain = 0.0;
        for j in lo..=hi {
            let x = j as f64 - center;
            let w = 0.5 * (1.0 + (std::f64::consts::PI * x / HALF_WIDTH as f64).cos());
            let k = 2.0 * cutoff * sinc(2.0 * cutoff * x) * w;
            acc += input[j as usize] * k;
            gain += k;
        }
        // Per-sample gain normalization flattens passband ripple at edges.
        out.push(if gain.abs() > 1e-12 { acc / gain } else { 0.0 });
    }
    out
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        let px = std::f64::consts::PI * x;
        px.sin() / px
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rustfft::{num_complex::Complex, FftPlanner};
    use std::f64::consts::TAU;

    fn tone(freq: f64, rate: u32, seconds: f64) -> Vec<f64> {
        let n = (seconds * f64::from(rate)).round() as usize;
        (0..n)
            .map(|i| (TAU * freq * i as f64 / f64::from(rate)).sin() * 0.9)
            .collect()
    }

    /// Independent FFT-based peak-bin measurement.
    fn dominant_bin(samples: &[f64]) -> usize {
        let mut buf: Vec<Complex<f64>> =
            samples.iter().map(|&s| Complex::new(s, 0.0)).collect();
        FftPlanner::new().plan_fft_forward(buf.len()).process(&mut buf);
        let half = buf.len() / 2;
        (1..half)
            .max_by(|&a, &b| buf[a].norm().partial_cmp(&buf[b].norm()).unwrap())
            .unwrap()
    }

    #[test]
    fn silence_round_trips_through_wav() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("silence.wav");
        write_wav(&path, &[vec![0.0; 16000]], 16000).unwrap();
        let audio = load_audio(&path, 16000).unwrap();
        assert_eq!(audio.samples.len(), 16000);
        assert!(audio.samples.iter().all(|&s| s == 0.0));
    }

    #[test]
    fn opposite_channels_downmix_to_zero() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("anti.wav");
        let x = tone(440.0, 16000, 0.5);
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        write_wav(&path, &[x, neg], 16000).unwrap();
        let audio = load_audio(&path, 16000).unwrap();
        assert!(audio.samples.iter().all(|&s| s.abs() < 1e-4));
    }

    #[test]
    fn resampled_tone_keeps_its_frequency() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tone.wav");
        write_wav(&path, &[tone(440.0, 44100, 1.0)], 44100).unwrap();
        let audio = load_audio(&path, 16000).unwrap();
        let bin = dominant_bin(&audio.samples);
        let expected = (440.0 * audio.samples.len() as f64 / 16000.0).round() as usize;
        assert!(
            (bin as isize - expected as isize).abs() <= 1,
            "bin {bin} vs expected {expected}"
        );
    }

    #[test]
    fn tone_sweep_survives_both_directions() {
        let dir = tempfile::tempdir().unwrap();
        for (src, dst) in [(44100u32, 16000u32), (16000, 44100), (22050, 16000)] {
            let nyquist = f64::from(src.min(dst)) / 2.0;
            for freq in [220.0, 440.0, 1000.0, 2500.0, nyquist * 0.8] {
                let path = dir.path().join(format!("sweep_{src}_{dst}_{freq}.wav"));
                write_wav(&path, &[tone(freq, src, 0.8)], src).unwrap();
                let audio = load_audio(&path, dst).unwrap();
                let bin = dominant_bin(&audio.samples);
                let expected =
                    (freq * audio.samples.len() as f64 / f64::from(dst)).round() as usize;
                assert!(
                    (bin as isize - expected as isize).abs() <= 1,
                    "{freq} Hz {src}->{dst}: bin {bin} vs {expected}"
                );
            }
        }
    }

    #[test]
    fn downmix_is_linear_in_amplitude() {
        let dir = tempfile::tempdir().unwrap();
        let x = tone(300.0, 16000, 0.25);
        let half: Vec<f64> = x.iter().map(|v| v * 0.5).collect();
        let p1 = dir.path().join("full.wav");
        let p2 = dir.path().join("half.wav");
        write_wav(&p1, &[x], 16000).unwrap();
        write_wav(&p2, &[half], 16000).unwrap();
        let a = load_audio(&p1, 16000).unwrap();
        let b = load_audio(&p2, 16000).unwrap();
        for (s1, s2) in a.samples.iter().zip(&b.samples) {
            // 16-bit container quantizes to ~3e-5 steps.
            assert!((s1 * 0.5 - s2).abs() < 1e-4);
        }
    }

    #[test]
    fn rejects_unsupported_target_rate() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.wav");
        write_wav(&path, &[vec![0.1; 100]], 16000).unwrap();
        assert!(matches!(
            load_audio(&path, 11025),
            Err(AudioIoError::UnsupportedRate(11025))
        ));
    }

    #[test]
    fn rejects_missing_file() {
        assert!(matches!(
            load_audio(Path::new("/nonexistent/x.wav"), 16000),
            Err(AudioIoError::Io { .. })
        ));
    }
}
