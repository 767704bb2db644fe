//! Log-mel spectrogram on the Slaney mel scale.

use super::{stft, FeatureError, FeatureMatrix, LOG_FLOOR};
use crate::audio_io::AudioBuffer;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct MelConfig {
    pub n_fft: usize,
    pub hop: usize,
    pub n_mels: usize,
    pub fmin: f64,
    /// 0.0 means "use Nyquist".
    pub fmax: f64,
    pub log_floor: f64,
}

impl Default for MelConfig {
    fn default() -> Self {
        // hop == n_fft at 16 kHz gives the 15.625 Hz base frame rate.
        MelConfig { n_fft: 1024, hop: 1024, n_mels: 64, fmin: 0.0, fmax: 0.0, log_floor: LOG_FLOOR }
    }
}

impl MelConfig {
    fn fmax_for(&self, sample_rate: u32) -> f64 {
        if self.fmax > 0.0 { self.fmax } else { f64::from(sample_rate) / 2.0 }
    }

    fn validate(&self, sample_rate: u32) -> Result<(), FeatureError> {
        let fmax = self.fmax_for(sample_rate);
        if !(self.fmin < fmax && fmax <= f64::from(sample_rate) / 2.0) {
            return Err(FeatureError::BadConfig(format!(
                "need fmin < fmax <= nyquist, got fmin={} fmax={fmax}",
                self.fmin
            )));
        }
        if self.hop > self.n_fft {
            return Err(FeatureError::BadConfig("hop must be <= n_fft".into()));
        }
        if self.n_mels == 0 {
            return Err(FeatureError::BadConfig("n_mels must be positive".into()));
        }
        if self.log_floor <= 0.0 {
            return Err(FeatureError::BadConfig("log_floor must be positive".into()));
        }
        Ok(())
    }
}

/// Slaney mel scale: linear below 1 kHz, logarithmic above.
pub fn hz_to_mel(f: f64) -> f64 {
    if f < 1000.0 {
        3.0 * f / 200.0
    } else {
        15.0 + 27.0 * (f / 1000.0).ln() / 6.4f64.ln()
    }
}

pub fn mel_to_hz(m: f64) -> f64 {
    if m < 15.0 {
        200.0 * m / 3.0
    } else {
        1000.0 * ((m - 15.0) / 27.0 * 6.4f64.ln()).exp()
    }
}

/// Triangular filterbank rows (`n_mels x bins`), L1-normalized, plus the
/// filter center frequencies in Hz.
pub fn mel_filterbank(
    cfg: &MelConfig,
    sample_rate: u32,
) -> (Vec<Vec<f64>>, Vec<f64>) {
    let bins = cfg.n_fft / 2 + 1;
    let fmax = cfg.fmax_for(sample_rate);
    let mel_lo = hz_to_mel(cfg.fmin);
    let mel_hi = hz_to_mel(fmax);
    let edges: Vec<f64> = (0..cfg.n_mels + 2)
        .map(|i| mel_to_hz(mel_lo + (mel_hi - mel_lo) * i as f64 / (cfg.n_mels + 1) as f64))
        .collect();
    let bin_hz = f64::from(sample_rate) / cfg.n_fft as f64;
    let mut rows = Vec::with_capacity(cfg.n_mels);
    for m in 0..cfg.n_mels {
        let (f0, f1, f2) = (edges[m], edges[m + 1], edges[m + 2]);
        let mut row = vec![0.0; bins];
        for (k, slot) in row.iter_mut().enumerate() {
            let f = k as f64 * bin_hz;
            let w = if f <= f1 {
                (f - f0) / (f1 - f0)
            } else {
                (f2 - f) / (f2 - f1)
            };
            *slot = w.max(0.0);
        }
        let sum: f64 = row.iter().sum();
        if sum > 0.0 {
            for v in &mut row {
                *v /= sum;
            }
        }
        rows.push(row);
    }
    let centers = edges[1..=cfg.n_mels].to_vec();
    (rows, centers)
}

/// `log(filterbank . |STFT|^2 + log_floor)`, natural log.
pub fn mel_spectrogram(
    audio: &AudioBuffer,
    cfg: &MelConfig,
) -> Result<FeatureMatrix, FeatureError> {
    cfg.validate(audio.sample_rate)?;
    let spec = stft(audio, cfg.n_fft, cfg.hop)?;
    let (filters, _) = mel_filterbank(cfg, audio.sample_rate);
    let mut data = Vec::with_capacity(spec.frames * cfg.n_mels);
    let mut power = vec![0.0; spec.bins];
    for t in 0..spec.frames {
        for (k, c) in spec.row(t).iter().enumerate() {
            power[k] = c.norm_sqr();
        }
        for row in &filters {
            let e: f64 = row.iter().zip(&power).map(|(w, p)| w * p).sum();
            data.push((e + cfg.log_floor).ln());
        }
    }
    Ok(FeatureMatrix::new("mel", spec.frame_rate, cfg.n_mels, data))
}
