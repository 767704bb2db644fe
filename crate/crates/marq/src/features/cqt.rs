//! Constant-Q transform via direct per-bin windowed DFT kernels.
//!
//! Bin `k` has center frequency `fmin * 2^(k / bins_per_octave)` and a
//! Hann-windowed complex kernel of length `Q * sample_rate / f_k` with
//! `Q = 1 / (2^(1/bins_per_octave) - 1)`. The direct method is
//! O(n_bins * frames * kernel_len) — correctness over speed at desk scale.

use super::{sample_reflect, FeatureError, FeatureMatrix, LOG_FLOOR};
use crate::audio_io::AudioBuffer;
use crate::rate::Rate;
use rustfft::num_complex::Complex;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct CqtConfig {
    pub fmin: f64,
    pub bins_per_octave: usize,
    pub n_bins: usize,
    pub hop: usize,
    pub log_floor: f64,
}

impl Default for CqtConfig {
    fn default() -> Self {
        // C1 up 7 octaves, semitone resolution, on the mel frame grid.
        CqtConfig { fmin: 32.70, bins_per_octave: 12, n_bins: 84, hop: 1024, log_floor: LOG_FLOOR }
    }
}

impl CqtConfig {
    pub fn bin_frequency(&self, k: usize) -> f64 {
        self.fmin * 2f64.powf(k as f64 / self.bins_per_octave as f64)
    }

    fn validate(&self, sample_rate: u32) -> Result<(), FeatureError> {
        if self.fmin <= 0.0 || self.bins_per_octave == 0 || self.n_bins == 0 || self.hop == 0 {
            return Err(FeatureError::BadConfig("all CQT parameters must be positive".into()));
        }
        let top = self.bin_frequency(self.n_bins - 1);
        if top > f64::from(sample_rate) / 2.0 {
            return Err(FeatureError::BadConfig(format!(
                "top CQT bin at {top:.1} Hz exceeds Nyquist"
            )));
        }
        Ok(())
    }
}

struct Kernel {
    /// Windowed complex exponential, L1-normalized by the window sum.
    taps: Vec<Complex<f64>>,
}

fn build_kernels(cfg: &CqtConfig, sample_rate: u32) -> Vec<Kernel> {
    let q = 1.0 / (2f64.powf(1.0 / cfg.bins_per_octave as f64) - 1.0);
    (0..cfg.n_bins)
        .map(|k| {
            let freq = cfg.bin_frequency(k);
            let len = ((q * f64::from(sample_rate) / freq).ceil() as usize).max(4);
            let mut taps = Vec::with_capacity(len);
            let mut window_sum = 0.0;
            for i in 0..len {
                let w = 0.5 * (1.0 - (std::f64::consts::TAU * i as f64 / len as f64).cos());
                window_sum += w;
                let phase =
                    -std::f64::consts::TAU * freq * i as f64 / f64::from(sample_rate);
                taps.push(Complex::new(w * phase.cos(), w * phase.sin()));
            }
            for t in &mut taps {
                *t /= window_sum;
            }
            Kernel { taps }
        })
        .collect()
}

/// Log-magnitude CQT: `frames = floor(n / hop) + 1` centered frames with
/// reflect padding, `data = ln(|X| + log_floor)`.
pub fn cqt(audio: &AudioBuffer, cfg: &CqtConfig) -> Result<FeatureMatrix, FeatureError> {
    cfg.validate(audio.sample_rate)?;
    let kernels = build_kernels(cfg, audio.sample_rate);
    let longest = kernels.iter().map(|k| k.taps.len()).max().unwrap();
    let n = audio.samples.len();
    if n < longest {
        return Err(FeatureError::TooShort { need: longest, got: n });
    }
    let frames = n / cfg.hop + 1;
    let mut data = Vec::with_capacity(frames * cfg.n_bins);
    for t in 0..frames {
        let center = (t * cfg.hop) as isize;
        for kernel in &kernels {
            let half = (kernel.taps.len() / 2) as isize;
            let mut acc = Complex::new(0.0, 0.0);
            for (i, tap) in kernel.taps.iter().enumerate() {
                let s = sample_reflect(&audio.samples, center - half + i as isize);
                acc += tap * s;
            }
            data.push((acc.norm() + cfg.log_floor).ln());
        }
    }
    Ok(FeatureMatrix::new(
        "cqt",
        Rate::per_hop(audio.sample_rate, cfg.hop),
        cfg.n_bins,
        data,
    ))
}
