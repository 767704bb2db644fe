//! Short-time Fourier transform with centered, reflect-padded frames.

use super::{sample_reflect, FeatureError};
use crate::audio_io::AudioBuffer;
use crate::rate::Rate;
use rustfft::{num_complex::Complex, FftPlanner};

/// One-sided complex spectrogram: `frames x (n_fft/2 + 1)`.
#[derive(Debug, Clone)]
pub struct Stft {
    pub frames: usize,
    pub bins: usize,
    pub n_fft: usize,
    pub frame_rate: Rate,
    /// Row-major: `data[t * bins + k]`.
    pub data: Vec<Complex<f64>>,
}

impl Stft {
    pub fn row(&self, t: usize) -> &[Complex<f64>] {
        &self.data[t * self.bins..(t + 1) * self.bins]
    }
}

/// Periodic Hann window; its DFT is exactly zero beyond bins {-1, 0, 1},
/// which keeps DC leakage confined to the lowest two one-sided bins.
pub fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 * (1.0 - (std::f64::consts::TAU * i as f64 / n as f64).cos()))
        .collect()
}

/// Centered STFT: frame `t` covers samples `[t*hop - n_fft/2, t*hop + n_fft/2)`
/// with reflect padding at the edges, so `frames = floor(n / hop) + 1`.
///
/// `n_fft` must be a power of two and `hop >= 1`. A full-scale tone at an
/// exact bin frequency peaks at `n_fft * 0.5 / 2` magnitude (Hann gain 0.5).
pub fn stft(audio: &AudioBuffer, n_fft: usize, hop: usize) -> Result<Stft, FeatureError> {
    if !n_fft.is_power_of_two() || n_fft < 2 {
        return Err(FeatureError::BadConfig(format!("n_fft {n_fft} is not a power of two")));
    }
    if hop == 0 {
        return Err(FeatureError::BadConfig("hop must be >= 1".into()));
    }
    let n = audio.samples.len();
    if n < hop {
        return Err(FeatureError::TooShort { need: hop, got: n });
    }
    // Reflect padding needs pad width < signal length.
    if n <= n_fft / 2 {
        return Err(FeatureError::TooShort { need: n_fft / 2 + 1, got: n });
    }

    let window = hann(n_fft);
    let frames = n / hop + 1;
    let bins = n_fft / 2 + 1;
    let fft = FftPlanner::new().plan_fft_forward(n_fft);
    let mut buf = vec![Complex::new(0.0, 0.0); n_fft];
    let mut data = Vec::with_capacity(frames * bins);
    let half = (n_fft / 2) as isize;
    for t in 0..frames {
        let center = (t * hop) as isize;
        for (i, slot) in buf.iter_mut().enumerate() {
            let s = sample_reflect(&audio.samples, center - half + i as isize);
            *slot = Complex::new(s * window[i], 0.0);
        }
        fft.process(&mut buf);
        data.extend_from_slice(&buf[..bins]);
    }
    Ok(Stft { frames, bins, n_fft, frame_rate: Rate::per_hop(audio.sample_rate, hop), data })
}
