//! Frozen random-projection codebooks and nearest-codeword tokenization.

use super::QuantizerError;
use crate::features::FeatureMatrix;
use crate::rng::stream_raw;
use rand::Rng;
use rand_distr::StandardNormal;

/// A seeded random projection plus a codeword table. Both tensors are
/// frozen: regenerating from `(seed, shapes)` reproduces them bit-exactly,
/// so persistence only ever stores the scalars.
///
/// Draw order: projection entries row-major (standard normal), then
/// codeword entries row-major (uniform in (-1, 1)), then codeword rows are
/// L2-normalized.
#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    pub seed: u64,
    pub input_dims: usize,
    pub proj_dims: usize,
    pub num_codewords: usize,
    /// `input_dims x proj_dims`, row-major.
    pub projection: Vec<f64>,
    /// `num_codewords x proj_dims`, row-major, unit-norm rows.
    pub codewords: Vec<f64>,
}

/// Build the frozen tensors for one head.
pub fn build_codebook(
    seed: u64,
    input_dims: usize,
    proj_dims: usize,
    num_codewords: usize,
) -> Result<Codebook, QuantizerError> {
    if input_dims == 0 {
        return Err(QuantizerError::ZeroCount("input_dims"));
    }
    if proj_dims == 0 {
        return Err(QuantizerError::ZeroCount("proj_dims"));
    }
    if num_codewords == 0 {
        return Err(QuantizerError::ZeroCount("num_codewords"));
    }
    let mut rng = stream_raw(seed);
    let projection: Vec<f64> =
        (0..input_dims * proj_dims).map(|_| rng.sample(StandardNormal)).collect();
    let mut codewords: Vec<f64> =
        (0..num_codewords * proj_dims).map(|_| rng.gen_range(-1.0..1.0)).collect();
    for row in codewords.chunks_exact_mut(proj_dims) {
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            for v in row {
                *v /= norm;
            }
        }
    }
    Ok(Codebook { seed, input_dims, proj_dims, num_codewords, projection, codewords })
}

impl Codebook {
    pub fn codeword(&self, index: usize) -> &[f64] {
        &self.codewords[index * self.proj_dims..(index + 1) * self.proj_dims]
    }

    /// Project one frame: `z = projection^T . x_hat`, where `x_hat` is the
    /// L2-normalized frame when `normalize` is set (zero frames stay zero).
    pub fn project_frame(&self, frame: &[f64], normalize: bool) -> Vec<f64> {
        let mut scale = 1.0;
        if normalize {
            let norm = frame.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 0.0 {
                scale = 1.0 / norm;
            }
        }
        let mut z = vec![0.0; self.proj_dims];
        for (i, &x) in frame.iter().enumerate() {
            let xv = x * scale;
            let row = &self.projection[i * self.proj_dims..(i + 1) * self.proj_dims];
            for (j, &p) in row.iter().enumerate() {
                z[j] += p * xv;
            }
        }
        z
    }
}

fn normalize_in_place(z: &mut [f64]) {
    let norm = z.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        for v in z {
            *v /= norm;
        }
    }
}

/// Nearest-codeword labels for every frame.
///
/// `label = argmin_c || z_hat - codeword_c ||_2` with `z_hat` the
/// L2-normalized projection; ties break to the lowest codeword index.
pub fn tokenize(
    feat: &FeatureMatrix,
    cb: &Codebook,
    normalize_input: bool,
) -> Result<Vec<u32>, QuantizerError> {
    if feat.dims != cb.input_dims {
        return Err(QuantizerError::DimMismatch { expected: cb.input_dims, got: feat.dims });
    }
    let mut labels = Vec::with_capacity(feat.frames());
    for t in 0..feat.frames() {
        let mut z = cb.project_frame(feat.row(t), normalize_input);
        normalize_in_place(&mut z);
        // With unit-norm codewords, argmin distance == argmax dot product;
        // strict `>` keeps the lowest index on exact ties.
        let mut best = 0usize;
        let mut best_dot = f64::NEG_INFINITY;
        for c in 0..cb.num_codewords {
            let dot: f64 = cb.codeword(c).iter().zip(&z).map(|(a, b)| a * b).sum();
            if dot > best_dot {
                best_dot = dot;
                best = c;
            }
        }
        labels.push(best as u32);
    }
    Ok(labels)
}
