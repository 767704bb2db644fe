//! Feature-frame tokenization: random-projection codebooks, the
//! multi-codebook / multi-feature extensions, and finite scalar quantization.
//!
//! Codebooks are frozen at construction and fully determined by their seed,
//! so they serialize as `(seed, shapes)` only. Tokenization is pure; banks
//! and codebooks are safe to share across threads.

mod codebook;
mod fsq;

pub use codebook::{build_codebook, tokenize, Codebook};
pub use fsq::{fsq_decode, fsq_quantize, fsq_tokenize, FsqConfig};

use crate::audio_io::{FeatureCacheRecord, Payload};
use crate::features::{resample_frames, FeatureMatrix};
use crate::rate::Rate;
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum QuantizerError {
    #[error("dimension mismatch: feature has {got} dims, head expects {expected}")]
    DimMismatch { expected: usize, got: usize },
    #[error("{0} must be positive")]
    ZeroCount(&'static str),
    #[error("missing feature {0} for quantizer head")]
    MissingFeature(String),
    #[error("frame counts diverge by {spread} frames after resampling (max allowed 1)")]
    FrameDivergence { spread: usize },
    #[error("head seeds must be pairwise distinct (seed {0} repeats)")]
    RepeatedSeed(u64),
    #[error("empty label tensor")]
    EmptyLabels,
    #[error("feature error: {0}")]
    Feature(#[from] crate::features::FeatureError),
}

/// One target head: a named input feature plus its tokenizer.
#[derive(Debug, Clone)]
pub struct QuantizerHead {
    pub feature_name: String,
    pub tokenizer: TokenizerKind,
}

#[derive(Debug, Clone)]
pub enum TokenizerKind {
    /// BEST-RQ style: frozen projection + nearest codeword lookup.
    RandomCodebook(Codebook),
    /// FSQ: frozen projection + per-channel bounded scalar rounding.
    Fsq { projection: Codebook, cfg: FsqConfig },
}

impl QuantizerHead {
    pub fn vocab_size(&self) -> usize {
        match &self.tokenizer {
            TokenizerKind::RandomCodebook(cb) => cb.num_codewords,
            TokenizerKind::Fsq { cfg, .. } => cfg.vocab_size(),
        }
    }

    pub fn seed(&self) -> u64 {
        match &self.tokenizer {
            TokenizerKind::RandomCodebook(cb) => cb.seed,
            TokenizerKind::Fsq { projection, .. } => projection.seed,
        }
    }

    fn tokenize(&self, feat: &FeatureMatrix, normalize: bool) -> Result<Vec<u32>, QuantizerError> {
        match &self.tokenizer {
            TokenizerKind::RandomCodebook(cb) => tokenize(feat, cb, normalize),
            TokenizerKind::Fsq { projection, cfg } => fsq_tokenize(feat, projection, cfg, normalize),
        }
    }
}

/// A set of heads sharing one frame grid.
#[derive(Debug, Clone)]
pub struct QuantizerBank {
    pub heads: Vec<QuantizerHead>,
    pub frame_rate: Rate,
    pub normalize_input: bool,
}

impl QuantizerBank {
    pub fn new(
        heads: Vec<QuantizerHead>,
        frame_rate: Rate,
        normalize_input: bool,
    ) -> Result<Self, QuantizerError> {
        if heads.is_empty() {
            return Err(QuantizerError::ZeroCount("head count"));
        }
        let mut seeds: Vec<u64> = heads.iter().map(|h| h.seed()).collect();
        seeds.sort_unstable();
        for pair in seeds.windows(2) {
            if pair[0] == pair[1] {
                return Err(QuantizerError::RepeatedSeed(pair[0]));
            }
        }
        Ok(QuantizerBank { heads, frame_rate, normalize_input })
    }

    pub fn vocab_sizes(&self) -> Vec<usize> {
        self.heads.iter().map(QuantizerHead::vocab_size).collect()
    }

    /// Names of the features the bank consumes, deduplicated.
    pub fn feature_names(&self) -> Vec<String> {
        let mut names: Vec<String> = Vec::new();
        for head in &self.heads {
            if !names.contains(&head.feature_name) {
                names.push(head.feature_name.clone());
            }
        }
        names
    }
}

/// Per-frame integer labels, one column per head.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetTensor {
    pub frames: usize,
    pub heads: usize,
    /// Row-major `labels[t * heads + h]`.
    pub labels: Vec<u32>,
    pub head_vocab_sizes: Vec<usize>,
}

impl TargetTensor {
    pub fn label(&self, frame: usize, head: usize) -> u32 {
        self.labels[frame * self.heads + head]
    }

    pub fn head_column(&self, head: usize) -> Vec<u32> {
        (0..self.frames).map(|t| self.label(t, head)).collect()
    }

    /// Export as a `MARQFC01` integer record (`dims` = heads).
    pub fn to_cache_record(&self, clip_id: &str, frame_rate: Rate) -> FeatureCacheRecord {
        FeatureCacheRecord {
            clip_id: clip_id.to_string(),
            feature_name: "tokens".to_string(),
            frame_rate,
            frames: self.frames as u32,
            dims: self.heads as u32,
            payload: Payload::I64(self.labels.iter().map(|&l| i64::from(l)).collect()),
        }
    }
}

/// Tokenize every head's feature onto the bank's common frame grid.
///
/// Features are resampled to `bank.frame_rate` (nearest-frame mapping);
/// resulting frame counts may differ by at most one and are truncated to
/// the shortest. Column order follows the declared head order.
pub fn tokenize_multi(
    feats: &BTreeMap<String, FeatureMatrix>,
    bank: &QuantizerBank,
) -> Result<TargetTensor, QuantizerError> {
    let mut resampled: BTreeMap<&str, FeatureMatrix> = BTreeMap::new();
    for head in &bank.heads {
        if resampled.contains_key(head.feature_name.as_str()) {
            continue;
        }
        let feat = feats
            .get(&head.feature_name)
            .ok_or_else(|| QuantizerError::MissingFeature(head.feature_name.clone()))?;
        resampled.insert(head.feature_name.as_str(), resample_frames(feat, bank.frame_rate)?);
    }
    let min_frames = resampled.values().map(FeatureMatrix::frames).min().unwrap();
    let max_frames = resampled.values().map(FeatureMatrix::frames).max().unwrap();
    if max_frames - min_frames > 1 {
        return Err(QuantizerError::FrameDivergence { spread: max_frames - min_frames });
    }
    if min_frames == 0 {
        return Err(QuantizerError::EmptyLabels);
    }

    let mut columns = Vec::with_capacity(bank.heads.len());
    for head in &bank.heads {
        let feat = &resampled[head.feature_name.as_str()];
        let mut labels = head.tokenize(feat, bank.normalize_input)?;
        labels.truncate(min_frames);
        columns.push(labels);
    }
    let heads = columns.len();
    let mut labels = Vec::with_capacity(min_frames * heads);
    for t in 0..min_frames {
        for column in &columns {
            labels.push(column[t]);
        }
    }
    Ok(TargetTensor {
        frames: min_frames,
        heads,
        labels,
        head_vocab_sizes: bank.vocab_sizes(),
    })
}

/// Usage and entropy statistics for one head's labels.
#[derive(Debug, Clone, PartialEq)]
pub struct CodebookStats {
    /// Distinct labels observed / vocab size.
    pub usage_fraction: f64,
    /// exp(entropy) of the empirical label distribution, in [1, vocab].
    pub perplexity: f64,
    pub histogram: Vec<u64>,
}

/// Per-head usage fraction, perplexity, and label histogram.
pub fn codebook_stats(labels: &TargetTensor) -> Result<Vec<CodebookStats>, QuantizerError> {
    if labels.frames == 0 {
        return Err(QuantizerError::EmptyLabels);
    }
    let mut out = Vec::with_capacity(labels.heads);
    for h in 0..labels.heads {
        let vocab = labels.head_vocab_sizes[h];
        let mut histogram = vec![0u64; vocab];
        for t in 0..labels.frames {
            histogram[labels.label(t, h) as usize] += 1;
        }
        let used = histogram.iter().filter(|&&c| c > 0).count();
        let total = labels.frames as f64;
        let entropy: f64 = histogram
            .iter()
            .filter(|&&c| c > 0)
            .map(|&c| {
                let p = c as f64 / total;
                -p * p.ln()
            })
            .sum();
        out.push(CodebookStats {
            usage_fraction: used as f64 / vocab as f64,
            perplexity: entropy.exp(),
            histogram,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rate::Rate;
    use rand::Rng;

    fn random_feature(name: &str, frames: usize, dims: usize, seed: u64) -> FeatureMatrix {
        let mut rng = crate::rng::stream_raw(seed);
        let data: Vec<f64> = (0..frames * dims).map(|_| rng.gen_range(-1.0..1.0)).collect();
        FeatureMatrix::new(name, Rate::from_hz(10), dims, data)
    }

    fn rq_head(feature: &str, seed: u64, input_dims: usize, vocab: usize) -> QuantizerHead {
        QuantizerHead {
            feature_name: feature.to_string(),
            tokenizer: TokenizerKind::RandomCodebook(build_codebook(seed, input_dims, 16, vocab).unwrap()),
        }
    }

    #[test]
    fn single_head_bank_matches_plain_tokenize() {
        let feat = random_feature("mel", 40, 8, 3);
        let cb = build_codebook(9, 8, 4, 64).unwrap();
        let bank = QuantizerBank::new(
            vec![QuantizerHead {
                feature_name: "mel".into(),
                tokenizer: TokenizerKind::RandomCodebook(cb.clone()),
            }],
            Rate::from_hz(10),
            true,
        )
        .unwrap();
        let mut feats = BTreeMap::new();
        feats.insert("mel".to_string(), feat.clone());
        let tensor = tokenize_multi(&feats, &bank).unwrap();
        assert_eq!(tensor.head_column(0), tokenize(&feat, &cb, true).unwrap());
    }

    #[test]
    fn four_codebooks_on_one_feature_disagree() {
        let feat = random_feature("mel", 200, 8, 5);
        let heads: Vec<QuantizerHead> = (0..4).map(|i| rq_head("mel", 100 + i, 8, 512)).collect();
        let bank = QuantizerBank::new(heads, Rate::from_hz(10), true).unwrap();
        let mut feats = BTreeMap::new();
        feats.insert("mel".to_string(), feat);
        let tensor = tokenize_multi(&feats, &bank).unwrap();
        assert_eq!(tensor.heads, 4);
        for a in 0..4 {
            for b in a + 1..4 {
                let same = (0..tensor.frames)
                    .filter(|&t| tensor.label(t, a) == tensor.label(t, b))
                    .count();
                // Independent projections should agree only by accident.
                assert!(same < tensor.frames / 4, "heads {a},{b} agree on {same} frames");
            }
        }
    }

    #[test]
    fn repeated_seeds_are_rejected() {
        let heads = vec![rq_head("mel", 1, 8, 16), rq_head("cqt", 1, 8, 16)];
        assert!(matches!(
            QuantizerBank::new(heads, Rate::from_hz(10), true),
            Err(QuantizerError::RepeatedSeed(1))
        ));
    }

    #[test]
    fn missing_feature_is_reported() {
        let bank =
            QuantizerBank::new(vec![rq_head("cqt", 2, 8, 16)], Rate::from_hz(10), true).unwrap();
        let mut feats = BTreeMap::new();
        feats.insert("mel".to_string(), random_feature("mel", 10, 8, 1));
        assert!(matches!(
            tokenize_multi(&feats, &bank),
            Err(QuantizerError::MissingFeature(name)) if name == "cqt"
        ));
    }

    #[test]
    fn divergent_frame_counts_are_rejected() {
        let bank = QuantizerBank::new(
            vec![rq_head("a", 1, 4, 16), rq_head("b", 2, 4, 16)],
            Rate::from_hz(10),
            true,
        )
        .unwrap();
        let mut feats = BTreeMap::new();
        feats.insert("a".to_string(), random_feature("a", 10, 4, 1));
        feats.insert("b".to_string(), random_feature("b", 20, 4, 2));
        assert!(matches!(
            tokenize_multi(&feats, &bank),
            Err(QuantizerError::FrameDivergence { .. })
        ));
    }

    #[test]
    fn constant_labels_give_minimal_usage_and_unit_perplexity() {
        let tensor = TargetTensor {
            frames: 50,
            heads: 1,
            labels: vec![7; 50],
            head_vocab_sizes: vec![64],
        };
        let stats = codebook_stats(&tensor).unwrap();
        assert_eq!(stats[0].usage_fraction, 1.0 / 64.0);
        assert!((stats[0].perplexity - 1.0).abs() < 1e-12);
    }

    #[test]
    fn uniform_cover_gives_full_usage_and_vocab_perplexity() {
        let vocab = 32u32;
        let labels: Vec<u32> = (0..vocab).collect();
        let tensor = TargetTensor {
            frames: vocab as usize,
            heads: 1,
            labels,
            head_vocab_sizes: vec![vocab as usize],
        };
        let stats = codebook_stats(&tensor).unwrap();
        assert_eq!(stats[0].usage_fraction, 1.0);
        assert!((stats[0].perplexity - f64::from(vocab)).abs() < 1e-9);
    }

    #[test]
    fn usage_never_exceeds_frames_over_vocab() {
        for seed in 0..20u64 {
            let feat = random_feature("mel", 30, 6, seed);
            let cb = build_codebook(seed + 77, 6, 4, 256).unwrap();
            let labels = tokenize(&feat, &cb, true).unwrap();
            let tensor = TargetTensor {
                frames: labels.len(),
                heads: 1,
                labels,
                head_vocab_sizes: vec![256],
            };
            let stats = codebook_stats(&tensor).unwrap();
            let bound = (tensor.frames as f64 / 256.0).min(1.0);
            assert!(stats[0].usage_fraction <= bound + 1e-12);
        }
    }
}
