//! Conformer-style encoder with rotary attention, DeepNorm residual
//! scaling, and per-head linear classifiers.
//!
//! Block structure (post-layer-norm, residuals scaled by `alpha`):
//!
//! ```text
//! x = LN(alpha * x + 0.5 * FFN(x))
//! x = LN(alpha * x + MHSA_rope(x))
//! x = LN(alpha * x + Conv(x))
//! x = LN(alpha * x + 0.5 * FFN(x))
//! ```
//!
//! The conv module is pointwise(d -> 2d) -> GLU -> depthwise(k) -> layer
//! norm -> swish -> pointwise(d -> d); layer norm stands in for batch norm
//! so outputs never depend on batch composition. The front-end is a single
//! linear projection, so the embedding rate equals the feature rate.
//!
//! All math runs in f64 on the [`autodiff`](crate::autodiff) tape; the
//! load-bearing test is the finite-difference gradient check.

mod checkpoint;
mod rope;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, OptState, CHECKPOINT_MAGIC};
pub use rope::rope_rotate;

use crate::autodiff::{CeStats, Graph, Tensor, Var};
use crate::features::FeatureMatrix;
use crate::masking::MaskPlan;
use crate::quantizers::TargetTensor;
use crate::rng;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EncoderError {
    #[error("invalid encoder config: {0}")]
    BadConfig(String),
    #[error("input has {got} dims, encoder expects {expected}")]
    DimMismatch { expected: usize, got: usize },
    #[error("non-finite values in encoder input")]
    NonFiniteInput,
    #[error("loss became non-finite")]
    NonFiniteLoss,
    #[error("layer index {index} out of range (0..={layers})")]
    LayerOutOfRange { index: usize, layers: usize },
    #[error("batch contains no masked frames; loss is degenerate")]
    NoMaskedFrames,
    #[error("flat parameter vector has {got} values, expected {expected}")]
    FlatSizeMismatch { expected: usize, got: usize },
    #[error("targets have {got} frames, features have {expected}")]
    FrameMismatch { expected: usize, got: usize },
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct EncoderConfig {
    pub layers: usize,
    pub model_dims: usize,
    pub heads: usize,
    pub conv_kernel: usize,
    pub ffn_expansion: f64,
    pub dropout: f64,
    pub deepnorm_alpha: f64,
    pub deepnorm_beta: f64,
    /// Feature dims consumed by the input projection; 0 means "resolved
    /// later by the pipeline".
    pub input_dims: usize,
    /// One classifier head per quantizer head.
    pub vocab_sizes: Vec<usize>,
    pub ln_eps: f64,
    pub rope_base: f64,
    pub init_std: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            layers: 2,
            model_dims: 64,
            heads: 4,
            conv_kernel: 15,
            ffn_expansion: 4.0,
            dropout: 0.2,
            deepnorm_alpha: 2.632,
            deepnorm_beta: 0.022,
            input_dims: 0,
            vocab_sizes: vec![8192],
            ln_eps: 1e-5,
            rope_base: 10000.0,
            init_std: 0.02,
        }
    }
}

impl EncoderConfig {
    pub fn ffn_dims(&self) -> usize {
        (self.model_dims as f64 * self.ffn_expansion).round() as usize
    }

    pub fn head_dims(&self) -> usize {
        self.model_dims / self.heads
    }

    pub fn validate(&self) -> Result<(), EncoderError> {
        if self.layers == 0 || self.model_dims == 0 || self.heads == 0 {
            return Err(EncoderError::BadConfig("layers/dims/heads must be positive".into()));
        }
        if self.model_dims % self.heads != 0 {
            return Err(EncoderError::BadConfig(format!(
                "model_dims {} not divisible by heads {}",
                self.model_dims, self.heads
            )));
        }
        if self.head_dims() % 2 != 0 {
            return Err(EncoderError::BadConfig("rope needs even head dims".into()));
        }
        if self.conv_kernel % 2 == 0 {
            return Err(EncoderError::BadConfig("conv_kernel must be odd".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(EncoderError::BadConfig("dropout must lie in [0, 1)".into()));
        }
        if self.input_dims == 0 {
            return Err(EncoderError::BadConfig("input_dims is unresolved".into()));
        }
        if self.vocab_sizes.is_empty() || self.vocab_sizes.iter().any(|&v| v < 2) {
            return Err(EncoderError::BadConfig("need at least one head with vocab >= 2".into()));
        }
        Ok(())
    }
}

/// Tensor kinds drive initialization: residual-branch weights get the
/// DeepNorm beta gain, everything else is plain.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum TensorKind {
    Weight,
    ResidualWeight,
    Bias,
    Gain,
}

fn tensor_specs(cfg: &EncoderConfig) -> Vec<(String, usize, usize, TensorKind)> {
    use TensorKind::*;
    let d = cfg.model_dims;
    let f = cfg.ffn_dims();
    let mut specs = Vec::new();
    specs.push(("input_proj.weight".to_string(), cfg.input_dims, d, Weight));
    specs.push(("input_proj.bias".to_string(), 1, d, Bias));
    for l in 0..cfg.layers {
        let p = |name: &str| format!("layer{l}.{name}");
        for ffn in ["ffn1", "ffn2"] {
            specs.push((p(&format!("{ffn}.w1")), d, f, ResidualWeight));
            specs.push((p(&format!("{ffn}.b1")), 1, f, Bias));
            specs.push((p(&format!("{ffn}.w2")), f, d, ResidualWeight));
            specs.push((p(&format!("{ffn}.b2")), 1, d, Bias));
        }
        for w in ["wq", "wk", "wv", "wo"] {
            specs.push((p(&format!("attn.{w}")), d, d, ResidualWeight));
        }
        for b in ["bq", "bk", "bv", "bo"] {
            specs.push((p(&format!("attn.{b}")), 1, d, Bias));
        }
        specs.push((p("conv.pw1.weight"), d, 2 * d, ResidualWeight));
        specs.push((p("conv.pw1.bias"), 1, 2 * d, Bias));
        specs.push((p("conv.dw.weight"), d, cfg.conv_kernel, ResidualWeight));
        specs.push((p("conv.dw.bias"), 1, d, Bias));
        specs.push((p("conv.norm.gamma"), 1, d, Gain));
        specs.push((p("conv.norm.beta"), 1, d, Bias));
        specs.push((p("conv.pw2.weight"), d, d, ResidualWeight));
        specs.push((p("conv.pw2.bias"), 1, d, Bias));
        for ln in ["ln1", "ln2", "ln3", "ln4"] {
            specs.push((p(&format!("{ln}.gamma")), 1, d, Gain));
            specs.push((p(&format!("{ln}.beta")), 1, d, Bias));
        }
    }
    for (h, &vocab) in cfg.vocab_sizes.iter().enumerate() {
        specs.push((format!("head{h}.weight"), d, vocab, Weight));
        specs.push((format!("head{h}.bias"), 1, vocab, Bias));
    }
    specs
}

/// All trainable tensors, addressable by name and as one flat vector.
/// Flatten/unflatten round-trips are bit-exact (plain copies in canonical
/// order).
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    tensors: Vec<(String, Tensor)>,
}

impl EncoderParams {
    /// Seeded initialization. Weight draws come from a per-tensor stream
    /// (`init/<name>`), so the same seed with a different beta yields the
    /// same unscaled draws — residual-branch tensors are exactly the draw
    /// times `deepnorm_beta`.
    pub fn init(cfg: &EncoderConfig, seed: u64) -> Result<Self, EncoderError> {
        cfg.validate()?;
        let tensors = tensor_specs(cfg)
            .into_iter()
            .map(|(name, rows, cols, kind)| {
                let tensor = match kind {
                    TensorKind::Gain => {
                        Tensor::from_vec(rows, cols, vec![1.0; rows * cols])
                    }
                    TensorKind::Bias => Tensor::zeros(rows, cols),
                    TensorKind::Weight | TensorKind::ResidualWeight => {
                        let mut stream = rng::stream(seed, &format!("init/{name}"));
                        let gain = if kind == TensorKind::ResidualWeight {
                            cfg.deepnorm_beta
                        } else {
                            1.0
                        };
                        let data = (0..rows * cols)
                            .map(|_| {
                                let draw: f64 = stream.sample(StandardNormal);
                                draw * cfg.init_std * gain
                            })
                            .collect();
                        Tensor::from_vec(rows, cols, data)
                    }
                };
                (name, tensor)
            })
            .collect();
        Ok(EncoderParams { tensors })
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.iter().map(|(n, _)| n.as_str())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.iter_mut().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn param_count(&self) -> usize {
        self.tensors.iter().map(|(_, t)| t.len()).sum()
    }

    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for (_, t) in &self.tensors {
            out.extend_from_slice(&t.data);
        }
        out
    }

    pub fn from_flat(cfg: &EncoderConfig, flat: &[f64]) -> Result<Self, EncoderError> {
        cfg.validate()?;
        let specs = tensor_specs(cfg);
        let expected: usize = specs.iter().map(|(_, r, c, _)| r * c).sum();
        if flat.len() != expected {
            return Err(EncoderError::FlatSizeMismatch { expected, got: flat.len() });
        }
        let mut tensors = Vec::with_capacity(specs.len());
        let mut offset = 0;
        for (name, rows, cols, _) in specs {
            let n = rows * cols;
            tensors.push((name, Tensor::from_vec(rows, cols, flat[offset..offset + n].to_vec())));
            offset += n;
        }
        Ok(EncoderParams { tensors })
    }

    pub fn overwrite_from_flat(&mut self, flat: &[f64]) -> Result<(), EncoderError> {
        let expected = self.param_count();
        if flat.len() != expected {
            return Err(EncoderError::FlatSizeMismatch { expected, got: flat.len() });
        }
        let mut offset = 0;
        for (_, t) in &mut self.tensors {
            let n = t.len();
            t.data.copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }
}

/// Outcome of a forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    /// Final-layer embeddings, `frames x model_dims`.
    pub embeddings: Tensor,
    /// Activations after the input projection (index 0) and after each
    /// block (1..=layers).
    pub layer_embeddings: Vec<Tensor>,
    /// Per-head logits, each `frames x vocab_h`.
    pub logits: Vec<Tensor>,
}

struct ParamVars<'a> {
    graph: &'a Graph,
    vars: Vec<(String, Var)>,
}

impl<'a> ParamVars<'a> {
    fn register(graph: &'a Graph, params: &EncoderParams) -> Self {
        let vars = params
            .tensors
            .iter()
            .map(|(name, tensor)| (name.clone(), graph.leaf(tensor.clone())))
            .collect();
        ParamVars { graph, vars }
    }

    fn var(&self, name: &str) -> Var {
        self.vars
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| *v)
            .unwrap_or_else(|| panic!("unknown parameter {name}"))
    }

    fn linear(&self, x: Var, weight: &str, bias: &str) -> Var {
        let y = self.graph.matmul(x, self.var(weight));
        self.graph.add_bias(y, self.var(bias))
    }
}

struct Mode<'r> {
    dropout: f64,
    rng: Option<&'r mut ChaCha8Rng>,
}

impl Mode<'_> {
    fn drop(&mut self, g: &Graph, x: Var) -> Var {
        match (&mut self.rng, self.dropout) {
            (Some(rng), p) if p > 0.0 => g.dropout(x, p, rng),
            _ => x,
        }
    }
}

fn ffn(g: &Graph, p: &ParamVars, mode: &mut Mode, x: Var, prefix: &str) -> Var {
    let h = p.linear(x, &format!("{prefix}.w1"), &format!("{prefix}.b1"));
    let h = g.swish(h);
    let h = mode.drop(g, h);
    let h = p.linear(h, &format!("{prefix}.w2"), &format!("{prefix}.b2"));
    mode.drop(g, h)
}

fn attention(
    g: &Graph,
    p: &ParamVars,
    mode: &mut Mode,
    x: Var,
    cfg: &EncoderConfig,
    layer: usize,
) -> Var {
    let pre = |w: &str| format!("layer{layer}.attn.{w}");
    let q = p.linear(x, &pre("wq"), &pre("bq"));
    let k = p.linear(x, &pre("wk"), &pre("bk"));
    let v = p.linear(x, &pre("wv"), &pre("bv"));
    let hd = cfg.head_dims();
    let scale = 1.0 / (hd as f64).sqrt();
    let mut heads = Vec::with_capacity(cfg.heads);
    for h in 0..cfg.heads {
        let q_h = g.rope(g.slice_cols(q, h * hd, hd), cfg.rope_base);
        let k_h = g.rope(g.slice_cols(k, h * hd, hd), cfg.rope_base);
        let v_h = g.slice_cols(v, h * hd, hd);
        let scores = g.scale(g.matmul_nt(q_h, k_h), scale);
        let attn = g.softmax_rows(scores);
        heads.push(g.matmul(attn, v_h));
    }
    let merged = g.concat_cols(&heads);
    let out = p.linear(merged, &pre("wo"), &pre("bo"));
    mode.drop(g, out)
}

fn conv_module(
    g: &Graph,
    p: &ParamVars,
    mode: &mut Mode,
    x: Var,
    cfg: &EncoderConfig,
    layer: usize,
) -> Var {
    let pre = |w: &str| format!("layer{layer}.conv.{w}");
    let h = p.linear(x, &pre("pw1.weight"), &pre("pw1.bias"));
    let h = g.glu_cols(h);
    let h = g.depthwise_conv(h, p.var(&pre("dw.weight")), p.var(&pre("dw.bias")));
    let h = g.layer_norm(h, p.var(&pre("norm.gamma")), p.var(&pre("norm.beta")), cfg.ln_eps);
    let h = g.swish(h);
    let h = p.linear(h, &pre("pw2.weight"), &pre("pw2.bias"));
    mode.drop(g, h)
}

fn build_forward(
    g: &Graph,
    p: &ParamVars,
    mode: &mut Mode,
    input: Var,
    cfg: &EncoderConfig,
) -> (Vec<Var>, Vec<Var>) {
    let alpha = cfg.deepnorm_alpha;
    let mut h = p.linear(input, "input_proj.weight", "input_proj.bias");
    let mut layer_outputs = vec![h];
    for l in 0..cfg.layers {
        let pre = |s: &str| format!("layer{l}.{s}");
        let ln = |g: &Graph, x: Var, name: &str| {
            g.layer_norm(
                x,
                p.var(&format!("layer{l}.{name}.gamma")),
                p.var(&format!("layer{l}.{name}.beta")),
                cfg.ln_eps,
            )
        };
        let f1 = ffn(g, p, mode, h, &pre("ffn1"));
        h = ln(g, g.add_scaled(h, alpha, g.scale(f1, 0.5)), "ln1");
        let a = attention(g, p, mode, h, cfg, l);
        h = ln(g, g.add_scaled(h, alpha, a), "ln2");
        let c = conv_module(g, p, mode, h, cfg, l);
        h = ln(g, g.add_scaled(h, alpha, c), "ln3");
        let f2 = ffn(g, p, mode, h, &pre("ffn2"));
        h = ln(g, g.add_scaled(h, alpha, g.scale(f2, 0.5)), "ln4");
        layer_outputs.push(h);
    }
    let logits = (0..cfg.vocab_sizes.len())
        .map(|hd| p.linear(h, &format!("head{hd}.weight"), &format!("head{hd}.bias")))
        .collect();
    (layer_outputs, logits)
}

fn input_tensor(feat: &FeatureMatrix, cfg: &EncoderConfig) -> Result<Tensor, EncoderError> {
    if feat.dims != cfg.input_dims {
        return Err(EncoderError::DimMismatch { expected: cfg.input_dims, got: feat.dims });
    }
    if feat.data.iter().any(|v| !v.is_finite()) {
        return Err(EncoderError::NonFiniteInput);
    }
    Ok(Tensor::from_vec(feat.frames(), feat.dims, feat.data.clone()))
}

/// Run the encoder on one (possibly corrupted) feature matrix.
///
/// Dropout is active only in train mode and is seeded, so identical
/// `(input, params, seed)` gives a bit-identical trace.
pub fn encode(
    feat: &FeatureMatrix,
    params: &EncoderParams,
    cfg: &EncoderConfig,
    train_mode: bool,
    dropout_seed: u64,
) -> Result<ForwardTrace, EncoderError> {
    cfg.validate()?;
    let g = Graph::new();
    let p = ParamVars::register(&g, params);
    let input = g.leaf(input_tensor(feat, cfg)?);
    let mut stream = rng::stream(dropout_seed, "dropout/encode");
    let mut mode = Mode {
        dropout: if train_mode { cfg.dropout } else { 0.0 },
        rng: if train_mode { Some(&mut stream) } else { None },
    };
    let (layer_vars, logit_vars) = build_forward(&g, &p, &mut mode, input, cfg);
    let layer_embeddings: Vec<Tensor> = layer_vars.iter().map(|&v| g.value(v)).collect();
    Ok(ForwardTrace {
        embeddings: layer_embeddings.last().unwrap().clone(),
        layer_embeddings,
        logits: logit_vars.iter().map(|&v| g.value(v)).collect(),
    })
}

/// Deterministic inference-mode activations at `layer_index`
/// (0 = after the input projection, `layers` = final embeddings).
pub fn embeddings_for_probe(
    feat: &FeatureMatrix,
    params: &EncoderParams,
    cfg: &EncoderConfig,
    layer_index: usize,
) -> Result<Tensor, EncoderError> {
    if layer_index > cfg.layers {
        return Err(EncoderError::LayerOutOfRange { index: layer_index, layers: cfg.layers });
    }
    let trace = encode(feat, params, cfg, false, 0)?;
    Ok(trace.layer_embeddings[layer_index].clone())
}

/// One training example: corrupted features plus targets and the mask
/// that selects loss frames.
#[derive(Debug, Clone)]
pub struct BatchItem {
    pub features: FeatureMatrix,
    pub targets: TargetTensor,
    pub mask: MaskPlan,
}

/// Loss, flat gradient, and per-head masked accuracy for one batch.
#[derive(Debug, Clone)]
pub struct LossReport {
    pub loss: f64,
    pub grad: Vec<f64>,
    pub per_head_accuracy: Vec<f64>,
    pub masked_frames: usize,
}

/// Mean over heads of the mean masked-frame cross-entropy, with gradients
/// for every parameter via one reverse sweep.
///
/// Frames are aligned up front: features and targets may differ by one
/// trailing frame (grid rounding), more is an error.
pub fn loss_and_gradient(
    batch: &[BatchItem],
    params: &EncoderParams,
    cfg: &EncoderConfig,
    seed: u64,
) -> Result<LossReport, EncoderError> {
    cfg.validate()?;
    if batch.is_empty() {
        return Err(EncoderError::NoMaskedFrames);
    }
    let num_heads = cfg.vocab_sizes.len();
    let g = Graph::new();
    let p = ParamVars::register(&g, params);

    let mut per_head_sums: Vec<Option<Var>> = vec![None; num_heads];
    let mut per_head_stats: Vec<CeStats> = vec![CeStats::default(); num_heads];
    let mut total_masked = 0usize;

    for (item_index, item) in batch.iter().enumerate() {
        if item.targets.heads != num_heads {
            return Err(EncoderError::BadConfig(format!(
                "targets carry {} heads, config has {num_heads}",
                item.targets.heads
            )));
        }
        let frames = item.features.frames().min(item.targets.frames).min(item.mask.frames);
        if item.features.frames().max(item.targets.frames).max(item.mask.frames) - frames > 1 {
            return Err(EncoderError::FrameMismatch {
                expected: item.features.frames(),
                got: item.targets.frames,
            });
        }
        let mut feat = item.features.clone();
        feat.data.truncate(frames * feat.dims);
        let input = g.leaf(input_tensor(&feat, cfg)?);
        let mut stream = rng::stream(seed, &format!("dropout/item={item_index}"));
        let mut mode = Mode {
            dropout: cfg.dropout,
            rng: if cfg.dropout > 0.0 { Some(&mut stream) } else { None },
        };
        let (_, logit_vars) = build_forward(&g, &p, &mut mode, input, cfg);
        let mask = &item.mask.mask[..frames];
        total_masked += mask.iter().filter(|&&m| m).count();
        for (h, &logits) in logit_vars.iter().enumerate() {
            let labels = (0..frames).map(|t| item.targets.label(t, h)).collect::<Vec<_>>();
            let (ce, stats) = g.masked_ce(logits, &labels, mask);
            per_head_stats[h].correct += stats.correct;
            per_head_stats[h].count += stats.count;
            per_head_sums[h] = Some(match per_head_sums[h] {
                Some(acc) => g.add(acc, ce),
                None => ce,
            });
        }
    }
    if total_masked == 0 {
        return Err(EncoderError::NoMaskedFrames);
    }

    // loss = mean over heads of (sum of masked CE / total masked frames).
    let mut loss = None;
    for sum in per_head_sums.into_iter().flatten() {
        let head_mean = g.scale(sum, 1.0 / total_masked as f64);
        loss = Some(match loss {
            Some(acc) => g.add(acc, head_mean),
            None => head_mean,
        });
    }
    let loss = g.scale(loss.unwrap(), 1.0 / num_heads as f64);
    let loss_value = g.value(loss).item();
    if !loss_value.is_finite() {
        return Err(EncoderError::NonFiniteLoss);
    }

    let mut store = g.backward(loss);
    let mut grad = Vec::with_capacity(params.param_count());
    for (name, tensor) in &params.tensors {
        let var = p.var(name);
        grad.extend_from_slice(&store.take(var, tensor.rows, tensor.cols).data);
    }
    Ok(LossReport {
        loss: loss_value,
        grad,
        per_head_accuracy: per_head_stats
            .iter()
            .map(|s| if s.count == 0 { 0.0 } else { s.correct as f64 / s.count as f64 })
            .collect(),
        masked_frames: total_masked,
    })
}

/// Inference-mode masked-prediction accuracy per head (no gradients).
pub fn masked_accuracy(
    batch: &[BatchItem],
    params: &EncoderParams,
    cfg: &EncoderConfig,
) -> Result<Vec<f64>, EncoderError> {
    cfg.validate()?;
    let num_heads = cfg.vocab_sizes.len();
    let mut correct = vec![0usize; num_heads];
    let mut count = vec![0usize; num_heads];
    for item in batch {
        let frames = item.features.frames().min(item.targets.frames).min(item.mask.frames);
        let mut feat = item.features.clone();
        feat.data.truncate(frames * feat.dims);
        let trace = encode(&feat, params, cfg, false, 0)?;
        for h in 0..num_heads {
            let logits = &trace.logits[h];
            for t in 0..frames {
                if !item.mask.mask[t] {
                    continue;
                }
                let row = logits.row(t);
                let argmax = row
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                    .map(|(i, _)| i)
                    .unwrap();
                count[h] += 1;
                if argmax == item.targets.label(t, h) as usize {
                    correct[h] += 1;
                }
            }
        }
    }
    Ok(correct
        .iter()
        .zip(&count)
        .map(|(&c, &n)| if n == 0 { 0.0 } else { c as f64 / n as f64 })
        .collect())
}
