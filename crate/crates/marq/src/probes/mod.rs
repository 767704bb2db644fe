//! Downstream evaluation: 2-layer MLP probes over frozen embeddings.
//!
//! Track-level tasks pool embeddings over time first; frame-level tasks
//! treat each frame as an independent row (a pooled track is simply a
//! one-frame item). Probe training reuses the pretrain optimizer and is
//! deterministic in its seed.

pub mod metrics;

pub use metrics::{
    accuracy, event_f_measure, frame_events_to_times, mean_average_precision, mse, FMeasure,
    MapResult,
};

use crate::audio_io::Split;
use crate::autodiff::{matmul, Graph, Tensor};
use crate::pretrain::AdamW;
use crate::rate::Rate;
use crate::rng;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ProbeError {
    #[error("empty input")]
    EmptyInput,
    #[error("label mismatch: {0}")]
    LabelMismatch(String),
    #[error("probe has no {0} data")]
    EmptySplit(&'static str),
    #[error("invalid probe config: {0}")]
    BadConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeTaskKind {
    TrackMultilabel,
    TrackRegression,
    FrameMulticlass,
    FrameBinaryEvents,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct ProbeConfig {
    pub task_kind: ProbeTaskKind,
    pub hidden_units: usize,
    /// Encoder layer the embeddings come from (resolved by the pipeline).
    pub layer_index: usize,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    /// Peak-picking threshold for event tasks.
    pub event_threshold: f64,
    /// Minimum gap between picked events, seconds.
    pub event_min_gap: f64,
    /// Matching tolerance for the event F-measure, seconds.
    pub event_tolerance: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            task_kind: ProbeTaskKind::FrameMulticlass,
            hidden_units: 512,
            layer_index: 0,
            epochs: 30,
            lr: 1e-3,
            batch_size: 32,
            event_threshold: 0.5,
            event_min_gap: 0.3,
            event_tolerance: 0.07,
        }
    }
}

/// Task-dependent supervision for one item.
#[derive(Debug, Clone, PartialEq)]
pub enum ProbeLabel {
    /// Multi-hot class indicators (track multilabel).
    MultiHot(Vec<bool>),
    /// One class for the whole item (broadcast over frames).
    Class(u32),
    /// One class per frame.
    FrameClasses(Vec<u32>),
    /// Scalar regression target.
    Scalar(f64),
    /// Sorted event times in seconds (frame binary events).
    EventTimes(Vec<f64>),
}

#[derive(Debug, Clone)]
pub struct ProbeItem {
    /// `frames x dims`, row-major. Track tasks pool this; a single
    /// pre-pooled row is fine.
    pub features: Vec<f64>,
    pub frames: usize,
    pub label: ProbeLabel,
    pub split: Split,
    /// Needed by event tasks to convert frames to seconds.
    pub frame_rate: Option<Rate>,
}

#[derive(Debug, Clone)]
pub struct ProbeDataset {
    pub dims: usize,
    pub items: Vec<ProbeItem>,
}

/// Arithmetic mean over the time axis.
pub fn pool_track(embeddings: &Tensor) -> Result<Vec<f64>, ProbeError> {
    if embeddings.rows == 0 {
        return Err(ProbeError::EmptyInput);
    }
    let mut out = vec![0.0; embeddings.cols];
    for r in 0..embeddings.rows {
        for (o, &v) in out.iter_mut().zip(embeddings.row(r)) {
            *o += v;
        }
    }
    for o in &mut out {
        *o /= embeddings.rows as f64;
    }
    Ok(out)
}

/// Trained probe: `linear(dims -> hidden) -> ReLU -> linear(hidden -> out)`.
#[derive(Debug, Clone)]
pub struct ProbeParams {
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
}

impl ProbeParams {
    fn init(dims: usize, hidden: usize, outputs: usize, seed: u64) -> Self {
        let mut stream = rng::stream(seed, "probe/init");
        let mut draw = |rows: usize, cols: usize, fan_in: usize| {
            let std = (1.0 / fan_in as f64).sqrt();
            Tensor::from_vec(
                rows,
                cols,
                (0..rows * cols)
                    .map(|_| {
                        let z: f64 = stream.sample(StandardNormal);
                        z * std
                    })
                    .collect(),
            )
        };
        ProbeParams {
            w1: draw(dims, hidden, dims),
            b1: Tensor::zeros(1, hidden),
            w2: draw(hidden, outputs, hidden),
            b2: Tensor::zeros(1, outputs),
        }
    }

    /// Inference-mode logits/outputs for a row batch.
    pub fn forward(&self, x: &Tensor) -> Tensor {
        let mut h = matmul(x, &self.w1);
        for r in 0..h.rows {
            for (v, &b) in h.row_mut(r).iter_mut().zip(&self.b1.data) {
                *v = (*v + b).max(0.0);
            }
        }
        let mut y = matmul(&h, &self.w2);
        for r in 0..y.rows {
            for (v, &b) in y.row_mut(r).iter_mut().zip(&self.b2.data) {
                *v += b;
            }
        }
        y
    }

    fn flat(&self) -> Vec<f64> {
        let mut out = self.w1.data.clone();
        out.extend_from_slice(&self.b1.data);
        out.extend_from_slice(&self.w2.data);
        out.extend_from_slice(&self.b2.data);
        out
    }

    fn overwrite(&mut self, flat: &[f64]) {
        let mut offset = 0;
        for t in [&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2] {
            let n = t.len();
            t.data.copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ProbeResult {
    pub metric_name: String,
    pub value: f64,
    /// Per-class breakdown where applicable (class index, value).
    pub per_class: Option<Vec<(usize, f64)>>,
}

/// Flattened training rows plus enough item structure to evaluate.
struct RowSet {
    x: Vec<f64>,
    targets: RowTargets,
    rows: usize,
}

enum RowTargets {
    MultiHot(Vec<f64>, usize),
    Class(Vec<u32>, usize),
    Scalar(Vec<f64>),
    Binary(Vec<f64>),
}

fn class_count(items: &[&ProbeItem]) -> Result<usize, ProbeError> {
    let mut max = 0u32;
    for item in items {
        match &item.label {
            ProbeLabel::Class(c) => max = max.max(*c),
            ProbeLabel::FrameClasses(cs) => {
                max = max.max(cs.iter().copied().max().unwrap_or(0))
            }
            other => {
                return Err(ProbeError::LabelMismatch(format!(
                    "expected class labels, got {other:?}"
                )))
            }
        }
    }
    Ok(max as usize + 1)
}

fn event_frame_targets(item: &ProbeItem) -> Result<Vec<f64>, ProbeError> {
    let rate = item
        .frame_rate
        .ok_or_else(|| ProbeError::LabelMismatch("event task needs frame_rate".into()))?
        .to_f64();
    let times = match &item.label {
        ProbeLabel::EventTimes(times) => times,
        other => {
            return Err(ProbeError::LabelMismatch(format!(
                "expected event times, got {other:?}"
            )))
        }
    };
    let mut targets = vec![0.0; item.frames];
    for &time in times {
        let frame = (time * rate).round() as usize;
        if frame < item.frames {
            targets[frame] = 1.0;
        }
    }
    Ok(targets)
}

fn build_rows(
    ds: &ProbeDataset,
    items: &[&ProbeItem],
    cfg: &ProbeConfig,
    classes: usize,
) -> Result<RowSet, ProbeError> {
    let dims = ds.dims;
    let mut x = Vec::new();
    let mut rows = 0usize;
    match cfg.task_kind {
        ProbeTaskKind::TrackMultilabel => {
            let mut targets = Vec::new();
            for item in items {
                let pooled =
                    pool_track(&Tensor::from_vec(item.frames, dims, item.features.clone()))?;
                x.extend_from_slice(&pooled);
                match &item.label {
                    ProbeLabel::MultiHot(hot) if hot.len() == classes => {
                        targets.extend(hot.iter().map(|&b| if b { 1.0 } else { 0.0 }));
                    }
                    other => {
                        return Err(ProbeError::LabelMismatch(format!(
                            "expected {classes}-way multi-hot, got {other:?}"
                        )))
                    }
                }
                rows += 1;
            }
            Ok(RowSet { x, targets: RowTargets::MultiHot(targets, classes), rows })
        }
        ProbeTaskKind::TrackRegression => {
            let mut targets = Vec::new();
            for item in items {
                let pooled =
                    pool_track(&Tensor::from_vec(item.frames, dims, item.features.clone()))?;
                x.extend_from_slice(&pooled);
                match &item.label {
                    ProbeLabel::Scalar(v) => targets.push(*v),
                    other => {
                        return Err(ProbeError::LabelMismatch(format!(
                            "expected scalar target, got {other:?}"
                        )))
                    }
                }
                rows += 1;
            }
            Ok(RowSet { x, targets: RowTargets::Scalar(targets), rows })
        }
        ProbeTaskKind::FrameMulticlass => {
            let mut targets = Vec::new();
            for item in items {
                for t in 0..item.frames {
                    x.extend_from_slice(&item.features[t * dims..(t + 1) * dims]);
                    let class = match &item.label {
                        ProbeLabel::Class(c) => *c,
                        ProbeLabel::FrameClasses(cs) if cs.len() == item.frames => cs[t],
                        other => {
                            return Err(ProbeError::LabelMismatch(format!(
                                "expected class labels per frame, got {other:?}"
                            )))
                        }
                    };
                    targets.push(class);
                    rows += 1;
                }
            }
            Ok(RowSet { x, targets: RowTargets::Class(targets, classes), rows })
        }
        ProbeTaskKind::FrameBinaryEvents => {
            let mut targets = Vec::new();
            for item in items {
                let frame_targets = event_frame_targets(item)?;
                x.extend_from_slice(&item.features);
                targets.extend_from_slice(&frame_targets);
                rows += item.frames;
            }
            Ok(RowSet { x, targets: RowTargets::Binary(targets), rows })
        }
    }
}

fn output_dims(targets: &RowTargets) -> usize {
    match targets {
        RowTargets::MultiHot(_, classes) => *classes,
        RowTargets::Class(_, classes) => *classes,
        RowTargets::Scalar(_) => 1,
        RowTargets::Binary(_) => 1,
    }
}

/// Train the MLP probe on the train split and evaluate on the test split.
///
/// Metrics: mAP (track multilabel), MSE (track regression), accuracy
/// (frame multiclass), tolerance-window event F1 (frame binary events).
pub fn train_probe(
    ds: &ProbeDataset,
    cfg: &ProbeConfig,
    seed: u64,
) -> Result<(ProbeParams, ProbeResult), ProbeError> {
    if ds.items.is_empty() || ds.dims == 0 {
        return Err(ProbeError::EmptyInput);
    }
    if cfg.hidden_units == 0 {
        return Err(ProbeError::BadConfig("hidden_units must be positive".into()));
    }
    for item in &ds.items {
        if item.features.len() != item.frames * ds.dims {
            return Err(ProbeError::LabelMismatch("feature length != frames * dims".into()));
        }
    }
    let train_items: Vec<&ProbeItem> =
        ds.items.iter().filter(|i| i.split == Split::Train).collect();
    let test_items: Vec<&ProbeItem> =
        ds.items.iter().filter(|i| i.split == Split::Test).collect();
    if train_items.is_empty() {
        return Err(ProbeError::EmptySplit("train"));
    }
    if test_items.is_empty() {
        return Err(ProbeError::EmptySplit("test"));
    }

    let classes = match cfg.task_kind {
        ProbeTaskKind::FrameMulticlass => {
            let all: Vec<&ProbeItem> = ds.items.iter().collect();
            class_count(&all)?
        }
        ProbeTaskKind::TrackMultilabel => match &ds.items[0].label {
            ProbeLabel::MultiHot(hot) => hot.len(),
            other => {
                return Err(ProbeError::LabelMismatch(format!(
                    "expected multi-hot labels, got {other:?}"
                )))
            }
        },
        _ => 1,
    };

    let train_rows = build_rows(ds, &train_items, cfg, classes)?;
    let outputs = output_dims(&train_rows.targets);
    let mut params = ProbeParams::init(ds.dims, cfg.hidden_units, outputs, seed);
    let mut opt = AdamW::new(params.flat().len());
    let mut flat = params.flat();

    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..train_rows.rows).collect();
        let mut stream = rng::stream(seed, &format!("probe/epoch={epoch}"));
        for i in (1..order.len()).rev() {
            let j = stream.gen_range(0..=i);
            order.swap(i, j);
        }
        for chunk in order.chunks(cfg.batch_size.max(1)) {
            let mut xb = Vec::with_capacity(chunk.len() * ds.dims);
            for &row in chunk {
                xb.extend_from_slice(&train_rows.x[row * ds.dims..(row + 1) * ds.dims]);
            }
            let g = Graph::new();
            let x = g.leaf(Tensor::from_vec(chunk.len(), ds.dims, xb));
            let w1 = g.leaf(params.w1.clone());
            let b1 = g.leaf(params.b1.clone());
            let w2 = g.leaf(params.w2.clone());
            let b2 = g.leaf(params.b2.clone());
            let h = g.relu(g.add_bias(g.matmul(x, w1), b1));
            let logits = g.add_bias(g.matmul(h, w2), b2);
            let loss = match &train_rows.targets {
                RowTargets::MultiHot(targets, classes) => {
                    let mut tb = Vec::with_capacity(chunk.len() * classes);
                    for &row in chunk {
                        tb.extend_from_slice(&targets[row * classes..(row + 1) * classes]);
                    }
                    g.sigmoid_bce_mean(logits, &Tensor::from_vec(chunk.len(), *classes, tb))
                }
                RowTargets::Class(targets, _) => {
                    let labels: Vec<u32> = chunk.iter().map(|&row| targets[row]).collect();
                    let mask = vec![true; chunk.len()];
                    let (sum, _) = g.masked_ce(logits, &labels, &mask);
                    g.scale(sum, 1.0 / chunk.len() as f64)
                }
                RowTargets::Scalar(targets) => {
                    let tb: Vec<f64> = chunk.iter().map(|&row| targets[row]).collect();
                    g.mse_mean(logits, &Tensor::from_vec(chunk.len(), 1, tb))
                }
                RowTargets::Binary(targets) => {
                    let tb: Vec<f64> = chunk.iter().map(|&row| targets[row]).collect();
                    g.sigmoid_bce_mean(logits, &Tensor::from_vec(chunk.len(), 1, tb))
                }
            };
            let mut store = g.backward(loss);
            let mut grad = store.take(w1, params.w1.rows, params.w1.cols).data;
            grad.extend(store.take(b1, 1, params.b1.cols).data);
            grad.extend(store.take(w2, params.w2.rows, params.w2.cols).data);
            grad.extend(store.take(b2, 1, params.b2.cols).data);
            opt.step(&mut flat, &grad, cfg.lr, 0.0);
            params.overwrite(&flat);
        }
    }

    let result = evaluate_probe(ds, &test_items, cfg, &params, classes)?;
    Ok((params, result))
}

fn evaluate_probe(
    ds: &ProbeDataset,
    test_items: &[&ProbeItem],
    cfg: &ProbeConfig,
    params: &ProbeParams,
    classes: usize,
) -> Result<ProbeResult, ProbeError> {
    match cfg.task_kind {
        ProbeTaskKind::TrackMultilabel => {
            let mut scores = Vec::with_capacity(test_items.len());
            let mut truths = Vec::with_capacity(test_items.len());
            for item in test_items {
                let pooled =
                    pool_track(&Tensor::from_vec(item.frames, ds.dims, item.features.clone()))?;
                let logits = params.forward(&Tensor::from_vec(1, ds.dims, pooled));
                scores.push(logits.data.clone());
                match &item.label {
                    ProbeLabel::MultiHot(hot) => truths.push(hot.clone()),
                    _ => unreachable!("validated in build_rows"),
                }
            }
            let map = mean_average_precision(&scores, &truths)
                .ok_or_else(|| ProbeError::LabelMismatch("no class has positives".into()))?;
            let per_class = map
                .per_class
                .iter()
                .enumerate()
                .filter_map(|(c, ap)| ap.map(|v| (c, v)))
                .collect();
            Ok(ProbeResult {
                metric_name: "mAP".into(),
                value: map.map,
                per_class: Some(per_class),
            })
        }
        ProbeTaskKind::TrackRegression => {
            let mut predicted = Vec::new();
            let mut reference = Vec::new();
            for item in test_items {
                let pooled =
                    pool_track(&Tensor::from_vec(item.frames, ds.dims, item.features.clone()))?;
                let out = params.forward(&Tensor::from_vec(1, ds.dims, pooled));
                predicted.push(out.data[0]);
                match &item.label {
                    ProbeLabel::Scalar(v) => reference.push(*v),
                    _ => unreachable!("validated in build_rows"),
                }
            }
            Ok(ProbeResult {
                metric_name: "MSE".into(),
                value: mse(&predicted, &reference),
                per_class: None,
            })
        }
        ProbeTaskKind::FrameMulticlass => {
            let rows = build_rows(ds, test_items, cfg, classes)?;
            let x = Tensor::from_vec(rows.rows, ds.dims, rows.x);
            let logits = params.forward(&x);
            let predicted: Vec<u32> = (0..logits.rows)
                .map(|r| {
                    logits.row(r)
                        .iter()
                        .enumerate()
                        .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                        .map(|(i, _)| i as u32)
                        .unwrap()
                })
                .collect();
            let reference = match rows.targets {
                RowTargets::Class(t, _) => t,
                _ => unreachable!(),
            };
            Ok(ProbeResult {
                metric_name: "accuracy".into(),
                value: accuracy(&predicted, &reference),
                per_class: None,
            })
        }
        ProbeTaskKind::FrameBinaryEvents => {
            let mut f1_sum = 0.0;
            for item in test_items {
                let x = Tensor::from_vec(item.frames, ds.dims, item.features.clone());
                let logits = params.forward(&x);
                let probs: Vec<f64> =
                    logits.data.iter().map(|&l| 1.0 / (1.0 + (-l).exp())).collect();
                let rate = item
                    .frame_rate
                    .ok_or_else(|| ProbeError::LabelMismatch("event task needs frame_rate".into()))?;
                let predicted = frame_events_to_times(
                    &probs,
                    rate,
                    cfg.event_threshold,
                    cfg.event_min_gap,
                );
                let reference = match &item.label {
                    ProbeLabel::EventTimes(times) => times.clone(),
                    _ => unreachable!("validated in build_rows"),
                };
                f1_sum += event_f_measure(&predicted, &reference, cfg.event_tolerance).f1;
            }
            Ok(ProbeResult {
                metric_name: "event_f1".into(),
                value: f1_sum / test_items.len() as f64,
                per_class: None,
            })
        }
    }
}
