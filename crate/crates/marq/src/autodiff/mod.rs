//! Reverse-mode automatic differentiation over a tensor tape.
//!
//! Operations append nodes to a [`Graph`] in execution order; the tape is
//! therefore already topologically sorted and [`Graph::backward`] is a
//! single reverse sweep. Backward closures capture cloned inputs and
//! accumulate into a [`GradStore`] indexed by node id. Losses are built in
//! log-space so they stay finite for logits up to ~1e4.

mod tensor;

pub use tensor::{matmul, matmul_nt, matmul_tn, Tensor};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use std::cell::RefCell;

/// Handle to a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

type BackFn = Box<dyn Fn(&Tensor, &mut GradStore)>;

struct Node {
    value: Tensor,
    backward: Option<BackFn>,
}

/// Per-node gradient accumulator.
pub struct GradStore {
    grads: Vec<Option<Tensor>>,
}

impl GradStore {
    fn accum(&mut self, id: usize, grad: Tensor) {
        match &mut self.grads[id] {
            Some(existing) => existing.add_assign(&grad),
            slot @ None => *slot = Some(grad),
        }
    }

    /// Gradient for `var`, or zeros of the given shape if it never
    /// received one (a leaf not on the loss path).
    pub fn take(&mut self, var: Var, rows: usize, cols: usize) -> Tensor {
        self.grads[var.0].take().unwrap_or_else(|| Tensor::zeros(rows, cols))
    }

    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads[var.0].as_ref()
    }
}

/// Classification stats gathered while computing a masked cross-entropy.
#[derive(Debug, Clone, Copy, Default)]
pub struct CeStats {
    pub correct: usize,
    pub count: usize,
}

#[derive(Default)]
pub struct Graph {
    nodes: RefCell<Vec<Node>>,
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    fn push(&self, value: Tensor, backward: Option<BackFn>) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value, backward });
        Var(nodes.len() - 1)
    }

    pub fn value(&self, var: Var) -> Tensor {
        self.nodes.borrow()[var.0].value.clone()
    }

    pub fn shape(&self, var: Var) -> (usize, usize) {
        let nodes = self.nodes.borrow();
        (nodes[var.0].value.rows, nodes[var.0].value.cols)
    }

    /// Insert a leaf (input or parameter).
    pub fn leaf(&self, value: Tensor) -> Var {
        self.push(value, None)
    }

    pub fn add(&self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        debug_assert_eq!((va.rows, va.cols), (vb.rows, vb.cols));
        let mut out = va;
        out.add_assign(&vb);
        self.push(
            out,
            Some(Box::new(move |g, store| {
                store.accum(a.0, g.clone());
                store.accum(b.0, g.clone());
            })),
        )
    }

    /// `alpha * a + b` (residual combiner).
    pub fn add_scaled(&self, a: Var, alpha: f64, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        debug_assert_eq!((va.rows, va.cols), (vb.rows, vb.cols));
        let data = va.data.iter().zip(&vb.data).map(|(x, y)| alpha * x + y).collect();
        self.push(
            Tensor::from_vec(va.rows, va.cols, data),
            Some(Box::new(move |g, store| {
                store.accum(a.0, g.map(|v| v * alpha));
                store.accum(b.0, g.clone());
            })),
        )
    }

    pub fn scale(&self, a: Var, c: f64) -> Var {
        let va = self.value(a);
        self.push(
            va.map(|v| v * c),
            Some(Box::new(move |g, store| store.accum(a.0, g.map(|v| v * c)))),
        )
    }

    /// Broadcast-add a 1 x cols bias row to every row of `x`.
    pub fn add_bias(&self, x: Var, bias: Var) -> Var {
        let (vx, vb) = (self.value(x), self.value(bias));
        debug_assert_eq!(vb.rows, 1);
        debug_assert_eq!(vx.cols, vb.cols);
        let mut out = vx;
        for r in 0..out.rows {
            for (o, &b) in out.row_mut(r).iter_mut().zip(&vb.data) {
                *o += b;
            }
        }
        let cols = out.cols;
        self.push(
            out,
            Some(Box::new(move |g, store| {
                store.accum(x.0, g.clone());
                let mut db = Tensor::zeros(1, cols);
                for r in 0..g.rows {
                    for (d, &v) in db.data.iter_mut().zip(g.row(r)) {
                        *d += v;
                    }
                }
                store.accum(bias.0, db);
            })),
        )
    }

    pub fn matmul(&self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        let out = matmul(&va, &vb);
        self.push(
            out,
            Some(Box::new(move |g, store| {
                store.accum(a.0, matmul_nt(g, &vb));
                store.accum(b.0, matmul_tn(&va, g));
            })),
        )
    }

    /// `a . b^T` (attention scores).
    pub fn matmul_nt(&self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        let out = matmul_nt(&va, &vb);
        self.push(
            out,
            Some(Box::new(move |g, store| {
                store.accum(a.0, matmul(g, &vb));
                store.accum(b.0, matmul_tn(g, &va));
            })),
        )
    }

    /// Row-wise layer norm with learned gain/bias (1 x cols each).
    pub fn layer_norm(&self, x: Var, gamma: Var, beta: Var, eps: f64) -> Var {
        let vx = self.value(x);
        let vg = self.value(gamma);
        let vb = self.value(beta);
        let (rows, cols) = (vx.rows, vx.cols);
        let mut normalized = Tensor::zeros(rows, cols);
        let mut inv_std = vec![0.0; rows];
        for r in 0..rows {
            let row = vx.row(r);
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
            let inv = 1.0 / (var + eps).sqrt();
            inv_std[r] = inv;
            for (c, &v) in row.iter().enumerate() {
                normalized.row_mut(r)[c] = (v - mean) * inv;
            }
        }
        let mut out = Tensor::zeros(rows, cols);
        for r in 0..rows {
            for c in 0..cols {
                out.row_mut(r)[c] = normalized.row(r)[c] * vg.data[c] + vb.data[c];
            }
        }
        let x_hat = normalized;
        self.push(
            out,
            Some(Box::new(move |g, store| {
                let mut dgamma = Tensor::zeros(1, cols);
                let mut dbeta = Tensor::zeros(1, cols);
                let mut dx = Tensor::zeros(rows, cols);
                for r in 0..rows {
                    let gr = g.row(r);
                    let hr = x_hat.row(r);
                    let mut mean_dh = 0.0;
                    let mut mean_dh_h = 0.0;
                    for c in 0..cols {
                        dgamma.data[c] += gr[c] * hr[c];
                        dbeta.data[c] += gr[c];
                        let dh = gr[c] * vg.data[c];
                        mean_dh += dh;
                        mean_dh_h += dh * hr[c];
                    }
                    mean_dh /= cols as f64;
                    mean_dh_h /= cols as f64;
                    for c in 0..cols {
                        let dh = gr[c] * vg.data[c];
                        dx.row_mut(r)[c] = inv_std[r] * (dh - mean_dh - hr[c] * mean_dh_h);
                    }
                }
                store.accum(x.0, dx);
                store.accum(gamma.0, dgamma);
                store.accum(beta.0, dbeta);
            })),
        )
    }

    /// Row-wise softmax, computed with max subtraction.
    pub fn softmax_rows(&self, x: Var) -> Var {
        let vx = self.value(x);
        let mut out = Tensor::zeros(vx.rows, vx.cols);
        for r in 0..vx.rows {
            let row = vx.row(r);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for (c, &v) in row.iter().enumerate() {
                let e = (v - max).exp();
                out.row_mut(r)[c] = e;
                sum += e;
            }
            for v in out.row_mut(r) {
                *v /= sum;
            }
        }
        let y = out.clone();
        self.push(
            out,
            Some(Box::new(move |g, store| {
                let mut dx = Tensor::zeros(y.rows, y.cols);
                for r in 0..y.rows {
                    let gy: f64 = g.row(r).iter().zip(y.row(r)).map(|(a, b)| a * b).sum();
                    for c in 0..y.cols {
                        dx.row_mut(r)[c] = y.row(r)[c] * (g.row(r)[c] - gy);
                    }
                }
                store.accum(x.0, dx);
            })),
        )
    }

    /// Swish / SiLU: `x * sigmoid(x)`.
    pub fn swish(&self, x: Var) -> Var {
        let vx = self.value(x);
        let out = vx.map(|v| v * sigmoid(v));
        self.push(
            out,
            Some(Box::new(move |g, store| {
                let dx = Tensor::from_vec(
                    vx.rows,
                    vx.cols,
                    vx.data
                        .iter()
                        .zip(&g.data)
                        .map(|(&v, &gv)| {
                            let s = sigmoid(v);
                            gv * (s + v * s * (1.0 - s))
                        })
                        .collect(),
                );
                store.accum(x.0, dx);
            })),
        )
    }

    pub fn relu(&self, x: Var) -> Var {
        let vx = self.value(x);
        let out = vx.map(|v| v.max(0.0));
        self.push(
            out,
            Some(Box::new(move |g, store| {
                let dx = Tensor::from_vec(
                    vx.rows,
                    vx.cols,
                    vx.data
                        .iter()
                        .zip(&g.data)
                        .map(|(&v, &gv)| if v > 0.0 { gv } else { 0.0 })
                        .collect(),
                );
                store.accum(x.0, dx);
            })),
        )
    }

    /// Gated linear unit over columns: splits `x` into halves `a | b` and
    /// returns `a * sigmoid(b)`.
    pub fn glu_cols(&self, x: Var) -> Var {
        let vx = self.value(x);
        assert!(vx.cols % 2 == 0, "glu needs an even column count");
        let half = vx.cols / 2;
        let mut out = Tensor::zeros(vx.rows, half);
        for r in 0..vx.rows {
            let row = vx.row(r);
            for c in 0..half {
                out.row_mut(r)[c] = row[c] * sigmoid(row[half + c]);
            }
        }
        self.push(
            out,
            Some(Box::new(move |g, store| {
                let mut dx = Tensor::zeros(vx.rows, vx.cols);
                for r in 0..vx.rows {
                    let row = vx.row(r);
                    let gr = g.row(r);
                    for c in 0..half {
                        let s = sigmoid(row[half + c]);
                        dx.row_mut(r)[c] = gr[c] * s;
                        dx.row_mut(r)[half + c] = gr[c] * row[c] * s * (1.0 - s);
                    }
                }
                store.accum(x.0, dx);
            })),
        )
    }

    /// Inverted dropout with a caller-supplied stream; scaling by
    /// `1/(1-p)` keeps expectations unchanged. `p == 0` is the identity.
    pub fn dropout(&self, x: Var, p: f64, rng: &mut ChaCha8Rng) -> Var {
        if p == 0.0 {
            return x;
        }
        let vx = self.value(x);
        let keep = 1.0 - p;
        let mask: Vec<f64> = (0..vx.len())
            .map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
            .collect();
        let data = vx.data.iter().zip(&mask).map(|(v, m)| v * m).collect();
        let shape = (vx.rows, vx.cols);
        self.push(
            Tensor::from_vec(shape.0, shape.1, data),
            Some(Box::new(move |g, store| {
                let dx = Tensor::from_vec(
                    shape.0,
                    shape.1,
                    g.data.iter().zip(&mask).map(|(v, m)| v * m).collect(),
                );
                store.accum(x.0, dx);
            })),
        )
    }

    /// Depthwise 1-D convolution along the row (time) axis with zero
    /// padding. `weight` is `channels x kernel`, `bias` is `1 x channels`.
    pub fn depthwise_conv(&self, x: Var, weight: Var, bias: Var) -> Var {
        let vx = self.value(x);
        let vw = self.value(weight);
        let vb = self.value(bias);
        let (frames, channels) = (vx.rows, vx.cols);
        let kernel = vw.cols;
        assert_eq!(vw.rows, channels);
        assert!(kernel % 2 == 1, "kernel must be odd");
        let half = (kernel / 2) as isize;
        let mut out = Tensor::zeros(frames, channels);
        for t in 0..frames {
            for c in 0..channels {
                let mut acc = vb.data[c];
                for j in 0..kernel {
                    let u = t as isize + j as isize - half;
                    if u >= 0 && (u as usize) < frames {
                        acc += vw.row(c)[j] * vx.row(u as usize)[c];
                    }
                }
                out.row_mut(t)[c] = acc;
            }
        }
        self.push(
            out,
            Some(Box::new(move |g, store| {
                let mut dx = Tensor::zeros(frames, channels);
                let mut dw = Tensor::zeros(channels, kernel);
                let mut db = Tensor::zeros(1, channels);
                for t in 0..frames {
                    for c in 0..channels {
                        let gv = g.row(t)[c];
                        db.data[c] += gv;
                        for j in 0..kernel {
                            let u = t as isize + j as isize - half;
                            if u >= 0 && (u as usize) < frames {
                                dw.row_mut(c)[j] += gv * vx.row(u as usize)[c];
                                dx.row_mut(u as usize)[c] += gv * vw.row(c)[j];
                            }
                        }
                    }
                }
                store.accum(x.0, dx);
                store.accum(weight.0, dw);
                store.accum(bias.0, db);
            })),
        )
    }

    /// Rotary position transform over column pairs; row index is the
    /// position. The backward pass rotates gradients by the negated angles.
    pub fn rope(&self, x: Var, base: f64) -> Var {
        let vx = self.value(x);
        assert!(vx.cols % 2 == 0, "rope needs even head dims");
        let out = rope_kernel(&vx, base, 1.0);
        let shape = (vx.rows, vx.cols);
        self.push(
            out,
            Some(Box::new(move |g, store| {
                debug_assert_eq!((g.rows, g.cols), shape);
                store.accum(x.0, rope_kernel(g, base, -1.0));
            })),
        )
    }

    pub fn slice_cols(&self, x: Var, start: usize, len: usize) -> Var {
        let vx = self.value(x);
        let mut out = Tensor::zeros(vx.rows, len);
        for r in 0..vx.rows {
            out.row_mut(r).copy_from_slice(&vx.row(r)[start..start + len]);
        }
        let (rows, cols) = (vx.rows, vx.cols);
        self.push(
            out,
            Some(Box::new(move |g, store| {
                let mut dx = Tensor::zeros(rows, cols);
                for r in 0..rows {
                    dx.row_mut(r)[start..start + len].copy_from_slice(g.row(r));
                }
                store.accum(x.0, dx);
            })),
        )
    }

    pub fn concat_cols(&self, parts: &[Var]) -> Var {
        let values: Vec<Tensor> = parts.iter().map(|&v| self.value(v)).collect();
        let rows = values[0].rows;
        let total: usize = values.iter().map(|v| v.cols).sum();
        let mut out = Tensor::zeros(rows, total);
        for r in 0..rows {
            let mut offset = 0;
            for v in &values {
                out.row_mut(r)[offset..offset + v.cols].copy_from_slice(v.row(r));
                offset += v.cols;
            }
        }
        let ids: Vec<usize> = parts.iter().map(|v| v.0).collect();
        let widths: Vec<usize> = values.iter().map(|v| v.cols).collect();
        self.push(
            out,
            Some(Box::new(move |g, store| {
                let mut offset = 0;
                for (&id, &w) in ids.iter().zip(&widths) {
                    let mut dp = Tensor::zeros(g.rows, w);
                    for r in 0..g.rows {
                        dp.row_mut(r).copy_from_slice(&g.row(r)[offset..offset + w]);
                    }
                    store.accum(id, dp);
                    offset += w;
                }
            })),
        )
    }

    /// Sum of cross-entropies over masked rows, in log-space. Returns the
    /// scalar sum plus argmax-accuracy stats over the same rows.
    pub fn masked_ce(&self, logits: Var, labels: &[u32], mask: &[bool]) -> (Var, CeStats) {
        let vl = self.value(logits);
        assert_eq!(vl.rows, labels.len());
        assert_eq!(vl.rows, mask.len());
        let mut sum = 0.0;
        let mut stats = CeStats::default();
        for r in 0..vl.rows {
            if !mask[r] {
                continue;
            }
            let row = vl.row(r);
            let label = labels[r] as usize;
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
            sum += lse - row[label];
            let argmax = row
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .map(|(i, _)| i)
                .unwrap();
            stats.count += 1;
            if argmax == label {
                stats.correct += 1;
            }
        }
        let labels = labels.to_vec();
        let mask = mask.to_vec();
        let var = self.push(
            Tensor::scalar(sum),
            Some(Box::new(move |g, store| {
                let gout = g.item();
                let mut dl = Tensor::zeros(vl.rows, vl.cols);
                for r in 0..vl.rows {
                    if !mask[r] {
                        continue;
                    }
                    let row = vl.row(r);
                    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let sum_exp: f64 = row.iter().map(|&v| (v - max).exp()).sum();
                    for c in 0..vl.cols {
                        let p = (row[c] - max).exp() / sum_exp;
                        let delta = if c == labels[r] as usize { 1.0 } else { 0.0 };
                        dl.row_mut(r)[c] = gout * (p - delta);
                    }
                }
                store.accum(logits.0, dl);
            })),
        );
        (var, stats)
    }

    /// Mean binary cross-entropy with logits over all entries.
    pub fn sigmoid_bce_mean(&self, logits: Var, targets: &Tensor) -> Var {
        let vl = self.value(logits);
        debug_assert_eq!((vl.rows, vl.cols), (targets.rows, targets.cols));
        let n = vl.len() as f64;
        let mut sum = 0.0;
        for (&l, &t) in vl.data.iter().zip(&targets.data) {
            sum += l.max(0.0) - l * t + (-l.abs()).exp().ln_1p();
        }
        let targets = targets.clone();
        self.push(
            Tensor::scalar(sum / n),
            Some(Box::new(move |g, store| {
                let gout = g.item() / n;
                let dl = Tensor::from_vec(
                    vl.rows,
                    vl.cols,
                    vl.data
                        .iter()
                        .zip(&targets.data)
                        .map(|(&l, &t)| gout * (sigmoid(l) - t))
                        .collect(),
                );
                store.accum(logits.0, dl);
            })),
        )
    }

    /// Mean squared error over all entries.
    pub fn mse_mean(&self, pred: Var, targets: &Tensor) -> Var {
        let vp = self.value(pred);
        debug_assert_eq!((vp.rows, vp.cols), (targets.rows, targets.cols));
        let n = vp.len() as f64;
        let sum: f64 = vp
            .data
            .iter()
            .zip(&targets.data)
            .map(|(&p, &t)| (p - t) * (p - t))
            .sum();
        let targets = targets.clone();
        self.push(
            Tensor::scalar(sum / n),
            Some(Box::new(move |g, store| {
                let gout = g.item() * 2.0 / n;
                let dp = Tensor::from_vec(
                    vp.rows,
                    vp.cols,
                    vp.data
                        .iter()
                        .zip(&targets.data)
                        .map(|(&p, &t)| gout * (p - t))
                        .collect(),
                );
                store.accum(pred.0, dp);
            })),
        )
    }

    /// Reverse sweep from a scalar loss back to the leaves.
    pub fn backward(&self, loss: Var) -> GradStore {
        let nodes = self.nodes.borrow();
        let loss_node = &nodes[loss.0].value;
        assert_eq!((loss_node.rows, loss_node.cols), (1, 1), "loss must be scalar");
        let mut store = GradStore { grads: vec![None; nodes.len()] };
        store.grads[loss.0] = Some(Tensor::scalar(1.0));
        for id in (0..=loss.0).rev() {
            let Some(grad) = store.grads[id].clone() else { continue };
            if let Some(back) = &nodes[id].backward {
                back(&grad, &mut store);
            }
        }
        store
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Shared rope kernel; `sign` = -1 rotates by the negated angles.
fn rope_kernel(x: &Tensor, base: f64, sign: f64) -> Tensor {
    let pairs = x.cols / 2;
    let mut out = Tensor::zeros(x.rows, x.cols);
    for pos in 0..x.rows {
        let row = x.row(pos);
        for i in 0..pairs {
            let theta = base.powf(-2.0 * i as f64 / x.cols as f64);
            let angle = sign * pos as f64 * theta;
            let (sin, cos) = angle.sin_cos();
            let (a, b) = (row[2 * i], row[2 * i + 1]);
            out.row_mut(pos)[2 * i] = a * cos - b * sin;
            out.row_mut(pos)[2 * i + 1] = a * sin + b * cos;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    /// Central finite differences on an arbitrary graph builder.
    fn check_gradient(
        build: impl Fn(&Graph, &[Var]) -> Var,
        inputs: &mut [Tensor],
        tol: f64,
    ) {
        let step = 1e-5;
        let eval = |inputs: &[Tensor]| -> f64 {
            let g = Graph::new();
            let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
            g.value(build(&g, &vars)).item()
        };
        let g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
        let loss = build(&g, &vars);
        let mut store = g.backward(loss);
        for i in 0..inputs.len() {
            let (rows, cols) = (inputs[i].rows, inputs[i].cols);
            let grad = store.take(vars[i], rows, cols);
            for k in 0..rows * cols {
                let orig = inputs[i].data[k];
                inputs[i].data[k] = orig + step;
                let up = eval(inputs);
                inputs[i].data[k] = orig - step;
                let down = eval(inputs);
                inputs[i].data[k] = orig;
                let fd = (up - down) / (2.0 * step);
                let ad = grad.data[k];
                let denom = ad.abs().max(fd.abs()).max(1.0);
                assert!(
                    (ad - fd).abs() / denom < tol,
                    "input {i} coord {k}: ad={ad} fd={fd}"
                );
            }
        }
    }

    fn random_tensor(rows: usize, cols: usize, seed: u64) -> Tensor {
        let mut rng = crate::rng::stream_raw(seed);
        Tensor::from_vec(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect())
    }

    #[test]
    fn matmul_chain_gradients_match_finite_differences() {
        let mut inputs = vec![random_tensor(3, 4, 1), random_tensor(4, 2, 2)];
        check_gradient(
            |g, v| {
                let y = g.matmul(v[0], v[1]);
                let labels = vec![0u32, 1, 0];
                let mask = vec![true, true, true];
                let (ce, _) = g.masked_ce(y, &labels, &mask);
                ce
            },
            &mut inputs,
            1e-6,
        );
    }

    #[test]
    fn layer_norm_gradients_match_finite_differences() {
        let mut inputs = vec![
            random_tensor(3, 6, 3),
            random_tensor(1, 6, 4),
            random_tensor(1, 6, 5),
        ];
        check_gradient(
            |g, v| {
                let y = g.layer_norm(v[0], v[1], v[2], 1e-5);
                let t = random_tensor(3, 6, 99);
                g.mse_mean(y, &t)
            },
            &mut inputs,
            1e-5,
        );
    }

    #[test]
    fn conv_glu_swish_gradients_match_finite_differences() {
        let mut inputs = vec![
            random_tensor(5, 8, 6),
            random_tensor(4, 3, 7),
            random_tensor(1, 4, 8),
        ];
        check_gradient(
            |g, v| {
                let gated = g.glu_cols(v[0]);
                let conv = g.depthwise_conv(gated, v[1], v[2]);
                let act = g.swish(conv);
                let t = random_tensor(5, 4, 100);
                g.mse_mean(act, &t)
            },
            &mut inputs,
            1e-5,
        );
    }

    #[test]
    fn attention_shaped_gradients_match_finite_differences() {
        let mut inputs = vec![random_tensor(4, 6, 9), random_tensor(4, 6, 10)];
        check_gradient(
            |g, v| {
                let q = g.rope(v[0], 10000.0);
                let k = g.rope(v[1], 10000.0);
                let scores = g.scale(g.matmul_nt(q, k), 1.0 / (6f64).sqrt());
                let attn = g.softmax_rows(scores);
                let out = g.matmul(attn, v[1]);
                let t = random_tensor(4, 6, 101);
                g.mse_mean(out, &t)
            },
            &mut inputs,
            1e-5,
        );
    }

    #[test]
    fn bce_and_slice_gradients_match_finite_differences() {
        let mut inputs = vec![random_tensor(3, 8, 11)];
        check_gradient(
            |g, v| {
                let left = g.slice_cols(v[0], 0, 4);
                let right = g.slice_cols(v[0], 4, 4);
                let both = g.concat_cols(&[right, left]);
                let t = Tensor::from_vec(3, 8, vec![0.0, 1.0, 0.5, 0.25, 1.0, 0.0, 0.75, 0.5,
                                                    1.0, 0.0, 0.0, 1.0, 0.5, 0.5, 0.25, 0.75,
                                                    0.0, 0.0, 1.0, 1.0, 0.5, 0.25, 0.75, 0.5]);
                g.sigmoid_bce_mean(both, &t)
            },
            &mut inputs,
            1e-6,
        );
    }

    #[test]
    fn dropout_backward_reuses_the_forward_mask() {
        let x = random_tensor(20, 10, 12);
        let g = Graph::new();
        let v = g.leaf(x.clone());
        let mut rng = crate::rng::stream_raw(77);
        let dropped = g.dropout(v, 0.5, &mut rng);
        let t = Tensor::zeros(20, 10);
        let loss = g.mse_mean(dropped, &t);
        let mut store = g.backward(loss);
        let grad = store.take(v, 20, 10);
        let out = g.value(dropped);
        // Gradient is zero exactly where the mask dropped the activation.
        for k in 0..out.len() {
            assert_eq!(out.data[k] == 0.0 && x.data[k] != 0.0, grad.data[k] == 0.0 && x.data[k] != 0.0);
        }
    }

    #[test]
    fn cross_entropy_is_finite_for_huge_logits() {
        let g = Graph::new();
        let logits = g.leaf(Tensor::from_vec(2, 4, vec![1e4, -1e4, 5e3, 0.0, -1e4, 1e4, 0.0, 1.0]));
        let (loss, _) = g.masked_ce(logits, &[1, 0], &[true, true]);
        let value = g.value(loss).item();
        assert!(value.is_finite());
        let mut store = g.backward(loss);
        let grad = store.take(logits, 2, 4);
        assert!(grad.data.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn uniform_logits_cost_ln_vocab_per_frame() {
        let g = Graph::new();
        let vocab = 32;
        let logits = g.leaf(Tensor::zeros(5, vocab));
        let (loss, stats) = g.masked_ce(logits, &[3, 1, 4, 1, 5], &[true; 5]);
        assert_eq!(stats.count, 5);
        let expected = 5.0 * (vocab as f64).ln();
        assert!((g.value(loss).item() - expected).abs() < 1e-12);
    }

    #[test]
    fn rope_preserves_row_norms_and_position_zero() {
        let x = random_tensor(6, 8, 13);
        let g = Graph::new();
        let v = g.leaf(x.clone());
        let rotated = g.value(g.rope(v, 10000.0));
        for c in 0..8 {
            assert!((rotated.row(0)[c] - x.row(0)[c]).abs() < 1e-15);
        }
        for r in 0..6 {
            let n0: f64 = x.row(r).iter().map(|v| v * v).sum::<f64>().sqrt();
            let n1: f64 = rotated.row(r).iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((n0 - n1).abs() < 1e-12);
        }
    }
}
