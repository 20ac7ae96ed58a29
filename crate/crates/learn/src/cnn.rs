//! 1-D convolutional classifier over the encoded SEQ window.
//!
//! Stack: conv(softplus, L2 kernel + L1 activity penalties) → conv(linear)
//! → dropout → max-pool → flatten → dense(linear) → dense(softmax).
//! All parameters live in one flat vector so optimizers and the
//! finite-difference check can treat them uniformly.

use std::ops::Range;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use restrictml_core::Label;
use serde::{Deserialize, Serialize};
use thiserror::Error;

const CLASSES: usize = 2;

#[derive(Debug, Error, PartialEq)]
pub enum CnnError {
    #[error("expected rows of width {expected}, got {found}")]
    WidthMismatch { expected: usize, found: usize },
    #[error("{rows} rows but {labels} labels")]
    LabelMismatch { rows: usize, labels: usize },
    #[error("no training rows")]
    EmptyData,
    #[error("invalid configuration: {0}")]
    BadConfig(String),
}

/// Output length and left padding of a "same" window op with stride.
pub fn same_padding(len: usize, kernel: usize, stride: usize) -> (usize, usize) {
    let out = len.div_ceil(stride);
    let total = ((out.saturating_sub(1)) * stride + kernel).saturating_sub(len);
    (out, total / 2)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub input_width: usize,
    pub conv1_filters: usize,
    pub conv2_filters: usize,
    pub kernel_size: usize,
    pub stride: usize,
    pub pool_size: usize,
    pub dense_units: usize,
    pub dropout_rate: f64,
    pub l2: f64,
    pub l1: f64,
}

impl NetworkSpec {
    /// The reference architecture: 64 filters, kernel 3, stride 3, pool 2, 128 units.
    pub fn standard(input_width: usize) -> Self {
        NetworkSpec {
            input_width,
            conv1_filters: 64,
            conv2_filters: 64,
            kernel_size: 3,
            stride: 3,
            pool_size: 2,
            dense_units: 128,
            dropout_rate: 0.5,
            l2: 0.01,
            l1: 0.01,
        }
    }

    /// Same layer stack with smaller widths, for tests and gradient checks.
    pub fn toy(input_width: usize, filters: usize, units: usize) -> Self {
        NetworkSpec {
            conv1_filters: filters,
            conv2_filters: filters,
            dense_units: units,
            ..Self::standard(input_width)
        }
    }

    pub fn validate(&self) -> Result<(), CnnError> {
        let ok = self.input_width >= 1
            && self.conv1_filters >= 1
            && self.conv2_filters >= 1
            && self.kernel_size >= 1
            && self.stride >= 1
            && self.pool_size >= 1
            && self.dense_units >= 1
            && (0.0..1.0).contains(&self.dropout_rate)
            && self.l1 >= 0.0
            && self.l2 >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(CnnError::BadConfig(format!("{self:?}")))
        }
    }

    pub fn conv1_len(&self) -> usize {
        same_padding(self.input_width, self.kernel_size, self.stride).0
    }

    pub fn conv2_len(&self) -> usize {
        same_padding(self.conv1_len(), self.kernel_size, self.stride).0
    }

    pub fn pool_len(&self) -> usize {
        same_padding(self.conv2_len(), self.pool_size, self.pool_size).0
    }

    pub fn flatten_len(&self) -> usize {
        self.pool_len() * self.conv2_filters
    }

    /// `[conv1, conv2, pool, flatten, dense, output]` sizes.
    pub fn shape_trace(&self) -> [usize; 6] {
        [
            self.conv1_len(),
            self.conv2_len(),
            self.pool_len(),
            self.flatten_len(),
            self.dense_units,
            CLASSES,
        ]
    }

    fn layout(&self) -> Layout {
        let k = self.kernel_size;
        let (f1, f2, u) = (self.conv1_filters, self.conv2_filters, self.dense_units);
        let sizes = [f1 * k, f1, f2 * k * f1, f2, self.flatten_len() * u, u, u * CLASSES, CLASSES];
        let mut at = 0;
        let mut r = sizes.map(|s| {
            let range = at..at + s;
            at += s;
            range
        });
        let take = |i: usize, r: &mut [Range<usize>; 8]| std::mem::replace(&mut r[i], 0..0);
        Layout {
            w1: take(0, &mut r),
            b1: take(1, &mut r),
            w2: take(2, &mut r),
            b2: take(3, &mut r),
            w3: take(4, &mut r),
            b3: take(5, &mut r),
            w4: take(6, &mut r),
            b4: take(7, &mut r),
        }
    }

    pub fn param_count(&self) -> usize {
        self.layout().b4.end
    }
}

#[derive(Debug, Clone)]
struct Layout {
    w1: Range<usize>,
    b1: Range<usize>,
    w2: Range<usize>,
    b2: Range<usize>,
    w3: Range<usize>,
    b3: Range<usize>,
    w4: Range<usize>,
    b4: Range<usize>,
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// "Same"-padded strided convolution; `input` is `[in_len][in_ch]`,
/// weights `[out_ch][k][in_ch]`, output `[out_len][out_ch]`.
#[allow(clippy::too_many_arguments)]
fn conv_forward(
    input: &[f64],
    in_len: usize,
    in_ch: usize,
    w: &[f64],
    b: &[f64],
    out_ch: usize,
    k: usize,
    s: usize,
) -> Vec<f64> {
    let (out_len, left) = same_padding(in_len, k, s);
    let mut out = vec![0.0; out_len * out_ch];
    for t in 0..out_len {
        for g in 0..out_ch {
            let mut acc = b[g];
            for q in 0..k {
                let Some(pos) = (t * s + q).checked_sub(left).filter(|&p| p < in_len) else {
                    continue;
                };
                let wrow = &w[(g * k + q) * in_ch..(g * k + q + 1) * in_ch];
                let xrow = &input[pos * in_ch..(pos + 1) * in_ch];
                acc += wrow.iter().zip(xrow).map(|(a, b)| a * b).sum::<f64>();
            }
            out[t * out_ch + g] = acc;
        }
    }
    out
}

/// Accumulates weight/bias gradients and, if asked, the input gradient.
#[allow(clippy::too_many_arguments)]
fn conv_backward(
    input: &[f64],
    in_len: usize,
    in_ch: usize,
    w: &[f64],
    dout: &[f64],
    out_ch: usize,
    k: usize,
    s: usize,
    dw: &mut [f64],
    db: &mut [f64],
    mut din: Option<&mut [f64]>,
) {
    let (out_len, left) = same_padding(in_len, k, s);
    for t in 0..out_len {
        for g in 0..out_ch {
            let d = dout[t * out_ch + g];
            if d == 0.0 {
                continue;
            }
            db[g] += d;
            for q in 0..k {
                let Some(pos) = (t * s + q).checked_sub(left).filter(|&p| p < in_len) else {
                    continue;
                };
                let base = (g * k + q) * in_ch;
                for f in 0..in_ch {
                    dw[base + f] += d * input[pos * in_ch + f];
                }
                if let Some(din) = din.as_deref_mut() {
                    for f in 0..in_ch {
                        din[pos * in_ch + f] += d * w[base + f];
                    }
                }
            }
        }
    }
}

/// Inverted-dropout mask: each entry is `0` or `1/(1-rate)`.
pub fn dropout_mask(len: usize, rate: f64, rng: &mut impl Rng) -> Vec<f64> {
    if rate == 0.0 {
        return vec![1.0; len];
    }
    let keep = 1.0 / (1.0 - rate);
    (0..len).map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep }).collect()
}

/// Intermediate values of one forward pass.
#[derive(Debug, Clone)]
pub struct Trace {
    pub z1: Vec<f64>,
    pub a1: Vec<f64>,
    pub z2: Vec<f64>,
    pub dropped: Vec<f64>,
    pub pooled: Vec<f64>,
    argmax: Vec<usize>,
    pub hidden: Vec<f64>,
    pub logits: Vec<f64>,
    pub probs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub spec: NetworkSpec,
    pub params: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    pub max_error: f64,
    pub worst_param: usize,
}

impl Network {
    /// Glorot-uniform weights, zero biases.
    pub fn build(spec: NetworkSpec, seed: u64) -> Result<Self, CnnError> {
        spec.validate()?;
        let l = spec.layout();
        let k = spec.kernel_size;
        let mut params = vec![0.0; spec.param_count()];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut glorot = |r: Range<usize>, fan_in: usize, fan_out: usize| {
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for p in &mut params[r] {
                *p = rng.random_range(-limit..limit);
            }
        };
        glorot(l.w1.clone(), k, k * spec.conv1_filters);
        glorot(l.w2.clone(), k * spec.conv1_filters, k * spec.conv2_filters);
        glorot(l.w3.clone(), spec.flatten_len(), spec.dense_units);
        glorot(l.w4.clone(), spec.dense_units, CLASSES);
        Ok(Network { spec, params })
    }

    pub fn width(&self) -> usize {
        self.spec.input_width
    }

    fn check_rows<R: AsRef<[f64]>>(&self, rows: &[R]) -> Result<(), CnnError> {
        for r in rows {
            if r.as_ref().len() != self.width() {
                return Err(CnnError::WidthMismatch {
                    expected: self.width(),
                    found: r.as_ref().len(),
                });
            }
        }
        Ok(())
    }

    /// One sample; `mask` enables dropout.
    pub fn trace(&self, x: &[f64], mask: Option<&[f64]>) -> Trace {
        let s = &self.spec;
        let l = s.layout();
        let p = &self.params;
        let (k, st) = (s.kernel_size, s.stride);
        let (f1, f2, u) = (s.conv1_filters, s.conv2_filters, s.dense_units);

        let z1 = conv_forward(x, s.input_width, 1, &p[l.w1.clone()], &p[l.b1.clone()], f1, k, st);
        let a1: Vec<f64> = z1.iter().map(|&v| softplus(v)).collect();
        let z2 = conv_forward(&a1, s.conv1_len(), f1, &p[l.w2.clone()], &p[l.b2.clone()], f2, k, st);
        let dropped: Vec<f64> = match mask {
            Some(m) => z2.iter().zip(m).map(|(a, b)| a * b).collect(),
            None => z2.clone(),
        };

        let l2 = s.conv2_len();
        let (pl, left) = same_padding(l2, s.pool_size, s.pool_size);
        let mut pooled = vec![0.0; pl * f2];
        let mut argmax = vec![0; pl * f2];
        for t in 0..pl {
            for g in 0..f2 {
                let mut best = f64::NEG_INFINITY;
                let mut at = 0;
                for q in 0..s.pool_size {
                    let Some(pos) = (t * s.pool_size + q).checked_sub(left).filter(|&v| v < l2) else {
                        continue;
                    };
                    let v = dropped[pos * f2 + g];
                    if v > best {
                        best = v;
                        at = pos * f2 + g;
                    }
                }
                pooled[t * f2 + g] = best;
                argmax[t * f2 + g] = at;
            }
        }

        let w3 = &p[l.w3.clone()];
        let mut hidden = p[l.b3.clone()].to_vec();
        for (i, &v) in pooled.iter().enumerate() {
            if v == 0.0 {
                continue;
            }
            for (h, w) in hidden.iter_mut().zip(&w3[i * u..(i + 1) * u]) {
                *h += v * w;
            }
        }
        let w4 = &p[l.w4.clone()];
        let mut logits = p[l.b4.clone()].to_vec();
        for (ui, &h) in hidden.iter().enumerate() {
            for c in 0..CLASSES {
                logits[c] += h * w4[ui * CLASSES + c];
            }
        }
        let probs = softmax(&logits);
        Trace {
            z1,
            a1,
            z2,
            dropped,
            pooled,
            argmax,
            hidden,
            logits,
            probs,
        }
    }

    /// Inference-mode class probabilities `[p(inapplicable), p(applicable)]`.
    pub fn forward<R: AsRef<[f64]>>(&self, rows: &[R]) -> Result<Vec<[f64; 2]>, CnnError> {
        self.check_rows(rows)?;
        Ok(rows
            .iter()
            .map(|r| {
                let p = self.trace(r.as_ref(), None).probs;
                [p[0], p[1]]
            })
            .collect())
    }

    pub fn predict<R: AsRef<[f64]>>(&self, rows: &[R]) -> Result<Vec<Label>, CnnError> {
        Ok(self.forward(rows)?.into_iter().map(|p| Label::from_bool(p[1] > p[0])).collect())
    }

    /// Mean cross-entropy plus the kernel and activity penalties, dropout off.
    pub fn loss<R: AsRef<[f64]>>(&self, rows: &[R], labels: &[Label]) -> Result<f64, CnnError> {
        self.check_rows(rows)?;
        if rows.len() != labels.len() {
            return Err(CnnError::LabelMismatch {
                rows: rows.len(),
                labels: labels.len(),
            });
        }
        if rows.is_empty() {
            return Err(CnnError::EmptyData);
        }
        Ok(self.loss_and_grad(rows, labels, None, false).0)
    }

    /// `(loss, gradient)` with dropout off.
    pub fn gradient<R: AsRef<[f64]>>(&self, rows: &[R], labels: &[Label]) -> Result<(f64, Vec<f64>), CnnError> {
        self.loss(rows, labels)?;
        Ok(self.loss_and_grad(rows, labels, None, true))
    }

    pub fn kernel_penalty(&self) -> f64 {
        let l = self.spec.layout();
        self.spec.l2 * self.params[l.w1].iter().map(|w| w * w).sum::<f64>()
    }

    fn loss_and_grad<R: AsRef<[f64]>>(
        &self,
        rows: &[R],
        labels: &[Label],
        masks: Option<&[Vec<f64>]>,
        want_grad: bool,
    ) -> (f64, Vec<f64>) {
        let s = &self.spec;
        let l = s.layout();
        let p = &self.params;
        let (k, st) = (s.kernel_size, s.stride);
        let (f1, f2, u) = (s.conv1_filters, s.conv2_filters, s.dense_units);
        let bsz = rows.len() as f64;
        let mut grad = if want_grad { vec![0.0; p.len()] } else { Vec::new() };
        let mut ce = 0.0;
        let mut activity = 0.0;

        for (n, (row, label)) in rows.iter().zip(labels).enumerate() {
            let x = row.as_ref();
            let mask = masks.map(|m| m[n].as_slice());
            let tr = self.trace(x, mask);
            let y = label.as_u8() as usize;
            ce -= tr.probs[y].max(1e-300).ln();
            activity += tr.a1.iter().map(|v| v.abs()).sum::<f64>();
            if !want_grad {
                continue;
            }

            let dlogits: Vec<f64> = (0..CLASSES)
                .map(|c| (tr.probs[c] - if c == y { 1.0 } else { 0.0 }) / bsz)
                .collect();
            let w4 = &p[l.w4.clone()];
            let mut dhidden = vec![0.0; u];
            for ui in 0..u {
                for c in 0..CLASSES {
                    grad[l.w4.start + ui * CLASSES + c] += tr.hidden[ui] * dlogits[c];
                    dhidden[ui] += w4[ui * CLASSES + c] * dlogits[c];
                }
            }
            for c in 0..CLASSES {
                grad[l.b4.start + c] += dlogits[c];
            }

            let w3 = &p[l.w3.clone()];
            let mut dpooled = vec![0.0; tr.pooled.len()];
            for (i, &v) in tr.pooled.iter().enumerate() {
                let base = l.w3.start + i * u;
                let mut acc = 0.0;
                for ui in 0..u {
                    grad[base + ui] += v * dhidden[ui];
                    acc += w3[i * u + ui] * dhidden[ui];
                }
                dpooled[i] = acc;
            }
            for ui in 0..u {
                grad[l.b3.start + ui] += dhidden[ui];
            }

            let mut dz2 = vec![0.0; tr.z2.len()];
            for (i, &at) in tr.argmax.iter().enumerate() {
                dz2[at] += dpooled[i];
            }
            if let Some(m) = mask {
                dz2.iter_mut().zip(m).for_each(|(d, m)| *d *= m);
            }

            let mut da1 = vec![0.0; tr.a1.len()];
            {
                let (head, tail) = grad.split_at_mut(l.b2.start);
                conv_backward(
                    &tr.a1,
                    s.conv1_len(),
                    f1,
                    &p[l.w2.clone()],
                    &dz2,
                    f2,
                    k,
                    st,
                    &mut head[l.w2.clone()],
                    &mut tail[..f2],
                    Some(&mut da1),
                );
            }
            // Activity term: d|a|/da with a = softplus(z) > 0.
            let dz1: Vec<f64> = da1
                .iter()
                .zip(&tr.a1)
                .zip(&tr.z1)
                .map(|((d, a), z)| (d + s.l1 * a.signum() / bsz) * sigmoid(*z))
                .collect();
            let (head, tail) = grad.split_at_mut(l.b1.start);
            conv_backward(
                x,
                s.input_width,
                1,
                &p[l.w1.clone()],
                &dz1,
                f1,
                k,
                st,
                &mut head[l.w1.clone()],
                &mut tail[..f1],
                None,
            );
        }

        if want_grad {
            for i in l.w1.clone() {
                grad[i] += 2.0 * s.l2 * p[i];
            }
        }
        let loss = ce / bsz + self.kernel_penalty() + s.l1 * activity / bsz;
        (loss, grad)
    }

    /// Largest relative error between `analytic` and central differences of
    /// the full loss. Pairs with both magnitudes below 1e-8 use absolute error.
    pub fn gradient_check_against<R: AsRef<[f64]>>(
        &self,
        rows: &[R],
        labels: &[Label],
        epsilon: f64,
        analytic: &[f64],
    ) -> GradCheck {
        let mut probe = self.clone();
        let mut out = GradCheck {
            max_error: 0.0,
            worst_param: 0,
        };
        for i in 0..self.params.len() {
            let orig = probe.params[i];
            probe.params[i] = orig + epsilon;
            let up = probe.loss_and_grad(rows, labels, None, false).0;
            probe.params[i] = orig - epsilon;
            let down = probe.loss_and_grad(rows, labels, None, false).0;
            probe.params[i] = orig;
            let numeric = (up - down) / (2.0 * epsilon);
            let a = analytic[i];
            let scale = a.abs().max(numeric.abs());
            let err = if scale < 1e-8 {
                (a - numeric).abs()
            } else {
                (a - numeric).abs() / scale
            };
            if err > out.max_error {
                out = GradCheck {
                    max_error: err,
                    worst_param: i,
                };
            }
        }
        out
    }

    pub fn gradient_check<R: AsRef<[f64]>>(
        &self,
        rows: &[R],
        labels: &[Label],
        epsilon: f64,
    ) -> Result<GradCheck, CnnError> {
        let (_, g) = self.gradient(rows, labels)?;
        Ok(self.gradient_check_against(rows, labels, epsilon, &g))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum Optimizer {
    Adam { beta1: f64, beta2: f64, epsilon: f64 },
    Sgd { momentum: f64 },
}

impl Optimizer {
    pub fn adam() -> Self {
        Optimizer::Adam {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-7,
        }
    }

    pub fn sgd() -> Self {
        Optimizer::Sgd { momentum: 0.9 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub optimizer: Optimizer,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Stop after this many epochs without validation-loss improvement.
    pub patience: Option<usize>,
    /// Share of rows held out for early stopping.
    pub validation_fraction: f64,
    pub seed: u64,
}

impl TrainConfig {
    pub fn new(seed: u64) -> Self {
        TrainConfig {
            optimizer: Optimizer::adam(),
            learning_rate: 1e-3,
            batch_size: 32,
            epochs: 30,
            patience: Some(5),
            validation_fraction: 0.1,
            seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub train_acc: f64,
    pub val_acc: Option<f64>,
}

fn accuracy(net: &Network, rows: &[&[f64]], labels: &[Label]) -> f64 {
    if rows.is_empty() {
        return 0.0;
    }
    let hits = rows
        .iter()
        .zip(labels)
        .filter(|(r, l)| {
            let p = net.trace(r, None).probs;
            Label::from_bool(p[1] > p[0]) == **l
        })
        .count();
    hits as f64 / rows.len() as f64
}

/// Mini-batch training with seeded shuffles and dropout masks. With a
/// validation split, the weights of the best validation-loss epoch are kept.
pub fn train<R: AsRef<[f64]>>(
    net: &mut Network,
    rows: &[R],
    labels: &[Label],
    cfg: &TrainConfig,
) -> Result<Vec<EpochLog>, CnnError> {
    net.check_rows(rows)?;
    if rows.len() != labels.len() {
        return Err(CnnError::LabelMismatch {
            rows: rows.len(),
            labels: labels.len(),
        });
    }
    if rows.is_empty() {
        return Err(CnnError::EmptyData);
    }
    if !(cfg.learning_rate >= 0.0) || cfg.batch_size == 0 || !(0.0..1.0).contains(&cfg.validation_fraction) {
        return Err(CnnError::BadConfig(format!("{cfg:?}")));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut idx: Vec<usize> = (0..rows.len()).collect();
    idx.shuffle(&mut rng);
    let n_val = if rows.len() >= 10 {
        (rows.len() as f64 * cfg.validation_fraction).round() as usize
    } else {
        0
    };
    let (val_idx, train_idx) = idx.split_at(n_val);
    let mut train_idx = train_idx.to_vec();
    let val_rows: Vec<&[f64]> = val_idx.iter().map(|&i| rows[i].as_ref()).collect();
    let val_labels: Vec<Label> = val_idx.iter().map(|&i| labels[i]).collect();

    let np = net.params.len();
    let mut m = vec![0.0; np];
    let mut v = vec![0.0; np];
    let mut step = 0i32;
    let mask_len = net.spec.conv2_len() * net.spec.conv2_filters;

    let mut log = Vec::new();
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut stale = 0;
    for epoch in 1..=cfg.epochs {
        train_idx.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut batches = 0;
        for batch in train_idx.chunks(cfg.batch_size) {
            let brows: Vec<&[f64]> = batch.iter().map(|&i| rows[i].as_ref()).collect();
            let blabels: Vec<Label> = batch.iter().map(|&i| labels[i]).collect();
            let masks: Vec<Vec<f64>> = (0..batch.len())
                .map(|_| dropout_mask(mask_len, net.spec.dropout_rate, &mut rng))
                .collect();
            let (loss, g) = net.loss_and_grad(&brows, &blabels, Some(&masks), true);
            loss_sum += loss;
            batches += 1;
            step += 1;
            let lr = cfg.learning_rate;
            match cfg.optimizer {
                Optimizer::Adam { beta1, beta2, epsilon } => {
                    let c1 = 1.0 - beta1.powi(step);
                    let c2 = 1.0 - beta2.powi(step);
                    for i in 0..np {
                        m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                        v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                        net.params[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + epsilon);
                    }
                }
                Optimizer::Sgd { momentum } => {
                    for i in 0..np {
                        m[i] = momentum * m[i] - lr * g[i];
                        net.params[i] += m[i];
                    }
                }
            }
        }

        let train_rows: Vec<&[f64]> = train_idx.iter().map(|&i| rows[i].as_ref()).collect();
        let train_labels: Vec<Label> = train_idx.iter().map(|&i| labels[i]).collect();
        let entry = EpochLog {
            epoch,
            loss: loss_sum / batches.max(1) as f64,
            train_acc: accuracy(net, &train_rows, &train_labels),
            val_acc: (!val_rows.is_empty()).then(|| accuracy(net, &val_rows, &val_labels)),
        };
        log.push(entry);

        if val_rows.is_empty() {
            continue;
        }
        let val_loss = net.loss_and_grad(&val_rows, &val_labels, None, false).0;
        if best.as_ref().is_none_or(|(b, _)| val_loss < *b) {
            best = Some((val_loss, net.params.clone()));
            stale = 0;
        } else {
            stale += 1;
            if cfg.patience.is_some_and(|p| stale >= p) {
                break;
            }
        }
    }
    if let Some((_, params)) = best {
        net.params = params;
    }
    Ok(log)
}
