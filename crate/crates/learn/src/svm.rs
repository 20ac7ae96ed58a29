//! Kernel SVM trained by sequential minimal optimization.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, ArrayView1, ArrayView2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use restrictml_core::Label;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pca::{pca_fit, PcaError, PcaModel, Standardizer};

pub const DEFAULT_C: f64 = 1.0;
pub const DEFAULT_TOLERANCE: f64 = 1e-3;
pub const DEFAULT_DEGREE: u32 = 3;
pub const DEFAULT_MAX_PASSES: usize = 1000;

/// Curvature floor for indefinite kernels (sigmoid).
const TAU: f64 = 1e-12;
/// Kernel row cache budget in f64 entries (~256 MB).
const CACHE_ENTRIES: usize = 32 << 20;

#[derive(Debug, Error)]
pub enum SvmError {
    #[error("training data needs both classes")]
    SingleClass,
    #[error("{rows} rows but {labels} labels")]
    LabelMismatch { rows: usize, labels: usize },
    #[error("expected {expected} features, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("invalid hyperparameter: {0}")]
    BadParameter(String),
    #[error(transparent)]
    Pca(#[from] PcaError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelKind {
    Linear,
    Polynomial,
    Rbf,
    Sigmoid,
}

impl FromStr for KernelKind {
    type Err = SvmError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "linear" => Ok(KernelKind::Linear),
            "poly" | "polynomial" => Ok(KernelKind::Polynomial),
            "rbf" => Ok(KernelKind::Rbf),
            "sigmoid" => Ok(KernelKind::Sigmoid),
            other => Err(SvmError::BadParameter(format!("unknown kernel {other:?}"))),
        }
    }
}

impl fmt::Display for KernelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            KernelKind::Linear => "linear",
            KernelKind::Polynomial => "poly",
            KernelKind::Rbf => "rbf",
            KernelKind::Sigmoid => "sigmoid",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub kind: KernelKind,
    pub degree: u32,
    pub gamma: f64,
    pub coef0: f64,
}

impl KernelSpec {
    pub fn new(kind: KernelKind, degree: u32, gamma: f64, coef0: f64) -> Result<Self, SvmError> {
        if degree < 1 {
            return Err(SvmError::BadParameter("degree must be >= 1".into()));
        }
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(SvmError::BadParameter(format!("gamma must be > 0, got {gamma}")));
        }
        Ok(KernelSpec {
            kind,
            degree,
            gamma,
            coef0,
        })
    }

    /// Default hyperparameters for input dimension `dim`: γ = 1/dim.
    pub fn with_defaults(kind: KernelKind, dim: usize) -> Self {
        KernelSpec {
            kind,
            degree: DEFAULT_DEGREE,
            gamma: 1.0 / dim.max(1) as f64,
            coef0: 0.0,
        }
    }

    pub fn eval(&self, u: ArrayView1<f64>, v: ArrayView1<f64>) -> f64 {
        match self.kind {
            KernelKind::Linear => u.dot(&v),
            KernelKind::Polynomial => (self.gamma * u.dot(&v) + self.coef0).powi(self.degree as i32),
            KernelKind::Rbf => {
                let d2: f64 = u.iter().zip(v.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
                (-self.gamma * d2).exp()
            }
            KernelKind::Sigmoid => (self.gamma * u.dot(&v) + self.coef0).tanh(),
        }
    }
}

pub fn kernel_eval(spec: &KernelSpec, u: &[f64], v: &[f64]) -> Result<f64, SvmError> {
    if u.len() != v.len() {
        return Err(SvmError::DimensionMismatch {
            expected: u.len(),
            found: v.len(),
        });
    }
    Ok(spec.eval(ArrayView1::from(u), ArrayView1::from(v)))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmoParams {
    pub kernel: KernelSpec,
    pub c: f64,
    pub tolerance: f64,
    /// Iteration budget in units of the training-set size.
    pub max_passes: usize,
    pub seed: u64,
}

impl SmoParams {
    pub fn new(kernel: KernelSpec, seed: u64) -> Self {
        SmoParams {
            kernel,
            c: DEFAULT_C,
            tolerance: DEFAULT_TOLERANCE,
            max_passes: DEFAULT_MAX_PASSES,
            seed,
        }
    }
}

/// Feature preprocessing baked into a model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum InputTransform {
    Identity,
    Standardize(Standardizer),
    Pca(PcaModel),
}

impl InputTransform {
    pub fn input_dim(&self) -> Option<usize> {
        match self {
            InputTransform::Identity => None,
            InputTransform::Standardize(s) => Some(s.dim()),
            InputTransform::Pca(p) => Some(p.input_dim()),
        }
    }

    pub fn apply(&self, x: ArrayView2<f64>) -> Result<Array2<f64>, SvmError> {
        Ok(match self {
            InputTransform::Identity => x.to_owned(),
            InputTransform::Standardize(s) => s.transform(x)?,
            InputTransform::Pca(p) => p.transform(x)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmModel {
    pub kernel: KernelSpec,
    pub c_penalty: f64,
    pub tolerance: f64,
    pub transform: InputTransform,
    pub support_vectors: Vec<Vec<f64>>,
    /// `αᵢ·yᵢ` per support vector.
    pub dual_coefficients: Vec<f64>,
    pub bias: f64,
}

impl SvmModel {
    /// Raw decision values on already-transformed rows.
    pub fn decision_values_raw(&self, x: ArrayView2<f64>) -> Result<Vec<f64>, SvmError> {
        let dim = self.support_vectors.first().map_or(x.ncols(), Vec::len);
        if x.ncols() != dim {
            return Err(SvmError::DimensionMismatch {
                expected: dim,
                found: x.ncols(),
            });
        }
        Ok(x.rows()
            .into_iter()
            .map(|row| {
                self.support_vectors
                    .iter()
                    .zip(&self.dual_coefficients)
                    .map(|(sv, a)| a * self.kernel.eval(ArrayView1::from(sv), row))
                    .sum::<f64>()
                    + self.bias
            })
            .collect())
    }

    pub fn decision_values(&self, x: ArrayView2<f64>) -> Result<Vec<f64>, SvmError> {
        let z = self.transform.apply(x)?;
        self.decision_values_raw(z.view())
    }

    /// Sign of the decision value; exact zero counts as applicable.
    pub fn predict(&self, x: ArrayView2<f64>) -> Result<Vec<Label>, SvmError> {
        Ok(self.decision_values(x)?.into_iter().map(|f| Label::from_bool(f >= 0.0)).collect())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Final multiplier of every training row.
    pub alphas: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// FIFO cache of kernel rows `Q[i][·] = yᵢyⱼK(xᵢ,xⱼ)`.
struct QCache<'a> {
    x: ArrayView2<'a, f64>,
    y: &'a [f64],
    kernel: KernelSpec,
    rows: Vec<Option<Vec<f64>>>,
    order: VecDeque<usize>,
    capacity: usize,
}

impl<'a> QCache<'a> {
    fn new(x: ArrayView2<'a, f64>, y: &'a [f64], kernel: KernelSpec) -> Self {
        let n = x.nrows();
        QCache {
            x,
            y,
            kernel,
            rows: vec![None; n],
            order: VecDeque::new(),
            capacity: (CACHE_ENTRIES / n.max(1)).max(2),
        }
    }

    fn ensure(&mut self, i: usize) {
        if self.rows[i].is_some() {
            return;
        }
        if self.order.len() >= self.capacity {
            if let Some(old) = self.order.pop_front() {
                self.rows[old] = None;
            }
        }
        let xi = self.x.row(i);
        let yi = self.y[i];
        let row = self
            .x
            .rows()
            .into_iter()
            .zip(self.y)
            .map(|(xj, &yj)| yi * yj * self.kernel.eval(xi, xj))
            .collect();
        self.rows[i] = Some(row);
        self.order.push_back(i);
    }

    /// Rows `i` and `j`, computing whichever is missing.
    fn pair(&mut self, i: usize, j: usize) -> (&[f64], &[f64]) {
        self.ensure(i);
        self.ensure(j);
        if self.rows[i].is_none() {
            // `j` evicted `i` at capacity 1-ish; recompute without eviction.
            self.capacity += 1;
            self.ensure(i);
        }
        (
            self.rows[i].as_deref().expect("cached"),
            self.rows[j].as_deref().expect("cached"),
        )
    }
}

/// Most violating `up` index in `active` with its score, plus the
/// (max over up, min over low) of `-y·grad`. Earlier entries win ties.
fn violation_bounds(
    active: &[usize],
    alpha: &[f64],
    y: &[f64],
    grad: &[f64],
    up: impl Fn(f64, f64) -> bool,
    low: impl Fn(f64, f64) -> bool,
) -> (Option<usize>, (f64, f64)) {
    let mut gmax = f64::NEG_INFINITY;
    let mut gmin = f64::INFINITY;
    let mut i = None;
    for &t in active {
        let v = -y[t] * grad[t];
        if up(alpha[t], y[t]) && v > gmax {
            gmax = v;
            i = Some(t);
        }
        if low(alpha[t], y[t]) && v < gmin {
            gmin = v;
        }
    }
    (i, (gmax, gmin))
}

/// A bounded alpha whose violation points away from the feasible region.
fn can_shrink(a: f64, yt: f64, v: f64, c: f64, gmax: f64, gmin: f64) -> bool {
    let at_upper = a >= c;
    let at_lower = a <= 0.0;
    // At C with y=+1 (or at 0 with y=-1) the row sits only in `low`.
    if (at_upper && yt > 0.0) || (at_lower && yt < 0.0) {
        v > gmax
    } else if at_upper || at_lower {
        v < gmin
    } else {
        false
    }
}

/// Rebuilds the gradient of rows outside `active`.
fn restore_gradient(cache: &mut QCache, active: &[usize], alpha: &[f64], grad_bar: &[f64], grad: &mut [f64], c: f64) {
    let n = grad.len();
    let mut inside = vec![false; n];
    for &t in active {
        inside[t] = true;
    }
    let outside: Vec<usize> = (0..n).filter(|&t| !inside[t]).collect();
    if outside.is_empty() {
        return;
    }
    for &k in &outside {
        grad[k] = grad_bar[k] - 1.0;
    }
    for t in 0..n {
        if alpha[t] > 0.0 && alpha[t] < c {
            cache.ensure(t);
            let q = cache.rows[t].as_deref().expect("cached");
            for &k in &outside {
                grad[k] += alpha[t] * q[k];
            }
        }
    }
}

/// SMO on the dual, selecting the maximal-violating `i` and the
/// second-order-best `j`, until the KKT gap drops below `tolerance`.
pub fn svm_train(x: ArrayView2<f64>, labels: &[Label], params: &SmoParams) -> Result<(SvmModel, TrainReport), SvmError> {
    let n = x.nrows();
    if labels.len() != n {
        return Err(SvmError::LabelMismatch { rows: n, labels: labels.len() });
    }
    if !labels.contains(&Label::Applicable) || !labels.contains(&Label::Inapplicable) {
        return Err(SvmError::SingleClass);
    }
    if !(params.c > 0.0) || !(params.tolerance > 0.0) {
        return Err(SvmError::BadParameter("C and tolerance must be > 0".into()));
    }
    let c = params.c;
    let y: Vec<f64> = labels.iter().map(|l| l.signed()).collect();
    let kernel = params.kernel;
    let qd: Vec<f64> = x.rows().into_iter().map(|r| kernel.eval(r, r)).collect();

    // Seeded visiting order decides ties among equally violating indices.
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(params.seed));

    let mut alpha = vec![0.0; n];
    let mut grad = vec![-1.0; n];
    // Gradient contribution of the alphas sitting at C, kept over all rows
    // so shrunk entries can be restored.
    let mut grad_bar = vec![0.0; n];
    let mut active = order.clone();
    let mut unshrunk = false;
    let mut cache = QCache::new(x, &y, kernel);
    let budget = params.max_passes.saturating_mul(n).max(1);
    let shrink_every = n.min(1000);
    let mut countdown = shrink_every;

    let up = |a: f64, yt: f64| (yt > 0.0 && a < c) || (yt < 0.0 && a > 0.0);
    let low = |a: f64, yt: f64| (yt < 0.0 && a < c) || (yt > 0.0 && a > 0.0);

    let mut iterations = 0;
    let mut converged = false;
    while iterations < budget {
        countdown -= 1;
        if countdown == 0 {
            countdown = shrink_every;
            let (gmax, gmin) = violation_bounds(&active, &alpha, &y, &grad, up, low).1;
            if !unshrunk && gmax - gmin <= 10.0 * params.tolerance {
                unshrunk = true;
                restore_gradient(&mut cache, &active, &alpha, &grad_bar, &mut grad, c);
                active = order.clone();
            }
            active.retain(|&t| !can_shrink(alpha[t], y[t], -y[t] * grad[t], c, gmax, gmin));
        }

        let (mut i, (mut gmax, mut gmin)) = violation_bounds(&active, &alpha, &y, &grad, up, low);
        if i.is_none() || gmax - gmin < params.tolerance {
            if active.len() == n {
                converged = true;
                break;
            }
            // Optimal on the shrunk set; check again on every row.
            restore_gradient(&mut cache, &active, &alpha, &grad_bar, &mut grad, c);
            active = order.clone();
            (i, (gmax, gmin)) = violation_bounds(&active, &alpha, &y, &grad, up, low);
            countdown = 1;
            if i.is_none() || gmax - gmin < params.tolerance {
                converged = true;
                break;
            }
        }
        let i = i.expect("checked above");

        cache.ensure(i);
        let qi = cache.rows[i].as_deref().expect("cached");
        let mut j = usize::MAX;
        let mut best = f64::INFINITY;
        for &t in &active {
            if !low(alpha[t], y[t]) {
                continue;
            }
            let b = gmax + y[t] * grad[t];
            if b <= 0.0 {
                continue;
            }
            // qi[t] = yᵢyₜK(i,t), so the curvature is Kᵢᵢ + Kₜₜ − 2K(i,t).
            let mut a = qd[i] + qd[t] - 2.0 * y[i] * y[t] * qi[t];
            if a <= 0.0 {
                a = TAU;
            }
            let score = -(b * b) / a;
            if score < best {
                best = score;
                j = t;
            }
        }
        if j == usize::MAX {
            converged = active.len() == n;
            if converged {
                break;
            }
            restore_gradient(&mut cache, &active, &alpha, &grad_bar, &mut grad, c);
            active = order.clone();
            countdown = 1;
            continue;
        }

        let (qi, qj) = cache.pair(i, j);
        let (old_i, old_j) = (alpha[i], alpha[j]);
        if y[i] != y[j] {
            let mut quad = qd[i] + qd[j] + 2.0 * qi[j];
            if quad <= 0.0 {
                quad = TAU;
            }
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = alpha[i] - alpha[j];
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > 0.0 {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = diff;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = -diff;
            }
            if diff > 0.0 {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = c - diff;
                }
            } else if alpha[j] > c {
                alpha[j] = c;
                alpha[i] = c + diff;
            }
        } else {
            let mut quad = qd[i] + qd[j] - 2.0 * qi[j];
            if quad <= 0.0 {
                quad = TAU;
            }
            let delta = (grad[i] - grad[j]) / quad;
            let sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > c {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = sum - c;
                }
            } else if alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = sum;
            }
            if sum > c {
                if alpha[j] > c {
                    alpha[j] = c;
                    alpha[i] = sum - c;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = sum;
            }
        }

        let (di, dj) = (alpha[i] - old_i, alpha[j] - old_j);
        for &k in &active {
            grad[k] += qi[k] * di + qj[k] * dj;
        }
        for (t, old, q) in [(i, old_i, qi), (j, old_j, qj)] {
            let was = old >= c;
            let now = alpha[t] >= c;
            if was != now {
                let sign = if now { c } else { -c };
                for (g, &qk) in grad_bar.iter_mut().zip(q) {
                    *g += sign * qk;
                }
            }
        }
        iterations += 1;
    }
    if active.len() < n {
        restore_gradient(&mut cache, &active, &alpha, &grad_bar, &mut grad, c);
    }

    // Midpoint of the feasible bias interval.
    let (mut m, mut mm) = (f64::NEG_INFINITY, f64::INFINITY);
    for t in 0..n {
        let v = -y[t] * grad[t];
        if up(alpha[t], y[t]) {
            m = m.max(v);
        }
        if low(alpha[t], y[t]) {
            mm = mm.min(v);
        }
    }
    let bias = match (m.is_finite(), mm.is_finite()) {
        (true, true) => (m + mm) / 2.0,
        (true, false) => m,
        (false, true) => mm,
        (false, false) => 0.0,
    };

    let mut support_vectors = Vec::new();
    let mut dual_coefficients = Vec::new();
    for t in 0..n {
        if alpha[t] > 0.0 {
            support_vectors.push(x.row(t).to_vec());
            dual_coefficients.push(alpha[t] * y[t]);
        }
    }
    let model = SvmModel {
        kernel,
        c_penalty: c,
        tolerance: params.tolerance,
        transform: InputTransform::Identity,
        support_vectors,
        dual_coefficients,
        bias,
    };
    Ok((
        model,
        TrainReport {
            alphas: alpha,
            iterations,
            converged,
        },
    ))
}

/// How many principal components to feed the SVM; 0 means standardized raw features.
pub fn svm_fit_pipeline(
    x: ArrayView2<f64>,
    labels: &[Label],
    pcs: usize,
    params: &SmoParams,
) -> Result<(SvmModel, TrainReport), SvmError> {
    let transform = if pcs == 0 {
        InputTransform::Standardize(Standardizer::fit(x)?)
    } else {
        InputTransform::Pca(pca_fit(x, pcs)?)
    };
    let z = transform.apply(x)?;
    let (mut model, report) = svm_train(z.view(), labels, params)?;
    model.transform = transform;
    Ok((model, report))
}

pub fn svm_predict(model: &SvmModel, x: ArrayView2<f64>) -> Result<Vec<Label>, SvmError> {
    model.predict(x)
}

#[derive(Debug, Clone, PartialEq)]
pub struct KktAudit {
    pub checked: usize,
    pub violations: usize,
    pub worst: f64,
    /// `|Σ αᵢyᵢ|`.
    pub equality_residual: f64,
}

impl KktAudit {
    pub fn passed(&self) -> bool {
        self.violations == 0
    }
}

/// Recomputes `y·f(x)` from scratch for every training row and checks the
/// complementary-slackness conditions at `tolerance`.
pub fn kkt_audit(model: &SvmModel, x: ArrayView2<f64>, labels: &[Label], alphas: &[f64], tolerance: f64) -> KktAudit {
    let f = model.decision_values_raw(x).expect("training dimension");
    let c = model.c_penalty;
    let mut violations = 0;
    let mut worst: f64 = 0.0;
    let mut eq = 0.0;
    for ((&fx, l), &a) in f.iter().zip(labels).zip(alphas) {
        let yf = l.signed() * fx;
        eq += a * l.signed();
        let excess = if a <= 0.0 {
            (1.0 - tolerance) - yf
        } else if a >= c {
            yf - (1.0 + tolerance)
        } else {
            (yf - 1.0).abs() - tolerance
        };
        if excess > 0.0 {
            violations += 1;
        }
        worst = worst.max(excess + tolerance);
    }
    KktAudit {
        checked: f.len(),
        violations,
        worst,
        equality_residual: f64::abs(eq),
    }
}
