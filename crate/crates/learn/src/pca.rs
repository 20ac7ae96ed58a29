//! Principal component analysis on standardized features.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum PcaError {
    #[error("need at least 2 rows, got {rows}")]
    TooFewRows { rows: usize },
    #[error("k={k} outside 1..={dim}")]
    KOutOfRange { k: usize, dim: usize },
    #[error("expected {expected} columns, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
}

/// Per-column centering and unit-variance scaling (sample variance).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    /// Standard deviation, or 1 for constant columns.
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn fit(x: ArrayView2<f64>) -> Result<Self, PcaError> {
        let n = x.nrows();
        if n < 2 {
            return Err(PcaError::TooFewRows { rows: n });
        }
        let mean = x.mean_axis(Axis(0)).expect("rows");
        let scale = x
            .axis_iter(Axis(1))
            .zip(mean.iter())
            .map(|(col, &m)| {
                let var = col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1) as f64;
                if var > 0.0 {
                    var.sqrt()
                } else {
                    1.0
                }
            })
            .collect();
        Ok(Standardizer {
            mean: mean.to_vec(),
            scale,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn transform(&self, x: ArrayView2<f64>) -> Result<Array2<f64>, PcaError> {
        if x.ncols() != self.dim() {
            return Err(PcaError::DimensionMismatch {
                expected: self.dim(),
                found: x.ncols(),
            });
        }
        let mean = ArrayView1::from(&self.mean);
        let scale = ArrayView1::from(&self.scale);
        Ok((&x - &mean) / &scale)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    pub scaler: Standardizer,
    /// `k` rows, each a unit-length direction in standardized space.
    pub components: Vec<Vec<f64>>,
    /// Variance captured by each component, nonincreasing.
    pub explained_variance: Vec<f64>,
    /// Total standardized variance (trace of the covariance).
    pub total_variance: f64,
}

impl PcaModel {
    pub fn k(&self) -> usize {
        self.components.len()
    }

    pub fn input_dim(&self) -> usize {
        self.scaler.dim()
    }

    pub fn explained_ratio(&self) -> Vec<f64> {
        self.explained_variance
            .iter()
            .map(|v| if self.total_variance > 0.0 { v / self.total_variance } else { 0.0 })
            .collect()
    }

    fn component_matrix(&self) -> Array2<f64> {
        let d = self.input_dim();
        Array2::from_shape_fn((d, self.k()), |(i, j)| self.components[j][i])
    }

    pub fn transform(&self, x: ArrayView2<f64>) -> Result<Array2<f64>, PcaError> {
        Ok(self.scaler.transform(x)?.dot(&self.component_matrix()))
    }

    /// Maps PC scores back into standardized feature space.
    pub fn inverse_project(&self, scores: ArrayView2<f64>) -> Array2<f64> {
        scores.dot(&self.component_matrix().t())
    }
}

/// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.
///
/// Returns eigenvalues in descending order and the matching unit
/// eigenvectors as columns.
pub fn symmetric_eigen(a: &Array2<f64>) -> (Array1<f64>, Array2<f64>) {
    let n = a.nrows();
    let mut a = a.clone();
    let mut v = Array2::<f64>::eye(n);
    let scale: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);

    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[[i, j]] * a[[i, j]])
            .sum::<f64>()
            .sqrt();
        if off <= 1e-15 * scale {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[[p, q]];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[[q, q]] - a[[p, p]]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[[k, p]];
                    let akq = a[[k, q]];
                    a[[k, p]] = c * akp - s * akq;
                    a[[k, q]] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[[p, k]];
                    let aqk = a[[q, k]];
                    a[[p, k]] = c * apk - s * aqk;
                    a[[q, k]] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[[k, p]];
                    let vkq = v[[k, q]];
                    v[[k, p]] = c * vkp - s * vkq;
                    v[[k, q]] = s * vkp + c * vkq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[[j, j]].total_cmp(&a[[i, i]]).then(i.cmp(&j)));
    let values = Array1::from_iter(order.iter().map(|&i| a[[i, i]]));
    let mut vectors = Array2::zeros((n, n));
    for (dst, &src) in order.iter().enumerate() {
        vectors.column_mut(dst).assign(&v.column(src));
    }
    (values, vectors)
}

/// Flips `v` so its largest-magnitude entry (first on ties) is positive.
fn fix_sign(v: &mut [f64]) {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() {
            best = i;
        }
    }
    if v[best] < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

pub fn pca_fit(x: ArrayView2<f64>, k: usize) -> Result<PcaModel, PcaError> {
    let d = x.ncols();
    if k == 0 || k > d {
        return Err(PcaError::KOutOfRange { k, dim: d });
    }
    let scaler = Standardizer::fit(x)?;
    let z = scaler.transform(x)?;
    let cov = z.t().dot(&z) / (x.nrows() - 1) as f64;
    let (values, vectors) = symmetric_eigen(&cov);
    let components = (0..k)
        .map(|j| {
            let mut c = vectors.column(j).to_vec();
            fix_sign(&mut c);
            c
        })
        .collect();
    Ok(PcaModel {
        scaler,
        components,
        explained_variance: values.iter().take(k).map(|v| v.max(0.0)).collect(),
        total_variance: cov.diag().sum(),
    })
}

pub fn pca_transform(model: &PcaModel, x: ArrayView2<f64>) -> Result<Array2<f64>, PcaError> {
    model.transform(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn jacobi_diagonalizes() {
        let a = array![[4.0, 1.0, 2.0], [1.0, 3.0, 0.5], [2.0, 0.5, 5.0]];
        let (vals, vecs) = symmetric_eigen(&a);
        for j in 0..3 {
            let v = vecs.column(j);
            let av = a.dot(&v);
            for i in 0..3 {
                assert!((av[i] - vals[j] * v[i]).abs() < 1e-12);
            }
        }
        assert!(vals[0] >= vals[1] && vals[1] >= vals[2]);
        assert!((vals.sum() - 12.0).abs() < 1e-12);
    }

    #[test]
    fn collinear_data_is_rank_one() {
        let x = Array2::from_shape_fn((20, 2), |(i, j)| if j == 0 { i as f64 } else { 3.0 * i as f64 });
        let m = pca_fit(x.view(), 1).unwrap();
        assert!((m.explained_ratio()[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn mean_row_maps_to_origin() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Array2::from_shape_fn((30, 5), |_| rng.random::<f64>());
        let m = pca_fit(x.view(), 3).unwrap();
        let mean = Array2::from_shape_vec((1, 5), m.scaler.mean.clone()).unwrap();
        assert!(m.transform(mean.view()).unwrap().iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn constant_column_gets_unit_scale() {
        let x = array![[1.0, 7.0], [2.0, 7.0], [4.0, 7.0]];
        let m = pca_fit(x.view(), 2).unwrap();
        assert_eq!(m.scaler.scale[1], 1.0);
        assert!(m.explained_variance.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn errors() {
        let x = array![[1.0, 2.0], [3.0, 4.0]];
        assert_eq!(pca_fit(x.view(), 3).unwrap_err(), PcaError::KOutOfRange { k: 3, dim: 2 });
        assert_eq!(pca_fit(x.view(), 0).unwrap_err(), PcaError::KOutOfRange { k: 0, dim: 2 });
        assert_eq!(
            pca_fit(x.slice(ndarray::s![..1, ..]), 1).unwrap_err(),
            PcaError::TooFewRows { rows: 1 }
        );
        let m = pca_fit(x.view(), 1).unwrap();
        assert!(matches!(m.transform(array![[1.0]].view()), Err(PcaError::DimensionMismatch { .. })));
    }

    #[test]
    fn sign_convention() {
        let mut v = vec![0.1, -0.9, 0.3];
        fix_sign(&mut v);
        assert_eq!(v, vec![-0.1, 0.9, -0.3]);
    }
}
