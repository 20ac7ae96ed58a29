//! Classifiers for restrictml feature datasets: PCA-backed SVM, random
//! forest and a small 1-D CNN.

pub mod cnn;
pub mod forest;
pub mod pca;
pub mod svm;

use ndarray::Array2;
use restrictml_core::Label;

/// Packs equal-length rows into a matrix.
pub fn to_matrix(rows: &[Vec<f64>]) -> Array2<f64> {
    let d = rows.first().map_or(0, Vec::len);
    Array2::from_shape_fn((rows.len(), d), |(i, j)| rows[i][j])
}

/// Share of positions where `a` and `b` agree.
pub fn accuracy(a: &[Label], b: &[Label]) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    a.iter().zip(b).filter(|(x, y)| x == y).count() as f64 / a.len() as f64
}
