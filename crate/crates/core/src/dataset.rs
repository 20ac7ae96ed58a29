//! Labeled feature datasets: stratified splitting, the correlation screen,
//! and CSV persistence.

use std::collections::HashSet;
use std::io;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::features::{column_names, FeatureVector, SCALAR_COLUMNS};
use crate::synthsim::Label;

pub const DEFAULT_TRAIN_SIZE: usize = 50_000;
pub const DEFAULT_TRAIN_TRUE_RATIO: f64 = 0.60;
pub const DEFAULT_TEST_SIZE: usize = 26_622;
pub const DEFAULT_TEST_TRUE_RATIO: f64 = 0.50;
pub const DEFAULT_CORRELATION_THRESHOLD: f64 = 0.90;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("not enough {class} entries: need {needed}, have {available}")]
    Capacity {
        class: Label,
        needed: usize,
        available: usize,
    },
    #[error("need at least 2 rows, got {rows}")]
    InsufficientData { rows: usize },
    #[error("invalid split: {0}")]
    BadSplit(String),
    #[error("schema mismatch: {0}")]
    Schema(String),
    #[error("row {row}: {message}")]
    BadRow { row: usize, message: String },
    #[error("rows have inconsistent SEQ widths")]
    MixedWidths,
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Feature vectors sharing one SEQ width. Every vector carries a label.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LabeledDataset {
    width: usize,
    vectors: Vec<FeatureVector>,
}

impl LabeledDataset {
    pub fn new(width: usize, vectors: Vec<FeatureVector>) -> Result<Self, DatasetError> {
        if vectors.iter().any(|v| v.width() != width) {
            return Err(DatasetError::MixedWidths);
        }
        if let Some(i) = vectors.iter().position(|v| v.label.is_none()) {
            return Err(DatasetError::BadRow {
                row: i,
                message: "missing label".into(),
            });
        }
        Ok(LabeledDataset { width, vectors })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn vectors(&self) -> &[FeatureVector] {
        &self.vectors
    }

    pub fn labels(&self) -> Vec<Label> {
        self.vectors.iter().map(|v| v.label.expect("labeled")).collect()
    }

    /// `(applicable, inapplicable)` counts.
    pub fn class_counts(&self) -> (usize, usize) {
        let t = self
            .vectors
            .iter()
            .filter(|v| v.label == Some(Label::Applicable))
            .count();
        (t, self.vectors.len() - t)
    }

    /// Number of columns in [`LabeledDataset::rows`].
    pub fn dim(&self) -> usize {
        self.width + SCALAR_COLUMNS
    }

    /// All feature rows (label excluded).
    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.vectors.iter().map(FeatureVector::to_row).collect()
    }

    /// Only the SEQ columns of every row.
    pub fn seq_rows(&self) -> Vec<Vec<f64>> {
        self.vectors.iter().map(|v| v.seq_encoded.clone()).collect()
    }

    pub fn subset(&self, indices: &[usize]) -> LabeledDataset {
        LabeledDataset {
            width: self.width,
            vectors: indices.iter().map(|&i| self.vectors[i].clone()).collect(),
        }
    }
}

/// Identity of an entry for the "unique entries" rule: the subsequence itself.
fn uniqueness_key(v: &FeatureVector) -> (Vec<u64>, usize) {
    (v.seq_encoded.iter().map(|x| x.to_bits()).collect(), v.len)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitSpec {
    pub train_size: usize,
    pub train_true_ratio: f64,
    pub test_size: usize,
    pub test_true_ratio: f64,
    pub seed: u64,
}

impl SplitSpec {
    pub fn standard(seed: u64) -> Self {
        SplitSpec {
            train_size: DEFAULT_TRAIN_SIZE,
            train_true_ratio: DEFAULT_TRAIN_TRUE_RATIO,
            test_size: DEFAULT_TEST_SIZE,
            test_true_ratio: DEFAULT_TEST_TRUE_RATIO,
            seed,
        }
    }

    /// `(true, false)` quota, rounding the true share half-up.
    pub fn quota(size: usize, true_ratio: f64) -> (usize, usize) {
        let t = ((size as f64) * true_ratio + 0.5).floor() as usize;
        let t = t.min(size);
        (t, size - t)
    }
}

/// Draws disjoint train and test sets with exact class quotas.
///
/// The pool is first reduced to unique subsequences (first occurrence kept).
/// Each split lists its rows in pool order.
pub fn stratified_sample(
    pool: &LabeledDataset,
    spec: &SplitSpec,
) -> Result<(LabeledDataset, LabeledDataset), DatasetError> {
    for r in [spec.train_true_ratio, spec.test_true_ratio] {
        if !(0.0..=1.0).contains(&r) {
            return Err(DatasetError::BadSplit(format!("ratio {r} outside [0, 1]")));
        }
    }
    let mut seen = HashSet::new();
    let mut trues = Vec::new();
    let mut falses = Vec::new();
    for (i, v) in pool.vectors.iter().enumerate() {
        if !seen.insert(uniqueness_key(v)) {
            continue;
        }
        match v.label {
            Some(Label::Applicable) => trues.push(i),
            _ => falses.push(i),
        }
    }

    let (train_t, train_f) = SplitSpec::quota(spec.train_size, spec.train_true_ratio);
    let (test_t, test_f) = SplitSpec::quota(spec.test_size, spec.test_true_ratio);
    for (class, needed, available) in [
        (Label::Applicable, train_t + test_t, trues.len()),
        (Label::Inapplicable, train_f + test_f, falses.len()),
    ] {
        if needed > available {
            return Err(DatasetError::Capacity {
                class,
                needed,
                available,
            });
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    trues.shuffle(&mut rng);
    falses.shuffle(&mut rng);

    let mut train: Vec<usize> = trues[..train_t].iter().chain(&falses[..train_f]).copied().collect();
    let mut test: Vec<usize> = trues[train_t..train_t + test_t]
        .iter()
        .chain(&falses[train_f..train_f + test_f])
        .copied()
        .collect();
    train.sort_unstable();
    test.sort_unstable();
    Ok((pool.subset(&train), pool.subset(&test)))
}

/// Pearson correlation of every pair of feature columns.
///
/// Constant columns correlate 0 with everything else; the diagonal is 1.
pub fn correlation_matrix(data: &LabeledDataset) -> Result<Vec<Vec<f64>>, DatasetError> {
    correlation_of_rows(&data.rows())
}

/// [`correlation_matrix`] over raw rows.
pub fn correlation_of_rows(rows: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, DatasetError> {
    if rows.len() < 2 {
        return Err(DatasetError::InsufficientData { rows: rows.len() });
    }
    let n = rows.len() as f64;
    let d = rows[0].len();
    let mut means = vec![0.0; d];
    for r in rows {
        for (m, x) in means.iter_mut().zip(r) {
            *m += x;
        }
    }
    means.iter_mut().for_each(|m| *m /= n);

    let mut cov = vec![vec![0.0; d]; d];
    let mut centered = vec![0.0; d];
    for r in rows {
        for j in 0..d {
            centered[j] = r[j] - means[j];
        }
        for i in 0..d {
            let ci = centered[i];
            if ci == 0.0 {
                continue;
            }
            for j in i..d {
                cov[i][j] += ci * centered[j];
            }
        }
    }

    let mut corr = vec![vec![0.0; d]; d];
    for i in 0..d {
        corr[i][i] = 1.0;
        for j in i + 1..d {
            let denom = (cov[i][i] * cov[j][j]).sqrt();
            let r = if denom > 0.0 {
                (cov[i][j] / denom).clamp(-1.0, 1.0)
            } else {
                0.0
            };
            corr[i][j] = r;
            corr[j][i] = r;
        }
    }
    Ok(corr)
}

/// Unordered pairs `(i, j)`, `i < j`, with `|r| > threshold`, sorted.
pub fn redundant_pairs(matrix: &[Vec<f64>], threshold: f64) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for i in 0..matrix.len() {
        for j in i + 1..matrix.len() {
            if matrix[i][j].abs() > threshold {
                out.push((i, j));
            }
        }
    }
    out
}

/// Formats like C's `%.17g`: 17 significant digits, trailing zeros dropped.
pub fn format_g17(x: f64) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    if !x.is_finite() {
        return format!("{x}");
    }
    let sci = format!("{:.16e}", x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent");
    let exp: i32 = exp.parse().expect("exponent");
    let negative = mantissa.starts_with('-');
    let digits: String = mantissa.chars().filter(|c| c.is_ascii_digit()).collect();
    let sign = if negative { "-" } else { "" };
    if !(-5..17).contains(&exp) {
        let (lead, rest) = digits.split_at(1);
        let rest = rest.trim_end_matches('0');
        return if rest.is_empty() {
            format!("{sign}{lead}e{exp}")
        } else {
            format!("{sign}{lead}.{rest}e{exp}")
        };
    }
    let body = if exp >= 0 {
        let point = exp as usize + 1;
        let (int, frac) = digits.split_at(point);
        let frac = frac.trim_end_matches('0');
        if frac.is_empty() {
            int.to_string()
        } else {
            format!("{int}.{frac}")
        }
    } else {
        let zeros = "0".repeat((-exp - 1) as usize);
        format!("0.{zeros}{}", digits.trim_end_matches('0'))
    };
    format!("{sign}{body}")
}

fn header(width: usize) -> Vec<String> {
    let mut h = column_names(width);
    h.push("label".into());
    h
}

pub fn write_dataset<W: io::Write>(out: W, data: &LabeledDataset) -> Result<(), DatasetError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header(data.width))?;
    let mut record: Vec<String> = Vec::with_capacity(data.dim() + 1);
    for v in &data.vectors {
        record.clear();
        record.extend(v.seq_encoded.iter().map(|&x| format_g17(x)));
        record.push(v.len.to_string());
        record.extend(v.sub_props.iter().chain(&v.ref_props).map(|&x| format_g17(x)));
        record.extend([v.sub_r1, v.sub_r2, v.ref_r1, v.ref_r2].map(format_g17));
        record.push(v.c.to_string());
        record.push(v.ezy.to_string());
        record.push(v.label.expect("labeled").as_u8().to_string());
        w.write_record(&record)?;
    }
    w.flush()?;
    Ok(())
}

pub fn persist_dataset(data: &LabeledDataset, path: impl AsRef<Path>) -> Result<(), DatasetError> {
    let file = std::fs::File::create(path)?;
    write_dataset(io::BufWriter::new(file), data)
}

pub fn read_dataset<R: io::Read>(input: R) -> Result<LabeledDataset, DatasetError> {
    let mut rdr = csv::Reader::from_reader(input);
    let head: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let width = head.iter().take_while(|h| h.starts_with('n') && h[1..].parse::<usize>().is_ok()).count();
    let expected = header(width);
    if head != expected {
        let missing: Vec<&String> = expected.iter().filter(|e| !head.contains(e)).collect();
        return Err(DatasetError::Schema(if missing.is_empty() {
            format!("expected {} columns in canonical order, found {}", expected.len(), head.len())
        } else {
            format!("missing columns {missing:?}")
        }));
    }

    let mut vectors = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = i + 2;
        let bad = |message: String| DatasetError::BadRow { row, message };
        let float = |j: usize| -> Result<f64, DatasetError> {
            rec[j].parse::<f64>().map_err(|_| bad(format!("column {}: {:?}", expected[j], &rec[j])))
        };
        let int = |j: usize| -> Result<usize, DatasetError> {
            rec[j].parse::<usize>().map_err(|_| bad(format!("column {}: {:?}", expected[j], &rec[j])))
        };
        let seq_encoded = (0..width).map(float).collect::<Result<Vec<_>, _>>()?;
        let w = width;
        let label_raw = int(w + SCALAR_COLUMNS)?;
        let label = u8::try_from(label_raw)
            .ok()
            .and_then(Label::from_u8)
            .ok_or_else(|| bad(format!("label must be 0 or 1, got {label_raw}")))?;
        vectors.push(FeatureVector {
            seq_encoded,
            len: int(w)?,
            sub_props: [float(w + 1)?, float(w + 2)?, float(w + 3)?, float(w + 4)?],
            ref_props: [float(w + 5)?, float(w + 6)?, float(w + 7)?, float(w + 8)?],
            sub_r1: float(w + 9)?,
            sub_r2: float(w + 10)?,
            ref_r1: float(w + 11)?,
            ref_r2: float(w + 12)?,
            c: int(w + 13)?,
            ezy: int(w + 14)?,
            label: Some(label),
        });
    }
    LabeledDataset::new(width, vectors)
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<LabeledDataset, DatasetError> {
    read_dataset(io::BufReader::new(std::fs::File::open(path)?))
}
