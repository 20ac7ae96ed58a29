//! The 16-variable representation of a subsequence entry.
//!
//! | group | columns |
//! |-------|---------|
//! | SEQ   | `n1..nW` ordinal-encoded bases, right-padded with 0 |
//! | LEN   | unpadded length |
//! | subsequence proportions | `pa pt pc pg` |
//! | reference proportions   | `rpa rpt rpc rpg` |
//! | complexity ratings      | `r1s r2s r1r r2r` |
//! | C, EZY | containing-gene count, distinct cutter count |

use std::collections::HashMap;
use std::sync::Arc;

use thiserror::Error;

use crate::seqcore::{ordinal, DnaSequence, Nucleotide};
use crate::synthsim::{Label, SubsequenceEntry};

pub const DEFAULT_SEQ_WIDTH: usize = 24;

/// The sixteen named feature variables.
pub const FEATURE_NAMES: [&str; 16] = [
    "SEQ", "LEN", "pA", "pT", "pC", "pG", "rpA", "rpT", "rpC", "rpG", "r1s", "r2s", "r1r", "r2r", "C", "EZY",
];

/// Number of scalar columns after the `W` SEQ columns.
pub const SCALAR_COLUMNS: usize = 15;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FeatureError {
    #[error("sequence is empty")]
    EmptySequence,
    #[error("sequence of length {len} is shorter than the largest segment size {needed}")]
    InsufficientLength { len: usize, needed: usize },
    #[error("subsequence of length {len} exceeds the SEQ width {width}")]
    WidthOverflow { len: usize, width: usize },
    #[error("invalid complexity bounds b={b}, p={p}")]
    BadBounds { b: usize, p: usize },
}

/// How segment ratings are combined into `r2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum R2Mode {
    /// Mean `r1` over the windows of each size, weighted by size.
    #[default]
    MeanOverWindows,
    /// Sum (not mean) over windows; can exceed 1. Kept for comparison only.
    Literal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ComplexityConfig {
    /// Smallest segment size.
    pub b: usize,
    /// Largest segment size.
    pub p: usize,
    pub mode: R2Mode,
}

impl ComplexityConfig {
    pub fn new(b: usize, p: usize) -> Result<Self, FeatureError> {
        if b < 1 || b > p {
            return Err(FeatureError::BadBounds { b, p });
        }
        Ok(ComplexityConfig {
            b,
            p,
            mode: R2Mode::MeanOverWindows,
        })
    }

    pub fn with_mode(mut self, mode: R2Mode) -> Self {
        self.mode = mode;
        self
    }
}

impl Default for ComplexityConfig {
    fn default() -> Self {
        ComplexityConfig {
            b: 4,
            p: 8,
            mode: R2Mode::MeanOverWindows,
        }
    }
}

/// Share of `seq` that is `base`. `N` counts toward the length only.
pub fn proportion(base: Nucleotide, seq: &DnaSequence) -> Result<f64, FeatureError> {
    if seq.is_empty() {
        return Err(FeatureError::EmptySequence);
    }
    Ok(seq.count(base) as f64 / seq.len() as f64)
}

/// Base counts in A, T, C, G order.
fn counts(bytes: &[u8]) -> [u64; 4] {
    let mut c = [0u64; 4];
    for &b in bytes {
        match b {
            b'A' => c[0] += 1,
            b'T' => c[1] += 1,
            b'C' => c[2] += 1,
            b'G' => c[3] += 1,
            _ => {}
        }
    }
    c
}

/// `1 - Σ (1/4 - c/L)^2` evaluated as `1 - Σ (L - 4c)^2 / (16 L^2)` so the
/// sum of squares stays an exact integer.
fn r1_from_counts(c: &[u64; 4], len: u64) -> f64 {
    let dev: u128 = c
        .iter()
        .map(|&x| {
            let d = len as i128 - 4 * x as i128;
            (d * d) as u128
        })
        .sum();
    1.0 - dev as f64 / (16 * (len as u128) * (len as u128)) as f64
}

/// Whole-sequence complexity rating; 1 for equal composition, 0.25 for a homopolymer.
pub fn complexity_r1(seq: &DnaSequence) -> Result<f64, FeatureError> {
    if seq.is_empty() {
        return Err(FeatureError::EmptySequence);
    }
    Ok(r1_from_counts(&counts(seq.as_bytes()), seq.len() as u64))
}

/// Segment-weighted complexity rating over segment sizes `b..=p`.
///
/// For each size `i` the `r1` values of all `n - i + 1` windows are averaged
/// (or summed, in [`R2Mode::Literal`]) and weighted by `i / Σk`.
pub fn complexity_r2(seq: &DnaSequence, cfg: &ComplexityConfig) -> Result<f64, FeatureError> {
    if cfg.b < 1 || cfg.b > cfg.p {
        return Err(FeatureError::BadBounds { b: cfg.b, p: cfg.p });
    }
    let n = seq.len();
    if n < cfg.p {
        return Err(FeatureError::InsufficientLength { len: n, needed: cfg.p });
    }
    let bytes = seq.as_bytes();
    let weight_total: usize = (cfg.b..=cfg.p).sum();
    let mut r2 = 0.0;
    for size in cfg.b..=cfg.p {
        let mut c = counts(&bytes[..size]);
        let mut total = r1_from_counts(&c, size as u64);
        for start in 1..=n - size {
            slot_adjust(&mut c, bytes[start - 1], -1);
            slot_adjust(&mut c, bytes[start + size - 1], 1);
            total += r1_from_counts(&c, size as u64);
        }
        let windows = (n - size + 1) as f64;
        let term = match cfg.mode {
            R2Mode::MeanOverWindows => total / windows,
            R2Mode::Literal => total,
        };
        r2 += (size as f64 / weight_total as f64) * term;
    }
    Ok(r2)
}

fn slot_adjust(c: &mut [u64; 4], b: u8, delta: i64) {
    let slot = match b {
        b'A' => 0,
        b'T' => 1,
        b'C' => 2,
        b'G' => 3,
        _ => return,
    };
    c[slot] = (c[slot] as i64 + delta) as u64;
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub seq_encoded: Vec<f64>,
    pub len: usize,
    pub sub_props: [f64; 4],
    pub ref_props: [f64; 4],
    pub sub_r1: f64,
    pub sub_r2: f64,
    pub ref_r1: f64,
    pub ref_r2: f64,
    pub c: usize,
    pub ezy: usize,
    pub label: Option<Label>,
}

impl FeatureVector {
    pub fn width(&self) -> usize {
        self.seq_encoded.len()
    }

    /// Flat numeric row in CSV column order (label excluded).
    pub fn to_row(&self) -> Vec<f64> {
        let mut row = Vec::with_capacity(self.width() + SCALAR_COLUMNS);
        row.extend_from_slice(&self.seq_encoded);
        row.push(self.len as f64);
        row.extend_from_slice(&self.sub_props);
        row.extend_from_slice(&self.ref_props);
        row.extend_from_slice(&[self.sub_r1, self.sub_r2, self.ref_r1, self.ref_r2]);
        row.push(self.c as f64);
        row.push(self.ezy as f64);
        row
    }

    /// The subsequence recovered from the SEQ encoding and LEN.
    pub fn decoded_subsequence(&self) -> DnaSequence {
        let bytes: Vec<u8> = self.seq_encoded[..self.len.min(self.width())]
            .iter()
            .map(|&v| crate::seqcore::symbol_for_ordinal(v))
            .collect();
        DnaSequence::from_canonical(bytes)
    }
}

/// Column names for a SEQ width of `width`, in row order (label excluded).
pub fn column_names(width: usize) -> Vec<String> {
    let mut names: Vec<String> = (1..=width).map(|i| format!("n{i}")).collect();
    for n in [
        "len", "pa", "pt", "pc", "pg", "rpa", "rpt", "rpc", "rpg", "r1s", "r2s", "r1r", "r2r", "c", "ezy",
    ] {
        names.push(n.to_string());
    }
    names
}

#[derive(Debug, Clone, Copy)]
struct SequenceStats {
    props: [f64; 4],
    r1: f64,
    r2: f64,
}

fn stats(seq: &DnaSequence, cfg: &ComplexityConfig) -> Result<SequenceStats, FeatureError> {
    let mut props = [0.0; 4];
    for (slot, base) in Nucleotide::ALL.into_iter().enumerate() {
        props[slot] = proportion(base, seq)?;
    }
    Ok(SequenceStats {
        props,
        r1: complexity_r1(seq)?,
        r2: complexity_r2(seq, cfg)?,
    })
}

fn assemble(
    entry: &SubsequenceEntry,
    sub: SequenceStats,
    reference: SequenceStats,
    width: usize,
) -> Result<FeatureVector, FeatureError> {
    let len = entry.subsequence.len();
    if len > width {
        return Err(FeatureError::WidthOverflow { len, width });
    }
    let mut seq_encoded = vec![0.0; width];
    for (slot, &b) in seq_encoded.iter_mut().zip(entry.subsequence.as_bytes()) {
        *slot = ordinal(b);
    }
    Ok(FeatureVector {
        seq_encoded,
        len,
        sub_props: sub.props,
        ref_props: reference.props,
        sub_r1: sub.r1,
        sub_r2: sub.r2,
        ref_r1: reference.r1,
        ref_r2: reference.r2,
        c: entry.containing_query_count,
        ezy: entry.cutter_count,
        label: Some(entry.label),
    })
}

pub fn featurize_entry(
    entry: &SubsequenceEntry,
    cfg: &ComplexityConfig,
    width: usize,
) -> Result<FeatureVector, FeatureError> {
    if entry.subsequence.len() > width {
        return Err(FeatureError::WidthOverflow {
            len: entry.subsequence.len(),
            width,
        });
    }
    assemble(entry, stats(&entry.subsequence, cfg)?, stats(&entry.reference, cfg)?, width)
}

/// Batch form of [`featurize_entry`]; each distinct reference is rated once.
pub fn featurize_entries(
    entries: &[SubsequenceEntry],
    cfg: &ComplexityConfig,
    width: usize,
) -> Result<Vec<FeatureVector>, FeatureError> {
    let mut cache: HashMap<*const DnaSequence, SequenceStats> = HashMap::new();
    entries
        .iter()
        .map(|e| {
            let key = Arc::as_ptr(&e.reference);
            let reference = match cache.get(&key) {
                Some(s) => *s,
                None => {
                    let s = stats(&e.reference, cfg)?;
                    cache.insert(key, s);
                    s
                }
            };
            if e.subsequence.len() > width {
                return Err(FeatureError::WidthOverflow {
                    len: e.subsequence.len(),
                    width,
                });
            }
            assemble(e, stats(&e.subsequence, cfg)?, reference, width)
        })
        .collect()
}
