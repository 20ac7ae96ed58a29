//! Confusion matrices, exact classification rates, and per-position
//! nucleotide histograms split by class and correctness.

use std::fmt;
use std::io;

use num_rational::Ratio;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seqcore::DnaSequence;
use crate::synthsim::{Label, SubsequenceEntry};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("length mismatch: {predictions} predictions for {truth} rows")]
    LengthMismatch { predictions: usize, truth: usize },
    #[error("no rows to evaluate")]
    Empty,
    #[error("rate undefined: no {0} rows")]
    UndefinedRate(Label),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Counts with `Applicable` as the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn record(&mut self, predicted: Label, truth: Label) {
        match (truth, predicted) {
            (Label::Applicable, Label::Applicable) => self.tp += 1,
            (Label::Applicable, Label::Inapplicable) => self.fn_ += 1,
            (Label::Inapplicable, Label::Inapplicable) => self.tn += 1,
            (Label::Inapplicable, Label::Applicable) => self.fp += 1,
        }
    }

    pub fn rates(&self) -> Result<Rates, EvalError> {
        rates(self)
    }
}

pub fn confusion(predictions: &[Label], truth: &[Label]) -> Result<ConfusionMatrix, EvalError> {
    if predictions.len() != truth.len() {
        return Err(EvalError::LengthMismatch {
            predictions: predictions.len(),
            truth: truth.len(),
        });
    }
    if truth.is_empty() {
        return Err(EvalError::Empty);
    }
    let mut cm = ConfusionMatrix::default();
    for (&p, &t) in predictions.iter().zip(truth) {
        cm.record(p, t);
    }
    Ok(cm)
}

/// Exact rates; `fnr = 1 - sensitivity` and `fpr = 1 - specificity` hold exactly.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rates {
    pub sensitivity: Ratio<u64>,
    pub specificity: Ratio<u64>,
    pub fnr: Ratio<u64>,
    pub fpr: Ratio<u64>,
}

impl Rates {
    pub fn as_f64(r: Ratio<u64>) -> f64 {
        *r.numer() as f64 / *r.denom() as f64
    }

    pub fn sensitivity_f64(&self) -> f64 {
        Self::as_f64(self.sensitivity)
    }

    pub fn specificity_f64(&self) -> f64 {
        Self::as_f64(self.specificity)
    }

    pub fn named(&self) -> [(&'static str, Ratio<u64>); 4] {
        [
            ("sensitivity", self.sensitivity),
            ("specificity", self.specificity),
            ("fnr", self.fnr),
            ("fpr", self.fpr),
        ]
    }
}

impl fmt::Display for Rates {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self
            .named()
            .iter()
            .map(|(n, r)| format!("{n}={:.3}", Rates::as_f64(*r)))
            .collect();
        f.write_str(&parts.join(" "))
    }
}

pub fn rates(cm: &ConfusionMatrix) -> Result<Rates, EvalError> {
    let pos = cm.tp + cm.fn_;
    let neg = cm.tn + cm.fp;
    if pos == 0 {
        return Err(EvalError::UndefinedRate(Label::Applicable));
    }
    if neg == 0 {
        return Err(EvalError::UndefinedRate(Label::Inapplicable));
    }
    Ok(Rates {
        sensitivity: Ratio::new(cm.tp, pos),
        specificity: Ratio::new(cm.tn, neg),
        fnr: Ratio::new(cm.fn_, pos),
        fpr: Ratio::new(cm.fp, neg),
    })
}

/// Class-by-correctness cell of a histogram.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Cell {
    CorrectTrue,
    IncorrectTrue,
    CorrectFalse,
    IncorrectFalse,
}

impl Cell {
    pub const ALL: [Cell; 4] = [Cell::CorrectTrue, Cell::IncorrectTrue, Cell::CorrectFalse, Cell::IncorrectFalse];

    pub fn of(predicted: Label, truth: Label) -> Cell {
        match (truth.is_applicable(), predicted == truth) {
            (true, true) => Cell::CorrectTrue,
            (true, false) => Cell::IncorrectTrue,
            (false, true) => Cell::CorrectFalse,
            (false, false) => Cell::IncorrectFalse,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Cell::CorrectTrue => "correct_true",
            Cell::IncorrectTrue => "incorrect_true",
            Cell::CorrectFalse => "correct_false",
            Cell::IncorrectFalse => "incorrect_false",
        }
    }
}

/// Histogram symbols. Positions past the end of a short subsequence count as `N`.
pub const HIST_SYMBOLS: [u8; 5] = *b"ATCGN";

fn symbol_slot(b: u8) -> usize {
    match b {
        b'A' => 0,
        b'T' => 1,
        b'C' => 2,
        b'G' => 3,
        _ => 4,
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PositionHistogram {
    /// 0-based SEQ index.
    pub position: usize,
    /// `counts[symbol][cell]`, symbols in `HIST_SYMBOLS` order, cells in `Cell::ALL` order.
    pub counts: [[u64; 4]; 5],
}

impl PositionHistogram {
    pub fn count(&self, symbol: u8, cell: Cell) -> u64 {
        let c = Cell::ALL.iter().position(|&x| x == cell).expect("cell");
        self.counts[symbol_slot(symbol)][c]
    }

    pub fn symbol_total(&self, symbol: u8) -> u64 {
        self.counts[symbol_slot(symbol)].iter().sum()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }
}

/// One histogram per SEQ position `0..width`.
pub fn histograms_for(
    subsequences: &[&DnaSequence],
    truth: &[Label],
    predictions: &[Label],
    width: usize,
) -> Result<Vec<PositionHistogram>, EvalError> {
    for n in [truth.len(), predictions.len()] {
        if n != subsequences.len() {
            return Err(EvalError::LengthMismatch {
                predictions: n,
                truth: subsequences.len(),
            });
        }
    }
    let mut hist: Vec<PositionHistogram> = (0..width)
        .map(|position| PositionHistogram {
            position,
            counts: [[0; 4]; 5],
        })
        .collect();
    for ((s, &t), &p) in subsequences.iter().zip(truth).zip(predictions) {
        let cell = Cell::ALL.iter().position(|&c| c == Cell::of(p, t)).expect("cell");
        let bytes = s.as_bytes();
        for (i, h) in hist.iter_mut().enumerate() {
            let sym = bytes.get(i).copied().unwrap_or(b'N');
            h.counts[symbol_slot(sym)][cell] += 1;
        }
    }
    Ok(hist)
}

pub fn position_histograms(
    entries: &[SubsequenceEntry],
    predictions: &[Label],
    width: usize,
) -> Result<Vec<PositionHistogram>, EvalError> {
    let seqs: Vec<&DnaSequence> = entries.iter().map(|e| &e.subsequence).collect();
    let truth: Vec<Label> = entries.iter().map(|e| e.label).collect();
    histograms_for(&seqs, &truth, predictions, width)
}

pub fn write_confusion_csv<W: io::Write>(mut out: W, cm: &ConfusionMatrix) -> io::Result<()> {
    writeln!(out, "tp,fp,tn,fn")?;
    writeln!(out, "{},{},{},{}", cm.tp, cm.fp, cm.tn, cm.fn_)
}

/// `metric,numerator,denominator,value` with the value at 3 decimals.
pub fn write_rates_csv<W: io::Write>(mut out: W, rates: &Rates) -> io::Result<()> {
    writeln!(out, "metric,numerator,denominator,value")?;
    for (name, r) in rates.named() {
        writeln!(out, "{name},{},{},{:.3}", r.numer(), r.denom(), Rates::as_f64(r))?;
    }
    Ok(())
}

/// `position,nucleotide,cell,count`, positions 1-based like the `n1..nW` columns.
pub fn write_position_hist_csv<W: io::Write>(mut out: W, hist: &[PositionHistogram]) -> io::Result<()> {
    writeln!(out, "position,nucleotide,cell,count")?;
    for h in hist {
        for (s, &sym) in HIST_SYMBOLS.iter().enumerate() {
            for (c, cell) in Cell::ALL.iter().enumerate() {
                writeln!(out, "{},{},{},{}", h.position + 1, sym as char, cell.name(), h.counts[s][c])?;
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use Label::{Applicable as T, Inapplicable as F};

    #[test]
    fn perfect_and_inverted() {
        let truth: Vec<Label> = (0..10).map(|i| Label::from_bool(i % 2 == 0)).collect();
        let cm = confusion(&truth, &truth).unwrap();
        assert_eq!((cm.tp, cm.tn, cm.fp, cm.fn_), (5, 5, 0, 0));
        let inv: Vec<Label> = truth.iter().map(|l| Label::from_bool(!l.is_applicable())).collect();
        let cm = confusion(&inv, &truth).unwrap();
        assert_eq!((cm.tp, cm.tn), (0, 0));
    }

    #[test]
    fn confusion_errors() {
        assert!(matches!(confusion(&[], &[]), Err(EvalError::Empty)));
        assert!(matches!(confusion(&[T], &[T, F]), Err(EvalError::LengthMismatch { .. })));
    }

    #[test]
    fn rate_examples() {
        let r = rates(&ConfusionMatrix { tp: 949, fn_: 51, tn: 774, fp: 226 }).unwrap();
        assert_eq!(r.fnr, Ratio::new(51, 1000));
        assert_eq!(r.fpr, Ratio::new(226, 1000));
        let r = rates(&ConfusionMatrix { tp: 90, fn_: 10, tn: 857, fp: 143 }).unwrap();
        assert_eq!(r.sensitivity, Ratio::new(9, 10));
        assert_eq!(r.specificity, Ratio::new(857, 1000));
        assert_eq!(r.fpr, Ratio::new(143, 1000));
        assert_eq!(r.to_string(), "sensitivity=0.900 specificity=0.857 fnr=0.100 fpr=0.143");
    }

    #[test]
    fn undefined_rate_names_class() {
        let e = rates(&ConfusionMatrix { tp: 0, fn_: 0, tn: 3, fp: 1 }).unwrap_err();
        assert!(matches!(e, EvalError::UndefinedRate(Label::Applicable)));
        let e = rates(&ConfusionMatrix { tp: 1, fn_: 0, tn: 0, fp: 0 }).unwrap_err();
        assert!(matches!(e, EvalError::UndefinedRate(Label::Inapplicable)));
    }

    #[test]
    fn histogram_examples() {
        let seqs: Vec<DnaSequence> = ["CAT", "CGGA", "CT"].iter().map(|s| s.parse().unwrap()).collect();
        let refs: Vec<&DnaSequence> = seqs.iter().collect();
        let truth = [T, F, T];
        let h = histograms_for(&refs, &truth, &truth, 4).unwrap();
        assert_eq!(h.len(), 4);
        assert_eq!(h[0].symbol_total(b'C'), 3);
        assert_eq!(h[0].total(), 3);
        for p in &h {
            assert_eq!(p.total(), 3);
            for sym in HIST_SYMBOLS {
                assert_eq!(p.count(sym, Cell::IncorrectTrue), 0);
                assert_eq!(p.count(sym, Cell::IncorrectFalse), 0);
            }
        }
        assert_eq!(h[3].count(b'N', Cell::CorrectTrue), 2);
        assert_eq!(h[3].count(b'A', Cell::CorrectFalse), 1);

        let preds = [F, F, T];
        let h = histograms_for(&refs, &truth, &preds, 4).unwrap();
        assert_eq!(h[1].count(b'A', Cell::IncorrectTrue), 1);
        assert!(histograms_for(&refs, &truth, &preds[..2], 4).is_err());
    }

    #[test]
    fn csv_layouts() {
        let cm = ConfusionMatrix { tp: 1, fp: 2, tn: 3, fn_: 4 };
        let mut buf = Vec::new();
        write_confusion_csv(&mut buf, &cm).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "tp,fp,tn,fn\n1,2,3,4\n");

        let mut buf = Vec::new();
        write_rates_csv(&mut buf, &cm.rates().unwrap()).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.contains("sensitivity,1,5,0.200\n"));

        let seq: DnaSequence = "AC".parse().unwrap();
        let h = histograms_for(&[&seq], &[T], &[T], 2).unwrap();
        let mut buf = Vec::new();
        write_position_hist_csv(&mut buf, &h).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 1 + 2 * 5 * 4);
        assert!(text.contains("1,A,correct_true,1\n"));
        assert!(text.contains("2,C,correct_true,1\n"));
    }

    fn arb_labels() -> impl Strategy<Value = Vec<(bool, bool)>> {
        proptest::collection::vec((any::<bool>(), any::<bool>()), 1..200)
    }

    proptest! {
        #[test]
        fn tally_oracle_and_identities(rows in arb_labels(), rot in 0usize..200) {
            let preds: Vec<Label> = rows.iter().map(|r| Label::from_bool(r.0)).collect();
            let truth: Vec<Label> = rows.iter().map(|r| Label::from_bool(r.1)).collect();
            let cm = confusion(&preds, &truth).unwrap();
            let tally = |p: bool, t: bool| rows.iter().filter(|r| **r == (p, t)).count() as u64;
            prop_assert_eq!(cm, ConfusionMatrix { tp: tally(true, true), fp: tally(true, false), tn: tally(false, false), fn_: tally(false, true) });
            prop_assert_eq!(cm.total(), rows.len() as u64);

            let k = rot % rows.len();
            let mut p2 = preds.clone();
            let mut t2 = truth.clone();
            p2.rotate_left(k);
            t2.rotate_left(k);
            prop_assert_eq!(confusion(&p2, &t2).unwrap(), cm);

            if let Ok(r) = rates(&cm) {
                prop_assert_eq!(r.sensitivity + r.fnr, Ratio::from_integer(1));
                prop_assert_eq!(r.specificity + r.fpr, Ratio::from_integer(1));
            }
        }
    }
}
