//! DNA sequences over `{A,T,C,G,N}`, IUPAC degeneracy codes, ordinal encoding
//! and FASTA ingestion.

use std::fmt;
use std::io::{self, Write};
use std::str::FromStr;

use thiserror::Error;

/// A concrete nucleotide. The declaration order (A, T, C, G) is the order
/// used for every per-nucleotide feature column.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Nucleotide {
    A,
    T,
    C,
    G,
}

impl Nucleotide {
    pub const ALL: [Nucleotide; 4] = [Nucleotide::A, Nucleotide::T, Nucleotide::C, Nucleotide::G];

    pub fn as_byte(self) -> u8 {
        match self {
            Nucleotide::A => b'A',
            Nucleotide::T => b'T',
            Nucleotide::C => b'C',
            Nucleotide::G => b'G',
        }
    }

    pub fn from_byte(b: u8) -> Option<Self> {
        match b {
            b'A' => Some(Nucleotide::A),
            b'T' => Some(Nucleotide::T),
            b'C' => Some(Nucleotide::C),
            b'G' => Some(Nucleotide::G),
            _ => None,
        }
    }

    /// Bit used in [`IupacSymbol`] expansion masks.
    fn mask_bit(self) -> u8 {
        match self {
            Nucleotide::A => 0b0001,
            Nucleotide::C => 0b0010,
            Nucleotide::G => 0b0100,
            Nucleotide::T => 0b1000,
        }
    }
}

/// Ordinal value of a sequence symbol: A=1/4, T=1/2, C=3/4, G=1, N=0.
#[inline]
pub fn ordinal(b: u8) -> f64 {
    match b {
        b'A' => 0.25,
        b'T' => 0.5,
        b'C' => 0.75,
        b'G' => 1.0,
        _ => 0.0,
    }
}

/// Inverse of [`ordinal`]; any value other than the four base ordinals maps to `N`.
pub fn symbol_for_ordinal(v: f64) -> u8 {
    if v == 0.25 {
        b'A'
    } else if v == 0.5 {
        b'T'
    } else if v == 0.75 {
        b'C'
    } else if v == 1.0 {
        b'G'
    } else {
        b'N'
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("illegal nucleotide {symbol:?} at offset {offset}")]
pub struct InvalidBase {
    pub symbol: char,
    pub offset: usize,
}

/// Validated DNA over `{A,T,C,G,N}`, stored uppercase.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct DnaSequence(Vec<u8>);

impl DnaSequence {
    /// Validates and uppercases `bytes`. Lowercase `acgtn` is accepted.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self, InvalidBase> {
        let mut out = Vec::with_capacity(bytes.len());
        for (offset, &b) in bytes.iter().enumerate() {
            let up = b.to_ascii_uppercase();
            match up {
                b'A' | b'C' | b'G' | b'T' | b'N' => out.push(up),
                _ => {
                    return Err(InvalidBase {
                        symbol: b as char,
                        offset,
                    })
                }
            }
        }
        Ok(DnaSequence(out))
    }

    /// Caller guarantees `bytes` is already canonical uppercase `{A,T,C,G,N}`.
    pub(crate) fn from_canonical(bytes: Vec<u8>) -> Self {
        debug_assert!(bytes.iter().all(|b| b"ACGTN".contains(b)));
        DnaSequence(bytes)
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }

    pub fn as_str(&self) -> &str {
        // Only ASCII is ever stored.
        std::str::from_utf8(&self.0).expect("ascii")
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Copy of `self[start..end]`.
    pub fn slice(&self, start: usize, end: usize) -> DnaSequence {
        DnaSequence(self.0[start..end].to_vec())
    }

    pub fn count(&self, base: Nucleotide) -> usize {
        let b = base.as_byte();
        self.0.iter().filter(|&&x| x == b).count()
    }

    /// Elementwise ordinal encoding (A→0.25, T→0.5, C→0.75, G→1, N→0).
    pub fn encode_ordinal(&self) -> Vec<f64> {
        self.0.iter().map(|&b| ordinal(b)).collect()
    }

    pub fn reverse_complement(&self) -> DnaSequence {
        DnaSequence(
            self.0
                .iter()
                .rev()
                .map(|&b| match b {
                    b'A' => b'T',
                    b'T' => b'A',
                    b'C' => b'G',
                    b'G' => b'C',
                    _ => b'N',
                })
                .collect(),
        )
    }

    /// True when `needle` occurs verbatim in `self`.
    pub fn contains(&self, needle: &DnaSequence) -> bool {
        if needle.is_empty() {
            return true;
        }
        self.0.windows(needle.len()).any(|w| w == needle.as_bytes())
    }
}

impl FromStr for DnaSequence {
    type Err = InvalidBase;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        DnaSequence::from_bytes(s.as_bytes())
    }
}

impl fmt::Display for DnaSequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl fmt::Debug for DnaSequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "DnaSequence({})", self.as_str())
    }
}

/// One IUPAC nucleotide code together with the set of bases it stands for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct IupacSymbol {
    code: u8,
    mask: u8,
}

impl IupacSymbol {
    /// Parses one of `ACGTRYSWKMBDHVN` (case-insensitive).
    pub fn from_byte(b: u8) -> Option<Self> {
        const A: u8 = 0b0001;
        const C: u8 = 0b0010;
        const G: u8 = 0b0100;
        const T: u8 = 0b1000;
        let code = b.to_ascii_uppercase();
        let mask = match code {
            b'A' => A,
            b'C' => C,
            b'G' => G,
            b'T' => T,
            b'R' => A | G,
            b'Y' => C | T,
            b'S' => C | G,
            b'W' => A | T,
            b'K' => G | T,
            b'M' => A | C,
            b'B' => C | G | T,
            b'D' => A | G | T,
            b'H' => A | C | T,
            b'V' => A | C | G,
            b'N' => A | C | G | T,
            _ => return None,
        };
        Some(IupacSymbol { code, mask })
    }

    pub fn code(self) -> u8 {
        self.code
    }

    /// Bases in the expansion, in `A, T, C, G` order.
    pub fn expansion(self) -> Vec<Nucleotide> {
        Nucleotide::ALL
            .into_iter()
            .filter(|n| self.mask & n.mask_bit() != 0)
            .collect()
    }

    pub fn matches(self, base: Nucleotide) -> bool {
        self.mask & base.mask_bit() != 0
    }

    /// Match against a raw sequence symbol. An `N` in the sequence is an
    /// unknown base and never matches, whatever the pattern.
    #[inline]
    pub fn matches_symbol(self, symbol: u8) -> bool {
        Nucleotide::from_byte(symbol).is_some_and(|n| self.matches(n))
    }
}

/// True iff `base` lies in the expansion of `pattern`.
pub fn iupac_match(pattern: IupacSymbol, base: Nucleotide) -> bool {
    pattern.matches(base)
}

/// Parses a string of IUPAC codes, reporting the offset of the first bad letter.
pub fn parse_iupac(s: &str) -> Result<Vec<IupacSymbol>, InvalidBase> {
    s.bytes()
        .enumerate()
        .map(|(offset, b)| {
            IupacSymbol::from_byte(b).ok_or(InvalidBase {
                symbol: b as char,
                offset,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FastaRecord {
    pub id: String,
    pub description: String,
    pub sequence: DnaSequence,
}

#[derive(Debug, Error)]
pub enum FastaError {
    #[error("line {line}: expected a '>' header line")]
    MissingHeader { line: usize },
    #[error("line {line}: header has no identifier")]
    EmptyId { line: usize },
    #[error("line {line}: record {id:?} has an empty sequence")]
    EmptySequence { line: usize, id: String },
    #[error("line {line}: illegal character {symbol:?}")]
    IllegalCharacter { line: usize, symbol: char },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Parses FASTA text. Sequence lines are concatenated; blank lines are ignored.
pub fn parse_fasta(text: &str) -> Result<Vec<FastaRecord>, FastaError> {
    struct Open {
        id: String,
        description: String,
        header_line: usize,
        seq: Vec<u8>,
    }

    fn close(open: Open) -> Result<FastaRecord, FastaError> {
        if open.seq.is_empty() {
            return Err(FastaError::EmptySequence {
                line: open.header_line,
                id: open.id,
            });
        }
        Ok(FastaRecord {
            id: open.id,
            description: open.description,
            sequence: DnaSequence::from_canonical(open.seq),
        })
    }

    let mut records = Vec::new();
    let mut current: Option<Open> = None;
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim_end();
        if line.is_empty() {
            continue;
        }
        if let Some(header) = line.strip_prefix('>') {
            if let Some(open) = current.take() {
                records.push(close(open)?);
            }
            let header = header.trim();
            let (id, description) = match header.split_once(char::is_whitespace) {
                Some((id, rest)) => (id, rest.trim()),
                None => (header, ""),
            };
            if id.is_empty() {
                return Err(FastaError::EmptyId { line: line_no });
            }
            current = Some(Open {
                id: id.to_string(),
                description: description.to_string(),
                header_line: line_no,
                seq: Vec::new(),
            });
            continue;
        }
        let Some(open) = current.as_mut() else {
            return Err(FastaError::MissingHeader { line: line_no });
        };
        for ch in line.chars() {
            let up = ch.to_ascii_uppercase();
            match up {
                'A' | 'C' | 'G' | 'T' | 'N' => open.seq.push(up as u8),
                _ => {
                    return Err(FastaError::IllegalCharacter {
                        line: line_no,
                        symbol: ch,
                    })
                }
            }
        }
    }
    if let Some(open) = current {
        records.push(close(open)?);
    }
    Ok(records)
}

pub fn read_fasta(path: impl AsRef<std::path::Path>) -> Result<Vec<FastaRecord>, FastaError> {
    let text = std::fs::read_to_string(path)?;
    parse_fasta(&text)
}

/// Writes records with sequence lines wrapped at `width` columns.
pub fn write_fasta<W: Write>(mut out: W, records: &[FastaRecord], width: usize) -> io::Result<()> {
    let width = width.max(1);
    for rec in records {
        if rec.description.is_empty() {
            writeln!(out, ">{}", rec.id)?;
        } else {
            writeln!(out, ">{} {}", rec.id, rec.description)?;
        }
        for chunk in rec.sequence.as_bytes().chunks(width) {
            out.write_all(chunk)?;
            out.write_all(b"\n")?;
        }
    }
    Ok(())
}
