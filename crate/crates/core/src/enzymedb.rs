//! Restriction-enzyme catalog and single-enzyme digestion.
//!
//! Cut offsets are measured from the first base of the recognition site, in
//! top-strand coordinates, for both strands. `G^AATTC` (EcoRI) is therefore
//! `cut_top = 1, cut_bottom = 5`.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seqcore::{parse_iupac, DnaSequence, IupacSymbol};

/// The bundled stand-in catalog (`name\tsite\tcut_top\tcut_bottom`).
pub const BUNDLED_CATALOG: &str = include_str!("../data/enzymes.tsv");

const HEADER: [&str; 4] = ["name", "site", "cut_top", "cut_bottom"];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Enzyme {
    pub name: String,
    pub site: Vec<IupacSymbol>,
    pub cut_top: usize,
    pub cut_bottom: usize,
}

impl Enzyme {
    pub fn new(name: &str, site: &str, cut_top: usize, cut_bottom: usize) -> Result<Self, EnzymeError> {
        let symbols = parse_iupac(site).map_err(|e| EnzymeError::IllegalSite {
            row: 0,
            symbol: e.symbol,
        })?;
        if symbols.is_empty() {
            return Err(EnzymeError::EmptySite { row: 0 });
        }
        if cut_top > symbols.len() || cut_bottom > symbols.len() {
            return Err(EnzymeError::CutOutOfRange {
                row: 0,
                site_len: symbols.len(),
            });
        }
        Ok(Enzyme {
            name: name.to_string(),
            site: symbols,
            cut_top,
            cut_bottom,
        })
    }

    pub fn site_len(&self) -> usize {
        self.site.len()
    }

    pub fn site_string(&self) -> String {
        self.site.iter().map(|s| s.code() as char).collect()
    }

    /// Whether the site reads the same on the reverse-complement strand.
    pub fn is_palindromic(&self) -> bool {
        let n = self.site.len();
        (0..n).all(|i| self.site[i].code() == iupac_complement(self.site[n - 1 - i].code()))
    }

    /// True when the site matches `seq` starting at `pos`.
    #[inline]
    pub fn matches_at(&self, seq: &[u8], pos: usize) -> bool {
        pos + self.site.len() <= seq.len()
            && self
                .site
                .iter()
                .zip(&seq[pos..])
                .all(|(sym, &b)| sym.matches_symbol(b))
    }

    /// End descriptors created by cutting a site that starts at `pos`: the
    /// right end of the left piece and the left end of the right piece.
    pub fn cut_ends(&self, seq: &DnaSequence, pos: usize) -> (FragmentEnd, FragmentEnd) {
        if self.cut_top == self.cut_bottom {
            return (FragmentEnd::Blunt, FragmentEnd::Blunt);
        }
        let lo = pos + self.cut_top.min(self.cut_bottom);
        let hi = pos + self.cut_top.max(self.cut_bottom);
        let bases = seq.slice(lo, hi);
        let (left, right) = if self.cut_top < self.cut_bottom {
            (Strand::Bottom, Strand::Top)
        } else {
            (Strand::Top, Strand::Bottom)
        };
        (
            FragmentEnd::Overhang {
                strand: left,
                bases: bases.clone(),
            },
            FragmentEnd::Overhang {
                strand: right,
                bases,
            },
        )
    }
}

fn iupac_complement(code: u8) -> u8 {
    match code {
        b'A' => b'T',
        b'T' => b'A',
        b'C' => b'G',
        b'G' => b'C',
        b'R' => b'Y',
        b'Y' => b'R',
        b'K' => b'M',
        b'M' => b'K',
        b'B' => b'V',
        b'V' => b'B',
        b'D' => b'H',
        b'H' => b'D',
        other => other, // S, W, N
    }
}

#[derive(Debug, Error)]
pub enum EnzymeError {
    #[error("row {row}: expected header `name\\tsite\\tcut_top\\tcut_bottom`")]
    BadHeader { row: usize },
    #[error("row {row}: expected 4 tab-separated fields, found {found}")]
    FieldCount { row: usize, found: usize },
    #[error("row {row}: duplicate enzyme name {name:?}")]
    DuplicateName { row: usize, name: String },
    #[error("row {row}: cut offset out of range for a {site_len}-base site")]
    CutOutOfRange { row: usize, site_len: usize },
    #[error("row {row}: cut offset is not a nonnegative integer: {value:?}")]
    BadOffset { row: usize, value: String },
    #[error("row {row}: illegal IUPAC letter {symbol:?} in site")]
    IllegalSite { row: usize, symbol: char },
    #[error("row {row}: empty recognition site")]
    EmptySite { row: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl EnzymeError {
    fn at_row(self, row: usize) -> Self {
        match self {
            EnzymeError::IllegalSite { symbol, .. } => EnzymeError::IllegalSite { row, symbol },
            EnzymeError::EmptySite { .. } => EnzymeError::EmptySite { row },
            EnzymeError::CutOutOfRange { site_len, .. } => EnzymeError::CutOutOfRange { row, site_len },
            other => other,
        }
    }
}

/// An immutable enzyme catalog with a name index.
#[derive(Debug, Clone, Default)]
pub struct EnzymeDb {
    enzymes: Vec<Enzyme>,
    by_name: HashMap<String, usize>,
}

impl EnzymeDb {
    pub fn from_enzymes(enzymes: Vec<Enzyme>) -> Result<Self, EnzymeError> {
        let mut by_name = HashMap::with_capacity(enzymes.len());
        for (i, e) in enzymes.iter().enumerate() {
            if by_name.insert(e.name.clone(), i).is_some() {
                return Err(EnzymeError::DuplicateName {
                    row: i + 2,
                    name: e.name.clone(),
                });
            }
        }
        Ok(EnzymeDb { enzymes, by_name })
    }

    /// The catalog shipped with the crate.
    pub fn bundled() -> Self {
        parse_enzyme_table(BUNDLED_CATALOG).expect("bundled catalog is valid")
    }

    pub fn len(&self) -> usize {
        self.enzymes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.enzymes.is_empty()
    }

    pub fn enzymes(&self) -> &[Enzyme] {
        &self.enzymes
    }

    pub fn get(&self, index: usize) -> Option<&Enzyme> {
        self.enzymes.get(index)
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.by_name.get(name).copied()
    }

    pub fn by_name(&self, name: &str) -> Option<&Enzyme> {
        self.index_of(name).map(|i| &self.enzymes[i])
    }

    /// A sub-catalog holding only the named enzymes, in the given order.
    pub fn subset(&self, names: &[&str]) -> Option<EnzymeDb> {
        let picked = names
            .iter()
            .map(|n| self.by_name(n).cloned())
            .collect::<Option<Vec<_>>>()?;
        EnzymeDb::from_enzymes(picked).ok()
    }
}

/// Parses the TSV enzyme table. Row numbers in errors are 1-based file lines.
pub fn parse_enzyme_table(text: &str) -> Result<EnzymeDb, EnzymeError> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    match lines.next() {
        Some((_, header)) => {
            let fields: Vec<&str> = header.trim_end().split('\t').collect();
            if fields != HEADER {
                return Err(EnzymeError::BadHeader { row: 1 });
            }
        }
        None => return Ok(EnzymeDb::default()),
    }

    let mut enzymes = Vec::new();
    let mut seen: HashMap<String, usize> = HashMap::new();
    for (idx, line) in lines {
        let row = idx + 1;
        let fields: Vec<&str> = line.trim_end_matches(['\r', '\n']).split('\t').collect();
        if fields.len() != 4 {
            return Err(EnzymeError::FieldCount {
                row,
                found: fields.len(),
            });
        }
        let name = fields[0].trim();
        let offset = |s: &str| {
            s.trim().parse::<usize>().map_err(|_| EnzymeError::BadOffset {
                row,
                value: s.to_string(),
            })
        };
        let cut_top = offset(fields[2])?;
        let cut_bottom = offset(fields[3])?;
        let enzyme = Enzyme::new(name, fields[1].trim(), cut_top, cut_bottom).map_err(|e| e.at_row(row))?;
        if seen.insert(name.to_string(), row).is_some() {
            return Err(EnzymeError::DuplicateName {
                row,
                name: name.to_string(),
            });
        }
        enzymes.push(enzyme);
    }
    EnzymeDb::from_enzymes(enzymes)
}

pub fn load_enzyme_table(path: impl AsRef<Path>) -> Result<EnzymeDb, EnzymeError> {
    parse_enzyme_table(&std::fs::read_to_string(path)?)
}

/// Every start position where `enzyme`'s site matches `seq`, overlaps included.
pub fn find_sites(enzyme: &Enzyme, seq: &DnaSequence) -> Vec<usize> {
    let bytes = seq.as_bytes();
    let m = enzyme.site_len();
    if bytes.len() < m {
        return Vec::new();
    }
    (0..=bytes.len() - m)
        .filter(|&p| enzyme.matches_at(bytes, p))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strand {
    Top,
    Bottom,
}

/// How one end of a fragment looks after cutting.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FragmentEnd {
    /// An original end of the digested molecule (no cut happened here).
    Terminus,
    Blunt,
    /// Single-stranded extension; `strand` is the strand that protrudes.
    Overhang { strand: Strand, bases: DnaSequence },
}

impl FragmentEnd {
    pub fn is_blunt(&self) -> bool {
        matches!(self, FragmentEnd::Blunt | FragmentEnd::Terminus)
    }
}

impl fmt::Display for FragmentEnd {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FragmentEnd::Terminus => f.write_str("terminus"),
            FragmentEnd::Blunt => f.write_str("blunt"),
            FragmentEnd::Overhang { strand, bases } => {
                let s = match strand {
                    Strand::Top => "top",
                    Strand::Bottom => "bottom",
                };
                write!(f, "{s}:{bases}")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fragment {
    pub sequence: DnaSequence,
    pub left_end: FragmentEnd,
    pub right_end: FragmentEnd,
    /// Half-open `[start, end)` in the digested sequence.
    pub source_span: (usize, usize),
}

/// Digests `seq` with a single enzyme.
///
/// Sites are consumed leftmost-first without overlap; the top strand is cut
/// `cut_top` bases into each consumed site. Cuts landing on either end of the
/// molecule produce no fragment boundary.
pub fn digest(enzyme: &Enzyme, seq: &DnaSequence) -> Vec<Fragment> {
    let m = enzyme.site_len();
    let mut cuts: Vec<(usize, usize)> = Vec::new(); // (cut position, site start)
    let mut next_free = 0;
    for p in find_sites(enzyme, seq) {
        if p < next_free {
            continue;
        }
        next_free = p + m;
        let cut = p + enzyme.cut_top;
        if cut == 0 || cut == seq.len() {
            continue;
        }
        if cuts.last().is_some_and(|&(c, _)| c >= cut) {
            continue;
        }
        cuts.push((cut, p));
    }

    let mut fragments = Vec::with_capacity(cuts.len() + 1);
    let mut start = 0;
    let mut left_end = FragmentEnd::Terminus;
    for (cut, site) in cuts {
        let (right_end, next_left) = enzyme.cut_ends(seq, site);
        fragments.push(Fragment {
            sequence: seq.slice(start, cut),
            left_end,
            right_end,
            source_span: (start, cut),
        });
        start = cut;
        left_end = next_left;
    }
    fragments.push(Fragment {
        sequence: seq.slice(start, seq.len()),
        left_end,
        right_end: FragmentEnd::Terminus,
        source_span: (start, seq.len()),
    });
    fragments
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ecori() -> Enzyme {
        Enzyme::new("EcoRI", "GAATTC", 1, 5).unwrap()
    }

    fn dna(s: &str) -> DnaSequence {
        s.parse().unwrap()
    }

    #[test]
    fn table_row_parses() {
        let db = parse_enzyme_table("name\tsite\tcut_top\tcut_bottom\nEcoRI\tGAATTC\t1\t5\n").unwrap();
        let e = db.by_name("EcoRI").unwrap();
        assert_eq!(e.site_len(), 6);
        assert_eq!((e.cut_top, e.cut_bottom), (1, 5));
    }

    #[test]
    fn table_errors_carry_rows() {
        let bad = parse_enzyme_table("name\tsite\tcut_top\tcut_bottom\nEcoRI\tGAATTC\t1\t5\nFoo\tGAATTC\t9\t5\n");
        assert!(matches!(bad, Err(EnzymeError::CutOutOfRange { row: 3, .. })));
        let dup = parse_enzyme_table("name\tsite\tcut_top\tcut_bottom\nA\tGATC\t0\t4\nA\tGATC\t0\t4\n");
        assert!(matches!(dup, Err(EnzymeError::DuplicateName { row: 3, .. })));
        let illegal = parse_enzyme_table("name\tsite\tcut_top\tcut_bottom\nX\tGAXC\t0\t4\n");
        assert!(matches!(illegal, Err(EnzymeError::IllegalSite { row: 2, symbol: 'X' })));
        let header = parse_enzyme_table("enzyme\tsite\n");
        assert!(matches!(header, Err(EnzymeError::BadHeader { row: 1 })));
    }

    #[test]
    fn header_only_is_empty() {
        let db = parse_enzyme_table("name\tsite\tcut_top\tcut_bottom\n").unwrap();
        assert!(db.is_empty());
    }

    #[test]
    fn bundled_catalog_loads() {
        let db = EnzymeDb::bundled();
        assert!(db.len() >= 200, "{}", db.len());
        assert!(db.by_name("EcoRI").is_some());
        assert!(db.by_name("EcoRI").unwrap().is_palindromic());
        assert!(!db.by_name("AciI").unwrap().is_palindromic());
        let palindromic = db.enzymes().iter().filter(|e| e.is_palindromic()).count();
        assert!(palindromic * 10 > db.len() * 9);
    }

    #[test]
    fn sites_found() {
        assert_eq!(find_sites(&ecori(), &dna("TTGAATTCAA")), vec![2]);
        assert_eq!(find_sites(&ecori(), &dna("GAATTCGAATTC")), vec![0, 6]);
        assert!(find_sites(&ecori(), &dna("")).is_empty());
        // overlapping occurrences are all reported
        let e = Enzyme::new("x", "AA", 1, 1).unwrap();
        assert_eq!(find_sites(&e, &dna("AAAA")), vec![0, 1, 2]);
    }

    #[test]
    fn sequence_n_never_matches() {
        let e = Enzyme::new("BglI", "GCCNNNNNGGC", 7, 4).unwrap();
        assert_eq!(find_sites(&e, &dna("GCCAAAAAGGC")), vec![0]);
        assert!(find_sites(&e, &dna("GCCAANAAGGC")).is_empty());
    }

    #[test]
    fn ecori_digest() {
        let frags = digest(&ecori(), &dna("AAGAATTCTT"));
        let seqs: Vec<&str> = frags.iter().map(|f| f.sequence.as_str()).collect();
        assert_eq!(seqs, ["AAG", "AATTCTT"]);
        assert_eq!(frags[0].left_end, FragmentEnd::Terminus);
        assert_eq!(
            frags[0].right_end,
            FragmentEnd::Overhang {
                strand: Strand::Bottom,
                bases: dna("AATT")
            }
        );
        assert_eq!(
            frags[1].left_end,
            FragmentEnd::Overhang {
                strand: Strand::Top,
                bases: dna("AATT")
            }
        );
        assert_eq!(frags[1].source_span, (3, 10));
    }

    #[test]
    fn no_site_single_fragment() {
        let frags = digest(&ecori(), &dna("AAAA"));
        assert_eq!(frags.len(), 1);
        assert_eq!(frags[0].sequence.as_str(), "AAAA");
        assert_eq!(frags[0].left_end, FragmentEnd::Terminus);
        assert_eq!(frags[0].right_end, FragmentEnd::Terminus);
    }

    #[test]
    fn blunt_cutter() {
        let e = Enzyme::new("ApaBlunt", "GGGCCC", 3, 3).unwrap();
        let frags = digest(&e, &dna("TTGGGCCCTT"));
        assert_eq!(frags.len(), 2);
        assert_eq!(frags[0].sequence.as_str(), "TTGGG");
        assert_eq!(frags[0].right_end, FragmentEnd::Blunt);
        assert_eq!(frags[1].left_end, FragmentEnd::Blunt);
    }

    #[test]
    fn three_prime_overhang_orientation() {
        let kpn = Enzyme::new("KpnI", "GGTACC", 5, 1).unwrap();
        let frags = digest(&kpn, &dna("AAGGTACCAA"));
        assert_eq!(frags[0].sequence.as_str(), "AAGGTAC");
        assert_eq!(
            frags[0].right_end,
            FragmentEnd::Overhang {
                strand: Strand::Top,
                bases: dna("GTAC")
            }
        );
    }

    #[test]
    fn overlapping_sites_consumed_leftmost_first() {
        let e = Enzyme::new("x", "AAA", 1, 2).unwrap();
        let frags = digest(&e, &dna("CAAAAAAC"));
        // sites at 1..=4; consumed 1 and 4
        let spans: Vec<_> = frags.iter().map(|f| f.source_span).collect();
        assert_eq!(spans, vec![(0, 2), (2, 5), (5, 8)]);
    }

    #[test]
    fn overhang_length_matches_stagger() {
        let db = EnzymeDb::bundled();
        let seq = dna("GGATCCGAATTCAAGCTTGCGGCCGCCTGCAGG");
        for e in db.enzymes() {
            for f in digest(e, &seq) {
                for end in [&f.left_end, &f.right_end] {
                    if let FragmentEnd::Overhang { bases, .. } = end {
                        assert_eq!(bases.len(), e.cut_top.abs_diff(e.cut_bottom));
                    }
                }
                assert_eq!(f.source_span.1 - f.source_span.0, f.sequence.len());
            }
        }
    }
}
