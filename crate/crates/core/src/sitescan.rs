//! One-pass multi-enzyme site scanner.
//!
//! All distinct recognition sites are packed into a single bit-parallel
//! Shift-And automaton. Every pattern position is one NFA state, and the
//! transition table stores, per input symbol, the set of states whose IUPAC
//! class admits that symbol. Degenerate positions (`N`, `R`, ...) are just
//! wider classes, so no expansion into concrete words ever happens.
//!
//! Isoschizomers (identical sites) share one pattern and fan out to all their
//! catalog indices on a match.

use crate::enzymedb::EnzymeDb;
use crate::seqcore::{DnaSequence, Nucleotide};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SiteHit {
    /// Catalog index of the enzyme.
    pub enzyme_index: usize,
    /// Start of the site in the scanned sequence.
    pub position: usize,
}

#[derive(Debug, Clone)]
struct Pattern {
    len: usize,
    /// Word and bit of this pattern's final state.
    accept_word: usize,
    accept_bit: u64,
    /// Catalog indices sharing this site, ascending.
    enzymes: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct Scanner {
    words: usize,
    /// Bits of every pattern's first state.
    initial: Vec<u64>,
    /// Per concrete base (A, T, C, G order), states that accept it.
    classes: [Vec<u64>; 4],
    /// Union of all accepting states, for a fast "any match here" test.
    accept_any: Vec<u64>,
    patterns: Vec<Pattern>,
    enzyme_count: usize,
}

fn base_slot(b: u8) -> Option<usize> {
    match b {
        b'A' => Some(0),
        b'T' => Some(1),
        b'C' => Some(2),
        b'G' => Some(3),
        _ => None,
    }
}

impl Scanner {
    pub fn build(db: &EnzymeDb) -> Scanner {
        // Group enzymes by site so isoschizomers share states.
        let mut grouped: Vec<(String, Vec<usize>)> = Vec::new();
        for (idx, e) in db.enzymes().iter().enumerate() {
            let key = e.site_string();
            match grouped.iter_mut().find(|(s, _)| *s == key) {
                Some((_, list)) => list.push(idx),
                None => grouped.push((key, vec![idx])),
            }
        }

        let total_states: usize = grouped.iter().map(|(s, _)| s.len()).sum();
        let words = total_states.div_ceil(64).max(1);
        let mut initial = vec![0u64; words];
        let mut classes: [Vec<u64>; 4] = std::array::from_fn(|_| vec![0u64; words]);
        let mut accept_any = vec![0u64; words];
        let mut patterns = Vec::with_capacity(grouped.len());

        let mut state = 0usize;
        for (site, enzymes) in grouped {
            let symbols = &db.enzymes()[enzymes[0]].site;
            initial[state / 64] |= 1 << (state % 64);
            for sym in symbols {
                for (slot, base) in Nucleotide::ALL.into_iter().enumerate() {
                    if sym.matches(base) {
                        classes[slot][state / 64] |= 1 << (state % 64);
                    }
                }
                state += 1;
            }
            let last = state - 1;
            accept_any[last / 64] |= 1 << (last % 64);
            patterns.push(Pattern {
                len: site.len(),
                accept_word: last / 64,
                accept_bit: 1 << (last % 64),
                enzymes,
            });
        }

        Scanner {
            words,
            initial,
            classes,
            accept_any,
            patterns,
            enzyme_count: db.len(),
        }
    }

    pub fn enzyme_count(&self) -> usize {
        self.enzyme_count
    }

    /// Runs the automaton and calls `on_match(pattern_index, start)` for each
    /// hit, in order of increasing end position.
    fn run(&self, seq: &[u8], mut on_match: impl FnMut(usize, usize)) {
        if self.patterns.is_empty() {
            return;
        }
        let mut active = vec![0u64; self.words];
        for (end, &b) in seq.iter().enumerate() {
            let Some(slot) = base_slot(b) else {
                // An unknown base kills every partial match.
                active.iter_mut().for_each(|w| *w = 0);
                continue;
            };
            let class = &self.classes[slot];
            let mut carry = 0u64;
            let mut any = 0u64;
            for w in 0..self.words {
                let cur = active[w];
                // A carry out of a pattern's last state lands on the next
                // pattern's first state, which `initial` sets anyway.
                let shifted = (cur << 1) | carry | self.initial[w];
                carry = cur >> 63;
                let next = shifted & class[w];
                active[w] = next;
                any |= next & self.accept_any[w];
            }
            if any == 0 {
                continue;
            }
            for (i, p) in self.patterns.iter().enumerate() {
                if active[p.accept_word] & p.accept_bit != 0 {
                    on_match(i, end + 1 - p.len);
                }
            }
        }
    }

    /// Every site occurrence of every enzyme, sorted by `(position, enzyme_index)`.
    pub fn scan_all(&self, seq: &DnaSequence) -> Vec<SiteHit> {
        let mut hits = Vec::new();
        self.run(seq.as_bytes(), |i, start| {
            hits.extend(self.patterns[i].enzymes.iter().map(|&enzyme_index| SiteHit {
                enzyme_index,
                position: start,
            }));
        });
        hits.sort_unstable_by_key(|h| (h.position, h.enzyme_index));
        hits
    }

    /// Number of distinct enzymes with at least one complete site in `seq`.
    pub fn count_cutters(&self, seq: &DnaSequence) -> usize {
        let mut seen = vec![false; self.patterns.len()];
        self.run(seq.as_bytes(), |i, _| seen[i] = true);
        seen.iter()
            .zip(&self.patterns)
            .filter(|(s, _)| **s)
            .map(|(_, p)| p.enzymes.len())
            .sum()
    }
}

pub fn build_scanner(db: &EnzymeDb) -> Scanner {
    Scanner::build(db)
}

pub fn scan_all(scanner: &Scanner, seq: &DnaSequence) -> Vec<SiteHit> {
    scanner.scan_all(seq)
}

pub fn count_cutters(scanner: &Scanner, seq: &DnaSequence) -> usize {
    scanner.count_cutters(seq)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::enzymedb::{find_sites, Enzyme};
    use proptest::prelude::*;

    fn dna(s: &str) -> DnaSequence {
        s.parse().unwrap()
    }

    fn db_of(list: &[(&str, &str, usize, usize)]) -> EnzymeDb {
        EnzymeDb::from_enzymes(
            list.iter()
                .map(|&(n, s, t, b)| Enzyme::new(n, s, t, b).unwrap())
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn empty_catalog_scans_nothing() {
        let sc = build_scanner(&EnzymeDb::default());
        assert!(sc.scan_all(&dna("GAATTCGGATCC")).is_empty());
        assert_eq!(sc.count_cutters(&dna("GAATTC")), 0);
    }

    #[test]
    fn ecori_only() {
        let sc = build_scanner(&db_of(&[("EcoRI", "GAATTC", 1, 5)]));
        assert_eq!(
            sc.scan_all(&dna("GAATTC")),
            vec![SiteHit {
                enzyme_index: 0,
                position: 0
            }]
        );
        assert!(sc.scan_all(&dna("")).is_empty());
        assert_eq!(sc.count_cutters(&dna("TTGAATTCTT")), 1);
        assert_eq!(sc.count_cutters(&dna("GAATT")), 0);
    }

    #[test]
    fn overlapping_patterns() {
        let sc = build_scanner(&db_of(&[("EcoRI", "GAATTC", 1, 5), ("MluCIlike", "AATT", 0, 4)]));
        let hits = sc.scan_all(&dna("GAATTC"));
        assert_eq!(
            hits,
            vec![
                SiteHit {
                    enzyme_index: 0,
                    position: 0
                },
                SiteHit {
                    enzyme_index: 1,
                    position: 1
                }
            ]
        );
    }

    #[test]
    fn isoschizomers_all_reported() {
        let sc = build_scanner(&db_of(&[
            ("MboI", "GATC", 0, 4),
            ("DpnII", "GATC", 0, 4),
            ("EcoRI", "GAATTC", 1, 5),
        ]));
        assert_eq!(sc.scan_all(&dna("AGATCA")).len(), 2);
        assert_eq!(sc.count_cutters(&dna("AGATCAGAATTC")), 3);
    }

    #[test]
    fn long_degenerate_patterns_cross_words() {
        // enough states to span several 64-bit words
        let db = EnzymeDb::bundled();
        let sc = build_scanner(&db);
        assert!(sc.words > 1);
        let seq = dna("CCAGTCAGCATGGCCAAAAAGGCCGAATTC");
        let mut expected: Vec<SiteHit> = db
            .enzymes()
            .iter()
            .enumerate()
            .flat_map(|(i, e)| {
                find_sites(e, &seq).into_iter().map(move |p| SiteHit {
                    enzyme_index: i,
                    position: p,
                })
            })
            .collect();
        expected.sort_by_key(|h| (h.position, h.enzyme_index));
        assert_eq!(sc.scan_all(&seq), expected);
    }

    fn arb_seq(max: usize) -> impl Strategy<Value = DnaSequence> {
        proptest::collection::vec(prop::sample::select(b"ACGTACGTACGTN".to_vec()), 0..max)
            .prop_map(|v| DnaSequence::from_bytes(&v).unwrap())
    }

    proptest! {
        #[test]
        fn cutters_bounded_and_monotone(a in arb_seq(60), b in arb_seq(30), c in arb_seq(30)) {
            let db = EnzymeDb::bundled();
            let sc = build_scanner(&db);
            let inner = sc.count_cutters(&a);
            prop_assert!(inner <= sc.enzyme_count());
            let outer = DnaSequence::from_bytes(&[b.as_bytes(), a.as_bytes(), c.as_bytes()].concat()).unwrap();
            prop_assert!(sc.count_cutters(&outer) >= inner);
        }

        #[test]
        fn deterministic_construction(s in arb_seq(300)) {
            let db = EnzymeDb::bundled();
            prop_assert_eq!(build_scanner(&db).scan_all(&s), build_scanner(&db).scan_all(&s));
        }
    }
}
