//! Restriction-synthesis simulation and subsequence labeling.
//!
//! A reference is cut by every catalog enzyme at once. A stretch of the
//! reference is a usable fragment when a top-strand cut lands exactly on
//! each of its ends; a query is assembled by ligating such fragments left to
//! right. Ligation end compatibility is recorded on each fragment but never
//! enforced.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::io;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::enzymedb::{EnzymeDb, Fragment};
use crate::seqcore::{DnaSequence, FastaRecord};
use crate::sitescan::Scanner;

pub const DEFAULT_MIN_FRAGMENT: usize = 4;
pub const DEFAULT_WINDOW_LENGTHS: [usize; 4] = [12, 16, 20, 24];

/// Class of a subsequence. `Applicable` is the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Label {
    Inapplicable,
    Applicable,
}

impl Label {
    pub fn from_bool(applicable: bool) -> Self {
        if applicable {
            Label::Applicable
        } else {
            Label::Inapplicable
        }
    }

    pub fn is_applicable(self) -> bool {
        self == Label::Applicable
    }

    /// `1` for applicable, `0` otherwise.
    pub fn as_u8(self) -> u8 {
        self as u8
    }

    pub fn from_u8(v: u8) -> Option<Self> {
        match v {
            0 => Some(Label::Inapplicable),
            1 => Some(Label::Applicable),
            _ => None,
        }
    }

    /// `+1.0` / `-1.0`, the SVM convention.
    pub fn signed(self) -> f64 {
        if self.is_applicable() {
            1.0
        } else {
            -1.0
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(if self.is_applicable() { "applicable" } else { "inapplicable" })
    }
}

/// One top-strand cut: where it lands and which site produced it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Cut {
    pub position: usize,
    pub enzyme_index: usize,
    pub site_start: usize,
}

/// All catalog cuts in one sequence, indexed by cut position.
#[derive(Debug, Clone)]
pub struct CutIndex {
    /// Distinct cut positions, ascending.
    positions: Vec<usize>,
    /// For each position, the first cut landing there in scan order.
    first: HashMap<usize, Cut>,
}

impl CutIndex {
    pub fn build(seq: &DnaSequence, scanner: &Scanner, db: &EnzymeDb) -> CutIndex {
        let mut first: HashMap<usize, Cut> = HashMap::new();
        for hit in scanner.scan_all(seq) {
            let enzyme = &db.enzymes()[hit.enzyme_index];
            let position = hit.position + enzyme.cut_top;
            first.entry(position).or_insert(Cut {
                position,
                enzyme_index: hit.enzyme_index,
                site_start: hit.position,
            });
        }
        let mut positions: Vec<usize> = first.keys().copied().collect();
        positions.sort_unstable();
        CutIndex { positions, first }
    }

    pub fn positions(&self) -> &[usize] {
        &self.positions
    }

    pub fn cut_at(&self, position: usize) -> Option<&Cut> {
        self.first.get(&position)
    }

    /// Largest cut position `<= bound`.
    fn last_at_or_below(&self, bound: usize) -> Option<usize> {
        match self.positions.binary_search(&bound) {
            Ok(i) => Some(self.positions[i]),
            Err(0) => None,
            Err(i) => Some(self.positions[i - 1]),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CandidateFragment {
    /// Half-open span in reference coordinates.
    pub span: (usize, usize),
    pub left_enzyme: usize,
    pub right_enzyme: usize,
    pub fragment: Fragment,
}

fn candidate(reference: &DnaSequence, db: &EnzymeDb, left: &Cut, right: &Cut) -> CandidateFragment {
    let (_, left_end) = db.enzymes()[left.enzyme_index].cut_ends(reference, left.site_start);
    let (right_end, _) = db.enzymes()[right.enzyme_index].cut_ends(reference, right.site_start);
    CandidateFragment {
        span: (left.position, right.position),
        left_enzyme: left.enzyme_index,
        right_enzyme: right.enzyme_index,
        fragment: Fragment {
            sequence: reference.slice(left.position, right.position),
            left_end,
            right_end,
            source_span: (left.position, right.position),
        },
    }
}

fn flanked_in_index(
    segment: &DnaSequence,
    reference: &DnaSequence,
    cuts: &CutIndex,
    db: &EnzymeDb,
) -> Vec<CandidateFragment> {
    let len = segment.len();
    if len == 0 {
        return Vec::new();
    }
    let r = reference.as_bytes();
    cuts.positions
        .iter()
        .filter(|&&s| s + len <= r.len() && &r[s..s + len] == segment.as_bytes())
        .filter_map(|&s| {
            let right = cuts.cut_at(s + len)?;
            Some(candidate(reference, db, cuts.cut_at(s)?, right))
        })
        .collect()
}

/// Occurrences of `segment` in `reference` with a cut on both ends, by span start.
pub fn find_flanked_fragments(
    segment: &DnaSequence,
    reference: &DnaSequence,
    scanner: &Scanner,
    db: &EnzymeDb,
) -> Vec<CandidateFragment> {
    let cuts = CutIndex::build(reference, scanner, db);
    flanked_in_index(segment, reference, &cuts, db)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SynthesisStep {
    pub query_span: (usize, usize),
    pub candidate: CandidateFragment,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SynthesisTrace {
    pub query: DnaSequence,
    pub steps: Vec<SynthesisStep>,
    pub completed: bool,
    /// Maximal runs of query positions no fragment could cover.
    pub uncovered: Vec<(usize, usize)>,
}

/// Greedy left-to-right assembly of `query` from flanked reference fragments.
///
/// At each query position the longest coverable prefix (at least
/// `min_fragment` bases) is taken, using the leftmost reference occurrence.
/// Positions with no such prefix are skipped one base at a time and reported
/// as uncovered.
pub fn synthesize(
    query: &DnaSequence,
    reference: &DnaSequence,
    scanner: &Scanner,
    db: &EnzymeDb,
    min_fragment: usize,
) -> SynthesisTrace {
    let min_fragment = min_fragment.max(1);
    let cuts = CutIndex::build(reference, scanner, db);
    let q = query.as_bytes();
    let r = reference.as_bytes();

    let mut steps = Vec::new();
    let mut uncovered: Vec<(usize, usize)> = Vec::new();
    let mut pos = 0;
    while pos < q.len() {
        // (length, start) of the best flanked match beginning at `pos`.
        let mut best: Option<(usize, usize)> = None;
        for &s in cuts.positions() {
            if s >= r.len() {
                break;
            }
            let lcp = q[pos..].iter().zip(&r[s..]).take_while(|(a, b)| a == b).count();
            if lcp < min_fragment {
                continue;
            }
            if let Some(e) = cuts.last_at_or_below(s + lcp) {
                let len = e.saturating_sub(s);
                if len >= min_fragment && best.is_none_or(|(l, _)| len > l) {
                    best = Some((len, s));
                }
            }
        }
        match best {
            Some((len, s)) => {
                let left = cuts.cut_at(s).expect("cut");
                let right = cuts.cut_at(s + len).expect("cut");
                steps.push(SynthesisStep {
                    query_span: (pos, pos + len),
                    candidate: candidate(reference, db, left, right),
                });
                pos += len;
            }
            None => {
                match uncovered.last_mut() {
                    Some(run) if run.1 == pos => run.1 += 1,
                    _ => uncovered.push((pos, pos + 1)),
                }
                pos += 1;
            }
        }
    }

    SynthesisTrace {
        query: query.clone(),
        completed: uncovered.is_empty(),
        steps,
        uncovered,
    }
}

/// Applicable iff some nonempty stretch of `subseq` is bounded by two cuts
/// from sites lying wholly inside `subseq`, i.e. iff at least two distinct
/// cut positions exist. The same enzyme may supply both flanks.
pub fn label_subsequence(subseq: &DnaSequence, scanner: &Scanner, db: &EnzymeDb) -> Label {
    Label::from_bool(distinct_cut_count(subseq, scanner, db) >= 2)
}

fn distinct_cut_count(seq: &DnaSequence, scanner: &Scanner, db: &EnzymeDb) -> usize {
    let mut cuts: Vec<usize> = scanner
        .scan_all(seq)
        .iter()
        .map(|h| h.position + db.enzymes()[h.enzyme_index].cut_top)
        .collect();
    cuts.sort_unstable();
    cuts.dedup();
    cuts.len()
}

/// Where an entry's reference context comes from.
#[derive(Debug, Clone)]
pub enum ReferenceContext {
    /// One reference sequence shared by every entry.
    Shared { id: String, sequence: Arc<DnaSequence> },
    /// Each entry uses the gene it was cut from.
    SourceGene,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubsequenceEntry {
    pub subsequence: DnaSequence,
    pub reference: Arc<DnaSequence>,
    pub reference_id: String,
    pub label: Label,
    /// Number of genes containing the subsequence verbatim (feature `C`).
    pub containing_query_count: usize,
    /// Distinct enzymes with a complete site inside (feature `EZY`).
    pub cutter_count: usize,
    pub gene_id: String,
    pub position: usize,
}

/// Slides every window length over every gene (stride 1) and labels each
/// distinct window. Output is ordered by gene id, position, window length;
/// a subsequence seen twice keeps its first provenance.
pub fn generate_labeled_entries(
    genes: &[FastaRecord],
    reference: &ReferenceContext,
    scanner: &Scanner,
    db: &EnzymeDb,
    window_lengths: &[usize],
) -> Vec<SubsequenceEntry> {
    let mut order: Vec<&FastaRecord> = genes.iter().collect();
    order.sort_by(|a, b| a.id.cmp(&b.id));

    let mut lengths: Vec<usize> = window_lengths.iter().copied().filter(|&w| w >= 1).collect();
    lengths.sort_unstable();
    lengths.dedup();

    // Per window length, each gene's set of windows, for feature `C`.
    let window_sets: HashMap<usize, Vec<HashSet<&[u8]>>> = lengths
        .iter()
        .map(|&w| {
            let sets = order
                .iter()
                .map(|g| g.sequence.as_bytes().windows(w).collect::<HashSet<_>>())
                .collect();
            (w, sets)
        })
        .collect();

    let gene_refs: Vec<Arc<DnaSequence>> = order.iter().map(|g| Arc::new(g.sequence.clone())).collect();

    let mut seen: HashSet<&[u8]> = HashSet::new();
    let mut out = Vec::new();
    for (gi, gene) in order.iter().enumerate() {
        let bytes = gene.sequence.as_bytes();
        for pos in 0..bytes.len() {
            for &w in &lengths {
                if pos + w > bytes.len() {
                    break;
                }
                let window = &bytes[pos..pos + w];
                if !seen.insert(window) {
                    continue;
                }
                let subsequence = gene.sequence.slice(pos, pos + w);
                let hits = scanner.scan_all(&subsequence);
                let mut cuts: Vec<usize> = hits
                    .iter()
                    .map(|h| h.position + db.enzymes()[h.enzyme_index].cut_top)
                    .collect();
                cuts.sort_unstable();
                cuts.dedup();
                let mut cutters: Vec<usize> = hits.iter().map(|h| h.enzyme_index).collect();
                cutters.sort_unstable();
                cutters.dedup();
                let containing = window_sets[&w].iter().filter(|set| set.contains(window)).count();
                let (reference_id, reference) = match reference {
                    ReferenceContext::Shared { id, sequence } => (id.clone(), Arc::clone(sequence)),
                    ReferenceContext::SourceGene => (gene.id.clone(), Arc::clone(&gene_refs[gi])),
                };
                out.push(SubsequenceEntry {
                    subsequence,
                    reference,
                    reference_id,
                    label: Label::from_bool(cuts.len() >= 2),
                    containing_query_count: containing,
                    cutter_count: cutters.len(),
                    gene_id: gene.id.clone(),
                    position: pos,
                });
            }
        }
    }
    out
}

#[derive(Debug, Error)]
pub enum EntryIoError {
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("row {row}: {message}")]
    Invalid { row: usize, message: String },
}

#[derive(Debug, Serialize, Deserialize)]
struct EntryRow {
    gene_id: String,
    position: usize,
    window: usize,
    subsequence: String,
    reference_id: String,
    label: u8,
    c: usize,
    ezy: usize,
}

/// Entries CSV: `gene_id,position,window,subsequence,reference_id,label,c,ezy`.
pub fn write_entries<W: io::Write>(out: W, entries: &[SubsequenceEntry]) -> Result<(), EntryIoError> {
    let mut w = csv::Writer::from_writer(out);
    for e in entries {
        w.serialize(EntryRow {
            gene_id: e.gene_id.clone(),
            position: e.position,
            window: e.subsequence.len(),
            subsequence: e.subsequence.to_string(),
            reference_id: e.reference_id.clone(),
            label: e.label.as_u8(),
            c: e.containing_query_count,
            ezy: e.cutter_count,
        })?;
    }
    w.flush()?;
    Ok(())
}

/// Reads an entries CSV, resolving `reference_id` through `references`.
pub fn read_entries(
    path: impl AsRef<Path>,
    references: &HashMap<String, Arc<DnaSequence>>,
) -> Result<Vec<SubsequenceEntry>, EntryIoError> {
    let mut rdr = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for (i, row) in rdr.deserialize::<EntryRow>().enumerate() {
        let row = row?;
        let line = i + 2;
        let invalid = |message: String| EntryIoError::Invalid { row: line, message };
        let subsequence: DnaSequence = row.subsequence.parse().map_err(|e| invalid(format!("{e}")))?;
        if subsequence.len() != row.window {
            return Err(invalid("window does not match subsequence length".into()));
        }
        let reference = references
            .get(&row.reference_id)
            .cloned()
            .ok_or_else(|| invalid(format!("unknown reference {:?}", row.reference_id)))?;
        let label = Label::from_u8(row.label).ok_or_else(|| invalid(format!("bad label {}", row.label)))?;
        out.push(SubsequenceEntry {
            subsequence,
            reference,
            reference_id: row.reference_id,
            label,
            containing_query_count: row.c,
            cutter_count: row.ezy,
            gene_id: row.gene_id,
            position: row.position,
        });
    }
    Ok(out)
}

#[derive(Debug, Serialize, Deserialize, PartialEq, Eq)]
pub struct TraceStepJson {
    pub q_start: usize,
    pub q_end: usize,
    pub r_start: usize,
    pub r_end: usize,
    pub left_enzyme: String,
    pub right_enzyme: String,
}

/// Export form of a [`SynthesisTrace`]; enzymes are named, not indexed.
#[derive(Debug, Serialize, Deserialize, PartialEq, Eq)]
pub struct TraceJson {
    pub query_id: String,
    pub steps: Vec<TraceStepJson>,
    pub completed: bool,
}

impl TraceJson {
    pub fn from_trace(query_id: &str, trace: &SynthesisTrace, db: &EnzymeDb) -> Self {
        TraceJson {
            query_id: query_id.to_string(),
            steps: trace
                .steps
                .iter()
                .map(|s| TraceStepJson {
                    q_start: s.query_span.0,
                    q_end: s.query_span.1,
                    r_start: s.candidate.span.0,
                    r_end: s.candidate.span.1,
                    left_enzyme: db.enzymes()[s.candidate.left_enzyme].name.clone(),
                    right_enzyme: db.enzymes()[s.candidate.right_enzyme].name.clone(),
                })
                .collect(),
            completed: trace.completed,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::enzymedb::Enzyme;
    use crate::sitescan::build_scanner;

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

    fn ecori_db() -> EnzymeDb {
        db_of(&[("EcoRI", "GAATTC", 1, 5)])
    }

    #[test]
    fn single_cut_cannot_flank() {
        let db = ecori_db();
        let sc = build_scanner(&db);
        assert!(find_flanked_fragments(&dna("AATTC"), &dna("TTGAATTCTT"), &sc, &db).is_empty());
    }

    #[test]
    fn two_cuts_flank_fragment() {
        let db = ecori_db();
        let sc = build_scanner(&db);
        let found = find_flanked_fragments(&dna("AATTCG"), &dna("GAATTCGAATTC"), &sc, &db);
        assert_eq!(found.len(), 1);
        assert_eq!(found[0].span, (1, 7));
        assert_eq!(found[0].fragment.sequence.as_str(), "AATTCG");
        assert!(!found[0].fragment.left_end.is_blunt());
    }

    #[test]
    fn absent_segment() {
        let db = ecori_db();
        let sc = build_scanner(&db);
        assert!(find_flanked_fragments(&dna("CCCC"), &dna("GAATTCGAATTC"), &sc, &db).is_empty());
    }

    fn two_enzyme_db() -> EnzymeDb {
        db_of(&[("EcoRI", "GAATTC", 1, 5), ("BamHI", "GGATCC", 1, 5)])
    }

    #[test]
    fn whole_fragment_query() {
        let db = two_enzyme_db();
        let sc = build_scanner(&db);
        let reference = dna("TTTGAATTCACGTACGTAGGATCCTTT");
        // fragment between EcoRI cut (4) and BamHI cut (19)
        let query = reference.slice(4, 19);
        let trace = synthesize(&query, &reference, &sc, &db, 4);
        assert!(trace.completed);
        assert_eq!(trace.steps.len(), 1);
        assert_eq!(trace.steps[0].candidate.span, (4, 19));
        assert_eq!(trace.steps[0].candidate.left_enzyme, 0);
        assert_eq!(trace.steps[0].candidate.right_enzyme, 1);
    }

    #[test]
    fn nothing_matches() {
        let db = two_enzyme_db();
        let sc = build_scanner(&db);
        let trace = synthesize(&dna("TTTT"), &dna("GAATTCGGGGGATCC"), &sc, &db, 4);
        assert!(!trace.completed);
        assert!(trace.steps.is_empty());
        assert_eq!(trace.uncovered, vec![(0, 4)]);
    }

    #[test]
    fn two_fragment_query() {
        let db = two_enzyme_db();
        let sc = build_scanner(&db);
        let reference = dna("CCGAATTCAAACCCGGATCCAAAAGAATTCTTTGGGGGATCCC");
        let cuts = CutIndex::build(&reference, &sc, &db);
        assert_eq!(cuts.positions(), &[3, 15, 25, 37]);
        let a = reference.slice(3, 15);
        let b = reference.slice(25, 37);
        let query = DnaSequence::from_bytes(&[a.as_bytes(), b.as_bytes()].concat()).unwrap();
        let trace = synthesize(&query, &reference, &sc, &db, 4);
        assert!(trace.completed);
        let spans: Vec<_> = trace.steps.iter().map(|s| (s.query_span, s.candidate.span)).collect();
        assert_eq!(spans, vec![((0, 12), (3, 15)), ((12, 24), (25, 37))]);
    }

    #[test]
    fn labels() {
        let db = ecori_db();
        let sc = build_scanner(&db);
        assert_eq!(label_subsequence(&dna("GAATTCAAGAATTC"), &sc, &db), Label::Applicable);
        assert_eq!(label_subsequence(&dna("AAGAATTCAA"), &sc, &db), Label::Inapplicable);
        let full = EnzymeDb::bundled();
        let fsc = build_scanner(&full);
        assert_eq!(label_subsequence(&dna("AAAAAA"), &fsc, &full), Label::Inapplicable);
    }

    #[test]
    fn entry_generation_counts() {
        let db = EnzymeDb::bundled();
        let sc = build_scanner(&db);
        let rec = |id: &str, s: &str| FastaRecord {
            id: id.into(),
            description: String::new(),
            sequence: dna(s),
        };
        let one = generate_labeled_entries(
            &[rec("g", "GAATTCAAGG")],
            &ReferenceContext::SourceGene,
            &sc,
            &db,
            &[10],
        );
        assert_eq!(one.len(), 1);
        assert_eq!(one[0].containing_query_count, 1);

        let twins = generate_labeled_entries(
            &[rec("a", "ACGTTGCAAGGATCCA"), rec("b", "ACGTTGCAAGGATCCA")],
            &ReferenceContext::SourceGene,
            &sc,
            &db,
            &[5, 8],
        );
        assert!(twins.iter().all(|e| e.containing_query_count == 2));
        // duplicates collapse onto the first gene
        assert!(twins.iter().all(|e| e.gene_id == "a"));
    }
}
