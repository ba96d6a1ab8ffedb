//! Seed-and-extend alignment with x-drop termination.
//!
//! From a shared k-mer the kernel extends independently to the right of the
//! seed end and to the left of the seed start. Each extension fills the DP
//! matrix of prefix alignments antidiagonal by antidiagonal; a cell scoring
//! more than `X` below the best score seen on earlier antidiagonals is pruned,
//! and the extension stops once a whole antidiagonal is pruned.

use std::fmt;

use crate::error::{Error, Result};

const NEG: i32 = i32::MIN / 4;

/// Linear-gap scoring with the x-drop threshold.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ScoringScheme {
    pub match_score: i32,
    pub mismatch: i32,
    pub gap: i32,
    pub x_drop: i32,
}

impl Default for ScoringScheme {
    fn default() -> Self {
        ScoringScheme {
            match_score: 1,
            mismatch: -1,
            gap: -1,
            x_drop: 7,
        }
    }
}

impl ScoringScheme {
    pub fn new(match_score: i32, mismatch: i32, gap: i32, x_drop: i32) -> Result<Self> {
        let s = ScoringScheme {
            match_score,
            mismatch,
            gap,
            x_drop,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.match_score <= 0 {
            return Err(Error::config("match score must be positive"));
        }
        if self.mismatch > 0 || self.gap > 0 {
            return Err(Error::config("mismatch and gap scores must not be positive"));
        }
        if self.x_drop < 0 {
            return Err(Error::config("x-drop must be non-negative"));
        }
        Ok(())
    }

    #[inline]
    pub fn substitution(&self, a: u8, b: u8) -> i32 {
        if a == b {
            self.match_score
        } else {
            self.mismatch
        }
    }
}

/// One alignment column.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum EditOp {
    /// Identical characters in both reads.
    Match,
    /// Different characters in both reads.
    Mismatch,
    /// A character of read b against a gap in read a.
    Insertion,
    /// A character of read a against a gap in read b.
    Deletion,
}

impl EditOp {
    pub fn symbol(self) -> char {
        match self {
            EditOp::Match => 'M',
            EditOp::Mismatch => 'X',
            EditOp::Insertion => 'I',
            EditOp::Deletion => 'D',
        }
    }

    pub fn from_symbol(c: char) -> Option<Self> {
        match c {
            'M' => Some(EditOp::Match),
            'X' => Some(EditOp::Mismatch),
            'I' => Some(EditOp::Insertion),
            'D' => Some(EditOp::Deletion),
            _ => None,
        }
    }
}

/// Column-by-column edit transcript.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct Transcript(pub Vec<EditOp>);

impl Transcript {
    pub fn parse(s: &str) -> Option<Self> {
        s.chars().map(EditOp::from_symbol).collect::<Option<Vec<_>>>().map(Transcript)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl fmt::Display for Transcript {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for op in &self.0 {
            write!(f, "{}", op.symbol())?;
        }
        Ok(())
    }
}

/// Result of extending one seed. Extents are half-open.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Extension {
    pub score: i32,
    pub begin_s: usize,
    pub end_s: usize,
    pub begin_t: usize,
    pub end_t: usize,
    pub transcript: Option<Transcript>,
    /// DP cells computed, both directions.
    pub cells: u64,
}

/// Best prefix alignment found in one direction.
#[derive(Debug)]
struct OneWay {
    best: i32,
    end_a: usize,
    end_b: usize,
    ops: Option<Vec<EditOp>>,
    cells: u64,
}

/// Stored antidiagonal: scores for rows `lo..lo + scores.len()`.
#[derive(Clone, Debug, Default)]
struct Diagonal {
    lo: usize,
    scores: Vec<i32>,
}

impl Diagonal {
    #[inline]
    fn get(&self, i: usize) -> i32 {
        if i < self.lo {
            return NEG;
        }
        self.scores.get(i - self.lo).copied().unwrap_or(NEG)
    }

    fn hi(&self) -> usize {
        self.lo + self.scores.len() - 1
    }
}

/// Extends from the origin of `a` × `b` (prefix alignment of both).
fn extend_one_way(a: &[u8], b: &[u8], sc: &ScoringScheme, keep: bool) -> OneWay {
    let (na, nb) = (a.len(), b.len());
    let mut history: Vec<Diagonal> = Vec::new();
    let mut prev2 = Diagonal::default();
    let mut prev1 = Diagonal {
        lo: 0,
        scores: vec![0],
    };
    let (mut best, mut best_i, mut best_j) = (0i32, 0usize, 0usize);
    let mut cells = 1u64;
    if keep {
        history.push(prev1.clone());
    }

    for d in 1..=na + nb {
        let lo = prev1.lo.max(d.saturating_sub(nb));
        let hi = (prev1.hi() + 1).min(na).min(d);
        if lo > hi {
            break;
        }
        let floor = best - sc.x_drop;
        let mut cur = Diagonal {
            lo,
            scores: Vec::with_capacity(hi - lo + 1),
        };
        for i in lo..=hi {
            let j = d - i;
            let mut v = NEG;
            if i >= 1 && j >= 1 {
                v = v.max(prev2.get(i - 1) + sc.substitution(a[i - 1], b[j - 1]));
            }
            if i >= 1 {
                v = v.max(prev1.get(i - 1) + sc.gap);
            }
            if j >= 1 {
                v = v.max(prev1.get(i) + sc.gap);
            }
            cur.scores.push(if v < floor { NEG } else { v });
        }
        cells += cur.scores.len() as u64;

        let Some(first) = cur.scores.iter().position(|&v| v > NEG) else {
            break;
        };
        let last = cur.scores.iter().rposition(|&v| v > NEG).unwrap();
        cur.scores.truncate(last + 1);
        cur.scores.drain(..first);
        cur.lo += first;

        for (off, &v) in cur.scores.iter().enumerate() {
            if v == NEG {
                continue;
            }
            let i = cur.lo + off;
            let j = d - i;
            if v > best || (v == best && (j > best_j || (j == best_j && i > best_i))) {
                best = v;
                best_i = i;
                best_j = j;
            }
        }
        if keep {
            history.push(cur.clone());
        }
        prev2 = std::mem::replace(&mut prev1, cur);
    }

    let ops = keep.then(|| traceback(&history, a, b, sc, best_i, best_j));
    OneWay {
        best,
        end_a: best_i,
        end_b: best_j,
        ops,
        cells,
    }
}

fn traceback(
    history: &[Diagonal],
    a: &[u8],
    b: &[u8],
    sc: &ScoringScheme,
    mut i: usize,
    mut j: usize,
) -> Vec<EditOp> {
    let mut ops = Vec::with_capacity(i + j);
    while i + j > 0 {
        let d = i + j;
        let v = history[d].get(i);
        if i >= 1 && j >= 1 && d >= 2 && history[d - 2].get(i - 1) + sc.substitution(a[i - 1], b[j - 1]) == v {
            ops.push(if a[i - 1] == b[j - 1] {
                EditOp::Match
            } else {
                EditOp::Mismatch
            });
            i -= 1;
            j -= 1;
        } else if i >= 1 && history[d - 1].get(i - 1) + sc.gap == v {
            ops.push(EditOp::Deletion);
            i -= 1;
        } else {
            debug_assert!(j >= 1 && history[d - 1].get(i) + sc.gap == v);
            ops.push(EditOp::Insertion);
            j -= 1;
        }
    }
    ops.reverse();
    ops
}

/// Extends the seed `s[pos_s..pos_s + k] == t[pos_t..pos_t + k]` in both
/// directions. The score is `k · match` plus the best left and right
/// extension scores. Among equal-score endpoints the one reaching further
/// into `t`, then into `s`, wins.
pub fn xdrop_extend(
    s: &[u8],
    t: &[u8],
    pos_s: usize,
    pos_t: usize,
    k: usize,
    scoring: &ScoringScheme,
    with_transcript: bool,
) -> Result<Extension> {
    if pos_s + k > s.len() || pos_t + k > t.len() {
        return Err(Error::contract(format!(
            "seed ({pos_s}, {pos_t}) with k={k} outside reads of length {} and {}",
            s.len(),
            t.len()
        )));
    }
    if s[pos_s..pos_s + k] != t[pos_t..pos_t + k] {
        return Err(Error::contract(format!(
            "seed windows at ({pos_s}, {pos_t}) differ"
        )));
    }

    let right = extend_one_way(&s[pos_s + k..], &t[pos_t + k..], scoring, with_transcript);
    let s_left: Vec<u8> = s[..pos_s].iter().rev().copied().collect();
    let t_left: Vec<u8> = t[..pos_t].iter().rev().copied().collect();
    let left = extend_one_way(&s_left, &t_left, scoring, with_transcript);

    let transcript = match (left.ops, right.ops) {
        (Some(mut l), Some(r)) => {
            l.reverse();
            l.extend(std::iter::repeat_n(EditOp::Match, k));
            l.extend(r);
            Some(Transcript(l))
        }
        _ => None,
    };
    Ok(Extension {
        score: k as i32 * scoring.match_score + left.best + right.best,
        begin_s: pos_s - left.end_a,
        end_s: pos_s + k + right.end_a,
        begin_t: pos_t - left.end_b,
        end_t: pos_t + k + right.end_b,
        transcript,
        cells: left.cells + right.cells,
    })
}

/// Why an alignment failed validation.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum AlignmentDefect {
    MissingTranscript,
    /// The gapped rows differ in length.
    RowLengths { s: usize, t: usize },
    /// A column holds a gap in both rows.
    DoubleGap { column: usize },
    /// Removing gaps from a row does not give the aligned segment.
    Residue { row: char },
    /// An `M` column over different characters or an `X` over equal ones.
    WrongOp { column: usize },
    Score { stored: i32, recomputed: i32 },
    Extents,
}

impl fmt::Display for AlignmentDefect {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AlignmentDefect::MissingTranscript => write!(f, "no transcript"),
            AlignmentDefect::RowLengths { s, t } => write!(f, "gapped rows of length {s} and {t}"),
            AlignmentDefect::DoubleGap { column } => write!(f, "gap in both rows at column {column}"),
            AlignmentDefect::Residue { row } => write!(f, "row {row} does not reduce to its segment"),
            AlignmentDefect::WrongOp { column } => write!(f, "operation disagrees with characters at column {column}"),
            AlignmentDefect::Score { stored, recomputed } => {
                write!(f, "stored score {stored}, transcript scores {recomputed}")
            }
            AlignmentDefect::Extents => write!(f, "extents outside the reads"),
        }
    }
}

pub const GAP: u8 = b'-';

/// Checks a pair of gapped rows against the segments they align: equal row
/// lengths, no all-gap column, and each row reduces to its segment once gaps
/// are deleted.
pub fn check_gapped_rows(
    s_row: &[u8],
    t_row: &[u8],
    s_segment: &[u8],
    t_segment: &[u8],
) -> std::result::Result<(), AlignmentDefect> {
    if s_row.len() != t_row.len() {
        return Err(AlignmentDefect::RowLengths {
            s: s_row.len(),
            t: t_row.len(),
        });
    }
    if let Some(column) = s_row
        .iter()
        .zip(t_row)
        .position(|(&x, &y)| x == GAP && y == GAP)
    {
        return Err(AlignmentDefect::DoubleGap { column });
    }
    let strip = |row: &[u8]| row.iter().copied().filter(|&c| c != GAP).collect::<Vec<u8>>();
    if strip(s_row) != s_segment {
        return Err(AlignmentDefect::Residue { row: 's' });
    }
    if strip(t_row) != t_segment {
        return Err(AlignmentDefect::Residue { row: 't' });
    }
    Ok(())
}

/// Expands a transcript over the segments into gapped rows. Returns `None`
/// if the transcript consumes more characters than a segment holds.
pub fn gapped_rows(
    transcript: &Transcript,
    s_segment: &[u8],
    t_segment: &[u8],
) -> Option<(Vec<u8>, Vec<u8>)> {
    let (mut i, mut j) = (0, 0);
    let mut s_row = Vec::with_capacity(transcript.len());
    let mut t_row = Vec::with_capacity(transcript.len());
    for op in &transcript.0 {
        match op {
            EditOp::Match | EditOp::Mismatch => {
                s_row.push(*s_segment.get(i)?);
                t_row.push(*t_segment.get(j)?);
                i += 1;
                j += 1;
            }
            EditOp::Deletion => {
                s_row.push(*s_segment.get(i)?);
                t_row.push(GAP);
                i += 1;
            }
            EditOp::Insertion => {
                s_row.push(GAP);
                t_row.push(*t_segment.get(j)?);
                j += 1;
            }
        }
    }
    Some((s_row, t_row))
}

/// Score of a transcript over its segments.
pub fn transcript_score(transcript: &Transcript, sc: &ScoringScheme) -> i32 {
    transcript
        .0
        .iter()
        .map(|op| match op {
            EditOp::Match => sc.match_score,
            EditOp::Mismatch => sc.mismatch,
            EditOp::Insertion | EditOp::Deletion => sc.gap,
        })
        .sum()
}

/// Validates an extension of `s` against `t`: the three pairwise-alignment
/// properties on the gapped rows, per-column operation labels, and that the
/// transcript's score equals the stored score.
pub fn validate_extension(
    ext: &Extension,
    s: &[u8],
    t: &[u8],
    sc: &ScoringScheme,
) -> std::result::Result<(), AlignmentDefect> {
    let transcript = ext.transcript.as_ref().ok_or(AlignmentDefect::MissingTranscript)?;
    if ext.begin_s > ext.end_s || ext.end_s > s.len() || ext.begin_t > ext.end_t || ext.end_t > t.len() {
        return Err(AlignmentDefect::Extents);
    }
    let s_seg = &s[ext.begin_s..ext.end_s];
    let t_seg = &t[ext.begin_t..ext.end_t];
    let (s_row, t_row) =
        gapped_rows(transcript, s_seg, t_seg).ok_or(AlignmentDefect::Residue { row: 's' })?;
    check_gapped_rows(&s_row, &t_row, s_seg, t_seg)?;
    for (column, op) in transcript.0.iter().enumerate() {
        let ok = match op {
            EditOp::Match => s_row[column] == t_row[column],
            EditOp::Mismatch => s_row[column] != t_row[column],
            _ => true,
        };
        if !ok {
            return Err(AlignmentDefect::WrongOp { column });
        }
    }
    let recomputed = transcript_score(transcript, sc);
    if recomputed != ext.score {
        return Err(AlignmentDefect::Score {
            stored: ext.score,
            recomputed,
        });
    }
    Ok(())
}
