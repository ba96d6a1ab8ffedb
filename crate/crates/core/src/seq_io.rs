//! FASTQ input, global read identifiers and the uniform read partition.
//!
//! Read identifiers (rids) are dense integers assigned in record order across
//! all input files, so the owner of any rid is found with a binary search over
//! the partition ranges.

use std::fs;
use std::io::Write;
use std::ops::Range;
use std::path::Path;

use crate::error::{Error, Result};

/// A sequenced read. Immutable after parsing.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Read {
    pub rid: u64,
    /// Header text after the `@`, kept for labeling only.
    pub header: String,
    pub bases: Vec<u8>,
}

impl Read {
    pub fn new(rid: u64, header: impl Into<String>, bases: impl Into<Vec<u8>>) -> Self {
        Read {
            rid,
            header: header.into(),
            bases: bases.into(),
        }
    }

    pub fn len(&self) -> usize {
        self.bases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bases.is_empty()
    }
}

/// Byte offsets of one validated FASTQ record inside its buffer.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RecordSpan {
    pub header: Range<usize>,
    pub seq: Range<usize>,
}

impl RecordSpan {
    pub fn seq_len(&self) -> usize {
        self.seq.len()
    }
}

struct Lines<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Lines<'a> {
    /// Next line as a byte range, without the terminator (and without `\r`).
    fn next_line(&mut self) -> Option<Range<usize>> {
        if self.pos >= self.bytes.len() {
            return None;
        }
        let start = self.pos;
        let end = match self.bytes[start..].iter().position(|&b| b == b'\n') {
            Some(off) => {
                self.pos = start + off + 1;
                start + off
            }
            None => {
                self.pos = self.bytes.len();
                self.bytes.len()
            }
        };
        let end = if end > start && self.bytes[end - 1] == b'\r' {
            end - 1
        } else {
            end
        };
        Some(start..end)
    }

    fn rest_is_blank(&self) -> bool {
        self.bytes[self.pos..].iter().all(|b| b.is_ascii_whitespace())
    }
}

/// Validates the record structure of a FASTQ buffer and returns one span per
/// record. `first_record` offsets the record index used in error messages.
pub fn index_fastq(bytes: &[u8], first_record: usize) -> Result<Vec<RecordSpan>> {
    let mut lines = Lines { bytes, pos: 0 };
    let mut spans = Vec::new();
    loop {
        if lines.rest_is_blank() {
            break;
        }
        let record = first_record + spans.len();
        let err = |reason: &str| Error::Parse {
            record,
            reason: reason.to_string(),
        };
        let header = lines.next_line().ok_or_else(|| err("missing header line"))?;
        if bytes.get(header.start) != Some(&b'@') {
            return Err(err("header does not start with '@'"));
        }
        let seq = lines.next_line().ok_or_else(|| err("missing sequence line"))?;
        let plus = lines.next_line().ok_or_else(|| err("missing '+' line"))?;
        if bytes.get(plus.start) != Some(&b'+') {
            return Err(err("separator line does not start with '+'"));
        }
        let qual = lines.next_line().ok_or_else(|| err("missing quality line"))?;
        if qual.len() != seq.len() {
            return Err(err(&format!(
                "quality length {} differs from sequence length {}",
                qual.len(),
                seq.len()
            )));
        }
        spans.push(RecordSpan {
            header: header.start + 1..header.end,
            seq,
        });
    }
    Ok(spans)
}

/// Materializes one indexed record as a [`Read`] with uppercased bases.
pub fn read_from_span(bytes: &[u8], span: &RecordSpan, rid: u64) -> Read {
    let header = String::from_utf8_lossy(&bytes[span.header.clone()]).into_owned();
    let bases = bytes[span.seq.clone()]
        .iter()
        .map(u8::to_ascii_uppercase)
        .collect();
    Read { rid, header, bases }
}

/// Parses a whole FASTQ buffer. Rids are assigned by record index.
pub fn parse_fastq(bytes: &[u8]) -> Result<Vec<Read>> {
    let spans = index_fastq(bytes, 0)?;
    Ok(spans
        .iter()
        .enumerate()
        .map(|(i, s)| read_from_span(bytes, s, i as u64))
        .collect())
}

/// FASTQ contents of several files, concatenated in argument order.
///
/// Record spans are relative to the buffer of the file they came from; the
/// global rid of a record is its position in [`InputSet::spans`].
#[derive(Debug, Default)]
pub struct InputSet {
    pub files: Vec<Vec<u8>>,
    /// (file index, span) in global record order.
    pub spans: Vec<(usize, RecordSpan)>,
}

impl InputSet {
    pub fn from_buffers(files: Vec<Vec<u8>>) -> Result<Self> {
        let mut spans = Vec::new();
        for (fi, buf) in files.iter().enumerate() {
            for span in index_fastq(buf, spans.len())? {
                spans.push((fi, span));
            }
        }
        Ok(InputSet { files, spans })
    }

    pub fn load<P: AsRef<Path>>(paths: &[P]) -> Result<Self> {
        let files = paths
            .iter()
            .map(|p| fs::read(p.as_ref()))
            .collect::<std::io::Result<Vec<_>>>()?;
        Self::from_buffers(files)
    }

    pub fn num_reads(&self) -> usize {
        self.spans.len()
    }

    pub fn lengths(&self) -> Vec<usize> {
        self.spans.iter().map(|(_, s)| s.seq_len()).collect()
    }

    /// Parses only the records with rids in `rids`.
    pub fn parse_range(&self, rids: Range<u64>) -> Vec<Read> {
        (rids.start..rids.end)
            .map(|rid| {
                let (fi, span) = &self.spans[rid as usize];
                read_from_span(&self.files[*fi], span, rid)
            })
            .collect()
    }
}

/// Writes reads as 4-line FASTQ records with a constant synthetic quality.
pub fn write_fastq<W: Write>(mut out: W, reads: &[Read]) -> std::io::Result<()> {
    for r in reads {
        let header = if r.header.is_empty() {
            format!("read{}", r.rid)
        } else {
            r.header.clone()
        };
        writeln!(out, "@{header}")?;
        out.write_all(&r.bases)?;
        out.write_all(b"\n+\n")?;
        out.write_all(&vec![b'I'; r.bases.len()])?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Contiguous rid ranges per rank, balanced by base count.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ReadPartition {
    ranges: Vec<Range<u64>>,
    bases: Vec<u64>,
}

impl ReadPartition {
    pub fn num_ranks(&self) -> usize {
        self.ranges.len()
    }

    pub fn num_reads(&self) -> u64 {
        self.ranges.last().map_or(0, |r| r.end)
    }

    pub fn range(&self, rank: usize) -> Range<u64> {
        self.ranges[rank].clone()
    }

    pub fn ranges(&self) -> &[Range<u64>] {
        &self.ranges
    }

    /// Total bases held by each rank.
    pub fn bases(&self) -> &[u64] {
        &self.bases
    }

    /// Rank whose range contains `rid`.
    pub fn owner(&self, rid: u64) -> Option<usize> {
        if rid >= self.num_reads() {
            return None;
        }
        // First rank whose range ends after rid; empty ranges are skipped
        // because their end equals the previous end.
        Some(self.ranges.partition_point(|r| r.end <= rid))
    }
}

/// Splits reads into `p` contiguous ranges so each rank holds roughly
/// `total_bases / p` bases.
///
/// Reads are assigned greedily in rid order; the current rank advances past
/// every threshold `(r + 1) * total / p` the running prefix sum has reached.
/// The heaviest rank holds at most `ceil(total / p) + max_len` bases.
pub fn partition_lengths(lengths: &[usize], p: usize) -> Result<ReadPartition> {
    if p == 0 {
        return Err(Error::config("rank count must be at least 1"));
    }
    let total: u128 = lengths.iter().map(|&l| l as u128).sum();
    let mut starts = vec![0u64; p];
    let mut bases = vec![0u64; p];
    let mut rank = 0usize;
    let mut prefix: u128 = 0;
    for (i, &len) in lengths.iter().enumerate() {
        bases[rank] += len as u64;
        prefix += len as u128;
        while rank + 1 < p && prefix * p as u128 >= (rank as u128 + 1) * total {
            rank += 1;
            starts[rank] = i as u64 + 1;
        }
    }
    let n = lengths.len() as u64;
    let ranges = (0..p)
        .map(|r| {
            let start = if r <= rank { starts[r] } else { n };
            let end = if r < rank { starts[r + 1] } else { n };
            start..end
        })
        .collect();
    Ok(ReadPartition { ranges, bases })
}

pub fn partition_reads(reads: &[Read], p: usize) -> Result<ReadPartition> {
    let lengths: Vec<usize> = reads.iter().map(Read::len).collect();
    partition_lengths(&lengths, p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn single_record() {
        let reads = parse_fastq(b"@r0\nACGT\n+\nIIII\n").unwrap();
        assert_eq!(reads, vec![Read::new(0, "r0", "ACGT")]);
    }

    #[test]
    fn case_normalized_in_record_order() {
        let reads = parse_fastq(b"@r0\nacgt\n+\nIIII\n@r1\nTT\n+\nII\n").unwrap();
        assert_eq!(reads.len(), 2);
        assert_eq!(reads[0].bases, b"ACGT");
        assert_eq!(reads[1].bases, b"TT");
        assert_eq!(reads[1].rid, 1);
    }

    #[test]
    fn quality_mismatch_names_record() {
        match parse_fastq(b"@r0\nACGT\n+\nIII\n") {
            Err(Error::Parse { record, .. }) => assert_eq!(record, 0),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn malformed_records() {
        let second_bad = b"@r0\nAC\n+\nII\nr1\nAC\n+\nII\n";
        assert!(matches!(
            parse_fastq(second_bad),
            Err(Error::Parse { record: 1, .. })
        ));
        assert!(matches!(
            parse_fastq(b"@r0\nAC\n"),
            Err(Error::Parse { record: 0, .. })
        ));
        assert!(matches!(
            parse_fastq(b"@r0\nAC\n-\nII\n"),
            Err(Error::Parse { record: 0, .. })
        ));
    }

    #[test]
    fn crlf_and_missing_final_newline() {
        let reads = parse_fastq(b"@a\r\nAC\r\n+\r\nII\r\n@b\nGG\n+\nII").unwrap();
        assert_eq!(reads[0].bases, b"AC");
        assert_eq!(reads[1].bases, b"GG");
    }

    #[test]
    fn multi_file_rids_continue() {
        let set = InputSet::from_buffers(vec![
            b"@a\nAC\n+\nII\n".to_vec(),
            b"@b\nGG\n+\nII\n@c\nT\n+\nI\n".to_vec(),
        ])
        .unwrap();
        let reads = set.parse_range(0..3);
        assert_eq!(reads[2].rid, 2);
        assert_eq!(reads[2].header, "c");
        assert_eq!(set.parse_range(1..2)[0].bases, b"GG");
    }

    #[test]
    fn multi_file_error_uses_global_record_index() {
        let err = InputSet::from_buffers(vec![
            b"@a\nAC\n+\nII\n".to_vec(),
            b"@b\nGG\n+\nI\n".to_vec(),
        ])
        .unwrap_err();
        assert!(matches!(err, Error::Parse { record: 1, .. }));
    }

    #[test]
    fn partition_examples() {
        let p = partition_lengths(&[10, 10, 10, 10], 2).unwrap();
        assert_eq!(p.ranges(), &[0..2, 2..4]);
        let p = partition_lengths(&[30, 10, 10, 10], 2).unwrap();
        assert_eq!(p.ranges(), &[0..1, 1..4]);
        assert_eq!(p.bases(), &[30, 30]);
        let p = partition_lengths(&[5, 7, 9], 1).unwrap();
        assert_eq!(p.ranges(), &[0..3]);
    }

    #[test]
    fn partition_more_ranks_than_reads() {
        let p = partition_lengths(&[4, 4], 5).unwrap();
        assert_eq!(p.num_ranks(), 5);
        let covered: u64 = p.ranges().iter().map(|r| r.end - r.start).sum();
        assert_eq!(covered, 2);
        assert_eq!(p.owner(0).map(|o| p.range(o).contains(&0)), Some(true));
        assert_eq!(p.owner(2), None);
    }

    #[test]
    fn partition_rejects_zero_ranks() {
        assert!(matches!(partition_lengths(&[1], 0), Err(Error::Config(_))));
    }

    proptest! {
        #[test]
        fn partition_covers_and_balances(
            lengths in prop::collection::vec(0usize..500, 0..60),
            p in 1usize..12,
        ) {
            let part = partition_lengths(&lengths, p).unwrap();
            let mut next = 0u64;
            for (rank, r) in part.ranges().iter().enumerate() {
                prop_assert_eq!(r.start, next);
                next = r.end;
                let sum: u64 = lengths[r.start as usize..r.end as usize]
                    .iter().map(|&l| l as u64).sum();
                prop_assert_eq!(sum, part.bases()[rank]);
            }
            prop_assert_eq!(next, lengths.len() as u64);
            let total: u64 = lengths.iter().map(|&l| l as u64).sum();
            let max_len = lengths.iter().copied().max().unwrap_or(0) as u64;
            let bound = total.div_ceil(p as u64) + max_len;
            prop_assert!(part.bases().iter().all(|&b| b <= bound));
            for rid in 0..lengths.len() as u64 {
                let o = part.owner(rid).unwrap();
                prop_assert!(part.range(o).contains(&rid));
            }
        }

        #[test]
        fn fastq_round_trip(seqs in prop::collection::vec("[ACGTN]{0,40}", 0..20)) {
            let reads: Vec<Read> = seqs.iter().enumerate()
                .map(|(i, s)| Read::new(i as u64, format!("r{i}"), s.as_bytes()))
                .collect();
            let mut buf = Vec::new();
            write_fastq(&mut buf, &reads).unwrap();
            let parsed = parse_fastq(&buf).unwrap();
            prop_assert_eq!(parsed, reads);
        }
    }
}
