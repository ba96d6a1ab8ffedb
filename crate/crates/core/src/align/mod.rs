//! Stage 4: fetch the reads each rank's tasks need, then align every
//! surviving seed with the x-drop kernel.

mod xdrop;

pub use xdrop::{
    check_gapped_rows, gapped_rows, transcript_score, validate_extension, xdrop_extend,
    AlignmentDefect, EditOp, Extension, ScoringScheme, Transcript, GAP,
};

use std::collections::{BTreeSet, HashMap};
use std::io::Write;

use crate::error::{Error, Result};
use crate::exchange::{Exchanger, Wire};
use crate::overlap::{OverlapTask, SeedPair};
use crate::seq_io::{Read, ReadPartition};

/// One seed-and-extend alignment of read a against read b.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Alignment {
    pub rid_a: u64,
    pub rid_b: u64,
    pub seed: SeedPair,
    pub score: i32,
    pub begin_a: usize,
    pub end_a: usize,
    pub begin_b: usize,
    pub end_b: usize,
    pub len_a: usize,
    pub len_b: usize,
    pub transcript: Option<Transcript>,
}

impl Alignment {
    fn from_extension(task: &OverlapTask, seed: SeedPair, ext: Extension, len_a: usize, len_b: usize) -> Self {
        Alignment {
            rid_a: task.rid_a,
            rid_b: task.rid_b,
            seed,
            score: ext.score,
            begin_a: ext.begin_s,
            end_a: ext.end_s,
            begin_b: ext.begin_t,
            end_b: ext.end_t,
            len_a,
            len_b,
            transcript: ext.transcript,
        }
    }

    fn as_extension(&self) -> Extension {
        Extension {
            score: self.score,
            begin_s: self.begin_a,
            end_s: self.end_a,
            begin_t: self.begin_b,
            end_t: self.end_b,
            transcript: self.transcript.clone(),
            cells: 0,
        }
    }
}

/// Validates a stored alignment against its reads: seed inside the extents,
/// then the transcript checks of [`validate_extension`].
pub fn validate_alignment(
    al: &Alignment,
    a: &[u8],
    b: &[u8],
    k: usize,
    scoring: &ScoringScheme,
) -> std::result::Result<(), AlignmentDefect> {
    let (sa, sb) = (al.seed.pos_a as usize, al.seed.pos_b as usize);
    if al.len_a != a.len()
        || al.len_b != b.len()
        || sa < al.begin_a
        || sa + k > al.end_a
        || sb < al.begin_b
        || sb + k > al.end_b
    {
        return Err(AlignmentDefect::Extents);
    }
    validate_extension(&al.as_extension(), a, b, scoring)
}

/// Bases of every read referenced by this rank's tasks.
#[derive(Clone, Debug, Default)]
pub struct ReadCache {
    reads: HashMap<u64, Vec<u8>>,
    /// Distinct rids this rank requested from other ranks.
    pub remote_requests: u64,
    /// Reads this rank sent in reply to other ranks.
    pub replies_served: u64,
    pub rounds: u64,
}

impl ReadCache {
    pub fn from_reads<'a>(reads: impl IntoIterator<Item = &'a Read>) -> Self {
        ReadCache {
            reads: reads.into_iter().map(|r| (r.rid, r.bases.clone())).collect(),
            ..Default::default()
        }
    }

    pub fn get(&self, rid: u64) -> Option<&[u8]> {
        self.reads.get(&rid).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.reads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.reads.is_empty()
    }

    pub fn rids(&self) -> impl Iterator<Item = u64> + '_ {
        self.reads.keys().copied()
    }
}

/// Reply carrying one read's bases.
#[derive(Clone, Debug, PartialEq, Eq)]
struct ReadReply {
    rid: u64,
    bases: Vec<u8>,
}

impl Wire for ReadReply {
    fn encode(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.rid.to_le_bytes());
        out.extend_from_slice(&self.bases);
    }

    fn decode(b: &[u8]) -> Result<Self> {
        if b.len() < 8 {
            return Err(Error::Wire(format!("read reply of {} bytes", b.len())));
        }
        Ok(ReadReply {
            rid: u64::from_le_bytes(b[..8].try_into().unwrap()),
            bases: b[8..].to_vec(),
        })
    }
}

/// Builds this rank's [`ReadCache`] collectively. `local` holds the reads of
/// this rank's partition range in rid order.
pub fn fetch_reads(
    tasks: &[OverlapTask],
    local: &[Read],
    partition: &ReadPartition,
    ex: &mut Exchanger,
) -> Result<ReadCache> {
    let rank = ex.rank();
    let range = partition.range(rank);
    if local.len() as u64 != range.end - range.start {
        return Err(Error::contract(format!(
            "rank {rank} holds {} reads but owns {:?}",
            local.len(),
            range
        )));
    }
    let local_read = |rid: u64| -> Option<&Read> {
        range.contains(&rid).then(|| &local[(rid - range.start) as usize])
    };

    let mut needed = BTreeSet::new();
    for t in tasks {
        needed.insert(t.rid_a);
        needed.insert(t.rid_b);
    }
    let mut cache = ReadCache::default();
    let mut remote = Vec::new();
    for &rid in &needed {
        match local_read(rid) {
            Some(r) => {
                cache.reads.insert(rid, r.bases.clone());
            }
            None => match partition.owner(rid) {
                Some(owner) => remote.push((owner, rid)),
                None => {
                    return Err(Error::contract(format!(
                        "task references rid {rid} beyond the {} input reads",
                        partition.num_reads()
                    )))
                }
            },
        }
    }
    cache.remote_requests = remote.len() as u64;

    // Phase 1: requests to owners, deduplicated per requester.
    let mut wanted: Vec<BTreeSet<u64>> = vec![BTreeSet::new(); ex.size()];
    let s1 = ex.staged_stream(remote, |src, rid: u64| {
        if local_read(rid).is_none() {
            return Err(Error::contract(format!(
                "rank {src} asked rank {rank} for rid {rid}, owned elsewhere"
            )));
        }
        wanted[src].insert(rid);
        Ok(())
    })?;

    // Phase 2: replies back to requesters.
    let replies = wanted.iter().enumerate().flat_map(|(dst, rids)| {
        rids.iter().map(move |&rid| {
            let bases = local_read(rid).expect("checked on request").bases.clone();
            (dst, ReadReply { rid, bases })
        })
    });
    let mut incoming = HashMap::new();
    let s2 = ex.staged_stream(replies, |_, r: ReadReply| {
        incoming.insert(r.rid, r.bases);
        Ok(())
    })?;
    cache.replies_served = s2.items_sent;
    cache.rounds = s1.rounds + s2.rounds;
    cache.reads.extend(incoming);

    if let Some(rid) = needed.iter().find(|r| !cache.reads.contains_key(r)) {
        return Err(Error::contract(format!("rid {rid} missing after fetch")));
    }
    Ok(cache)
}

/// Knobs of the alignment stage.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AlignConfig {
    pub k: usize,
    pub scoring: ScoringScheme,
    pub transcripts: bool,
    /// Worker threads per rank; tasks are split into contiguous blocks.
    pub threads: usize,
}

#[derive(Clone, Debug, Default)]
pub struct AlignOutcome {
    /// Ordered by task, then seed.
    pub alignments: Vec<Alignment>,
    /// Seeds whose windows differ as forward strings (opposite-strand
    /// occurrences of a canonical k-mer).
    pub skipped_seeds: u64,
    pub cells: u64,
}

fn align_block(tasks: &[OverlapTask], cache: &ReadCache, cfg: &AlignConfig) -> Result<AlignOutcome> {
    let mut out = AlignOutcome::default();
    for task in tasks {
        let fetch = |rid| {
            cache
                .get(rid)
                .ok_or_else(|| Error::contract(format!("rid {rid} not in the read cache")))
        };
        let (a, b) = (fetch(task.rid_a)?, fetch(task.rid_b)?);
        for &seed in &task.seeds {
            let (pa, pb) = (seed.pos_a as usize, seed.pos_b as usize);
            if pa + cfg.k <= a.len() && pb + cfg.k <= b.len() && a[pa..pa + cfg.k] != b[pb..pb + cfg.k] {
                out.skipped_seeds += 1;
                continue;
            }
            let ext = xdrop_extend(a, b, pa, pb, cfg.k, &cfg.scoring, cfg.transcripts)?;
            out.cells += ext.cells;
            out.alignments
                .push(Alignment::from_extension(task, seed, ext, a.len(), b.len()));
        }
    }
    Ok(out)
}

/// Aligns every seed of every (already filtered) task. Purely local.
pub fn run_alignment_stage(
    tasks: &[OverlapTask],
    cache: &ReadCache,
    cfg: &AlignConfig,
) -> Result<AlignOutcome> {
    cfg.scoring.validate()?;
    let threads = cfg.threads.max(1).min(tasks.len().max(1));
    if threads == 1 {
        return align_block(tasks, cache, cfg);
    }
    let block = tasks.len().div_ceil(threads);
    let parts: Vec<Result<AlignOutcome>> = std::thread::scope(|scope| {
        let handles: Vec<_> = tasks
            .chunks(block)
            .map(|chunk| scope.spawn(move || align_block(chunk, cache, cfg)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("alignment worker panicked"))
            .collect()
    });
    let mut out = AlignOutcome::default();
    for part in parts {
        let part = part?;
        out.alignments.extend(part.alignments);
        out.skipped_seeds += part.skipped_seeds;
        out.cells += part.cells;
    }
    Ok(out)
}

/// Keeps the highest-scoring alignment of each pair; the earliest seed wins
/// ties. Input must be grouped by pair.
pub fn best_per_pair(alignments: Vec<Alignment>) -> Vec<Alignment> {
    let mut out: Vec<Alignment> = Vec::new();
    for al in alignments {
        match out.last_mut() {
            Some(last) if (last.rid_a, last.rid_b) == (al.rid_a, al.rid_b) => {
                if al.score > last.score {
                    *last = al;
                }
            }
            _ => out.push(al),
        }
    }
    out
}

/// `max / mean` of per-rank values; 1.0 is perfect balance.
pub fn load_imbalance(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(0.0f64, f64::max);
    if values.is_empty() || max <= 0.0 {
        log::warn!("load imbalance undefined for all-zero input, reporting 1.0");
        return 1.0;
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    max / mean
}

/// One tab-separated line per alignment: rid_a, rid_b, score, begin_a,
/// end_a, begin_b, end_b, len_a, len_b, seed pos_a, seed pos_b.
pub fn write_alignments<W: Write>(mut out: W, alignments: &[Alignment]) -> std::io::Result<()> {
    for a in alignments {
        writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            a.rid_a,
            a.rid_b,
            a.score,
            a.begin_a,
            a.end_a,
            a.begin_b,
            a.end_b,
            a.len_a,
            a.len_b,
            a.seed.pos_a,
            a.seed.pos_b
        )?;
    }
    Ok(())
}
