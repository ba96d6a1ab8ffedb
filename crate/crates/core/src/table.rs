//! Stage 2: the distributed k-mer table of `(rid, position)` occurrences.
//!
//! Only keys admitted by stage 1 are stored. Each entry counts every
//! occurrence but keeps at most `m + 1` locations; one slot beyond `m` is
//! enough to tell "exactly m" from "too many". Finalization drops
//! false-positive singletons and repeats, leaving the retained k-mers.

use std::collections::BTreeMap;
use std::io::Write;

use crate::error::{Error, Result};
use crate::exchange::{Exchanger, Wire};
use crate::kmer::{kmers, owner_of, Kmer, KmerMap, KmerParams, KmerSet, MIN_COUNT};
use crate::seq_io::Read;

/// One occurrence of a k-mer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Location {
    pub rid: u64,
    pub pos: u32,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct KmerEntry {
    pub count: u64,
    pub locations: Vec<Location>,
}

/// Stage-2 message: a k-mer with where it was seen.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LocatedKmer {
    pub kmer: Kmer,
    pub rid: u64,
    pub pos: u32,
}

impl Wire for LocatedKmer {
    fn encode(&self, out: &mut Vec<u8>) {
        self.kmer.write_wire(out);
        out.extend_from_slice(&self.rid.to_le_bytes());
        out.extend_from_slice(&self.pos.to_le_bytes());
    }

    fn decode(bytes: &[u8]) -> Result<Self> {
        let n = Kmer::WIRE_LEN;
        if bytes.len() != n + 12 {
            return Err(Error::Wire(format!("location record of {} bytes", bytes.len())));
        }
        Ok(LocatedKmer {
            kmer: Kmer::read_wire(&bytes[..n])?,
            rid: u64::from_le_bytes(bytes[n..n + 8].try_into().unwrap()),
            pos: u32::from_le_bytes(bytes[n + 8..].try_into().unwrap()),
        })
    }
}

/// Counters produced by [`TablePartition::finalize`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct FinalizeStats {
    /// Keys before finalization.
    pub candidates: u64,
    /// Occurrences of candidate keys.
    pub candidate_occurrences: u64,
    /// Candidates seen once: Bloom false positives.
    pub false_positive_singletons: u64,
    pub over_threshold: u64,
    pub retained: u64,
    /// Occurrences of retained k-mers.
    pub retained_occurrences: u64,
    /// All k-mer instances delivered to this partition, candidate or not.
    pub received: u64,
}

impl FinalizeStats {
    /// Distinct k-mers owned by this rank. A non-candidate k-mer was inserted
    /// into the Bloom filter exactly once, so every delivered instance that
    /// did not hit a key is a distinct singleton.
    pub fn distinct(&self) -> u64 {
        self.candidates + (self.received - self.candidate_occurrences)
    }
}

/// One rank's hash table partition.
#[derive(Clone, Debug)]
pub struct TablePartition {
    entries: KmerMap<KmerEntry>,
    max_count: u64,
    received: u64,
    finalized: bool,
}

impl TablePartition {
    /// Table whose keys are `candidates`, all with empty location lists.
    pub fn from_candidates(candidates: KmerSet, max_count: u64) -> Self {
        let entries = candidates
            .into_iter()
            .map(|k| (k, KmerEntry::default()))
            .collect();
        TablePartition {
            entries,
            max_count,
            received: 0,
            finalized: false,
        }
    }

    pub fn max_count(&self) -> u64 {
        self.max_count
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, kmer: &Kmer) -> Option<&KmerEntry> {
        self.entries.get(kmer)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Kmer, &KmerEntry)> {
        self.entries.iter()
    }

    /// Records one occurrence. Non-keys are ignored.
    pub fn insert_location(&mut self, kmer: &Kmer, rid: u64, pos: u32) {
        self.received += 1;
        if let Some(entry) = self.entries.get_mut(kmer) {
            entry.count += 1;
            if entry.locations.len() as u64 <= self.max_count {
                entry.locations.push(Location { rid, pos });
            }
        }
    }

    /// `count → number of keys with that count`, over all current keys.
    pub fn histogram(&self) -> BTreeMap<u64, u64> {
        let mut h = BTreeMap::new();
        for e in self.entries.values() {
            *h.entry(e.count).or_insert(0) += 1;
        }
        h
    }

    /// Removes entries with count outside `[2, m]` and sorts the surviving
    /// location lists by `(rid, pos)`.
    pub fn finalize(&mut self) -> FinalizeStats {
        let mut stats = FinalizeStats {
            candidates: self.entries.len() as u64,
            received: self.received,
            ..Default::default()
        };
        let m = self.max_count;
        self.entries.retain(|_, e| {
            stats.candidate_occurrences += e.count;
            if e.count < MIN_COUNT {
                stats.false_positive_singletons += 1;
                false
            } else if e.count > m {
                stats.over_threshold += 1;
                false
            } else {
                true
            }
        });
        for e in self.entries.values_mut() {
            debug_assert_eq!(e.locations.len() as u64, e.count);
            e.locations.sort_unstable();
            debug_assert!(
                e.locations.windows(2).all(|w| w[0] != w[1]),
                "duplicate occurrence"
            );
            stats.retained_occurrences += e.count;
        }
        stats.retained = self.entries.len() as u64;
        self.finalized = true;
        stats
    }

    pub fn is_finalized(&self) -> bool {
        self.finalized
    }
}

/// What stage 2 leaves behind on one rank.
#[derive(Debug)]
pub struct TableOutcome {
    pub table: TablePartition,
    pub stats: FinalizeStats,
    /// Count histogram taken before finalization.
    pub histogram: BTreeMap<u64, u64>,
    pub kmers_extracted: u64,
    pub rounds: u64,
}

/// Runs stage 2 collectively: second pass over this rank's reads.
pub fn run_table_stage(
    reads: &[Read],
    candidates: KmerSet,
    params: &KmerParams,
    ex: &mut Exchanger,
) -> Result<TableOutcome> {
    let p = ex.size();
    let rank = ex.rank();
    let mut table = TablePartition::from_candidates(candidates, params.max_count);
    let mut extracted = 0u64;
    let items = reads.iter().flat_map(|r| {
        kmers(&r.bases, params.k, params.canonical).map(move |(kmer, pos)| {
            let rec = LocatedKmer {
                kmer,
                rid: r.rid,
                pos: pos as u32,
            };
            (owner_of(&kmer, p), rec)
        })
    });
    let items = items.inspect(|_| extracted += 1);
    let summary = ex.staged_stream(items, |_, rec: LocatedKmer| {
        if owner_of(&rec.kmer, p) != rank {
            return Err(Error::contract(format!(
                "k-mer {} delivered to rank {rank}, not its owner",
                rec.kmer
            )));
        }
        table.insert_location(&rec.kmer, rec.rid, rec.pos);
        Ok(())
    })?;
    let histogram = table.histogram();
    let stats = table.finalize();
    Ok(TableOutcome {
        table,
        stats,
        histogram,
        kmers_extracted: extracted,
        rounds: summary.rounds,
    })
}

/// Writes `count<TAB>num_kmers` lines in ascending count order.
pub fn write_histogram<W: Write>(mut out: W, hist: &BTreeMap<u64, u64>) -> std::io::Result<()> {
    for (count, n) in hist {
        writeln!(out, "{count}\t{n}")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn km(s: &str) -> Kmer {
        Kmer::pack(s.as_bytes()).unwrap()
    }

    fn table_with(keys: &[&str], m: u64) -> TablePartition {
        TablePartition::from_candidates(keys.iter().map(|s| km(s)).collect(), m)
    }

    #[test]
    fn insert_into_fresh_key() {
        let mut t = table_with(&["ACG"], 4);
        t.insert_location(&km("ACG"), 7, 42);
        let e = t.get(&km("ACG")).unwrap();
        assert_eq!(e.count, 1);
        assert_eq!(e.locations, vec![Location { rid: 7, pos: 42 }]);
    }

    #[test]
    fn non_candidate_is_ignored() {
        let mut t = table_with(&["ACG"], 4);
        t.insert_location(&km("TTT"), 1, 0);
        assert!(t.get(&km("TTT")).is_none());
        assert_eq!(t.get(&km("ACG")).unwrap().count, 0);
    }

    #[test]
    fn locations_capped_at_m_plus_one() {
        let mut t = table_with(&["ACG"], 3);
        for i in 0..5 {
            t.insert_location(&km("ACG"), i, 0);
        }
        let e = t.get(&km("ACG")).unwrap();
        assert_eq!(e.count, 5);
        assert_eq!(e.locations.len(), 4);
    }

    #[test]
    fn finalize_band() {
        let mut t = table_with(&["AAA", "CCC", "GGG"], 3);
        t.insert_location(&km("AAA"), 0, 0);
        for i in 0..4 {
            t.insert_location(&km("CCC"), i, 0);
        }
        t.insert_location(&km("GGG"), 5, 9);
        t.insert_location(&km("GGG"), 2, 1);
        t.insert_location(&km("TTT"), 2, 1);
        let stats = t.finalize();
        assert!(t.get(&km("AAA")).is_none());
        assert!(t.get(&km("CCC")).is_none());
        let g = t.get(&km("GGG")).unwrap();
        assert_eq!(g.count, 2);
        assert_eq!(
            g.locations,
            vec![Location { rid: 2, pos: 1 }, Location { rid: 5, pos: 9 }]
        );
        assert_eq!(stats.false_positive_singletons, 1);
        assert_eq!(stats.over_threshold, 1);
        assert_eq!(stats.retained, 1);
        assert_eq!(stats.received, 8);
        assert_eq!(stats.candidate_occurrences, 7);
        // three keys plus the one non-key singleton
        assert_eq!(stats.distinct(), 4);
    }

    #[test]
    fn located_kmer_wire() {
        let rec = LocatedKmer {
            kmer: km("GATTACA"),
            rid: 1 << 40,
            pos: 77,
        };
        let mut buf = Vec::new();
        rec.encode(&mut buf);
        assert_eq!(LocatedKmer::decode(&buf).unwrap(), rec);
        assert!(LocatedKmer::decode(&buf[1..]).is_err());
    }

    #[test]
    fn histogram_lines() {
        let mut h = BTreeMap::new();
        h.insert(2, 10);
        h.insert(5, 1);
        let mut out = Vec::new();
        write_histogram(&mut out, &h).unwrap();
        assert_eq!(out, b"2\t10\n5\t1\n");
    }
}
