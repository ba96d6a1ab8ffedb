//! Stage 3: read pairs that share a retained k-mer.
//!
//! Each rank walks its table partition and, for every retained k-mer, emits
//! one task per unordered pair of its locations. A task is routed to the rank
//! owning one of its two reads, chosen by an odd-even rule on the read ids so
//! that alignment work spreads evenly. The owner merges all tasks of a pair
//! into one [`OverlapTask`] carrying every shared seed.

use std::collections::HashMap;
use std::io::Write;

use crate::error::{Error, Result};
use crate::exchange::{Exchanger, Wire};
use crate::seq_io::ReadPartition;
use crate::table::{Location, TablePartition};

/// Start positions of one shared k-mer in read a and read b.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SeedPair {
    pub pos_a: u32,
    pub pos_b: u32,
}

impl SeedPair {
    pub fn new(pos_a: u32, pos_b: u32) -> Self {
        SeedPair { pos_a, pos_b }
    }
}

/// A single pair discovered from one k-mer, before merging.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RawTask {
    pub rid_a: u64,
    pub rid_b: u64,
    pub seed: SeedPair,
}

impl Wire for RawTask {
    fn encode(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.rid_a.to_le_bytes());
        out.extend_from_slice(&self.rid_b.to_le_bytes());
        out.extend_from_slice(&self.seed.pos_a.to_le_bytes());
        out.extend_from_slice(&self.seed.pos_b.to_le_bytes());
    }

    fn decode(b: &[u8]) -> Result<Self> {
        if b.len() != 24 {
            return Err(Error::Wire(format!("task record of {} bytes", b.len())));
        }
        Ok(RawTask {
            rid_a: u64::from_le_bytes(b[..8].try_into().unwrap()),
            rid_b: u64::from_le_bytes(b[8..16].try_into().unwrap()),
            seed: SeedPair {
                pos_a: u32::from_le_bytes(b[16..20].try_into().unwrap()),
                pos_b: u32::from_le_bytes(b[20..].try_into().unwrap()),
            },
        })
    }
}

/// An unordered read pair (`rid_a < rid_b`) with its shared seeds, sorted by
/// `pos_a` then `pos_b`.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct OverlapTask {
    pub rid_a: u64,
    pub rid_b: u64,
    pub seeds: Vec<SeedPair>,
}

/// Raw pairs of one retained entry.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct PairEnumeration {
    pub tasks: Vec<RawTask>,
    /// Location pairs visited, `f(f-1)/2`.
    pub visited: u64,
    /// Visited pairs whose two locations lie in the same read.
    pub self_pairs: u64,
}

/// Visits each unordered location pair `(i < j)` once. Pairs within one read
/// are counted and skipped. `r_a` is the rid of the earlier location.
pub fn for_each_pair(locations: &[Location], mut emit: impl FnMut(RawTask)) -> (u64, u64) {
    let mut visited = 0;
    let mut self_pairs = 0;
    for (i, a) in locations.iter().enumerate() {
        for b in &locations[i + 1..] {
            visited += 1;
            if a.rid == b.rid {
                self_pairs += 1;
                continue;
            }
            emit(RawTask {
                rid_a: a.rid,
                rid_b: b.rid,
                seed: SeedPair::new(a.pos, b.pos),
            });
        }
    }
    (visited, self_pairs)
}

pub fn enumerate_pairs(locations: &[Location]) -> PairEnumeration {
    let mut tasks = Vec::new();
    let (visited, self_pairs) = for_each_pair(locations, |t| tasks.push(t));
    PairEnumeration {
        tasks,
        visited,
        self_pairs,
    }
}

/// The read whose owner receives task `(r_a, r_b)`:
///
/// * `r_a` even and `r_a > r_b + 1` → `r_a`
/// * `r_a` odd and `r_a < r_b + 1` → `r_a`
/// * otherwise → `r_b`
pub fn assign_owner(r_a: u64, r_b: u64) -> u64 {
    if r_a % 2 == 0 && r_a > r_b + 1 {
        r_a
    } else if r_a % 2 != 0 && r_a < r_b + 1 {
        r_a
    } else {
        r_b
    }
}

/// Merges raw tasks by unordered pair.
#[derive(Debug, Default)]
pub struct Consolidator {
    pairs: HashMap<(u64, u64), Vec<SeedPair>>,
    received: u64,
}

impl Consolidator {
    pub fn add(&mut self, t: RawTask) {
        self.received += 1;
        let (key, seed) = if t.rid_a <= t.rid_b {
            ((t.rid_a, t.rid_b), t.seed)
        } else {
            ((t.rid_b, t.rid_a), SeedPair::new(t.seed.pos_b, t.seed.pos_a))
        };
        self.pairs.entry(key).or_default().push(seed);
    }

    pub fn received(&self) -> u64 {
        self.received
    }

    /// Tasks sorted by pair with deduplicated, sorted seeds.
    pub fn finish(self) -> Vec<OverlapTask> {
        let mut tasks: Vec<OverlapTask> = self
            .pairs
            .into_iter()
            .map(|((rid_a, rid_b), mut seeds)| {
                seeds.sort_unstable();
                seeds.dedup();
                OverlapTask { rid_a, rid_b, seeds }
            })
            .collect();
        tasks.sort_unstable_by_key(|t| (t.rid_a, t.rid_b));
        tasks
    }
}

pub fn consolidate(raw: impl IntoIterator<Item = RawTask>) -> Vec<OverlapTask> {
    let mut c = Consolidator::default();
    raw.into_iter().for_each(|t| c.add(t));
    c.finish()
}

/// Keeps a seed when its `pos_a` is at least `min_distance` past the last kept
/// seed, then truncates to `max_seeds`.
pub fn filter_seeds(task: &OverlapTask, min_distance: u32, max_seeds: usize) -> OverlapTask {
    let mut kept: Vec<SeedPair> = Vec::new();
    for &s in &task.seeds {
        if kept.len() >= max_seeds {
            break;
        }
        match kept.last() {
            Some(last) if s.pos_a < last.pos_a.saturating_add(min_distance) => {}
            _ => kept.push(s),
        }
    }
    OverlapTask {
        rid_a: task.rid_a,
        rid_b: task.rid_b,
        seeds: kept,
    }
}

/// Global pair-count bounds; fields add up across ranks.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct PairBounds {
    /// Retained k-mers; each contributes at least one pair.
    pub lower: u64,
    /// `Σ f(f-1)/2` over retained k-mers.
    pub exact: u64,
    /// `retained · m(m-1)/2`.
    pub upper: u64,
}

impl std::ops::Add for PairBounds {
    type Output = PairBounds;

    fn add(self, o: PairBounds) -> PairBounds {
        PairBounds {
            lower: self.lower + o.lower,
            exact: self.exact + o.exact,
            upper: self.upper + o.upper,
        }
    }
}

/// Bounds from the frequencies of retained k-mers and the threshold `m`.
pub fn compute_bounds(frequencies: impl IntoIterator<Item = u64>, m: u64) -> PairBounds {
    let mut b = PairBounds::default();
    for f in frequencies {
        b.lower += 1;
        b.exact += f * f.saturating_sub(1) / 2;
    }
    b.upper = b.lower * (m * m.saturating_sub(1) / 2);
    b
}

/// What stage 3 leaves behind on one rank.
#[derive(Debug)]
pub struct OverlapOutcome {
    /// Consolidated tasks owned by this rank, before seed filtering.
    pub tasks: Vec<OverlapTask>,
    /// Bounds over this rank's table partition.
    pub bounds: PairBounds,
    /// Location pairs visited during enumeration.
    pub visited: u64,
    pub self_pairs: u64,
    pub tasks_sent: u64,
    pub tasks_received: u64,
    pub rounds: u64,
}

/// Runs stage 3 collectively over this rank's finalized table.
pub fn run_overlap_stage(
    table: &TablePartition,
    partition: &ReadPartition,
    ex: &mut Exchanger,
) -> Result<OverlapOutcome> {
    if !table.is_finalized() {
        return Err(Error::contract("overlap stage needs a finalized table"));
    }
    let rank = ex.rank();
    let bounds = compute_bounds(table.iter().map(|(_, e)| e.count), table.max_count());
    let num_reads = partition.num_reads();

    let mut visited = 0u64;
    let mut self_pairs = 0u64;
    let mut bad_rid = None;
    // Pairs are materialized one entry at a time.
    let items = table.iter().flat_map(|(_, e)| {
        let en = enumerate_pairs(&e.locations);
        visited += en.visited;
        self_pairs += en.self_pairs;
        en.tasks
    });
    let items = items.filter_map(|t| {
        let owner_rid = assign_owner(t.rid_a, t.rid_b);
        match partition.owner(owner_rid) {
            Some(dst) => Some((dst, t)),
            None => {
                bad_rid.get_or_insert(owner_rid);
                None
            }
        }
    });

    let mut consolidator = Consolidator::default();
    let summary = ex.staged_stream(items, |_, t: RawTask| {
        let owner_rid = assign_owner(t.rid_a, t.rid_b);
        if partition.owner(owner_rid) != Some(rank) {
            return Err(Error::contract(format!(
                "task ({}, {}) delivered to rank {rank}",
                t.rid_a, t.rid_b
            )));
        }
        consolidator.add(t);
        Ok(())
    })?;
    if let Some(rid) = bad_rid {
        return Err(Error::contract(format!(
            "table references rid {rid} beyond the {num_reads} input reads"
        )));
    }
    let tasks_received = consolidator.received();
    Ok(OverlapOutcome {
        tasks: consolidator.finish(),
        bounds,
        visited,
        self_pairs,
        tasks_sent: summary.items_sent,
        tasks_received,
        rounds: summary.rounds,
    })
}

/// One line per task: `rid_a<TAB>rid_b<TAB>seed_count<TAB>pos_a:pos_b ...`.
pub fn write_overlaps<W: Write>(mut out: W, tasks: &[OverlapTask]) -> std::io::Result<()> {
    for t in tasks {
        write!(out, "{}\t{}\t{}\t", t.rid_a, t.rid_b, t.seeds.len())?;
        for (i, s) in t.seeds.iter().enumerate() {
            if i > 0 {
                out.write_all(b" ")?;
            }
            write!(out, "{}:{}", s.pos_a, s.pos_b)?;
        }
        out.write_all(b"\n")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn loc(rid: u64, pos: u32) -> Location {
        Location { rid, pos }
    }

    /// Brute force over ordered index pairs, keeping i < j.
    fn pairs_oracle(locs: &[Location]) -> Vec<(u64, u64, u32, u32)> {
        let mut out = Vec::new();
        for i in 0..locs.len() {
            for j in 0..locs.len() {
                if i < j && locs[i].rid != locs[j].rid {
                    out.push((locs[i].rid, locs[j].rid, locs[i].pos, locs[j].pos));
                }
            }
        }
        out
    }

    #[test]
    fn single_pair() {
        let e = enumerate_pairs(&[loc(1, 10), loc(4, 20)]);
        assert_eq!(
            e.tasks,
            vec![RawTask {
                rid_a: 1,
                rid_b: 4,
                seed: SeedPair::new(10, 20)
            }]
        );
    }

    #[test]
    fn four_distinct_reads_give_six() {
        let e = enumerate_pairs(&[loc(0, 0), loc(1, 0), loc(2, 0), loc(3, 0)]);
        assert_eq!(e.tasks.len(), 6);
        assert_eq!(e.visited, 6);
    }

    #[test]
    fn self_pair_is_dropped() {
        let locs = [loc(2, 3), loc(5, 1), loc(5, 8)];
        let e = enumerate_pairs(&locs);
        assert_eq!(e.visited, 3);
        assert_eq!(e.self_pairs, 1);
        assert_eq!(e.tasks.len(), 2);
        assert_eq!(e.tasks.len(), pairs_oracle(&locs).len());
    }

    #[test]
    fn owner_branches() {
        assert_eq!(assign_owner(4, 2), 4);
        assert_eq!(assign_owner(3, 7), 3);
        assert_eq!(assign_owner(2, 5), 5);
        // adjacent rids fall through to the else branch
        assert_eq!(assign_owner(4, 3), 3);
    }

    #[test]
    fn consolidate_merges_and_reorients() {
        let tasks = consolidate([
            RawTask { rid_a: 1, rid_b: 4, seed: SeedPair::new(50, 60) },
            RawTask { rid_a: 4, rid_b: 1, seed: SeedPair::new(20, 10) },
            RawTask { rid_a: 1, rid_b: 4, seed: SeedPair::new(10, 20) },
        ]);
        assert_eq!(
            tasks,
            vec![OverlapTask {
                rid_a: 1,
                rid_b: 4,
                seeds: vec![SeedPair::new(10, 20), SeedPair::new(50, 60)],
            }]
        );
    }

    #[test]
    fn filter_examples() {
        let t = OverlapTask {
            rid_a: 0,
            rid_b: 1,
            seeds: vec![SeedPair::new(0, 0), SeedPair::new(5, 5), SeedPair::new(40, 1)],
        };
        let f = filter_seeds(&t, 17, usize::MAX);
        assert_eq!(f.seeds, vec![SeedPair::new(0, 0), SeedPair::new(40, 1)]);
        assert_eq!(filter_seeds(&t, 0, 1).seeds, vec![SeedPair::new(0, 0)]);
        assert_eq!(filter_seeds(&t, 0, usize::MAX), t);
    }

    #[test]
    fn bounds_examples() {
        let b = compute_bounds(vec![2; 10], 5);
        assert_eq!(b, PairBounds { lower: 10, exact: 10, upper: 100 });
        let b = compute_bounds([7], 7);
        assert_eq!(b.exact, 21);
        assert_eq!(b.exact, b.upper);
    }

    #[test]
    fn overlap_lines() {
        let mut out = Vec::new();
        write_overlaps(
            &mut out,
            &[OverlapTask {
                rid_a: 0,
                rid_b: 3,
                seeds: vec![SeedPair::new(1, 2), SeedPair::new(30, 40)],
            }],
        )
        .unwrap();
        assert_eq!(out, b"0\t3\t2\t1:2 30:40\n");
    }

    proptest! {
        #[test]
        fn enumeration_matches_oracle(raw in prop::collection::vec((0u64..6, 0u32..50), 0..12)) {
            let mut locs: Vec<Location> = raw.iter().map(|&(r, p)| loc(r, p)).collect();
            locs.sort();
            locs.dedup();
            let f = locs.len() as u64;
            let e = enumerate_pairs(&locs);
            prop_assert_eq!(e.visited, f * f.saturating_sub(1) / 2);
            let got: Vec<_> = e.tasks.iter()
                .map(|t| (t.rid_a, t.rid_b, t.seed.pos_a, t.seed.pos_b)).collect();
            prop_assert_eq!(got, pairs_oracle(&locs));
        }

        #[test]
        fn owner_is_orientation_free_for_sorted_pairs(a in 0u64..1000, b in 0u64..1000) {
            prop_assume!(a < b);
            let o = assign_owner(a, b);
            prop_assert!(o == a || o == b);
            prop_assert_eq!(o, if a % 2 == 0 { b } else { a });
        }

        #[test]
        fn raw_task_wire(a in any::<u64>(), b in any::<u64>(), pa in any::<u32>(), pb in any::<u32>()) {
            let t = RawTask { rid_a: a, rid_b: b, seed: SeedPair::new(pa, pb) };
            let mut buf = Vec::new();
            t.encode(&mut buf);
            prop_assert_eq!(RawTask::decode(&buf).unwrap(), t);
        }
    }
}
