//! Serial reference implementations shared by the integration tests. None of
//! them use the library's rolling extraction, hashing or partitioning.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use lroverlap::align::ScoringScheme;
use lroverlap::seq_io::Read;
use lroverlap::sim::{simulate_reads, SimConfig, SimulatedReads};

/// Reference table: k-mer string → every `(rid, pos)` occurrence, sorted.
pub type SerialTable = BTreeMap<Vec<u8>, Vec<(u64, u32)>>;

fn complement(b: u8) -> u8 {
    match b {
        b'A' => b'T',
        b'C' => b'G',
        b'G' => b'C',
        _ => b'A',
    }
}

/// Counts every window of `k` ACGT characters by direct slicing.
pub fn serial_count(reads: &[Read], k: usize, canonical: bool) -> SerialTable {
    let mut table = SerialTable::new();
    for r in reads {
        if r.bases.len() < k {
            continue;
        }
        for pos in 0..=r.bases.len() - k {
            let w = &r.bases[pos..pos + k];
            if !w.iter().all(|b| b"ACGT".contains(b)) {
                continue;
            }
            let key = if canonical {
                let rc: Vec<u8> = w.iter().rev().map(|&b| complement(b)).collect();
                rc.min(w.to_vec())
            } else {
                w.to_vec()
            };
            table.entry(key).or_default().push((r.rid, pos as u32));
        }
    }
    for occ in table.values_mut() {
        occ.sort_unstable();
    }
    table
}

pub fn serial_retained(table: &SerialTable, m: u64) -> SerialTable {
    table
        .iter()
        .filter(|(_, occ)| (2..=m).contains(&(occ.len() as u64)))
        .map(|(k, v)| (k.clone(), v.clone()))
        .collect()
}

/// All read pairs sharing a retained k-mer, with the set of shared seed
/// positions oriented as `(pos in lower rid, pos in higher rid)`.
pub fn serial_overlaps(retained: &SerialTable) -> BTreeMap<(u64, u64), BTreeSet<(u32, u32)>> {
    let mut out: BTreeMap<(u64, u64), BTreeSet<(u32, u32)>> = BTreeMap::new();
    for occ in retained.values() {
        for (i, &(ra, pa)) in occ.iter().enumerate() {
            for &(rb, pb) in &occ[i + 1..] {
                if ra == rb {
                    continue;
                }
                let (key, seed) = if ra < rb {
                    ((ra, rb), (pa, pb))
                } else {
                    ((rb, ra), (pb, pa))
                };
                out.entry(key).or_default().insert(seed);
            }
        }
    }
    out
}

/// Best score of any alignment of a prefix of `a` with a prefix of `b`
/// (the empty alignment scores 0), by the full quadratic DP.
pub fn best_prefix_score(a: &[u8], b: &[u8], sc: &ScoringScheme) -> i32 {
    let mut prev: Vec<i32> = (0..=b.len() as i32).map(|j| j * sc.gap).collect();
    let mut best = 0;
    for i in 1..=a.len() {
        let mut cur = vec![i as i32 * sc.gap; b.len() + 1];
        for j in 1..=b.len() {
            let sub = if a[i - 1] == b[j - 1] { sc.match_score } else { sc.mismatch };
            cur[j] = (prev[j - 1] + sub).max(prev[j] + sc.gap).max(cur[j - 1] + sc.gap);
            best = best.max(cur[j]);
        }
        prev = cur;
    }
    best
}

/// Optimal seed-anchored extension score without any band or drop-off.
pub fn anchored_optimum(s: &[u8], t: &[u8], ps: usize, pt: usize, k: usize, sc: &ScoringScheme) -> i32 {
    let rev = |x: &[u8]| x.iter().rev().copied().collect::<Vec<u8>>();
    k as i32 * sc.match_score
        + best_prefix_score(&s[ps + k..], &t[pt + k..], sc)
        + best_prefix_score(&rev(&s[..ps]), &rev(&t[..pt]), sc)
}

/// The 20 kbp, 20x, 10%-error instance used by several checks.
pub fn standard_instance() -> SimulatedReads {
    simulate_reads(&SimConfig {
        genome_len: 20_000,
        depth: 20.0,
        read_len: 1_000,
        error_rate: 0.10,
        seed: 7,
        min_overlap: 17,
    })
    .unwrap()
}
