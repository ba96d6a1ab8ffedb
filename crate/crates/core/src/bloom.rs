//! Stage 1: a distributed Bloom filter that separates k-mers seen more than
//! once from (most) singletons.
//!
//! Every k-mer instance is streamed to its owner rank, which inserts it into
//! its filter partition. A k-mer whose bits were all set already becomes a
//! candidate key of the owner's hash table.

use std::f64::consts::LN_2;

use crate::error::{Error, Result};
use crate::exchange::Exchanger;
use crate::kmer::{kmers, owner_of, DatasetModel, Kmer, KmerParams, KmerSet};
use crate::seq_io::Read;

const H1_SEED: u64 = 0x243f_6a88_85a3_08d3;
const H2_SEED: u64 = 0x1319_8a2e_0370_7344;

pub const MAX_HASHES: u32 = 16;

/// Standard Bloom sizing: `b = ceil(-n ln p / ln² 2)` bits and
/// `h = round(b / n · ln 2)` hash functions, with `h` clamped to `1..=16`.
pub fn size_bloom(expected_n: f64, target_fp: f64) -> Result<(u64, u32)> {
    if !(expected_n > 0.0) {
        return Err(Error::config("expected Bloom cardinality must be positive"));
    }
    if !(target_fp > 0.0 && target_fp < 1.0) {
        return Err(Error::config("Bloom false-positive target must lie in (0, 1)"));
    }
    let bits = (-expected_n * target_fp.ln() / (LN_2 * LN_2)).ceil().max(1.0);
    let hashes = ((bits / expected_n) * LN_2).round().clamp(1.0, MAX_HASHES as f64);
    Ok((bits as u64, hashes as u32))
}

/// Bit indices by double hashing, `g_i = h1 + i·h2 mod b`.
fn bit_indices(kmer: &Kmer, num_bits: u64, num_hashes: u32) -> impl Iterator<Item = u64> {
    let h1 = kmer.hash64(H1_SEED);
    let h2 = kmer.hash64(H2_SEED) | 1;
    (0..num_hashes as u64).map(move |i| h1.wrapping_add(i.wrapping_mul(h2)) % num_bits)
}

/// One rank's partition of the distributed filter.
#[derive(Clone, Debug)]
pub struct BloomFilter {
    words: Vec<u64>,
    num_bits: u64,
    num_hashes: u32,
    inserted: u64,
}

impl BloomFilter {
    pub fn new(num_bits: u64, num_hashes: u32) -> Result<Self> {
        if num_bits == 0 || !(1..=MAX_HASHES).contains(&num_hashes) {
            return Err(Error::config(format!(
                "invalid Bloom geometry: {num_bits} bits, {num_hashes} hashes"
            )));
        }
        Ok(BloomFilter {
            words: vec![0; num_bits.div_ceil(64) as usize],
            num_bits,
            num_hashes,
            inserted: 0,
        })
    }

    pub fn with_target(expected_n: f64, target_fp: f64) -> Result<Self> {
        let (b, h) = size_bloom(expected_n, target_fp)?;
        Self::new(b, h)
    }

    pub fn num_bits(&self) -> u64 {
        self.num_bits
    }

    pub fn num_hashes(&self) -> u32 {
        self.num_hashes
    }

    pub fn inserted(&self) -> u64 {
        self.inserted
    }

    fn indices(&self, kmer: &Kmer) -> impl Iterator<Item = u64> {
        bit_indices(kmer, self.num_bits, self.num_hashes)
    }

    /// Inserts `kmer` and reports whether all of its bits were already set.
    pub fn insert_and_test(&mut self, kmer: &Kmer) -> bool {
        let mut seen = true;
        for idx in bit_indices(kmer, self.num_bits, self.num_hashes) {
            let (w, bit) = ((idx / 64) as usize, idx % 64);
            let mask = 1u64 << bit;
            seen &= self.words[w] & mask != 0;
            self.words[w] |= mask;
        }
        self.inserted += 1;
        seen
    }

    pub fn contains(&self, kmer: &Kmer) -> bool {
        self.indices(kmer)
            .all(|idx| self.words[(idx / 64) as usize] & (1 << (idx % 64)) != 0)
    }

    pub fn fill_ratio(&self) -> f64 {
        let set: u64 = self.words.iter().map(|w| w.count_ones() as u64).sum();
        set as f64 / self.num_bits as f64
    }

    /// False-positive probability implied by the current fill.
    pub fn estimated_fp(&self) -> f64 {
        self.fill_ratio().powi(self.num_hashes as i32)
    }
}

/// Sizing knobs for the filter.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BloomConfig {
    pub target_fp: f64,
    /// Expected distinct k-mers as a fraction of all k-mer instances.
    pub distinct_fraction: f64,
}

impl Default for BloomConfig {
    fn default() -> Self {
        BloomConfig {
            target_fp: 0.05,
            distinct_fraction: 0.9,
        }
    }
}

/// What stage 1 leaves behind on one rank.
#[derive(Debug)]
pub struct BloomOutcome {
    /// Keys of this rank's hash table; every one is owned by this rank.
    pub candidates: KmerSet,
    pub num_bits: u64,
    pub num_hashes: u32,
    pub expected_n: f64,
    /// k-mer instances extracted from this rank's reads.
    pub kmers_extracted: u64,
    /// k-mer instances received and inserted into this rank's filter.
    pub kmers_inserted: u64,
    pub estimated_fp: f64,
    pub rounds: u64,
}

/// Runs stage 1 collectively. `reads` are this rank's reads.
pub fn run_bloom_stage(
    reads: &[Read],
    params: &KmerParams,
    config: &BloomConfig,
    ex: &mut Exchanger,
) -> Result<BloomOutcome> {
    if !(config.distinct_fraction > 0.0 && config.distinct_fraction <= 1.0) {
        return Err(Error::config("distinct fraction must lie in (0, 1]"));
    }
    let p = ex.size();
    let total_bases = ex.all_reduce_sum(reads.iter().map(|r| r.len() as u64).sum())?;
    let total_reads = ex.all_reduce_sum(reads.len() as u64)?;
    let expected_n = if total_reads == 0 {
        1.0
    } else {
        let model = DatasetModel::from_input(total_bases.max(1), total_reads)?;
        (config.distinct_fraction * model.estimate_cardinality(params.k) / p as f64).max(1.0)
    };
    let mut filter = BloomFilter::with_target(expected_n, config.target_fp)?;
    let mut candidates = KmerSet::default();

    let mut extracted = 0u64;
    let items = reads.iter().flat_map(|r| {
        kmers(&r.bases, params.k, params.canonical).map(|(km, _)| (owner_of(&km, p), km))
    });
    let items = items.inspect(|_| extracted += 1);
    let summary = ex.staged_stream(items, |_, km: Kmer| {
        if filter.insert_and_test(&km) {
            candidates.insert(km);
        }
        Ok(())
    })?;

    Ok(BloomOutcome {
        candidates,
        num_bits: filter.num_bits(),
        num_hashes: filter.num_hashes(),
        expected_n,
        kmers_extracted: extracted,
        kmers_inserted: filter.inserted(),
        estimated_fp: filter.estimated_fp(),
        rounds: summary.rounds,
    })
}
