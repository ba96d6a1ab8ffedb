//! Synthetic long reads with known genomic origin, for tests and examples.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::seq_io::{write_fastq, Read};

const BASES: &[u8; 4] = b"ACGT";

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SimConfig {
    pub genome_len: usize,
    pub depth: f64,
    pub read_len: usize,
    /// Per-base error probability, split evenly among substitution,
    /// insertion and deletion.
    pub error_rate: f64,
    pub seed: u64,
    /// Minimum genomic overlap for a pair to enter the ground truth.
    pub min_overlap: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            genome_len: 20_000,
            depth: 20.0,
            read_len: 1_000,
            error_rate: 0.0,
            seed: 1,
            min_overlap: 17,
        }
    }
}

/// A pair of reads whose source intervals overlap; `rid_a < rid_b`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TrueOverlap {
    pub rid_a: u64,
    pub rid_b: u64,
    pub len: usize,
}

#[derive(Clone, Debug)]
pub struct SimulatedReads {
    pub genome: Vec<u8>,
    pub reads: Vec<Read>,
    /// Genome interval each read was sampled from, by rid.
    pub origins: Vec<(usize, usize)>,
    pub truth: Vec<TrueOverlap>,
}

impl SimulatedReads {
    pub fn fastq(&self) -> Vec<u8> {
        let mut out = Vec::new();
        write_fastq(&mut out, &self.reads).expect("writing to memory");
        out
    }

    /// Genome interval shared by two reads, if any.
    pub fn shared_interval(&self, a: u64, b: u64) -> Option<(usize, usize)> {
        let (sa, ea) = self.origins[a as usize];
        let (sb, eb) = self.origins[b as usize];
        let (s, e) = (sa.max(sb), ea.min(eb));
        (s < e).then_some((s, e))
    }
}

pub fn random_genome(len: usize, rng: &mut impl Rng) -> Vec<u8> {
    (0..len).map(|_| BASES[rng.gen_range(0..4)]).collect()
}

fn mutate(template: &[u8], rate: f64, rng: &mut impl Rng) -> Vec<u8> {
    if rate == 0.0 {
        return template.to_vec();
    }
    let mut out = Vec::with_capacity(template.len() + template.len() / 8);
    for &b in template {
        if !rng.gen_bool(rate) {
            out.push(b);
            continue;
        }
        match rng.gen_range(0..3) {
            0 => {
                let shift = rng.gen_range(1..4);
                let code = BASES.iter().position(|&x| x == b).unwrap();
                out.push(BASES[(code + shift) % 4]);
            }
            1 => {
                out.push(BASES[rng.gen_range(0..4)]);
                out.push(b);
            }
            _ => {}
        }
    }
    out
}

/// Samples `round(G·d/L)` forward-strand reads of template length `L` from
/// uniform start positions on a random genome.
pub fn simulate_reads(cfg: &SimConfig) -> Result<SimulatedReads> {
    if cfg.genome_len == 0 || cfg.read_len == 0 || cfg.read_len > cfg.genome_len {
        return Err(Error::config("need 0 < read_len <= genome_len"));
    }
    if !(cfg.depth > 0.0) || !(0.0..1.0).contains(&cfg.error_rate) {
        return Err(Error::config("depth must be positive and error rate in [0, 1)"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let genome = random_genome(cfg.genome_len, &mut rng);
    let n = (cfg.genome_len as f64 * cfg.depth / cfg.read_len as f64).round() as usize;
    let mut reads = Vec::with_capacity(n);
    let mut origins = Vec::with_capacity(n);
    for rid in 0..n {
        let start = rng.gen_range(0..=cfg.genome_len - cfg.read_len);
        let end = start + cfg.read_len;
        let bases = mutate(&genome[start..end], cfg.error_rate, &mut rng);
        reads.push(Read::new(rid as u64, format!("sim{rid} {start}-{end}"), bases));
        origins.push((start, end));
    }

    let mut truth = Vec::new();
    for a in 0..n {
        for b in a + 1..n {
            let len = origins[a].1.min(origins[b].1).saturating_sub(origins[a].0.max(origins[b].0));
            if len >= cfg.min_overlap.max(1) {
                truth.push(TrueOverlap {
                    rid_a: a as u64,
                    rid_b: b as u64,
                    len,
                });
            }
        }
    }
    Ok(SimulatedReads {
        genome,
        reads,
        origins,
        truth,
    })
}
