//! 2-bit packed k-mers, extraction with positions, owner hashing and the
//! input-size arithmetic used to size the Bloom filter.

use std::fmt;
use std::hash::{BuildHasherDefault, Hasher};

use crate::error::{Error, Result};

/// Number of 64-bit storage words per k-mer.
#[cfg(not(feature = "wide-kmer"))]
pub const KMER_WORDS: usize = 1;
#[cfg(feature = "wide-kmer")]
pub const KMER_WORDS: usize = 2;

/// Largest supported k.
pub const MAX_K: usize = 32 * KMER_WORDS;

/// Lower bound on the global count of a retained k-mer.
pub const MIN_COUNT: u64 = 2;

/// Seed of the owner hash. Changing it reshuffles k-mer ownership, so it is
/// fixed for the lifetime of the wire format.
const OWNER_SEED: u64 = 0x9e37_79b9_7f4a_7c15;

/// Base `i` lives in `words[i / 32]` at bit offset `62 - 2 * (i % 32)`, i.e.
/// bases are left-aligned in each word and unused low bits stay zero. With
/// the code A=00 < C=01 < G=10 < T=11 the derived ordering on `words` equals
/// lexicographic order of the base strings (for equal k).
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Kmer {
    words: [u64; KMER_WORDS],
    k: u8,
}

#[inline]
pub fn base_code(b: u8) -> Option<u8> {
    match b {
        b'A' | b'a' => Some(0),
        b'C' | b'c' => Some(1),
        b'G' | b'g' => Some(2),
        b'T' | b't' => Some(3),
        _ => None,
    }
}

const CODE_TO_BASE: [u8; 4] = *b"ACGT";

#[inline]
fn slot(i: usize) -> (usize, u32) {
    (i / 32, 62 - 2 * (i % 32) as u32)
}

/// Avalanche finalizer from MurmurHash3.
#[inline]
fn fmix64(mut h: u64) -> u64 {
    h ^= h >> 33;
    h = h.wrapping_mul(0xff51_afd7_ed55_8ccd);
    h ^= h >> 33;
    h = h.wrapping_mul(0xc4ce_b9fe_1a85_ec53);
    h ^= h >> 33;
    h
}

impl Kmer {
    fn empty(k: usize) -> Self {
        Kmer {
            words: [0; KMER_WORDS],
            k: k as u8,
        }
    }

    /// Packs `bases`. Returns `None` for characters outside ACGT and for
    /// lengths outside `1..=MAX_K`.
    pub fn pack(bases: &[u8]) -> Option<Kmer> {
        if bases.is_empty() || bases.len() > MAX_K {
            return None;
        }
        let mut km = Kmer::empty(bases.len());
        for (i, &b) in bases.iter().enumerate() {
            km.set(i, base_code(b)?);
        }
        Some(km)
    }

    pub fn len(&self) -> usize {
        self.k as usize
    }

    pub fn is_empty(&self) -> bool {
        self.k == 0
    }

    pub fn words(&self) -> &[u64; KMER_WORDS] {
        &self.words
    }

    #[inline]
    pub fn code(&self, i: usize) -> u8 {
        let (w, shift) = slot(i);
        ((self.words[w] >> shift) & 3) as u8
    }

    #[inline]
    fn set(&mut self, i: usize, code: u8) {
        let (w, shift) = slot(i);
        self.words[w] = (self.words[w] & !(3 << shift)) | ((code as u64) << shift);
    }

    pub fn unpack(&self) -> Vec<u8> {
        (0..self.len())
            .map(|i| CODE_TO_BASE[self.code(i) as usize])
            .collect()
    }

    pub fn reverse_complement(&self) -> Kmer {
        let k = self.len();
        let mut rc = Kmer::empty(k);
        for i in 0..k {
            rc.set(k - 1 - i, 3 - self.code(i));
        }
        rc
    }

    /// The smaller of the k-mer and its reverse complement.
    pub fn canonical(&self) -> Kmer {
        (*self).min(self.reverse_complement())
    }

    /// Drops the first base and appends `code` at the end.
    #[inline]
    fn push_back(&mut self, code: u8) {
        for w in 0..KMER_WORDS {
            let carry = if w + 1 < KMER_WORDS {
                self.words[w + 1] >> 62
            } else {
                0
            };
            self.words[w] = (self.words[w] << 2) | carry;
        }
        self.set(self.len() - 1, code);
    }

    /// Drops the last base and prepends `code` at the front.
    #[inline]
    fn push_front(&mut self, code: u8) {
        for w in (0..KMER_WORDS).rev() {
            let carry = if w > 0 { self.words[w - 1] << 62 } else { 0 };
            self.words[w] = (self.words[w] >> 2) | carry;
        }
        self.clear_tail();
        self.set(0, code);
    }

    fn clear_tail(&mut self) {
        let k = self.len();
        for (w, word) in self.words.iter_mut().enumerate() {
            let valid = k.saturating_sub(32 * w).min(32);
            *word &= match valid {
                0 => 0,
                32 => u64::MAX,
                v => !(u64::MAX >> (2 * v)),
            };
        }
    }

    /// Seeded 64-bit hash of the packed representation.
    #[inline]
    pub fn hash64(&self, seed: u64) -> u64 {
        let mut h = fmix64(seed ^ self.k as u64);
        for &w in &self.words {
            h = fmix64(h ^ w.wrapping_add(seed));
        }
        h
    }

    /// Serialized size in bytes: one length byte plus the storage words.
    pub const WIRE_LEN: usize = 1 + 8 * KMER_WORDS;

    pub fn write_wire(&self, out: &mut Vec<u8>) {
        out.push(self.k);
        for w in &self.words {
            out.extend_from_slice(&w.to_le_bytes());
        }
    }

    pub fn read_wire(bytes: &[u8]) -> Result<Kmer> {
        if bytes.len() < Self::WIRE_LEN {
            return Err(Error::Wire(format!(
                "k-mer record needs {} bytes, got {}",
                Self::WIRE_LEN,
                bytes.len()
            )));
        }
        let k = bytes[0];
        if k == 0 || k as usize > MAX_K {
            return Err(Error::Wire(format!("k-mer length {k} out of range")));
        }
        let mut words = [0u64; KMER_WORDS];
        for (i, w) in words.iter_mut().enumerate() {
            let off = 1 + 8 * i;
            *w = u64::from_le_bytes(bytes[off..off + 8].try_into().unwrap());
        }
        Ok(Kmer { words, k })
    }
}

impl crate::exchange::Wire for Kmer {
    fn encode(&self, out: &mut Vec<u8>) {
        self.write_wire(out);
    }

    fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() != Self::WIRE_LEN {
            return Err(Error::Wire(format!("k-mer record of {} bytes", bytes.len())));
        }
        Kmer::read_wire(bytes)
    }
}

impl fmt::Display for Kmer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&String::from_utf8_lossy(&self.unpack()))
    }
}

impl fmt::Debug for Kmer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Kmer({self})")
    }
}

/// Rank that owns `kmer` among `p` ranks. Identical in every stage.
#[inline]
pub fn owner_of(kmer: &Kmer, p: usize) -> usize {
    debug_assert!(p >= 1);
    (kmer.hash64(OWNER_SEED) % p as u64) as usize
}

/// Hasher for k-mer keyed maps. Kmer's `Hash` feeds whole words, which this
/// hasher mixes with the same finalizer as [`Kmer::hash64`].
#[derive(Default, Clone, Copy)]
pub struct KmerHasher(u64);

impl Hasher for KmerHasher {
    fn finish(&self) -> u64 {
        fmix64(self.0)
    }

    fn write(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.0 = (self.0.rotate_left(8) ^ b as u64).wrapping_mul(0x100_0000_01b3);
        }
    }

    fn write_u8(&mut self, i: u8) {
        self.0 = fmix64(self.0 ^ i as u64);
    }

    fn write_u64(&mut self, i: u64) {
        self.0 = fmix64(self.0 ^ i);
    }

    fn write_usize(&mut self, i: usize) {
        self.write_u64(i as u64);
    }
}

pub type KmerBuildHasher = BuildHasherDefault<KmerHasher>;
pub type KmerMap<V> = std::collections::HashMap<Kmer, V, KmerBuildHasher>;
pub type KmerSet = std::collections::HashSet<Kmer, KmerBuildHasher>;

/// k-mer length, count band and strand handling.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct KmerParams {
    pub k: usize,
    /// Upper count threshold `m`; k-mers seen more often are repeats.
    pub max_count: u64,
    pub canonical: bool,
}

impl KmerParams {
    pub fn new(k: usize, max_count: u64, canonical: bool) -> Result<Self> {
        if !(2..=MAX_K).contains(&k) {
            return Err(Error::config(format!("k must lie in 2..={MAX_K}, got {k}")));
        }
        if max_count < MIN_COUNT {
            return Err(Error::config(format!(
                "maximum k-mer frequency must be at least {MIN_COUNT}, got {max_count}"
            )));
        }
        Ok(KmerParams {
            k,
            max_count,
            canonical,
        })
    }

    pub fn min_count(&self) -> u64 {
        MIN_COUNT
    }
}

/// Iterator over the N-free windows of a read as `(kmer, start)` pairs.
pub struct KmerIter<'a> {
    bases: &'a [u8],
    k: usize,
    canonical: bool,
    next: usize,
    fwd: Kmer,
    rev: Kmer,
    /// Number of consecutive valid bases ending just before `next`.
    run: usize,
}

impl Iterator for KmerIter<'_> {
    type Item = (Kmer, usize);

    fn next(&mut self) -> Option<(Kmer, usize)> {
        while self.next < self.bases.len() {
            let b = self.bases[self.next];
            self.next += 1;
            match base_code(b) {
                None => self.run = 0,
                Some(c) => {
                    self.fwd.push_back(c);
                    if self.canonical {
                        self.rev.push_front(3 - c);
                    }
                    self.run += 1;
                    if self.run >= self.k {
                        let km = if self.canonical {
                            self.fwd.min(self.rev)
                        } else {
                            self.fwd
                        };
                        return Some((km, self.next - self.k));
                    }
                }
            }
        }
        None
    }
}

/// Streams the k-mers of `bases`, skipping windows that contain a non-ACGT
/// character. With `canonical` each k-mer is replaced by its canonical form
/// and the position stays the forward window start.
pub fn kmers(bases: &[u8], k: usize, canonical: bool) -> KmerIter<'_> {
    assert!((1..=MAX_K).contains(&k), "k out of range: {k}");
    KmerIter {
        bases,
        k,
        canonical,
        next: 0,
        fwd: Kmer::empty(k),
        rev: Kmer::empty(k),
        run: 0,
    }
}

pub fn extract_kmers(bases: &[u8], params: &KmerParams) -> Vec<(Kmer, usize)> {
    kmers(bases, params.k, params.canonical).collect()
}

/// Reverse complement of a base string; non-ACGT characters map to `N`.
pub fn reverse_complement_seq(bases: &[u8]) -> Vec<u8> {
    bases
        .iter()
        .rev()
        .map(|&b| match b.to_ascii_uppercase() {
            b'A' => b'T',
            b'C' => b'G',
            b'G' => b'C',
            b'T' => b'A',
            _ => b'N',
        })
        .collect()
}

/// Genome size `G`, depth `d` and mean read length `L`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DatasetModel {
    pub genome_size: f64,
    pub depth: f64,
    pub mean_read_len: f64,
}

impl DatasetModel {
    pub fn new(genome_size: f64, depth: f64, mean_read_len: f64) -> Result<Self> {
        if !(genome_size > 0.0 && depth > 0.0 && mean_read_len > 0.0) {
            return Err(Error::config("dataset model fields must be positive"));
        }
        Ok(DatasetModel {
            genome_size,
            depth,
            mean_read_len,
        })
    }

    /// Model for an observed input where only `N = G·d` is known; the genome
    /// size absorbs the product and the depth is 1.
    pub fn from_input(total_bases: u64, num_reads: u64) -> Result<Self> {
        if num_reads == 0 {
            return Err(Error::config("empty input"));
        }
        Self::new(total_bases as f64, 1.0, total_bases as f64 / num_reads as f64)
    }

    /// Input size `N = G·d`.
    pub fn input_size(&self) -> f64 {
        self.genome_size * self.depth
    }

    pub fn num_reads(&self) -> f64 {
        self.input_size() / self.mean_read_len
    }

    /// Number of k-mer instances in the input, `G·d·(L−k+1)/L`.
    pub fn estimate_cardinality(&self, k: usize) -> f64 {
        self.input_size() * (self.mean_read_len - k as f64 + 1.0) / self.mean_read_len
    }

    /// The `G·d` simplification of [`Self::estimate_cardinality`].
    pub fn approx_cardinality(&self) -> f64 {
        self.input_size()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_kmer(rng: &mut impl Rng, k: usize) -> Vec<u8> {
        (0..k).map(|_| b"ACGT"[rng.gen_range(0..4)]).collect()
    }

    #[test]
    fn pack_codes() {
        let km = Kmer::pack(b"ACGT").unwrap();
        assert_eq!((0..4).map(|i| km.code(i)).collect::<Vec<_>>(), [0, 1, 2, 3]);
        assert_eq!(km.words()[0] >> 56, 0b0001_1011);
        let a = Kmer::pack(b"AAAA").unwrap();
        assert!(a.words().iter().all(|&w| w == 0));
        assert!(Kmer::pack(b"ACNT").is_none());
        assert!(Kmer::pack(b"").is_none());
    }

    #[test]
    fn pack_unpack_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let k = rng.gen_range(1..=MAX_K);
            let s = random_kmer(&mut rng, k);
            let km = Kmer::pack(&s).unwrap();
            assert_eq!(km.unpack(), s);
            assert_eq!(Kmer::pack(&km.unpack()), Some(km));
        }
    }

    #[test]
    fn reverse_complement_examples() {
        let rc = |s: &[u8]| Kmer::pack(s).unwrap().reverse_complement().unpack();
        assert_eq!(rc(b"ACGT"), b"ACGT");
        assert_eq!(rc(b"AAA"), b"TTT");
        assert_eq!(rc(b"AACG"), b"CGTT");
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..1000 {
            let k = rng.gen_range(1..=MAX_K);
            let km = Kmer::pack(&random_kmer(&mut rng, k)).unwrap();
            assert_eq!(km.reverse_complement().reverse_complement(), km);
            assert_eq!(km.reverse_complement().unpack(), reverse_complement_seq(&km.unpack()));
        }
    }

    #[test]
    fn extract_examples() {
        let p3 = KmerParams::new(3, 10, false).unwrap();
        let got: Vec<(String, usize)> = extract_kmers(b"ACGTA", &p3)
            .into_iter()
            .map(|(k, p)| (k.to_string(), p))
            .collect();
        assert_eq!(
            got,
            [("ACG".into(), 0), ("CGT".into(), 1), ("GTA".into(), 2)]
        );
        assert!(extract_kmers(b"AC", &p3).is_empty());
        let p2 = KmerParams::new(2, 10, false).unwrap();
        let got: Vec<(String, usize)> = extract_kmers(b"ACNGT", &p2)
            .into_iter()
            .map(|(k, p)| (k.to_string(), p))
            .collect();
        assert_eq!(got, [("AC".into(), 0), ("GT".into(), 3)]);
    }

    #[test]
    fn canonical_extraction_keeps_position() {
        let p = KmerParams::new(3, 10, true).unwrap();
        let got = extract_kmers(b"TTTG", &p);
        assert_eq!(got[0].0.to_string(), "AAA");
        assert_eq!(got[0].1, 0);
        assert_eq!(got[1].0.to_string(), "CAA");
        assert_eq!(got[1].1, 1);
    }

    #[test]
    fn owner_single_rank_and_stable() {
        let km = Kmer::pack(b"ACGTACGTTT").unwrap();
        assert_eq!(owner_of(&km, 1), 0);
        let o = owner_of(&km, 7);
        for _ in 0..10 {
            assert_eq!(owner_of(&km, 7), o);
        }
    }

    // Ownership must not drift between releases.
    #[cfg(not(feature = "wide-kmer"))]
    #[test]
    fn owner_hash_pinned() {
        let km = Kmer::pack(b"ACGTACGTACGTACGTA").unwrap();
        assert_eq!(km.hash64(OWNER_SEED), 0xe136_f19e_8e4b_47d1);
        assert_eq!(owner_of(&km, 7), 4);
    }

    #[test]
    fn owner_histogram_is_flat() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut seen = KmerSet::default();
        while seen.len() < 100_000 {
            seen.insert(Kmer::pack(&random_kmer(&mut rng, 17)).unwrap());
        }
        let mut buckets = [0usize; 16];
        for km in &seen {
            buckets[owner_of(km, 16)] += 1;
        }
        let mean = 100_000.0 / 16.0;
        let max = *buckets.iter().max().unwrap() as f64;
        assert!(max <= 1.15 * mean, "buckets {buckets:?}");
    }

    #[test]
    fn cardinality_examples() {
        let m = DatasetModel::new(2.0e5, 10.0, 1.0e4).unwrap();
        assert_eq!(m.estimate_cardinality(17), 1_996_800.0);
        assert_eq!(m.estimate_cardinality(1), m.approx_cardinality());
        let k = 17;
        let gap = (m.approx_cardinality() - m.estimate_cardinality(k)) / m.approx_cardinality();
        assert!((gap - (k as f64 - 1.0) / m.mean_read_len).abs() < 1e-15);
        assert_eq!(m.num_reads(), 200.0);
    }

    #[test]
    fn params_validation() {
        assert!(KmerParams::new(1, 5, false).is_err());
        assert!(KmerParams::new(MAX_K + 1, 5, false).is_err());
        assert!(KmerParams::new(17, 1, false).is_err());
        assert!(KmerParams::new(17, 2, false).is_ok());
    }

    #[test]
    fn wire_round_trip() {
        let km = Kmer::pack(b"GATTACA").unwrap();
        let mut buf = Vec::new();
        km.write_wire(&mut buf);
        assert_eq!(buf.len(), Kmer::WIRE_LEN);
        assert_eq!(Kmer::read_wire(&buf).unwrap(), km);
        assert!(Kmer::read_wire(&buf[..3]).is_err());
    }

    proptest! {
        #[test]
        fn order_matches_lexicographic((a, b) in (1usize..=32).prop_flat_map(|n| {
            let s = format!("[ACGT]{{{n}}}");
            (proptest::string::string_regex(&s).unwrap(), proptest::string::string_regex(&s).unwrap())
        })) {
            let ka = Kmer::pack(a.as_bytes()).unwrap();
            let kb = Kmer::pack(b.as_bytes()).unwrap();
            prop_assert_eq!(ka.cmp(&kb), a.cmp(&b));
        }

        #[test]
        fn extraction_count_and_windows(s in "[ACGTN]{0,80}", k in 2usize..20) {
            let got: Vec<_> = kmers(s.as_bytes(), k, false).collect();
            let windows: Vec<_> = (0..(s.len() + 1).saturating_sub(k))
                .filter_map(|i| Kmer::pack(&s.as_bytes()[i..i + k]).map(|km| (km, i)))
                .collect();
            prop_assert_eq!(&got, &windows);
            let bound = (s.len() + 1).saturating_sub(k);
            prop_assert!(got.len() <= bound);
            if !s.contains('N') {
                prop_assert_eq!(got.len(), bound);
            }
        }

        #[test]
        fn canonical_multiset_is_strand_symmetric(s in "[ACGTN]{0,80}", k in 2usize..20) {
            let rc = reverse_complement_seq(s.as_bytes());
            let mut fwd: Vec<Kmer> = kmers(s.as_bytes(), k, true).map(|(km, _)| km).collect();
            let mut rev: Vec<Kmer> = kmers(&rc, k, true).map(|(km, _)| km).collect();
            fwd.sort();
            rev.sort();
            prop_assert_eq!(fwd, rev);
            for (km, pos) in kmers(s.as_bytes(), k, true) {
                let window = Kmer::pack(&s.as_bytes()[pos..pos + k]).unwrap();
                prop_assert_eq!(km, window.canonical());
            }
        }
    }
}
