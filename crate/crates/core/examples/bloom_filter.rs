// Sizing a Bloom filter and using it to separate repeated k-mers from
// singletons.

use lroverlap::bloom::{size_bloom, BloomFilter};
use lroverlap::kmer::Kmer;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn run_example() -> lroverlap::Result<()> {
    for (n, p) in [(1e4, 0.05), (1e4, 0.01), (1e6, 0.05)] {
        let (bits, hashes) = size_bloom(n, p)?;
        println!("n={n:e} p={p}: {bits} bits, {hashes} hashes");
    }

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let random_kmer = |rng: &mut ChaCha8Rng| {
        let s: Vec<u8> = (0..21).map(|_| b"ACGT"[rng.gen_range(0..4)]).collect();
        Kmer::pack(&s).unwrap()
    };
    let mut filter = BloomFilter::with_target(10_000.0, 0.05)?;
    let repeated: Vec<Kmer> = (0..1_000).map(|_| random_kmer(&mut rng)).collect();
    let mut admitted_singletons = 0;
    for _ in 0..9_000 {
        admitted_singletons += filter.insert_and_test(&random_kmer(&mut rng)) as u32;
    }
    for k in &repeated {
        filter.insert_and_test(k);
    }
    // second sighting of every repeated k-mer is always reported
    assert!(repeated.iter().all(|k| filter.insert_and_test(k)));
    println!(
        "{admitted_singletons} of 9000 singletons admitted; fill {:.3}, estimated fp {:.4}",
        filter.fill_ratio(),
        filter.estimated_fp()
    );
    Ok(())
}

fn main() -> lroverlap::Result<()> {
    run_example()
}
