// k-mer packing, canonical forms, rolling extraction and the cardinality
// model.

use lroverlap::kmer::{kmers, owner_of, DatasetModel, Kmer};

pub fn run_example() -> lroverlap::Result<()> {
    let km = Kmer::pack(b"GATTACA").expect("ACGT only");
    println!("{km}: reverse complement {}, canonical {}", km.reverse_complement(), km.canonical());
    println!("owner among 8 ranks: {}", owner_of(&km, 8));

    let read = b"ACGTNACGTTGCA";
    for (k, pos) in kmers(read, 4, false) {
        println!("  {pos:>2} {k}");
    }
    // windows touching N are skipped
    assert_eq!(kmers(read, 4, false).count(), 6);

    let model = DatasetModel::new(4.6e6, 30.0, 10_000.0)?;
    println!(
        "E. coli-sized input: {:.0} reads, {:.4e} k-mers for k=17 ({:.4e} by G*d)",
        model.num_reads(),
        model.estimate_cardinality(17),
        model.approx_cardinality()
    );
    Ok(())
}

fn main() -> lroverlap::Result<()> {
    run_example()
}
