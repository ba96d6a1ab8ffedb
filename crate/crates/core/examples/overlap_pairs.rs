// Stage 3: read pairs sharing retained k-mers, routed by the odd-even owner
// rule and merged per pair.

use lroverlap::bloom::{run_bloom_stage, BloomConfig};
use lroverlap::exchange::{launch, Backend, DEFAULT_ROUND_CAP};
use lroverlap::kmer::KmerParams;
use lroverlap::overlap::{assign_owner, filter_seeds, run_overlap_stage, write_overlaps};
use lroverlap::seq_io::partition_reads;
use lroverlap::sim::{simulate_reads, SimConfig};
use lroverlap::table::run_table_stage;

pub fn run_example() -> lroverlap::Result<()> {
    for (a, b) in [(2, 7), (3, 7), (4, 5)] {
        println!("pair ({a}, {b}) goes to the owner of read {}", assign_owner(a, b));
    }

    let sim = simulate_reads(&SimConfig {
        genome_len: 8_000,
        depth: 10.0,
        read_len: 800,
        error_rate: 0.05,
        ..Default::default()
    })?;
    let params = KmerParams::new(17, 10, false)?;
    let part = partition_reads(&sim.reads, 4)?;
    let out = launch(4, Backend::InProcess, DEFAULT_ROUND_CAP, |mut ex| {
        let r = part.range(ex.rank());
        let reads = &sim.reads[r.start as usize..r.end as usize];
        let bloom = run_bloom_stage(reads, &params, &BloomConfig::default(), &mut ex)?;
        let table = run_table_stage(reads, bloom.candidates, &params, &mut ex)?;
        run_overlap_stage(&table.table, &part, &mut ex)
    })?;
    let mut found = 0;
    for (rank, o) in out.iter().enumerate() {
        println!(
            "rank {rank}: {} pairs owned, {} raw tasks received, bounds {:?}",
            o.tasks.len(),
            o.tasks_received,
            o.bounds
        );
        found += o.tasks.len();
    }
    println!("{found} pairs found, {} true overlaps of >= 17 bp", sim.truth.len());

    let first = filter_seeds(&out[0].tasks[0], 200, 3);
    let mut line = Vec::new();
    write_overlaps(&mut line, &[first])?;
    print!("{}", String::from_utf8_lossy(&line));
    Ok(())
}

fn main() -> lroverlap::Result<()> {
    run_example()
}
