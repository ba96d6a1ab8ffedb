// Stages 1 and 2 on simulated reads: Bloom candidates, then the location
// table and its count histogram.

use lroverlap::bloom::{run_bloom_stage, BloomConfig};
use lroverlap::exchange::{launch, Backend, DEFAULT_ROUND_CAP};
use lroverlap::kmer::KmerParams;
use lroverlap::seq_io::partition_reads;
use lroverlap::sim::{simulate_reads, SimConfig};
use lroverlap::table::{run_table_stage, write_histogram};

pub fn run_example() -> lroverlap::Result<()> {
    let sim = simulate_reads(&SimConfig {
        genome_len: 10_000,
        depth: 15.0,
        read_len: 800,
        error_rate: 0.1,
        ..Default::default()
    })?;
    let params = KmerParams::new(17, 8, false)?;
    let part = partition_reads(&sim.reads, 3)?;
    let per_rank = launch(3, Backend::InProcess, DEFAULT_ROUND_CAP, |mut ex| {
        let r = part.range(ex.rank());
        let reads = &sim.reads[r.start as usize..r.end as usize];
        let bloom = run_bloom_stage(reads, &params, &BloomConfig::default(), &mut ex)?;
        let table = run_table_stage(reads, bloom.candidates, &params, &mut ex)?;
        Ok((table.stats, table.histogram))
    })?;
    for (rank, (stats, hist)) in per_rank.iter().enumerate() {
        println!(
            "rank {rank}: {} candidates, {} retained, {} bloom false positives, {} repeats, {} distinct",
            stats.candidates,
            stats.retained,
            stats.false_positive_singletons,
            stats.over_threshold,
            stats.distinct()
        );
        if rank == 0 {
            let mut out = Vec::new();
            write_histogram(&mut out, hist)?;
            print!("{}", String::from_utf8_lossy(&out));
        }
    }
    Ok(())
}

fn main() -> lroverlap::Result<()> {
    run_example()
}
