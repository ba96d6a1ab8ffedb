// Four in-process ranks stream records to each other in capped rounds.

use lroverlap::exchange::{launch, Backend};

pub fn run_example() -> lroverlap::Result<()> {
    // 256 bytes per round forces several rounds
    let results = launch(4, Backend::InProcess, 256, |mut ex| {
        let me = ex.rank() as u64;
        let items = (0..100u64).map(move |i| ((i % 4) as usize, me * 1000 + i));
        let mut sum = 0u64;
        let summary = ex.staged_stream(items, |_src, v: u64| {
            sum += v;
            Ok(())
        })?;
        let total = ex.all_reduce_sum(sum)?;
        Ok((summary, total, ex.stats()))
    })?;
    for (rank, (summary, total, stats)) in results.iter().enumerate() {
        println!(
            "rank {rank}: {} rounds, {} items in, {} bytes sent, peak round {} bytes, global sum {total}",
            summary.rounds, summary.items_received, stats.bytes_sent, stats.peak_round_bytes
        );
    }
    Ok(())
}

fn main() -> lroverlap::Result<()> {
    run_example()
}
