// Index a multi-file FASTQ input and split it across ranks by base count.

use lroverlap::seq_io::{partition_lengths, InputSet};

const FILE_A: &[u8] = b"@r0\nACGTACGTAC\n+\nIIIIIIIIII\n@r1\nacgtn\n+\nIIIII\n";
const FILE_B: &[u8] = b"@r2 long one\r\nGGGGCCCCAAAATTTTGGGG\r\n+\r\nIIIIIIIIIIIIIIIIIIII\r\n@r3\nTTTT\n+\nIIII";

pub fn run_example() -> lroverlap::Result<()> {
    let input = InputSet::from_buffers(vec![FILE_A.to_vec(), FILE_B.to_vec()])?;
    println!("{} reads, lengths {:?}", input.num_reads(), input.lengths());

    let part = partition_lengths(&input.lengths(), 2)?;
    for rank in 0..part.num_ranks() {
        let range = part.range(rank);
        // a rank parses only the records it owns
        for read in input.parse_range(range.clone()) {
            println!(
                "rank {rank}: rid {} {:?} {}",
                read.rid,
                read.header,
                String::from_utf8_lossy(&read.bases)
            );
        }
        println!("rank {rank}: {} bases", part.bases()[rank]);
    }
    assert_eq!(part.owner(3), Some(1));
    Ok(())
}

fn main() -> lroverlap::Result<()> {
    run_example()
}
