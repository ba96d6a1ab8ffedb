// The whole pipeline on a simulated data set, writing per-rank files and a
// metrics report.

use std::fs;

use lroverlap::pipeline::{run_pipeline, PipelineConfig};
use lroverlap::sim::{simulate_reads, SimConfig};

pub fn run_example() -> lroverlap::Result<()> {
    let sim = simulate_reads(&SimConfig {
        genome_len: 20_000,
        depth: 10.0,
        read_len: 1_000,
        error_rate: 0.1,
        seed: 42,
        min_overlap: 17,
    })?;
    let dir = tempfile::tempdir()?;
    let fastq = dir.path().join("reads.fastq");
    fs::write(&fastq, sim.fastq())?;

    let cfg = PipelineConfig {
        inputs: vec![fastq],
        max_count: Some(8),
        ranks: 4,
        out_overlaps: Some(dir.path().join("overlaps.tsv")),
        out_alignments: Some(dir.path().join("alignments.tsv")),
        out_metrics: Some(dir.path().join("metrics.tsv")),
        merge: true,
        ..Default::default()
    };
    let run = run_pipeline(&cfg)?;

    for key in [
        "table.kmers_parsed",
        "table.retained",
        "table.iota_set",
        "overlap.pairs",
        "align.alignments",
        "align.load_imbalance",
        "align.items_per_s",
    ] {
        println!("{key}\t{}", run.report.get(key).unwrap_or("-"));
    }
    let found: std::collections::BTreeSet<_> = run.tasks().iter().map(|t| (t.rid_a, t.rid_b)).collect();
    let recalled = sim.truth.iter().filter(|t| t.len >= 500 && found.contains(&(t.rid_a, t.rid_b))).count();
    let long = sim.truth.iter().filter(|t| t.len >= 500).count();
    println!("{recalled} of {long} true overlaps >= 500 bp found");
    let merged = fs::read_to_string(dir.path().join("alignments.tsv"))?;
    println!("first alignment: {}", merged.lines().next().unwrap_or(""));
    Ok(())
}

fn main() -> lroverlap::Result<()> {
    run_example()
}
