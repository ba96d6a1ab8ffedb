use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::Parser;

use lroverlap::align::ScoringScheme;
use lroverlap::bloom::BloomConfig;
use lroverlap::exchange::{read_hostfile, Backend, DEFAULT_ROUND_CAP};
use lroverlap::pipeline::{
    run_pipeline, run_socket_rank, PipelineConfig, DEFAULT_K,
    DEFAULT_MIN_SEED_DISTANCE,
};

/// Distributed long-read overlap detection and x-drop alignment.
#[derive(Parser, Debug)]
#[command(version)]
struct Args {
    /// FASTQ input; repeat for several files.
    #[arg(long, required = true)]
    input: Vec<PathBuf>,
    #[arg(short, default_value_t = DEFAULT_K)]
    k: usize,
    /// Upper k-mer frequency m.
    #[arg(long)]
    max_kmer_freq: u64,
    #[arg(long, default_value_t = DEFAULT_MIN_SEED_DISTANCE)]
    min_seed_distance: u32,
    #[arg(long, default_value_t = 1)]
    max_seeds: usize,
    /// Index k-mers by their canonical form.
    #[arg(long)]
    canonical: bool,
    #[arg(long = "match", default_value_t = 1)]
    match_score: i32,
    #[arg(long, default_value_t = -1, allow_hyphen_values = true)]
    mismatch: i32,
    #[arg(long, default_value_t = -1, allow_hyphen_values = true)]
    gap: i32,
    #[arg(long, default_value_t = 7)]
    xdrop: i32,
    #[arg(long, default_value_t = 1)]
    ranks: usize,
    /// inproc or socket.
    #[arg(long, default_value = "inproc")]
    backend: Backend,
    /// One host:port per line, line i for rank i.
    #[arg(long)]
    hostfile: Option<PathBuf>,
    /// Run only this rank of a socket world (one process per rank).
    #[arg(long, requires = "hostfile")]
    rank: Option<usize>,
    /// Byte cap on one rank's outgoing payload per exchange round.
    #[arg(long, default_value_t = DEFAULT_ROUND_CAP)]
    round_cap: usize,
    #[arg(long, default_value_t = 0.05)]
    bloom_fp: f64,
    /// Expected distinct k-mers per k-mer instance, used to size the filter.
    #[arg(long, default_value_t = 0.9)]
    distinct_fraction: f64,
    #[arg(long)]
    out_overlaps: Option<PathBuf>,
    #[arg(long)]
    out_alignments: Option<PathBuf>,
    #[arg(long)]
    out_metrics: Option<PathBuf>,
    #[arg(long)]
    histogram: Option<PathBuf>,
    #[arg(long)]
    best_per_pair: bool,
    /// Seed for shuffled exchange delivery order.
    #[arg(long)]
    seed: Option<u64>,
    /// Also write merged, sorted outputs next to the per-rank files.
    #[arg(long)]
    merge: bool,
    #[arg(long, default_value_t = 1)]
    threads: usize,
}

fn config(a: &Args) -> anyhow::Result<PipelineConfig> {
    Ok(PipelineConfig {
        inputs: a.input.clone(),
        k: a.k,
        max_count: Some(a.max_kmer_freq),
        min_seed_distance: a.min_seed_distance,
        max_seeds: a.max_seeds,
        canonical: a.canonical,
        scoring: ScoringScheme::new(a.match_score, a.mismatch, a.gap, a.xdrop)?,
        ranks: a.ranks,
        backend: a.backend,
        hostfile: a.hostfile.clone(),
        round_cap: a.round_cap,
        bloom: BloomConfig {
            target_fp: a.bloom_fp,
            distinct_fraction: a.distinct_fraction,
        },
        out_overlaps: a.out_overlaps.clone(),
        out_alignments: a.out_alignments.clone(),
        out_metrics: a.out_metrics.clone(),
        histogram: a.histogram.clone(),
        best_per_pair: a.best_per_pair,
        merge: a.merge,
        threads: a.threads,
        seed: a.seed,
        ..Default::default()
    })
}

fn run(a: Args) -> anyhow::Result<()> {
    let mut cfg = config(&a)?;
    cfg.validate()?;
    match a.rank {
        Some(rank) => {
            if cfg.backend != Backend::Socket {
                bail!("--rank needs --backend socket");
            }
            let hostfile = cfg.hostfile.clone().expect("clap enforces --hostfile");
            let hosts = read_hostfile(&hostfile)
                .with_context(|| format!("reading {}", hostfile.display()))?;
            if rank >= hosts.len() {
                bail!("rank {rank} outside the {} hosts of {}", hosts.len(), hostfile.display());
            }
            cfg.ranks = hosts.len();
            run_socket_rank(&cfg, rank, &hosts)?;
        }
        None => {
            let run = run_pipeline(&cfg)?;
            log::info!(
                "{} pairs, {} alignments",
                run.report.get("overlap.pairs").unwrap_or("0"),
                run.report.get("align.alignments").unwrap_or("0")
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Args::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
