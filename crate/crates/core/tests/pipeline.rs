mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::net::TcpListener;
use std::process::Command;

use lroverlap::exchange::Backend;
use lroverlap::pipeline::{run_pipeline_on, PipelineConfig, PipelineRun};
use lroverlap::seq_io::InputSet;
use lroverlap::sim::{simulate_reads, SimConfig, SimulatedReads};

use common::{serial_count, serial_overlaps, serial_retained};

fn small_instance(error_rate: f64) -> SimulatedReads {
    simulate_reads(&SimConfig {
        genome_len: 6_000,
        depth: 12.0,
        read_len: 600,
        error_rate,
        seed: 11,
        min_overlap: 17,
    })
    .unwrap()
}

fn config(ranks: usize, m: u64) -> PipelineConfig {
    PipelineConfig {
        k: 17,
        max_count: Some(m),
        ranks,
        keep_table: true,
        max_seeds: 4,
        min_seed_distance: 50,
        ..Default::default()
    }
}

fn run(sim: &SimulatedReads, cfg: &PipelineConfig) -> PipelineRun {
    let input = InputSet::from_buffers(vec![sim.fastq()]).unwrap();
    run_pipeline_on(cfg, &input).unwrap()
}

fn gathered_table(run: &PipelineRun) -> BTreeMap<Vec<u8>, Vec<(u64, u32)>> {
    let mut out = BTreeMap::new();
    for r in &run.ranks {
        for (km, e) in r.table.as_ref().unwrap().iter() {
            assert_eq!(e.count as usize, e.locations.len());
            let locs = e.locations.iter().map(|l| (l.rid, l.pos)).collect();
            assert!(out.insert(km.unpack(), locs).is_none(), "k-mer on two ranks");
        }
    }
    out
}

#[test]
fn table_and_overlaps_match_serial_oracle() {
    let sim = small_instance(0.08);
    let m = 6;
    let counted = serial_count(&sim.reads, 17, false);
    let retained = serial_retained(&counted, m);
    let pairs = serial_overlaps(&retained);
    assert!(!pairs.is_empty());
    for p in [1, 2, 3, 4] {
        let run = run(&sim, &config(p, m));
        assert_eq!(gathered_table(&run), retained, "P={p}");
        let got: BTreeMap<(u64, u64), BTreeSet<(u32, u32)>> = run
            .tasks()
            .into_iter()
            .map(|t| ((t.rid_a, t.rid_b), t.seeds.iter().map(|s| (s.pos_a, s.pos_b)).collect()))
            .collect();
        assert_eq!(got, pairs, "P={p}");
        assert_eq!(run.report.get_f64("table.distinct"), Some(counted.len() as f64));
    }
}

#[test]
fn canonical_table_matches_serial_oracle() {
    let sim = small_instance(0.05);
    let retained = serial_retained(&serial_count(&sim.reads, 17, true), 10);
    for p in [1, 3] {
        let run = run(&sim, &PipelineConfig { canonical: true, ..config(p, 10) });
        assert_eq!(gathered_table(&run), retained);
    }
}

#[test]
fn shuffled_delivery_and_small_rounds_do_not_change_outputs() {
    let sim = small_instance(0.08);
    let base = run(&sim, &config(1, 6));
    let stressed = run(
        &sim,
        &PipelineConfig {
            seed: Some(5),
            round_cap: 4096,
            ..config(4, 6)
        },
    );
    assert_eq!(base.overlap_text(), stressed.overlap_text());
    assert_eq!(base.alignment_text(), stressed.alignment_text());
    let peak = stressed.report.get_f64("exchange.peak_round_bytes.max").unwrap();
    assert!(peak <= 4096.0, "{peak}");
    assert!(stressed.report.get_f64("table.rounds").unwrap() > 1.0);
}

#[test]
fn socket_backend_matches_in_process() {
    let sim = small_instance(0.08);
    let a = run(&sim, &config(3, 6));
    let b = run(&sim, &PipelineConfig { backend: Backend::Socket, ..config(3, 6) });
    assert_eq!(a.overlap_text(), b.overlap_text());
    assert_eq!(a.alignment_text(), b.alignment_text());
}

#[test]
fn error_free_overlaps_are_complete_and_exact() {
    let sim = small_instance(0.0);
    let run = run(
        &sim,
        &PipelineConfig {
            transcripts: true,
            ..config(2, 1000)
        },
    );
    let found: BTreeSet<(u64, u64)> = run.tasks().iter().map(|t| (t.rid_a, t.rid_b)).collect();
    let mut best: BTreeMap<(u64, u64), i32> = BTreeMap::new();
    for al in run.alignments() {
        let e = best.entry((al.rid_a, al.rid_b)).or_insert(i32::MIN);
        *e = (*e).max(al.score);
    }
    for t in &sim.truth {
        assert!(found.contains(&(t.rid_a, t.rid_b)), "missed {t:?}");
        assert_eq!(best[&(t.rid_a, t.rid_b)], t.len as i32, "{t:?}");
    }
    for al in run.alignments() {
        let (s, e) = sim.shared_interval(al.rid_a, al.rid_b).unwrap();
        let (sa, sb) = (sim.origins[al.rid_a as usize].0, sim.origins[al.rid_b as usize].0);
        assert_eq!((al.begin_a, al.end_a), (s - sa, e - sa));
        assert_eq!((al.begin_b, al.end_b), (s - sb, e - sb));
    }
}

#[test]
fn best_per_pair_reduces_to_one_line_per_pair() {
    let sim = small_instance(0.08);
    let run = run(&sim, &PipelineConfig { best_per_pair: true, ..config(2, 6) });
    let pairs: BTreeSet<_> = run.alignments().iter().map(|a| (a.rid_a, a.rid_b)).collect();
    assert_eq!(pairs.len(), run.alignments().len());
}

fn write_input(dir: &std::path::Path) -> std::path::PathBuf {
    let path = dir.join("reads.fastq");
    fs::write(&path, small_instance(0.08).fastq()).unwrap();
    path
}

#[test]
fn cli_writes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let input = write_input(dir.path());
    let out = dir.path().join("ov.tsv");
    let status = Command::new(env!("CARGO_BIN_EXE_lroverlap"))
        .arg("--input")
        .arg(&input)
        .args(["--max-kmer-freq", "6", "--ranks", "3", "--merge", "--mismatch", "-2"])
        .arg("--out-overlaps")
        .arg(&out)
        .arg("--out-metrics")
        .arg(dir.path().join("m.tsv"))
        .status()
        .unwrap();
    assert!(status.success());
    assert!(!fs::read(&out).unwrap().is_empty());
    for r in 0..3 {
        assert!(dir.path().join(format!("ov.tsv.rank{r}")).exists());
    }
    let metrics = fs::read_to_string(dir.path().join("m.tsv")).unwrap();
    assert!(metrics.contains("config.mismatch\t-2\n"));
}

#[test]
fn cli_rejects_missing_m() {
    let dir = tempfile::tempdir().unwrap();
    let input = write_input(dir.path());
    let out = Command::new(env!("CARGO_BIN_EXE_lroverlap"))
        .arg("--input")
        .arg(&input)
        .output()
        .unwrap();
    assert!(!out.status.success());
}

#[test]
fn cli_one_process_per_rank() {
    let dir = tempfile::tempdir().unwrap();
    let input = write_input(dir.path());
    let hosts: Vec<String> = (0..2)
        .map(|_| {
            let l = TcpListener::bind("127.0.0.1:0").unwrap();
            l.local_addr().unwrap().to_string()
        })
        .collect();
    let hostfile = dir.path().join("hosts");
    fs::write(&hostfile, hosts.join("\n")).unwrap();
    let spawn = |rank: usize, out: &str| {
        Command::new(env!("CARGO_BIN_EXE_lroverlap"))
            .arg("--input")
            .arg(&input)
            .args(["--max-kmer-freq", "6", "--backend", "socket", "--merge"])
            .arg("--hostfile")
            .arg(&hostfile)
            .args(["--rank", &rank.to_string()])
            .arg("--out-overlaps")
            .arg(dir.path().join(out))
            .spawn()
            .unwrap()
    };
    let mut children = vec![spawn(0, "sock.tsv"), spawn(1, "sock.tsv")];
    for c in &mut children {
        assert!(c.wait().unwrap().success());
    }
    let status = Command::new(env!("CARGO_BIN_EXE_lroverlap"))
        .arg("--input")
        .arg(&input)
        .args(["--max-kmer-freq", "6", "--merge"])
        .arg("--out-overlaps")
        .arg(dir.path().join("local.tsv"))
        .status()
        .unwrap();
    assert!(status.success());
    assert_eq!(
        fs::read(dir.path().join("sock.tsv")).unwrap(),
        fs::read(dir.path().join("local.tsv")).unwrap()
    );
}
