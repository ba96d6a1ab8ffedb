//! The four stages wired together on one rank, the in-process launcher, and
//! file outputs.

mod metrics;

pub use metrics::{emit_metrics, reduce, MetricsReport, RankMetrics, STAGES};

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::ops::Range;
use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::align::{
    best_per_pair, fetch_reads, run_alignment_stage, write_alignments, AlignConfig, Alignment,
    ScoringScheme,
};
use crate::bloom::{run_bloom_stage, BloomConfig};
use crate::error::{Error, Result};
use crate::exchange::{launch, Backend, ExchangeStats, Exchanger, SocketTransport, DEFAULT_ROUND_CAP};
use crate::kmer::KmerParams;
use crate::overlap::{filter_seeds, run_overlap_stage, write_overlaps, OverlapTask};
use crate::seq_io::{partition_lengths, InputSet};
use crate::table::{run_table_stage, write_histogram, TablePartition};

pub const DEFAULT_K: usize = 17;
pub const DEFAULT_MIN_SEED_DISTANCE: u32 = 1000;

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineConfig {
    pub inputs: Vec<PathBuf>,
    pub k: usize,
    /// Upper k-mer frequency `m`. Required.
    pub max_count: Option<u64>,
    pub min_seed_distance: u32,
    pub max_seeds: usize,
    pub canonical: bool,
    pub scoring: ScoringScheme,
    pub ranks: usize,
    pub backend: Backend,
    pub hostfile: Option<PathBuf>,
    pub round_cap: usize,
    pub bloom: BloomConfig,
    pub out_overlaps: Option<PathBuf>,
    pub out_alignments: Option<PathBuf>,
    pub out_metrics: Option<PathBuf>,
    pub histogram: Option<PathBuf>,
    pub best_per_pair: bool,
    /// Also write merged, sorted copies of the per-rank output files.
    pub merge: bool,
    pub transcripts: bool,
    /// Alignment worker threads per rank.
    pub threads: usize,
    /// When set, exchange deliveries arrive in a seeded random source order.
    pub seed: Option<u64>,
    /// Return each rank's finalized table in its [`RankResult`].
    pub keep_table: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            inputs: Vec::new(),
            k: DEFAULT_K,
            max_count: None,
            min_seed_distance: DEFAULT_MIN_SEED_DISTANCE,
            max_seeds: 1,
            canonical: false,
            scoring: ScoringScheme::default(),
            ranks: 1,
            backend: Backend::InProcess,
            hostfile: None,
            round_cap: DEFAULT_ROUND_CAP,
            bloom: BloomConfig::default(),
            out_overlaps: None,
            out_alignments: None,
            out_metrics: None,
            histogram: None,
            best_per_pair: false,
            merge: false,
            transcripts: false,
            threads: 1,
            seed: None,
            keep_table: false,
        }
    }
}

impl PipelineConfig {
    pub fn kmer_params(&self) -> Result<KmerParams> {
        let m = self
            .max_count
            .ok_or_else(|| Error::config("maximum k-mer frequency (m) is required"))?;
        KmerParams::new(self.k, m, self.canonical)
    }

    pub fn validate(&self) -> Result<()> {
        self.kmer_params()?;
        self.scoring.validate()?;
        if self.max_seeds == 0 {
            return Err(Error::config("max seeds must be at least 1"));
        }
        if self.ranks == 0 {
            return Err(Error::config("rank count must be at least 1"));
        }
        if self.threads == 0 {
            return Err(Error::config("thread count must be at least 1"));
        }
        if !(self.bloom.target_fp > 0.0 && self.bloom.target_fp < 1.0) {
            return Err(Error::config("bloom false-positive target must lie in (0, 1)"));
        }
        if !(self.bloom.distinct_fraction > 0.0 && self.bloom.distinct_fraction <= 1.0) {
            return Err(Error::config("distinct fraction must lie in (0, 1]"));
        }
        if self.round_cap < 1024 {
            return Err(Error::config("round cap must be at least 1024 bytes"));
        }
        Ok(())
    }

    /// Settings echoed into the metrics report.
    pub fn echo(&self) -> Vec<(String, String)> {
        let paths = |ps: &[PathBuf]| {
            ps.iter()
                .map(|p| p.display().to_string())
                .collect::<Vec<_>>()
                .join(",")
        };
        let opt = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        let kv = [
            ("inputs", paths(&self.inputs)),
            ("k", self.k.to_string()),
            ("max_kmer_freq", self.max_count.map(|m| m.to_string()).unwrap_or_default()),
            ("min_seed_distance", self.min_seed_distance.to_string()),
            ("max_seeds", self.max_seeds.to_string()),
            ("canonical", self.canonical.to_string()),
            ("match", self.scoring.match_score.to_string()),
            ("mismatch", self.scoring.mismatch.to_string()),
            ("gap", self.scoring.gap.to_string()),
            ("xdrop", self.scoring.x_drop.to_string()),
            ("ranks", self.ranks.to_string()),
            ("backend", self.backend.to_string()),
            ("round_cap", self.round_cap.to_string()),
            ("bloom_fp", self.bloom.target_fp.to_string()),
            ("distinct_fraction", self.bloom.distinct_fraction.to_string()),
            ("out_overlaps", opt(&self.out_overlaps)),
            ("out_alignments", opt(&self.out_alignments)),
            ("histogram", opt(&self.histogram)),
            ("best_per_pair", self.best_per_pair.to_string()),
            ("threads", self.threads.to_string()),
            ("seed", self.seed.map(|s| s.to_string()).unwrap_or_default()),
        ];
        kv.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
    }
}

/// What one rank produced.
#[derive(Debug)]
pub struct RankResult {
    pub rank: usize,
    pub reads: Range<u64>,
    /// Consolidated pairs owned by this rank, before seed filtering.
    pub tasks: Vec<OverlapTask>,
    pub alignments: Vec<Alignment>,
    /// This rank's count histogram before finalization.
    pub histogram: BTreeMap<u64, u64>,
    pub table: Option<TablePartition>,
    pub metrics: RankMetrics,
    /// Rank 0 only.
    pub report: Option<MetricsReport>,
    /// Rank 0 only: histogram summed over ranks.
    pub global_histogram: Option<BTreeMap<u64, u64>>,
}

fn record(m: &mut RankMetrics, stage: &str, start: Instant, ex: &ExchangeStats, items: u64) {
    m.set(&format!("{stage}.wall_s"), start.elapsed().as_secs_f64());
    m.set(&format!("{stage}.items"), items as f64);
    m.set(&format!("{stage}.bytes_sent"), ex.bytes_sent as f64);
    m.set(&format!("{stage}.bytes_received"), ex.bytes_received as f64);
    m.set(&format!("{stage}.rounds"), ex.rounds as f64);
}

fn parse_histogram(bytes: &[u8]) -> Result<BTreeMap<u64, u64>> {
    let text = std::str::from_utf8(bytes).map_err(|e| Error::Wire(e.to_string()))?;
    let mut h = BTreeMap::new();
    for line in text.lines() {
        let pair = line
            .split_once('\t')
            .and_then(|(c, n)| Some((c.parse::<u64>().ok()?, n.parse::<u64>().ok()?)));
        let (c, n) = pair.ok_or_else(|| Error::Wire(format!("histogram line {line:?}")))?;
        h.insert(c, n);
    }
    Ok(h)
}

/// Runs all four stages as rank `ex.rank()`. Every rank indexes the whole
/// input but parses only its own partition.
pub fn run_rank(cfg: &PipelineConfig, input: &InputSet, ex: &mut Exchanger) -> Result<RankResult> {
    let params = cfg.kmer_params()?;
    let rank = ex.rank();
    let partition = partition_lengths(&input.lengths(), ex.size())?;
    let range = partition.range(rank);
    let reads = input.parse_range(range.clone());
    if let Some(seed) = cfg.seed {
        ex.shuffle_sources(seed);
    }
    let mut m = RankMetrics::default();
    m.set("input.reads", reads.len() as f64);
    m.set("input.bases", reads.iter().map(|r| r.len() as f64).sum::<f64>());

    let (t, x) = (Instant::now(), ex.stats());
    let bloom = run_bloom_stage(&reads, &params, &cfg.bloom, ex).map_err(|e| e.in_stage("bloom"))?;
    record(&mut m, "bloom", t, &ex.stats().since(&x), bloom.kmers_extracted);
    m.set("bloom.num_bits", bloom.num_bits as f64);
    m.set("bloom.num_hashes", bloom.num_hashes);
    m.set("bloom.expected_n", bloom.expected_n);
    m.set("bloom.candidates", bloom.candidates.len() as f64);
    m.set("bloom.estimated_fp", bloom.estimated_fp);

    let (t, x) = (Instant::now(), ex.stats());
    let table = run_table_stage(&reads, bloom.candidates, &params, ex).map_err(|e| e.in_stage("table"))?;
    record(&mut m, "table", t, &ex.stats().since(&x), table.kmers_extracted);
    m.set("table.kmers_parsed", table.kmers_extracted as f64);
    m.set("table.distinct", table.stats.distinct() as f64);
    m.set("table.retained", table.stats.retained as f64);
    m.set("table.retained_occurrences", table.stats.retained_occurrences as f64);
    m.set("table.fp_singletons", table.stats.false_positive_singletons as f64);
    m.set("table.over_threshold", table.stats.over_threshold as f64);

    let (t, x) = (Instant::now(), ex.stats());
    let overlap = run_overlap_stage(&table.table, &partition, ex).map_err(|e| e.in_stage("overlap"))?;
    record(&mut m, "overlap", t, &ex.stats().since(&x), overlap.tasks_sent);
    m.set("overlap.bound_lower", overlap.bounds.lower as f64);
    m.set("overlap.bound_exact", overlap.bounds.exact as f64);
    m.set("overlap.bound_upper", overlap.bounds.upper as f64);
    m.set("overlap.self_pairs", overlap.self_pairs as f64);
    m.set("overlap.pairs", overlap.tasks.len() as f64);
    m.set(
        "overlap.seed_entries",
        overlap.tasks.iter().map(|t| t.seeds.len() as f64).sum::<f64>(),
    );
    let table_kept = cfg.keep_table.then_some(table.table);

    let (t, x) = (Instant::now(), ex.stats());
    let filtered: Vec<OverlapTask> = overlap
        .tasks
        .iter()
        .map(|task| filter_seeds(task, cfg.min_seed_distance, cfg.max_seeds))
        .collect();
    let cache = fetch_reads(&filtered, &reads, &partition, ex).map_err(|e| e.in_stage("align"))?;
    drop(reads);
    let align_cfg = AlignConfig {
        k: params.k,
        scoring: cfg.scoring,
        transcripts: cfg.transcripts,
        threads: cfg.threads,
    };
    let aligned = run_alignment_stage(&filtered, &cache, &align_cfg).map_err(|e| e.in_stage("align"))?;
    let alignments = if cfg.best_per_pair {
        best_per_pair(aligned.alignments)
    } else {
        aligned.alignments
    };
    record(&mut m, "align", t, &ex.stats().since(&x), alignments.len() as u64);
    m.set("align.tasks", filtered.len() as f64);
    m.set("align.seeds", filtered.iter().map(|t| t.seeds.len() as f64).sum::<f64>());
    m.set("align.alignments", alignments.len() as f64);
    m.set("align.skipped_seeds", aligned.skipped_seeds as f64);
    m.set("align.cells", aligned.cells as f64);
    m.set("align.remote_requests", cache.remote_requests as f64);

    let peak = ex.stats().peak_round_bytes;
    if peak > ex.round_cap() as u64 {
        return Err(Error::contract(format!(
            "peak round payload {peak} exceeds the {} byte cap",
            ex.round_cap()
        )));
    }
    m.set("exchange.peak_round_bytes", peak as f64);

    let gathered = ex.gather_to_root(m.encode())?;
    let report = gathered
        .map(|all| -> Result<MetricsReport> {
            let ranks = all.iter().map(|b| RankMetrics::decode(b)).collect::<Result<Vec<_>>>()?;
            Ok(reduce(&cfg.echo(), &ranks))
        })
        .transpose()?;
    let mut hist_bytes = Vec::new();
    write_histogram(&mut hist_bytes, &table.histogram)?;
    let global_histogram = ex
        .gather_to_root(hist_bytes)?
        .map(|all| -> Result<BTreeMap<u64, u64>> {
            let mut total = BTreeMap::new();
            for b in &all {
                for (c, n) in parse_histogram(b)? {
                    *total.entry(c).or_insert(0) += n;
                }
            }
            Ok(total)
        })
        .transpose()?;

    Ok(RankResult {
        rank,
        reads: range,
        tasks: overlap.tasks,
        alignments,
        histogram: table.histogram,
        table: table_kept,
        metrics: m,
        report,
        global_histogram,
    })
}

/// `path` with `.rankN` appended to its file name.
pub fn rank_path(path: &Path, rank: usize) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(format!(".rank{rank}"));
    PathBuf::from(s)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

/// Writes this rank's overlap and alignment files; rank 0 also writes the
/// metrics report and the global histogram.
pub fn write_rank_outputs(cfg: &PipelineConfig, res: &RankResult) -> Result<()> {
    if let Some(p) = &cfg.out_overlaps {
        let mut w = create(&rank_path(p, res.rank))?;
        write_overlaps(&mut w, &res.tasks)?;
        w.flush()?;
    }
    if let Some(p) = &cfg.out_alignments {
        let mut w = create(&rank_path(p, res.rank))?;
        write_alignments(&mut w, &res.alignments)?;
        w.flush()?;
    }
    if let (Some(p), Some(report)) = (&cfg.out_metrics, &res.report) {
        emit_metrics(report, p)?;
    }
    if let (Some(p), Some(h)) = (&cfg.histogram, &res.global_histogram) {
        let mut w = create(p)?;
        write_histogram(&mut w, h)?;
        w.flush()?;
    }
    Ok(())
}

/// Orders output lines by their tab-separated fields, numerically where a
/// field is an integer.
pub fn sort_lines(lines: &mut [String]) {
    fn key(line: &str) -> Vec<(Option<i64>, &str)> {
        line.split('\t').map(|f| (f.parse().ok(), f)).collect()
    }
    lines.sort_by(|a, b| key(a).cmp(&key(b)));
}

/// Concatenates `path.rank0 .. path.rank{p-1}`, sorts the lines and writes
/// them to `path`.
pub fn merge_rank_files(path: &Path, p: usize) -> Result<()> {
    let mut lines = Vec::new();
    for r in 0..p {
        let text = fs::read_to_string(rank_path(path, r))?;
        lines.extend(text.lines().map(str::to_string));
    }
    sort_lines(&mut lines);
    let mut w = create(path)?;
    for l in &lines {
        writeln!(w, "{l}")?;
    }
    w.flush()?;
    Ok(())
}

/// Results of a whole in-process run, in rank order.
#[derive(Debug)]
pub struct PipelineRun {
    pub ranks: Vec<RankResult>,
    pub report: MetricsReport,
}

impl PipelineRun {
    /// All consolidated tasks, sorted by pair.
    pub fn tasks(&self) -> Vec<&OverlapTask> {
        let mut t: Vec<_> = self.ranks.iter().flat_map(|r| &r.tasks).collect();
        t.sort_by_key(|t| (t.rid_a, t.rid_b));
        t
    }

    /// All alignments, sorted by pair then seed.
    pub fn alignments(&self) -> Vec<&Alignment> {
        let mut a: Vec<_> = self.ranks.iter().flat_map(|r| &r.alignments).collect();
        a.sort_by_key(|a| (a.rid_a, a.rid_b, a.seed));
        a
    }

    /// Overlap output of all ranks in canonical order.
    pub fn overlap_text(&self) -> Vec<u8> {
        let tasks: Vec<OverlapTask> = self.tasks().into_iter().cloned().collect();
        let mut out = Vec::new();
        write_overlaps(&mut out, &tasks).expect("writing to memory");
        out
    }

    /// Alignment output of all ranks in canonical order.
    pub fn alignment_text(&self) -> Vec<u8> {
        let al: Vec<Alignment> = self.alignments().into_iter().cloned().collect();
        let mut out = Vec::new();
        write_alignments(&mut out, &al).expect("writing to memory");
        out
    }
}

/// Loads the configured inputs and runs the pipeline on `cfg.ranks` local
/// ranks.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<PipelineRun> {
    cfg.validate()?;
    if cfg.inputs.is_empty() {
        return Err(Error::config("at least one input file is required"));
    }
    let input = InputSet::load(&cfg.inputs)?;
    run_pipeline_on(cfg, &input)
}

/// Runs the pipeline on an already indexed input.
pub fn run_pipeline_on(cfg: &PipelineConfig, input: &InputSet) -> Result<PipelineRun> {
    cfg.validate()?;
    let ranks = launch(cfg.ranks, cfg.backend, cfg.round_cap, |mut ex| {
        let res = run_rank(cfg, input, &mut ex)?;
        write_rank_outputs(cfg, &res)?;
        Ok(res)
    })?;
    if cfg.merge {
        for p in [&cfg.out_overlaps, &cfg.out_alignments].into_iter().flatten() {
            merge_rank_files(p, cfg.ranks)?;
        }
    }
    let report = ranks[0].report.clone().expect("rank 0 holds the report");
    Ok(PipelineRun { ranks, report })
}

/// Runs this process as one rank of a socket world described by `hosts`.
/// With `merge`, rank 0 merges the per-rank files, which must then live on
/// a shared filesystem.
pub fn run_socket_rank(cfg: &PipelineConfig, rank: usize, hosts: &[String]) -> Result<RankResult> {
    cfg.validate()?;
    let input = InputSet::load(&cfg.inputs)?;
    let transport = SocketTransport::connect(rank, hosts)?;
    let mut ex = Exchanger::new(Box::new(transport), cfg.round_cap)?;
    let res = run_rank(cfg, &input, &mut ex)?;
    write_rank_outputs(cfg, &res)?;
    // every rank's files exist once the barrier completes
    ex.barrier()?;
    if cfg.merge && rank == 0 {
        for p in [&cfg.out_overlaps, &cfg.out_alignments].into_iter().flatten() {
            merge_rank_files(p, hosts.len())?;
        }
    }
    Ok(res)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{simulate_reads, SimConfig};

    fn small_input() -> InputSet {
        let sim = simulate_reads(&SimConfig {
            genome_len: 3_000,
            depth: 8.0,
            read_len: 300,
            ..Default::default()
        })
        .unwrap();
        InputSet::from_buffers(vec![sim.fastq()]).unwrap()
    }

    fn cfg(ranks: usize) -> PipelineConfig {
        PipelineConfig {
            k: 15,
            max_count: Some(20),
            ranks,
            ..Default::default()
        }
    }

    #[test]
    fn m_is_required() {
        let c = PipelineConfig::default();
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        assert!(cfg(1).validate().is_ok());
        assert!(PipelineConfig { max_seeds: 0, ..cfg(1) }.validate().is_err());
        assert!(PipelineConfig { round_cap: 10, ..cfg(1) }.validate().is_err());
    }

    #[test]
    fn ranks_agree() {
        let input = small_input();
        let one = run_pipeline_on(&cfg(1), &input).unwrap();
        let three = run_pipeline_on(&cfg(3), &input).unwrap();
        assert!(!one.tasks().is_empty());
        assert_eq!(one.overlap_text(), three.overlap_text());
        assert_eq!(one.alignment_text(), three.alignment_text());
        assert_eq!(one.report.get("table.retained"), three.report.get("table.retained"));
    }

    #[test]
    fn files_and_merge() {
        let dir = tempfile::tempdir().unwrap();
        let input = small_input();
        let c = PipelineConfig {
            out_overlaps: Some(dir.path().join("ov.tsv")),
            out_alignments: Some(dir.path().join("al.tsv")),
            out_metrics: Some(dir.path().join("metrics.tsv")),
            histogram: Some(dir.path().join("hist.tsv")),
            merge: true,
            ..cfg(2)
        };
        let run = run_pipeline_on(&c, &input).unwrap();
        assert!(dir.path().join("ov.tsv.rank0").exists());
        assert!(dir.path().join("ov.tsv.rank1").exists());
        assert_eq!(fs::read(dir.path().join("ov.tsv")).unwrap(), run.overlap_text());
        assert_eq!(fs::read(dir.path().join("al.tsv")).unwrap(), run.alignment_text());
        let metrics = fs::read_to_string(dir.path().join("metrics.tsv")).unwrap();
        assert!(metrics.contains("align.load_imbalance\t"));
        assert!(metrics.contains("table.iota_set\t"));
        assert!(metrics.contains("config.k\t15\n"));
        let hist = fs::read_to_string(dir.path().join("hist.tsv")).unwrap();
        let total: u64 = hist
            .lines()
            .map(|l| l.split('\t').nth(1).unwrap().parse::<u64>().unwrap())
            .sum();
        assert_eq!(total as f64, run.report.get_f64("bloom.candidates").unwrap());
    }

    #[test]
    fn rates_are_items_over_time() {
        let run = run_pipeline_on(&cfg(2), &small_input()).unwrap();
        for s in STAGES {
            let items = run.report.get_f64(&format!("{s}.items")).unwrap();
            let wall = run.report.get_f64(&format!("{s}.wall_s.max")).unwrap();
            let rate = run.report.get_f64(&format!("{s}.items_per_s")).unwrap();
            if wall > 0.0 {
                assert!((rate - items / wall).abs() <= 1e-9 * rate.abs().max(1.0));
            }
        }
    }

    #[test]
    fn numeric_line_order() {
        let mut lines = vec!["10\t2".to_string(), "9\t5".to_string(), "9\t10".to_string()];
        sort_lines(&mut lines);
        assert_eq!(lines, ["9\t5", "9\t10", "10\t2"]);
    }

    #[test]
    fn rank_suffix() {
        assert_eq!(rank_path(Path::new("/tmp/out.tsv"), 3), PathBuf::from("/tmp/out.tsv.rank3"));
    }
}
