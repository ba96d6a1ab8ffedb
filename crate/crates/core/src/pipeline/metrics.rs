//! Per-rank counters and the reduced `stage.metric<TAB>value` report.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::align::load_imbalance;
use crate::error::{Error, Result};

pub const STAGES: [&str; 4] = ["bloom", "table", "overlap", "align"];

/// Numeric counters recorded on one rank, keyed `stage.metric`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RankMetrics {
    pub values: BTreeMap<String, f64>,
}

impl RankMetrics {
    pub fn set(&mut self, key: &str, value: impl Into<f64>) {
        self.values.insert(key.to_string(), value.into());
    }

    /// Missing keys read as zero.
    pub fn get(&self, key: &str) -> f64 {
        self.values.get(key).copied().unwrap_or(0.0)
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for (k, v) in &self.values {
            writeln!(out, "{k}\t{v}").expect("writing to memory");
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let text = std::str::from_utf8(bytes).map_err(|e| Error::Wire(e.to_string()))?;
        let mut values = BTreeMap::new();
        for line in text.lines() {
            let (k, v) = line
                .split_once('\t')
                .ok_or_else(|| Error::Wire(format!("metric line {line:?}")))?;
            let v: f64 = v.parse().map_err(|_| Error::Wire(format!("metric value {v:?}")))?;
            values.insert(k.to_string(), v);
        }
        Ok(RankMetrics { values })
    }
}

/// Ordered key/value report.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricsReport {
    entries: Vec<(String, String)>,
}

impl MetricsReport {
    pub fn push(&mut self, key: impl Into<String>, value: impl Display) {
        self.entries.push((key.into(), value.to_string()));
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn get_f64(&self, key: &str) -> Option<f64> {
        self.get(key)?.parse().ok()
    }

    pub fn entries(&self) -> &[(String, String)] {
        &self.entries
    }

    pub fn write<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for (k, v) in &self.entries {
            writeln!(out, "{k}\t{v}")?;
        }
        Ok(())
    }
}

/// Writes the report to `path`.
pub fn emit_metrics(report: &MetricsReport, path: &Path) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    report.write(&mut out)?;
    out.flush()?;
    Ok(())
}

fn ratio(num: f64, den: f64) -> f64 {
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}

/// Reduces per-rank counters. Stage rates are global items over the slowest
/// rank's wall time; imbalance ratios are max over mean.
pub fn reduce(config_echo: &[(String, String)], ranks: &[RankMetrics]) -> MetricsReport {
    let mut r = MetricsReport::default();
    for (k, v) in config_echo {
        r.push(format!("config.{k}"), v);
    }
    let col = |key: &str| ranks.iter().map(|m| m.get(key)).collect::<Vec<f64>>();
    let sum = |key: &str| col(key).iter().sum::<f64>();
    let max = |key: &str| col(key).iter().copied().fold(0.0, f64::max);
    let mean = |key: &str| ratio(sum(key), ranks.len() as f64);

    r.push("ranks", ranks.len());
    r.push("input.reads", sum("input.reads"));
    r.push("input.bases", sum("input.bases"));

    for s in STAGES {
        let wall = format!("{s}.wall_s");
        let items = format!("{s}.items");
        r.push(format!("{wall}.max"), max(&wall));
        r.push(format!("{wall}.mean"), mean(&wall));
        r.push(&items, sum(&items));
        r.push(format!("{items}.max"), max(&items));
        r.push(format!("{s}.items_per_s"), ratio(sum(&items), max(&wall)));
        r.push(format!("{s}.bytes_sent"), sum(&format!("{s}.bytes_sent")));
        r.push(format!("{s}.bytes_sent.max"), max(&format!("{s}.bytes_sent")));
        r.push(format!("{s}.rounds"), max(&format!("{s}.rounds")));
    }

    r.push("bloom.num_bits", sum("bloom.num_bits"));
    r.push("bloom.num_hashes", max("bloom.num_hashes"));
    r.push("bloom.expected_n", sum("bloom.expected_n"));
    r.push("bloom.candidates", sum("bloom.candidates"));
    r.push("bloom.estimated_fp.max", max("bloom.estimated_fp"));

    let parsed = sum("table.kmers_parsed");
    let distinct = sum("table.distinct");
    let retained = sum("table.retained");
    r.push("table.kmers_parsed", parsed);
    r.push("table.distinct", distinct);
    r.push("table.retained", retained);
    r.push("table.retained_occurrences", sum("table.retained_occurrences"));
    r.push("table.fp_singletons", sum("table.fp_singletons"));
    r.push("table.over_threshold", sum("table.over_threshold"));
    r.push("table.iota_input", ratio(retained, parsed));
    r.push("table.iota_set", ratio(retained, distinct));

    r.push("overlap.bound_lower", sum("overlap.bound_lower"));
    r.push("overlap.bound_exact", sum("overlap.bound_exact"));
    r.push("overlap.bound_upper", sum("overlap.bound_upper"));
    r.push("overlap.self_pairs", sum("overlap.self_pairs"));
    r.push("overlap.pairs", sum("overlap.pairs"));
    r.push("overlap.seed_entries", sum("overlap.seed_entries"));

    r.push("align.tasks", sum("align.tasks"));
    r.push("align.seeds", sum("align.seeds"));
    r.push("align.alignments", sum("align.alignments"));
    r.push("align.skipped_seeds", sum("align.skipped_seeds"));
    r.push("align.cells", sum("align.cells"));
    r.push("align.remote_requests", sum("align.remote_requests"));
    r.push("align.load_imbalance", load_imbalance(&col("align.wall_s")));
    r.push("align.task_imbalance", load_imbalance(&col("align.tasks")));

    r.push("exchange.peak_round_bytes.max", max("exchange.peak_round_bytes"));
    r
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rank(wall: f64, items: f64, tasks: f64) -> RankMetrics {
        let mut m = RankMetrics::default();
        m.set("align.wall_s", wall);
        m.set("align.items", items);
        m.set("align.tasks", tasks);
        m.set("table.kmers_parsed", 100.0);
        m.set("table.distinct", 50.0);
        m.set("table.retained", 5.0);
        m
    }

    #[test]
    fn counters_round_trip() {
        let m = rank(0.1 + 0.2, 3.0, 7.0);
        assert_eq!(RankMetrics::decode(&m.encode()).unwrap(), m);
        assert!(RankMetrics::decode(b"novalue\n").is_err());
    }

    #[test]
    fn reduction() {
        let echo = vec![("k".to_string(), "17".to_string())];
        let r = reduce(&echo, &[rank(2.0, 10.0, 3.0), rank(1.0, 30.0, 1.0)]);
        assert_eq!(r.get("config.k"), Some("17"));
        assert_eq!(r.get_f64("align.items"), Some(40.0));
        assert_eq!(r.get_f64("align.items_per_s"), Some(20.0));
        assert_eq!(r.get_f64("align.load_imbalance"), Some(2.0 / 1.5));
        assert_eq!(r.get_f64("align.task_imbalance"), Some(1.5));
        assert_eq!(r.get_f64("table.iota_set"), Some(0.1));
        assert_eq!(r.get_f64("table.iota_input"), Some(0.05));
        let mut out = Vec::new();
        r.write(&mut out).unwrap();
        assert!(String::from_utf8(out).unwrap().starts_with("config.k\t17\nranks\t2\n"));
    }
}
