//! Summary statistics and report files.
//!
//! Every experiment writes a per-row CSV and a JSON summary whose bytes depend
//! only on the configuration. Wall-clock measurements go to a separate
//! `timing.json`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

pub const SCHEMA_VERSION: u32 = 1;

/// Mean, median, 95th percentile and population standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Stats {
    pub count: usize,
    pub mean: f64,
    pub median: f64,
    pub p95: f64,
    pub std: f64,
}

impl Stats {
    /// Percentiles interpolate linearly between order statistics. An
    /// empty sample yields all zeros.
    pub fn from_samples(samples: &[f64]) -> Self {
        let count = samples.len();
        if count == 0 {
            return Self::default();
        }
        let mut sorted = samples.to_vec();
        sorted.sort_by(f64::total_cmp);
        let mean = sorted.iter().sum::<f64>() / count as f64;
        let var = sorted.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / count as f64;
        Self {
            count,
            mean,
            median: percentile(&sorted, 0.5),
            p95: percentile(&sorted, 0.95),
            std: var.sqrt(),
        }
    }
}

/// `q`-quantile of an ascending sample.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    match sorted.len() {
        0 => 0.0,
        1 => sorted[0],
        n => {
            let pos = q.clamp(0.0, 1.0) * (n - 1) as f64;
            let lo = pos.floor() as usize;
            let hi = pos.ceil() as usize;
            sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
        }
    }
}

/// `(baseline − candidate) / baseline` in percent; `None` when the baseline
/// is not positive.
pub fn reduction_pct(baseline: f64, candidate: f64) -> Option<f64> {
    (baseline > 0.0).then(|| 100.0 * (baseline - candidate) / baseline)
}

/// Git blob-style SHA-256 of `bytes`: the digest of `"blob <len>\0" ++ bytes`.
pub fn content_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    hex(&h.finalize())
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Short digest identifying one trial's inputs, shared by every mode that
/// consumes them.
pub fn input_digest(values: impl IntoIterator<Item = f64>) -> String {
    let mut h = Sha256::new();
    for v in values {
        h.update(v.to_le_bytes());
    }
    hex(&h.finalize()[..8])
}

/// Top-level JSON document written by every experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport<C, S> {
    pub schema_version: u32,
    pub experiment: String,
    /// Hash of the canonical JSON form of `config`.
    pub input_hash: String,
    pub config: C,
    pub summary: S,
}

impl<C: Serialize, S: Serialize> BenchReport<C, S> {
    pub fn new(experiment: &str, config: C, summary: S) -> Result<Self> {
        let canonical = serde_json::to_vec(&config).map_err(|e| CliError::Validation(e.to_string()))?;
        Ok(Self {
            schema_version: SCHEMA_VERSION,
            experiment: experiment.to_string(),
            input_hash: content_hash(&canonical),
            config,
            summary,
        })
    }
}

/// Wall-clock statistics, kept out of the deterministic outputs.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TimingReport {
    pub experiment: String,
    /// Per-solve seconds, keyed by method label.
    pub solve_seconds: Vec<(String, Stats)>,
}

pub fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Validation(e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

/// Writes `header` and `rows` as CSV.
pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let io = |e: csv::Error| match e.into_kind() {
        csv::ErrorKind::Io(e) => CliError::io(path, e),
        other => CliError::Validation(format!("{}: {other:?}", path.display())),
    };
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    w.write_record(header).map_err(io)?;
    for r in rows {
        w.write_record(r).map_err(io)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

/// Shortest round-trippable decimal form.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

/// Paths of the files an experiment writes into its output directory.
#[derive(Debug, Clone)]
pub struct OutputPaths {
    pub dir: PathBuf,
    pub summary: PathBuf,
    pub csv: PathBuf,
    pub timing: PathBuf,
}

impl OutputPaths {
    pub fn new(dir: &Path, experiment: &str) -> Self {
        Self {
            dir: dir.to_path_buf(),
            summary: dir.join(format!("{experiment}_summary.json")),
            csv: dir.join(format!("{experiment}.csv")),
            timing: dir.join("timing.json"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stats_small_sample() {
        let s = Stats::from_samples(&[4.0, 1.0, 3.0, 2.0]);
        assert_eq!(s.count, 4);
        assert_eq!(s.mean, 2.5);
        assert_eq!(s.median, 2.5);
        assert!((s.p95 - 3.85).abs() < 1e-12);
        assert!((s.std - 1.25f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn stats_empty_and_single() {
        assert_eq!(Stats::from_samples(&[]), Stats::default());
        let s = Stats::from_samples(&[7.0]);
        assert_eq!((s.mean, s.median, s.p95, s.std), (7.0, 7.0, 7.0, 0.0));
    }

    #[test]
    fn reduction_needs_positive_baseline() {
        assert_eq!(reduction_pct(200.0, 50.0), Some(75.0));
        assert_eq!(reduction_pct(0.0, 1.0), None);
    }

    #[test]
    fn blob_hash_matches_git() {
        // `printf 'hello\n' | git hash-object --stdin` with the sha256 object format
        assert_eq!(
            content_hash(b"hello\n"),
            "2cf8d83d9ee29543b34a87727421fdecb7e3f3a183d337639025de576db9ebb4"
        );
    }

    #[test]
    fn float_format_round_trips() {
        for v in [0.1, 1.0 / 3.0, 1e-300, 85.0] {
            assert_eq!(fmt_f64(v).parse::<f64>().unwrap(), v);
        }
    }
}
