//! JSON-lines result records, config hashing and summaries.

use std::collections::{BTreeMap, HashSet};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use nalu_core::dataset::Operation;
use nalu_core::evaluation::{summarize, SeedOutcome, Summary};
use nalu_core::experiment::{ExperimentConfig, ModelPreset, SeedRun};
use nalu_core::RngStream;

pub fn code_version() -> String {
    format!("nalu-lab {}", env!("CARGO_PKG_VERSION"))
}

/// SHA-256 of the canonical JSON form of everything but the seed.
pub fn config_hash(cfg: &ExperimentConfig) -> String {
    let json = serde_json::to_string(cfg).expect("config serializes");
    let digest = Sha256::digest(json.as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub config_hash: String,
    pub model: ModelPreset,
    pub op: Operation,
    pub seed: u64,
    pub success: bool,
    pub solved_at: Option<u64>,
    pub sparsity_error: Option<f64>,
    pub final_interp_mse: f64,
    pub final_extrap_mse: f64,
    pub diverged: bool,
    pub wall_seconds: f64,
    pub threshold: f64,
    pub hidden: usize,
    pub generator: String,
    pub code_version: String,
}

impl ResultRecord {
    pub fn new(cfg: &ExperimentConfig, hash: &str, run: &SeedRun) -> Self {
        let o = &run.outcome;
        Self {
            config_hash: hash.to_string(),
            model: cfg.model,
            op: cfg.dataset.operation,
            seed: o.seed,
            success: o.success,
            solved_at: o.solved_at,
            sparsity_error: o.sparsity_error,
            final_interp_mse: o.final_interp_mse,
            final_extrap_mse: o.final_extrap_mse,
            diverged: o.diverged,
            wall_seconds: run.wall_seconds,
            threshold: run.threshold,
            hidden: cfg.hidden,
            generator: RngStream::GENERATOR.to_string(),
            code_version: code_version(),
        }
    }

    pub fn outcome(&self) -> SeedOutcome {
        SeedOutcome {
            seed: self.seed,
            success: self.success,
            solved_at: self.solved_at,
            sparsity_error: self.sparsity_error,
            diverged: self.diverged,
            final_interp_mse: self.final_interp_mse,
            final_extrap_mse: self.final_extrap_mse,
        }
    }
}

/// Reads every record; a truncated last line from an interrupted run is skipped.
pub fn read_records(path: &Path) -> Result<Vec<ResultRecord>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let lines: Vec<String> = BufReader::new(file).lines().collect::<std::io::Result<_>>()?;
    let mut out = Vec::with_capacity(lines.len());
    let last = lines.len().saturating_sub(1);
    for (i, line) in lines.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str(line) {
            Ok(r) => out.push(r),
            Err(_) if i == last => {}
            Err(e) => return Err(e).with_context(|| format!("{}:{}: bad record", path.display(), i + 1)),
        }
    }
    Ok(out)
}

pub fn completed(records: &[ResultRecord]) -> HashSet<(String, u64)> {
    records.iter().map(|r| (r.config_hash.clone(), r.seed)).collect()
}

/// Appends one record per line and flushes after each.
pub struct RecordWriter {
    file: File,
}

impl RecordWriter {
    pub fn open(path: &Path) -> Result<Self> {
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .with_context(|| format!("opening {}", path.display()))?;
        Ok(Self { file })
    }

    pub fn append(&mut self, r: &ResultRecord) -> Result<()> {
        let mut line = serde_json::to_string(r)?;
        line.push('\n');
        self.file.write_all(line.as_bytes())?;
        self.file.flush()?;
        Ok(())
    }
}

/// One summary cell with its intervals spelled out.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub model: ModelPreset,
    pub op: Operation,
    pub config_hash: String,
    pub trials: usize,
    pub successes: usize,
    pub diverged: usize,
    pub success_rate: f64,
    pub success_lower: f64,
    pub success_upper: f64,
    pub success_text: String,
    pub solved_at_median: Option<f64>,
    pub solved_at_mean: Option<f64>,
    pub solved_at_lower: Option<f64>,
    pub solved_at_upper: Option<f64>,
    pub sparsity_mean: Option<f64>,
    pub sparsity_lower: Option<f64>,
    pub sparsity_upper: Option<f64>,
}

impl SummaryRow {
    pub fn new(model: ModelPreset, op: Operation, config_hash: &str, s: &Summary) -> Self {
        let solved = s.solved_at_mean.as_ref();
        let sparsity = s.sparsity_mean.as_ref();
        Self {
            model,
            op,
            config_hash: config_hash.to_string(),
            trials: s.trials,
            successes: s.successes,
            diverged: s.diverged,
            success_rate: s.success_rate,
            success_lower: s.success_interval.0,
            success_upper: s.success_interval.1,
            success_text: s.success_text(),
            solved_at_median: s.solved_at_median,
            solved_at_mean: solved.map(|m| m.mean),
            solved_at_lower: solved.and_then(|m| m.interval).map(|i| i.0),
            solved_at_upper: solved.and_then(|m| m.interval).map(|i| i.1),
            sparsity_mean: sparsity.map(|m| m.mean),
            sparsity_lower: sparsity.and_then(|m| m.interval).map(|i| i.0),
            sparsity_upper: sparsity.and_then(|m| m.interval).map(|i| i.1),
        }
    }
}

/// Groups by `(model, op, config_hash)` in a stable order; later duplicates
/// of a `(hash, seed)` pair are ignored.
pub fn summarize_records(records: &[ResultRecord], level: f64) -> Result<Vec<SummaryRow>> {
    let mut groups: BTreeMap<(String, String, String), (ModelPreset, Operation, Vec<SeedOutcome>)> = BTreeMap::new();
    let mut seen = HashSet::new();
    for r in records {
        if !seen.insert((r.config_hash.clone(), r.seed)) {
            continue;
        }
        let key = (r.model.name().to_string(), r.op.name().to_string(), r.config_hash.clone());
        groups.entry(key).or_insert_with(|| (r.model, r.op, Vec::new())).2.push(r.outcome());
    }
    groups
        .into_iter()
        .map(|((_, _, hash), (model, op, outs))| Ok(SummaryRow::new(model, op, &hash, &summarize(&outs, level)?)))
        .collect()
}

pub fn write_summary_csv(rows: &[SummaryRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_ignores_nothing_but_the_seed() {
        let a = ExperimentConfig::default();
        let mut b = a.clone();
        assert_eq!(config_hash(&a), config_hash(&b));
        b.hidden = 3;
        assert_ne!(config_hash(&a), config_hash(&b));
        assert_eq!(config_hash(&a).len(), 64);
    }

    #[test]
    fn truncated_tail_is_skipped() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.jsonl");
        let rec = ResultRecord {
            config_hash: "h".into(),
            model: ModelPreset::Nmu,
            op: Operation::Mul,
            seed: 1,
            success: true,
            solved_at: Some(1000),
            sparsity_error: Some(1e-6),
            final_interp_mse: 0.0,
            final_extrap_mse: 0.0,
            diverged: false,
            wall_seconds: 0.1,
            threshold: 1.0,
            hidden: 2,
            generator: "g".into(),
            code_version: "v".into(),
        };
        let mut w = RecordWriter::open(&p).unwrap();
        w.append(&rec).unwrap();
        std::fs::OpenOptions::new()
            .append(true)
            .open(&p)
            .unwrap()
            .write_all(b"{\"config_hash\": \"h\", \"mo")
            .unwrap();
        let back = read_records(&p).unwrap();
        assert_eq!(back, vec![rec]);
    }
}
