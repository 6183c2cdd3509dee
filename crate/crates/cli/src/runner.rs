//! Seed-parallel execution with a single writer.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc;

use anyhow::{anyhow, Context, Result};
use rayon::prelude::*;

use nalu_core::dataset::Range;
use nalu_core::experiment::{run_seed, ExperimentConfig};

use crate::manifest::Manifest;
use crate::records::{
    completed, config_hash, read_records, summarize_records, write_summary_csv, RecordWriter, ResultRecord, SummaryRow,
};

pub const RESULTS_FILE: &str = "results.jsonl";

/// Runs `f` over `items` on `workers` threads and hands each result to `sink`
/// on the calling thread, in completion order. The first error stops new
/// items from starting and is returned.
pub fn parallel_for_each<I, T, F, S>(items: &[I], workers: usize, f: F, mut sink: S) -> Result<()>
where
    I: Sync,
    T: Send,
    F: Fn(&I) -> Result<T> + Sync,
    S: FnMut(T) -> Result<()>,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .context("building worker pool")?;
    let stop = AtomicBool::new(false);
    let (tx, rx) = mpsc::channel::<Result<T>>();
    std::thread::scope(|s| {
        let (f, stop) = (&f, &stop);
        s.spawn(move || {
            pool.install(|| {
                items.par_iter().for_each_with(tx, |tx, item| {
                    if !stop.load(Ordering::Relaxed) {
                        let _ = tx.send(f(item));
                    }
                })
            })
        });
        let mut first_err = None;
        for r in rx {
            let r = r.and_then(&mut sink);
            if let Err(e) = r {
                stop.store(true, Ordering::Relaxed);
                first_err.get_or_insert(e);
            }
        }
        first_err.map_or(Ok(()), Err)
    })
}

#[derive(Clone, Debug)]
pub struct SuiteReport {
    pub config_hash: String,
    pub new_records: usize,
    pub skipped: usize,
    pub summary: SummaryRow,
    pub summary_path: PathBuf,
}

fn summary_path(out: &Path, cfg: &ExperimentConfig, hash: &str) -> PathBuf {
    out.join(format!("summary-{}-{}-{}.json", cfg.model, cfg.dataset.operation, &hash[..12]))
}

/// Runs every seed not yet recorded for this config, then rewrites the
/// summary of the cell and `summary.csv` over all cells in `out`.
pub fn run_suite(cfg: &ExperimentConfig, seeds: &[u64], out: &Path, workers: usize, level: f64) -> Result<SuiteReport> {
    cfg.validate()?;
    std::fs::create_dir_all(out.join("configs")).with_context(|| format!("creating {}", out.display()))?;
    let hash = config_hash(cfg);
    std::fs::write(out.join("configs").join(format!("{hash}.json")), serde_json::to_string_pretty(cfg)?)?;

    let results = out.join(RESULTS_FILE);
    let done = completed(&read_records(&results)?);
    let mut pending: Vec<u64> = seeds.iter().copied().filter(|s| !done.contains(&(hash.clone(), *s))).collect();
    pending.dedup();
    let skipped = seeds.len() - pending.len();

    let mut writer = RecordWriter::open(&results)?;
    let mut new_records = 0;
    parallel_for_each(
        &pending,
        workers,
        |&seed| run_seed(cfg, seed).with_context(|| format!("seed {seed}")),
        |run| {
            writer.append(&ResultRecord::new(cfg, &hash, &run))?;
            new_records += 1;
            Ok(())
        },
    )?;

    let all = read_records(&results)?;
    let rows = summarize_records(&all, level)?;
    write_summary_csv(&rows, &out.join("summary.csv"))?;
    let summary = rows
        .into_iter()
        .find(|r| r.config_hash == hash)
        .ok_or_else(|| anyhow!("no records for config {hash}"))?;
    let path = summary_path(out, cfg, &hash);
    std::fs::write(&path, serde_json::to_string_pretty(&summary)?)?;
    Ok(SuiteReport {
        config_hash: hash,
        new_records,
        skipped,
        summary,
        summary_path: path,
    })
}

pub fn run_manifest(m: &Manifest) -> Result<SuiteReport> {
    run_suite(&m.config()?, &m.seeds(), &m.output(), m.workers(), m.confidence_level())
}

/// Extrapolation range paired with each sweep interpolation range.
pub const RANGE_PAIRS: [(&str, &str); 7] = [
    ("U[-2,2]", "U[-6,-2]∪U[2,6]"),
    ("U[-2,-1]", "U[-6,-2]"),
    ("U[0,1]", "U[1,5]"),
    ("U[0.1,0.2]", "U[0.2,2]"),
    ("U[1,2]", "U[2,6]"),
    ("U[1.1,1.2]", "U[1.2,6]"),
    ("U[10,20]", "U[20,40]"),
];

pub fn paired_extrapolation(interp: &Range) -> Option<Range> {
    RANGE_PAIRS.iter().find_map(|(i, e)| {
        let i: Range = i.parse().expect("table entry");
        (i == *interp).then(|| e.parse().expect("table entry"))
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum SweepParam {
    HiddenSize,
    InterpolationRange,
    Regularizer,
}

impl SweepParam {
    pub fn default_values(self) -> Vec<String> {
        let v: &[&str] = match self {
            SweepParam::HiddenSize => &["2", "3", "4", "6", "8", "12", "16"],
            SweepParam::InterpolationRange => &[
                "U[-2,2]",
                "U[-2,-1]",
                "U[0,1]",
                "U[0.1,0.2]",
                "U[1,2]",
                "U[1.1,1.2]",
                "U[10,20]",
            ],
            SweepParam::Regularizer => &["0.1", "1", "10", "100"],
        };
        v.iter().map(|s| s.to_string()).collect()
    }

    /// One manifest per grid point.
    pub fn expand(self, base: &Manifest, values: &[String]) -> Result<Vec<Manifest>> {
        values
            .iter()
            .map(|v| {
                let mut m = base.clone();
                match self {
                    SweepParam::HiddenSize => {
                        m.hidden_size = Some(v.parse().with_context(|| format!("hidden size '{v}'"))?)
                    }
                    SweepParam::Regularizer => m.regularizer = Some(v.parse().with_context(|| format!("regularizer '{v}'"))?),
                    SweepParam::InterpolationRange => {
                        let r: Range = v.parse()?;
                        let e = paired_extrapolation(&r)
                            .ok_or_else(|| anyhow!("no extrapolation range is paired with {r}"))?;
                        m.interpolation_range = Some(r);
                        m.extrapolation_range = Some(e);
                    }
                }
                m.config().with_context(|| format!("sweep value '{v}'"))?;
                Ok(m)
            })
            .collect()
    }
}
