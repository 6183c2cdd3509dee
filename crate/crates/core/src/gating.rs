//! Gate convergence of the gated last-layer models: NALU with shared or
//! separate sub-unit weights, and the gate between an NAU and an NMU.

use serde::{Deserialize, Serialize};

use crate::dataset::Operation;
use crate::error::{Error, Result};
use crate::evaluation::SeedOutcome;
use crate::experiment::{run_seed, ExperimentConfig, ModelPreset};

pub const GATING_PRESETS: [ModelPreset; 3] = [
    ModelPreset::GatedNauNmu,
    ModelPreset::NaluSeparate,
    ModelPreset::NaluShared,
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GateRecord {
    pub model: ModelPreset,
    pub op: Operation,
    /// Mean gate of the last layer over the validation set at the selected
    /// checkpoint; `None` if it is not finite.
    pub gate: Option<f64>,
    pub outcome: SeedOutcome,
}

/// Config for one gating cell: `base` with the model and operation replaced.
pub fn gating_config(base: &ExperimentConfig, model: ModelPreset, op: Operation) -> Result<ExperimentConfig> {
    if !GATING_PRESETS.contains(&model) {
        return Err(Error::InvalidConfig(format!("{model} has no gated last layer")));
    }
    if !matches!(op, Operation::Add | Operation::Mul) {
        return Err(Error::InvalidConfig(format!("gating is studied on add and mul, got {}", op.name())));
    }
    let mut cfg = base.clone();
    cfg.model = model;
    cfg.dataset.operation = op;
    cfg.validate()?;
    Ok(cfg)
}

pub fn run_gating_seed(base: &ExperimentConfig, model: ModelPreset, op: Operation, seed: u64) -> Result<GateRecord> {
    let cfg = gating_config(base, model, op)?;
    let run = run_seed(&cfg, seed)?;
    Ok(GateRecord {
        model,
        op,
        gate: run.trace.best().gate.filter(|g| g.is_finite()),
        outcome: run.outcome,
    })
}

/// Every gating preset on every seed, in preset-major order.
pub fn run_gating_study(op: Operation, seeds: &[u64], base: &ExperimentConfig) -> Result<Vec<GateRecord>> {
    let mut out = Vec::with_capacity(GATING_PRESETS.len() * seeds.len());
    for model in GATING_PRESETS {
        for &seed in seeds {
            out.push(run_gating_seed(base, model, op, seed)?);
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GateHistogram {
    /// `bins + 1` equally spaced edges over `[0, 1]`.
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
    /// Seeds without a finite gate value.
    pub missing: usize,
}

impl GateHistogram {
    pub fn total(&self) -> usize {
        self.counts.iter().sum::<usize>() + self.missing
    }
}

/// Equal-width bins over `[0, 1]`; the last bin is closed.
pub fn gate_histogram(gates: &[Option<f64>], bins: usize) -> Result<GateHistogram> {
    if bins == 0 {
        return Err(Error::InvalidInput("histogram needs at least one bin".into()));
    }
    let mut counts = vec![0; bins];
    let mut missing = 0;
    for g in gates {
        match g {
            Some(v) if (0.0..=1.0).contains(v) => {
                let i = ((v * bins as f64) as usize).min(bins - 1);
                counts[i] += 1;
            }
            Some(v) => return Err(Error::InvalidInput(format!("gate value {v} outside [0, 1]"))),
            None => missing += 1,
        }
    }
    let edges = (0..=bins).map(|i| i as f64 / bins as f64).collect();
    Ok(GateHistogram { edges, counts, missing })
}
