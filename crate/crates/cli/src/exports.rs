//! CSV exports for the analysis subcommands.

use std::io::Write;

use anyhow::Result;
use serde::Serialize;

use nalu_core::analysis::{
    loss_landscape_grid, mc_moments, mc_weight_construction, nacmul_expectation_closed, nacmul_variance_closed,
    nmu_moments_closed, InputDistribution, WeightDistribution,
};
use nalu_core::dataset::Operation;
use nalu_core::experiment::{ExperimentConfig, ModelPreset};
use nalu_core::gating::{gate_histogram, run_gating_seed, GateHistogram, GateRecord, GATING_PRESETS};
use nalu_core::initialization::nac_weight_variance;
use nalu_core::units::UnitKind;
use nalu_core::RngStream;

use crate::runner::parallel_for_each;

pub fn write_csv<T: Serialize, W: Write>(rows: &[T], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Monte-Carlo moments next to their closed forms.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MomentRow {
    pub quantity: String,
    pub setting: String,
    pub samples: usize,
    pub overflow: usize,
    pub mc_mean: f64,
    pub mc_mean_se: f64,
    pub closed_mean: f64,
    pub mc_variance: f64,
    pub mc_variance_se: f64,
    pub closed_variance: f64,
}

pub fn nmu_moment_rows(hs: &[usize], samples: usize, seed: u64) -> Result<Vec<MomentRow>> {
    let mut rng = RngStream::new(seed);
    hs.iter()
        .map(|&h| {
            let est = mc_moments(
                UnitKind::Nmu,
                h,
                InputDistribution::Normal { mean: 0.0, sd: 1.0 },
                WeightDistribution::Uniform { lo: 0.0, hi: 1.0 },
                samples,
                &mut rng,
            )?;
            let closed = nmu_moments_closed(1.0 / 12.0, 1.0, h, 1);
            Ok(MomentRow {
                quantity: "nmu".into(),
                setting: format!("H={h}"),
                samples: est.samples,
                overflow: est.overflow,
                mc_mean: est.mean,
                mc_mean_se: est.mean_se,
                closed_mean: closed.expectation,
                mc_variance: est.variance,
                mc_variance_se: est.variance_se,
                closed_variance: closed.forward_variance,
            })
        })
        .collect()
}

pub fn weight_moment_rows(rs: &[f64], samples: usize, seed: u64) -> Result<Vec<MomentRow>> {
    let mut rng = RngStream::new(seed);
    rs.iter()
        .map(|&r| {
            let est = mc_weight_construction(r, samples, &mut rng)?;
            Ok(MomentRow {
                quantity: "nac-weight".into(),
                setting: format!("r={r}"),
                samples: est.samples,
                overflow: est.overflow,
                mc_mean: est.mean,
                mc_mean_se: est.mean_se,
                closed_mean: 0.0,
                mc_variance: est.variance,
                mc_variance_se: est.variance_se,
                closed_variance: nac_weight_variance(r),
            })
        })
        .collect()
}

/// Exp-log layer with `W_hat, M_hat ~ U[-r, r]` and inputs `N(e_z, sd_z²)`.
pub fn nacmul_moment_rows(rs: &[f64], e_z: f64, sd_z: f64, h: usize, samples: usize, seed: u64) -> Result<Vec<MomentRow>> {
    let mut rng = RngStream::new(seed);
    let eps = nalu_core::units::UnitConfig::default().epsilon;
    rs.iter()
        .map(|&r| {
            let est = mc_moments(
                UnitKind::NacMul,
                h,
                InputDistribution::Normal { mean: e_z, sd: sd_z },
                WeightDistribution::NacUniform { r },
                samples,
                &mut rng,
            )?;
            let var_w = nac_weight_variance(r);
            Ok(MomentRow {
                quantity: "nac-mul".into(),
                setting: format!("r={r} e_z={e_z} H={h}"),
                samples: est.samples,
                overflow: est.overflow,
                mc_mean: est.mean,
                mc_mean_se: est.mean_se,
                closed_mean: nacmul_expectation_closed(var_w, e_z, eps, h),
                mc_variance: est.variance,
                mc_variance_se: est.variance_se,
                closed_variance: nacmul_variance_closed(var_w, e_z, eps, h),
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LandscapeRow {
    pub eps: f64,
    pub w1: f64,
    pub w2: f64,
    pub loss: f64,
}

pub fn landscape_rows(eps: &[f64], lo: f64, hi: f64, resolution: usize) -> Result<Vec<LandscapeRow>> {
    let mut rows = Vec::new();
    for &e in eps {
        let g = loss_landscape_grid(e, (lo, hi), (lo, hi), resolution)?;
        rows.extend(g.cells().map(|(w1, w2, loss)| LandscapeRow { eps: e, w1, w2, loss }));
    }
    Ok(rows)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GateRow {
    pub model: ModelPreset,
    pub op: Operation,
    pub seed: u64,
    pub gate: Option<f64>,
    pub success: bool,
    pub diverged: bool,
    pub solved_at: Option<u64>,
    pub final_extrap_mse: f64,
}

impl From<&GateRecord> for GateRow {
    fn from(r: &GateRecord) -> Self {
        Self {
            model: r.model,
            op: r.op,
            seed: r.outcome.seed,
            gate: r.gate,
            success: r.outcome.success,
            diverged: r.outcome.diverged,
            solved_at: r.outcome.solved_at,
            final_extrap_mse: r.outcome.final_extrap_mse,
        }
    }
}

/// All gating presets on all seeds, sorted by preset then seed.
pub fn gating_rows(base: &ExperimentConfig, op: Operation, seeds: &[u64], workers: usize) -> Result<Vec<GateRow>> {
    let jobs: Vec<(ModelPreset, u64)> = GATING_PRESETS
        .iter()
        .flat_map(|&m| seeds.iter().map(move |&s| (m, s)))
        .collect();
    let mut rows = Vec::with_capacity(jobs.len());
    parallel_for_each(&jobs, workers, |&(m, s)| Ok(run_gating_seed(base, m, op, s)?), |r| {
        rows.push(GateRow::from(&r));
        Ok(())
    })?;
    let order = |m: ModelPreset| GATING_PRESETS.iter().position(|&p| p == m);
    rows.sort_by_key(|r| (order(r.model), r.seed));
    Ok(rows)
}

pub fn gate_histograms(rows: &[GateRow], bins: usize) -> Result<Vec<(ModelPreset, GateHistogram)>> {
    GATING_PRESETS
        .iter()
        .map(|&m| {
            let gates: Vec<Option<f64>> = rows.iter().filter(|r| r.model == m).map(|r| r.gate).collect();
            Ok((m, gate_histogram(&gates, bins)?))
        })
        .collect()
}
