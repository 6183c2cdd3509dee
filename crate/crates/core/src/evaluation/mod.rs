//! Success judgment, sparsity error, confidence intervals and multi-seed
//! summaries.

mod profile;

pub use profile::{beta_mean_interval, chi2_cutoff, gamma_mean_interval, ProfileInterval, BETA_BOUNDARY_NUDGE};

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::dataset::{nearly_perfect_weights, Task};
use crate::error::{Error, Result};
use crate::numerics::Matrix;
use crate::optimizer::TrainTrace;

/// `ε` of the nearly-perfect reference solution.
pub const DEFAULT_THRESHOLD_EPS: f64 = 1e-5;

/// Largest distance of any weight to the nearest of `{-1, 0, 1}`, measured as
/// `min(|w|, |1 - |w||)`. Zero for an empty list.
pub fn sparsity_error(weights: &[Matrix]) -> f64 {
    weights
        .iter()
        .flat_map(|m| m.data().iter())
        .map(|w| w.abs().min((1.0 - w.abs()).abs()))
        .fold(0.0, f64::max)
}

/// Extrapolation MSE of the ε-perturbed exact solution on the task's test set.
pub fn success_threshold(task: &Task, eps: f64) -> Result<f64> {
    // the reference second layer is exact, so it reduces to the operation itself
    let (w1, _) = nearly_perfect_weights(&task.config, &task.subsets, eps);
    let (x, y) = &task.test;
    let h = x.matmul_t(&w1)?;
    let op = task.config.operation;
    let n = y.len();
    if n == 0 {
        return Err(Error::InvalidInput("empty test set".into()));
    }
    let sse: f64 = (0..n)
        .map(|r| {
            let d = op.apply(h.get(r, 0), h.get(r, 1)) - y[r];
            d * d
        })
        .sum();
    Ok(sse / n as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedOutcome {
    pub seed: u64,
    pub success: bool,
    pub solved_at: Option<u64>,
    /// Only reported for successful seeds.
    pub sparsity_error: Option<f64>,
    pub diverged: bool,
    pub final_interp_mse: f64,
    pub final_extrap_mse: f64,
}

/// Success is judged on the selected checkpoint; `solved_at` is the first
/// snapshot whose extrapolation MSE is below `threshold`.
pub fn judge_seed(seed: u64, trace: &TrainTrace, threshold: f64) -> SeedOutcome {
    let best = trace.best();
    let success = !trace.diverged && best.extrapolation_mse < threshold;
    let solved_at = if success {
        trace
            .records
            .iter()
            .find(|r| r.extrapolation_mse < threshold)
            .map(|r| r.iteration)
    } else {
        None
    };
    SeedOutcome {
        seed,
        success,
        solved_at,
        sparsity_error: success.then_some(best.sparsity_error),
        diverged: trace.diverged,
        final_interp_mse: best.interpolation_mse,
        final_extrap_mse: best.extrapolation_mse,
    }
}

fn two_sided_z(level: f64) -> f64 {
    Normal::new(0.0, 1.0).expect("standard normal").inverse_cdf(1.0 - (1.0 - level) / 2.0)
}

/// Wilson score interval for a binomial proportion.
pub fn wilson_interval(successes: u64, trials: u64, level: f64) -> Result<(f64, f64)> {
    if trials == 0 || successes > trials {
        return Err(Error::InvalidInput(format!("need 0 ≤ successes ≤ trials, trials ≥ 1; got {successes}/{trials}")));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidInput(format!("confidence level must be in (0, 1), got {level}")));
    }
    let n = trials as f64;
    let p = successes as f64 / n;
    let z = two_sided_z(level);
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = z / denom * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt();
    Ok(((center - half).max(0.0), (center + half).min(1.0)))
}

/// Whole-percent rendering such as `94% +3% −6%`.
pub fn format_rate(rate: f64, lower: f64, upper: f64) -> String {
    let pct = |v: f64| (100.0 * v).round() as i64;
    format!(
        "{}% +{}% \u{2212}{}%",
        pct(rate),
        pct(upper - rate),
        pct(rate - lower)
    )
}

/// A mean with its interval; `interval` is `None` when the fit is degenerate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanEstimate {
    pub mean: f64,
    pub interval: Option<(f64, f64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub trials: usize,
    pub successes: usize,
    pub diverged: usize,
    pub success_rate: f64,
    pub success_interval: (f64, f64),
    pub solved_at_median: Option<f64>,
    pub solved_at_mean: Option<MeanEstimate>,
    pub sparsity_mean: Option<MeanEstimate>,
}

impl Summary {
    pub fn success_text(&self) -> String {
        format_rate(self.success_rate, self.success_interval.0, self.success_interval.1)
    }
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[m] } else { 0.5 * (v[m - 1] + v[m]) })
}

fn sample_mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn summarize(outcomes: &[SeedOutcome], level: f64) -> Result<Summary> {
    if outcomes.is_empty() {
        return Err(Error::InvalidInput("cannot summarize zero outcomes".into()));
    }
    let trials = outcomes.len();
    let successes = outcomes.iter().filter(|o| o.success).count();
    let success_interval = wilson_interval(successes as u64, trials as u64, level)?;

    let solved: Vec<f64> = outcomes.iter().filter_map(|o| o.solved_at).map(|t| t as f64).collect();
    let sparsity: Vec<f64> = outcomes
        .iter()
        .filter(|o| o.success)
        .filter_map(|o| o.sparsity_error)
        .collect();

    let solved_at_mean = (!solved.is_empty()).then(|| MeanEstimate {
        mean: sample_mean(&solved),
        interval: gamma_mean_interval(&solved, level).ok().map(|ci| (ci.lower, ci.upper)),
    });
    let sparsity_mean = (!sparsity.is_empty()).then(|| match beta_mean_interval(&sparsity, level) {
        Ok(ci) => MeanEstimate {
            mean: ci.estimate,
            interval: Some((ci.lower, ci.upper)),
        },
        Err(_) => MeanEstimate {
            mean: sample_mean(&sparsity),
            interval: None,
        },
    });

    Ok(Summary {
        trials,
        successes,
        diverged: outcomes.iter().filter(|o| o.diverged).count(),
        success_rate: successes as f64 / trials as f64,
        success_interval,
        solved_at_median: median(&solved),
        solved_at_mean,
        sparsity_mean,
    })
}
