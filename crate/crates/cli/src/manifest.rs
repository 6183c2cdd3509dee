//! Flat TOML experiment manifests.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use nalu_core::dataset::{static10_config, DatasetConfig, Operation, Range};
use nalu_core::evaluation::DEFAULT_THRESHOLD_EPS;
use nalu_core::experiment::{ExperimentConfig, ModelPreset};
use nalu_core::initialization::NmuInit;
use nalu_core::optimizer::{AdamConfig, TrainConfig};

/// Either a count (`seeds = 10` means `0..10`) or an explicit list.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Seeds {
    Count(u64),
    List(Vec<u64>),
}

impl Seeds {
    pub fn to_vec(&self) -> Vec<u64> {
        match self {
            Seeds::Count(n) => (0..*n).collect(),
            Seeds::List(v) => v.clone(),
        }
    }
}

/// Every key is optional and falls back to the benchmark defaults.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub model: Option<ModelPreset>,
    pub operation: Option<Operation>,
    pub seeds: Option<Seeds>,
    /// Fixed four-input windows `(x1 + x2) ∘ (x1 + x2 + x3 + x4)`.
    pub static10: Option<bool>,
    pub hidden_size: Option<usize>,
    pub input_size: Option<usize>,
    pub subset_ratio: Option<f64>,
    pub overlap_ratio: Option<f64>,
    pub interpolation_range: Option<Range>,
    pub extrapolation_range: Option<Range>,
    pub batch_size: Option<usize>,
    pub validation_size: Option<usize>,
    pub test_size: Option<usize>,
    pub max_iterations: Option<u64>,
    pub eval_every: Option<u64>,
    pub early_stopping: Option<bool>,
    pub learning_rate: Option<f64>,
    pub beta1: Option<f64>,
    pub beta2: Option<f64>,
    pub adam_epsilon: Option<f64>,
    pub regularizer_scaling: Option<f64>,
    pub regularizer: Option<f64>,
    /// Variance of the NMU weight initialization; `U[0,1]` when absent.
    pub nmu_init_variance: Option<f64>,
    pub threshold_eps: Option<f64>,
    pub confidence_level: Option<f64>,
    pub workers: Option<usize>,
    pub output: Option<PathBuf>,
}

impl Manifest {
    pub fn parse(text: &str) -> Result<Self> {
        let m: Manifest = toml::from_str(text).map_err(|e| anyhow::anyhow!("malformed manifest: {e}"))?;
        m.config()?;
        Ok(m)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading manifest {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("in manifest {}", path.display()))
    }

    /// Keys set in `other` replace those of `self`.
    pub fn overlay(&self, other: &Manifest) -> Manifest {
        let a = serde_json::to_value(self).expect("manifest serializes");
        let b = serde_json::to_value(other).expect("manifest serializes");
        let mut out = a.as_object().cloned().unwrap_or_default();
        for (k, v) in b.as_object().into_iter().flatten() {
            if !v.is_null() {
                out.insert(k.clone(), v.clone());
            }
        }
        serde_json::from_value(serde_json::Value::Object(out)).expect("merged manifest deserializes")
    }

    pub fn seeds(&self) -> Vec<u64> {
        self.seeds.clone().unwrap_or(Seeds::Count(1)).to_vec()
    }

    pub fn workers(&self) -> usize {
        self.workers.unwrap_or(1).max(1)
    }

    pub fn output(&self) -> PathBuf {
        self.output.clone().unwrap_or_else(|| PathBuf::from("results"))
    }

    pub fn confidence_level(&self) -> f64 {
        self.confidence_level.unwrap_or(0.95)
    }

    pub fn config(&self) -> Result<ExperimentConfig> {
        let static10 = self.static10.unwrap_or(false);
        let base = if static10 { static10_config() } else { DatasetConfig::default() };
        let dataset = DatasetConfig {
            input_size: self.input_size.unwrap_or(base.input_size),
            subset_ratio: self.subset_ratio.unwrap_or(base.subset_ratio),
            overlap_ratio: self.overlap_ratio.unwrap_or(base.overlap_ratio),
            interpolation_range: self.interpolation_range.clone().unwrap_or(base.interpolation_range),
            extrapolation_range: self.extrapolation_range.clone().unwrap_or(base.extrapolation_range),
            operation: self.operation.unwrap_or(base.operation),
            batch_size: self.batch_size.unwrap_or(base.batch_size),
            validation_size: self.validation_size.unwrap_or(base.validation_size),
            test_size: self.test_size.unwrap_or(base.test_size),
        };
        let t = TrainConfig::default();
        let a = AdamConfig::default();
        let train = TrainConfig {
            max_iterations: self.max_iterations.unwrap_or(t.max_iterations),
            eval_every: self.eval_every.unwrap_or(t.eval_every),
            early_stopping: self.early_stopping.unwrap_or(t.early_stopping),
            adam: AdamConfig {
                learning_rate: self.learning_rate.unwrap_or(a.learning_rate),
                beta1: self.beta1.unwrap_or(a.beta1),
                beta2: self.beta2.unwrap_or(a.beta2),
                epsilon: self.adam_epsilon.unwrap_or(a.epsilon),
            },
        };
        let nmu_init = match self.nmu_init_variance {
            Some(v) => NmuInit::Variance(v),
            None => NmuInit::Uniform,
        };
        let cfg = ExperimentConfig {
            model: self.model.unwrap_or(ModelPreset::Nmu),
            hidden: self.hidden_size.unwrap_or(2),
            dataset,
            static10,
            train,
            schedule_scale: self.regularizer_scaling,
            lambda_hat: self.regularizer,
            nmu_init,
            threshold_eps: self.threshold_eps.unwrap_or(DEFAULT_THRESHOLD_EPS),
        };
        cfg.validate().context("invalid experiment settings")?;
        let level = self.confidence_level();
        if !(level > 0.0 && level < 1.0) {
            bail!("confidence_level must be in (0, 1), got {level}");
        }
        if let Some(Seeds::List(v)) = &self.seeds {
            if v.is_empty() {
                bail!("seeds list is empty");
            }
        }
        Ok(cfg)
    }
}
