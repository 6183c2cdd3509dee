//! Named two-layer model presets and the per-seed experiment runner.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::dataset::{DatasetConfig, Task};
use crate::error::{Error, Result};
use crate::evaluation::{judge_seed, success_threshold, SeedOutcome, DEFAULT_THRESHOLD_EPS};
use crate::initialization::{InitOptions, NmuInit};
use crate::model::{LayerSpec, Model, ModelSpec};
use crate::numerics::RngStream;
use crate::optimizer::{train, TrainConfig, TrainTrace};
use crate::regularization::SparsitySchedule;
use crate::units::{UnitConfig, UnitKind};

/// Iteration budget the reference regularizer schedules are written for.
pub const FULL_SCALE_ITERATIONS: u64 = 5_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelPreset {
    /// NAU then NMU.
    Nmu,
    /// Two NAU layers.
    Nau,
    /// NAC+ then NAC•.
    NacMul,
    NacMulSigma,
    NacMulNmu,
    NacAdd,
    /// Two NALU layers with shared weights.
    Nalu,
    Linear,
    Relu,
    Relu6,
    /// NAC+ then a gate between NAU and NMU.
    GatedNauNmu,
    /// NAC+ then a NALU with separate sub-unit weights.
    NaluSeparate,
    /// NAC+ then a NALU with shared sub-unit weights.
    NaluShared,
}

impl ModelPreset {
    pub const ALL: [ModelPreset; 13] = [
        ModelPreset::Nmu,
        ModelPreset::Nau,
        ModelPreset::NacMul,
        ModelPreset::NacMulSigma,
        ModelPreset::NacMulNmu,
        ModelPreset::NacAdd,
        ModelPreset::Nalu,
        ModelPreset::Linear,
        ModelPreset::Relu,
        ModelPreset::Relu6,
        ModelPreset::GatedNauNmu,
        ModelPreset::NaluSeparate,
        ModelPreset::NaluShared,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelPreset::Nmu => "nmu",
            ModelPreset::Nau => "nau",
            ModelPreset::NacMul => "nac-mul",
            ModelPreset::NacMulSigma => "nac-mul-sigma",
            ModelPreset::NacMulNmu => "nac-mul-nmu",
            ModelPreset::NacAdd => "nac-add",
            ModelPreset::Nalu => "nalu",
            ModelPreset::Linear => "linear",
            ModelPreset::Relu => "relu",
            ModelPreset::Relu6 => "relu6",
            ModelPreset::GatedNauNmu => "gated-nau-nmu",
            ModelPreset::NaluSeparate => "nalu-separate",
            ModelPreset::NaluShared => "nalu-shared",
        }
    }

    pub fn layer_kinds(self) -> (UnitKind, UnitKind) {
        use UnitKind as K;
        match self {
            ModelPreset::Nmu => (K::Nau, K::Nmu),
            ModelPreset::Nau => (K::Nau, K::Nau),
            ModelPreset::NacMul => (K::NacAdd, K::NacMul),
            ModelPreset::NacMulSigma => (K::NacAdd, K::NacMulSigma),
            ModelPreset::NacMulNmu => (K::NacAdd, K::NacMulNmu),
            ModelPreset::NacAdd => (K::NacAdd, K::NacAdd),
            ModelPreset::Nalu => (K::Nalu, K::Nalu),
            ModelPreset::Linear => (K::Linear, K::Linear),
            ModelPreset::Relu => (K::Relu, K::Relu),
            ModelPreset::Relu6 => (K::Relu6, K::Relu6),
            ModelPreset::GatedNauNmu => (K::NacAdd, K::GatedNauNmu),
            ModelPreset::NaluSeparate | ModelPreset::NaluShared => (K::NacAdd, K::Nalu),
        }
    }

    /// Sparsity schedule at the full-scale budget, for presets that use one.
    pub fn reference_schedule(self) -> Option<SparsitySchedule> {
        match self {
            ModelPreset::Nmu | ModelPreset::NacMulNmu | ModelPreset::GatedNauNmu => Some(SparsitySchedule {
                lambda_hat: 10.0,
                lambda_start: 1e6,
                lambda_end: 2e6,
            }),
            ModelPreset::Nau => Some(SparsitySchedule {
                lambda_hat: 0.01,
                lambda_start: 5e3,
                lambda_end: 5e4,
            }),
            _ => None,
        }
    }

    /// Builds the model description; `schedule_scale` multiplies the
    /// regularizer ramp points and `lambda_hat` overrides the strength.
    pub fn spec(
        self,
        input_size: usize,
        hidden: usize,
        schedule_scale: f64,
        lambda_hat: Option<f64>,
        init: InitOptions,
    ) -> ModelSpec {
        let (k1, k2) = self.layer_kinds();
        let layer = |kind: UnitKind| {
            let mut ls = LayerSpec::new(kind);
            if kind == UnitKind::Nalu {
                ls.config = UnitConfig {
                    nalu_shared_weights: self != ModelPreset::NaluSeparate,
                    ..UnitConfig::default()
                };
            }
            let regularized = matches!(kind, UnitKind::Nau | UnitKind::Nmu | UnitKind::NacMulNmu | UnitKind::GatedNauNmu);
            if let (true, Some(mut s)) = (regularized, self.reference_schedule()) {
                if let Some(l) = lambda_hat {
                    s.lambda_hat = l;
                }
                ls = ls.with_sparsity(s.scaled(schedule_scale));
            }
            ls
        };
        ModelSpec {
            input_size,
            hidden,
            layer1: layer(k1),
            layer2: layer(k2),
            init,
        }
    }
}

impl std::fmt::Display for ModelPreset {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for ModelPreset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelPreset::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidInput(format!("unknown model '{s}'")))
    }
}

/// Everything that determines a run apart from its seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub model: ModelPreset,
    pub hidden: usize,
    pub dataset: DatasetConfig,
    /// Use the fixed four-input windows instead of drawing them per seed.
    pub static10: bool,
    pub train: TrainConfig,
    /// Multiplier on the regularizer ramp; `None` scales by
    /// `max_iterations / FULL_SCALE_ITERATIONS`.
    pub schedule_scale: Option<f64>,
    pub lambda_hat: Option<f64>,
    pub nmu_init: NmuInit,
    pub threshold_eps: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            model: ModelPreset::Nmu,
            hidden: 2,
            dataset: DatasetConfig::default(),
            static10: false,
            train: TrainConfig::default(),
            schedule_scale: None,
            lambda_hat: None,
            nmu_init: NmuInit::default(),
            threshold_eps: DEFAULT_THRESHOLD_EPS,
        }
    }
}

impl ExperimentConfig {
    /// The fixed `(x1 + x2)(x1 + x2 + x3 + x4)` task.
    pub fn static10(model: ModelPreset, max_iterations: u64) -> Self {
        Self {
            model,
            dataset: crate::dataset::static10_config(),
            static10: true,
            train: TrainConfig {
                max_iterations,
                ..TrainConfig::default()
            },
            ..Self::default()
        }
    }

    pub fn effective_schedule_scale(&self) -> f64 {
        self.schedule_scale
            .unwrap_or(self.train.max_iterations as f64 / FULL_SCALE_ITERATIONS as f64)
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 {
            return Err(Error::InvalidConfig("hidden size must be positive".into()));
        }
        if !(self.threshold_eps >= 0.0) {
            return Err(Error::InvalidConfig("threshold_eps must be non-negative".into()));
        }
        if self.static10 && self.dataset.input_size != 4 {
            return Err(Error::InvalidConfig("the fixed-window task has exactly 4 inputs".into()));
        }
        self.dataset.validate()?;
        self.train.validate()
    }

    pub fn model_spec(&self) -> ModelSpec {
        self.model.spec(
            self.dataset.input_size,
            self.hidden,
            self.effective_schedule_scale(),
            self.lambda_hat,
            InitOptions { nmu: self.nmu_init },
        )
    }

    pub fn task(&self, rng: &RngStream) -> Result<Task> {
        if self.static10 {
            Task::with_subsets(self.dataset.clone(), crate::dataset::STATIC10_SUBSETS, rng)
        } else {
            Task::new(self.dataset.clone(), rng)
        }
    }
}

#[derive(Clone, Debug)]
pub struct SeedRun {
    pub outcome: SeedOutcome,
    pub threshold: f64,
    pub trace: TrainTrace,
    pub wall_seconds: f64,
}

/// Builds the task and model for `seed`, trains, and judges the result.
pub fn run_seed(cfg: &ExperimentConfig, seed: u64) -> Result<SeedRun> {
    cfg.validate()?;
    let started = Instant::now();
    let rng = RngStream::new(seed);
    let task = cfg.task(&rng.derive("task"))?;
    let threshold = success_threshold(&task, cfg.threshold_eps)?;
    let model = Model::from_spec(&cfg.model_spec(), &rng)?;
    let trace = train(model, &task, &cfg.train, &rng)?;
    let outcome = judge_seed(seed, &trace, threshold);
    Ok(SeedRun {
        outcome,
        threshold,
        trace,
        wall_seconds: started.elapsed().as_secs_f64(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preset_names_round_trip() {
        for m in ModelPreset::ALL {
            assert_eq!(m.name().parse::<ModelPreset>().unwrap(), m);
        }
        assert!("nope".parse::<ModelPreset>().is_err());
    }

    #[test]
    fn schedules_follow_presets_and_scale() {
        let spec = ModelPreset::Nmu.spec(100, 2, 0.02, None, InitOptions::default());
        assert_eq!((spec.layer1.kind, spec.layer2.kind), (UnitKind::Nau, UnitKind::Nmu));
        // the NAU layer of the NMU model carries the same schedule as the NMU
        let s = spec.layer2.sparsity.unwrap();
        assert_eq!((s.lambda_hat, s.lambda_start, s.lambda_end), (10.0, 2e4, 4e4));
        assert_eq!(spec.layer1.sparsity, spec.layer2.sparsity);
        let nac = ModelPreset::NacMul.spec(100, 2, 0.02, None, InitOptions::default());
        assert!(nac.layer1.sparsity.is_none() && nac.layer2.sparsity.is_none());
        let sep = ModelPreset::NaluSeparate.spec(100, 2, 1.0, None, InitOptions::default());
        assert!(!sep.layer2.config.nalu_shared_weights);
        let nau = ModelPreset::Nau.spec(100, 2, 1.0, Some(0.5), InitOptions::default());
        assert_eq!(nau.layer1.sparsity.unwrap().lambda_hat, 0.5);
    }

    #[test]
    fn desk_scale_default() {
        let cfg = ExperimentConfig::static10(ModelPreset::Nmu, 100_000);
        assert!((cfg.effective_schedule_scale() - 0.02).abs() < 1e-15);
        cfg.validate().unwrap();
    }

    #[test]
    fn zero_iterations_records_only_the_initial_snapshot() {
        let cfg = ExperimentConfig::static10(ModelPreset::Nmu, 0);
        let run = run_seed(&cfg, 3).unwrap();
        assert_eq!(run.trace.records.len(), 1);
        assert_eq!(run.trace.records[0].iteration, 0);
    }

    #[test]
    fn replay_is_bitwise_identical() {
        let mut cfg = ExperimentConfig::static10(ModelPreset::Nmu, 2000);
        cfg.train.eval_every = 500;
        let a = run_seed(&cfg, 9).unwrap();
        let b = run_seed(&cfg, 9).unwrap();
        assert_eq!(a.trace.records, b.trace.records);
        assert_eq!(a.trace.final_model, b.trace.final_model);
        assert_eq!(a.outcome, b.outcome);
    }
}
