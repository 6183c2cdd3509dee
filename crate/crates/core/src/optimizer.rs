//! Adam and the training loop.

use serde::{Deserialize, Serialize};

use crate::dataset::Task;
use crate::error::{Error, Result};
use crate::evaluation::sparsity_error;
use crate::model::{mse, Model};
use crate::numerics::{Matrix, RngStream};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate > 0.0
            && self.beta1 > 0.0
            && self.beta1 < 1.0
            && self.beta2 > 0.0
            && self.beta2 < 1.0
            && self.epsilon > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("invalid Adam settings {self:?}")))
        }
    }
}

/// First and second moment estimates for one parameter matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Moments {
    pub m: Matrix,
    pub v: Matrix,
}

impl Moments {
    pub fn zeros_like(p: &Matrix) -> Self {
        Self {
            m: Matrix::zeros(p.rows(), p.cols()),
            v: Matrix::zeros(p.rows(), p.cols()),
        }
    }
}

/// One bias-corrected Adam update at step `t ≥ 1`.
pub fn adam_step(param: &mut Matrix, grad: &Matrix, moments: &mut Moments, t: u64, cfg: &AdamConfig) {
    let c1 = 1.0 - cfg.beta1.powf(t as f64);
    let c2 = 1.0 - cfg.beta2.powf(t as f64);
    let m = moments.m.data_mut();
    let v = moments.v.data_mut();
    for (((p, &g), mi), vi) in param.data_mut().iter_mut().zip(grad.data()).zip(m).zip(v) {
        *mi = cfg.beta1 * *mi + (1.0 - cfg.beta1) * g;
        *vi = cfg.beta2 * *vi + (1.0 - cfg.beta2) * g * g;
        let m_hat = *mi / c1;
        let v_hat = *vi / c2;
        *p -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
    }
}

/// Adam over every non-frozen parameter of a model.
#[derive(Clone, Debug)]
pub struct Adam {
    cfg: AdamConfig,
    moments: Vec<Vec<Moments>>,
    t: u64,
}

impl Adam {
    pub fn new(model: &Model, cfg: AdamConfig) -> Self {
        let moments = model
            .layers()
            .iter()
            .map(|l| l.unit.params().iter().map(|p| Moments::zeros_like(&p.value)).collect())
            .collect();
        Self { cfg, moments, t: 0 }
    }

    pub fn step(&mut self, model: &mut Model, grads: &[Vec<Matrix>]) {
        self.t += 1;
        for ((layer, lg), lm) in model.layers_mut().iter_mut().zip(grads).zip(&mut self.moments) {
            for ((p, g), m) in layer.unit.params_mut().iter_mut().zip(lg).zip(lm) {
                if !p.frozen {
                    adam_step(&mut p.value, g, m, self.t, &self.cfg);
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub max_iterations: u64,
    pub adam: AdamConfig,
    pub eval_every: u64,
    /// Select the checkpoint with the lowest validation MSE as the result.
    pub early_stopping: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            max_iterations: 100_000,
            adam: AdamConfig::default(),
            eval_every: 1000,
            early_stopping: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.eval_every == 0 {
            return Err(Error::InvalidConfig("eval_every must be positive".into()));
        }
        self.adam.validate()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub iteration: u64,
    /// MSE of the most recent training batch, absent at iteration 0.
    pub train_mse: Option<f64>,
    pub interpolation_mse: f64,
    pub extrapolation_mse: f64,
    pub sparsity_error: f64,
    /// Mean gate of a gated last layer over the validation set.
    pub gate: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    pub records: Vec<EvalRecord>,
    pub final_model: Model,
    pub best_model: Model,
    /// Index into `records` of the selected checkpoint.
    pub best_index: usize,
    pub diverged: bool,
    pub iterations_run: u64,
}

impl TrainTrace {
    pub fn best(&self) -> &EvalRecord {
        &self.records[self.best_index]
    }

    pub fn last(&self) -> &EvalRecord {
        self.records.last().expect("initial snapshot is always recorded")
    }
}

fn evaluate(model: &Model, task: &Task, iteration: u64, train_mse: Option<f64>) -> Result<EvalRecord> {
    let (vx, vt) = &task.validation;
    let (tx, tt) = &task.test;
    let (vp, vcaches) = model.forward(vx)?;
    let gate = match model.layers().last() {
        Some(l) if l.unit.kind().is_gated() => vcaches.last().and_then(|c| c.gate()).map(Matrix::mean),
        _ => None,
    };
    Ok(EvalRecord {
        iteration,
        train_mse,
        interpolation_mse: mse(&vp, vt)?,
        extrapolation_mse: model.mse_on(tx, tt)?,
        sparsity_error: sparsity_error(&model.arithmetic_weights()),
        gate,
    })
}

/// Each iteration: sample a batch from the interpolation range, compute the
/// regularized loss, take an Adam step, clamp. Snapshots are taken at 0, every
/// `eval_every` iterations, and at the end. A non-finite loss ends the run.
pub fn train(mut model: Model, task: &Task, cfg: &TrainConfig, rng: &RngStream) -> Result<TrainTrace> {
    cfg.validate()?;
    let mut batch_rng = rng.derive("train");
    let mut adam = Adam::new(&model, cfg.adam);
    let mut records = vec![evaluate(&model, task, 0, None)?];
    let mut best_index = 0;
    let mut best_model = model.clone();
    let mut diverged = false;
    let mut iterations_run = 0;

    let is_better = |r: &EvalRecord, best: &EvalRecord| {
        r.interpolation_mse.is_finite() && !(best.interpolation_mse <= r.interpolation_mse)
    };

    for t in 0..cfg.max_iterations {
        let (x, y) = task.train_batch(&mut batch_rng);
        let (loss, grads) = model.loss_and_grad(&x, &y, t)?;
        let grads_finite = grads.iter().flatten().all(Matrix::all_finite);
        if !loss.total.is_finite() || !grads_finite {
            diverged = true;
            break;
        }
        adam.step(&mut model, &grads);
        model.clamp_weights();
        iterations_run = t + 1;
        if iterations_run % cfg.eval_every == 0 || iterations_run == cfg.max_iterations {
            let rec = evaluate(&model, task, iterations_run, Some(loss.mse))?;
            if is_better(&rec, &records[best_index]) {
                best_index = records.len();
                best_model = model.clone();
            }
            records.push(rec);
        }
    }
    if !cfg.early_stopping {
        best_index = records.len() - 1;
        best_model = model.clone();
    }
    Ok(TrainTrace {
        records,
        final_model: model,
        best_model,
        best_index,
        diverged,
        iterations_run,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_parameter() {
        let mut p = Matrix::from_rows(&[[0.3, -1.2]]);
        let before = p.clone();
        let mut m = Moments::zeros_like(&p);
        for t in 1..5 {
            adam_step(&mut p, &Matrix::zeros(1, 2), &mut m, t, &AdamConfig::default());
        }
        assert_eq!(p, before);
    }

    #[test]
    fn first_step_has_learning_rate_magnitude() {
        let cfg = AdamConfig::default();
        let mut p = Matrix::from_rows(&[[0.0, 0.0, 0.0]]);
        let g = Matrix::from_rows(&[[3.0, -0.02, 1e-3]]);
        let mut m = Moments::zeros_like(&p);
        adam_step(&mut p, &g, &mut m, 1, &cfg);
        for (pi, gi) in p.data().iter().zip(g.data()) {
            let want = -cfg.learning_rate * gi / (gi.abs() + cfg.epsilon);
            assert!((pi - want).abs() < 1e-15);
        }
    }

    #[test]
    fn constant_gradient_steps_approach_learning_rate() {
        let cfg = AdamConfig::default();
        let mut p = Matrix::from_rows(&[[0.0]]);
        let g = Matrix::from_rows(&[[-0.7]]);
        let mut m = Moments::zeros_like(&p);
        let mut last = 0.0;
        for t in 1..=5000 {
            let before = p.get(0, 0);
            adam_step(&mut p, &g, &mut m, t, &cfg);
            last = p.get(0, 0) - before;
        }
        assert!((last - cfg.learning_rate).abs() < 1e-8);
    }
}
