//! Recurrent arithmetic over digit sequences. Each digit is shown as a noisy
//! one-hot glyph, a linear encoder maps it to a scalar, and a two-input cell
//! folds the scalars with `state_i = cell([state_{i-1}, z_i])`. Training uses
//! short sequences; extrapolation is scored on the last state of long ones.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::dataset::{gen_sequence_batch, Operation};
use crate::error::{Error, Result};
use crate::initialization::{init_unit, InitOptions};
use crate::model::{recurrent_apply, recurrent_backward};
use crate::numerics::{Matrix, RngStream};
use crate::optimizer::{adam_step, AdamConfig, Moments};
use crate::regularization::{rz_penalty_and_grad, sparsity_penalty_and_grad, RzVariant, SparsitySchedule};
use crate::units::{ForwardCache, Unit, UnitConfig, UnitKind};

pub const GLYPH_DIM: usize = 10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SequenceConfig {
    pub op: Operation,
    pub cell: UnitKind,
    /// Inclusive digit range.
    pub digits: (u32, u32),
    /// Standard deviation of the Gaussian noise added to every glyph pixel.
    pub glyph_noise: f64,
    pub train_length: usize,
    pub test_length: usize,
    pub batch_size: usize,
    pub validation_size: usize,
    pub test_size: usize,
    pub max_iterations: u64,
    pub eval_every: u64,
    pub adam: AdamConfig,
    pub sparsity: Option<SparsitySchedule>,
    /// Ramp of the `R_z` coefficient on the mean cell input.
    pub rz: Option<SparsitySchedule>,
    /// Seed of the validation and test sequences shared by every run.
    pub eval_seed: u64,
    /// Largest distance of a cell weight to the exact pattern that still
    /// counts as solved.
    pub weight_tolerance: f64,
    /// One-sided level of the baseline prediction bound.
    pub threshold_level: f64,
}

impl Default for SequenceConfig {
    fn default() -> Self {
        Self {
            op: Operation::Mul,
            cell: UnitKind::Nmu,
            digits: (0, 9),
            glyph_noise: 0.01,
            train_length: 2,
            test_length: 20,
            batch_size: 64,
            validation_size: 1000,
            test_size: 1000,
            max_iterations: 20_000,
            eval_every: 500,
            adam: AdamConfig::default(),
            sparsity: Some(SparsitySchedule {
                lambda_hat: 10.0,
                lambda_start: 5_000.0,
                lambda_end: 10_000.0,
            }),
            rz: Some(SparsitySchedule {
                lambda_hat: 100.0,
                lambda_start: 0.0,
                lambda_end: 1.0,
            }),
            eval_seed: 0x5e9_0e7a1,
            weight_tolerance: 1e-3,
            threshold_level: 0.99,
        }
    }
}

impl SequenceConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        match (self.op, self.cell) {
            (Operation::Mul, UnitKind::Nmu | UnitKind::NacMul | UnitKind::NacMulNmu) => {}
            (Operation::Add, UnitKind::Nau | UnitKind::NacAdd) => {}
            (op, cell) => return bad(format!("cell {cell} does not fold {}", op.name())),
        }
        if self.digits.0 > self.digits.1 || self.digits.1 as usize >= GLYPH_DIM {
            return bad(format!("digits must lie in 0..={}, got {:?}", GLYPH_DIM - 1, self.digits));
        }
        if !(self.glyph_noise >= 0.0) {
            return bad(format!("glyph_noise must be non-negative, got {}", self.glyph_noise));
        }
        if self.train_length == 0 || self.test_length == 0 {
            return bad("sequence lengths must be positive".into());
        }
        if self.batch_size == 0 || self.validation_size == 0 || self.test_size == 0 {
            return bad("batch, validation and test sizes must be positive".into());
        }
        if self.eval_every == 0 {
            return bad("eval_every must be positive".into());
        }
        if !(self.threshold_level > 0.5 && self.threshold_level < 1.0) {
            return bad(format!("threshold_level must be in (0.5, 1), got {}", self.threshold_level));
        }
        for s in self.sparsity.iter().chain(&self.rz) {
            s.validate()?;
        }
        self.adam.validate()
    }

    /// Weights of the cell that fold the operation exactly.
    pub fn exact_cell_weights(&self) -> Matrix {
        Matrix::from_rows(&[[1.0, 1.0]])
    }

    fn rz_variant(&self) -> RzVariant {
        match self.op {
            Operation::Add => RzVariant::Additive,
            _ => RzVariant::Multiplicative,
        }
    }
}

/// Glyph rows are ordered `b * length + t`.
#[derive(Clone, Debug, PartialEq)]
pub struct SequenceBatch {
    pub glyphs: Matrix,
    pub digits: Matrix,
    pub targets: Matrix,
}

impl SequenceBatch {
    pub fn batch(&self) -> usize {
        self.digits.rows()
    }

    pub fn length(&self) -> usize {
        self.digits.cols()
    }
}

pub fn gen_glyph_batch(rng: &mut RngStream, cfg: &SequenceConfig, batch: usize, length: usize) -> Result<SequenceBatch> {
    let (digits, targets) = gen_sequence_batch(rng, batch, length, cfg.digits, cfg.op)?;
    let mut glyphs = Matrix::zeros(batch * length, GLYPH_DIM);
    for (r, &d) in digits.data().iter().enumerate() {
        let row = glyphs.row_mut(r);
        for v in row.iter_mut() {
            *v = rng.normal(0.0, cfg.glyph_noise);
        }
        row[d as usize] += 1.0;
    }
    Ok(SequenceBatch { glyphs, digits, targets })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SequenceLoss {
    pub mse: f64,
    pub sparsity: f64,
    pub rz: f64,
    pub total: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SequenceModel {
    pub encoder: Unit,
    pub cell: Unit,
    pub sparsity: Option<SparsitySchedule>,
    pub rz: Option<SparsitySchedule>,
    pub rz_variant: RzVariant,
    pub initial: f64,
}

pub struct SequenceGrads {
    pub encoder: Vec<Matrix>,
    pub cell: Vec<Matrix>,
}

impl SequenceModel {
    pub fn new(cfg: &SequenceConfig, rng: &RngStream) -> Result<Self> {
        let mut encoder = Unit::new(UnitKind::Linear, GLYPH_DIM, 1, UnitConfig::default())?;
        init_unit(&mut encoder, &mut rng.derive("init/encoder"), &InitOptions::default())?;
        let mut cell = Unit::new(cfg.cell, 2, 1, UnitConfig::default())?;
        init_unit(&mut cell, &mut rng.derive("init/cell"), &InitOptions::default())?;
        cell.clamp_weights();
        Ok(Self {
            encoder,
            cell,
            sparsity: cfg.sparsity,
            rz: cfg.rz,
            rz_variant: cfg.rz_variant(),
            initial: cfg.op.identity(),
        })
    }

    /// The cell fixed at `w` and excluded from training.
    pub fn with_frozen_cell(mut self, w: Matrix) -> Result<Self> {
        self.cell.set_param("W", w)?;
        self.cell.freeze("W")?;
        self.sparsity = None;
        self.rz = None;
        Ok(self)
    }

    pub fn cell_weights(&self) -> Option<&Matrix> {
        self.cell.param("W")
    }

    fn encode(&self, b: &SequenceBatch) -> Result<(Matrix, ForwardCache)> {
        let (y, cache) = self.encoder.forward(&b.glyphs)?;
        Ok((Matrix::new(b.batch(), b.length(), y.into_data())?, cache))
    }

    /// Every state, `batch x length`.
    pub fn predict(&self, b: &SequenceBatch) -> Result<Matrix> {
        let (z, _) = self.encode(b)?;
        Ok(recurrent_apply(&self.cell, &z, self.initial)?.0)
    }

    pub fn loss_and_grad(&self, b: &SequenceBatch, t: u64) -> Result<(SequenceLoss, SequenceGrads)> {
        let (z, enc_cache) = self.encode(b)?;
        let (states, cache) = recurrent_apply(&self.cell, &z, self.initial)?;
        let n = states.len() as f64;
        let mut grad_states = states.clone();
        let mut sse = 0.0;
        for (g, &y) in grad_states.data_mut().iter_mut().zip(b.targets.data()) {
            let d = *g - y;
            sse += d * d;
            *g = 2.0 * d / n;
        }
        let mse = sse / n;

        let (mut sparsity, mut rz) = (0.0, 0.0);
        let mut sparse_grads = None;
        if let Some(s) = self.sparsity {
            let lambda = s.lambda(t);
            let (p, mut g) = sparsity_penalty_and_grad(&self.cell);
            g.iter_mut().for_each(|m| m.scale(lambda));
            sparsity = lambda * p;
            sparse_grads = Some(g);
        }
        let mut extra = None;
        let mut rz_w_grad = None;
        if let (Some(s), Some(w)) = (self.rz, self.cell.param("W")) {
            let lambda = s.lambda(t);
            let (p, mut gw, gz) = rz_penalty_and_grad(w, &cache.input_means(), self.rz_variant)?;
            gw.scale(lambda);
            rz = lambda * p;
            // each row at each step carries 1/n of the mean
            extra = Some(gz.iter().map(|g| lambda * g / n).collect::<Vec<_>>());
            rz_w_grad = Some(gw);
        }

        let (gz, mut cell_grads) = recurrent_backward(&self.cell, &cache, &grad_states, extra.as_deref())?;
        if let Some(g) = sparse_grads {
            for (a, b) in cell_grads.iter_mut().zip(&g) {
                a.add_assign(b)?;
            }
        }
        if let Some(gw) = rz_w_grad {
            let i = self.cell.params().iter().position(|p| p.name == "W").expect("cell has W");
            cell_grads[i].add_assign(&gw)?;
        }
        let gy = Matrix::new(gz.len(), 1, gz.into_data())?;
        let (_, enc_grads) = self.encoder.backward(&enc_cache, &gy)?;
        Ok((
            SequenceLoss {
                mse,
                sparsity,
                rz,
                total: mse + sparsity + rz,
            },
            SequenceGrads {
                encoder: enc_grads,
                cell: cell_grads,
            },
        ))
    }

    /// Flattened trainable parameters, encoder first.
    pub fn param_values(&self) -> Vec<f64> {
        self.encoder
            .params()
            .iter()
            .chain(self.cell.params())
            .flat_map(|p| p.value.data().iter().copied())
            .collect()
    }
}

fn mse_all(pred: &Matrix, targets: &Matrix) -> f64 {
    let n = pred.len() as f64;
    pred.data().iter().zip(targets.data()).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / n
}

fn mse_last(pred: &Matrix, targets: &Matrix) -> f64 {
    let c = pred.cols() - 1;
    let n = pred.rows();
    (0..n).map(|r| (pred.get(r, c) - targets.get(r, c)).powi(2)).sum::<f64>() / n as f64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SequenceRecord {
    pub iteration: u64,
    pub train_mse: Option<f64>,
    /// All states of the training-length validation sequences.
    pub validation_mse: f64,
    /// Last state of the test-length sequences.
    pub extrapolation_mse: f64,
    pub cell_weights: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct SequenceTrace {
    pub records: Vec<SequenceRecord>,
    pub best_index: usize,
    pub best_model: SequenceModel,
    pub diverged: bool,
}

impl SequenceTrace {
    pub fn best(&self) -> &SequenceRecord {
        &self.records[self.best_index]
    }
}

/// Validation and test sequences fixed by `cfg.eval_seed`.
pub struct SequenceEvalSets {
    pub validation: SequenceBatch,
    pub test: SequenceBatch,
}

impl SequenceEvalSets {
    pub fn new(cfg: &SequenceConfig) -> Result<Self> {
        let rng = RngStream::new(cfg.eval_seed);
        Ok(Self {
            validation: gen_glyph_batch(&mut rng.derive("validation"), cfg, cfg.validation_size, cfg.train_length)?,
            test: gen_glyph_batch(&mut rng.derive("test"), cfg, cfg.test_size, cfg.test_length)?,
        })
    }
}

fn record(model: &SequenceModel, sets: &SequenceEvalSets, iteration: u64, train_mse: Option<f64>) -> Result<SequenceRecord> {
    let v = model.predict(&sets.validation)?;
    let e = model.predict(&sets.test)?;
    Ok(SequenceRecord {
        iteration,
        train_mse,
        validation_mse: mse_all(&v, &sets.validation.targets),
        extrapolation_mse: mse_last(&e, &sets.test.targets),
        cell_weights: model.cell_weights().map(|w| w.data().to_vec()).unwrap_or_default(),
    })
}

pub fn train_sequence(
    mut model: SequenceModel,
    cfg: &SequenceConfig,
    sets: &SequenceEvalSets,
    rng: &RngStream,
) -> Result<SequenceTrace> {
    cfg.validate()?;
    let mut batch_rng = rng.derive("train");
    let mut enc_m: Vec<Moments> = model.encoder.params().iter().map(|p| Moments::zeros_like(&p.value)).collect();
    let mut cell_m: Vec<Moments> = model.cell.params().iter().map(|p| Moments::zeros_like(&p.value)).collect();
    let mut records = vec![record(&model, sets, 0, None)?];
    let mut best_index = 0;
    let mut best_model = model.clone();
    let mut diverged = false;

    for t in 0..cfg.max_iterations {
        let batch = gen_glyph_batch(&mut batch_rng, cfg, cfg.batch_size, cfg.train_length)?;
        let (loss, grads) = model.loss_and_grad(&batch, t)?;
        let finite = grads.encoder.iter().chain(&grads.cell).all(Matrix::all_finite);
        if !loss.total.is_finite() || !finite {
            diverged = true;
            break;
        }
        let step = t + 1;
        for (unit, (gs, ms)) in [
            (&mut model.encoder, (&grads.encoder, &mut enc_m)),
            (&mut model.cell, (&grads.cell, &mut cell_m)),
        ] {
            for ((p, g), m) in unit.params_mut().iter_mut().zip(gs).zip(ms.iter_mut()) {
                if !p.frozen {
                    adam_step(&mut p.value, g, m, step, &cfg.adam);
                }
            }
        }
        model.cell.clamp_weights();
        if step % cfg.eval_every == 0 || step == cfg.max_iterations {
            let rec = record(&model, sets, step, Some(loss.mse))?;
            let best = &records[best_index];
            if rec.validation_mse.is_finite() && !(best.validation_mse <= rec.validation_mse) {
                best_index = records.len();
                best_model = model.clone();
            }
            records.push(rec);
        }
    }
    Ok(SequenceTrace {
        records,
        best_index,
        best_model,
        diverged,
    })
}

/// Whether the cell is learned or fixed at the exact weights.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CellMode {
    Learned,
    Exact,
}

pub fn run_sequence_seed(cfg: &SequenceConfig, sets: &SequenceEvalSets, seed: u64, mode: CellMode) -> Result<SequenceTrace> {
    let rng = RngStream::new(seed);
    let mut model = SequenceModel::new(cfg, &rng)?;
    if mode == CellMode::Exact {
        model = model.with_frozen_cell(cfg.exact_cell_weights())?;
    }
    train_sequence(model, cfg, sets, &rng)
}

/// One-sided upper prediction bound `mean + t_{level, n-1} s sqrt(1 + 1/n)`
/// for a new draw from the population of `values`.
pub fn prediction_upper_bound(values: &[f64], level: f64) -> Result<f64> {
    let n = values.len();
    if n < 2 {
        return Err(Error::Degenerate(format!("need at least 2 baseline values, got {n}")));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Degenerate("baseline contains non-finite values".into()));
    }
    let nf = n as f64;
    let mean = values.iter().sum::<f64>() / nf;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (nf - 1.0);
    let t = StudentsT::new(0.0, 1.0, nf - 1.0)
        .map_err(|e| Error::InvalidInput(e.to_string()))?
        .inverse_cdf(level);
    Ok(mean + t * var.sqrt() * (1.0 + 1.0 / nf).sqrt())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SequenceOutcome {
    pub seed: u64,
    /// Largest `|W - W_exact|` of the cell at the selected checkpoint.
    pub weight_error: f64,
    pub exact_weights: bool,
    pub extrapolation_mse: f64,
    pub success: bool,
    pub diverged: bool,
}

pub fn judge_sequence(cfg: &SequenceConfig, seed: u64, trace: &SequenceTrace, threshold: f64) -> SequenceOutcome {
    let best = trace.best();
    let exact = cfg.exact_cell_weights();
    let weight_error = if best.cell_weights.len() == exact.len() {
        best.cell_weights
            .iter()
            .zip(exact.data())
            .map(|(w, e)| (w - e).abs())
            .fold(0.0, f64::max)
    } else {
        f64::INFINITY
    };
    let exact_weights = weight_error <= cfg.weight_tolerance;
    SequenceOutcome {
        seed,
        weight_error,
        exact_weights,
        extrapolation_mse: best.extrapolation_mse,
        success: !trace.diverged && exact_weights && best.extrapolation_mse < threshold,
        diverged: trace.diverged,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SequenceStudy {
    pub baseline_mse: Vec<f64>,
    pub threshold: f64,
    pub outcomes: Vec<SequenceOutcome>,
}

impl SequenceStudy {
    pub fn exact_count(&self) -> usize {
        self.outcomes.iter().filter(|o| o.exact_weights).count()
    }

    pub fn success_count(&self) -> usize {
        self.outcomes.iter().filter(|o| o.success).count()
    }
}

/// Trains the exact-cell baseline on `baseline_seeds` to set the threshold,
/// then the learned cell on `seeds`.
pub fn run_sequence_study(cfg: &SequenceConfig, seeds: &[u64], baseline_seeds: &[u64]) -> Result<SequenceStudy> {
    cfg.validate()?;
    let sets = SequenceEvalSets::new(cfg)?;
    let baseline_mse = baseline_seeds
        .iter()
        .map(|&s| Ok(run_sequence_seed(cfg, &sets, s, CellMode::Exact)?.best().extrapolation_mse))
        .collect::<Result<Vec<_>>>()?;
    let threshold = prediction_upper_bound(&baseline_mse, cfg.threshold_level)?;
    let outcomes = seeds
        .iter()
        .map(|&s| Ok(judge_sequence(cfg, s, &run_sequence_seed(cfg, &sets, s, CellMode::Learned)?, threshold)))
        .collect::<Result<Vec<_>>>()?;
    Ok(SequenceStudy {
        baseline_mse,
        threshold,
        outcomes,
    })
}
