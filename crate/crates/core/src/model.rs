//! Stacked units, the regularized MSE objective, and recurrent application
//! of a two-input unit over a sequence.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::initialization::{init_unit, InitOptions};
use crate::numerics::{Matrix, RngStream};
use crate::regularization::{rz_penalty_and_grad, sparsity_penalty_and_grad, RzConfig, SparsitySchedule};
use crate::units::{ForwardCache, Unit, UnitConfig, UnitKind};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub kind: UnitKind,
    pub config: UnitConfig,
    pub sparsity: Option<SparsitySchedule>,
    pub rz: Option<RzConfig>,
}

impl LayerSpec {
    pub fn new(kind: UnitKind) -> Self {
        Self {
            kind,
            config: UnitConfig::default(),
            sparsity: None,
            rz: None,
        }
    }

    pub fn with_sparsity(mut self, s: SparsitySchedule) -> Self {
        self.sparsity = Some(s);
        self
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub input_size: usize,
    pub hidden: usize,
    pub layer1: LayerSpec,
    pub layer2: LayerSpec,
    pub init: InitOptions,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub unit: Unit,
    pub sparsity: Option<SparsitySchedule>,
    pub rz: Option<RzConfig>,
}

impl Layer {
    pub fn plain(unit: Unit) -> Self {
        Self {
            unit,
            sparsity: None,
            rz: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub mse: f64,
    /// Raw penalty per layer, before scaling.
    pub sparsity_terms: Vec<f64>,
    pub sparsity_lambdas: Vec<f64>,
    pub rz_terms: Vec<f64>,
    pub rz_lambdas: Vec<f64>,
    pub total: f64,
}

impl LossBreakdown {
    fn assemble(mse: f64, sparsity: Vec<(f64, f64)>, rz: Vec<(f64, f64)>) -> Self {
        let total = mse
            + sparsity.iter().map(|(v, l)| v * l).sum::<f64>()
            + rz.iter().map(|(v, l)| v * l).sum::<f64>();
        let (sparsity_terms, sparsity_lambdas) = sparsity.into_iter().unzip();
        let (rz_terms, rz_lambdas) = rz.into_iter().unzip();
        Self {
            mse,
            sparsity_terms,
            sparsity_lambdas,
            rz_terms,
            rz_lambdas,
            total,
        }
    }
}

pub fn mse(pred: &Matrix, targets: &[f64]) -> Result<f64> {
    if pred.len() != targets.len() {
        return Err(Error::DimensionMismatch {
            op: "mse",
            expected: format!("{} targets", pred.len()),
            got: format!("{}", targets.len()),
        });
    }
    let n = targets.len() as f64;
    Ok(pred
        .data()
        .iter()
        .zip(targets)
        .map(|(p, t)| (p - t) * (p - t))
        .sum::<f64>()
        / n)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Model {
    layers: Vec<Layer>,
}

impl Model {
    /// Builds and initializes both layers; layer `i` draws from
    /// `rng.derive("init/layer{i}")`.
    pub fn from_spec(spec: &ModelSpec, rng: &RngStream) -> Result<Self> {
        let dims = [(spec.input_size, spec.hidden), (spec.hidden, 1)];
        let mut layers = Vec::with_capacity(2);
        for (i, (ls, (din, dout))) in [&spec.layer1, &spec.layer2].into_iter().zip(dims).enumerate() {
            let mut unit = Unit::new(ls.kind, din, dout, ls.config.clone())?;
            init_unit(&mut unit, &mut rng.derive(&format!("init/layer{i}")), &spec.init)?;
            unit.clamp_weights();
            layers.push(Layer {
                unit,
                sparsity: ls.sparsity,
                rz: ls.rz,
            });
        }
        Self::new(layers)
    }

    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidConfig("a model needs at least one layer".into()));
        }
        for w in layers.windows(2) {
            if w[0].unit.out_dim() != w[1].unit.in_dim() {
                return Err(Error::DimensionMismatch {
                    op: "Model::new",
                    expected: format!("layer input {}", w[0].unit.out_dim()),
                    got: format!("{}", w[1].unit.in_dim()),
                });
            }
        }
        Ok(Self { layers })
    }

    pub fn from_units(units: Vec<Unit>) -> Result<Self> {
        Self::new(units.into_iter().map(Layer::plain).collect())
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn forward(&self, x: &Matrix) -> Result<(Matrix, Vec<ForwardCache>)> {
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        for layer in &self.layers {
            let (y, cache) = layer.unit.forward(&h)?;
            caches.push(cache);
            h = y;
        }
        Ok((h, caches))
    }

    pub fn predict(&self, x: &Matrix) -> Result<Matrix> {
        Ok(self.forward(x)?.0)
    }

    pub fn mse_on(&self, x: &Matrix, targets: &[f64]) -> Result<f64> {
        mse(&self.predict(x)?, targets)
    }

    /// MSE plus the scheduled regularizers at iteration `t`.
    pub fn loss(&self, pred: &Matrix, targets: &[f64], caches: &[ForwardCache], t: u64) -> Result<LossBreakdown> {
        let m = mse(pred, targets)?;
        let mut sparsity = Vec::new();
        let mut rz = Vec::new();
        for (layer, cache) in self.layers.iter().zip(caches) {
            let lam = layer.sparsity.map_or(0.0, |s| s.lambda(t));
            let value = if layer.sparsity.is_some() {
                sparsity_penalty_and_grad(&layer.unit).0
            } else {
                0.0
            };
            sparsity.push((value, lam));
            if let Some(cfg) = layer.rz {
                let w = rz_weight(&layer.unit)?;
                let zbar = cache.input().column_means();
                rz.push((rz_penalty_and_grad(&w, &zbar, cfg.variant)?.0, cfg.schedule.lambda(t)));
            }
        }
        Ok(LossBreakdown::assemble(m, sparsity, rz))
    }

    /// Loss at iteration `t` and its gradient for every layer, ordered like
    /// each unit's parameters.
    pub fn loss_and_grad(&self, x: &Matrix, targets: &[f64], t: u64) -> Result<(LossBreakdown, Vec<Vec<Matrix>>)> {
        let (pred, caches) = self.forward(x)?;
        let breakdown = self.loss(&pred, targets, &caches, t)?;
        let n = targets.len() as f64;
        let mut g = pred.clone();
        for (gi, &ti) in g.data_mut().iter_mut().zip(targets) {
            *gi = 2.0 * (*gi - ti) / n;
        }
        let mut grads = vec![Vec::new(); self.layers.len()];
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let (mut gx, mut gp) = layer.unit.backward(&caches[i], &g)?;
            if let Some(s) = layer.sparsity {
                let lam = s.lambda(t);
                if lam > 0.0 {
                    let (_, sg) = sparsity_penalty_and_grad(&layer.unit);
                    for (p, s) in gp.iter_mut().zip(sg) {
                        let mut s = s;
                        s.scale(lam);
                        p.add_assign(&s)?;
                    }
                }
            }
            if let Some(cfg) = layer.rz {
                let lam = cfg.schedule.lambda(t);
                if lam > 0.0 {
                    let input = caches[i].input();
                    let (_, gw, gz) = rz_penalty_and_grad(&rz_weight(&layer.unit)?, &input.column_means(), cfg.variant)?;
                    add_rz_weight_grad(&layer.unit, &mut gp, &gw, lam)?;
                    let b = input.rows() as f64;
                    for r in 0..gx.rows() {
                        for (gxi, gzi) in gx.row_mut(r).iter_mut().zip(&gz) {
                            *gxi += lam * gzi / b;
                        }
                    }
                }
            }
            grads[i] = gp;
            g = gx;
        }
        Ok((breakdown, grads))
    }

    pub fn clamp_weights(&mut self) {
        for l in &mut self.layers {
            l.unit.clamp_weights();
        }
    }

    /// Every selection matrix in the model, see [`Unit::arithmetic_weights`].
    pub fn arithmetic_weights(&self) -> Vec<Matrix> {
        self.layers.iter().flat_map(|l| l.unit.arithmetic_weights()).collect()
    }
}

/// The directly stored weight `R_z` acts on.
fn rz_weight(unit: &Unit) -> Result<Matrix> {
    match unit.kind() {
        UnitKind::Nau | UnitKind::Nmu | UnitKind::NacMulNmu => Ok(unit.param("W").expect("W").clone()),
        k => Err(Error::InvalidConfig(format!("R_z needs a directly stored W, not {k}"))),
    }
}

fn add_rz_weight_grad(unit: &Unit, gp: &mut [Matrix], gw: &Matrix, lam: f64) -> Result<()> {
    let mut gw = gw.clone();
    gw.scale(lam);
    let i = unit.params().iter().position(|p| p.name == "W").expect("checked by rz_weight");
    gp[i].add_assign(&gw)
}

/// Per-step caches of a recurrent application.
#[derive(Clone, Debug)]
pub struct RecurrentCache {
    steps: Vec<ForwardCache>,
}

impl RecurrentCache {
    pub fn steps(&self) -> &[ForwardCache] {
        &self.steps
    }

    /// Mean of every cell input (`[state, z]`) over the batch and all steps.
    pub fn input_means(&self) -> Vec<f64> {
        let mut acc = vec![0.0; self.steps[0].input().cols()];
        for s in &self.steps {
            for (a, m) in acc.iter_mut().zip(s.input().column_means()) {
                *a += m;
            }
        }
        let n = self.steps.len() as f64;
        acc.iter_mut().for_each(|a| *a /= n);
        acc
    }
}

/// `state_i = unit([state_{i-1}, z_i])` with `state_{-1} = initial`; returns
/// every state as a `batch x length` matrix.
pub fn recurrent_apply(unit: &Unit, z: &Matrix, initial: f64) -> Result<(Matrix, RecurrentCache)> {
    if unit.in_dim() != 2 || unit.out_dim() != 1 {
        return Err(Error::InvalidInput(format!(
            "recurrent unit must map 2 -> 1, got {} -> {}",
            unit.in_dim(),
            unit.out_dim()
        )));
    }
    if z.cols() == 0 {
        return Err(Error::InvalidInput("empty sequence".into()));
    }
    let (batch, len) = z.shape();
    let mut states = Matrix::zeros(batch, len);
    let mut state = vec![initial; batch];
    let mut steps = Vec::with_capacity(len);
    for t in 0..len {
        let mut x = Matrix::zeros(batch, 2);
        for b in 0..batch {
            x.set(b, 0, state[b]);
            x.set(b, 1, z.get(b, t));
        }
        let (y, cache) = unit.forward(&x)?;
        for b in 0..batch {
            state[b] = y.get(b, 0);
            states.set(b, t, state[b]);
        }
        steps.push(cache);
    }
    Ok((states, RecurrentCache { steps }))
}

/// Backpropagation through time. `grad_states` is `dL/dstate` for every step;
/// `extra_input_grad`, if given, is added to `dL/dinput` of every row at every
/// step (used for penalties on the mean input). Returns `(dL/dz, dL/dparams)`.
pub fn recurrent_backward(
    unit: &Unit,
    cache: &RecurrentCache,
    grad_states: &Matrix,
    extra_input_grad: Option<&[f64]>,
) -> Result<(Matrix, Vec<Matrix>)> {
    let len = cache.steps.len();
    let batch = cache.steps[0].input().rows();
    grad_states.expect_shape(batch, len, "recurrent_backward")?;
    let mut gz = Matrix::zeros(batch, len);
    let mut grads: Vec<Matrix> = unit
        .params()
        .iter()
        .map(|p| Matrix::zeros(p.value.rows(), p.value.cols()))
        .collect();
    let mut carry = vec![0.0; batch];
    for t in (0..len).rev() {
        let mut gy = Matrix::zeros(batch, 1);
        for b in 0..batch {
            gy.set(b, 0, grad_states.get(b, t) + carry[b]);
        }
        let (mut gx, gp) = unit.backward(&cache.steps[t], &gy)?;
        if let Some(extra) = extra_input_grad {
            for b in 0..batch {
                for (g, e) in gx.row_mut(b).iter_mut().zip(extra) {
                    *g += e;
                }
            }
        }
        for (acc, g) in grads.iter_mut().zip(&gp) {
            acc.add_assign(g)?;
        }
        for b in 0..batch {
            carry[b] = gx.get(b, 0);
            gz.set(b, t, gx.get(b, 1));
        }
    }
    Ok((gz, grads))
}
