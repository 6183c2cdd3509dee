//! Central finite-difference checks of the hand-written backward passes.
//!
//! Each check perturbs one scalar at a time and compares
//! `(f(θ+h) - f(θ-h)) / 2h` with the analytic gradient.

use crate::error::Result;
use crate::model::{recurrent_apply, recurrent_backward, Model};
use crate::numerics::{Matrix, RngStream};
use crate::units::{Unit, UnitConfig, UnitKind};

pub const FD_STEP: f64 = 1e-5;
/// Elements where both gradients are below this are not compared.
pub const MAGNITUDE_FLOOR: f64 = 1e-8;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradCheck {
    pub compared: usize,
    pub max_rel_error: f64,
    pub worst: String,
}

impl GradCheck {
    fn record(&mut self, label: impl FnOnce() -> String, analytic: f64, numeric: f64) {
        let scale = analytic.abs().max(numeric.abs());
        if !(scale > MAGNITUDE_FLOOR) {
            return;
        }
        self.compared += 1;
        let err = (analytic - numeric).abs() / scale;
        if err > self.max_rel_error || err.is_nan() {
            self.max_rel_error = if err.is_nan() { f64::INFINITY } else { err };
            self.worst = format!("{}: analytic {analytic:e}, numeric {numeric:e}", label());
        }
    }

    pub fn merge(&mut self, other: GradCheck) {
        self.compared += other.compared;
        if other.max_rel_error > self.max_rel_error {
            self.max_rel_error = other.max_rel_error;
            self.worst = other.worst;
        }
    }

    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_error <= tolerance
    }
}

fn central<F: FnMut(f64) -> f64>(mut f: F, x: f64) -> f64 {
    (f(x + FD_STEP) - f(x - FD_STEP)) / (2.0 * FD_STEP)
}

fn weighted_sum(y: &Matrix, c: &Matrix) -> f64 {
    y.data().iter().zip(c.data()).map(|(a, b)| a * b).sum()
}

/// Checks input and parameter gradients of `L = Σ c ⊙ unit(x)` for a random `c`.
pub fn check_unit(unit: &Unit, x: &Matrix, rng: &mut RngStream) -> Result<GradCheck> {
    let (y, cache) = unit.forward(x)?;
    let c = Matrix::new(y.rows(), y.cols(), (0..y.len()).map(|_| rng.uniform(-1.0, 1.0)).collect())?;
    let (gx, gp) = unit.backward(&cache, &c)?;
    let mut report = GradCheck::default();
    let kind = unit.kind();

    for k in 0..x.len() {
        let num = central(
            |v| {
                let mut x2 = x.clone();
                x2.data_mut()[k] = v;
                weighted_sum(&unit.forward(&x2).expect("same shape").0, &c)
            },
            x.data()[k],
        );
        report.record(|| format!("{kind} input[{k}]"), gx.data()[k], num);
    }
    for (pi, p) in unit.params().iter().enumerate() {
        for k in 0..p.value.len() {
            let num = central(
                |v| {
                    let mut u2 = unit.clone();
                    u2.params_mut()[pi].value.data_mut()[k] = v;
                    weighted_sum(&u2.forward(x).expect("same shape").0, &c)
                },
                p.value.data()[k],
            );
            report.record(|| format!("{kind} {}[{k}]", p.name), gp[pi].data()[k], num);
        }
    }
    Ok(report)
}

fn fill(rng: &mut RngStream, m: &mut Matrix, lo: f64, hi: f64) {
    for v in m.data_mut() {
        *v = rng.uniform(lo, hi);
    }
}

/// A random small instance (dims ≤ 6, batch ≤ 4) kept away from the
/// non-differentiable points of each kind.
pub fn random_instance(kind: UnitKind, shared_nalu: bool, rng: &mut RngStream) -> (Unit, Matrix) {
    loop {
        let din = rng.uniform_int(1, 6);
        let dout = rng.uniform_int(1, 6);
        let batch = rng.uniform_int(1, 4);
        let cfg = UnitConfig {
            nalu_shared_weights: shared_nalu,
            ..UnitConfig::default()
        };
        let mut unit = Unit::new(kind, din, dout, cfg).expect("positive dims");
        let names: Vec<String> = unit.params().iter().map(|p| p.name.clone()).collect();
        for name in names {
            let m = unit.param_mut(&name).expect("listed");
            let base = name.rsplit('.').next().unwrap_or(&name);
            let (lo, hi) = match (kind, base) {
                (UnitKind::Nmu | UnitKind::NacMulNmu, "W") => (0.0, 1.0),
                (UnitKind::GatedNauNmu, "W") if name.starts_with("mul.") => (0.0, 1.0),
                (UnitKind::Relu6, "W" | "b") => (-3.0, 3.0),
                (_, "W_hat" | "M_hat") => (-2.0, 2.0),
                _ => (-1.0, 1.0),
            };
            fill(rng, m, lo, hi);
        }
        let mut x = Matrix::zeros(batch, din);
        for v in x.data_mut() {
            let mag = rng.uniform(0.1, 2.0);
            *v = if rng.next_f64() < 0.5 { -mag } else { mag };
        }
        if matches!(kind, UnitKind::Relu | UnitKind::Relu6) {
            let pre = x
                .matmul_t(unit.param("W").expect("W"))
                .expect("shapes");
            let b = unit.param("b").expect("b").data().to_vec();
            let near_kink = (0..pre.rows()).any(|r| {
                pre.row(r).iter().zip(&b).any(|(p, bi)| {
                    let v = p + bi;
                    v.abs() < 1e-3 || (v - 6.0).abs() < 1e-3
                })
            });
            if near_kink {
                continue;
            }
        }
        return (unit, x);
    }
}

/// Checks the gradient of the full regularized loss at iteration `t`.
pub fn check_model(model: &Model, x: &Matrix, targets: &[f64], t: u64) -> Result<GradCheck> {
    let (_, grads) = model.loss_and_grad(x, targets, t)?;
    let mut report = GradCheck::default();
    for (li, layer) in model.layers().iter().enumerate() {
        for (pi, p) in layer.unit.params().iter().enumerate() {
            for k in 0..p.value.len() {
                let num = central(
                    |v| {
                        let mut m2 = model.clone();
                        m2.layers_mut()[li].unit.params_mut()[pi].value.data_mut()[k] = v;
                        let (pred, caches) = m2.forward(x).expect("same shape");
                        m2.loss(&pred, targets, &caches, t).expect("same shape").total
                    },
                    p.value.data()[k],
                );
                report.record(|| format!("layer{li} {}[{k}]", p.name), grads[li][pi].data()[k], num);
            }
        }
    }
    Ok(report)
}

/// Checks BPTT through `recurrent_apply` for `L = Σ c ⊙ states`.
pub fn check_recurrent(unit: &Unit, z: &Matrix, initial: f64, rng: &mut RngStream) -> Result<GradCheck> {
    let (states, cache) = recurrent_apply(unit, z, initial)?;
    let c = Matrix::new(
        states.rows(),
        states.cols(),
        (0..states.len()).map(|_| rng.uniform(-1.0, 1.0)).collect(),
    )?;
    let (gz, gp) = recurrent_backward(unit, &cache, &c, None)?;
    let mut report = GradCheck::default();
    for k in 0..z.len() {
        let num = central(
            |v| {
                let mut z2 = z.clone();
                z2.data_mut()[k] = v;
                weighted_sum(&recurrent_apply(unit, &z2, initial).expect("same shape").0, &c)
            },
            z.data()[k],
        );
        report.record(|| format!("z[{k}]"), gz.data()[k], num);
    }
    for (pi, p) in unit.params().iter().enumerate() {
        for k in 0..p.value.len() {
            let num = central(
                |v| {
                    let mut u2 = unit.clone();
                    u2.params_mut()[pi].value.data_mut()[k] = v;
                    weighted_sum(&recurrent_apply(&u2, z, initial).expect("same shape").0, &c)
                },
                p.value.data()[k],
            );
            report.record(|| format!("{}[{k}]", p.name), gp[pi].data()[k], num);
        }
    }
    Ok(report)
}
