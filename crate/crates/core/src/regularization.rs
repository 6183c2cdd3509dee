//! Sparsity penalties with their warm-up schedule, and the `R_z` penalties
//! that pull a unit's mean input toward the operation's identity wherever the
//! unit does not fully select that input.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Matrix;
use crate::units::{abs_grad, SparseFamily, Unit};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SparsitySchedule {
    pub lambda_hat: f64,
    pub lambda_start: f64,
    pub lambda_end: f64,
}

impl SparsitySchedule {
    pub fn new(lambda_hat: f64, lambda_start: f64, lambda_end: f64) -> Result<Self> {
        let s = Self {
            lambda_hat,
            lambda_start,
            lambda_end,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_hat >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "lambda_hat must be non-negative, got {}",
                self.lambda_hat
            )));
        }
        if !(self.lambda_start < self.lambda_end) {
            return Err(Error::InvalidConfig(format!(
                "lambda_start ({}) must be below lambda_end ({})",
                self.lambda_start, self.lambda_end
            )));
        }
        Ok(())
    }

    /// The same ramp with start and end multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            lambda_hat: self.lambda_hat,
            lambda_start: self.lambda_start * factor,
            lambda_end: self.lambda_end * factor,
        }
    }

    pub fn lambda(&self, t: u64) -> f64 {
        schedule_lambda(t, self)
    }
}

/// `λ̂ · max(min((t - start) / (end - start), 1), 0)`.
pub fn schedule_lambda(t: u64, s: &SparsitySchedule) -> f64 {
    let ramp = (t as f64 - s.lambda_start) / (s.lambda_end - s.lambda_start);
    s.lambda_hat * ramp.clamp(0.0, 1.0)
}

/// Distance to the nearest sparse target and its (sub)gradient in `w`.
fn sparse_term(w: f64, family: SparseFamily, clamped: bool) -> (f64, f64) {
    match (family, clamped) {
        (SparseFamily::Unit, true) => {
            // min(w, 1 - w)
            let g = if w < 0.5 {
                1.0
            } else if w > 0.5 {
                -1.0
            } else {
                0.0
            };
            (w.min(1.0 - w), g)
        }
        (SparseFamily::Unit, false) => {
            // min(|w|, |1 - w|), valid outside [0, 1]
            let (a, b) = (w.abs(), (1.0 - w).abs());
            let g = if a < b {
                abs_grad(w)
            } else if a > b {
                -abs_grad(1.0 - w)
            } else {
                0.0
            };
            (a.min(b), g)
        }
        (SparseFamily::Signed, true) => {
            // min(|w|, 1 - |w|)
            let a = w.abs();
            let g = if a < 0.5 {
                abs_grad(w)
            } else if a > 0.5 {
                -abs_grad(w)
            } else {
                0.0
            };
            (a.min(1.0 - a), g)
        }
        (SparseFamily::Signed, false) => {
            // min(|w|, ||w| - 1|)
            let a = w.abs();
            let d = (a - 1.0).abs();
            let g = if a < d {
                abs_grad(w)
            } else if a > d {
                abs_grad(a - 1.0) * abs_grad(w)
            } else {
                0.0
            };
            (a.min(d), g)
        }
    }
}

/// Sum over the unit's constrained weight matrices of the mean sparse-target
/// distance. Zero for kinds without directly stored weights, or when disabled.
pub fn sparsity_penalty(unit: &Unit) -> f64 {
    sparsity_penalty_and_grad(unit).0
}

/// Penalty and its gradient, ordered like [`Unit::params`].
pub fn sparsity_penalty_and_grad(unit: &Unit) -> (f64, Vec<Matrix>) {
    let mut grads: Vec<Matrix> = unit
        .params()
        .iter()
        .map(|p| Matrix::zeros(p.value.rows(), p.value.cols()))
        .collect();
    if !unit.config().sparsity_regularizer_enabled {
        return (0.0, grads);
    }
    let clamped = unit.config().clamp_enabled;
    let mut total = 0.0;
    for (name, family) in unit.constrained_weights() {
        let idx = unit
            .params()
            .iter()
            .position(|p| p.name == name)
            .expect("constrained weight exists");
        let w = &unit.params()[idx].value;
        let n = w.len() as f64;
        let g = &mut grads[idx];
        let mut sum = 0.0;
        for (gi, &wi) in g.data_mut().iter_mut().zip(w.data()) {
            let (v, d) = sparse_term(wi, family, clamped);
            sum += v;
            *gi = d / n;
        }
        total += sum / n;
    }
    (total, grads)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum RzVariant {
    /// `mean (1 - W)(1 - z̄)²`, identity 1.
    Multiplicative,
    /// `mean (1 - |W|) z̄²`, identity 0.
    Additive,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RzConfig {
    pub variant: RzVariant,
    /// Ramp for the `R_z` coefficient; `lambda_hat` defaults to 1.
    pub schedule: SparsitySchedule,
}

pub fn rz_penalty(w: &Matrix, z_mean: &[f64], variant: RzVariant) -> Result<f64> {
    Ok(rz_penalty_and_grad(w, z_mean, variant)?.0)
}

/// Returns `(R_z, dR/dW, dR/dz̄)`.
pub fn rz_penalty_and_grad(w: &Matrix, z_mean: &[f64], variant: RzVariant) -> Result<(f64, Matrix, Vec<f64>)> {
    if z_mean.len() != w.cols() {
        return Err(Error::DimensionMismatch {
            op: "rz_penalty",
            expected: format!("{} input means", w.cols()),
            got: format!("{}", z_mean.len()),
        });
    }
    let n = w.len() as f64;
    let mut gw = Matrix::zeros(w.rows(), w.cols());
    let mut gz = vec![0.0; z_mean.len()];
    let mut total = 0.0;
    for o in 0..w.rows() {
        for (i, &z) in z_mean.iter().enumerate() {
            let wi = w.get(o, i);
            match variant {
                RzVariant::Multiplicative => {
                    let d = 1.0 - z;
                    total += (1.0 - wi) * d * d;
                    gw.set(o, i, -d * d / n);
                    gz[i] += -2.0 * (1.0 - wi) * d / n;
                }
                RzVariant::Additive => {
                    total += (1.0 - wi.abs()) * z * z;
                    gw.set(o, i, -abs_grad(wi) * z * z / n);
                    gz[i] += 2.0 * (1.0 - wi.abs()) * z / n;
                }
            }
        }
    }
    Ok((total / n, gw, gz))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::units::{UnitConfig, UnitKind};

    fn unit(kind: UnitKind, w: Matrix, clamp: bool) -> Unit {
        let cfg = UnitConfig {
            clamp_enabled: clamp,
            ..UnitConfig::default()
        };
        let mut u = Unit::new(kind, w.cols(), w.rows(), cfg).unwrap();
        u.set_param("W", w).unwrap();
        u
    }

    #[test]
    fn penalty_examples() {
        let nmu = unit(UnitKind::Nmu, Matrix::from_rows(&[[0.0, 1.0, 1.0]]), true);
        assert_eq!(sparsity_penalty(&nmu), 0.0);
        let nmu = unit(UnitKind::Nmu, Matrix::from_rows(&[[0.5]]), true);
        assert_eq!(sparsity_penalty(&nmu), 0.5);
        let nau = unit(UnitKind::Nau, Matrix::from_rows(&[[-1.0, 0.25]]), true);
        assert_eq!(sparsity_penalty(&nau), 0.125);
    }

    #[test]
    fn penalty_disabled_or_inapplicable() {
        let mut nmu = unit(UnitKind::Nmu, Matrix::from_rows(&[[0.3]]), true);
        nmu.config_mut().sparsity_regularizer_enabled = false;
        assert_eq!(sparsity_penalty(&nmu), 0.0);
        let lin = Unit::new(UnitKind::Linear, 2, 2, UnitConfig::default()).unwrap();
        assert_eq!(sparsity_penalty(&lin), 0.0);
    }

    #[test]
    fn unclamped_extension_is_nonnegative_outside_box() {
        let nmu = unit(UnitKind::Nmu, Matrix::from_rows(&[[-0.2, 1.3]]), false);
        assert!((sparsity_penalty(&nmu) - 0.25).abs() < 1e-15);
        let nau = unit(UnitKind::Nau, Matrix::from_rows(&[[-1.4, 1.1]]), false);
        assert!((sparsity_penalty(&nau) - 0.25).abs() < 1e-12);
    }

    #[test]
    fn schedule_examples() {
        let s = SparsitySchedule::new(10.0, 1e6, 2e6).unwrap();
        assert_eq!(s.lambda(0), 0.0);
        assert_eq!(s.lambda(999_999), 0.0);
        assert_eq!(s.lambda(1_500_000), 5.0);
        assert_eq!(s.lambda(2_000_000), 10.0);
        assert_eq!(s.lambda(9_000_000), 10.0);
        assert!(SparsitySchedule::new(1.0, 5.0, 5.0).is_err());
        assert!(SparsitySchedule::new(-1.0, 0.0, 5.0).is_err());
    }

    #[test]
    fn rz_examples() {
        let ones = Matrix::from_rows(&[[1.0, 1.0]]);
        assert_eq!(rz_penalty(&ones, &[5.0, -3.0], RzVariant::Multiplicative).unwrap(), 0.0);
        let zero = Matrix::from_rows(&[[0.0]]);
        assert_eq!(rz_penalty(&zero, &[3.0], RzVariant::Multiplicative).unwrap(), 4.0);
        assert_eq!(rz_penalty(&Matrix::from_rows(&[[1.0]]), &[5.0], RzVariant::Additive).unwrap(), 0.0);
        assert!(rz_penalty(&ones, &[1.0], RzVariant::Additive).is_err());
    }

    fn fd<F: Fn(f64) -> f64>(f: F, x: f64) -> f64 {
        let h = 1e-6;
        (f(x + h) - f(x - h)) / (2.0 * h)
    }

    #[test]
    fn sparse_term_gradients_away_from_kinks() {
        let points = [-1.7, -1.2, -0.8, -0.3, 0.1, 0.3, 0.7, 0.9, 1.2, 1.6];
        for family in [SparseFamily::Unit, SparseFamily::Signed] {
            for clamped in [true, false] {
                for &w in &points {
                    let g = sparse_term(w, family, clamped).1;
                    let num = fd(|v| sparse_term(v, family, clamped).0, w);
                    assert!((g - num).abs() < 1e-6, "{family:?} {clamped} w={w}: {g} vs {num}");
                }
            }
        }
    }

    #[test]
    fn rz_gradients_match_finite_differences() {
        let w = Matrix::from_rows(&[[0.2, 0.7, -0.4], [0.9, -0.6, 0.3]]);
        let z = [0.4, 2.3, -1.1];
        for variant in [RzVariant::Multiplicative, RzVariant::Additive] {
            let (_, gw, gz) = rz_penalty_and_grad(&w, &z, variant).unwrap();
            for k in 0..w.len() {
                let num = fd(
                    |v| {
                        let mut w2 = w.clone();
                        w2.data_mut()[k] = v;
                        rz_penalty(&w2, &z, variant).unwrap()
                    },
                    w.data()[k],
                );
                assert!((gw.data()[k] - num).abs() < 1e-7);
            }
            for i in 0..z.len() {
                let num = fd(
                    |v| {
                        let mut z2 = z;
                        z2[i] = v;
                        rz_penalty(&w, &z2, variant).unwrap()
                    },
                    z[i],
                );
                assert!((gz[i] - num).abs() < 1e-7);
            }
        }
    }
}
