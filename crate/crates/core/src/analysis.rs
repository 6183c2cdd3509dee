//! Closed-form moments of the multiplicative units, Monte-Carlo estimators to
//! check them against, and the two-weight loss landscape of an additive
//! layer feeding an exp-log layer.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::initialization::{init_unit, InitOptions};
use crate::numerics::{Matrix, RngStream};
use crate::units::{Unit, UnitConfig, UnitKind};

/// Monte-Carlo estimates need at least this many draws.
pub const MIN_MC_SAMPLES: usize = 10_000;

fn nacmul_factor(c1: f64, var_w: f64, e_z: f64, eps: f64) -> f64 {
    let l = (e_z.abs() + eps).ln();
    1.0 + c1 * 0.5 * var_w * l * l
}

/// Second-order estimate of `E[z]` for an exp-log layer with zero-mean
/// weights and uncorrelated inputs.
pub fn nacmul_expectation_closed(var_w: f64, e_z: f64, eps: f64, h: usize) -> f64 {
    nacmul_factor(1.0, var_w, e_z, eps).powi(h as i32)
}

/// Second-order estimate of `Var[z]` for the same layer.
pub fn nacmul_variance_closed(var_w: f64, e_z: f64, eps: f64, h: usize) -> f64 {
    let h = h as i32;
    nacmul_factor(4.0, var_w, e_z, eps).powi(h) - nacmul_factor(1.0, var_w, e_z, eps).powi(2 * h)
}

/// Second-order estimate of `Var[∂L/∂z_in] / Var[∂L/∂z_out]` for the same
/// layer with `h_out` outputs.
pub fn nacmul_backward_variance_ratio(var_w: f64, e_z: f64, var_z: f64, eps: f64, h_in: usize, h_out: usize) -> f64 {
    let m = e_z.abs() + eps;
    h_out as f64
        * nacmul_factor(4.0, var_w, e_z, eps).powi(h_in as i32)
        * var_w
        * (1.0 / (m * m) + 3.0 * var_z / m.powi(4))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NmuMoments {
    pub expectation: f64,
    pub forward_variance: f64,
    /// `Var[∂L/∂z_in] / Var[∂L/∂z_out]`.
    pub backward_variance_ratio: f64,
}

/// NMU moments for `E[W] = ½`, zero-mean inputs and uncorrelated terms.
pub fn nmu_moments_closed(var_w: f64, var_z: f64, h_in: usize, h_out: usize) -> NmuMoments {
    let h = h_in as i32;
    let a = var_w + 0.25;
    NmuMoments {
        expectation: 0.5f64.powi(h),
        forward_variance: a.powi(h) * (var_z + 1.0).powi(h) - 0.25f64.powi(h),
        backward_variance_ratio: h_out as f64 * a.powi(h) * (var_z + 1.0).powi(h - 1),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "dist", rename_all = "snake_case")]
pub enum InputDistribution {
    Normal { mean: f64, sd: f64 },
    Uniform { lo: f64, hi: f64 },
}

impl InputDistribution {
    fn sample(&self, rng: &mut RngStream) -> f64 {
        match *self {
            InputDistribution::Normal { mean, sd } => rng.normal(mean, sd),
            InputDistribution::Uniform { lo, hi } => rng.uniform(lo, hi),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "dist", rename_all = "snake_case")]
pub enum WeightDistribution {
    /// Directly stored `W` drawn uniformly.
    Uniform { lo: f64, hi: f64 },
    /// `W_hat` and `M_hat` drawn from `U[-r, r]`.
    NacUniform { r: f64 },
    /// The unit's regular initializer.
    Initialized(InitOptions),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentEstimate {
    /// Finite draws the moments are computed from.
    pub samples: usize,
    /// Draws with a non-finite output, excluded from the moments.
    pub overflow: usize,
    pub mean: f64,
    pub variance: f64,
    pub mean_se: f64,
    pub variance_se: f64,
}

impl MomentEstimate {
    /// Moments of the finite entries of `values` with standard errors
    /// `s/√n` for the mean and `√((m4 - s⁴)/n)` for the variance.
    pub fn from_values(values: &[f64]) -> Self {
        let finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
        let n = finite.len() as f64;
        let mean = finite.iter().sum::<f64>() / n;
        let (mut m2, mut m4) = (0.0, 0.0);
        for v in &finite {
            let d = (v - mean) * (v - mean);
            m2 += d;
            m4 += d * d;
        }
        let variance = m2 / (n - 1.0);
        let m4 = m4 / n;
        let pop_var = m2 / n;
        Self {
            samples: finite.len(),
            overflow: values.len() - finite.len(),
            mean,
            variance,
            mean_se: (variance / n).sqrt(),
            variance_se: ((m4 - pop_var * pop_var).max(0.0) / n).sqrt(),
        }
    }

    /// Deviation of the mean from `value` in standard errors.
    pub fn mean_z(&self, value: f64) -> f64 {
        (self.mean - value) / self.mean_se
    }

    pub fn variance_z(&self, value: f64) -> f64 {
        (self.variance - value) / self.variance_se
    }
}

fn fill(m: &mut Matrix, rng: &mut RngStream, lo: f64, hi: f64) {
    for v in m.data_mut() {
        *v = rng.uniform(lo, hi);
    }
}

/// Moments of the single output of a `in_dim → 1` unit, with fresh weights
/// and inputs for every draw.
pub fn mc_moments(
    kind: UnitKind,
    in_dim: usize,
    input: InputDistribution,
    weights: WeightDistribution,
    samples: usize,
    rng: &mut RngStream,
) -> Result<MomentEstimate> {
    if samples < MIN_MC_SAMPLES {
        return invalid(format!("Monte-Carlo estimates need at least {MIN_MC_SAMPLES} samples, got {samples}"));
    }
    let mut unit = Unit::new(kind, in_dim, 1, UnitConfig::default())?;
    let names: Vec<String> = unit.params().iter().map(|p| p.name.clone()).collect();
    match weights {
        WeightDistribution::Uniform { .. } if unit.param("W").is_none() => {
            return invalid(format!("{kind} has no directly stored W"));
        }
        WeightDistribution::NacUniform { .. } if !kind.is_nac_family() => {
            return invalid(format!("{kind} is not built from W_hat and M_hat"));
        }
        _ => {}
    }
    let mut x = Matrix::zeros(1, in_dim);
    let mut out = Vec::with_capacity(samples);
    for _ in 0..samples {
        match weights {
            WeightDistribution::Uniform { lo, hi } => fill(unit.param_mut("W").expect("checked"), rng, lo, hi),
            WeightDistribution::NacUniform { r } => {
                for name in &names {
                    fill(unit.param_mut(name).expect("listed"), rng, -r, r);
                }
            }
            WeightDistribution::Initialized(opts) => init_unit(&mut unit, rng, &opts)?,
        }
        for v in x.data_mut() {
            *v = input.sample(rng);
        }
        out.push(unit.forward(&x)?.0.get(0, 0));
    }
    Ok(MomentEstimate::from_values(&out))
}

/// Moments of `tanh(W_hat)·σ(M_hat)` with both drawn from `U[-r, r]`.
pub fn mc_weight_construction(r: f64, samples: usize, rng: &mut RngStream) -> Result<MomentEstimate> {
    if samples < MIN_MC_SAMPLES {
        return invalid(format!("Monte-Carlo estimates need at least {MIN_MC_SAMPLES} samples, got {samples}"));
    }
    let mut unit = Unit::new(UnitKind::NacAdd, 1, 1, UnitConfig::default())?;
    let mut out = Vec::with_capacity(samples);
    for _ in 0..samples {
        for name in ["W_hat", "M_hat"] {
            fill(unit.param_mut(name).expect("NAC parameters"), rng, -r, r);
        }
        out.push(unit.effective_weight()?.get(0, 0));
    }
    Ok(MomentEstimate::from_values(&out))
}

/// Input of the landscape problem; the target is `(x1 + x2)(x1 + x2 + x3 + x4)`.
pub const LANDSCAPE_INPUT: [f64; 4] = [1.0, 1.2, 1.8, 2.0];
pub const LANDSCAPE_TARGET: f64 = 13.2;
pub const LANDSCAPE_EPSILONS: [f64; 3] = [1e-7, 0.1, 1.0];

fn landscape_units(eps: f64) -> Result<(Unit, Unit)> {
    let add = Unit::new(UnitKind::Nau, 4, 2, UnitConfig::default())?;
    let mul = Unit::new(
        UnitKind::NacMulNmu,
        2,
        1,
        UnitConfig {
            epsilon: eps,
            ..UnitConfig::default()
        },
    )?;
    Ok((add, mul))
}

fn landscape_eval(add: &mut Unit, mul: &mut Unit, x: &Matrix, w1: f64, w2: f64) -> Result<f64> {
    add.set_param("W", Matrix::from_rows(&[[w1, w1, 0.0, 0.0], [w1, w1, w1, w1]]))?;
    mul.set_param("W", Matrix::from_rows(&[[w2, w2]]))?;
    let h = add.forward(x)?.0;
    let y = mul.forward(&h)?.0.get(0, 0);
    let rms = (y - LANDSCAPE_TARGET).abs();
    Ok(if rms.is_finite() { rms } else { f64::INFINITY })
}

/// RMS error of the tied two-layer model at `(w1, w2)`; non-finite values
/// become `+∞`.
pub fn landscape_loss(w1: f64, w2: f64, eps: f64) -> Result<f64> {
    let (mut add, mut mul) = landscape_units(eps)?;
    landscape_eval(&mut add, &mut mul, &Matrix::row_vector(&LANDSCAPE_INPUT), w1, w2)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LandscapeGrid {
    pub eps: f64,
    pub w1: Vec<f64>,
    pub w2: Vec<f64>,
    /// `loss[i][j]` at `(w1[i], w2[j])`.
    pub loss: Vec<Vec<f64>>,
}

impl LandscapeGrid {
    /// `(w1, w2, loss)` of the smallest cell; ties go to the first in row-major order.
    pub fn argmin(&self) -> (f64, f64, f64) {
        let mut best = (self.w1[0], self.w2[0], f64::INFINITY);
        for (i, row) in self.loss.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                if v < best.2 {
                    best = (self.w1[i], self.w2[j], v);
                }
            }
        }
        best
    }

    pub fn cells(&self) -> impl Iterator<Item = (f64, f64, f64)> + '_ {
        self.loss
            .iter()
            .enumerate()
            .flat_map(move |(i, row)| row.iter().enumerate().map(move |(j, &v)| (self.w1[i], self.w2[j], v)))
    }
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64).collect()
}

/// Evaluates the landscape on `resolution` evenly spaced points per axis,
/// endpoints included.
pub fn loss_landscape_grid(
    eps: f64,
    w1_range: (f64, f64),
    w2_range: (f64, f64),
    resolution: usize,
) -> Result<LandscapeGrid> {
    if resolution < 2 {
        return invalid(format!("resolution must be at least 2, got {resolution}"));
    }
    if !(eps > 0.0) {
        return invalid(format!("eps must be positive, got {eps}"));
    }
    let w1 = linspace(w1_range.0, w1_range.1, resolution);
    let w2 = linspace(w2_range.0, w2_range.1, resolution);
    let (mut add, mut mul) = landscape_units(eps)?;
    let x = Matrix::row_vector(&LANDSCAPE_INPUT);
    let loss = w1
        .iter()
        .map(|&a| w2.iter().map(|&b| landscape_eval(&mut add, &mut mul, &x, a, b)).collect())
        .collect::<Result<Vec<Vec<f64>>>>()?;
    Ok(LandscapeGrid { eps, w1, w2, loss })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_weight_variance_is_neutral() {
        for h in [1, 3, 10] {
            assert_eq!(nacmul_expectation_closed(0.0, 0.7, 1e-7, h), 1.0);
            assert_eq!(nacmul_variance_closed(0.0, 0.7, 1e-7, h), 0.0);
        }
    }

    #[test]
    fn nacmul_expectation_exceeds_one_at_zero_mean_input() {
        for var_w in [1e-3, 0.1, 1.0] {
            assert!(nacmul_expectation_closed(var_w, 0.0, 1e-7, 2) > 1.0);
        }
    }

    #[test]
    fn nacmul_variance_grows_as_eps_shrinks() {
        let eps = [1e-1, 1e-3, 1e-5, 1e-7, 1e-9];
        let fwd: Vec<f64> = eps.iter().map(|&e| nacmul_variance_closed(1e-3, 0.0, e, 2)).collect();
        assert!(fwd.windows(2).all(|w| w[1] > w[0]));
        let bwd: Vec<f64> = eps
            .iter()
            .map(|&e| nacmul_backward_variance_ratio(0.1, 0.0, 1.0, e, 2, 2))
            .collect();
        assert!(bwd.windows(2).all(|w| w[1] > 1e7 * w[0]));
    }

    #[test]
    fn nmu_closed_examples() {
        assert_eq!(nmu_moments_closed(0.3, 2.0, 1, 1).expectation, 0.5);
        assert_eq!(nmu_moments_closed(0.3, 2.0, 4, 1).expectation, 0.0625);
        for h in [1, 2, 5, 20] {
            let m = nmu_moments_closed(0.25, 1.0, h, 1);
            assert!((m.forward_variance - (1.0 - 0.25f64.powi(h as i32))).abs() < 1e-12);
        }
        let e: Vec<f64> = (1..30).map(|h| nmu_moments_closed(0.1, 1.0, h, 1).expectation).collect();
        assert!(e.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn moment_estimate_of_known_values() {
        let m = MomentEstimate::from_values(&[1.0, 2.0, 3.0, 4.0, f64::INFINITY]);
        assert_eq!((m.samples, m.overflow), (4, 1));
        assert_eq!(m.mean, 2.5);
        assert!((m.variance - 5.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_small_sample_counts() {
        let mut rng = RngStream::new(0);
        let r = mc_moments(
            UnitKind::Nmu,
            2,
            InputDistribution::Normal { mean: 0.0, sd: 1.0 },
            WeightDistribution::Uniform { lo: 0.0, hi: 1.0 },
            100,
            &mut rng,
        );
        assert!(r.is_err());
    }

    #[test]
    fn landscape_solution_and_shape() {
        assert!(landscape_loss(1.0, 1.0, 1e-7).unwrap() < 1e-5);
        assert!(landscape_loss(1.0, 1.0, 1.0).unwrap() > 1.0);
        let g = loss_landscape_grid(0.1, (-1.0, 2.0), (-1.0, 2.0), 7).unwrap();
        assert_eq!((g.w1.len(), g.w2.len(), g.cells().count()), (7, 7, 49));
        assert_eq!(g.w1[0], -1.0);
        assert_eq!(g.w1[6], 2.0);
        assert!(loss_landscape_grid(0.1, (-1.0, 2.0), (-1.0, 2.0), 1).is_err());
    }
}
