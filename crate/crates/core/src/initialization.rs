//! Initialization schemes: Glorot uniform, the `U[-r, r]` solve for the
//! `tanh(Ŵ)σ(M̂)` construction, and the NMU variance rules.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Matrix, RngStream};
use crate::units::{Unit, UnitKind};

/// Bracket searched by [`nac_r_solve`].
pub const NAC_R_BRACKET: (f64, f64) = (1e-6, 20.0);

/// Target variance used for a NAC-family layer whose Glorot target exceeds it.
pub const NAC_VARIANCE_CAP: f64 = 0.25;

/// `W ~ U[-a, a]`, `a = sqrt(6 / (fan_in + fan_out))`, shaped `fan_out x fan_in`.
pub fn glorot_uniform(rng: &mut RngStream, fan_in: usize, fan_out: usize) -> Matrix {
    let a = glorot_bound(fan_in, fan_out);
    uniform_matrix(rng, fan_out, fan_in, -a, a)
}

pub fn glorot_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

pub fn glorot_variance(fan_in: usize, fan_out: usize) -> f64 {
    2.0 / (fan_in + fan_out) as f64
}

fn uniform_matrix(rng: &mut RngStream, rows: usize, cols: usize, lo: f64, hi: f64) -> Matrix {
    let data = (0..rows * cols).map(|_| rng.uniform(lo, hi)).collect();
    Matrix::new(rows, cols, data).expect("length matches")
}

/// `Var[tanh(Ŵ)σ(M̂)]` for independent `Ŵ, M̂ ~ U[-r, r]`:
/// `(1/2r)(1 - tanh(r)/r)(r - tanh(r/2))`.
pub fn nac_weight_variance(r: f64) -> f64 {
    if r < 1e-4 {
        // (1/2r)(r²/3)(r/2) to leading order
        return r * r / 12.0;
    }
    (1.0 / (2.0 * r)) * (1.0 - r.tanh() / r) * (r - (r / 2.0).tanh())
}

/// Solves `nac_weight_variance(r) = target` by bisection on [`NAC_R_BRACKET`].
pub fn nac_r_solve(target_variance: f64) -> Result<f64> {
    let (lo, hi) = NAC_R_BRACKET;
    let (v_lo, v_hi) = (nac_weight_variance(lo), nac_weight_variance(hi));
    if !(target_variance > v_lo && target_variance < v_hi) {
        return Err(Error::UnreachableVariance {
            target: target_variance,
            lo: v_lo,
            hi: v_hi,
        });
    }
    let (mut a, mut b) = (lo, hi);
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        if nac_weight_variance(m) < target_variance {
            a = m;
        } else {
            b = m;
        }
        if b - a <= 4.0 * f64::EPSILON * b {
            break;
        }
    }
    Ok(0.5 * (a + b))
}

/// Distribution family for NMU weights.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, Default)]
pub enum NmuInit {
    /// `U[0, 1]`: mean ½, variance 1/12.
    #[default]
    Uniform,
    /// Mean ½ with the given variance: uniform `[½ - a, ½ + a]` up to 1/12,
    /// the two-point mixture `{½ - a, ½ + a}` above it (at most ¼).
    Variance(f64),
}

impl NmuInit {
    pub fn variance(self) -> f64 {
        match self {
            NmuInit::Uniform => 1.0 / 12.0,
            NmuInit::Variance(v) => v.min(0.25),
        }
    }
}

pub fn nmu_init(rng: &mut RngStream, in_dim: usize, out_dim: usize, mode: NmuInit) -> Result<Matrix> {
    match mode {
        NmuInit::Uniform => Ok(uniform_matrix(rng, out_dim, in_dim, 0.0, 1.0)),
        NmuInit::Variance(v) if !(v > 0.0) => Err(Error::InvalidConfig(format!(
            "NMU init variance must be positive, got {v}"
        ))),
        NmuInit::Variance(v) if v <= 1.0 / 12.0 => {
            let a = (3.0 * v).sqrt();
            Ok(uniform_matrix(rng, out_dim, in_dim, 0.5 - a, 0.5 + a))
        }
        NmuInit::Variance(v) => {
            let a = v.sqrt().min(0.5);
            let data = (0..in_dim * out_dim)
                .map(|_| if rng.next_f64() < 0.5 { 0.5 - a } else { 0.5 + a })
                .collect();
            Matrix::new(out_dim, in_dim, data)
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    Forward,
    Backward,
}

/// Weight variance that preserves the NMU's input variance (forward) or
/// gradient variance (backward), for zero-mean inputs and `E[W] = ½`.
pub fn nmu_required_variance(h_in: usize, h_out: usize, var_z: f64, direction: Direction) -> f64 {
    // ((1+V)^-H V + (4+4V)^-H)^(1/H) - ¼ and ((V+1)^(1-H) / H_out)^(1/H) - ¼,
    // factored so large H does not underflow
    let h = h_in as f64;
    match direction {
        Direction::Forward => (var_z + 0.25f64.powf(h)).powf(1.0 / h) / (1.0 + var_z) - 0.25,
        Direction::Backward => {
            (((1.0 - h) * var_z.ln_1p() - (h_out as f64).ln()) / h).exp() - 0.25
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, Default)]
pub struct InitOptions {
    pub nmu: NmuInit,
}

/// Range `r` for a NAC-family layer of the given fan: the Glorot variance,
/// capped at [`NAC_VARIANCE_CAP`].
pub fn nac_range_for(fan_in: usize, fan_out: usize) -> f64 {
    let target = glorot_variance(fan_in, fan_out).min(NAC_VARIANCE_CAP);
    nac_r_solve(target).expect("capped target is inside the bracket")
}

/// Fills every parameter of `unit` according to its kind. Biases start at zero;
/// gates use Glorot.
pub fn init_unit(unit: &mut Unit, rng: &mut RngStream, opts: &InitOptions) -> Result<()> {
    let (fan_in, fan_out) = (unit.in_dim(), unit.out_dim());
    let nac_r = || nac_range_for(fan_in, fan_out);
    let names: Vec<String> = unit.params().iter().map(|p| p.name.clone()).collect();
    let kind = unit.kind();
    for name in names {
        let base = name.rsplit('.').next().unwrap_or(&name).to_string();
        let value = match (kind, base.as_str()) {
            (_, "b") => Matrix::zeros(1, fan_out),
            (_, "G") => glorot_uniform(rng, fan_in, fan_out),
            (UnitKind::Linear | UnitKind::Relu | UnitKind::Relu6 | UnitKind::Nau, "W") => {
                glorot_uniform(rng, fan_in, fan_out)
            }
            (UnitKind::GatedNauNmu, "W") if name.starts_with("add.") => {
                glorot_uniform(rng, fan_in, fan_out)
            }
            (UnitKind::Nmu | UnitKind::NacMulNmu | UnitKind::GatedNauNmu, "W") => {
                nmu_init(rng, fan_in, fan_out, opts.nmu)?
            }
            // for NacMulSigma, σ(Ŵ) with Ŵ ~ U[-r, r] gives E[W] = ½
            (_, "W_hat" | "M_hat") => {
                let r = nac_r();
                uniform_matrix(rng, fan_out, fan_in, -r, r)
            }
            _ => {
                return Err(Error::InvalidInput(format!(
                    "no initialization rule for {kind} parameter '{name}'"
                )))
            }
        };
        unit.set_param(&name, value)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::units::UnitConfig;

    fn mean_var(xs: &[f64]) -> (f64, f64) {
        let n = xs.len() as f64;
        let m = xs.iter().sum::<f64>() / n;
        (m, xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0))
    }

    #[test]
    fn glorot_bound_for_equal_fans() {
        assert_eq!(glorot_bound(3, 3), 1.0);
    }

    #[test]
    fn glorot_variance_matches_target() {
        let mut rng = RngStream::new(11);
        let w = glorot_uniform(&mut rng, 100, 100);
        let mut all = w.into_data();
        for _ in 0..9 {
            all.extend(glorot_uniform(&mut rng, 100, 100).into_data());
        }
        let (_, v) = mean_var(&all);
        assert!((v - 0.01).abs() < 0.03 * 0.01, "variance {v}");
    }

    #[test]
    fn glorot_deterministic() {
        let a = glorot_uniform(&mut RngStream::new(5), 4, 3);
        let b = glorot_uniform(&mut RngStream::new(5), 4, 3);
        assert_eq!(a, b);
        assert_eq!(a.shape(), (3, 4));
    }

    #[test]
    fn nac_variance_vanishes_at_zero() {
        assert!(nac_weight_variance(1e-3) < 1e-7);
        assert!(nac_weight_variance(1e-5) >= 0.0);
        // both branches agree near the switch point
        let (a, b) = (nac_weight_variance(0.999e-4), nac_weight_variance(1.001e-4));
        assert!((a - b).abs() / b < 1e-2);
    }

    #[test]
    fn nac_r_round_trip() {
        for r0 in [0.5, 1.0, 2.0] {
            let v = nac_weight_variance(r0);
            let r = nac_r_solve(v).unwrap();
            assert!((r - r0).abs() < 1e-8, "{r} vs {r0}");
            assert!((nac_weight_variance(r) - v).abs() < 1e-10);
        }
    }

    #[test]
    fn nac_r_mc_at_one() {
        let mut rng = RngStream::new(3);
        let ws: Vec<f64> = (0..1_000_000)
            .map(|_| rng.uniform(-1.0, 1.0).tanh() * crate::numerics::sigmoid(rng.uniform(-1.0, 1.0)))
            .collect();
        let (_, v) = mean_var(&ws);
        let closed = nac_weight_variance(1.0);
        assert!((v - closed).abs() / closed < 0.02, "{v} vs {closed}");
    }

    #[test]
    fn nac_r_rejects_unreachable() {
        let err = nac_r_solve(0.6).unwrap_err();
        match err {
            Error::UnreachableVariance { hi, .. } => assert!(hi < 0.5 && hi > 0.4),
            other => panic!("unexpected {other:?}"),
        }
        assert!(nac_r_solve(0.0).is_err());
        assert!(nac_r_solve(-1.0).is_err());
    }

    #[test]
    fn nac_variance_monotone_on_bracket() {
        let mut prev = 0.0;
        for i in 1..=2000 {
            let v = nac_weight_variance(i as f64 * 0.01);
            assert!(v > prev);
            prev = v;
        }
    }

    #[test]
    fn nmu_uniform_mean_and_support() {
        let mut rng = RngStream::new(8);
        let w = nmu_init(&mut rng, 1000, 1000, NmuInit::Uniform).unwrap();
        assert!(w.data().iter().all(|&x| (0.0..=1.0).contains(&x)));
        let (m, _) = mean_var(w.data());
        assert!((m - 0.5).abs() < 0.002);
        let again = nmu_init(&mut RngStream::new(8), 1000, 1000, NmuInit::Uniform).unwrap();
        assert_eq!(w, again);
    }

    #[test]
    fn nmu_variance_modes() {
        for v in [0.02, 1.0 / 12.0, 0.15, 0.25] {
            let mut rng = RngStream::new(21);
            let w = nmu_init(&mut rng, 1000, 200, NmuInit::Variance(v)).unwrap();
            assert!(w.data().iter().all(|&x| (0.0..=1.0).contains(&x)));
            let (m, var) = mean_var(w.data());
            assert!((m - 0.5).abs() < 0.005, "mean {m}");
            assert!((var - v).abs() / v < 0.02, "var {var} vs {v}");
        }
    }

    #[test]
    fn nmu_required_variance_values() {
        let f1 = nmu_required_variance(1, 1, 1.0, Direction::Forward);
        assert!((f1 - 0.375).abs() < 1e-15);
        let mut prev = f64::INFINITY;
        for h in [1, 2, 4, 8, 16] {
            let v = nmu_required_variance(h, 1, 1.0, Direction::Forward);
            assert!(v < prev && v > 0.25);
            prev = v;
        }
        for h in 1..=20usize {
            for (vz, h_out) in [(0.3f64, 1usize), (1.0, 4), (2.5, 7)] {
                let hf = h as f64;
                let lit_f = ((1.0 + vz).powf(-hf) * vz + (4.0 + 4.0 * vz).powf(-hf)).powf(1.0 / hf) - 0.25;
                let lit_b = ((vz + 1.0f64).powf(1.0 - hf) / h_out as f64).powf(1.0 / hf) - 0.25;
                assert!((nmu_required_variance(h, h_out, vz, Direction::Forward) - lit_f).abs() < 1e-12);
                assert!((nmu_required_variance(h, h_out, vz, Direction::Backward) - lit_b).abs() < 1e-12);
            }
        }
        let big_f = nmu_required_variance(10_000, 1, 1.0, Direction::Forward);
        let big_b = nmu_required_variance(10_000, 1, 1.0, Direction::Backward);
        assert!((big_f - 0.25).abs() < 1e-3);
        assert!((big_b - 0.25).abs() < 1e-3);
    }

    #[test]
    fn init_unit_covers_every_kind() {
        for kind in UnitKind::ALL {
            for shared in [true, false] {
                let cfg = UnitConfig {
                    nalu_shared_weights: shared,
                    ..UnitConfig::default()
                };
                let mut u = Unit::new(kind, 5, 3, cfg).unwrap();
                init_unit(&mut u, &mut RngStream::new(1), &InitOptions::default()).unwrap();
                for p in u.params() {
                    assert!(p.value.all_finite());
                    if p.name != "b" {
                        assert!(p.value.data().iter().any(|&x| x != 0.0), "{kind} {}", p.name);
                    }
                }
            }
        }
    }

    #[test]
    fn nac_range_caps_large_targets() {
        let r = nac_range_for(2, 1);
        assert!((nac_weight_variance(r) - NAC_VARIANCE_CAP).abs() < 1e-10);
        let r = nac_range_for(100, 2);
        assert!((nac_weight_variance(r) - 2.0 / 102.0).abs() < 1e-10);
    }
}
