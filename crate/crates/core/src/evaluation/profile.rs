//! Profile-likelihood confidence intervals on the mean of gamma and beta
//! models. The nuisance parameter (shape, or concentration) is re-maximized
//! for every candidate mean.

use statrs::distribution::{ContinuousCDF, Normal};
use statrs::function::gamma::{digamma, ln_gamma};

use crate::error::{Error, Result};

/// Samples exactly at 0 or 1 are moved this far inside before a beta fit.
pub const BETA_BOUNDARY_NUDGE: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProfileInterval {
    pub estimate: f64,
    pub lower: f64,
    pub upper: f64,
}

/// Likelihood-ratio cutoff: the `level` quantile of χ² with one degree of
/// freedom, computed as the square of the two-sided normal quantile.
pub fn chi2_cutoff(level: f64) -> f64 {
    let z = Normal::new(0.0, 1.0).expect("standard normal").inverse_cdf(0.5 + level / 2.0);
    z * z
}

fn check_level(level: f64) -> Result<()> {
    if level > 0.0 && level < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("confidence level must be in (0, 1), got {level}")))
    }
}

/// Root of a decreasing function on `(lo, hi)` searched in log space.
fn bisect_log<F: Fn(f64) -> f64>(f: F, mut lo: f64, mut hi: f64) -> f64 {
    for _ in 0..200 {
        let mid = (lo * hi).sqrt();
        if f(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi / lo - 1.0 < 1e-15 {
            break;
        }
    }
    (lo * hi).sqrt()
}

/// Finds the two points where `deficit(s) = cutoff` on either side of the
/// maximizer `s_hat`, within the open bounds of the (transformed) parameter.
fn endpoints<F: Fn(f64) -> f64>(deficit: F, s_hat: f64, cutoff: f64, lo_bound: f64, hi_bound: f64) -> (f64, f64) {
    let search = |bound: f64| {
        let mut inside = s_hat;
        let mut frac: f64 = 1e-3;
        let outside = loop {
            let cand = s_hat + frac.min(1.0) * (bound - s_hat);
            if deficit(cand) > cutoff {
                break cand;
            }
            if frac >= 1.0 {
                return bound;
            }
            inside = cand;
            frac *= 2.0;
        };
        let (mut inside, mut outside) = (inside, outside);
        for _ in 0..200 {
            let mid = 0.5 * (inside + outside);
            if mid == inside || mid == outside {
                break;
            }
            if deficit(mid) > cutoff {
                outside = mid;
            } else {
                inside = mid;
            }
        }
        0.5 * (inside + outside)
    };
    (search(lo_bound), search(hi_bound))
}

fn ensure_not_constant(samples: &[f64], what: &str) -> Result<()> {
    if samples.len() < 2 {
        return Err(Error::Degenerate(format!("{what} fit needs at least 2 samples, got {}", samples.len())));
    }
    let first = samples[0];
    if samples.iter().all(|&x| x == first) {
        return Err(Error::Degenerate(format!(
            "{what} fit is undefined: all {} samples equal {first}",
            samples.len()
        )));
    }
    Ok(())
}

struct GammaStats {
    n: f64,
    mean: f64,
    mean_ln: f64,
}

impl GammaStats {
    /// Shape maximizing the likelihood at mean `mu`: solves `ln k - ψ(k) = -C`.
    fn shape_at(&self, mu: f64) -> f64 {
        let c = self.mean_ln - mu.ln() + 1.0 - self.mean / mu;
        let target = -c;
        if !(target > 0.0) {
            return 1e12;
        }
        bisect_log(|k| k.ln() - digamma(k) - target, 1e-10, 1e12)
    }

    /// Log-likelihood with shape `k` and mean `mu` (scale `mu / k`).
    fn loglik(&self, k: f64, mu: f64) -> f64 {
        self.n * ((k - 1.0) * self.mean_ln - k * self.mean / mu - k * (mu / k).ln() - ln_gamma(k))
    }

    fn profile(&self, mu: f64) -> f64 {
        self.loglik(self.shape_at(mu), mu)
    }
}

/// ML gamma fit with a profile-likelihood interval for the distribution mean.
pub fn gamma_mean_interval(samples: &[f64], level: f64) -> Result<ProfileInterval> {
    check_level(level)?;
    if let Some(bad) = samples.iter().find(|&&x| !(x > 0.0 && x.is_finite())) {
        return Err(Error::InvalidInput(format!("gamma samples must be positive and finite, got {bad}")));
    }
    ensure_not_constant(samples, "gamma")?;
    let n = samples.len() as f64;
    let stats = GammaStats {
        n,
        mean: samples.iter().sum::<f64>() / n,
        mean_ln: samples.iter().map(|x| x.ln()).sum::<f64>() / n,
    };
    let mu_hat = stats.mean;
    let best = stats.profile(mu_hat);
    let cutoff = chi2_cutoff(level);
    // searched over ln μ
    let deficit = |s: f64| 2.0 * (best - stats.profile(s.exp()));
    let l = mu_hat.ln();
    let (lower, upper) = endpoints(deficit, l, cutoff, l - 20.0, l + 20.0);
    Ok(ProfileInterval {
        estimate: mu_hat,
        lower: lower.exp(),
        upper: upper.exp(),
    })
}

struct BetaStats {
    n: f64,
    mean_ln: f64,
    mean_ln1m: f64,
}

impl BetaStats {
    fn loglik(&self, mu: f64, kappa: f64) -> f64 {
        let (a, b) = (mu * kappa, (1.0 - mu) * kappa);
        self.n * (ln_gamma(kappa) - ln_gamma(a) - ln_gamma(b) + (a - 1.0) * self.mean_ln + (b - 1.0) * self.mean_ln1m)
    }

    /// Concentration maximizing the likelihood at mean `mu`; the likelihood is
    /// concave in `κ` so the score has a single root.
    fn kappa_at(&self, mu: f64) -> f64 {
        let score = |k: f64| {
            digamma(k) - mu * digamma(mu * k) - (1.0 - mu) * digamma((1.0 - mu) * k)
                + mu * self.mean_ln
                + (1.0 - mu) * self.mean_ln1m
        };
        bisect_log(score, 1e-10, 1e14)
    }

    fn profile(&self, mu: f64) -> f64 {
        self.loglik(mu, self.kappa_at(mu))
    }
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

fn expit(x: f64) -> f64 {
    crate::numerics::sigmoid(x)
}

/// ML beta fit with a profile-likelihood interval for the distribution mean.
pub fn beta_mean_interval(samples: &[f64], level: f64) -> Result<ProfileInterval> {
    check_level(level)?;
    if let Some(bad) = samples.iter().find(|&&x| !(0.0..=1.0).contains(&x)) {
        return Err(Error::InvalidInput(format!("beta samples must lie in [0, 1], got {bad}")));
    }
    let nudged: Vec<f64> = samples
        .iter()
        .map(|&x| x.clamp(BETA_BOUNDARY_NUDGE, 1.0 - BETA_BOUNDARY_NUDGE))
        .collect();
    ensure_not_constant(&nudged, "beta")?;
    let n = nudged.len() as f64;
    let stats = BetaStats {
        n,
        mean_ln: nudged.iter().map(|x| x.ln()).sum::<f64>() / n,
        mean_ln1m: nudged.iter().map(|x| (-x).ln_1p()).sum::<f64>() / n,
    };

    // golden-section search for the maximizing mean on the logit scale
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let prof = |s: f64| stats.profile(expit(s));
    let (mut a, mut b) = (logit(1e-15), logit(1.0 - 1e-15));
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (prof(c), prof(d));
    for _ in 0..200 {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = prof(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = prof(d);
        }
        if (b - a).abs() < 1e-12 {
            break;
        }
    }
    let s_hat = 0.5 * (a + b);
    let best = prof(s_hat);
    let cutoff = chi2_cutoff(level);
    let deficit = |s: f64| 2.0 * (best - prof(s));
    let (lo_s, hi_s) = endpoints(deficit, s_hat, cutoff, logit(1e-15), logit(1.0 - 1e-15));
    Ok(ProfileInterval {
        estimate: expit(s_hat),
        lower: expit(lo_s),
        upper: expit(hi_s),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cutoff_at_95_percent() {
        assert!((chi2_cutoff(0.95) - 3.841_458_820_694_124).abs() < 1e-6);
    }

    #[test]
    fn gamma_shape_solves_score_equation() {
        let xs = [1.0, 2.0, 4.5, 0.7, 3.3];
        let n = xs.len() as f64;
        let stats = GammaStats {
            n,
            mean: xs.iter().sum::<f64>() / n,
            mean_ln: xs.iter().map(|x: &f64| x.ln()).sum::<f64>() / n,
        };
        let k = stats.shape_at(stats.mean);
        let h = 1e-6 * k;
        let d = (stats.loglik(k + h, stats.mean) - stats.loglik(k - h, stats.mean)) / (2.0 * h);
        assert!(d.abs() < 1e-5, "score {d}");
    }

    #[test]
    fn degenerate_inputs() {
        assert!(matches!(gamma_mean_interval(&[2.0, 2.0, 2.0], 0.95), Err(Error::Degenerate(_))));
        assert!(matches!(gamma_mean_interval(&[2.0], 0.95), Err(Error::Degenerate(_))));
        assert!(gamma_mean_interval(&[2.0, -1.0], 0.95).is_err());
        assert!(matches!(beta_mean_interval(&[0.0, 0.0], 0.95), Err(Error::Degenerate(_))));
        assert!(beta_mean_interval(&[0.2, 1.5], 0.95).is_err());
    }
}
