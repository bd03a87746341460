//! Prior distributions for kernel hyperparameters, noise and mean terms.

use rand::Rng;
use rand_distr::{Beta as BetaDist, Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal as NormalDist};
use statrs::function::beta::ln_beta;
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::kernels::{KernelFamily, KernelParams};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// A univariate prior. Normal priors are truncated to the parameter's support.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "dist", rename_all = "snake_case")]
pub enum Prior {
    InvGamma { a: f64, b: f64 },
    Uniform { lo: f64, hi: f64 },
    Normal { mean: f64, sd: f64 },
    Beta { a: f64, b: f64 },
    Flat,
}

/// Support of a parameter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Support {
    pub lo: f64,
    pub hi: f64,
}

impl Support {
    pub const REAL: Support = Support {
        lo: f64::NEG_INFINITY,
        hi: f64::INFINITY,
    };
    pub const POSITIVE: Support = Support {
        lo: 0.0,
        hi: f64::INFINITY,
    };
    pub const UNIT: Support = Support { lo: 0.0, hi: 1.0 };

    pub fn contains(&self, x: f64) -> bool {
        x >= self.lo && x <= self.hi
    }
}

impl Prior {
    /// Log density at `x` for a parameter living on `support`; `-inf` outside.
    pub fn log_density(&self, x: f64, support: Support) -> f64 {
        if !x.is_finite() || !support.contains(x) {
            return f64::NEG_INFINITY;
        }
        match *self {
            Prior::InvGamma { a, b } => {
                if x <= 0.0 {
                    return f64::NEG_INFINITY;
                }
                a * b.ln() - ln_gamma(a) - (a + 1.0) * x.ln() - b / x
            }
            Prior::Uniform { lo, hi } => {
                if x < lo || x > hi {
                    f64::NEG_INFINITY
                } else {
                    -(hi - lo).ln()
                }
            }
            Prior::Normal { mean, sd } => {
                let z = (x - mean) / sd;
                let mass = truncated_mass(mean, sd, support);
                -0.5 * (LN_2PI + z * z) - sd.ln() - mass.ln()
            }
            Prior::Beta { a, b } => {
                if x <= 0.0 || x >= 1.0 {
                    // Endpoints only carry density when the exponent is zero.
                    let at0 = x <= 0.0 && a == 1.0;
                    let at1 = x >= 1.0 && b == 1.0;
                    if !(at0 || at1) {
                        return f64::NEG_INFINITY;
                    }
                }
                let l0 = if a == 1.0 { 0.0 } else { (a - 1.0) * x.ln() };
                let l1 = if b == 1.0 { 0.0 } else { (b - 1.0) * (1.0 - x).ln() };
                l0 + l1 - ln_beta(a, b)
            }
            Prior::Flat => 0.0,
        }
    }

    /// Median of the prior restricted to `support` (used for initialization).
    pub fn median(&self, support: Support) -> Option<f64> {
        match *self {
            Prior::InvGamma { a, b } => {
                // 1/X ~ Gamma(a, rate b); invert by bisection on the gamma cdf.
                let g = statrs::distribution::Gamma::new(a, b).ok()?;
                Some(1.0 / g.inverse_cdf(0.5))
            }
            Prior::Uniform { lo, hi } => Some(0.5 * (lo + hi)),
            Prior::Normal { mean, sd } => {
                let n = NormalDist::new(mean, sd).ok()?;
                let lo = if support.lo.is_finite() { n.cdf(support.lo) } else { 0.0 };
                let hi = if support.hi.is_finite() { n.cdf(support.hi) } else { 1.0 };
                Some(n.inverse_cdf(0.5 * (lo + hi)))
            }
            Prior::Beta { a, b } => {
                let d = statrs::distribution::Beta::new(a, b).ok()?;
                Some(d.inverse_cdf(0.5))
            }
            Prior::Flat => None,
        }
    }

    /// One draw restricted to `support`. Flat priors cannot be sampled.
    pub fn sample<R: Rng + ?Sized>(&self, support: Support, rng: &mut R) -> Result<f64> {
        match *self {
            Prior::InvGamma { a, b } => {
                let g = Gamma::new(a, 1.0 / b).map_err(|e| Error::Config(e.to_string()))?;
                Ok(1.0 / g.sample(rng))
            }
            Prior::Uniform { lo, hi } => Ok(lo + (hi - lo) * rng.random::<f64>()),
            Prior::Normal { mean, sd } => {
                if truncated_mass(mean, sd, support) < 1e-6 {
                    return Err(Error::Config("normal prior has negligible mass on the support".into()));
                }
                loop {
                    let z: f64 = rng.sample(StandardNormal);
                    let x = mean + sd * z;
                    if support.contains(x) {
                        return Ok(x);
                    }
                }
            }
            Prior::Beta { a, b } => {
                let d = BetaDist::new(a, b).map_err(|e| Error::Config(e.to_string()))?;
                Ok(d.sample(rng))
            }
            Prior::Flat => Err(Error::Config("cannot sample from a flat prior".into())),
        }
    }

    /// Precision and mean when used as a Gaussian prior on a mean coefficient.
    pub fn as_gaussian(&self) -> Result<(f64, f64)> {
        match *self {
            Prior::Flat => Ok((0.0, 0.0)),
            Prior::Normal { mean, sd } => Ok((1.0 / (sd * sd), mean)),
            other => Err(Error::Config(format!(
                "mean coefficients take flat or normal priors, got {other:?}"
            ))),
        }
    }
}

fn truncated_mass(mean: f64, sd: f64, support: Support) -> f64 {
    let n = NormalDist::new(mean, sd).expect("positive sd");
    let hi = if support.hi.is_finite() { n.cdf(support.hi) } else { 1.0 };
    let lo = if support.lo.is_finite() { n.cdf(support.lo) } else { 0.0 };
    hi - lo
}

/// Priors for every parameter a fit can involve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorSpec {
    pub tau2: Prior,
    pub sigma2: Prior,
    pub l_t: Prior,
    pub l_s: Prior,
    pub alpha: Prior,
    pub gamma: Prior,
    pub eta: Prior,
    pub mu0: Prior,
    pub delta: Prior,
    pub beta: Prior,
}

impl Default for PriorSpec {
    fn default() -> Self {
        PriorSpec::simulation()
    }
}

impl PriorSpec {
    /// Defaults used for the simulation studies.
    pub fn simulation() -> Self {
        let ig = Prior::InvGamma { a: 5.0, b: 5.0 };
        PriorSpec {
            tau2: ig,
            sigma2: ig,
            l_t: ig,
            l_s: ig,
            alpha: Prior::Uniform { lo: 0.0, hi: 1.0 },
            gamma: Prior::Uniform { lo: 0.0, hi: 1.0 },
            eta: Prior::Normal { mean: 0.5, sd: 0.1 },
            mu0: Prior::Flat,
            delta: Prior::Flat,
            beta: Prior::Flat,
        }
    }

    /// Defaults for the county-level mortality application (distances in km,
    /// two-week periods).
    pub fn application(family: KernelFamily) -> Self {
        let base = PriorSpec {
            tau2: Prior::Normal { mean: 0.0, sd: 1.0 },
            sigma2: Prior::InvGamma { a: 5.0, b: 5.0 },
            l_t: Prior::Normal { mean: 10.0, sd: 5.0 },
            l_s: Prior::Normal { mean: 300.0, sd: 100.0 },
            alpha: Prior::Beta { a: 1.0, b: 1.0 },
            gamma: Prior::Beta { a: 1.0, b: 1.0 },
            eta: Prior::Beta { a: 1.0, b: 1.0 },
            mu0: Prior::Flat,
            delta: Prior::Flat,
            beta: Prior::Flat,
        };
        match family {
            KernelFamily::Gneiting => PriorSpec {
                mu0: Prior::Normal { mean: 0.0, sd: 1.0 },
                ..base
            },
            KernelFamily::RbfRbf => base,
            KernelFamily::IcmRbf => PriorSpec {
                tau2: Prior::InvGamma { a: 5.0, b: 5.0 },
                delta: Prior::Normal { mean: 0.0, sd: 1.0 },
                ..base
            },
        }
    }

    pub fn get(&self, name: &str) -> Option<(Prior, Support)> {
        let pos = Support::POSITIVE;
        Some(match name {
            "tau2" => (self.tau2, pos),
            "sigma2" => (self.sigma2, pos),
            "l_t" => (self.l_t, pos),
            "l_s" => (self.l_s, pos),
            "alpha" => (self.alpha, Support::UNIT),
            "gamma" => (self.gamma, Support::UNIT),
            "eta" => (self.eta, Support::UNIT),
            "mu0" => (self.mu0, Support::REAL),
            _ if name.starts_with("delta") => (self.delta, Support::REAL),
            _ if name.starts_with("beta") => (self.beta, Support::REAL),
            _ => return None,
        })
    }
}

/// Values of the non-kernel parameters entering the prior.
#[derive(Debug, Clone, Default)]
pub struct MeanValues<'a> {
    pub sigma2: Option<f64>,
    pub mu0: Option<f64>,
    pub delta: &'a [f64],
    pub beta: &'a [f64],
}

/// Sum of prior log densities; `-inf` when any value is outside its support.
/// ICM factor entries are not included here (they carry N(0,1) priors inside
/// the factor sampler).
pub fn log_prior(params: &KernelParams, means: &MeanValues<'_>, spec: &PriorSpec) -> f64 {
    let mut lp = 0.0;
    let mut add = |name: &str, x: f64| {
        let (p, s) = spec.get(name).expect("known parameter");
        lp += p.log_density(x, s);
    };
    match params {
        KernelParams::IcmRbf(p) => add("l_t", p.l_t),
        KernelParams::RbfRbf(p) => {
            add("tau2", p.tau2);
            add("l_s", p.l_s);
            add("l_t", p.l_t);
        }
        KernelParams::Gneiting(g) => {
            add("tau2", g.tau2);
            add("l_s", g.l_s);
            add("l_t", g.l_t);
            add("alpha", g.alpha);
            add("gamma", g.gamma);
            add("eta", g.eta);
        }
    }
    if let Some(s2) = means.sigma2 {
        add("sigma2", s2);
    }
    if let Some(m) = means.mu0 {
        add("mu0", m);
    }
    for &d in means.delta {
        add("delta", d);
    }
    for &b in means.beta {
        add("beta", b);
    }
    lp
}
