//! Posterior sampling for the panel GP models.
//!
//! Hyperparameters move on an unconstrained scale (log for scales and
//! variances, logit for parameters on the unit interval). Mean coefficients
//! are integrated out of the Gaussian part of the model and redrawn exactly
//! when predictions are made. Non-Gaussian likelihoods keep the latent
//! process explicit and update it by elliptical slice sampling around a
//! Laplace reference.

pub mod moves;
pub mod priors;
pub mod rhat;

mod dense;
mod icm;

use std::collections::HashMap;
use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::{CoefPrior, Likelihood};
use crate::kernels::{Geometry, Gneiting, KernelFamily, KernelParams, RbfRbf, SMOOTHNESS_FLOOR};
use crate::panel::{Cell, PanelData};

pub use priors::{log_prior, MeanValues, Prior, PriorSpec, Support};
pub use rhat::{converged, rhat, RHAT_THRESHOLD};

/// Mix a list of integers into one 64-bit seed (splitmix64 finalizer).
pub fn derive_seed(parts: &[u64]) -> u64 {
    let mut h: u64 = 0x9E37_79B9_7F4A_7C15;
    for &p in parts {
        h ^= p.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_add(h << 6).wrapping_add(h >> 2);
        let mut z = h;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        h = z ^ (z >> 31);
    }
    h
}

/// How kernel hyperparameters are updated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HyperMove {
    /// Block random-walk Metropolis, adapted during burn-in.
    #[default]
    AdaptiveMetropolis,
    /// One univariate slice update per hyperparameter.
    Slice,
}

fn default_latent_steps() -> usize {
    2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub chains: usize,
    /// Total iterations per chain, burn-in included.
    pub iters: usize,
    pub burn_in: usize,
    pub seed: u64,
    #[serde(default)]
    pub hyper_move: HyperMove,
    /// Elliptical slice moves of the latent process per iteration.
    #[serde(default = "default_latent_steps")]
    pub latent_steps: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            chains: 4,
            iters: 1000,
            burn_in: 500,
            seed: 20250829,
            hyper_move: HyperMove::AdaptiveMetropolis,
            latent_steps: default_latent_steps(),
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iters == 0 {
            return Err(Error::Config("iters must be positive".into()));
        }
        if self.chains == 0 {
            return Err(Error::Config("chains must be positive".into()));
        }
        if self.burn_in >= self.iters {
            return Err(Error::Config(format!(
                "burn_in ({}) must be below iters ({})",
                self.burn_in, self.iters
            )));
        }
        Ok(())
    }

    pub fn saved(&self) -> usize {
        self.iters - self.burn_in
    }
}

/// Everything needed to fit one model to one panel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSpec {
    pub family: KernelFamily,
    pub likelihood: Likelihood,
    pub priors: PriorSpec,
    pub sampler: SamplerConfig,
    /// Factor rank for ICM fits; defaults to `min(5, N - 1)`.
    #[serde(default)]
    pub rank_j: Option<usize>,
    /// Also draw leave-block-out predictions for treated pre-treatment cells.
    #[serde(default)]
    pub pretreatment: bool,
}

impl FitSpec {
    pub fn new(family: KernelFamily, likelihood: Likelihood, sampler: SamplerConfig) -> Self {
        FitSpec {
            family,
            likelihood,
            priors: PriorSpec::simulation(),
            sampler,
            rank_j: None,
            pretreatment: false,
        }
    }
}

/// Saved draws of one chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Chain {
    pub seed: u64,
    /// One row per saved iteration, columns as `ChainSet::param_names`.
    pub params: Vec<Vec<f64>>,
    /// Draws of `Y(0)` at the missing cells.
    pub counterfactual: Vec<Vec<f64>>,
    /// Draws of `E[Y(0)]` at the missing cells given the latent state.
    pub cf_expected: Vec<Vec<f64>>,
    /// Leave-block-out draws of `Y(0)` at the treated pre-treatment cells.
    pub pretreatment: Vec<Vec<f64>>,
    /// Acceptance rate of hyperparameter moves after burn-in.
    pub acceptance: f64,
}

/// Draws from all chains of one fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainSet {
    pub family: KernelFamily,
    pub likelihood: Likelihood,
    pub n_chains: usize,
    pub n_iter: usize,
    pub burn_in: usize,
    pub master_seed: u64,
    pub param_names: Vec<String>,
    pub mis_cells: Vec<Cell>,
    pub pre_cells: Vec<Cell>,
    pub chains: Vec<Chain>,
}

/// One line of a convergence report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RhatEntry {
    pub name: String,
    pub rhat: f64,
    pub converged: bool,
}

impl ChainSet {
    pub fn n_saved(&self) -> usize {
        self.chains.first().map_or(0, |c| c.params.len())
    }

    pub fn param_index(&self, name: &str) -> Option<usize> {
        self.param_names.iter().position(|n| n == name)
    }

    /// Per-chain draws of a named parameter.
    pub fn param_chains(&self, name: &str) -> Option<Vec<Vec<f64>>> {
        let k = self.param_index(name)?;
        Some(
            self.chains
                .iter()
                .map(|c| c.params.iter().map(|row| row[k]).collect())
                .collect(),
        )
    }

    pub fn pooled(&self, name: &str) -> Option<Vec<f64>> {
        self.param_chains(name).map(|c| c.into_iter().flatten().collect())
    }

    pub fn posterior_median(&self, name: &str) -> Option<f64> {
        let mut v = self.pooled(name)?;
        v.sort_by(f64::total_cmp);
        Some(rhat::median_sorted(&v))
    }

    /// Per-chain draws of the average counterfactual over the missing cells.
    pub fn counterfactual_mean_chains(&self) -> Vec<Vec<f64>> {
        self.chains
            .iter()
            .map(|c| {
                c.cf_expected
                    .iter()
                    .map(|row| row.iter().sum::<f64>() / row.len().max(1) as f64)
                    .collect()
            })
            .collect()
    }

    pub fn rhat(&self, name: &str) -> Result<f64> {
        let chains = self
            .param_chains(name)
            .ok_or_else(|| Error::Config(format!("unknown parameter `{name}`")))?;
        rhat::rhat(&chains)
    }

    /// R-hat for every parameter plus the mean counterfactual.
    pub fn rhat_report(&self) -> Result<Vec<RhatEntry>> {
        let mut out = Vec::new();
        for name in &self.param_names {
            let r = self.rhat(name)?;
            out.push(RhatEntry {
                name: name.clone(),
                rhat: r,
                converged: converged(r),
            });
        }
        if !self.mis_cells.is_empty() {
            let r = rhat::rhat(&self.counterfactual_mean_chains())?;
            out.push(RhatEntry {
                name: "mean_counterfactual".into(),
                rhat: r,
                converged: converged(r),
            });
        }
        Ok(out)
    }

    /// Pooled counterfactual draws, `M × |mis|`, chains in order.
    pub fn counterfactual_draws(&self) -> DMatrix<f64> {
        pooled_rows(self.chains.iter().map(|c| &c.counterfactual), self.mis_cells.len())
    }

    pub fn cf_expected_draws(&self) -> DMatrix<f64> {
        pooled_rows(self.chains.iter().map(|c| &c.cf_expected), self.mis_cells.len())
    }

    /// Pooled leave-block-out draws for treated pre-treatment cells.
    pub fn pretreatment_draws(&self) -> DMatrix<f64> {
        pooled_rows(self.chains.iter().map(|c| &c.pretreatment), self.pre_cells.len())
    }

    /// Write parameter draws as `chain,iter,name,value`.
    pub fn write_draws_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["chain", "iter", "name", "value"])?;
        for (ci, c) in self.chains.iter().enumerate() {
            for (k, row) in c.params.iter().enumerate() {
                let iter = (self.burn_in + k + 1).to_string();
                for (name, v) in self.param_names.iter().zip(row) {
                    wr.write_record([(ci + 1).to_string(), iter.clone(), name.clone(), format!("{v}")])?;
                }
            }
        }
        wr.flush()?;
        Ok(())
    }
}

fn pooled_rows<'a>(rows: impl Iterator<Item = &'a Vec<Vec<f64>>>, width: usize) -> DMatrix<f64> {
    let all: Vec<&Vec<f64>> = rows.flatten().collect();
    DMatrix::from_fn(all.len(), width, |r, c| all[r][c])
}

/// Shared, read-only inputs of a fit.
pub(crate) struct FitContext<'a> {
    pub panel: &'a PanelData,
    pub spec: &'a FitSpec,
    pub geom: Geometry,
    pub obs: Vec<Cell>,
    pub mis: Vec<Cell>,
    pub pre: Vec<Cell>,
    /// Position of each pre cell inside `obs`.
    pub pre_pos: Vec<usize>,
    /// Pre cells grouped by period: indices into `pre`.
    pub pre_blocks: Vec<Vec<usize>>,
    pub y_obs: DVector<f64>,
    pub log_offset_obs: DVector<f64>,
    pub log_offset_mis: DVector<f64>,
    pub log_offset_pre: DVector<f64>,
    pub h_obs: DMatrix<f64>,
    pub h_mis: DMatrix<f64>,
    pub h_pre: DMatrix<f64>,
    pub coef_names: Vec<String>,
    pub coef_prior: CoefPrior,
}

impl<'a> FitContext<'a> {
    fn new(panel: &'a PanelData, spec: &'a FitSpec) -> Result<Self> {
        let part = panel.partition();
        part.require_missing()?;
        let obs = part.obs;
        let mis = part.mis;
        let y_obs = DVector::from_iterator(obs.len(), obs.iter().map(|&c| panel.y_at(c)));
        spec.likelihood.check_outcomes(y_obs.as_slice())?;
        if let Likelihood::Normal { sigma2 } = spec.likelihood {
            if !(sigma2 > 0.0) {
                return Err(Error::Config("starting noise variance must be positive".into()));
            }
        }
        let pre = if spec.pretreatment { panel.treated_pre_cells() } else { Vec::new() };
        let index_of: HashMap<Cell, usize> = obs.iter().enumerate().map(|(k, &c)| (c, k)).collect();
        let pre_pos: Vec<usize> = pre.iter().map(|c| index_of[c]).collect();
        let mut pre_blocks: Vec<Vec<usize>> = vec![Vec::new(); panel.t0()];
        for (k, c) in pre.iter().enumerate() {
            pre_blocks[c.time].push(k);
        }
        pre_blocks.retain(|b| !b.is_empty());
        let design = panel.mean_design();
        let log_off = |cells: &[Cell]| {
            DVector::from_iterator(
                cells.len(),
                cells.iter().map(|&c| match spec.likelihood {
                    Likelihood::Poisson => panel.offset_at(c).ln(),
                    _ => 0.0,
                }),
            )
        };
        let p = design.ncols();
        let mut precision = DVector::zeros(p);
        let mut mean = DVector::zeros(p);
        for (j, name) in design.names.iter().enumerate() {
            let (prior, _) = spec.priors.get(name).expect("design names have priors");
            let (prec, m) = prior.as_gaussian()?;
            precision[j] = prec;
            mean[j] = m;
        }
        Ok(FitContext {
            geom: Geometry::from_panel(panel),
            h_obs: design.rows(panel, &obs),
            h_mis: design.rows(panel, &mis),
            h_pre: design.rows(panel, &pre),
            log_offset_obs: log_off(&obs),
            log_offset_mis: log_off(&mis),
            log_offset_pre: log_off(&pre),
            coef_names: design.names,
            coef_prior: CoefPrior { precision, mean },
            panel,
            spec,
            obs,
            mis,
            pre,
            pre_pos,
            pre_blocks,
            y_obs,
        })
    }
}

/// Unconstrained transform attached to each hyperparameter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum Transform {
    Log,
    Logit,
}

pub(crate) fn transform_of(name: &str) -> Transform {
    match name {
        "alpha" | "gamma" | "eta" => Transform::Logit,
        _ => Transform::Log,
    }
}

pub(crate) fn to_unconstrained(name: &str, x: f64) -> f64 {
    match transform_of(name) {
        Transform::Log => x.ln(),
        Transform::Logit => {
            let x = x.clamp(1e-9, 1.0 - 1e-9);
            (x / (1.0 - x)).ln()
        }
    }
}

/// Constrained value and log-Jacobian of the inverse transform.
pub(crate) fn from_unconstrained(name: &str, u: f64) -> (f64, f64) {
    match transform_of(name) {
        Transform::Log => (u.exp(), u),
        Transform::Logit => {
            let x = crate::gp::logistic(u);
            // log(x (1 - x)) computed stably.
            let lj = -crate::gp::softplus(u) - crate::gp::softplus(-u);
            (x, lj)
        }
    }
}

/// Kernel hyperparameter names for a family (ICM factors excluded).
pub(crate) fn kernel_hyper_names(family: KernelFamily) -> Vec<&'static str> {
    match family {
        KernelFamily::IcmRbf => vec!["l_t"],
        KernelFamily::RbfRbf => vec!["tau2", "l_s", "l_t"],
        KernelFamily::Gneiting => vec!["tau2", "l_s", "l_t", "alpha", "gamma", "eta"],
    }
}

/// Build kernel parameters from constrained values in `kernel_hyper_names` order.
pub(crate) fn kernel_from_values(family: KernelFamily, v: &[f64]) -> Option<KernelParams> {
    match family {
        KernelFamily::RbfRbf => Some(KernelParams::RbfRbf(RbfRbf {
            tau2: v[0],
            l_s: v[1],
            l_t: v[2],
        })),
        KernelFamily::Gneiting => {
            if v[3] < SMOOTHNESS_FLOOR || v[4] < SMOOTHNESS_FLOOR {
                return None;
            }
            Some(KernelParams::Gneiting(Gneiting {
                tau2: v[0],
                l_s: v[1],
                l_t: v[2],
                alpha: v[3],
                gamma: v[4],
                eta: v[5],
            }))
        }
        KernelFamily::IcmRbf => None,
    }
}

/// Starting value of a hyperparameter: its prior median, or a neutral value.
pub(crate) fn initial_value(priors: &PriorSpec, name: &str) -> f64 {
    let (p, s) = priors.get(name).expect("known hyperparameter");
    match p.median(s) {
        Some(m) if s.contains(m) && m > 0.0 && m.is_finite() => {
            if s.hi == 1.0 {
                m.clamp(0.01, 0.99)
            } else {
                m
            }
        }
        _ => {
            if s.hi == 1.0 {
                0.5
            } else {
                1.0
            }
        }
    }
}

/// Expected outcome from the linear predictor.
pub(crate) fn mean_scale(lik: &Likelihood, eta: f64) -> f64 {
    match lik {
        Likelihood::Normal { .. } => eta,
        Likelihood::Poisson => eta.exp(),
        Likelihood::Bernoulli => crate::gp::logistic(eta),
    }
}

/// Draw an outcome with the given expectation.
pub(crate) fn observe<R: rand::Rng + ?Sized>(lik: &Likelihood, expected: f64, sigma2: f64, rng: &mut R) -> f64 {
    use rand_distr::{Distribution, Poisson, StandardNormal};
    match lik {
        Likelihood::Normal { .. } => expected + sigma2.sqrt() * rng.sample::<f64, _>(StandardNormal),
        Likelihood::Poisson => {
            if expected <= 0.0 || !expected.is_finite() {
                return 0.0;
            }
            Poisson::new(expected).map(|d| d.sample(rng)).unwrap_or(expected)
        }
        Likelihood::Bernoulli => f64::from(u8::from(rng.random::<f64>() < expected)),
    }
}

/// Run all chains for one model. Chains execute in parallel and are merged
/// in chain order, so results depend only on the seed and configuration.
pub fn run_mcmc(panel: &PanelData, spec: &FitSpec) -> Result<ChainSet> {
    spec.sampler.validate()?;
    let ctx = FitContext::new(panel, spec)?;
    let seeds: Vec<u64> = (0..spec.sampler.chains)
        .map(|c| derive_seed(&[spec.sampler.seed, c as u64]))
        .collect();
    let results: Vec<Result<(Chain, Vec<String>)>> = seeds
        .par_iter()
        .map(|&s| match spec.family {
            KernelFamily::IcmRbf => icm::run_chain(&ctx, s),
            _ => dense::run_chain(&ctx, s),
        })
        .collect();
    let mut chains = Vec::with_capacity(results.len());
    let mut names = Vec::new();
    for r in results {
        let (c, n) = r?;
        names = n;
        chains.push(c);
    }
    Ok(ChainSet {
        family: spec.family,
        likelihood: spec.likelihood,
        n_chains: spec.sampler.chains,
        n_iter: spec.sampler.iters,
        burn_in: spec.sampler.burn_in,
        master_seed: spec.sampler.seed,
        param_names: names,
        mis_cells: ctx.mis.clone(),
        pre_cells: ctx.pre.clone(),
        chains,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sampler_config_json() {
        let c: SamplerConfig = serde_json::from_str(r#"{"chains":4,"iters":1000,"burn_in":500,"seed":20250829}"#).unwrap();
        assert_eq!(c, SamplerConfig::default());
        let zero = SamplerConfig { iters: 0, burn_in: 0, ..c };
        assert!(zero.validate().is_err());
    }

    #[test]
    fn transforms_invert() {
        for (name, x) in [("tau2", 0.7), ("eta", 0.2), ("alpha", 0.999)] {
            let u = to_unconstrained(name, x);
            assert!((from_unconstrained(name, u).0 - x).abs() < 1e-12);
        }
        let u = 0.3f64;
        let x = crate::gp::logistic(u);
        assert!((from_unconstrained("eta", u).1 - (x * (1.0 - x)).ln()).abs() < 1e-14);
    }

    #[test]
    fn seeds_differ() {
        assert_ne!(derive_seed(&[1, 0]), derive_seed(&[1, 1]));
        assert_ne!(derive_seed(&[1, 2]), derive_seed(&[2, 1]));
        assert_eq!(derive_seed(&[7, 3]), derive_seed(&[7, 3]));
    }
}
