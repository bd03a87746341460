//! Simulated panels with known counterfactuals, and the study harness that
//! scores fitted kernels by bias, MSE and interval coverage.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::causal::{quantile_sorted, CounterfactualDraws};
use crate::error::{Error, Result};
use crate::gp::Likelihood;
use crate::kernels::{Factors, Geometry, Gneiting, IcmRbf, KernelFamily, KernelParams, KernelTable, RbfRbf};
use crate::linalg;
use crate::mcmc::{derive_seed, run_mcmc, FitSpec, PriorSpec, SamplerConfig};
use crate::panel::{Cell, PanelData, PanelParts};

/// Outcome model of a simulated panel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "likelihood", rename_all = "snake_case")]
pub enum DgpLikelihood {
    Normal { sigma2: f64 },
    Poisson,
}

impl DgpLikelihood {
    pub fn name(&self) -> &'static str {
        match self {
            DgpLikelihood::Normal { .. } => "normal",
            DgpLikelihood::Poisson => "poisson",
        }
    }

    /// Likelihood used when fitting; the Normal variance is a starting value.
    pub fn fit_likelihood(&self) -> Likelihood {
        match self {
            DgpLikelihood::Normal { .. } => Likelihood::Normal { sigma2: 1.0 },
            DgpLikelihood::Poisson => Likelihood::Poisson,
        }
    }
}

/// Per-unit exposures drawn log-uniformly and held fixed over time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OffsetRange {
    pub lo: f64,
    pub hi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DgpSpec {
    /// Units sit at cell centers of an `n_x × n_y` grid on the unit square.
    pub n_x: usize,
    pub n_y: usize,
    pub n_times: usize,
    pub n_treated: usize,
    /// First treated period, 1-based.
    pub t_star: usize,
    /// Explicit 0-based treated units; drawn uniformly when absent.
    #[serde(default)]
    pub treated: Option<Vec<usize>>,
    pub kernel: KernelParams,
    #[serde(flatten)]
    pub likelihood: DgpLikelihood,
    pub mu0: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub offsets: Option<OffsetRange>,
    /// Standard deviation of unit effects added to the linear predictor.
    #[serde(default)]
    pub unit_effect_sd: f64,
}

impl DgpSpec {
    pub fn n_units(&self) -> usize {
        self.n_x * self.n_y
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_units();
        if n < 2 || self.n_times == 0 {
            return Err(Error::Config("simulated panel needs at least 2 units and 1 period".into()));
        }
        if self.t_star == 0 || self.t_star > self.n_times {
            return Err(Error::Config(format!("t_star must lie in 1..={}", self.n_times)));
        }
        let n1 = self.treated.as_ref().map_or(self.n_treated, Vec::len);
        if n1 == 0 || n1 >= n {
            return Err(Error::Config("treated set must be non-empty and leave a control unit".into()));
        }
        if let Some(tr) = &self.treated {
            let mut s = tr.clone();
            s.sort_unstable();
            s.dedup();
            if s.len() != tr.len() || s.iter().any(|&i| i >= n) {
                return Err(Error::Config("treated units must be distinct and on the grid".into()));
            }
        }
        if let DgpLikelihood::Normal { sigma2 } = self.likelihood {
            if !(sigma2 > 0.0) {
                return Err(Error::Config("DGP noise variance must be positive".into()));
            }
        }
        if let Some(o) = self.offsets {
            if !(o.lo > 0.0 && o.hi >= o.lo) {
                return Err(Error::Config("offset range must be positive and ordered".into()));
            }
        }
        self.kernel.validate(Some(n))
    }

    /// Unit coordinates: cell centers, row by row.
    pub fn coords(&self) -> Vec<[f64; 2]> {
        let mut c = Vec::with_capacity(self.n_units());
        for y in 0..self.n_y {
            for x in 0..self.n_x {
                c.push([(x as f64 + 0.5) / self.n_x as f64, (y as f64 + 0.5) / self.n_y as f64]);
            }
        }
        c
    }
}

/// A simulated panel with the truth needed for scoring.
#[derive(Debug, Clone)]
pub struct SimData {
    pub panel: PanelData,
    /// Untreated outcome on every cell (equal to the panel outcome).
    pub y0: Vec<f64>,
    /// Latent GP draw on every cell.
    pub f: Vec<f64>,
    /// Expected outcome on every cell.
    pub mean: Vec<f64>,
    /// Kernel actually used (ICM factors filled in).
    pub kernel: KernelParams,
}

impl SimData {
    /// True `Y(0)` at the treated post-treatment cells.
    pub fn truth_mis(&self) -> Vec<f64> {
        self.panel
            .partition()
            .mis
            .iter()
            .map(|&c| self.y0[self.panel.index(c)])
            .collect()
    }

    /// `unit_id,time,y0,f,mean` with 1-based ids.
    pub fn write_truth_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["unit_id", "time", "y0", "f", "mean"])?;
        for i in 0..self.panel.n_units() {
            for t in 0..self.panel.n_times() {
                let k = self.panel.index(Cell::new(i, t));
                wr.write_record([
                    (i + 1).to_string(),
                    (t + 1).to_string(),
                    self.y0[k].to_string(),
                    self.f[k].to_string(),
                    self.mean[k].to_string(),
                ])?;
            }
        }
        wr.flush()?;
        Ok(())
    }
}

pub fn generate(spec: &DgpSpec) -> Result<SimData> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.n_units();
    let t_n = spec.n_times;
    let coords = spec.coords();

    let treated_units = match &spec.treated {
        Some(t) => t.clone(),
        None => {
            let mut v = index::sample(&mut rng, n, spec.n_treated).into_vec();
            v.sort_unstable();
            v
        }
    };
    let mut treated = vec![false; n];
    for &i in &treated_units {
        treated[i] = true;
    }

    let kernel = match &spec.kernel {
        KernelParams::IcmRbf(p) if p.phi == Factors::Learned => {
            let sd = (p.tau2 / p.rank_j as f64).sqrt();
            let phi = DMatrix::from_fn(n, p.rank_j, |_, _| sd * rng.sample::<f64, _>(StandardNormal));
            KernelParams::IcmRbf(IcmRbf {
                phi: Factors::Fixed(phi),
                ..p.clone()
            })
        }
        other => other.clone(),
    };

    let offsets: Option<Vec<f64>> = spec.offsets.map(|o| {
        let per_unit: Vec<f64> = (0..n)
            .map(|_| (o.lo.ln() + (o.hi.ln() - o.lo.ln()) * rng.random::<f64>()).exp())
            .collect();
        (0..n * t_n).map(|k| per_unit[k / t_n]).collect()
    });
    let unit_effects: Vec<f64> = (0..n)
        .map(|_| spec.unit_effect_sd * rng.sample::<f64, _>(StandardNormal))
        .collect();

    let times: Vec<f64> = (1..=t_n).map(|t| t as f64).collect();
    let geom = Geometry::new(&coords, &times);
    let table = KernelTable::new(&geom, &kernel)?;
    let cells: Vec<Cell> = (0..n * t_n).map(|k| Cell::new(k / t_n, k % t_n)).collect();
    let factor = linalg::factor_jittered(&table.square(&cells))?;
    let z = DVector::from_fn(n * t_n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let f = factor.colour(&z);

    let mut mean = Vec::with_capacity(n * t_n);
    let mut y = Vec::with_capacity(n * t_n);
    for k in 0..n * t_n {
        let eta = spec.mu0 + unit_effects[k / t_n] + f[k];
        match spec.likelihood {
            DgpLikelihood::Normal { sigma2 } => {
                mean.push(eta);
                let d = Normal::new(eta, sigma2.sqrt()).map_err(|e| Error::Numerical(e.to_string()))?;
                y.push(d.sample(&mut rng));
            }
            DgpLikelihood::Poisson => {
                let m = offsets.as_ref().map_or(1.0, |o| o[k]) * eta.exp();
                mean.push(m);
                let d = Poisson::new(m).map_err(|e| Error::Numerical(format!("Poisson mean {m}: {e}")))?;
                y.push(d.sample(&mut rng));
            }
        }
    }

    let panel = PanelData::new(PanelParts {
        n_units: n,
        n_times: t_n,
        y: y.clone(),
        treated_unit: treated,
        t_star: spec.t_star,
        coords,
        times: None,
        offset: offsets,
        covariates: None,
        unit_fixed_effects: spec.unit_effect_sd > 0.0,
        unit_labels: None,
    })?;
    Ok(SimData {
        panel,
        y0: y,
        f: f.iter().copied().collect(),
        mean,
        kernel,
    })
}

/// How percent bias aggregates over cells.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BiasDefinition {
    /// `100 · mean |ŷ − y| / |y|` over cells.
    #[default]
    PerCell,
    /// `100 · |Σ(ŷ − y)| / Σ|y|`.
    Aggregate,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub percent_bias: f64,
    pub mse: f64,
    pub coverage: f64,
    /// Cells left out of the per-cell bias because their truth is 0.
    pub excluded_zero: usize,
}

pub fn metrics(truth: &[f64], cf: &CounterfactualDraws, bias: BiasDefinition) -> Result<Metrics> {
    if truth.len() != cf.cells.len() {
        return Err(Error::Dimension(format!(
            "{} truth values for {} counterfactual cells",
            truth.len(),
            cf.cells.len()
        )));
    }
    let n = truth.len();
    let mut abs_rel = 0.0;
    let mut n_rel = 0usize;
    let mut sum_diff = 0.0;
    let mut sum_abs_truth = 0.0;
    let mut sq = 0.0;
    let mut covered = 0usize;
    for (k, &y) in truth.iter().enumerate() {
        let mut col: Vec<f64> = cf.draws.column(k).iter().copied().collect();
        let mean = col.iter().sum::<f64>() / col.len() as f64;
        col.sort_by(f64::total_cmp);
        if y != 0.0 {
            abs_rel += (mean - y).abs() / y.abs();
            n_rel += 1;
        }
        sum_diff += mean - y;
        sum_abs_truth += y.abs();
        sq += (mean - y).powi(2);
        if quantile_sorted(&col, 0.025) <= y && y <= quantile_sorted(&col, 0.975) {
            covered += 1;
        }
    }
    let percent_bias = match bias {
        BiasDefinition::PerCell => 100.0 * abs_rel / n_rel as f64,
        BiasDefinition::Aggregate => 100.0 * sum_diff.abs() / sum_abs_truth,
    };
    Ok(Metrics {
        percent_bias,
        mse: sq / n as f64,
        coverage: covered as f64 / n as f64,
        excluded_zero: n - n_rel,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedDgp {
    pub name: String,
    pub spec: DgpSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyConfig {
    pub replicates: usize,
    pub master_seed: u64,
    pub dgps: Vec<NamedDgp>,
    pub fit_kernels: Vec<KernelFamily>,
    pub sampler: SamplerConfig,
    #[serde(default = "PriorSpec::simulation")]
    pub priors: PriorSpec,
    #[serde(default)]
    pub bias: BiasDefinition,
    #[serde(default)]
    pub icm_rank: Option<usize>,
}

impl StudyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.replicates == 0 || self.dgps.is_empty() || self.fit_kernels.is_empty() {
            return Err(Error::Config("study needs replicates, DGPs and fitted kernels".into()));
        }
        self.sampler.validate()?;
        for d in &self.dgps {
            d.spec.validate()?;
        }
        Ok(())
    }

    /// Seed of the simulated dataset for one DGP and replicate.
    pub fn data_seed(&self, dgp: usize, replicate: usize) -> u64 {
        derive_seed(&[self.master_seed, dgp as u64, replicate as u64])
    }

    /// Seed of one fit.
    pub fn fit_seed(&self, dgp: usize, kernel: usize, replicate: usize) -> u64 {
        derive_seed(&[self.master_seed, dgp as u64, 1000 + kernel as u64, replicate as u64])
    }

    /// Dataset for one DGP and replicate.
    pub fn dataset(&self, dgp: usize, replicate: usize) -> Result<SimData> {
        let mut spec = self.dgps[dgp].spec.clone();
        spec.seed = self.data_seed(dgp, replicate);
        generate(&spec)
    }

    pub fn fit_spec(&self, dgp: usize, kernel: usize, replicate: usize) -> FitSpec {
        let mut sampler = self.sampler.clone();
        sampler.seed = self.fit_seed(dgp, kernel, replicate);
        FitSpec {
            family: self.fit_kernels[kernel],
            likelihood: self.dgps[dgp].spec.likelihood.fit_likelihood(),
            priors: self.priors.clone(),
            sampler,
            rank_j: self.icm_rank,
            pretreatment: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyRow {
    pub dgp: String,
    pub fit_kernel: KernelFamily,
    pub likelihood: String,
    pub replicate: usize,
    pub metrics: Option<Metrics>,
    /// Largest R-hat over the fit's reported quantities.
    pub max_rhat: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyResult {
    pub rows: Vec<StudyRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub dgp: String,
    pub fit_kernel: KernelFamily,
    pub likelihood: String,
    pub n_ok: usize,
    pub n_failed: usize,
    pub percent_bias: f64,
    pub mse: f64,
    pub coverage: f64,
}

fn run_one(config: &StudyConfig, d: usize, k: usize, r: usize) -> StudyRow {
    let dgp = &config.dgps[d];
    let outcome = (|| -> Result<(Metrics, f64)> {
        let data = config.dataset(d, r)?;
        let fit = run_mcmc(&data.panel, &config.fit_spec(d, k, r))?;
        let cf = CounterfactualDraws::from_chains(&fit)?;
        let m = metrics(&data.truth_mis(), &cf, config.bias)?;
        let max_rhat = if fit.n_chains >= 2 && fit.n_saved() >= 4 {
            fit.rhat_report()?
                .iter()
                .map(|e| e.rhat)
                .fold(f64::NEG_INFINITY, |a, b| if b.is_nan() || a.is_nan() { f64::NAN } else { a.max(b) })
        } else {
            f64::NAN
        };
        Ok((m, max_rhat))
    })();
    let (metrics, max_rhat, error) = match outcome {
        Ok((m, rh)) => (Some(m), Some(rh), None),
        Err(e) => (None, None, Some(e.to_string())),
    };
    StudyRow {
        dgp: dgp.name.clone(),
        fit_kernel: config.fit_kernels[k],
        likelihood: dgp.spec.likelihood.name().into(),
        replicate: r + 1,
        metrics,
        max_rhat,
        error,
    }
}

/// Fit every kernel to every replicate of every DGP. Jobs run in parallel;
/// rows come back in (DGP, kernel, replicate) order regardless.
pub fn run_study(config: &StudyConfig) -> Result<StudyResult> {
    config.validate()?;
    let mut jobs = Vec::new();
    for d in 0..config.dgps.len() {
        for k in 0..config.fit_kernels.len() {
            for r in 0..config.replicates {
                jobs.push((d, k, r));
            }
        }
    }
    let rows = jobs.par_iter().map(|&(d, k, r)| run_one(config, d, k, r)).collect();
    Ok(StudyResult { rows })
}

impl StudyResult {
    pub fn aggregate(&self) -> Vec<AggregateRow> {
        let mut out: Vec<AggregateRow> = Vec::new();
        for row in &self.rows {
            let pos = out
                .iter()
                .position(|a| a.dgp == row.dgp && a.fit_kernel == row.fit_kernel && a.likelihood == row.likelihood);
            let a = match pos {
                Some(p) => &mut out[p],
                None => {
                    out.push(AggregateRow {
                        dgp: row.dgp.clone(),
                        fit_kernel: row.fit_kernel,
                        likelihood: row.likelihood.clone(),
                        n_ok: 0,
                        n_failed: 0,
                        percent_bias: 0.0,
                        mse: 0.0,
                        coverage: 0.0,
                    });
                    out.last_mut().expect("just pushed")
                }
            };
            match &row.metrics {
                Some(m) => {
                    a.n_ok += 1;
                    a.percent_bias += m.percent_bias;
                    a.mse += m.mse;
                    a.coverage += m.coverage;
                }
                None => a.n_failed += 1,
            }
        }
        for a in &mut out {
            let n = a.n_ok as f64;
            if a.n_ok == 0 {
                a.percent_bias = f64::NAN;
                a.mse = f64::NAN;
                a.coverage = f64::NAN;
            } else {
                a.percent_bias /= n;
                a.mse /= n;
                a.coverage /= n;
            }
        }
        out
    }

    pub fn get(&self, dgp: &str, kernel: KernelFamily) -> Option<AggregateRow> {
        self.aggregate()
            .into_iter()
            .find(|a| a.dgp == dgp && a.fit_kernel == kernel)
    }

    /// Metrics of one (DGP, kernel) pair by replicate; failed fits are `None`.
    pub fn replicates(&self, dgp: &str, kernel: KernelFamily) -> Vec<Option<Metrics>> {
        self.rows
            .iter()
            .filter(|r| r.dgp == dgp && r.fit_kernel == kernel)
            .map(|r| r.metrics)
            .collect()
    }

    /// `dgp,fit_kernel,likelihood,replicate,percent_bias,mse,coverage,max_rhat,error`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record([
            "dgp",
            "fit_kernel",
            "likelihood",
            "replicate",
            "percent_bias",
            "mse",
            "coverage",
            "max_rhat",
            "error",
        ])?;
        let num = |v: Option<f64>| v.map_or_else(String::new, |x| x.to_string());
        for r in &self.rows {
            wr.write_record([
                r.dgp.clone(),
                r.fit_kernel.label().to_string(),
                r.likelihood.clone(),
                r.replicate.to_string(),
                num(r.metrics.map(|m| m.percent_bias)),
                num(r.metrics.map(|m| m.mse)),
                num(r.metrics.map(|m| m.coverage)),
                num(r.max_rhat),
                r.error.clone().unwrap_or_default(),
            ])?;
        }
        wr.flush()?;
        Ok(())
    }

    /// One row per (likelihood, DGP), one column block per fitted kernel.
    pub fn write_table_csv<W: Write>(&self, w: W) -> Result<()> {
        let agg = self.aggregate();
        let mut kernels: Vec<KernelFamily> = Vec::new();
        let mut groups: Vec<(String, String)> = Vec::new();
        for a in &agg {
            if !kernels.contains(&a.fit_kernel) {
                kernels.push(a.fit_kernel);
            }
            let g = (a.likelihood.clone(), a.dgp.clone());
            if !groups.contains(&g) {
                groups.push(g);
            }
        }
        let mut wr = csv::Writer::from_writer(w);
        let mut header = vec!["likelihood".to_string(), "dgp".to_string()];
        for k in &kernels {
            for m in ["percent_bias", "mse", "coverage", "n_failed"] {
                header.push(format!("{}_{m}", k.label()));
            }
        }
        wr.write_record(&header)?;
        for (lik, dgp) in &groups {
            let mut rec = vec![lik.clone(), dgp.clone()];
            for k in &kernels {
                match agg.iter().find(|a| &a.dgp == dgp && &a.likelihood == lik && a.fit_kernel == *k) {
                    Some(a) => rec.extend([
                        format!("{:.4}", a.percent_bias),
                        format!("{:.4}", a.mse),
                        format!("{:.4}", a.coverage),
                        a.n_failed.to_string(),
                    ]),
                    None => rec.extend(std::iter::repeat_n(String::new(), 4)),
                }
            }
            wr.write_record(&rec)?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// Noise variance of the Normal DGPs.
pub const DGP_SIGMA2: f64 = 0.05;

/// The three DGP kernels with the simulation-study parameters.
pub fn dgp_kernels() -> Vec<(String, KernelParams)> {
    vec![
        (
            "ICM".into(),
            KernelParams::IcmRbf(IcmRbf {
                tau2: 0.40,
                l_t: 0.90,
                rank_j: 5,
                phi: Factors::Learned,
            }),
        ),
        (
            "RBF".into(),
            KernelParams::RbfRbf(RbfRbf {
                tau2: 1.0,
                l_s: 0.30,
                l_t: 0.90,
            }),
        ),
        (
            "Gneiting".into(),
            KernelParams::Gneiting(Gneiting {
                tau2: 1.0,
                l_s: 0.125,
                l_t: 0.57,
                alpha: 1.0,
                gamma: 1.0,
                eta: 0.5,
            }),
        ),
    ]
}

/// Layout of a study grid.
#[derive(Debug, Clone, Copy)]
pub struct Design {
    pub side: usize,
    pub n_times: usize,
    pub n_treated: usize,
    pub t_star: usize,
}

pub const DESK: Design = Design {
    side: 5,
    n_times: 12,
    n_treated: 5,
    t_star: 7,
};

pub const FULL: Design = Design {
    side: 7,
    n_times: 15,
    n_treated: 10,
    t_star: 8,
};

pub fn study_config(design: Design, likelihood: DgpLikelihood, replicates: usize, sampler: SamplerConfig) -> StudyConfig {
    let dgps = dgp_kernels()
        .into_iter()
        .map(|(name, kernel)| NamedDgp {
            name,
            spec: DgpSpec {
                n_x: design.side,
                n_y: design.side,
                n_times: design.n_times,
                n_treated: design.n_treated,
                t_star: design.t_star,
                treated: None,
                kernel,
                likelihood,
                mu0: 4.0,
                seed: 0,
                offsets: None,
                unit_effect_sd: 0.0,
            },
        })
        .collect();
    StudyConfig {
        replicates,
        master_seed: sampler.seed,
        dgps,
        fit_kernels: KernelFamily::ALL.to_vec(),
        sampler,
        priors: PriorSpec::simulation(),
        bias: BiasDefinition::PerCell,
        icm_rank: None,
    }
}

/// Count panel with per-unit exposures and unit effects, the shape of the
/// application model: `log E[Y] = μ0 + δ_i + f + log θ`.
pub fn pipeline_dgp(seed: u64) -> DgpSpec {
    DgpSpec {
        n_x: 5,
        n_y: 5,
        n_times: 10,
        n_treated: 8,
        t_star: 10,
        treated: None,
        kernel: KernelParams::RbfRbf(RbfRbf {
            tau2: 0.1,
            l_s: 0.3,
            l_t: 2.0,
        }),
        likelihood: DgpLikelihood::Poisson,
        mu0: (5e-3f64).ln(),
        seed,
        offsets: Some(OffsetRange { lo: 5e3, hi: 5e4 }),
        unit_effect_sd: 0.3,
    }
}

pub const PRESETS: [&str; 6] = ["desk", "desk-poisson", "full-normal", "full-poisson", "illustration", "pipeline"];

/// Named study configurations.
pub fn preset(name: &str) -> Result<StudyConfig> {
    let short = SamplerConfig {
        iters: 400,
        burn_in: 200,
        ..SamplerConfig::default()
    };
    let normal = DgpLikelihood::Normal { sigma2: DGP_SIGMA2 };
    Ok(match name {
        "desk" => study_config(DESK, normal, 20, short),
        "desk-poisson" => study_config(DESK, DgpLikelihood::Poisson, 20, short),
        "full-normal" | "paper-normal" => study_config(FULL, normal, 100, SamplerConfig::default()),
        "full-poisson" | "paper-poisson" => study_config(FULL, DgpLikelihood::Poisson, 100, SamplerConfig::default()),
        "illustration" => {
            let mut c = study_config(
                Design {
                    n_treated: 4,
                    t_star: 9,
                    ..FULL
                },
                normal,
                1,
                SamplerConfig::default(),
            );
            // Four treated units spread over the grid.
            for d in &mut c.dgps {
                d.spec.treated = Some(vec![8, 12, 36, 40]);
            }
            c
        }
        "pipeline" => {
            let mut c = study_config(DESK, DgpLikelihood::Poisson, 10, short);
            c.dgps = vec![NamedDgp {
                name: "RBF-offsets".into(),
                spec: pipeline_dgp(0),
            }];
            c.fit_kernels = vec![KernelFamily::Gneiting];
            c
        }
        other => {
            return Err(Error::Config(format!(
                "unknown preset \"{other}\"; expected one of {}",
                PRESETS.join(", ")
            )))
        }
    })
}
