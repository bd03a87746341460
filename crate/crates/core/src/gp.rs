//! Gaussian-process conditioning and observation models.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::linalg::{self, Factor};
use crate::panel::{Cell, PanelData};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Observation model for `Y(0)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "likelihood", rename_all = "snake_case")]
pub enum Likelihood {
    /// Gaussian noise. `sigma2` is the starting or fixed noise variance.
    Normal { sigma2: f64 },
    /// Counts with a log link and `log θ` offset.
    Poisson,
    /// Binary outcomes with a logit link.
    Bernoulli,
}

impl Likelihood {
    pub fn name(&self) -> &'static str {
        match self {
            Likelihood::Normal { .. } => "normal",
            Likelihood::Poisson => "poisson",
            Likelihood::Bernoulli => "bernoulli",
        }
    }

    pub fn is_normal(&self) -> bool {
        matches!(self, Likelihood::Normal { .. })
    }

    /// Reject outcomes outside the support of the model.
    pub fn check_outcomes(&self, y: &[f64]) -> Result<()> {
        match self {
            Likelihood::Normal { .. } => Ok(()),
            Likelihood::Poisson => match y.iter().find(|&&v| v < 0.0 || v.fract() != 0.0) {
                Some(v) => Err(Error::Panel(format!(
                    "Poisson outcomes must be non-negative integers, got {v}"
                ))),
                None => Ok(()),
            },
            Likelihood::Bernoulli => match y.iter().find(|&&v| v != 0.0 && v != 1.0) {
                Some(v) => Err(Error::Panel(format!("Bernoulli outcomes must be 0 or 1, got {v}"))),
                None => Ok(()),
            },
        }
    }
}

impl std::str::FromStr for Likelihood {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "normal" | "gaussian" => Ok(Likelihood::Normal { sigma2: 1.0 }),
            "poisson" => Ok(Likelihood::Poisson),
            "bernoulli" | "binary" => Ok(Likelihood::Bernoulli),
            _ => Err(Error::Config(format!("unknown likelihood `{s}`"))),
        }
    }
}

/// Log density of one observation given its linear predictor.
///
/// For Poisson the predictor already includes `log θ`.
pub fn log_obs(lik: &Likelihood, y: f64, eta: f64) -> f64 {
    match lik {
        Likelihood::Normal { sigma2 } => {
            let r = y - eta;
            -0.5 * (LN_2PI + sigma2.ln() + r * r / sigma2)
        }
        Likelihood::Poisson => y * eta - eta.exp() - ln_gamma(y + 1.0),
        Likelihood::Bernoulli => y * eta - softplus(eta),
    }
}

/// Gradient and negative second derivative of [`log_obs`] in `eta`.
pub fn log_obs_derivs(lik: &Likelihood, y: f64, eta: f64) -> (f64, f64) {
    match lik {
        Likelihood::Normal { sigma2 } => ((y - eta) / sigma2, 1.0 / sigma2),
        Likelihood::Poisson => {
            let m = eta.exp();
            (y - m, m)
        }
        Likelihood::Bernoulli => {
            let p = logistic(eta);
            (y - p, p * (1.0 - p))
        }
    }
}

pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Predictive distribution of the missing cells given the observed ones.
#[derive(Debug, Clone)]
pub struct NormalPosterior {
    pub mu: DVector<f64>,
    /// Covariance of the latent process at the missing cells.
    pub sigma: DMatrix<f64>,
    pub sigma2: f64,
    /// Factor of `K_obs + σ² I`.
    pub chol_obs: Factor,
}

impl NormalPosterior {
    /// Covariance of new outcomes at the missing cells, `Σ + σ² I`.
    pub fn outcome_covariance(&self) -> DMatrix<f64> {
        let mut s = self.sigma.clone();
        for i in 0..s.nrows() {
            s[(i, i)] += self.sigma2;
        }
        s
    }
}

/// `μ = K_mo (K_obs + σ²I)⁻¹ y` and `Σ = K_mis − K_mo (K_obs + σ²I)⁻¹ K_om`.
///
/// `y_obs` should already have any mean terms removed.
pub fn condition_normal(
    y_obs: &DVector<f64>,
    k_obs: &DMatrix<f64>,
    k_mis_obs: &DMatrix<f64>,
    k_mis: &DMatrix<f64>,
    sigma2: f64,
) -> Result<NormalPosterior> {
    let n_obs = k_obs.nrows();
    let n_mis = k_mis.nrows();
    if k_obs.ncols() != n_obs
        || y_obs.len() != n_obs
        || k_mis_obs.nrows() != n_mis
        || k_mis_obs.ncols() != n_obs
        || k_mis.ncols() != n_mis
    {
        return Err(Error::Dimension("covariance blocks are not conformable".into()));
    }
    if !(sigma2 >= 0.0) {
        return Err(Error::Config(format!("noise variance must be non-negative, got {sigma2}")));
    }
    let mut a = k_obs.clone();
    for i in 0..n_obs {
        a[(i, i)] += sigma2;
    }
    let chol_obs = linalg::factor_spd(&a)?;
    let alpha = chol_obs.solve_vec(y_obs);
    let mu = k_mis_obs * alpha;
    let x = chol_obs.solve(&k_mis_obs.transpose());
    let mut sigma = k_mis - k_mis_obs * x;
    symmetrize(&mut sigma);
    Ok(NormalPosterior {
        mu,
        sigma,
        sigma2,
        chol_obs,
    })
}

pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for j in 0..n {
        for i in (j + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// `n` draws from `N(mu, cov)` as rows of the returned matrix.
pub fn sample_mvn<R: Rng + ?Sized>(mu: &DVector<f64>, cov: &DMatrix<f64>, n: usize, rng: &mut R) -> DMatrix<f64> {
    let d = mu.len();
    let root = linalg::psd_sqrt(cov);
    let mut out = DMatrix::zeros(n, d);
    let mut z = DVector::zeros(d);
    for r in 0..n {
        for v in z.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
        let x = &root * &z;
        for c in 0..d {
            out[(r, c)] = mu[c] + x[c];
        }
    }
    out
}

/// Draws of the latent process at the missing cells, one per row.
pub fn sample_predictive(post: &NormalPosterior, n_draws: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_mvn(&post.mu, &post.sigma, n_draws, &mut rng)
}

/// Mean terms and latent process for every cell of a panel.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentState {
    /// Latent process, unit-major over all cells.
    pub f: DVector<f64>,
    pub mu0: f64,
    /// Covariate coefficients.
    pub beta: DVector<f64>,
    /// Unit fixed effects (empty when not used).
    pub delta: DVector<f64>,
}

impl LatentState {
    pub fn zeros(panel: &PanelData) -> Self {
        LatentState {
            f: DVector::zeros(panel.n_cells()),
            mu0: 0.0,
            beta: DVector::zeros(panel.n_covariates()),
            delta: DVector::zeros(if panel.unit_fixed_effects() { panel.n_units() } else { 0 }),
        }
    }

    /// `μ0 + δ_i + x_itᵀβ + f_it`, without any offset.
    pub fn linear_predictor(&self, panel: &PanelData, cell: Cell) -> f64 {
        let idx = panel.index(cell);
        let mut eta = self.mu0 + self.f[idx];
        if !self.delta.is_empty() {
            eta += self.delta[cell.unit];
        }
        if let Some(x) = panel.covariates() {
            for j in 0..x.ncols() {
                eta += x[(idx, j)] * self.beta[j];
            }
        }
        eta
    }

    /// Expected outcome of a cell on the data scale.
    pub fn mean(&self, panel: &PanelData, cell: Cell, lik: &Likelihood) -> f64 {
        let eta = self.linear_predictor(panel, cell);
        match lik {
            Likelihood::Normal { .. } => eta,
            Likelihood::Poisson => (eta + panel.offset_at(cell).ln()).exp(),
            Likelihood::Bernoulli => logistic(eta),
        }
    }
}

/// Log-likelihood of the observed (untreated) cells.
pub fn loglik(panel: &PanelData, state: &LatentState, lik: &Likelihood) -> Result<f64> {
    if state.f.len() != panel.n_cells()
        || state.beta.len() != panel.n_covariates()
        || !(state.delta.is_empty() || state.delta.len() == panel.n_units())
    {
        return Err(Error::Dimension("latent state does not match the panel".into()));
    }
    let obs = panel.partition().obs;
    let y_obs: Vec<f64> = obs.iter().map(|&c| panel.y_at(c)).collect();
    lik.check_outcomes(&y_obs)?;
    if let Likelihood::Normal { sigma2 } = lik {
        if !(*sigma2 > 0.0) {
            return Err(Error::Config("noise variance must be positive".into()));
        }
    }
    let mut total = 0.0;
    for (&c, &y) in obs.iter().zip(&y_obs) {
        let mut eta = state.linear_predictor(panel, c);
        if matches!(lik, Likelihood::Poisson) {
            eta += panel.offset_at(c).ln();
        }
        total += log_obs(lik, y, eta);
    }
    Ok(total)
}

/// Priors on the coefficients of the mean design: flat or independent normal.
#[derive(Debug, Clone)]
pub struct CoefPrior {
    /// Prior precision per coefficient (0 for flat).
    pub precision: DVector<f64>,
    pub mean: DVector<f64>,
}

impl CoefPrior {
    pub fn flat(p: usize) -> Self {
        CoefPrior {
            precision: DVector::zeros(p),
            mean: DVector::zeros(p),
        }
    }
}

/// Result of evaluating [`MeanMarginal`] at one vector.
#[derive(Debug, Clone)]
pub struct MarginalFit {
    /// Log density of `v` up to a constant that does not depend on `A`.
    pub log_density: f64,
    /// `A⁻¹ v`.
    pub a_inv_v: DVector<f64>,
    /// Posterior mean of β given `v`.
    pub beta_mean: DVector<f64>,
}

/// The Gaussian model `v ~ N(Hβ, A)` with the coefficients β integrated out.
///
/// With `Q = HᵀA⁻¹H + B⁻¹` and `b = HᵀA⁻¹v + B⁻¹b₀`, the marginal density is
/// proportional to `|A|^{-1/2} |Q|^{-1/2} exp(-(vᵀA⁻¹v − bᵀQ⁻¹b)/2)`.
/// Flat coefficients contribute zero prior precision.
#[derive(Debug, Clone)]
pub struct MeanMarginal {
    pub a: Factor,
    pub h: DMatrix<f64>,
    a_inv_h: DMatrix<f64>,
    q: Factor,
    prior_shift: DVector<f64>,
}

impl MeanMarginal {
    pub fn new(a: Factor, h: DMatrix<f64>, prior: &CoefPrior) -> Result<Self> {
        if h.nrows() != a.dim() || prior.precision.len() != h.ncols() {
            return Err(Error::Dimension("mean design does not match the covariance".into()));
        }
        let a_inv_h = a.solve(&h);
        let mut q = h.transpose() * &a_inv_h;
        for j in 0..q.nrows() {
            q[(j, j)] += prior.precision[j];
        }
        symmetrize(&mut q);
        let q = linalg::factor_spd(&q)?;
        let prior_shift = prior.precision.component_mul(&prior.mean);
        Ok(MeanMarginal {
            a,
            h,
            a_inv_h,
            q,
            prior_shift,
        })
    }

    pub fn eval(&self, v: &DVector<f64>) -> MarginalFit {
        let a_inv_v = self.a.solve_vec(v);
        let b = self.h.transpose() * &a_inv_v + &self.prior_shift;
        let beta_mean = self.q.solve_vec(&b);
        let quad = v.dot(&a_inv_v) - b.dot(&beta_mean);
        MarginalFit {
            log_density: -0.5 * (self.a.log_det() + self.q.log_det() + quad),
            a_inv_v,
            beta_mean,
        }
    }

    /// Draw β from its conditional `N(Q⁻¹b, Q⁻¹)`.
    pub fn draw_beta<R: Rng + ?Sized>(&self, fit: &MarginalFit, rng: &mut R) -> DVector<f64> {
        let p = fit.beta_mean.len();
        let z = DVector::from_fn(p, |_, _| rng.sample::<f64, _>(StandardNormal));
        let e = self
            .q
            .l()
            .transpose()
            .solve_upper_triangular(&z)
            .expect("precision factor is nonsingular");
        &fit.beta_mean + e
    }

    /// Precision `P` and linear term `c` with
    /// `log p(v) = −½ vᵀPv + cᵀv + const`.
    pub fn quadratic_form(&self) -> (DMatrix<f64>, DVector<f64>) {
        let n = self.a.dim();
        let a_inv = self.a.solve(&DMatrix::identity(n, n));
        let q_inv_ht_a_inv = self.q.solve(&self.a_inv_h.transpose());
        let mut p = a_inv - &self.a_inv_h * q_inv_ht_a_inv;
        symmetrize(&mut p);
        let c = &self.a_inv_h * self.q.solve_vec(&self.prior_shift);
        (p, c)
    }
}

/// One-shot version of [`MeanMarginal::eval`].
pub fn marginalize_mean(a: &Factor, h: &DMatrix<f64>, prior: &CoefPrior, v: &DVector<f64>) -> Result<MarginalFit> {
    Ok(MeanMarginal::new(a.clone(), h.clone(), prior)?.eval(v))
}
