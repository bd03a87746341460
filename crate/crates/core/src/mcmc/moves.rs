//! Transition kernels: univariate slice sampling, adaptive random-walk
//! Metropolis, and elliptical slice sampling around a Laplace reference.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::gp::{log_obs, log_obs_derivs, symmetrize, Likelihood};
use crate::linalg::{self, Factor};

/// One slice-sampling update of a scalar with stepping out and shrinkage.
///
/// `logf_x0` is the target at `x0`. Returns the new point and its target.
pub fn slice_step<R: Rng + ?Sized>(
    x0: f64,
    logf_x0: f64,
    width: f64,
    logf: &mut dyn FnMut(f64) -> f64,
    rng: &mut R,
) -> (f64, f64) {
    let level = logf_x0 + rng.random::<f64>().ln();
    let mut lo = x0 - width * rng.random::<f64>();
    let mut hi = lo + width;
    let max_steps = 20;
    let mut j = (max_steps as f64 * rng.random::<f64>()).floor() as i32;
    let mut k = max_steps - 1 - j;
    while j > 0 && logf(lo) > level {
        lo -= width;
        j -= 1;
    }
    while k > 0 && logf(hi) > level {
        hi += width;
        k -= 1;
    }
    loop {
        let x1 = lo + (hi - lo) * rng.random::<f64>();
        let l1 = logf(x1);
        if l1 > level {
            return (x1, l1);
        }
        if x1 < x0 {
            lo = x1;
        } else {
            hi = x1;
        }
        if hi - lo < 1e-12 {
            return (x0, logf_x0);
        }
    }
}

/// Random-walk Metropolis whose proposal covariance and scale adapt during
/// burn-in and are frozen afterward.
#[derive(Debug, Clone)]
pub struct AdaptiveMetropolis {
    dim: usize,
    log_scale: f64,
    chol: DMatrix<f64>,
    n_seen: usize,
    mean: DVector<f64>,
    m2: DMatrix<f64>,
    target_accept: f64,
    adapting: bool,
    init_sd: DVector<f64>,
}

impl AdaptiveMetropolis {
    pub fn new(init_sd: DVector<f64>) -> Self {
        let dim = init_sd.len();
        let target_accept = if dim == 1 { 0.44 } else { 0.234 };
        AdaptiveMetropolis {
            dim,
            log_scale: 0.0,
            chol: DMatrix::from_diagonal(&init_sd),
            n_seen: 0,
            mean: DVector::zeros(dim),
            m2: DMatrix::zeros(dim, dim),
            target_accept,
            adapting: true,
            init_sd,
        }
    }

    pub fn propose<R: Rng + ?Sized>(&self, x: &DVector<f64>, rng: &mut R) -> DVector<f64> {
        let z = DVector::from_fn(self.dim, |_, _| rng.sample::<f64, _>(StandardNormal));
        x + &self.chol * z * self.log_scale.exp()
    }

    /// Record the post-move state and whether the move was accepted.
    pub fn adapt(&mut self, x: &DVector<f64>, accept_prob: f64) {
        if !self.adapting {
            return;
        }
        self.n_seen += 1;
        let n = self.n_seen as f64;
        let delta = x - &self.mean;
        self.mean += &delta / n;
        let delta2 = x - &self.mean;
        self.m2 += &delta * delta2.transpose();
        let gain = 1.0 / n.powf(0.6);
        self.log_scale += gain * (accept_prob - self.target_accept) * 2.0;
        self.log_scale = self.log_scale.clamp(-8.0, 4.0);
        if self.n_seen >= 4 * self.dim.max(5) && self.n_seen % 10 == 0 {
            let mut cov = &self.m2 / (n - 1.0);
            let base = 2.38 * 2.38 / self.dim as f64;
            for i in 0..self.dim {
                cov[(i, i)] += 1e-6 * self.init_sd[i].powi(2);
            }
            cov *= base;
            symmetrize(&mut cov);
            if let Some(c) = cov.cholesky() {
                self.chol = c.l();
            }
        }
    }

    pub fn freeze(&mut self) {
        self.adapting = false;
    }
}

/// Linear observation model `y ~ lik(Z x + offset)`; `z = None` means `Z = I`.
#[derive(Debug, Clone)]
pub struct LinearObs<'a> {
    pub z: Option<&'a DMatrix<f64>>,
    pub offset: &'a DVector<f64>,
    pub y: &'a DVector<f64>,
    pub lik: Likelihood,
}

impl LinearObs<'_> {
    fn eta(&self, x: &DVector<f64>) -> DVector<f64> {
        match self.z {
            Some(z) => z * x + self.offset,
            None => x + self.offset,
        }
    }

    pub fn log_lik(&self, x: &DVector<f64>) -> f64 {
        let eta = self.eta(x);
        eta.iter()
            .zip(self.y.iter())
            .map(|(&e, &y)| log_obs(&self.lik, y, e))
            .sum()
    }

    /// Gradient and negative Hessian of the log-likelihood in `x`.
    fn derivs(&self, x: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
        let eta = self.eta(x);
        let n = eta.len();
        let mut d1 = DVector::zeros(n);
        let mut d2 = DVector::zeros(n);
        for i in 0..n {
            let (g, w) = log_obs_derivs(&self.lik, self.y[i], eta[i]);
            d1[i] = g;
            d2[i] = w;
        }
        match self.z {
            Some(z) => {
                let grad = z.transpose() * &d1;
                let mut zw = z.clone();
                for (i, mut row) in zw.row_iter_mut().enumerate() {
                    row *= d2[i];
                }
                let mut hess = z.transpose() * zw;
                symmetrize(&mut hess);
                (grad, hess)
            }
            None => (d1, DMatrix::from_diagonal(&d2)),
        }
    }
}

/// Gaussian approximation `N(mean, precision⁻¹)` at the posterior mode.
#[derive(Debug, Clone)]
pub struct Reference {
    pub mean: DVector<f64>,
    pub precision: DMatrix<f64>,
    pub factor: Factor,
}

impl Reference {
    /// Draw from the reference distribution.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        &self.mean + self.noise(rng)
    }

    /// Zero-mean draw with covariance `precision⁻¹`.
    pub fn noise<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let z = DVector::from_fn(self.mean.len(), |_, _| rng.sample::<f64, _>(StandardNormal));
        self.factor
            .l()
            .transpose()
            .solve_upper_triangular(&z)
            .expect("reference precision is nonsingular")
    }

    /// `mean + L⁻ᵀ ε` where `precision = L Lᵀ`.
    pub fn map(&self, eps: &DVector<f64>) -> DVector<f64> {
        &self.mean
            + self
                .factor
                .l()
                .transpose()
                .solve_upper_triangular(eps)
                .expect("reference precision is nonsingular")
    }

    /// Inverse of [`Reference::map`].
    pub fn unmap(&self, x: &DVector<f64>) -> DVector<f64> {
        self.factor.l().transpose() * (x - &self.mean)
    }

    /// `log |∂ map / ∂ε| = −½ log|precision|`.
    pub fn log_jacobian(&self) -> f64 {
        -0.5 * self.factor.log_det()
    }

    fn log_kernel(&self, x: &DVector<f64>) -> f64 {
        let d = x - &self.mean;
        -0.5 * d.dot(&(&self.precision * &d))
    }
}

/// Newton iterations for the mode of `−½ xᵀPx + cᵀx + log L(x)`.
pub fn laplace_reference(
    p: &DMatrix<f64>,
    c: &DVector<f64>,
    obs: &LinearObs<'_>,
    start: &DVector<f64>,
) -> Result<Reference> {
    let objective = |x: &DVector<f64>| -0.5 * x.dot(&(p * x)) + c.dot(x) + obs.log_lik(x);
    let mut x = start.clone();
    let mut fx = objective(&x);
    for _ in 0..100 {
        let (g_lik, w) = obs.derivs(&x);
        let grad = c - p * &x + g_lik;
        let mut h = p + w;
        symmetrize(&mut h);
        let hf = linalg::factor_spd(&h)?;
        let step = hf.solve_vec(&grad);
        let mut t = 1.0;
        let mut improved = false;
        for _ in 0..30 {
            let cand = &x + &step * t;
            let fc = objective(&cand);
            if fc.is_finite() && fc >= fx - 1e-12 * fx.abs().max(1.0) {
                x = cand;
                fx = fc;
                improved = true;
                break;
            }
            t *= 0.5;
        }
        let size = step.amax() * t;
        if !improved || size < 1e-9 {
            break;
        }
    }
    if !fx.is_finite() {
        return Err(Error::Numerical("Laplace approximation diverged".into()));
    }
    let (_, w) = obs.derivs(&x);
    let mut precision = p + w;
    symmetrize(&mut precision);
    let factor = linalg::factor_spd(&precision)?;
    Ok(Reference {
        mean: x,
        precision,
        factor,
    })
}

/// Elliptical slice sampling with the reference Gaussian as the ellipse.
///
/// `log_target` must be the full (unnormalized) log density of `x`; the
/// reference only shapes the proposals, so the chain stays exact for any
/// fixed reference.
pub fn gess_step<R: Rng + ?Sized>(
    x: &DVector<f64>,
    log_target_x: f64,
    reference: &Reference,
    log_target: &mut dyn FnMut(&DVector<f64>) -> f64,
    rng: &mut R,
) -> (DVector<f64>, f64) {
    let ratio = |t: f64, r: &Reference, v: &DVector<f64>| t - r.log_kernel(v);
    let level = ratio(log_target_x, reference, x) + rng.random::<f64>().ln();
    let nu = reference.noise(rng);
    let centred = x - &reference.mean;
    let mut theta = rng.random::<f64>() * std::f64::consts::TAU;
    let mut lo = theta - std::f64::consts::TAU;
    let mut hi = theta;
    for _ in 0..200 {
        let cand = &reference.mean + &centred * theta.cos() + &nu * theta.sin();
        let lt = log_target(&cand);
        if lt.is_finite() && ratio(lt, reference, &cand) > level {
            return (cand, lt);
        }
        if theta < 0.0 {
            lo = theta;
        } else {
            hi = theta;
        }
        theta = lo + (hi - lo) * rng.random::<f64>();
    }
    (x.clone(), log_target_x)
}

/// Update a block with Gaussian prior `exp(−½ xᵀPx + cᵀx)` and observations
/// linear in the block. Gaussian observations get an exact conjugate draw;
/// others get `n_steps` elliptical slice moves around the Laplace reference.
pub fn gaussian_block_update<R: Rng + ?Sized>(
    x: &DVector<f64>,
    p: &DMatrix<f64>,
    c: &DVector<f64>,
    obs: &LinearObs<'_>,
    n_steps: usize,
    rng: &mut R,
) -> Result<DVector<f64>> {
    let reference = laplace_reference(p, c, obs, x)?;
    if obs.lik.is_normal() {
        return Ok(reference.draw(rng));
    }
    let mut log_target = |v: &DVector<f64>| -0.5 * v.dot(&(p * v)) + c.dot(v) + obs.log_lik(v);
    let mut cur = x.clone();
    let mut lt = log_target(&cur);
    for _ in 0..n_steps {
        let (nx, nl) = gess_step(&cur, lt, &reference, &mut log_target, rng);
        cur = nx;
        lt = nl;
    }
    Ok(cur)
}
