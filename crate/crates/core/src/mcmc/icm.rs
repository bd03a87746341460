//! Gibbs sampler for the ICM model `f(i,t) = Σ_j Φ_ij G_j(t)`.
//!
//! Factor loadings carry independent N(0,1) priors and each latent series
//! `G_j` a Gaussian-process prior with the RBF time kernel. Updates cycle
//! through G, the rows of Φ, the mean coefficients, the noise variance and
//! the time length-scale.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use super::moves::{gaussian_block_update, laplace_reference, slice_step, LinearObs};
use super::priors::Prior;
use super::{from_unconstrained, initial_value, mean_scale, observe, to_unconstrained, Chain, FitContext};
use crate::error::{Error, Result};
use crate::gp::Likelihood;
use crate::kernels::k_time_rbf;
use crate::linalg::{self, Factor};
use crate::panel::Cell;

/// Diagonal jitter on the time kernel of the latent series.
const TIME_JITTER: f64 = 1e-6;

pub(crate) fn default_rank(n_units: usize) -> usize {
    5.min(n_units.saturating_sub(1)).max(1)
}

struct TimePrior {
    factor: Factor,
    precision: DMatrix<f64>,
}

fn time_prior(times: &[f64], l_t: f64) -> Option<TimePrior> {
    let t = times.len();
    let mut k = DMatrix::from_fn(t, t, |a, b| k_time_rbf(times[a], times[b], l_t));
    for i in 0..t {
        k[(i, i)] += TIME_JITTER;
    }
    let factor = linalg::factor_spd(&k).ok()?;
    let precision = factor.solve(&DMatrix::identity(t, t));
    Some(TimePrior { factor, precision })
}

/// `Σ_j log N(g_j | 0, K_t)` up to a constant.
fn series_log_density(g: &DMatrix<f64>, tp: &TimePrior) -> f64 {
    let mut s = 0.0;
    for j in 0..g.nrows() {
        let row: DVector<f64> = g.row(j).transpose();
        s += -0.5 * (tp.factor.log_det() + row.dot(&tp.factor.solve_vec(&row)));
    }
    s
}

fn latent_at(phi: &DMatrix<f64>, g: &DMatrix<f64>, c: Cell) -> f64 {
    phi.row(c.unit).dot(&g.column(c.time).transpose())
}

pub(super) fn run_chain(ctx: &FitContext<'_>, seed: u64) -> Result<(Chain, Vec<String>)> {
    let spec = ctx.spec;
    let cfg = &spec.sampler;
    let panel = ctx.panel;
    let n = panel.n_units();
    let t = panel.n_times();
    let j = spec.rank_j.unwrap_or_else(|| default_rank(n));
    if j == 0 || j > n {
        return Err(Error::Config(format!("ICM rank must lie in 1..={n}, got {j}")));
    }
    let times = panel.times().to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gaussian = spec.likelihood.is_normal();
    let steps = cfg.latent_steps.max(1);

    let mut l_t = initial_value(&spec.priors, "l_t");
    let mut sigma2 = match spec.likelihood {
        Likelihood::Normal { sigma2 } => sigma2,
        _ => 0.0,
    };
    let mut tp = time_prior(&times, l_t)
        .ok_or_else(|| Error::Numerical("time kernel is not positive definite".into()))?;
    let mut g = DMatrix::<f64>::zeros(j, t);
    let mut phi = DMatrix::from_fn(n, j, |_, _| 0.1 * rng.sample::<f64, _>(StandardNormal));
    let p = ctx.h_obs.ncols();
    // Start the coefficients at their conditional mode given f = 0; elliptical
    // slice moves cannot leave a start far in the tail of the Laplace reference.
    let mut beta = ctx.coef_prior.mean.clone();
    if p > 0 {
        let prec = DMatrix::from_diagonal(&ctx.coef_prior.precision);
        let c = ctx.coef_prior.precision.component_mul(&ctx.coef_prior.mean);
        let obs = LinearObs {
            z: Some(&ctx.h_obs),
            offset: &ctx.log_offset_obs,
            y: &ctx.y_obs,
            lik: spec.likelihood,
        };
        beta = laplace_reference(&prec, &c, &obs, &beta)?.mean;
    }

    // Observed cells of each unit, as positions in `ctx.obs`.
    let mut by_unit: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (k, c) in ctx.obs.iter().enumerate() {
        by_unit[c.unit].push(k);
    }
    let n_obs = ctx.obs.len();
    let gt_cols = j * t;
    let (sig_prior, sig_support) = spec.priors.get("sigma2").expect("sigma2 prior");
    let (lt_prior, lt_support) = spec.priors.get("l_t").expect("l_t prior");

    let mut names = vec!["l_t".to_string()];
    if gaussian {
        names.push("sigma2".into());
    }
    names.extend(ctx.coef_names.iter().cloned());
    let mut chain = Chain {
        seed,
        params: Vec::with_capacity(cfg.saved()),
        counterfactual: Vec::with_capacity(cfg.saved()),
        cf_expected: Vec::with_capacity(cfg.saved()),
        pretreatment: Vec::new(),
        acceptance: 1.0,
    };

    let lik_now = |s2: f64| match spec.likelihood {
        Likelihood::Normal { .. } => Likelihood::Normal { sigma2: s2 },
        other => other,
    };

    for iter in 0..cfg.iters {
        let lik = lik_now(sigma2);
        let h_beta = &ctx.h_obs * &beta;
        let base_offset = &h_beta + &ctx.log_offset_obs;

        // G: vec ordered series-major, column index j*T + t.
        {
            let mut z = DMatrix::zeros(n_obs, gt_cols);
            for (k, c) in ctx.obs.iter().enumerate() {
                for jj in 0..j {
                    z[(k, jj * t + c.time)] = phi[(c.unit, jj)];
                }
            }
            let mut prec = DMatrix::zeros(gt_cols, gt_cols);
            for jj in 0..j {
                prec.view_mut((jj * t, jj * t), (t, t)).copy_from(&tp.precision);
            }
            let x0 = DVector::from_iterator(gt_cols, (0..j).flat_map(|jj| (0..t).map(move |tt| (jj, tt))).map(|(jj, tt)| g[(jj, tt)]));
            let obs = LinearObs {
                z: Some(&z),
                offset: &base_offset,
                y: &ctx.y_obs,
                lik,
            };
            let x = gaussian_block_update(&x0, &prec, &DVector::zeros(gt_cols), &obs, steps, &mut rng)?;
            for jj in 0..j {
                for tt in 0..t {
                    g[(jj, tt)] = x[jj * t + tt];
                }
            }
        }

        // Rows of Φ.
        let eye = DMatrix::<f64>::identity(j, j);
        let zero_c = DVector::zeros(j);
        for (i, rows) in by_unit.iter().enumerate() {
            if rows.is_empty() {
                let z = DVector::from_fn(j, |_, _| rng.sample::<f64, _>(StandardNormal));
                phi.set_row(i, &z.transpose());
                continue;
            }
            let z = DMatrix::from_fn(rows.len(), j, |r, jj| g[(jj, ctx.obs[rows[r]].time)]);
            let off = DVector::from_fn(rows.len(), |r, _| base_offset[rows[r]]);
            let y = DVector::from_fn(rows.len(), |r, _| ctx.y_obs[rows[r]]);
            let obs = LinearObs {
                z: Some(&z),
                offset: &off,
                y: &y,
                lik,
            };
            let x0: DVector<f64> = phi.row(i).transpose();
            let x = gaussian_block_update(&x0, &eye, &zero_c, &obs, steps, &mut rng)?;
            phi.set_row(i, &x.transpose());
        }

        // Mean coefficients.
        let f_obs = DVector::from_iterator(n_obs, ctx.obs.iter().map(|&c| latent_at(&phi, &g, c)));
        if p > 0 {
            let prec = DMatrix::from_diagonal(&ctx.coef_prior.precision);
            let c = ctx.coef_prior.precision.component_mul(&ctx.coef_prior.mean);
            let off = &f_obs + &ctx.log_offset_obs;
            let obs = LinearObs {
                z: Some(&ctx.h_obs),
                offset: &off,
                y: &ctx.y_obs,
                lik,
            };
            beta = gaussian_block_update(&beta, &prec, &c, &obs, steps, &mut rng)?;
        }

        // Noise variance.
        if gaussian {
            let resid = &ctx.y_obs - &ctx.h_obs * &beta - &f_obs;
            let ss = resid.norm_squared();
            sigma2 = match sig_prior {
                Prior::InvGamma { a, b } => {
                    let shape = a + 0.5 * n_obs as f64;
                    let rate = b + 0.5 * ss;
                    let gam = Gamma::new(shape, 1.0 / rate).map_err(|e| Error::Numerical(e.to_string()))?;
                    1.0 / gam.sample(&mut rng)
                }
                _ => {
                    let mut logf = |u: f64| {
                        let s2 = u.exp();
                        sig_prior.log_density(s2, sig_support) + u - 0.5 * (n_obs as f64 * s2.ln() + ss / s2)
                    };
                    let u0 = sigma2.ln();
                    let l0 = logf(u0);
                    slice_step(u0, l0, 1.0, &mut logf, &mut rng).0.exp()
                }
            };
        }

        // Time length-scale given the latent series.
        {
            let mut cache: Option<(f64, TimePrior)> = None;
            let mut logf = |u: f64| {
                let (x, lj) = from_unconstrained("l_t", u);
                let lp = lt_prior.log_density(x, lt_support);
                if !lp.is_finite() {
                    return f64::NEG_INFINITY;
                }
                match time_prior(&times, x) {
                    Some(tpx) => {
                        let v = series_log_density(&g, &tpx) + lp + lj;
                        cache = Some((u, tpx));
                        v
                    }
                    None => f64::NEG_INFINITY,
                }
            };
            let u0 = to_unconstrained("l_t", l_t);
            let l0 = logf(u0);
            let (u1, _) = slice_step(u0, l0, 1.0, &mut logf, &mut rng);
            if u1 != u0 {
                let (cu, tpx) = cache.take().expect("slice evaluated the accepted point");
                debug_assert_eq!(cu, u1);
                l_t = from_unconstrained("l_t", u1).0;
                tp = tpx;
            }
        }

        if iter < cfg.burn_in {
            continue;
        }
        let mut row = vec![l_t];
        if gaussian {
            row.push(sigma2);
        }
        row.extend(beta.iter());
        chain.params.push(row);

        let mut cf = Vec::with_capacity(ctx.mis.len());
        let mut expected = Vec::with_capacity(ctx.mis.len());
        for (k, &c) in ctx.mis.iter().enumerate() {
            let eta = ctx.h_mis.row(k).transpose().dot(&beta) + latent_at(&phi, &g, c) + ctx.log_offset_mis[k];
            let m = mean_scale(&spec.likelihood, eta);
            expected.push(m);
            cf.push(observe(&spec.likelihood, m, sigma2, &mut rng));
        }
        chain.counterfactual.push(cf);
        chain.cf_expected.push(expected);
        if !ctx.pre.is_empty() {
            let pre: Vec<f64> = ctx
                .pre
                .iter()
                .enumerate()
                .map(|(k, &c)| {
                    let eta = ctx.h_pre.row(k).transpose().dot(&beta) + latent_at(&phi, &g, c) + ctx.log_offset_pre[k];
                    observe(&spec.likelihood, mean_scale(&spec.likelihood, eta), sigma2, &mut rng)
                })
                .collect();
            chain.pretreatment.push(pre);
        }
    }
    Ok((chain, names))
}
