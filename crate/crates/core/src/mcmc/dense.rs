//! Sampler for kernels assembled as dense matrices (RBF-RBF, Gneiting).

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::moves::{gess_step, laplace_reference, slice_step, AdaptiveMetropolis, LinearObs, Reference};
use super::priors::{log_prior, MeanValues};
use super::{
    from_unconstrained, initial_value, mean_scale, observe, kernel_from_values, kernel_hyper_names, to_unconstrained, Chain, FitContext,
    HyperMove,
};
use crate::error::{Error, Result};
use crate::gp::{symmetrize, Likelihood, MeanMarginal};
use crate::kernels::{KernelParams, KernelTable};
use crate::linalg;

/// Relative nugget on the latent covariance for non-Gaussian likelihoods.
const LATENT_NUGGET: f64 = 1e-6;

/// Model quantities at one hyperparameter value.
#[derive(Clone)]
struct Eval {
    values: Vec<f64>,
    table: KernelTable,
    sigma2: f64,
    mm: MeanMarginal,
    /// Log prior plus log-Jacobian of the transform.
    log_prior: f64,
    /// Full log target for the hyperparameter move.
    log_post: f64,
}

struct Model<'c, 'a> {
    ctx: &'c FitContext<'a>,
    names: Vec<&'static str>,
    gaussian: bool,
}

impl Model<'_, '_> {
    /// Evaluate at unconstrained `u`; `None` when outside the support or the
    /// covariance cannot be factored.
    fn eval(&self, u: &DVector<f64>, latent: Option<&DVector<f64>>) -> Option<Eval> {
        let mut values = Vec::with_capacity(u.len());
        let mut log_jac = 0.0;
        for (name, &ui) in self.names.iter().zip(u.iter()) {
            let (x, lj) = from_unconstrained(name, ui);
            if !x.is_finite() {
                return None;
            }
            values.push(x);
            log_jac += lj;
        }
        let n_kernel = self.names.len() - usize::from(self.gaussian);
        let kernel: KernelParams = kernel_from_values(self.ctx.spec.family, &values[..n_kernel])?;
        let sigma2 = if self.gaussian { values[n_kernel] } else { 0.0 };
        let lp = log_prior(
            &kernel,
            &MeanValues {
                sigma2: self.gaussian.then_some(sigma2),
                ..Default::default()
            },
            &self.ctx.spec.priors,
        );
        if !lp.is_finite() {
            return None;
        }
        let table = KernelTable::new(&self.ctx.geom, &kernel).ok()?;
        let mut a = table.square(&self.ctx.obs);
        let nugget = if self.gaussian {
            sigma2
        } else {
            LATENT_NUGGET * values[0]
        };
        for i in 0..a.nrows() {
            a[(i, i)] += nugget;
        }
        let factor = linalg::factor_spd(&a).ok()?;
        let mm = MeanMarginal::new(factor, self.ctx.h_obs.clone(), &self.ctx.coef_prior).ok()?;
        let target = latent.unwrap_or(&self.ctx.y_obs);
        let ll = mm.eval(target).log_density;
        if !ll.is_finite() {
            return None;
        }
        Some(Eval {
            values,
            table,
            sigma2,
            mm,
            log_prior: lp + log_jac,
            log_post: ll + lp + log_jac,
        })
    }
}

fn latent_obs<'a>(ctx: &'a FitContext<'_>) -> LinearObs<'a> {
    LinearObs {
        z: None,
        offset: &ctx.log_offset_obs,
        y: &ctx.y_obs,
        lik: ctx.spec.likelihood,
    }
}

fn initial_latent(ctx: &FitContext<'_>) -> DVector<f64> {
    DVector::from_fn(ctx.y_obs.len(), |i, _| {
        let y = ctx.y_obs[i];
        match ctx.spec.likelihood {
            Likelihood::Poisson => (y + 0.5).ln() - ctx.log_offset_obs[i],
            Likelihood::Bernoulli => {
                let p = (y + 0.5) / 2.0;
                (p / (1.0 - p)).ln()
            }
            Likelihood::Normal { .. } => y,
        }
    })
}

fn std_normal_vec<R: Rng>(n: usize, rng: &mut R) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal))
}

/// Latent state of a non-Gaussian fit: the process at the observed cells and
/// the Laplace reference at the current hyperparameters.
struct Latent {
    g: DVector<f64>,
    reference: Reference,
}

impl Model<'_, '_> {
    /// Laplace reference of the latent process given the hyperparameters in `e`.
    fn reference(&self, e: &Eval, obs: &LinearObs<'_>, warm: &DVector<f64>) -> Option<Reference> {
        let (p, c) = e.mm.quadratic_form();
        laplace_reference(&p, &c, obs, warm).ok()
    }

    /// Evaluate at `u` with the latent process written as `m(θ) + L(θ)⁻ᵀ ε`,
    /// `ε` held fixed. The returned `log_post` is the joint log density in
    /// `(u, ε)` coordinates, Jacobian included.
    fn eval_whitened(
        &self,
        u: &DVector<f64>,
        eps: &DVector<f64>,
        obs: &LinearObs<'_>,
        warm: &DVector<f64>,
    ) -> Option<(Eval, Latent)> {
        let mut e = self.eval(u, Some(warm))?;
        let reference = self.reference(&e, obs, warm)?;
        let g = reference.map(eps);
        let lp = e.mm.eval(&g).log_density + obs.log_lik(&g) + e.log_prior + reference.log_jacobian();
        if !lp.is_finite() {
            return None;
        }
        e.log_post = lp;
        Some((e, Latent { g, reference }))
    }
}

pub(super) fn run_chain(ctx: &FitContext<'_>, seed: u64) -> Result<(Chain, Vec<String>)> {
    let spec = ctx.spec;
    let cfg = &spec.sampler;
    let gaussian = spec.likelihood.is_normal();
    let mut names = kernel_hyper_names(spec.family);
    if gaussian {
        names.push("sigma2");
    }
    let model = Model { ctx, names: names.clone(), gaussian };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let obs_model = latent_obs(ctx);

    let mut u = DVector::from_iterator(
        names.len(),
        names.iter().map(|n| to_unconstrained(n, initial_value(&spec.priors, n))),
    );
    let init_err = || Error::Numerical("log posterior is not finite at the initial values".into());
    let mut latent: Option<Latent> = None;
    let mut cur = if gaussian {
        model.eval(&u, None).ok_or_else(init_err)?
    } else {
        let g0 = initial_latent(ctx);
        let e = model.eval(&u, Some(&g0)).ok_or_else(init_err)?;
        let reference = model.reference(&e, &obs_model, &g0).ok_or_else(init_err)?;
        latent = Some(Latent {
            g: reference.mean.clone(),
            reference,
        });
        e
    };

    let mut am = AdaptiveMetropolis::new(DVector::from_element(names.len(), 0.15));
    let mut accepted = 0usize;
    let mut proposals = 0usize;

    let mut param_names: Vec<String> = names.iter().map(|s| s.to_string()).collect();
    param_names.extend(ctx.coef_names.iter().cloned());
    let mut chain = Chain {
        seed,
        params: Vec::with_capacity(cfg.saved()),
        counterfactual: Vec::with_capacity(cfg.saved()),
        cf_expected: Vec::with_capacity(cfg.saved()),
        pretreatment: Vec::new(),
        acceptance: 0.0,
    };

    for iter in 0..cfg.iters {
        let in_burn = iter < cfg.burn_in;
        // Hyperparameters. For Normal outcomes the latent process is
        // integrated out; otherwise it moves with them through fixed ε.
        let eps = latent.as_ref().map(|l| l.reference.unmap(&l.g));
        if let (Some(l), Some(_)) = (&latent, &eps) {
            cur.log_post = cur.mm.eval(&l.g).log_density
                + obs_model.log_lik(&l.g)
                + cur.log_prior
                + l.reference.log_jacobian();
        }
        let evaluate = |v: &DVector<f64>, warm: Option<&Latent>| -> Option<(Eval, Option<Latent>)> {
            match (&eps, warm) {
                (Some(eps), Some(l)) => model
                    .eval_whitened(v, eps, &obs_model, &l.reference.mean)
                    .map(|(e, l)| (e, Some(l))),
                _ => model.eval(v, None).map(|e| (e, None)),
            }
        };
        match cfg.hyper_move {
            HyperMove::AdaptiveMetropolis => {
                let prop = am.propose(&u, &mut rng);
                let cand = evaluate(&prop, latent.as_ref());
                let a = match &cand {
                    Some((e, _)) => (e.log_post - cur.log_post).exp().min(1.0),
                    None => 0.0,
                };
                let take = rng.random::<f64>() < a;
                if take {
                    u = prop;
                    let (e, l) = cand.expect("accepted candidate exists");
                    cur = e;
                    if l.is_some() {
                        latent = l;
                    }
                }
                if in_burn {
                    am.adapt(&u, a);
                } else {
                    proposals += 1;
                    accepted += usize::from(take);
                }
            }
            HyperMove::Slice => {
                for k in 0..u.len() {
                    let mut last: Option<(f64, Eval, Option<Latent>)> = None;
                    let base = u.clone();
                    let warm = latent.as_ref();
                    let mut f = |x: f64| {
                        let mut v = base.clone();
                        v[k] = x;
                        match evaluate(&v, warm) {
                            Some((e, l)) => {
                                let lp = e.log_post;
                                last = Some((x, e, l));
                                lp
                            }
                            None => f64::NEG_INFINITY,
                        }
                    };
                    let (x1, _) = slice_step(u[k], cur.log_post, 1.0, &mut f, &mut rng);
                    if x1 != u[k] {
                        let (lx, e, l) = last.take().expect("slice accepted an evaluated point");
                        debug_assert_eq!(lx, x1);
                        u[k] = x1;
                        cur = e;
                        if l.is_some() {
                            latent = l;
                        }
                    }
                    if !in_burn {
                        proposals += 1;
                        accepted += 1;
                    }
                }
            }
        }
        if in_burn && iter + 1 == cfg.burn_in {
            am.freeze();
        }

        // Latent process given the hyperparameters, with the current Laplace
        // reference as the ellipse.
        if let Some(l) = latent.as_mut() {
            let mm = &cur.mm;
            let mut log_target = |v: &DVector<f64>| mm.eval(v).log_density + obs_model.log_lik(v);
            let mut lt = log_target(&l.g);
            for _ in 0..cfg.latent_steps {
                let (ng, nl) = gess_step(&l.g, lt, &l.reference, &mut log_target, &mut rng);
                l.g = ng;
                lt = nl;
            }
        }

        if in_burn {
            continue;
        }
        let (beta, cf, expected, pre) = predict(ctx, &cur, latent.as_ref().map(|l| &l.g), &mut rng)?;
        let mut row = cur.values.clone();
        row.extend(beta.iter());
        chain.params.push(row);
        chain.counterfactual.push(cf);
        chain.cf_expected.push(expected);
        if !ctx.pre.is_empty() {
            chain.pretreatment.push(pre);
        }
    }
    chain.acceptance = if proposals > 0 { accepted as f64 / proposals as f64 } else { 0.0 };
    Ok((chain, param_names))
}

/// Draw β, the missing cells and (optionally) leave-block-out pre cells.
#[allow(clippy::type_complexity)]
fn predict<R: Rng>(
    ctx: &FitContext<'_>,
    cur: &Eval,
    latent: Option<&DVector<f64>>,
    rng: &mut R,
) -> Result<(DVector<f64>, Vec<f64>, Vec<f64>, Vec<f64>)> {
    let lik = ctx.spec.likelihood;
    let target = latent.unwrap_or(&ctx.y_obs);
    let fit = cur.mm.eval(target);
    let beta = cur.mm.draw_beta(&fit, rng);
    let resid = target - &ctx.h_obs * &beta;
    let alpha = cur.mm.a.solve_vec(&resid);

    let k_mo = cur.table.block(&ctx.mis, &ctx.obs);
    let mut cov = cur.table.square(&ctx.mis) - &k_mo * cur.mm.a.solve(&k_mo.transpose());
    symmetrize(&mut cov);
    let root = linalg::psd_sqrt(&cov);
    let f_mis = &k_mo * &alpha + root * std_normal_vec(ctx.mis.len(), rng);
    let eta_mis = &ctx.h_mis * &beta + f_mis + &ctx.log_offset_mis;
    let mut cf = Vec::with_capacity(ctx.mis.len());
    let mut expected = Vec::with_capacity(ctx.mis.len());
    for &e in eta_mis.iter() {
        let m = mean_scale(&lik, e);
        expected.push(m);
        cf.push(observe(&lik, m, cur.sigma2, rng));
    }

    let mut pre = Vec::new();
    if !ctx.pre.is_empty() {
        // Columns of A⁻¹ at the pre cells give the precision blocks.
        let mut e = DMatrix::zeros(ctx.obs.len(), ctx.pre.len());
        for (k, &p) in ctx.pre_pos.iter().enumerate() {
            e[(p, k)] = 1.0;
        }
        let x = cur.mm.a.solve(&e);
        pre = vec![0.0; ctx.pre.len()];
        for block in &ctx.pre_blocks {
            let b = block.len();
            let q_bb = DMatrix::from_fn(b, b, |r, c| x[(ctx.pre_pos[block[r]], block[c])]);
            let qf = linalg::factor_spd(&q_bb)?;
            let a_b = DVector::from_fn(b, |r, _| alpha[ctx.pre_pos[block[r]]]);
            let shift = qf.solve_vec(&a_b);
            let z = std_normal_vec(b, rng);
            let noise = qf
                .l()
                .transpose()
                .solve_upper_triangular(&z)
                .expect("precision block is nonsingular");
            for (r, &k) in block.iter().enumerate() {
                let pos = ctx.pre_pos[k];
                let f_cond = resid[pos] - shift[r] + noise[r];
                let eta = ctx.h_pre.row(k).dot(&beta.transpose()) + f_cond + ctx.log_offset_pre[k];
                pre[k] = match lik {
                    // The Gaussian conditional already carries the noise variance.
                    Likelihood::Normal { .. } => eta,
                    _ => observe(&lik, mean_scale(&lik, eta), 0.0, rng),
                };
            }
        }
    }
    Ok((beta, cf, expected, pre))
}
