//! Count panel with exposures and unit effects: fit a Gneiting Poisson model,
//! report the ATT per 100,000, the pre-treatment check and the separability
//! verdict.
//!
//! cargo run --release --example att_pipeline -- [seed]

use gpcausal::causal::{att_draws, pretreatment_fit, AttReport, CounterfactualDraws};
use gpcausal::diagnostics::{default_grids, estimate_fhat, verdict};
use gpcausal::gp::Likelihood;
use gpcausal::kernels::KernelFamily;
use gpcausal::mcmc::{run_mcmc, FitSpec, PriorSpec, SamplerConfig};
use gpcausal::simlab::{generate, pipeline_dgp};

fn main() -> gpcausal::Result<()> {
    let seed: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(1);
    let data = generate(&pipeline_dgp(seed))?;
    let panel = &data.panel;
    println!(
        "{} units ({} treated), {} periods, treatment from t = {}",
        panel.n_units(),
        panel.n_treated(),
        panel.n_times(),
        panel.t0() + 1
    );

    let sampler = SamplerConfig { iters: 400, burn_in: 200, seed: 500 + seed, ..SamplerConfig::default() };
    let mut spec = FitSpec::new(KernelFamily::Gneiting, Likelihood::Poisson, sampler);
    spec.priors = PriorSpec::simulation();
    spec.pretreatment = true;
    let fit = run_mcmc(panel, &spec)?;

    let cf = CounterfactualDraws::from_chains(&fit)?;
    let pre = pretreatment_fit(panel, &CounterfactualDraws::pretreatment_from_chains(&fit)?, true)?;
    let report = AttReport::new(&att_draws(panel, &cf, true)?, Some(pre));
    // No effect was simulated, so the ATT should straddle zero.
    println!(
        "ATT per 100,000: {:.2} [{:.2}, {:.2}]",
        report.att.median, report.att.lo, report.att.hi
    );
    report.write_csv(std::io::stdout())?;
    if let Some(p) = &report.pretreatment {
        println!("pre periods covering 0: {}/{}", p.periods_covering_zero, p.by_time.len());
    }

    let max_d = (0..panel.n_units())
        .flat_map(|a| (0..panel.n_units()).map(move |b| (a, b)))
        .map(|(a, b)| panel.distance(a, b))
        .fold(0.0, f64::max);
    let (h, u) = default_grids(max_d, panel.n_times());
    let v = verdict(&estimate_fhat(&fit, &h, &u)?);
    println!("separability: {} ({})", v.verdict, v.summary);
    for r in fit.rhat_report()?.iter().filter(|r| !r.converged).take(5) {
        println!("R-hat {} = {:.3}", r.name, r.rhat);
    }
    Ok(())
}
