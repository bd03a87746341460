//! Simulate one desk-scale panel per DGP and fit all three kernels to it.
//!
//! cargo run --release --example desk_fit -- [normal|poisson] [iters]

use std::time::Instant;

use gpcausal::causal::CounterfactualDraws;
use gpcausal::mcmc::{run_mcmc, SamplerConfig};
use gpcausal::simlab::{self, metrics, BiasDefinition, DgpLikelihood, DESK, DGP_SIGMA2};

fn main() -> gpcausal::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let lik = match args.get(1).map(String::as_str) {
        Some("poisson") => DgpLikelihood::Poisson,
        _ => DgpLikelihood::Normal { sigma2: DGP_SIGMA2 },
    };
    let iters: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(400);
    let sampler = SamplerConfig {
        iters,
        burn_in: iters / 2,
        ..SamplerConfig::default()
    };
    let study = simlab::study_config(DESK, lik, 1, sampler);
    for (d, dgp) in study.dgps.iter().enumerate() {
        let data = study.dataset(d, 0)?;
        let truth = data.truth_mis();
        for k in 0..study.fit_kernels.len() {
            let spec = study.fit_spec(d, k, 0);
            let start = Instant::now();
            let fit = run_mcmc(&data.panel, &spec)?;
            let secs = start.elapsed().as_secs_f64();
            let cf = CounterfactualDraws::from_chains(&fit)?;
            let m = metrics(&truth, &cf, BiasDefinition::PerCell)?;
            let worst = fit
                .rhat_report()?
                .into_iter()
                .max_by(|a, b| a.rhat.total_cmp(&b.rhat))
                .expect("at least one parameter");
            let acc: Vec<String> = fit.chains.iter().map(|c| format!("{:.2}", c.acceptance)).collect();
            println!(
                "dgp {:8} fit {:8} bias {:6.2}% mse {:8.4} cover {:.2} | worst R-hat {} {:.3} | acc [{}] | {:.1}s",
                dgp.name,
                spec.family.label(),
                m.percent_bias,
                m.mse,
                m.coverage,
                worst.name,
                worst.rhat,
                acc.join(" "),
                secs
            );
        }
    }
    Ok(())
}
