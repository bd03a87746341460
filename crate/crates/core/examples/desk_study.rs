//! Replicated desk-scale study: every DGP crossed with every fitted kernel,
//! aggregated into a bias / MSE / coverage table.
//!
//! cargo run --release --example desk_study -- [normal|poisson] [replicates] [csv_out]

use std::fs::File;

use gpcausal::mcmc::SamplerConfig;
use gpcausal::simlab::{run_study, study_config, DgpLikelihood, DESK, DGP_SIGMA2};

fn main() -> gpcausal::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let lik = match args.get(1).map(String::as_str) {
        Some("poisson") => DgpLikelihood::Poisson,
        _ => DgpLikelihood::Normal { sigma2: DGP_SIGMA2 },
    };
    let reps = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(3);
    let sampler = SamplerConfig { iters: 400, burn_in: 200, ..SamplerConfig::default() };
    let res = run_study(&study_config(DESK, lik, reps, sampler))?;

    println!("{:<9} {:<9} {:>9} {:>10} {:>9} {:>6}", "dgp", "fit", "bias %", "mse", "coverage", "ok");
    for a in res.aggregate() {
        println!(
            "{:<9} {:<9} {:>9.2} {:>10.4} {:>9.3} {:>3}/{}",
            a.dgp,
            a.fit_kernel.label(),
            a.percent_bias,
            a.mse,
            a.coverage,
            a.n_ok,
            a.n_ok + a.n_failed
        );
    }
    if let Some(path) = args.get(3) {
        res.write_csv(File::create(path)?)?;
    }
    Ok(())
}
