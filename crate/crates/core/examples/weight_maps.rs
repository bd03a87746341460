//! Donor weights implied by each kernel on the desk grid, printed as a map
//! of time-averaged weight per unit around one treated target.
//!
//! cargo run --release --example weight_maps -- [out_dir]

use std::fs::File;

use gpcausal::kernels::{Factors, Gneiting, IcmRbf, KernelParams, RbfRbf};
use gpcausal::mcmc::SamplerConfig;
use gpcausal::panel::PanelData;
use gpcausal::simlab::{study_config, DgpLikelihood, DESK, DGP_SIGMA2};
use gpcausal::weights::{panel_donor_weights, spearman, weight_summaries};
use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn print_map(panel: &PanelData, values: &[f64], target: usize) {
    let side = (panel.n_units() as f64).sqrt().round() as usize;
    for row in (0..side).rev() {
        let line: Vec<String> = (0..side)
            .map(|col| {
                let i = row * side + col;
                if i == target {
                    "  target".into()
                } else {
                    format!("{:8.4}", values[i])
                }
            })
            .collect();
        println!("  {}", line.join(" "));
    }
}

fn main() -> gpcausal::Result<()> {
    let out = std::env::args().nth(1);
    let study = study_config(DESK, DgpLikelihood::Normal { sigma2: DGP_SIGMA2 }, 1, SamplerConfig::default());
    let panel = study.dataset(1, 0)?.panel;
    let target = panel.treated_units().iter().position(|&t| t).expect("a treated unit");

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let phi = DMatrix::from_fn(panel.n_units(), 5, |_, _| {
        let z: f64 = StandardNormal.sample(&mut rng);
        z / 5f64.sqrt()
    });
    let kernels = [
        ("rbf l_s=0.3", KernelParams::RbfRbf(RbfRbf { tau2: 1.0, l_s: 0.3, l_t: 0.9 })),
        ("rbf l_s=0.9", KernelParams::RbfRbf(RbfRbf { tau2: 1.0, l_s: 0.9, l_t: 0.9 })),
        ("icm J=5", KernelParams::IcmRbf(IcmRbf { tau2: 1.0, l_t: 0.9, rank_j: 5, phi: Factors::Fixed(phi) })),
        (
            "gneiting",
            KernelParams::Gneiting(Gneiting { tau2: 1.0, l_s: 0.125, l_t: 0.57, alpha: 1.0, gamma: 1.0, eta: 0.5 }),
        ),
    ];
    for (k, (name, params)) in kernels.iter().enumerate() {
        let w = panel_donor_weights(&panel, params, DGP_SIGMA2)?;
        let maps = weight_summaries(&w, &panel, target)?;
        let rho = spearman(&maps.unit_average, &maps.distance);
        println!("{name}: Spearman(weight, distance) = {rho:.3}");
        print_map(&panel, &maps.unit_average, target);

        // Weight mass by donor time for the first post period.
        let (t, grid) = &maps.time_maps[0];
        let by_time: Vec<String> = (0..panel.n_times())
            .map(|s| format!("{:.3}", grid.iter().map(|row| row[s].abs()).sum::<f64>()))
            .collect();
        println!("  |weight| by donor time for target time {t}: {}\n", by_time.join(" "));

        if let Some(dir) = &out {
            std::fs::create_dir_all(dir)?;
            maps.write_unit_csv(&panel, File::create(format!("{dir}/unit_map_{k}.csv"))?)?;
            maps.write_time_csv(*t, File::create(format!("{dir}/time_map_{k}.csv"))?)?;
        }
    }
    Ok(())
}
