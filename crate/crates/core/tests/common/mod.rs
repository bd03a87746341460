#![allow(dead_code)]

use gpcausal::kernels::{Factors, Gneiting, IcmRbf, KernelFamily, KernelParams, RbfRbf};
use gpcausal::panel::{PanelData, PanelParts};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Panel with random coordinates in the unit square and normal outcomes.
/// The first `n_treated` units are treated.
pub fn random_panel(rng: &mut ChaCha8Rng, n_units: usize, n_times: usize, n_treated: usize, t_star: usize) -> PanelData {
    let coords = (0..n_units).map(|_| [rng.random::<f64>(), rng.random::<f64>()]).collect();
    let y = (0..n_units * n_times).map(|_| normal(rng)).collect();
    PanelData::new(PanelParts {
        n_units,
        n_times,
        y,
        treated_unit: (0..n_units).map(|i| i < n_treated).collect(),
        t_star,
        coords,
        ..Default::default()
    })
    .expect("valid random panel")
}

/// Regular `side × side` grid on the unit square.
pub fn grid_panel(side: usize, n_times: usize, treated: &[usize], t_star: usize) -> PanelData {
    let n = side * side;
    let coords = (0..n)
        .map(|i| [((i % side) as f64 + 0.5) / side as f64, ((i / side) as f64 + 0.5) / side as f64])
        .collect();
    PanelData::new(PanelParts {
        n_units: n,
        n_times,
        y: vec![0.0; n * n_times],
        treated_unit: (0..n).map(|i| treated.contains(&i)).collect(),
        t_star,
        coords,
        ..Default::default()
    })
    .expect("valid grid panel")
}

fn log_uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    (lo.ln() + (hi.ln() - lo.ln()) * rng.random::<f64>()).exp()
}

pub fn random_kernel(rng: &mut ChaCha8Rng, family: KernelFamily, n_units: usize) -> KernelParams {
    match family {
        KernelFamily::IcmRbf => {
            let j = rng.random_range(1..n_units.clamp(2, 4));
            let phi = DMatrix::from_fn(n_units, j, |_, _| normal(rng));
            KernelParams::IcmRbf(IcmRbf {
                tau2: 1.0,
                l_t: log_uniform(rng, 0.3, 5.0),
                rank_j: j,
                phi: Factors::Fixed(phi),
            })
        }
        KernelFamily::RbfRbf => KernelParams::RbfRbf(RbfRbf {
            tau2: log_uniform(rng, 0.1, 5.0),
            l_s: log_uniform(rng, 0.05, 2.0),
            l_t: log_uniform(rng, 0.3, 5.0),
        }),
        KernelFamily::Gneiting => KernelParams::Gneiting(random_gneiting(rng)),
    }
}

pub fn random_gneiting(rng: &mut ChaCha8Rng) -> Gneiting {
    Gneiting {
        tau2: log_uniform(rng, 0.1, 5.0),
        l_s: log_uniform(rng, 0.05, 2.0),
        l_t: log_uniform(rng, 0.3, 5.0),
        alpha: rng.random_range(0.05..=1.0),
        gamma: rng.random_range(0.05..=1.0),
        eta: rng.random_range(0.0..=1.0),
    }
}

pub fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
