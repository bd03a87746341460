//! Separability curves of the Gneiting kernel for a few interaction
//! strengths, plus a functional boxplot over jittered parameter sets.

use gpcausal::diagnostics::{boxplot_of, default_grids, separability_function};
use gpcausal::kernels::Gneiting;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> gpcausal::Result<()> {
    let (h, u) = default_grids(0.5, 12);
    let base = Gneiting { tau2: 1.0, l_s: 0.125, l_t: 0.57, alpha: 1.0, gamma: 1.0, eta: 0.5 };

    for eta in [0.0, 0.25, 0.5, 1.0] {
        let c = separability_function(&Gneiting { eta, ..base }, &h, &u)?;
        let max = c.curves.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
        // The curve at the largest distance shows the lag profile best.
        let last: Vec<String> = c.curves.last().unwrap().iter().map(|v| format!("{v:.3}")).collect();
        println!("eta {eta:.2}: max |f_h(u)| {max:.4}; h = {:.2}: {}", h[h.len() - 1], last.join(" "));
    }

    // Curves at one distance from parameters scattered around the base set,
    // the shape a posterior sample would give.
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mid = h.len() / 2;
    let mut curves = Vec::new();
    for _ in 0..40 {
        let g = Gneiting {
            l_s: base.l_s * rng.random_range(0.8..1.25),
            l_t: base.l_t * rng.random_range(0.8..1.25),
            eta: rng.random_range(0.3..0.7),
            ..base
        };
        curves.push(separability_function(&g, &h, &u)?.curves[mid].clone());
    }
    let bp = boxplot_of(&curves)?;
    println!("\nfunctional boxplot at h = {:.2} over {} curves", h[mid], curves.len());
    println!("{:>4} {:>8} {:>8} {:>8}", "u", "lo50", "median", "hi50");
    for j in 0..u.len() {
        println!("{:>4} {:8.4} {:8.4} {:8.4}", u[j], bp.lower[j], bp.median[j], bp.upper[j]);
    }
    println!("outlying curves: {:?}", bp.outliers);
    Ok(())
}
