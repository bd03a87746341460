//! Rank-normalized split R-hat.

use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

/// Threshold above which a quantity is flagged as unconverged.
pub const RHAT_THRESHOLD: f64 = 1.05;

/// Classic potential scale reduction on already-split chains.
fn rhat_basic(chains: &[Vec<f64>]) -> f64 {
    let m = chains.len() as f64;
    let n = chains[0].len() as f64;
    let means: Vec<f64> = chains.iter().map(|c| c.iter().sum::<f64>() / n).collect();
    let grand = means.iter().sum::<f64>() / m;
    let b_over_n = means.iter().map(|x| (x - grand).powi(2)).sum::<f64>() / (m - 1.0);
    let w = chains
        .iter()
        .zip(&means)
        .map(|(c, mu)| c.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / (n - 1.0))
        .sum::<f64>()
        / m;
    if w == 0.0 {
        return if b_over_n > 0.0 { f64::INFINITY } else { f64::NAN };
    }
    let var_plus = (n - 1.0) / n * w + b_over_n;
    (var_plus / w).sqrt()
}

fn split(chains: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut out = Vec::with_capacity(2 * chains.len());
    for c in chains {
        let half = c.len() / 2;
        out.push(c[..half].to_vec());
        out.push(c[c.len() - half..].to_vec());
    }
    out
}

/// Replace every draw by the normal score of its pooled fractional rank.
fn rank_normalize(chains: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut all: Vec<(f64, usize, usize)> = Vec::new();
    for (ci, c) in chains.iter().enumerate() {
        for (k, &v) in c.iter().enumerate() {
            all.push((v, ci, k));
        }
    }
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    let s = all.len() as f64;
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    let mut out: Vec<Vec<f64>> = chains.iter().map(|c| vec![0.0; c.len()]).collect();
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j + 1 < all.len() && all[j + 1].0 == all[i].0 {
            j += 1;
        }
        // Average 1-based rank of the tie group.
        let r = 0.5 * ((i + 1) + (j + 1)) as f64;
        let z = normal.inverse_cdf((r - 0.375) / (s + 0.25));
        for e in &all[i..=j] {
            out[e.1][e.2] = z;
        }
        i = j + 1;
    }
    out
}

/// Rank-normalized split R-hat: the larger of the bulk and folded versions.
///
/// Returns `inf` when chains are internally constant but disagree, and `NaN`
/// when every draw is identical.
pub fn rhat(chains: &[Vec<f64>]) -> Result<f64> {
    if chains.len() < 2 {
        return Err(Error::TooFewDraws(format!(
            "R-hat needs at least 2 chains, got {}",
            chains.len()
        )));
    }
    let n = chains[0].len();
    if chains.iter().any(|c| c.len() != n) {
        return Err(Error::Dimension("chains have unequal lengths".into()));
    }
    if n < 4 {
        return Err(Error::TooFewDraws(format!(
            "R-hat needs at least 4 draws per chain, got {n}"
        )));
    }
    if chains.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite draw".into()));
    }
    let halves = split(chains);
    let bulk = rhat_basic(&rank_normalize(&halves));

    let mut pooled: Vec<f64> = chains.iter().flatten().copied().collect();
    pooled.sort_by(f64::total_cmp);
    let med = median_sorted(&pooled);
    let folded: Vec<Vec<f64>> = halves
        .iter()
        .map(|c| c.iter().map(|v| (v - med).abs()).collect())
        .collect();
    let tail = rhat_basic(&rank_normalize(&folded));
    Ok(if bulk.is_nan() || tail.is_nan() {
        if bulk.is_nan() && tail.is_nan() {
            f64::NAN
        } else {
            bulk.max(tail)
        }
    } else {
        bulk.max(tail)
    })
}

/// True when the value passes the convergence gate (NaN fails).
pub fn converged(r: f64) -> bool {
    r < RHAT_THRESHOLD
}

pub(crate) fn median_sorted(v: &[f64]) -> f64 {
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}
