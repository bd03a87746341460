//! Separability diagnostics for the Gneiting kernel.
//!
//! `f_h(u) = k(h,u)/k(h,0) − k(0,u)/k(0,0)` is identically zero for a
//! separable covariance. Curves are built from kernel parameters (or their
//! posterior medians) and summarized with a functional boxplot.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::causal::Interval;
use crate::error::{Error, Result};
use crate::kernels::{gneiting_at, Gneiting, KernelFamily};
use crate::mcmc::{converged, ChainSet};

/// η below this value counts as "no interaction".
pub const ETA_NEAR_ZERO: f64 = 0.05;

/// One curve over `u_grid` per spatial lag in `h_grid`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeparabilityCurves {
    pub h_grid: Vec<f64>,
    pub u_grid: Vec<f64>,
    pub curves: Vec<Vec<f64>>,
}

pub fn separability_function(g: &Gneiting, h_grid: &[f64], u_grid: &[f64]) -> Result<SeparabilityCurves> {
    g.validate()?;
    // τ² cancels in both ratios; fixing it at 1 makes that exact in floating point.
    let unit = Gneiting { tau2: 1.0, ..*g };
    let k = |h: f64, u: f64| gneiting_at(&unit, h * h, u);
    let k00 = k(0.0, 0.0);
    if !(k00 > 0.0) {
        return Err(Error::Numerical("k(0,0) is zero".into()));
    }
    let mut curves = Vec::with_capacity(h_grid.len());
    for &h in h_grid {
        let kh0 = k(h, 0.0);
        if !(kh0 > 0.0) {
            return Err(Error::Numerical(format!("k({h},0) is zero")));
        }
        curves.push(u_grid.iter().map(|&u| k(h, u) / kh0 - k(0.0, u) / k00).collect());
    }
    Ok(SeparabilityCurves {
        h_grid: h_grid.to_vec(),
        u_grid: u_grid.to_vec(),
        curves,
    })
}

/// Ten equal steps over `(0, max_distance]` and lags `1..T−1`.
pub fn default_grids(max_distance: f64, n_times: usize) -> (Vec<f64>, Vec<f64>) {
    let h = (1..=10).map(|k| max_distance * k as f64 / 10.0).collect();
    let u = (1..n_times).map(|u| u as f64).collect();
    (h, u)
}

/// Plug-in curves from a fitted Gneiting model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FhatEstimate {
    pub curves: SeparabilityCurves,
    pub medians: Gneiting,
    pub eta: Interval,
    /// Fraction of draws with η below [`ETA_NEAR_ZERO`].
    pub eta_near_zero: f64,
    pub warnings: Vec<String>,
}

fn gneiting_medians(fit: &ChainSet) -> Result<Gneiting> {
    if fit.family != KernelFamily::Gneiting {
        return Err(Error::Config(format!(
            "separability estimates need a Gneiting fit, got {}",
            fit.family
        )));
    }
    let m = |name: &str| {
        fit.posterior_median(name)
            .ok_or_else(|| Error::Config(format!("fit has no draws of {name}")))
    };
    Ok(Gneiting {
        tau2: m("tau2")?,
        l_s: m("l_s")?,
        l_t: m("l_t")?,
        alpha: m("alpha")?,
        gamma: m("gamma")?,
        eta: m("eta")?,
    })
}

pub fn estimate_fhat(fit: &ChainSet, h_grid: &[f64], u_grid: &[f64]) -> Result<FhatEstimate> {
    let medians = gneiting_medians(fit)?;
    let curves = separability_function(&medians, h_grid, u_grid)?;
    let eta = fit.pooled("eta").expect("Gneiting fits carry eta");
    let mut warnings = Vec::new();
    if fit.n_chains >= 2 && fit.n_saved() >= 4 {
        for e in fit.rhat_report()? {
            if !converged(e.rhat) {
                warnings.push(format!("R-hat for {} is {:.3}", e.name, e.rhat));
            }
        }
    } else {
        warnings.push("too few chains or draws to check convergence".into());
    }
    Ok(FhatEstimate {
        curves,
        medians,
        eta: Interval::from_draws(&eta),
        eta_near_zero: eta.iter().filter(|&&e| e < ETA_NEAR_ZERO).count() as f64 / eta.len() as f64,
        warnings,
    })
}

/// Curves from every `thin`-th posterior draw, stacked over draws, to show
/// parameter uncertainty alongside the plug-in curves.
pub fn posterior_curves(fit: &ChainSet, h_grid: &[f64], u_grid: &[f64], thin: usize) -> Result<SeparabilityCurves> {
    let _ = gneiting_medians(fit)?;
    let idx: Vec<usize> = ["tau2", "l_s", "l_t", "alpha", "gamma", "eta"]
        .iter()
        .map(|n| fit.param_index(n).expect("Gneiting parameter"))
        .collect();
    let mut out = SeparabilityCurves {
        h_grid: Vec::new(),
        u_grid: u_grid.to_vec(),
        curves: Vec::new(),
    };
    for chain in &fit.chains {
        for row in chain.params.iter().step_by(thin.max(1)) {
            let g = Gneiting {
                tau2: row[idx[0]],
                l_s: row[idx[1]],
                l_t: row[idx[2]],
                alpha: row[idx[3]],
                gamma: row[idx[4]],
                eta: row[idx[5]],
            };
            let c = separability_function(&g, h_grid, u_grid)?;
            out.h_grid.extend(c.h_grid);
            out.curves.extend(c.curves);
        }
    }
    Ok(out)
}

/// Verdict JSON content.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeparabilityVerdict {
    pub verdict: String,
    pub eta: Interval,
    pub eta_near_zero: f64,
    pub threshold: f64,
    pub max_abs_fhat: f64,
    pub summary: String,
    pub warnings: Vec<String>,
}

pub fn verdict(est: &FhatEstimate) -> SeparabilityVerdict {
    let max_abs = est
        .curves
        .curves
        .iter()
        .flatten()
        .fold(0.0f64, |a, v| a.max(v.abs()));
    let near = est.eta.median < ETA_NEAR_ZERO;
    let (verdict, summary) = if near {
        (
            "near-separable",
            format!(
                "posterior median eta {:.3} is below {ETA_NEAR_ZERO}; minimal deviation from zero indicates a nearly separable space-time covariance",
                est.eta.median
            ),
        )
    } else {
        (
            "nonseparable",
            format!(
                "posterior median eta {:.3} is at or above {ETA_NEAR_ZERO}; curves depart from zero by up to {max_abs:.3}",
                est.eta.median
            ),
        )
    };
    SeparabilityVerdict {
        verdict: verdict.into(),
        eta: est.eta,
        eta_near_zero: est.eta_near_zero,
        threshold: ETA_NEAR_ZERO,
        max_abs_fhat: max_abs,
        summary,
        warnings: est.warnings.clone(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunctionalBoxplot {
    pub median_index: usize,
    pub median: Vec<f64>,
    /// Pointwise envelope of the deepest half of the curves.
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub outliers: Vec<usize>,
    pub depths: Vec<f64>,
}

fn check_curves(curves: &[Vec<f64>]) -> Result<usize> {
    if curves.len() < 3 {
        return Err(Error::Config(format!(
            "functional boxplot needs at least 3 curves, got {}",
            curves.len()
        )));
    }
    let m = curves[0].len();
    if m == 0 || curves.iter().any(|c| c.len() != m) {
        return Err(Error::Dimension("curves must share a non-empty grid".into()));
    }
    if curves.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite curve value".into()));
    }
    Ok(m)
}

fn pairs(k: usize) -> f64 {
    (k * k.saturating_sub(1) / 2) as f64
}

/// Modified band depth with bands from pairs of curves, by counting at each
/// grid point how many curves lie strictly below and strictly above.
pub fn modified_band_depth(curves: &[Vec<f64>]) -> Result<Vec<f64>> {
    let m = check_curves(curves)?;
    let n = curves.len();
    let total = pairs(n);
    let mut depth = vec![0.0; n];
    let mut col: Vec<f64> = Vec::with_capacity(n);
    for j in 0..m {
        col.clear();
        col.extend(curves.iter().map(|c| c[j]));
        let mut sorted = col.clone();
        sorted.sort_by(f64::total_cmp);
        for (i, &x) in col.iter().enumerate() {
            let below = sorted.partition_point(|&v| v < x);
            let above = n - sorted.partition_point(|&v| v <= x);
            depth[i] += (total - pairs(below) - pairs(above)) / total;
        }
    }
    Ok(depth.into_iter().map(|d| d / m as f64).collect())
}

/// Same depth by looping over every pair; used to check the fast version.
pub fn modified_band_depth_brute(curves: &[Vec<f64>]) -> Result<Vec<f64>> {
    let m = check_curves(curves)?;
    let n = curves.len();
    let mut depth = vec![0.0; n];
    let mut count = 0usize;
    for a in 0..n {
        for b in a + 1..n {
            count += 1;
            for (i, c) in curves.iter().enumerate() {
                let inside = (0..m)
                    .filter(|&j| {
                        let lo = curves[a][j].min(curves[b][j]);
                        let hi = curves[a][j].max(curves[b][j]);
                        lo <= c[j] && c[j] <= hi
                    })
                    .count();
                depth[i] += inside as f64 / m as f64;
            }
        }
    }
    Ok(depth.into_iter().map(|d| d / count as f64).collect())
}

pub fn functional_boxplot(curves: &SeparabilityCurves) -> Result<FunctionalBoxplot> {
    boxplot_of(&curves.curves)
}

pub fn boxplot_of(curves: &[Vec<f64>]) -> Result<FunctionalBoxplot> {
    let depths = modified_band_depth(curves)?;
    let n = curves.len();
    let m = curves[0].len();
    let mut order: Vec<usize> = (0..n).collect();
    // Deepest first; ties keep the lower index.
    order.sort_by(|&a, &b| depths[b].total_cmp(&depths[a]).then(a.cmp(&b)));
    let central = &order[..n.div_ceil(2)];
    let mut lower = vec![f64::INFINITY; m];
    let mut upper = vec![f64::NEG_INFINITY; m];
    for &i in central {
        for j in 0..m {
            lower[j] = lower[j].min(curves[i][j]);
            upper[j] = upper[j].max(curves[i][j]);
        }
    }
    let outliers = (0..n)
        .filter(|&i| {
            (0..m).any(|j| {
                let w = 1.5 * (upper[j] - lower[j]);
                curves[i][j] < lower[j] - w || curves[i][j] > upper[j] + w
            })
        })
        .collect();
    Ok(FunctionalBoxplot {
        median_index: order[0],
        median: curves[order[0]].clone(),
        lower,
        upper,
        outliers,
        depths,
    })
}

impl FunctionalBoxplot {
    /// `u,median,lo50,hi50`.
    pub fn write_band_csv<W: Write>(&self, u_grid: &[f64], w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["u", "median", "lo50", "hi50"])?;
        for (j, u) in u_grid.iter().enumerate() {
            wr.write_record([
                u.to_string(),
                self.median[j].to_string(),
                self.lower[j].to_string(),
                self.upper[j].to_string(),
            ])?;
        }
        wr.flush()?;
        Ok(())
    }

    /// `curve_id,h,u,value,is_outlier` for overplotting (1-based curve ids).
    pub fn write_curves_csv<W: Write>(&self, curves: &SeparabilityCurves, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["curve_id", "h", "u", "value", "is_outlier"])?;
        for (i, c) in curves.curves.iter().enumerate() {
            let out = self.outliers.contains(&i);
            for (j, v) in c.iter().enumerate() {
                wr.write_record([
                    (i + 1).to_string(),
                    curves.h_grid[i].to_string(),
                    curves.u_grid[j].to_string(),
                    v.to_string(),
                    out.to_string(),
                ])?;
            }
        }
        wr.flush()?;
        Ok(())
    }
}
