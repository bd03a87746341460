//! Counterfactual draws and ATT summaries.

use std::io::Write;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mcmc::ChainSet;
use crate::panel::{Cell, PanelData};

/// Multiplier for rate-scale effects (per 100,000 exposure).
pub const RATE_MULTIPLIER: f64 = 100_000.0;

/// `M × cells` matrix of `Y(0)` draws, columns aligned with `cells`.
#[derive(Debug, Clone, PartialEq)]
pub struct CounterfactualDraws {
    pub draws: DMatrix<f64>,
    pub cells: Vec<Cell>,
}

impl CounterfactualDraws {
    pub fn new(draws: DMatrix<f64>, cells: Vec<Cell>) -> Result<Self> {
        if draws.ncols() != cells.len() {
            return Err(Error::Dimension(format!(
                "{} draw columns for {} cells",
                draws.ncols(),
                cells.len()
            )));
        }
        if draws.nrows() == 0 {
            return Err(Error::TooFewDraws("no counterfactual draws".into()));
        }
        Ok(CounterfactualDraws { draws, cells })
    }

    /// Outcome-scale draws at the missing cells, pooled over chains.
    pub fn from_chains(fit: &ChainSet) -> Result<Self> {
        Self::new(fit.counterfactual_draws(), fit.mis_cells.clone())
    }

    /// Draws of the expected outcome (no observation noise).
    pub fn expected_from_chains(fit: &ChainSet) -> Result<Self> {
        Self::new(fit.cf_expected_draws(), fit.mis_cells.clone())
    }

    /// Leave-block-out draws at treated pre-treatment cells.
    pub fn pretreatment_from_chains(fit: &ChainSet) -> Result<Self> {
        if fit.pre_cells.is_empty() {
            return Err(Error::Config("fit has no pre-treatment draws".into()));
        }
        Self::new(fit.pretreatment_draws(), fit.pre_cells.clone())
    }

    pub fn n_draws(&self) -> usize {
        self.draws.nrows()
    }
}

/// Posterior median with an equal-tailed 95% interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub median: f64,
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn from_draws(draws: &[f64]) -> Self {
        let mut v: Vec<f64> = draws.to_vec();
        v.sort_by(f64::total_cmp);
        Interval {
            median: quantile_sorted(&v, 0.5),
            lo: quantile_sorted(&v, 0.025),
            hi: quantile_sorted(&v, 0.975),
        }
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile_sorted(v: &[f64], p: f64) -> f64 {
    match v.len() {
        0 => f64::NAN,
        1 => v[0],
        n => {
            let h = p.clamp(0.0, 1.0) * (n - 1) as f64;
            let lo = h.floor() as usize;
            let hi = (lo + 1).min(n - 1);
            v[lo] + (h - lo as f64) * (v[hi] - v[lo])
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Period {
    Pre,
    Post,
}

/// Summary of one period's ATT. `time` is 1-based.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSummary {
    pub time: usize,
    pub period: Period,
    pub n_cells: usize,
    #[serde(flatten)]
    pub interval: Interval,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttSummary {
    /// Overall ATT per draw.
    pub att_draws: Vec<f64>,
    /// `M × T`; columns with no counterfactual cells are NaN.
    pub att_by_time: DMatrix<f64>,
    pub overall: Interval,
    /// Post-treatment periods only.
    pub by_time: Vec<TimeSummary>,
    pub rate_scale: bool,
}

fn scaled(panel: &PanelData, cell: Cell, v: f64, rate: bool) -> f64 {
    if rate {
        v / panel.offset_at(cell) * RATE_MULTIPLIER
    } else {
        v
    }
}

/// Per-draw differences `Y − Y(0)` averaged per period and overall.
fn effect_draws(panel: &PanelData, cf: &CounterfactualDraws, rate: bool) -> Result<(Vec<f64>, DMatrix<f64>, Vec<usize>)> {
    let t_n = panel.n_times();
    let mut counts = vec![0usize; t_n];
    for c in &cf.cells {
        if c.unit >= panel.n_units() || c.time >= t_n {
            return Err(Error::Dimension(format!("cell ({}, {}) is outside the panel", c.unit, c.time)));
        }
        counts[c.time] += 1;
    }
    let m = cf.n_draws();
    let mut overall = vec![0.0; m];
    let mut by_time = DMatrix::from_element(m, t_n, f64::NAN);
    for t in 0..t_n {
        if counts[t] > 0 {
            by_time.column_mut(t).fill(0.0);
        }
    }
    let observed: Vec<f64> = cf.cells.iter().map(|&c| scaled(panel, c, panel.y_at(c), rate)).collect();
    for d in 0..m {
        for (k, &c) in cf.cells.iter().enumerate() {
            let diff = observed[k] - scaled(panel, c, cf.draws[(d, k)], rate);
            overall[d] += diff;
            by_time[(d, c.time)] += diff / counts[c.time] as f64;
        }
        overall[d] /= cf.cells.len() as f64;
    }
    Ok((overall, by_time, counts))
}

/// ATT draws from counterfactual draws at the treated post-treatment cells.
pub fn att_draws(panel: &PanelData, cf: &CounterfactualDraws, rate_scale: bool) -> Result<AttSummary> {
    let part = panel.partition();
    if cf.cells != part.mis {
        return Err(Error::Dimension(
            "counterfactual columns do not match the treated post-treatment cells".into(),
        ));
    }
    let (att, by_time, counts) = effect_draws(panel, cf, rate_scale)?;
    let summaries = (0..panel.n_times())
        .filter(|&t| counts[t] > 0)
        .map(|t| TimeSummary {
            time: t + 1,
            period: Period::Post,
            n_cells: counts[t],
            interval: Interval::from_draws(by_time.column(t).as_slice()),
        })
        .collect();
    Ok(AttSummary {
        overall: Interval::from_draws(&att),
        att_draws: att,
        att_by_time: by_time,
        by_time: summaries,
        rate_scale,
    })
}

/// How well predictions track the observed treated pre-treatment outcomes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretreatmentFit {
    pub by_time: Vec<TimeSummary>,
    /// RMSE of the posterior mean prediction against the observed outcome.
    pub rmse: f64,
    /// Share of cells whose observed value lies in its 95% predictive interval.
    pub coverage: f64,
    /// Number of pre periods whose ATT interval contains zero.
    pub periods_covering_zero: usize,
}

pub fn pretreatment_fit(panel: &PanelData, cf_pre: &CounterfactualDraws, rate_scale: bool) -> Result<PretreatmentFit> {
    if panel.t0() == 0 {
        return Err(Error::Panel("no pre-treatment period".into()));
    }
    if cf_pre.cells != panel.treated_pre_cells() {
        return Err(Error::Dimension(
            "pre-treatment draws do not match the treated pre-treatment cells".into(),
        ));
    }
    let (_, by_time, counts) = effect_draws(panel, cf_pre, rate_scale)?;
    let summaries: Vec<TimeSummary> = (0..panel.n_times())
        .filter(|&t| counts[t] > 0)
        .map(|t| TimeSummary {
            time: t + 1,
            period: Period::Pre,
            n_cells: counts[t],
            interval: Interval::from_draws(by_time.column(t).as_slice()),
        })
        .collect();
    let mut sq = 0.0;
    let mut covered = 0usize;
    for (k, &c) in cf_pre.cells.iter().enumerate() {
        let col: Vec<f64> = cf_pre.draws.column(k).iter().map(|&v| scaled(panel, c, v, rate_scale)).collect();
        let y = scaled(panel, c, panel.y_at(c), rate_scale);
        let mean = col.iter().sum::<f64>() / col.len() as f64;
        sq += (mean - y).powi(2);
        covered += usize::from(Interval::from_draws(&col).contains(y));
    }
    let n = cf_pre.cells.len() as f64;
    Ok(PretreatmentFit {
        periods_covering_zero: summaries.iter().filter(|s| s.interval.contains(0.0)).count(),
        by_time: summaries,
        rmse: (sq / n).sqrt(),
        coverage: covered as f64 / n,
    })
}

/// Results JSON: overall ATT, per-period rows, optional pre-treatment block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttReport {
    pub att: Interval,
    pub att_by_time: Vec<TimeSummary>,
    pub rate_scale: bool,
    pub n_draws: usize,
    pub pretreatment: Option<PretreatmentFit>,
}

impl AttReport {
    pub fn new(att: &AttSummary, pre: Option<PretreatmentFit>) -> Self {
        let mut rows: Vec<TimeSummary> = pre.as_ref().map(|p| p.by_time.clone()).unwrap_or_default();
        rows.extend(att.by_time.iter().cloned());
        rows.sort_by_key(|r| r.time);
        AttReport {
            att: att.overall,
            att_by_time: rows,
            rate_scale: att.rate_scale,
            n_draws: att.att_draws.len(),
            pretreatment: pre,
        }
    }

    /// `time,period,n_cells,median,lo,hi` per period.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["time", "period", "n_cells", "median", "lo", "hi"])?;
        for r in &self.att_by_time {
            let period = match r.period {
                Period::Pre => "pre",
                Period::Post => "post",
            };
            wr.write_record([
                r.time.to_string(),
                period.to_string(),
                r.n_cells.to_string(),
                r.interval.median.to_string(),
                r.interval.lo.to_string(),
                r.interval.hi.to_string(),
            ])?;
        }
        wr.flush()?;
        Ok(())
    }
}
