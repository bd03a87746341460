//! Donor-weight form of GP predictions.
//!
//! The posterior mean at the missing cells is `W (y_obs − m_obs) + m_mis`
//! with `W = K_mis,obs (K_obs + σ²I)⁻¹`. Each row of `W` holds the weights a
//! treated cell puts on every observed donor cell.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{KernelParams, KernelTable, Geometry};
use crate::linalg::{self, KroneckerEigen};
use crate::panel::{Cell, PanelData};

/// Weight matrix with its row (target) and column (donor) cells.
#[derive(Debug, Clone, PartialEq)]
pub struct DonorWeights {
    pub w: DMatrix<f64>,
    pub targets: Vec<Cell>,
    pub donors: Vec<Cell>,
}

/// `K_mis,obs (K_obs + σ²I)⁻¹`, computed by solving against `K_obs + σ²I`.
pub fn donor_weights(k_mis_obs: &DMatrix<f64>, k_obs: &DMatrix<f64>, sigma2: f64) -> Result<DMatrix<f64>> {
    if k_obs.nrows() != k_obs.ncols() || k_mis_obs.ncols() != k_obs.nrows() {
        return Err(Error::Dimension(format!(
            "K_mis,obs is {}x{} but K_obs is {}x{}",
            k_mis_obs.nrows(),
            k_mis_obs.ncols(),
            k_obs.nrows(),
            k_obs.ncols()
        )));
    }
    if !(sigma2 >= 0.0) {
        return Err(Error::Config(format!("noise variance must be non-negative, got {sigma2}")));
    }
    let mut a = k_obs.clone();
    for i in 0..a.nrows() {
        a[(i, i)] += sigma2;
    }
    let f = linalg::factor_spd(&a)?;
    Ok(f.solve(&k_mis_obs.transpose()).transpose())
}

/// Kriging predictor `K_mis,obs (K_obs + σ²I)⁻¹ y_obs`.
pub fn kriging_predict(
    k_mis_obs: &DMatrix<f64>,
    k_obs: &DMatrix<f64>,
    sigma2: f64,
    y_obs: &DVector<f64>,
) -> Result<DVector<f64>> {
    if y_obs.len() != k_obs.nrows() {
        return Err(Error::Dimension(format!(
            "{} observations for a {}-cell covariance",
            y_obs.len(),
            k_obs.nrows()
        )));
    }
    let mut a = k_obs.clone();
    for i in 0..a.nrows() {
        a[(i, i)] += sigma2;
    }
    let f = linalg::factor_spd(&a)?;
    Ok(k_mis_obs * f.solve_vec(y_obs))
}

/// Donor weights of every treated post-treatment cell under a kernel.
pub fn panel_donor_weights(panel: &PanelData, params: &KernelParams, sigma2: f64) -> Result<DonorWeights> {
    let part = panel.partition();
    part.require_missing()?;
    let table = KernelTable::new(&Geometry::from_panel(panel), params)?;
    let w = donor_weights(&table.block(&part.mis, &part.obs), &table.square(&part.obs), sigma2)?;
    Ok(DonorWeights {
        w,
        targets: part.mis,
        donors: part.obs,
    })
}

impl DonorWeights {
    /// `W (y − m_obs) + m_mis`.
    pub fn predict(&self, y_obs: &DVector<f64>, mean_obs: &DVector<f64>, mean_mis: &DVector<f64>) -> DVector<f64> {
        &self.w * (y_obs - mean_obs) + mean_mis
    }

    /// Long CSV: `target_unit,target_time,donor_unit,donor_time,weight`
    /// with 1-based units and times.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["target_unit", "target_time", "donor_unit", "donor_time", "weight"])?;
        for (r, t) in self.targets.iter().enumerate() {
            for (c, d) in self.donors.iter().enumerate() {
                wr.write_record([
                    (t.unit + 1).to_string(),
                    (t.time + 1).to_string(),
                    (d.unit + 1).to_string(),
                    (d.time + 1).to_string(),
                    self.w[(r, c)].to_string(),
                ])?;
            }
        }
        wr.flush()?;
        Ok(())
    }

    /// Weights of one target as an `N × T` grid; cells that are not donors
    /// (treated post-treatment) are 0.
    pub fn target_grid(&self, panel: &PanelData, target: Cell) -> Option<DMatrix<f64>> {
        let r = self.targets.iter().position(|&c| c == target)?;
        let mut g = DMatrix::zeros(panel.n_units(), panel.n_times());
        for (c, d) in self.donors.iter().enumerate() {
            g[(d.unit, d.time)] = self.w[(r, c)];
        }
        Some(g)
    }
}

/// Full weight row for a separable kernel on the complete grid, plus the
/// best outer-product approximation `ŵ_unit ⊗ ŵ_time` and how far it is
/// from the full row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeparableWeights {
    /// `N × T` grid of weights on every donor cell.
    pub full: Vec<Vec<f64>>,
    pub unit: Vec<f64>,
    pub time: Vec<f64>,
    pub max_abs_deviation: f64,
    /// True when the outer product reproduces the full row to 1e-10.
    pub reproduces: bool,
}

/// Weight row of `target` when every grid cell is a donor.
pub fn donor_weights_separable(
    k_unit: &DMatrix<f64>,
    k_time: &DMatrix<f64>,
    sigma2: f64,
    target: Cell,
) -> Result<SeparableWeights> {
    let n = k_unit.nrows();
    let t_n = k_time.nrows();
    if target.unit >= n || target.time >= t_n {
        return Err(Error::Dimension(format!(
            "target ({}, {}) is not on the {n} x {t_n} grid",
            target.unit, target.time
        )));
    }
    let eig = KroneckerEigen::new(k_unit, k_time)?;
    let rhs = DVector::from_fn(n * t_n, |k, _| k_unit[(target.unit, k / t_n)] * k_time[(target.time, k % t_n)]);
    let x = eig.solve(sigma2, &rhs)?;
    let grid = DMatrix::from_fn(n, t_n, |i, t| x[i * t_n + t]);
    let svd = grid.clone().svd(true, true);
    let (k, s0) = svd
        .singular_values
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |a, (k, &s)| if s > a.1 { (k, s) } else { a });
    let u = svd.u.as_ref().expect("requested U").column(k) * s0.sqrt();
    let v = svd.v_t.as_ref().expect("requested Vt").row(k).transpose() * s0.sqrt();
    // Fix the sign so unit weights sum to a non-negative number.
    let sign = if u.sum() < 0.0 { -1.0 } else { 1.0 };
    let (u, v) = (u * sign, v * sign);
    let approx = &u * v.transpose();
    let dev = (&grid - approx).amax();
    Ok(SeparableWeights {
        full: (0..n).map(|i| grid.row(i).iter().copied().collect()).collect(),
        unit: u.iter().copied().collect(),
        time: v.iter().copied().collect(),
        max_abs_deviation: dev,
        reproduces: dev <= 1e-10,
    })
}

/// Plot-ready summaries of one target unit's weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightMaps {
    /// 0-based treated target unit.
    pub target_unit: usize,
    /// Per donor unit: weight averaged over the target's post periods and
    /// all donor periods (non-donor cells count as 0).
    pub unit_average: Vec<f64>,
    /// Distance from the target unit to each donor unit.
    pub distance: Vec<f64>,
    /// Per target period (1-based time, `N × T` grid).
    pub time_maps: Vec<(usize, Vec<Vec<f64>>)>,
}

pub fn weight_summaries(weights: &DonorWeights, panel: &PanelData, target_unit: usize) -> Result<WeightMaps> {
    let rows: Vec<Cell> = weights.targets.iter().copied().filter(|c| c.unit == target_unit).collect();
    if rows.is_empty() {
        return Err(Error::Config(format!("unit {} has no counterfactual cells", target_unit + 1)));
    }
    let n = panel.n_units();
    let t_n = panel.n_times();
    let grids: Vec<(usize, DMatrix<f64>)> = rows
        .par_iter()
        .map(|&c| (c.time + 1, weights.target_grid(panel, c).expect("target row exists")))
        .collect();
    let mut avg = vec![0.0; n];
    for (_, g) in &grids {
        for i in 0..n {
            avg[i] += g.row(i).sum() / (t_n * grids.len()) as f64;
        }
    }
    Ok(WeightMaps {
        target_unit,
        distance: (0..n).map(|i| panel.distance(target_unit, i)).collect(),
        unit_average: avg,
        time_maps: grids
            .into_iter()
            .map(|(t, g)| (t, (0..n).map(|i| g.row(i).iter().copied().collect()).collect()))
            .collect(),
    })
}

impl WeightMaps {
    /// `unit,x,y,distance,weight` for the time-averaged map.
    pub fn write_unit_csv<W: Write>(&self, panel: &PanelData, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["unit", "x", "y", "distance", "weight"])?;
        for (i, &v) in self.unit_average.iter().enumerate() {
            let [x, y] = panel.coords()[i];
            wr.write_record([
                (i + 1).to_string(),
                x.to_string(),
                y.to_string(),
                self.distance[i].to_string(),
                v.to_string(),
            ])?;
        }
        wr.flush()?;
        Ok(())
    }

    /// Wide grid for one target period: one row per donor unit, one column
    /// per donor time.
    pub fn write_time_csv<W: Write>(&self, target_time: usize, w: W) -> Result<()> {
        let (_, grid) = self
            .time_maps
            .iter()
            .find(|(t, _)| *t == target_time)
            .ok_or_else(|| Error::Config(format!("no weight map for target time {target_time}")))?;
        let mut wr = csv::Writer::from_writer(w);
        let t_n = grid.first().map_or(0, Vec::len);
        let mut header = vec!["unit".to_string()];
        header.extend((1..=t_n).map(|t| format!("t{t}")));
        wr.write_record(&header)?;
        for (i, row) in grid.iter().enumerate() {
            let mut rec = vec![(i + 1).to_string()];
            rec.extend(row.iter().map(f64::to_string));
            wr.write_record(&rec)?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// Spearman rank correlation.
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&i, &j| v[i].total_cmp(&v[j]));
        let mut r = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            let avg = 0.5 * (i + j) as f64 + 1.0;
            for &k in &idx[i..=j] {
                r[k] = avg;
            }
            i = j + 1;
        }
        r
    }
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let ma = ra.iter().sum::<f64>() / n;
    let mb = rb.iter().sum::<f64>() / n;
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for (x, y) in ra.iter().zip(&rb) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    sab / (saa * sbb).sqrt()
}
