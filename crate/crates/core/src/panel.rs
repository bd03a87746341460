//! Outcome panels, CSV ingestion and the observed/missing split.
//!
//! Every vectorised quantity in this crate uses unit-major, time-minor
//! ordering: cell `(i, t)` sits at position `i * T + t`.

use std::collections::HashMap;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A (unit, time) cell, both zero-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Cell {
    pub unit: usize,
    pub time: usize,
}

impl Cell {
    pub fn new(unit: usize, time: usize) -> Self {
        Cell { unit, time }
    }
}

/// Raw ingredients of a panel. Validated by [`PanelData::new`].
#[derive(Debug, Clone, Default)]
pub struct PanelParts {
    pub n_units: usize,
    pub n_times: usize,
    /// Outcomes, unit-major.
    pub y: Vec<f64>,
    pub treated_unit: Vec<bool>,
    /// First treated period, 1-based.
    pub t_star: usize,
    pub coords: Vec<[f64; 2]>,
    /// Time stamps used for kernel distances. Defaults to `1..=T`.
    pub times: Option<Vec<f64>>,
    pub offset: Option<Vec<f64>>,
    /// Covariates, one row per cell (unit-major).
    pub covariates: Option<DMatrix<f64>>,
    pub unit_fixed_effects: bool,
    pub unit_labels: Option<Vec<String>>,
}

#[derive(Debug, Clone)]
pub struct PanelData {
    n_units: usize,
    n_times: usize,
    y: Vec<f64>,
    treated_unit: Vec<bool>,
    t_star: usize,
    coords: Vec<[f64; 2]>,
    times: Vec<f64>,
    offset: Option<Vec<f64>>,
    covariates: Option<DMatrix<f64>>,
    unit_fixed_effects: bool,
    unit_labels: Vec<String>,
}

impl PanelData {
    pub fn new(parts: PanelParts) -> Result<Self> {
        let PanelParts {
            n_units,
            n_times,
            y,
            treated_unit,
            t_star,
            coords,
            times,
            offset,
            covariates,
            unit_fixed_effects,
            unit_labels,
        } = parts;
        let n_cells = n_units * n_times;
        if n_units == 0 || n_times == 0 {
            return Err(Error::Panel("empty panel".into()));
        }
        if y.len() != n_cells {
            return Err(Error::Panel(format!(
                "expected {n_cells} outcomes, got {}",
                y.len()
            )));
        }
        if treated_unit.len() != n_units || coords.len() != n_units {
            return Err(Error::Panel("per-unit vectors have the wrong length".into()));
        }
        let n_treated = treated_unit.iter().filter(|&&d| d).count();
        if n_treated == 0 {
            return Err(Error::Panel("no treated units".into()));
        }
        if n_treated == n_units {
            return Err(Error::Panel("no control units".into()));
        }
        if t_star < 1 || t_star > n_times {
            return Err(Error::Panel(format!(
                "first treated period {t_star} outside 1..={n_times}"
            )));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::Panel("non-finite outcome".into()));
        }
        if coords.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Panel("non-finite coordinate".into()));
        }
        let times = match times {
            Some(ts) => {
                if ts.len() != n_times {
                    return Err(Error::Panel("time stamp vector has the wrong length".into()));
                }
                if ts.windows(2).any(|w| !(w[1] > w[0])) || ts.iter().any(|t| !t.is_finite()) {
                    return Err(Error::Panel("time stamps must be finite and increasing".into()));
                }
                ts
            }
            None => (1..=n_times).map(|t| t as f64).collect(),
        };
        if let Some(off) = &offset {
            if off.len() != n_cells {
                return Err(Error::Panel("offset vector has the wrong length".into()));
            }
            if off.iter().any(|&o| !(o > 0.0) || !o.is_finite()) {
                return Err(Error::Panel("offsets must be strictly positive".into()));
            }
        }
        if let Some(x) = &covariates {
            if x.nrows() != n_cells {
                return Err(Error::Panel("covariate matrix has the wrong number of rows".into()));
            }
            if x.iter().any(|v| !v.is_finite()) {
                return Err(Error::Panel("non-finite covariate".into()));
            }
        }
        let unit_labels = match unit_labels {
            Some(l) if l.len() == n_units => l,
            Some(_) => return Err(Error::Panel("unit label vector has the wrong length".into())),
            None => (0..n_units).map(|i| (i + 1).to_string()).collect(),
        };
        Ok(PanelData {
            n_units,
            n_times,
            y,
            treated_unit,
            t_star,
            coords,
            times,
            offset,
            covariates,
            unit_fixed_effects,
            unit_labels,
        })
    }

    pub fn n_units(&self) -> usize {
        self.n_units
    }
    pub fn n_times(&self) -> usize {
        self.n_times
    }
    pub fn n_cells(&self) -> usize {
        self.n_units * self.n_times
    }
    /// Number of treated units, `N1`.
    pub fn n_treated(&self) -> usize {
        self.treated_unit.iter().filter(|&&d| d).count()
    }
    /// First treated period `T*` (1-based).
    pub fn t_star(&self) -> usize {
        self.t_star
    }
    /// Number of pre-treatment periods, `T0 = T* - 1`.
    pub fn t0(&self) -> usize {
        self.t_star - 1
    }
    pub fn index(&self, cell: Cell) -> usize {
        cell.unit * self.n_times + cell.time
    }
    pub fn cell(&self, index: usize) -> Cell {
        Cell::new(index / self.n_times, index % self.n_times)
    }
    pub fn y(&self) -> &[f64] {
        &self.y
    }
    pub fn y_at(&self, cell: Cell) -> f64 {
        self.y[self.index(cell)]
    }
    pub fn treated_units(&self) -> &[bool] {
        &self.treated_unit
    }
    pub fn is_treated_unit(&self, unit: usize) -> bool {
        self.treated_unit[unit]
    }
    /// `D_it`: treated unit at or after `T*`.
    pub fn is_treated_cell(&self, cell: Cell) -> bool {
        self.treated_unit[cell.unit] && cell.time + 1 >= self.t_star
    }
    pub fn coords(&self) -> &[[f64; 2]] {
        &self.coords
    }
    pub fn times(&self) -> &[f64] {
        &self.times
    }
    pub fn offsets(&self) -> Option<&[f64]> {
        self.offset.as_deref()
    }
    pub fn offset_at(&self, cell: Cell) -> f64 {
        self.offset.as_ref().map_or(1.0, |o| o[self.index(cell)])
    }
    pub fn covariates(&self) -> Option<&DMatrix<f64>> {
        self.covariates.as_ref()
    }
    pub fn n_covariates(&self) -> usize {
        self.covariates.as_ref().map_or(0, |x| x.ncols())
    }
    pub fn unit_fixed_effects(&self) -> bool {
        self.unit_fixed_effects
    }
    pub fn unit_labels(&self) -> &[String] {
        &self.unit_labels
    }

    /// Copy of this panel with the unit fixed-effect flag changed.
    pub fn with_unit_fixed_effects(mut self, on: bool) -> Self {
        self.unit_fixed_effects = on;
        self
    }

    /// Copy of this panel with new outcomes (same shape).
    pub fn with_outcomes(&self, y: Vec<f64>) -> Result<Self> {
        if y.len() != self.n_cells() {
            return Err(Error::Dimension("outcome vector length".into()));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::Panel("non-finite outcome".into()));
        }
        let mut out = self.clone();
        out.y = y;
        Ok(out)
    }

    /// Mean-structure design over all cells.
    ///
    /// Columns: a global intercept (dropped when unit dummies are present),
    /// one dummy per unit when fixed effects are on, then the covariates.
    pub fn mean_design(&self) -> MeanDesign {
        let n = self.n_cells();
        let mut names = Vec::new();
        let mut cols: Vec<Vec<f64>> = Vec::new();
        if self.unit_fixed_effects {
            for i in 0..self.n_units {
                let mut c = vec![0.0; n];
                for t in 0..self.n_times {
                    c[i * self.n_times + t] = 1.0;
                }
                cols.push(c);
                names.push(format!("delta[{}]", i + 1));
            }
        } else {
            cols.push(vec![1.0; n]);
            names.push("mu0".to_string());
        }
        if let Some(x) = &self.covariates {
            for j in 0..x.ncols() {
                cols.push(x.column(j).iter().copied().collect());
                names.push(format!("beta[{}]", j + 1));
            }
        }
        let p = cols.len();
        let matrix = DMatrix::from_fn(n, p, |r, c| cols[c][r]);
        MeanDesign {
            matrix,
            names,
            has_intercept: !self.unit_fixed_effects,
        }
    }

    pub fn partition(&self) -> ObsMisPartition {
        partition(self)
    }

    /// Cells of treated units before `T*`, unit-major.
    pub fn treated_pre_cells(&self) -> Vec<Cell> {
        let mut out = Vec::new();
        for i in 0..self.n_units {
            if self.treated_unit[i] {
                for t in 0..self.t0() {
                    out.push(Cell::new(i, t));
                }
            }
        }
        out
    }

    /// Euclidean distance between two units.
    pub fn distance(&self, a: usize, b: usize) -> f64 {
        let (p, q) = (self.coords[a], self.coords[b]);
        ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt()
    }
}

/// Linear mean design `H` with named columns.
#[derive(Debug, Clone)]
pub struct MeanDesign {
    pub matrix: DMatrix<f64>,
    pub names: Vec<String>,
    pub has_intercept: bool,
}

impl MeanDesign {
    pub fn ncols(&self) -> usize {
        self.matrix.ncols()
    }

    /// Rows of the design for the given cells.
    pub fn rows(&self, panel: &PanelData, cells: &[Cell]) -> DMatrix<f64> {
        DMatrix::from_fn(cells.len(), self.matrix.ncols(), |r, c| {
            self.matrix[(panel.index(cells[r]), c)]
        })
    }
}

/// Split of all cells into observed untreated outcomes and missing `Y(0)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObsMisPartition {
    pub obs: Vec<Cell>,
    pub mis: Vec<Cell>,
}

impl ObsMisPartition {
    /// Error out when there is nothing to predict.
    pub fn require_missing(&self) -> Result<()> {
        if self.mis.is_empty() {
            return Err(Error::Panel("nothing to predict: no treated post-treatment cells".into()));
        }
        Ok(())
    }
}

pub fn partition(panel: &PanelData) -> ObsMisPartition {
    let mut obs = Vec::with_capacity(panel.n_cells());
    let mut mis = Vec::new();
    for i in 0..panel.n_units {
        for t in 0..panel.n_times {
            let c = Cell::new(i, t);
            if panel.is_treated_cell(c) {
                mis.push(c);
            } else {
                obs.push(c);
            }
        }
    }
    ObsMisPartition { obs, mis }
}

/// Column names used when reading a panel CSV.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct PanelSchema {
    pub unit_id: String,
    pub time: String,
    pub y: String,
    pub treated: String,
    pub lon: String,
    pub lat: String,
    /// Offset column; `None` means "use `offset` if present".
    pub offset: Option<String>,
    /// Covariate columns; empty means "use `x1..xp` if present".
    pub covariates: Vec<String>,
    /// Use the raw time column as kernel time stamps instead of `1..T`.
    pub raw_time_stamps: bool,
    pub unit_fixed_effects: bool,
}

impl Default for PanelSchema {
    fn default() -> Self {
        PanelSchema {
            unit_id: "unit_id".into(),
            time: "time".into(),
            y: "y".into(),
            treated: "treated".into(),
            lon: "lon".into(),
            lat: "lat".into(),
            offset: None,
            covariates: Vec::new(),
            raw_time_stamps: false,
            unit_fixed_effects: false,
        }
    }
}

/// Mapping between file labels and dense indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Relabeling {
    /// `units[i]` is the original id of unit `i`.
    pub units: Vec<String>,
    /// `times[t]` is the original time value of period `t`.
    pub times: Vec<f64>,
}

/// Read a panel CSV. Lines starting with `#` are ignored.
pub fn load_panel(path: impl AsRef<Path>, schema: &PanelSchema) -> Result<(PanelData, Relabeling)> {
    let file = std::fs::File::open(path.as_ref())?;
    read_panel(file, schema)
}

pub fn read_panel<R: std::io::Read>(reader: R, schema: &PanelSchema) -> Result<(PanelData, Relabeling)> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Panel(format!("missing column `{name}`")))
    };
    let c_unit = col(&schema.unit_id)?;
    let c_time = col(&schema.time)?;
    let c_y = col(&schema.y)?;
    let c_treated = col(&schema.treated)?;
    let c_lon = col(&schema.lon)?;
    let c_lat = col(&schema.lat)?;
    let c_offset = match &schema.offset {
        Some(name) => Some(col(name)?),
        None => headers.iter().position(|h| h == "offset"),
    };
    let cov_names: Vec<String> = if schema.covariates.is_empty() {
        let mut found: Vec<(usize, String)> = headers
            .iter()
            .filter_map(|h| {
                h.strip_prefix('x')
                    .and_then(|d| d.parse::<usize>().ok())
                    .map(|k| (k, h.to_string()))
            })
            .collect();
        found.sort();
        found.into_iter().map(|(_, h)| h).collect()
    } else {
        schema.covariates.clone()
    };
    let c_cov: Vec<usize> = cov_names.iter().map(|n| col(n)).collect::<Result<_>>()?;

    struct Row {
        unit: String,
        time: f64,
        y: f64,
        treated: bool,
        lon: f64,
        lat: f64,
        offset: Option<f64>,
        x: Vec<f64>,
    }
    let num = |s: &str, what: &str, line: usize| -> Result<f64> {
        s.parse::<f64>()
            .map_err(|_| Error::Panel(format!("line {line}: cannot parse {what} `{s}`")))
    };
    let mut rows = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = k + 2;
        let get = |c: usize| rec.get(c).unwrap_or("");
        let treated = match get(c_treated) {
            "0" => false,
            "1" => true,
            other => {
                return Err(Error::Panel(format!(
                    "line {line}: treated must be 0 or 1, got `{other}`"
                )))
            }
        };
        rows.push(Row {
            unit: get(c_unit).to_string(),
            time: num(get(c_time), "time", line)?,
            y: num(get(c_y), "outcome", line)?,
            treated,
            lon: num(get(c_lon), "lon", line)?,
            lat: num(get(c_lat), "lat", line)?,
            offset: c_offset.map(|c| num(get(c), "offset", line)).transpose()?,
            x: c_cov
                .iter()
                .map(|&c| num(get(c), "covariate", line))
                .collect::<Result<_>>()?,
        });
    }
    if rows.is_empty() {
        return Err(Error::Panel("no data rows".into()));
    }

    let mut unit_ids: Vec<String> = Vec::new();
    let mut unit_index: HashMap<String, usize> = HashMap::new();
    for r in &rows {
        if !unit_index.contains_key(&r.unit) {
            unit_index.insert(r.unit.clone(), unit_ids.len());
            unit_ids.push(r.unit.clone());
        }
    }
    let mut times: Vec<f64> = rows.iter().map(|r| r.time).collect();
    times.sort_by(|a, b| a.partial_cmp(b).expect("finite times"));
    times.dedup();
    let n_units = unit_ids.len();
    let n_times = times.len();
    let n_cells = n_units * n_times;
    if rows.len() != n_cells {
        return Err(Error::Panel(format!(
            "non-rectangular panel: {} rows for {n_units} units x {n_times} periods",
            rows.len()
        )));
    }

    let mut seen = vec![false; n_cells];
    let mut y = vec![0.0; n_cells];
    let mut d = vec![false; n_cells];
    let mut offset = c_offset.map(|_| vec![0.0; n_cells]);
    let p = c_cov.len();
    let mut x = DMatrix::zeros(n_cells, p);
    let mut coords: Vec<Option<[f64; 2]>> = vec![None; n_units];
    for r in &rows {
        let i = unit_index[&r.unit];
        let t = times
            .binary_search_by(|v| v.partial_cmp(&r.time).expect("finite"))
            .expect("time present");
        let idx = i * n_times + t;
        if seen[idx] {
            return Err(Error::Panel(format!(
                "duplicate row for unit `{}` at time {}",
                r.unit, r.time
            )));
        }
        seen[idx] = true;
        y[idx] = r.y;
        d[idx] = r.treated;
        if let (Some(off), Some(v)) = (offset.as_mut(), r.offset) {
            off[idx] = v;
        }
        for (j, v) in r.x.iter().enumerate() {
            x[(idx, j)] = *v;
        }
        match coords[i] {
            None => coords[i] = Some([r.lon, r.lat]),
            Some(c) if c != [r.lon, r.lat] => {
                return Err(Error::Panel(format!(
                    "unit `{}` has varying coordinates",
                    r.unit
                )))
            }
            _ => {}
        }
    }

    // D_it must be 0..0 1..1 for treated units with a common first treated period.
    let mut treated_unit = vec![false; n_units];
    let mut t_star: Option<usize> = None;
    for i in 0..n_units {
        let row = &d[i * n_times..(i + 1) * n_times];
        let Some(first) = row.iter().position(|&v| v) else {
            continue;
        };
        if row[first..].iter().any(|&v| !v) {
            return Err(Error::Panel(format!(
                "treated unit `{}` has a treatment gap",
                unit_ids[i]
            )));
        }
        treated_unit[i] = true;
        match t_star {
            None => t_star = Some(first + 1),
            Some(s) if s != first + 1 => {
                return Err(Error::Panel(
                    "treated units adopt treatment at different times".into(),
                ))
            }
            _ => {}
        }
    }
    let t_star = t_star.ok_or_else(|| Error::Panel("no treated units".into()))?;

    let panel = PanelData::new(PanelParts {
        n_units,
        n_times,
        y,
        treated_unit,
        t_star,
        coords: coords.into_iter().map(|c| c.expect("every unit has rows")).collect(),
        times: schema.raw_time_stamps.then(|| times.clone()),
        offset,
        covariates: (p > 0).then_some(x),
        unit_fixed_effects: schema.unit_fixed_effects,
        unit_labels: Some(unit_ids.clone()),
    })?;
    Ok((
        panel,
        Relabeling {
            units: unit_ids,
            times,
        },
    ))
}

/// Write a panel as CSV in unit-major order.
///
/// Values use the shortest round-tripping decimal form, so reading the file
/// back reproduces every cell bit for bit.
pub fn write_panel<W: std::io::Write>(panel: &PanelData, labels: Option<&Relabeling>, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let p = panel.n_covariates();
    let mut header = vec!["unit_id", "time", "y", "treated", "lon", "lat"]
        .into_iter()
        .map(String::from)
        .collect::<Vec<_>>();
    if panel.offset.is_some() {
        header.push("offset".into());
    }
    for j in 0..p {
        header.push(format!("x{}", j + 1));
    }
    w.write_record(&header)?;
    for i in 0..panel.n_units {
        for t in 0..panel.n_times {
            let c = Cell::new(i, t);
            let idx = panel.index(c);
            let unit = labels.map_or_else(|| panel.unit_labels[i].clone(), |l| l.units[i].clone());
            let time = labels.map_or(panel.times[t], |l| l.times[t]);
            let mut rec = vec![
                unit,
                format!("{time}"),
                format!("{}", panel.y[idx]),
                if panel.is_treated_cell(c) { "1" } else { "0" }.to_string(),
                format!("{}", panel.coords[i][0]),
                format!("{}", panel.coords[i][1]),
            ];
            if let Some(off) = &panel.offset {
                rec.push(format!("{}", off[idx]));
            }
            if let Some(x) = &panel.covariates {
                for j in 0..p {
                    rec.push(format!("{}", x[(idx, j)]));
                }
            }
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid_panel(n_side: usize, n_times: usize, treated: &[usize], t_star: usize) -> PanelData {
        let n = n_side * n_side;
        let mut tu = vec![false; n];
        for &i in treated {
            tu[i] = true;
        }
        PanelData::new(PanelParts {
            n_units: n,
            n_times,
            y: (0..n * n_times).map(|k| k as f64 * 0.5).collect(),
            treated_unit: tu,
            t_star,
            coords: (0..n)
                .map(|i| [(i % n_side) as f64, (i / n_side) as f64])
                .collect(),
            ..Default::default()
        })
        .unwrap()
    }

    #[test]
    fn grid_partition_sizes() {
        let p = grid_panel(7, 15, &(0..10).collect::<Vec<_>>(), 8);
        let part = p.partition();
        assert_eq!(part.mis.len(), 80);
        assert_eq!(part.obs.len(), 655);
        assert_eq!(part.obs.len(), (49 - 10) * 15 + 10 * 7);
    }

    #[test]
    fn county_panel_partition() {
        let n = 150;
        let mut tu = vec![false; n];
        tu.iter_mut().take(78).for_each(|d| *d = true);
        let p = PanelData::new(PanelParts {
            n_units: n,
            n_times: 10,
            y: vec![1.0; n * 10],
            treated_unit: tu,
            t_star: 10,
            coords: vec![[0.0, 0.0]; n],
            ..Default::default()
        })
        .unwrap();
        assert_eq!(p.n_treated(), 78);
        assert_eq!(p.partition().mis.len(), 78);
    }

    #[test]
    fn partition_is_ordered_bijection() {
        let p = grid_panel(3, 5, &[1, 4], 3);
        let part = p.partition();
        let mut all: Vec<usize> = part.obs.iter().chain(&part.mis).map(|&c| p.index(c)).collect();
        assert!(part.obs.windows(2).all(|w| w[0] < w[1]));
        assert!(part.mis.windows(2).all(|w| w[0] < w[1]));
        all.sort();
        assert_eq!(all, (0..45).collect::<Vec<_>>());
        assert_eq!(part, p.partition());
    }

    #[test]
    fn no_treated_units_is_rejected() {
        let err = PanelData::new(PanelParts {
            n_units: 1,
            n_times: 1,
            y: vec![1.0],
            treated_unit: vec![false],
            t_star: 1,
            coords: vec![[0.0, 0.0]],
            ..Default::default()
        })
        .unwrap_err();
        assert!(err.to_string().contains("no treated units"));

        let csv = "unit_id,time,y,treated,lon,lat\na,1,3.0,0,0,0\n";
        let err = read_panel(csv.as_bytes(), &PanelSchema::default()).unwrap_err();
        assert!(err.to_string().contains("no treated units"));
    }

    #[test]
    fn nothing_to_predict() {
        let part = ObsMisPartition {
            obs: vec![Cell::new(0, 0)],
            mis: vec![],
        };
        assert!(part.require_missing().is_err());
    }

    #[test]
    fn csv_errors() {
        let s = PanelSchema::default();
        let missing = "unit_id,time,y,treated,lon\na,1,1,0,0\n";
        assert!(read_panel(missing.as_bytes(), &s).unwrap_err().to_string().contains("lat"));

        let ragged = "unit_id,time,y,treated,lon,lat\na,1,1,0,0,0\na,2,1,0,0,0\nb,1,1,1,1,1\n";
        assert!(read_panel(ragged.as_bytes(), &s).unwrap_err().to_string().contains("non-rectangular"));

        let bad_offset = "unit_id,time,y,treated,lon,lat,offset\na,1,1,0,0,0,1\nb,1,1,1,1,1,0\n";
        assert!(read_panel(bad_offset.as_bytes(), &s).unwrap_err().to_string().contains("positive"));

        let gap = "unit_id,time,y,treated,lon,lat\na,1,1,0,0,0\na,2,1,0,0,0\na,3,1,0,0,0\n\
                   b,1,1,0,1,1\nb,2,1,1,1,1\nb,3,1,0,1,1\n";
        assert!(read_panel(gap.as_bytes(), &s).unwrap_err().to_string().contains("gap"));
    }

    #[test]
    fn csv_relabels_and_detects_columns() {
        let csv = "# comment\nunit_id,time,y,treated,lon,lat,offset,x1\n\
                   zz,2000,1.5,0,0.1,0.2,100,3\nzz,2010,2.5,0,0.1,0.2,110,4\n\
                   aa,2000,3.5,0,0.5,0.5,120,5\naa,2010,4.5,1,0.5,0.5,130,6\n";
        let (p, labels) = read_panel(csv.as_bytes(), &PanelSchema::default()).unwrap();
        assert_eq!(labels.units, vec!["zz", "aa"]);
        assert_eq!(labels.times, vec![2000.0, 2010.0]);
        assert_eq!(p.t_star(), 2);
        assert_eq!(p.times(), &[1.0, 2.0]);
        assert_eq!(p.offset_at(Cell::new(1, 1)), 130.0);
        assert_eq!(p.n_covariates(), 1);
        assert_eq!(p.y_at(Cell::new(1, 0)), 3.5);

        let raw = PanelSchema {
            raw_time_stamps: true,
            ..Default::default()
        };
        let (p, _) = read_panel(csv.as_bytes(), &raw).unwrap();
        assert_eq!(p.times(), &[2000.0, 2010.0]);
    }

    #[test]
    fn design_drops_intercept_with_unit_dummies() {
        let p = grid_panel(2, 3, &[0], 2);
        let h = p.mean_design();
        assert_eq!(h.names, vec!["mu0"]);
        let h = p.clone().with_unit_fixed_effects(true).mean_design();
        assert_eq!(h.ncols(), 4);
        assert!(!h.has_intercept);
        assert_eq!(h.matrix.row_sum().iter().sum::<f64>(), 12.0);
    }
}
