//! Space-time covariance kernels over unit-time cells.
//!
//! Three families are supported: ICM-RBF (low-rank unit factors times an RBF
//! in time), RBF-RBF (separable squared exponentials) and a nonseparable
//! Gneiting kernel whose parameter `eta` controls the space-time interaction.

use nalgebra::DMatrix;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::linalg::{self, JITTER_MAX, JITTER_START};
use crate::panel::{Cell, PanelData};

/// Lower bound used for `alpha` and `gamma` in place of the open endpoint 0.
pub const SMOOTHNESS_FLOOR: f64 = 1e-12;

/// `exp(-|t - t'|² / (2 l_t²))`.
pub fn k_time_rbf(t: f64, t2: f64, l_t: f64) -> f64 {
    let d = t - t2;
    (-(d * d) / (2.0 * l_t * l_t)).exp()
}

/// `exp(-‖s - s'‖² / (2 l_s²))`.
pub fn k_unit_rbf(s: [f64; 2], s2: [f64; 2], l_s: f64) -> f64 {
    let d2 = sq_dist(s, s2);
    (-d2 / (2.0 * l_s * l_s)).exp()
}

/// Inner product of two rows of the factor matrix.
pub fn k_unit_icm(phi: &DMatrix<f64>, i: usize, i2: usize) -> f64 {
    phi.row(i).dot(&phi.row(i2))
}

/// Gneiting covariance at squared spatial distance `d2` and time lag `dt`.
///
/// `τ²/ψ^η · exp(-(‖Δs‖^{2γ}/l_s) / ψ^{ηγ})` with `ψ = |Δt|^{2α}/l_t + 1`.
pub fn gneiting_at(g: &Gneiting, d2: f64, dt: f64) -> f64 {
    let psi = (dt * dt).powf(g.alpha) / g.l_t + 1.0;
    let spatial = d2.powf(g.gamma) / g.l_s;
    g.tau2 / psi.powf(g.eta) * (-spatial / psi.powf(g.eta * g.gamma)).exp()
}

/// Gneiting covariance between `(s, t)` and `(s2, t2)`.
pub fn k_gneiting(s: [f64; 2], s2: [f64; 2], t: f64, t2: f64, g: &Gneiting) -> Result<f64> {
    g.validate()?;
    Ok(gneiting_at(g, sq_dist(s, s2), t - t2))
}

fn sq_dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    dx * dx + dy * dy
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::KernelParams(format!("{name} must be positive and finite, got {v}")))
    }
}

/// ICM unit factors: either fixed values or sampled during fitting.
#[derive(Debug, Clone, PartialEq)]
pub enum Factors {
    Learned,
    Fixed(DMatrix<f64>),
}

impl Serialize for Factors {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Factors::Learned => s.serialize_str("learned"),
            Factors::Fixed(m) => {
                let rows: Vec<Vec<f64>> = (0..m.nrows())
                    .map(|i| m.row(i).iter().copied().collect())
                    .collect();
                rows.serialize(s)
            }
        }
    }
}

impl<'de> Deserialize<'de> for Factors {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Tag(String),
            Rows(Vec<Vec<f64>>),
        }
        match Raw::deserialize(d)? {
            Raw::Tag(t) if t == "learned" => Ok(Factors::Learned),
            Raw::Tag(t) => Err(serde::de::Error::custom(format!(
                "phi must be \"learned\" or a matrix, got \"{t}\""
            ))),
            Raw::Rows(rows) => {
                let n = rows.len();
                let j = rows.first().map_or(0, |r| r.len());
                if rows.iter().any(|r| r.len() != j) {
                    return Err(serde::de::Error::custom("phi rows have unequal lengths"));
                }
                Ok(Factors::Fixed(DMatrix::from_fn(n, j, |a, b| rows[a][b])))
            }
        }
    }
}

fn default_tau2() -> f64 {
    1.0
}

/// ICM-RBF: `k((i,t),(i',t')) = φ_iᵀφ_i' · exp(-|t-t'|²/(2 l_t²))`.
///
/// `tau2` is the marginal variance used when drawing factors for simulation
/// (entries `N(0, τ²/J)`); it does not rescale fixed factors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IcmRbf {
    #[serde(default = "default_tau2")]
    pub tau2: f64,
    pub l_t: f64,
    pub rank_j: usize,
    pub phi: Factors,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RbfRbf {
    pub tau2: f64,
    pub l_s: f64,
    pub l_t: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Gneiting {
    pub tau2: f64,
    pub l_s: f64,
    pub l_t: f64,
    pub alpha: f64,
    pub gamma: f64,
    pub eta: f64,
}

impl Gneiting {
    pub fn validate(&self) -> Result<()> {
        positive("tau2", self.tau2)?;
        positive("l_s", self.l_s)?;
        positive("l_t", self.l_t)?;
        for (name, v) in [("alpha", self.alpha), ("gamma", self.gamma)] {
            if !(SMOOTHNESS_FLOOR..=1.0).contains(&v) {
                return Err(Error::KernelParams(format!(
                    "{name} must lie in [{SMOOTHNESS_FLOOR:e}, 1], got {v}"
                )));
            }
        }
        if !(0.0..=1.0).contains(&self.eta) {
            return Err(Error::KernelParams(format!(
                "eta must lie in [0, 1], got {}",
                self.eta
            )));
        }
        Ok(())
    }
}

/// Kernel family plus hyperparameters. Serialized with a `"kernel"` tag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kernel", rename_all = "snake_case")]
pub enum KernelParams {
    IcmRbf(IcmRbf),
    RbfRbf(RbfRbf),
    Gneiting(Gneiting),
}

/// Kernel family without parameter values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelFamily {
    IcmRbf,
    RbfRbf,
    Gneiting,
}

impl KernelFamily {
    pub const ALL: [KernelFamily; 3] = [KernelFamily::IcmRbf, KernelFamily::RbfRbf, KernelFamily::Gneiting];

    pub fn name(self) -> &'static str {
        match self {
            KernelFamily::IcmRbf => "icm_rbf",
            KernelFamily::RbfRbf => "rbf_rbf",
            KernelFamily::Gneiting => "gneiting",
        }
    }

    /// Short label used in study tables.
    pub fn label(self) -> &'static str {
        match self {
            KernelFamily::IcmRbf => "ICM",
            KernelFamily::RbfRbf => "RBF",
            KernelFamily::Gneiting => "Gneiting",
        }
    }
}

impl std::fmt::Display for KernelFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for KernelFamily {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "icm_rbf" | "icm" => Ok(KernelFamily::IcmRbf),
            "rbf_rbf" | "rbf" => Ok(KernelFamily::RbfRbf),
            "gneiting" => Ok(KernelFamily::Gneiting),
            _ => Err(Error::Config(format!("unknown kernel `{s}`"))),
        }
    }
}

impl KernelParams {
    pub fn family(&self) -> KernelFamily {
        match self {
            KernelParams::IcmRbf(_) => KernelFamily::IcmRbf,
            KernelParams::RbfRbf(_) => KernelFamily::RbfRbf,
            KernelParams::Gneiting(_) => KernelFamily::Gneiting,
        }
    }

    pub fn is_separable(&self) -> bool {
        !matches!(self, KernelParams::Gneiting(_))
    }

    /// Check all bounds. `n_units` is needed to validate ICM factors.
    pub fn validate(&self, n_units: Option<usize>) -> Result<()> {
        match self {
            KernelParams::IcmRbf(p) => {
                positive("tau2", p.tau2)?;
                positive("l_t", p.l_t)?;
                if p.rank_j == 0 {
                    return Err(Error::KernelParams("rank_j must be at least 1".into()));
                }
                if let Some(n) = n_units {
                    if p.rank_j >= n {
                        return Err(Error::KernelParams(format!(
                            "rank_j = {} must be below the number of units {n}",
                            p.rank_j
                        )));
                    }
                }
                if let Factors::Fixed(phi) = &p.phi {
                    if phi.ncols() != p.rank_j {
                        return Err(Error::KernelParams(format!(
                            "phi has {} columns, expected rank_j = {}",
                            phi.ncols(),
                            p.rank_j
                        )));
                    }
                    if let Some(n) = n_units {
                        if phi.nrows() != n {
                            return Err(Error::KernelParams(format!(
                                "phi has {} rows, expected {n}",
                                phi.nrows()
                            )));
                        }
                    }
                    if phi.iter().any(|v| !v.is_finite()) {
                        return Err(Error::KernelParams("phi has non-finite entries".into()));
                    }
                }
                Ok(())
            }
            KernelParams::RbfRbf(p) => {
                positive("tau2", p.tau2)?;
                positive("l_s", p.l_s)?;
                positive("l_t", p.l_t)
            }
            KernelParams::Gneiting(g) => g.validate(),
        }
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let p: KernelParams = serde_json::from_str(s)?;
        p.validate(None)?;
        Ok(p)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("kernel params serialize")
    }
}

/// Distances and lags precomputed from a panel.
#[derive(Debug, Clone)]
pub struct Geometry {
    pub n_units: usize,
    pub n_times: usize,
    pub coords: Vec<[f64; 2]>,
    pub times: Vec<f64>,
    /// Squared distance between units, `N × N`.
    pub unit_d2: DMatrix<f64>,
    /// Distinct absolute time lags.
    pub lags: Vec<f64>,
    /// `lag_index[(t, t')]` indexes `lags`.
    lag_index: Vec<usize>,
}

impl Geometry {
    pub fn new(coords: &[[f64; 2]], times: &[f64]) -> Self {
        let n = coords.len();
        let t_n = times.len();
        let unit_d2 = DMatrix::from_fn(n, n, |a, b| sq_dist(coords[a], coords[b]));
        let mut lags: Vec<f64> = Vec::new();
        let mut lag_index = vec![0; t_n * t_n];
        for a in 0..t_n {
            for b in 0..t_n {
                let d = (times[a] - times[b]).abs();
                let k = match lags.iter().position(|&l| l == d) {
                    Some(k) => k,
                    None => {
                        lags.push(d);
                        lags.len() - 1
                    }
                };
                lag_index[a * t_n + b] = k;
            }
        }
        Geometry {
            n_units: n,
            n_times: t_n,
            coords: coords.to_vec(),
            times: times.to_vec(),
            unit_d2,
            lags,
            lag_index,
        }
    }

    pub fn from_panel(panel: &PanelData) -> Self {
        Geometry::new(panel.coords(), panel.times())
    }

    pub fn lag_id(&self, t: usize, t2: usize) -> usize {
        self.lag_index[t * self.n_times + t2]
    }

    /// Largest pairwise distance between units.
    pub fn max_distance(&self) -> f64 {
        self.unit_d2.iter().fold(0.0f64, |a, &v| a.max(v)).sqrt()
    }
}

/// Kernel evaluated on every unit pair and time lag, ready for lookup.
#[derive(Debug, Clone)]
pub enum KernelTable {
    /// `unit[(i,i')] * time[(t,t')]`.
    Separable { unit: DMatrix<f64>, time: DMatrix<f64> },
    /// `values[(i*N + i', lag)]`.
    Lagged { n_units: usize, lag_index: Vec<usize>, n_times: usize, values: DMatrix<f64> },
}

impl KernelTable {
    pub fn new(geom: &Geometry, params: &KernelParams) -> Result<Self> {
        params.validate(Some(geom.n_units))?;
        let time_rbf = |l_t: f64| {
            DMatrix::from_fn(geom.n_times, geom.n_times, |a, b| {
                k_time_rbf(geom.times[a], geom.times[b], l_t)
            })
        };
        let table = match params {
            KernelParams::IcmRbf(p) => {
                let phi = match &p.phi {
                    Factors::Fixed(phi) => phi,
                    Factors::Learned => {
                        return Err(Error::KernelParams(
                            "ICM factors are marked as learned; supply fixed phi values".into(),
                        ))
                    }
                };
                KernelTable::Separable {
                    unit: phi * phi.transpose(),
                    time: time_rbf(p.l_t),
                }
            }
            KernelParams::RbfRbf(p) => {
                let unit = geom
                    .unit_d2
                    .map(|d2| p.tau2 * (-d2 / (2.0 * p.l_s * p.l_s)).exp());
                KernelTable::Separable {
                    unit,
                    time: time_rbf(p.l_t),
                }
            }
            KernelParams::Gneiting(g) => {
                let n = geom.n_units;
                let mut values = DMatrix::zeros(n * n, geom.lags.len());
                for a in 0..n {
                    for b in a..n {
                        let d2 = geom.unit_d2[(a, b)];
                        for (k, &lag) in geom.lags.iter().enumerate() {
                            let v = gneiting_at(g, d2, lag);
                            values[(a * n + b, k)] = v;
                            values[(b * n + a, k)] = v;
                        }
                    }
                }
                KernelTable::Lagged {
                    n_units: n,
                    lag_index: geom.lag_index.clone(),
                    n_times: geom.n_times,
                    values,
                }
            }
        };
        if table.any_non_finite() {
            return Err(Error::Numerical("non-finite kernel value".into()));
        }
        Ok(table)
    }

    fn any_non_finite(&self) -> bool {
        match self {
            KernelTable::Separable { unit, time } => unit.iter().chain(time.iter()).any(|v| !v.is_finite()),
            KernelTable::Lagged { values, .. } => values.iter().any(|v| !v.is_finite()),
        }
    }

    #[inline]
    pub fn k(&self, a: Cell, b: Cell) -> f64 {
        match self {
            KernelTable::Separable { unit, time } => unit[(a.unit, b.unit)] * time[(a.time, b.time)],
            KernelTable::Lagged {
                n_units,
                lag_index,
                n_times,
                values,
            } => values[(a.unit * n_units + b.unit, lag_index[a.time * n_times + b.time])],
        }
    }

    /// Covariance block between two cell lists.
    pub fn block(&self, rows: &[Cell], cols: &[Cell]) -> DMatrix<f64> {
        DMatrix::from_fn(rows.len(), cols.len(), |r, c| self.k(rows[r], cols[c]))
    }

    /// Symmetric covariance over one cell list.
    pub fn square(&self, cells: &[Cell]) -> DMatrix<f64> {
        let n = cells.len();
        let mut m = DMatrix::zeros(n, n);
        for c in 0..n {
            for r in c..n {
                let v = self.k(cells[r], cells[c]);
                m[(r, c)] = v;
                m[(c, r)] = v;
            }
        }
        m
    }
}

/// An assembled covariance matrix with the diagonal jitter it carries.
#[derive(Debug, Clone, PartialEq)]
pub enum CovMatrix {
    Dense { matrix: DMatrix<f64>, jitter: f64 },
    Kronecker { unit: DMatrix<f64>, time: DMatrix<f64>, jitter: f64 },
}

impl CovMatrix {
    pub fn dense(matrix: DMatrix<f64>) -> Self {
        CovMatrix::Dense { matrix, jitter: 0.0 }
    }

    pub fn jitter(&self) -> f64 {
        match self {
            CovMatrix::Dense { jitter, .. } | CovMatrix::Kronecker { jitter, .. } => *jitter,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            CovMatrix::Dense { matrix, .. } => matrix.nrows(),
            CovMatrix::Kronecker { unit, time, .. } => unit.nrows() * time.nrows(),
        }
    }

    /// Dense matrix including the jitter on the diagonal.
    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = match self {
            CovMatrix::Dense { matrix, .. } => matrix.clone(),
            CovMatrix::Kronecker { unit, time, .. } => linalg::kron(unit, time),
        };
        let j = self.jitter();
        if j != 0.0 {
            for i in 0..m.nrows() {
                m[(i, i)] += j;
            }
        }
        m
    }

    fn with_jitter(self, j: f64) -> Self {
        match self {
            CovMatrix::Dense { matrix, .. } => CovMatrix::Dense { matrix, jitter: j },
            CovMatrix::Kronecker { unit, time, .. } => CovMatrix::Kronecker { unit, time, jitter: j },
        }
    }
}

fn is_full_grid(geom: &Geometry, cells: &[Cell]) -> bool {
    cells.len() == geom.n_units * geom.n_times
        && cells
            .iter()
            .enumerate()
            .all(|(k, c)| c.unit * geom.n_times + c.time == k)
}

/// Assemble the kernel over `cells`. Separable kernels on the full grid come
/// back as a Kronecker pair; everything else is dense.
pub fn assemble(panel: &PanelData, params: &KernelParams, cells: &[Cell]) -> Result<CovMatrix> {
    let geom = Geometry::from_panel(panel);
    assemble_with(&geom, params, cells)
}

pub fn assemble_with(geom: &Geometry, params: &KernelParams, cells: &[Cell]) -> Result<CovMatrix> {
    if let Some(bad) = cells
        .iter()
        .find(|c| c.unit >= geom.n_units || c.time >= geom.n_times)
    {
        return Err(Error::Dimension(format!("cell {bad:?} outside the panel")));
    }
    let table = KernelTable::new(geom, params)?;
    if let KernelTable::Separable { unit, time } = &table {
        if is_full_grid(geom, cells) {
            return Ok(CovMatrix::Kronecker {
                unit: unit.clone(),
                time: time.clone(),
                jitter: 0.0,
            });
        }
    }
    Ok(CovMatrix::dense(table.square(cells)))
}

/// Add the smallest jitter from the ladder (1e-10 doubling, at most 1e-4)
/// that makes the matrix numerically positive definite.
pub fn ensure_psd(k: CovMatrix) -> Result<CovMatrix> {
    match &k {
        CovMatrix::Dense { matrix, .. } => {
            let f = linalg::factor_jittered(matrix)?;
            Ok(k.with_jitter(f.jitter))
        }
        CovMatrix::Kronecker { unit, time, .. } => {
            linalg::check_symmetric(unit)?;
            linalg::check_symmetric(time)?;
            let lu = nalgebra::SymmetricEigen::new(unit.clone()).eigenvalues;
            let lt = nalgebra::SymmetricEigen::new(time.clone()).eigenvalues;
            let mut min_eig = f64::INFINITY;
            let mut max_abs = 0.0f64;
            for &a in lu.iter() {
                for &b in lt.iter() {
                    min_eig = min_eig.min(a * b);
                    max_abs = max_abs.max((a * b).abs());
                }
            }
            // Same acceptance rule as a Cholesky pivot: positive beyond rounding.
            let tol = 1e-14 * max_abs.max(1.0);
            let mut jitter = JITTER_START;
            while jitter <= JITTER_MAX {
                if min_eig + jitter > tol {
                    return Ok(k.with_jitter(jitter));
                }
                jitter *= 2.0;
            }
            Err(Error::NotPsd {
                min_eigenvalue: min_eig,
                max_jitter: JITTER_MAX,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::panel::PanelParts;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    fn small_panel(n_side: usize, n_times: usize) -> PanelData {
        let n = n_side * n_side;
        let mut tu = vec![false; n];
        tu[0] = true;
        PanelData::new(PanelParts {
            n_units: n,
            n_times,
            y: vec![0.0; n * n_times],
            treated_unit: tu,
            t_star: n_times,
            coords: (0..n)
                .map(|i| [(i % n_side) as f64 * 0.3, (i / n_side) as f64 * 0.3])
                .collect(),
            ..Default::default()
        })
        .unwrap()
    }

    #[test]
    fn scalar_examples() {
        assert_eq!(k_time_rbf(3.0, 3.0, 0.42), 1.0);
        assert!(close(k_time_rbf(1.0, 2.0, 0.9), 0.5394, 5e-5));
        assert!(close(k_time_rbf(1.0, 4.0, 0.9), 0.003866, 1e-6));
        assert_eq!(k_unit_rbf([0.2, 0.1], [0.2, 0.1], 0.3), 1.0);
        assert!(close(k_unit_rbf([0.0, 0.0], [1.0, 0.0], 0.3), 0.00387, 5e-6));
        assert!(close(k_unit_rbf([0.0, 0.0], [0.3, 0.4], 0.7), 0.7749, 1e-4));
        let phi = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, -1.0]);
        assert_eq!(k_unit_icm(&phi, 0, 1), 1.0);
        let eye = DMatrix::<f64>::identity(3, 3);
        assert_eq!(k_unit_icm(&eye, 1, 1), 1.0);
        assert_eq!(k_unit_icm(&eye, 0, 2), 0.0);
    }

    #[test]
    fn gneiting_zero_lag_and_bounds() {
        let g = Gneiting {
            tau2: 1.7,
            l_s: 0.125,
            l_t: 0.57,
            alpha: 1.0,
            gamma: 1.0,
            eta: 0.5,
        };
        assert_eq!(k_gneiting([0.1, 0.1], [0.1, 0.1], 4.0, 4.0, &g).unwrap(), 1.7);
        for bad in [
            Gneiting { alpha: 0.0, ..g },
            Gneiting { gamma: 1.5, ..g },
            Gneiting { eta: -0.1, ..g },
            Gneiting { eta: 1.01, ..g },
        ] {
            assert!(k_gneiting([0.0, 0.0], [1.0, 1.0], 1.0, 2.0, &bad).is_err());
        }
        assert!(Gneiting { alpha: SMOOTHNESS_FLOOR, eta: 0.0, ..g }.validate().is_ok());
    }

    #[test]
    fn json_round_trip() {
        let s = r#"{"kernel":"gneiting","tau2":1.0,"l_s":0.125,"l_t":0.57,"alpha":1.0,"gamma":1.0,"eta":0.5}"#;
        let p = KernelParams::from_json(s).unwrap();
        assert_eq!(p.family(), KernelFamily::Gneiting);
        assert_eq!(KernelParams::from_json(&p.to_json()).unwrap(), p);

        let icm = r#"{"kernel":"icm_rbf","l_t":0.9,"rank_j":2,"phi":"learned"}"#;
        let p = KernelParams::from_json(icm).unwrap();
        assert!(matches!(&p, KernelParams::IcmRbf(IcmRbf { phi: Factors::Learned, .. })));
        let fixed = r#"{"kernel":"icm_rbf","l_t":0.9,"rank_j":2,"phi":[[1,0],[0,1],[1,1]]}"#;
        let p = KernelParams::from_json(fixed).unwrap();
        assert_eq!(KernelParams::from_json(&p.to_json()).unwrap(), p);
        assert!(KernelParams::from_json(r#"{"kernel":"matern","tau2":1}"#).is_err());
    }

    #[test]
    fn rbf_grid_is_kronecker() {
        let panel = small_panel(2, 2);
        let p = KernelParams::RbfRbf(RbfRbf { tau2: 1.3, l_s: 0.7, l_t: 0.9 });
        let cells: Vec<Cell> = (0..8).map(|k| panel.cell(k)).collect();
        let k = assemble(&panel, &p, &cells).unwrap();
        assert!(matches!(k, CovMatrix::Kronecker { .. }));
        let geom = Geometry::from_panel(&panel);
        let dense = KernelTable::new(&geom, &p).unwrap().square(&cells);
        assert!((k.to_dense() - dense).amax() < 1e-14);
    }

    #[test]
    fn psd_ladder_examples() {
        let panel = small_panel(3, 4);
        let cells: Vec<Cell> = (0..36).map(|k| panel.cell(k)).collect();
        let p = KernelParams::RbfRbf(RbfRbf { tau2: 1.0, l_s: 0.3, l_t: 0.9 });
        let k = ensure_psd(assemble(&panel, &p, &cells[..20]).unwrap()).unwrap();
        assert_eq!(k.jitter(), JITTER_START);

        let mut bad = DMatrix::<f64>::identity(3, 3);
        bad[(0, 2)] = 0.5;
        assert!(ensure_psd(CovMatrix::dense(bad)).is_err());
    }

    #[test]
    fn icm_rank_deficient_succeeds() {
        let panel = small_panel(3, 5);
        let phi = DMatrix::from_fn(9, 2, |i, j| ((i * 3 + j * 7) % 5) as f64 - 2.0);
        let p = KernelParams::IcmRbf(IcmRbf {
            tau2: 1.0,
            l_t: 0.9,
            rank_j: 2,
            phi: Factors::Fixed(phi),
        });
        let cells: Vec<Cell> = (0..45).map(|k| panel.cell(k)).collect();
        let dense = CovMatrix::dense(assemble(&panel, &p, &cells).unwrap().to_dense());
        let k = ensure_psd(dense).unwrap();
        assert!(k.jitter() <= 1e-6);
    }
}
