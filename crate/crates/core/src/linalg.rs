//! Dense linear-algebra helpers: jittered Cholesky, Kronecker products and
//! the eigen-based Kronecker solve.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::error::{Error, Result};

/// First rung of the jitter ladder.
pub const JITTER_START: f64 = 1e-10;
/// Upper bound on the jitter ladder.
pub const JITTER_MAX: f64 = 1e-4;

/// Largest absolute entry of `m - mᵀ`.
pub fn asymmetry(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0f64;
    for j in 0..n {
        for i in (j + 1)..n {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

/// Reject matrices that are not square or symmetric to rounding.
pub fn check_symmetric(m: &DMatrix<f64>) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(Error::Dimension(format!(
            "expected a square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    let scale = m.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1.0);
    let asym = asymmetry(m);
    if asym > 1e-12 * scale {
        return Err(Error::NotSymmetric(asym));
    }
    Ok(())
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(m.clone())
        .eigenvalues
        .iter()
        .fold(f64::INFINITY, |a, &v| a.min(v))
}

fn add_diag(m: &DMatrix<f64>, d: f64) -> DMatrix<f64> {
    let mut out = m.clone();
    for i in 0..out.nrows() {
        out[(i, i)] += d;
    }
    out
}

/// Cholesky factor together with the jitter that was added to the diagonal.
#[derive(Clone, Debug)]
pub struct Factor {
    pub chol: Cholesky<f64, Dyn>,
    pub jitter: f64,
}

impl Factor {
    pub fn dim(&self) -> usize {
        self.chol.l_dirty().nrows()
    }

    pub fn solve_vec(&self, b: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(b)
    }

    pub fn solve(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        self.chol.solve(b)
    }

    /// log|A| of the factored (jittered) matrix.
    pub fn log_det(&self) -> f64 {
        let l = self.chol.l_dirty();
        2.0 * (0..l.nrows()).map(|i| l[(i, i)].ln()).sum::<f64>()
    }

    /// Lower-triangular factor `L` with `A = L Lᵀ`.
    pub fn l(&self) -> DMatrix<f64> {
        self.chol.l()
    }

    /// `L⁻¹ b`, so that `‖L⁻¹ b‖² = bᵀ A⁻¹ b`.
    pub fn whiten(&self, b: &DVector<f64>) -> DVector<f64> {
        self.chol
            .l_dirty()
            .solve_lower_triangular(b)
            .expect("cholesky factor has a nonzero diagonal")
    }

    /// `L z` for a standard-normal `z` gives a draw with covariance `A`.
    pub fn colour(&self, z: &DVector<f64>) -> DVector<f64> {
        let l = self.chol.l_dirty();
        let n = z.len();
        let mut out = DVector::zeros(n);
        for i in 0..n {
            let mut s = 0.0;
            for k in 0..=i {
                s += l[(i, k)] * z[k];
            }
            out[i] = s;
        }
        out
    }
}

/// Walk the jitter ladder from `start` (or 0 when `start` is `None`) until
/// the Cholesky factorization succeeds.
fn ladder(a: &DMatrix<f64>, start: Option<f64>) -> Result<Factor> {
    if start.is_none() {
        if let Some(chol) = Cholesky::new(a.clone()) {
            return Ok(Factor { chol, jitter: 0.0 });
        }
    }
    let mut jitter = start.unwrap_or(JITTER_START);
    while jitter <= JITTER_MAX {
        if let Some(chol) = Cholesky::new(add_diag(a, jitter)) {
            return Ok(Factor { chol, jitter });
        }
        jitter *= 2.0;
    }
    Err(Error::NotPsd {
        min_eigenvalue: min_eigenvalue(a),
        max_jitter: JITTER_MAX,
    })
}

/// Factor a symmetric matrix that should already be positive definite,
/// escalating to the jitter ladder only when plain Cholesky fails.
pub fn factor_spd(a: &DMatrix<f64>) -> Result<Factor> {
    check_symmetric(a)?;
    ladder(a, None)
}

/// Factor with at least [`JITTER_START`] on the diagonal.
pub fn factor_jittered(a: &DMatrix<f64>) -> Result<Factor> {
    check_symmetric(a)?;
    ladder(a, Some(JITTER_START))
}

/// Kronecker product `a ⊗ b`.
pub fn kron(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    a.kronecker(b)
}

/// Symmetric square root `U diag(sqrt(max(λ,0)))` of a covariance matrix, so
/// `S Sᵀ` reproduces the input with negative rounding eigenvalues clipped.
pub fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(m.clone());
    let mut u = eig.eigenvectors;
    for (j, &lam) in eig.eigenvalues.iter().enumerate() {
        let s = lam.max(0.0).sqrt();
        u.column_mut(j).scale_mut(s);
    }
    u
}

/// Eigendecompositions of the two factors of `K_unit ⊗ K_time`.
///
/// Solves `(K_unit ⊗ K_time + σ² I) x = v` through
/// `(U⊗V)(Λ⊗Γ + σ² I)⁻¹(U⊗V)ᵀ v` without forming the product.
#[derive(Clone, Debug)]
pub struct KroneckerEigen {
    pub u: DMatrix<f64>,
    pub lambda: DVector<f64>,
    pub v: DMatrix<f64>,
    pub gamma: DVector<f64>,
}

impl KroneckerEigen {
    pub fn new(k_unit: &DMatrix<f64>, k_time: &DMatrix<f64>) -> Result<Self> {
        check_symmetric(k_unit)?;
        check_symmetric(k_time)?;
        let eu = SymmetricEigen::new(k_unit.clone());
        let et = SymmetricEigen::new(k_time.clone());
        Ok(KroneckerEigen {
            u: eu.eigenvectors,
            lambda: eu.eigenvalues,
            v: et.eigenvectors,
            gamma: et.eigenvalues,
        })
    }

    pub fn n_units(&self) -> usize {
        self.u.nrows()
    }

    pub fn n_times(&self) -> usize {
        self.v.nrows()
    }

    /// Unit-major vector `x[i*T + t]` as the `T × N` matrix `X[(t, i)]`.
    fn as_grid(&self, x: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_column_slice(self.n_times(), self.n_units(), x.as_slice())
    }

    pub fn solve(&self, sigma2: f64, x: &DVector<f64>) -> Result<DVector<f64>> {
        let n = self.n_units() * self.n_times();
        if x.len() != n {
            return Err(Error::Dimension(format!("expected length {n}, got {}", x.len())));
        }
        let grid = self.as_grid(x);
        // (U⊗V)ᵀ x  <->  Vᵀ X U
        let mut z = self.v.transpose() * grid * &self.u;
        for i in 0..self.n_units() {
            for t in 0..self.n_times() {
                let d = self.lambda[i] * self.gamma[t] + sigma2;
                if !(d > 0.0) {
                    return Err(Error::Numerical(format!(
                        "Kronecker system is singular (eigenvalue {d:e})"
                    )));
                }
                z[(t, i)] /= d;
            }
        }
        let back = &self.v * z * self.u.transpose();
        Ok(DVector::from_column_slice(back.as_slice()))
    }

    /// log|K_unit ⊗ K_time + σ² I|.
    pub fn log_det(&self, sigma2: f64) -> f64 {
        let mut s = 0.0;
        for &l in self.lambda.iter() {
            for &g in self.gamma.iter() {
                s += (l * g + sigma2).ln();
            }
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spd(n: usize, seed: u64) -> DMatrix<f64> {
        let mut s = seed;
        let a = DMatrix::from_fn(n, n, |_, _| {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 11) as f64 / (1u64 << 53) as f64) - 0.5
        });
        &a * a.transpose() + DMatrix::identity(n, n) * 0.1
    }

    #[test]
    fn kronecker_solve_matches_dense() {
        let a = spd(3, 1);
        let b = spd(4, 2);
        let x = DVector::from_fn(12, |i, _| (i as f64).sin());
        let ke = KroneckerEigen::new(&a, &b).unwrap();
        let fast = ke.solve(0.3, &x).unwrap();
        let dense = kron(&a, &b) + DMatrix::identity(12, 12) * 0.3;
        let slow = dense.clone().cholesky().unwrap().solve(&x);
        assert!((fast - slow).amax() < 1e-10);
        let ld = factor_spd(&dense).unwrap().log_det();
        assert!((ke.log_det(0.3) - ld).abs() < 1e-9);
    }

    #[test]
    fn ladder_repairs_rank_deficient() {
        let v = DMatrix::from_fn(5, 1, |i, _| i as f64 + 1.0);
        let m = &v * v.transpose();
        assert!(Cholesky::new(m.clone()).is_none() || min_eigenvalue(&m) < 1e-12);
        let f = factor_jittered(&m).unwrap();
        assert!(f.jitter >= JITTER_START && f.jitter <= JITTER_MAX);
    }

    #[test]
    fn indefinite_reports_eigenvalue() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        match factor_jittered(&m) {
            Err(Error::NotPsd { min_eigenvalue, .. }) => assert!((min_eigenvalue + 1.0).abs() < 1e-12),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn asymmetric_rejected() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.2, 1.0]);
        assert!(matches!(factor_spd(&m), Err(Error::NotSymmetric(_))));
    }

    #[test]
    fn colour_and_whiten_invert() {
        let a = spd(4, 7);
        let f = factor_spd(&a).unwrap();
        let z = DVector::from_vec(vec![0.3, -1.0, 2.0, 0.5]);
        let back = f.whiten(&f.colour(&z));
        assert!((back - z).amax() < 1e-12);
    }
}
