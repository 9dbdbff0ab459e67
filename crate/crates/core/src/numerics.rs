//! Dense linear-algebra kernel for the small symmetric systems the estimators
//! produce (dimensions rarely exceed ~30).
//!
//! Everything funnels through a full symmetric eigendecomposition or a
//! Cholesky/LU factorization from nalgebra; there is no power iteration and no
//! sparse path. `reg_solve` and `solve_square` carry a one-shot ridge fallback
//! of `1e-10 * tr(m)/dim` so downstream callers can distinguish "clean solve"
//! from "solved after regularization".

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Relative asymmetry allowed when wrapping a matrix as symmetric.
const SYMMETRY_RTOL: f64 = 1e-12;

/// Eigenvalue floor for `inv_sqrt`, relative to the spectral norm.
const INV_SQRT_RTOL: f64 = 1e-12;

/// Ridge fallback scale for near-singular solves.
const RIDGE_SCALE: f64 = 1e-10;

/// A dense symmetric matrix. Construction symmetrizes the storage and rejects
/// inputs whose asymmetry exceeds `1e-12` relative to the largest entry.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix {
    m: DMatrix<f64>,
}

impl SymMatrix {
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::Schema(format!(
                "SymMatrix requires a square matrix, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        check_finite(&m, "SymMatrix")?;
        let scale = m.amax().max(1.0);
        let mut max_asym = 0.0f64;
        for i in 0..m.nrows() {
            for j in (i + 1)..m.ncols() {
                max_asym = max_asym.max((m[(i, j)] - m[(j, i)]).abs());
            }
        }
        if max_asym > SYMMETRY_RTOL * scale {
            return Err(Error::Numeric(format!(
                "matrix asymmetry {max_asym:.3e} exceeds {SYMMETRY_RTOL:.0e} relative tolerance"
            )));
        }
        Ok(Self::symmetrize(m))
    }

    /// Unconditionally takes the symmetric part `(m + m')/2`. For matrices that
    /// are symmetric by construction up to roundoff.
    pub fn symmetrize(m: DMatrix<f64>) -> Self {
        let sym = (&m + m.transpose()) * 0.5;
        SymMatrix { m: sym }
    }

    pub fn identity(dim: usize) -> Self {
        SymMatrix {
            m: DMatrix::identity(dim, dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.m.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.m
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.m
    }

    /// Smallest eigenvalue; used for PSD checks in tests and validators.
    pub fn min_eigenvalue(&self) -> Result<f64> {
        let (vals, _) = symmetric_eigen(&self.m)?;
        Ok(vals.iter().cloned().fold(f64::INFINITY, f64::min))
    }

    pub fn scale(&self, c: f64) -> SymMatrix {
        SymMatrix { m: &self.m * c }
    }
}

impl std::ops::Index<(usize, usize)> for SymMatrix {
    type Output = f64;
    fn index(&self, idx: (usize, usize)) -> &f64 {
        &self.m[idx]
    }
}

fn check_finite(m: &DMatrix<f64>, what: &str) -> Result<()> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!("{what}: non-finite entry")));
    }
    Ok(())
}

/// Full symmetric eigendecomposition (values, orthonormal column vectors).
pub fn symmetric_eigen(m: &DMatrix<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
    check_finite(m, "symmetric_eigen")?;
    let se = nalgebra::SymmetricEigen::new(m.clone());
    Ok((se.eigenvalues, se.eigenvectors))
}

/// Largest absolute eigenvalue of a symmetric matrix.
pub fn spectral_norm(m: &SymMatrix) -> Result<f64> {
    let (vals, _) = symmetric_eigen(m.as_matrix())?;
    Ok(vals.iter().fold(0.0f64, |acc, v| acc.max(v.abs())))
}

/// Outcome of a regularized solve: the solution plus whether the ridge
/// fallback fired.
#[derive(Debug, Clone)]
pub struct RegSolve {
    pub solution: DMatrix<f64>,
    pub ridge_used: bool,
}

/// Solves `(m + ridge*I) x = rhs` for symmetric positive (semi)definite `m`
/// via Cholesky. If the factorization fails at the requested ridge, retries
/// once with an extra `1e-10 * tr(m)/dim` on the diagonal and records the
/// fallback; if that still fails the matrix is reported singular.
pub fn reg_solve(m: &SymMatrix, rhs: &DMatrix<f64>, ridge: f64) -> Result<RegSolve> {
    check_finite(rhs, "reg_solve rhs")?;
    if m.dim() != rhs.nrows() {
        return Err(Error::Schema(format!(
            "reg_solve: matrix dim {} vs rhs rows {}",
            m.dim(),
            rhs.nrows()
        )));
    }
    let dim = m.dim();
    let base = if ridge == 0.0 {
        m.as_matrix().clone()
    } else {
        m.as_matrix() + DMatrix::identity(dim, dim) * ridge
    };
    if let Some(chol) = nalgebra::Cholesky::new(base.clone()) {
        return Ok(RegSolve {
            solution: chol.solve(rhs),
            ridge_used: false,
        });
    }
    let fallback = RIDGE_SCALE * m.as_matrix().trace() / dim as f64;
    if fallback > 0.0 {
        let ridged = &base + DMatrix::identity(dim, dim) * fallback;
        if let Some(chol) = nalgebra::Cholesky::new(ridged) {
            return Ok(RegSolve {
                solution: chol.solve(rhs),
                ridge_used: true,
            });
        }
    }
    Err(Error::SingularMatrix(format!(
        "symmetric solve failed at dim {dim} even with ridge {fallback:.3e}"
    )))
}

/// Convenience: inverse of a symmetric PSD matrix through `reg_solve`.
pub fn reg_inverse(m: &SymMatrix, ridge: f64) -> Result<RegSolve> {
    let eye = DMatrix::identity(m.dim(), m.dim());
    reg_solve(m, &eye, ridge)
}

/// LU solve for general square systems (mean Jacobians are negative definite
/// and occasionally asymmetric from weighting); same ridge fallback protocol
/// as `reg_solve`.
pub fn solve_square(m: &DMatrix<f64>, rhs: &DMatrix<f64>) -> Result<RegSolve> {
    check_finite(m, "solve_square")?;
    check_finite(rhs, "solve_square rhs")?;
    if m.nrows() != m.ncols() || m.nrows() != rhs.nrows() {
        return Err(Error::Schema(format!(
            "solve_square: shape mismatch {}x{} vs rhs rows {}",
            m.nrows(),
            m.ncols(),
            rhs.nrows()
        )));
    }
    let dim = m.nrows();
    if let Some(sol) = m.clone().lu().solve(rhs) {
        if sol.iter().all(|v| v.is_finite()) {
            return Ok(RegSolve {
                solution: sol,
                ridge_used: false,
            });
        }
    }
    let fallback = RIDGE_SCALE * m.trace().abs() / dim as f64;
    if fallback > 0.0 {
        // The sign of the ridge follows the trace so a negative definite
        // Jacobian is pushed away from zero, not through it.
        let signed = if m.trace() < 0.0 { -fallback } else { fallback };
        let ridged = m + DMatrix::identity(dim, dim) * signed;
        if let Some(sol) = ridged.lu().solve(rhs) {
            if sol.iter().all(|v| v.is_finite()) {
                return Ok(RegSolve {
                    solution: sol,
                    ridge_used: true,
                });
            }
        }
    }
    Err(Error::SingularMatrix(format!(
        "LU solve failed at dim {dim} even with ridge {fallback:.3e}"
    )))
}

/// Inverse symmetric square root `m^(-1/2)` via eigendecomposition.
///
/// Requires the smallest eigenvalue to exceed `1e-12 * spectral_norm(m)`;
/// below that the matrix is reported ill-conditioned, naming the eigenvalue.
pub fn inv_sqrt(m: &SymMatrix) -> Result<SymMatrix> {
    let (vals, vecs) = symmetric_eigen(m.as_matrix())?;
    let norm = vals.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    let threshold = INV_SQRT_RTOL * norm;
    let mut inv_roots = DVector::zeros(vals.len());
    for (i, &v) in vals.iter().enumerate() {
        if v <= threshold {
            return Err(Error::IllConditioned {
                eigenvalue: v,
                threshold,
            });
        }
        inv_roots[i] = 1.0 / v.sqrt();
    }
    let scaled = &vecs * DMatrix::from_diagonal(&inv_roots);
    Ok(SymMatrix::symmetrize(&scaled * vecs.transpose()))
}
