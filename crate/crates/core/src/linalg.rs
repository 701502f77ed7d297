//! Assembled global matrices and the solvers used on them.
//!
//! One-dimensional operators are small and stored dense; the planar
//! operators are stored in compressed rows and solved iteratively.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use nalgebra_sparse::{CooMatrix, CsrMatrix};

use crate::error::{Error, Result};

/// Relative residual the direct solves are checked against.
pub const DIRECT_RESIDUAL_TOL: f64 = 1e-11;

#[derive(Debug, Clone)]
pub enum Storage {
    Dense(DMatrix<f64>),
    Sparse(CsrMatrix<f64>),
}

/// A global matrix, dense or sparse.
#[derive(Debug, Clone)]
pub struct LinearOperator {
    storage: Storage,
}

impl From<DMatrix<f64>> for LinearOperator {
    fn from(m: DMatrix<f64>) -> Self {
        Self::dense(m)
    }
}

impl From<CsrMatrix<f64>> for LinearOperator {
    fn from(m: CsrMatrix<f64>) -> Self {
        Self::sparse(m)
    }
}

impl LinearOperator {
    pub fn dense(m: DMatrix<f64>) -> Self {
        Self {
            storage: Storage::Dense(m),
        }
    }

    pub fn sparse(m: CsrMatrix<f64>) -> Self {
        Self {
            storage: Storage::Sparse(m),
        }
    }

    /// Builds a sparse operator from `(row, col, value)` triplets, summing
    /// duplicates.
    pub fn from_triplets(
        rows: usize,
        cols: usize,
        triplets: impl IntoIterator<Item = (usize, usize, f64)>,
    ) -> Self {
        let mut coo = CooMatrix::new(rows, cols);
        for (r, c, v) in triplets {
            coo.push(r, c, v);
        }
        Self::sparse(CsrMatrix::from(&coo))
    }

    pub fn storage(&self) -> &Storage {
        &self.storage
    }

    pub fn rows(&self) -> usize {
        match &self.storage {
            Storage::Dense(m) => m.nrows(),
            Storage::Sparse(m) => m.nrows(),
        }
    }

    pub fn cols(&self) -> usize {
        match &self.storage {
            Storage::Dense(m) => m.ncols(),
            Storage::Sparse(m) => m.ncols(),
        }
    }

    pub fn is_dense(&self) -> bool {
        matches!(self.storage, Storage::Dense(_))
    }

    /// Dense view; panics for sparse storage.
    pub fn as_dense(&self) -> &DMatrix<f64> {
        match &self.storage {
            Storage::Dense(m) => m,
            Storage::Sparse(_) => panic!("as_dense called on a sparse operator"),
        }
    }

    pub fn as_sparse(&self) -> Option<&CsrMatrix<f64>> {
        match &self.storage {
            Storage::Sparse(m) => Some(m),
            Storage::Dense(_) => None,
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        match &self.storage {
            Storage::Dense(m) => m.clone(),
            Storage::Sparse(m) => DMatrix::from(m),
        }
    }

    pub fn into_dense(self) -> DMatrix<f64> {
        match self.storage {
            Storage::Dense(m) => m,
            Storage::Sparse(m) => DMatrix::from(&m),
        }
    }

    /// `y = A x`
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.rows()];
        self.apply_into(x, &mut y);
        y
    }

    pub fn apply_into(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.cols());
        assert_eq!(y.len(), self.rows());
        match &self.storage {
            Storage::Dense(m) => {
                for (i, yi) in y.iter_mut().enumerate() {
                    *yi = m.row(i).iter().zip(x).map(|(a, b)| a * b).sum();
                }
            }
            Storage::Sparse(m) => csr_apply(m, x, y),
        }
    }

    /// `y = Aᵀ x`
    pub fn apply_transpose(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.rows());
        let mut y = vec![0.0; self.cols()];
        match &self.storage {
            Storage::Dense(m) => {
                for (j, yj) in y.iter_mut().enumerate() {
                    *yj = m.column(j).iter().zip(x).map(|(a, b)| a * b).sum();
                }
            }
            Storage::Sparse(m) => {
                for (i, row) in m.row_iter().enumerate() {
                    for (&j, &v) in row.col_indices().iter().zip(row.values()) {
                        y[j] += v * x[i];
                    }
                }
            }
        }
        y
    }

    pub fn transpose(&self) -> Self {
        match &self.storage {
            Storage::Dense(m) => Self::dense(m.transpose()),
            Storage::Sparse(m) => Self::sparse(m.transpose()),
        }
    }

    /// Nonzero entries as `(row, col, value)`.
    pub fn triplets(&self) -> Vec<(usize, usize, f64)> {
        match &self.storage {
            Storage::Dense(m) => {
                let mut out = Vec::new();
                for i in 0..m.nrows() {
                    for j in 0..m.ncols() {
                        let v = m[(i, j)];
                        if v != 0.0 {
                            out.push((i, j, v));
                        }
                    }
                }
                out
            }
            Storage::Sparse(m) => m
                .triplet_iter()
                .filter(|(_, _, v)| **v != 0.0)
                .map(|(i, j, v)| (i, j, *v))
                .collect(),
        }
    }

    /// Writes the nonzeros in the plain-text `row,col,value` format.
    pub fn write_triplets<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "row,col,value")?;
        for (i, j, v) in self.triplets() {
            writeln!(w, "{i},{j},{v:.17e}")?;
        }
        Ok(())
    }

    /// Largest absolute row sum.
    pub fn norm_inf(&self) -> f64 {
        match &self.storage {
            Storage::Dense(m) => m
                .row_iter()
                .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
                .fold(0.0, f64::max),
            Storage::Sparse(m) => m
                .row_iter()
                .map(|r| r.values().iter().map(|v| v.abs()).sum::<f64>())
                .fold(0.0, f64::max),
        }
    }

    /// Dense LU factorization with partial pivoting.
    pub fn factorize(&self, context: &str) -> Result<DenseLu> {
        DenseLu::new(self.to_dense(), context)
    }
}

/// `y = M x` for a CSR matrix.
pub fn csr_apply(m: &CsrMatrix<f64>, x: &[f64], y: &mut [f64]) {
    let offsets = m.row_offsets();
    let cols = m.col_indices();
    let vals = m.values();
    for (i, yi) in y.iter_mut().enumerate() {
        let mut s = 0.0;
        for k in offsets[i]..offsets[i + 1] {
            s += vals[k] * x[cols[k]];
        }
        *yi = s;
    }
}

/// Maximum absolute entry.
pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0, |a, v| a.max(v.abs()))
}

/// Matrix 1-norm (maximum absolute column sum).
pub fn norm1(m: &DMatrix<f64>) -> f64 {
    m.column_iter()
        .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Cached LU factors of a dense square matrix.
#[derive(Debug, Clone)]
pub struct DenseLu {
    matrix: DMatrix<f64>,
    lu: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
}

impl DenseLu {
    pub fn new(matrix: DMatrix<f64>, context: &str) -> Result<Self> {
        if !matrix.is_square() {
            return Err(Error::DimensionMismatch {
                expected: matrix.nrows(),
                found: matrix.ncols(),
            });
        }
        let lu = matrix.clone().lu();
        let u = lu.u();
        let diag_max = u.diagonal().iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let diag_min = u
            .diagonal()
            .iter()
            .fold(f64::INFINITY, |a, v| a.min(v.abs()));
        if !(diag_min.is_finite() && diag_min > diag_max * 1e-15) {
            return Err(Error::Singular {
                context: context.to_string(),
                condition: if diag_min > 0.0 {
                    diag_max / diag_min
                } else {
                    f64::INFINITY
                },
            });
        }
        Ok(Self { matrix, lu })
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        let rhs = DVector::from_column_slice(b);
        let x = self.lu.solve(&rhs).ok_or_else(|| Error::Singular {
            context: "dense solve".into(),
            condition: f64::INFINITY,
        })?;
        Ok(x.as_slice().to_vec())
    }

    /// Solves `A X = B` for a matrix right-hand side.
    pub fn solve_matrix(&self, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.lu.solve(b).ok_or_else(|| Error::Singular {
            context: "dense solve".into(),
            condition: f64::INFINITY,
        })
    }

    pub fn inverse(&self) -> Result<DMatrix<f64>> {
        self.lu.try_inverse().ok_or_else(|| Error::Singular {
            context: "dense inverse".into(),
            condition: f64::INFINITY,
        })
    }

    /// 1-norm condition number, computed from the explicit inverse.
    pub fn condition_estimate(&self) -> f64 {
        match self.inverse() {
            Ok(inv) => norm1(&self.matrix) * norm1(&inv),
            Err(_) => f64::INFINITY,
        }
    }

    /// `‖A x − b‖ / ‖b‖`
    pub fn relative_residual(&self, x: &[f64], b: &[f64]) -> f64 {
        let ax = &self.matrix * DVector::from_column_slice(x);
        let bn = b.iter().map(|v| v * v).sum::<f64>().sqrt();
        let rn = ax
            .iter()
            .zip(b)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        if bn == 0.0 {
            rn
        } else {
            rn / bn
        }
    }
}

/// Settings shared by the Krylov solvers.
#[derive(Debug, Clone, Copy)]
pub struct IterativeConfig {
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for IterativeConfig {
    fn default() -> Self {
        Self {
            tolerance: 1e-12,
            max_iterations: 2000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterativeStats {
    pub iterations: usize,
    pub relative_residual: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn diagonal(m: &CsrMatrix<f64>) -> Vec<f64> {
    let mut d = vec![1.0; m.nrows()];
    for (i, row) in m.row_iter().enumerate() {
        for (&j, &v) in row.col_indices().iter().zip(row.values()) {
            if i == j && v != 0.0 {
                d[i] = v;
            }
        }
    }
    d
}

/// Jacobi-preconditioned conjugate gradients for SPD systems.
///
/// `x` holds the initial guess on entry.
pub fn conjugate_gradient(
    a: &CsrMatrix<f64>,
    b: &[f64],
    x: &mut [f64],
    cfg: IterativeConfig,
) -> Result<IterativeStats> {
    let n = b.len();
    let inv_diag: Vec<f64> = diagonal(a).iter().map(|d| 1.0 / d).collect();
    let bnorm = norm(b);
    if bnorm == 0.0 {
        x.fill(0.0);
        return Ok(IterativeStats {
            iterations: 0,
            relative_residual: 0.0,
        });
    }
    let mut r = vec![0.0; n];
    csr_apply(a, x, &mut r);
    for (ri, bi) in r.iter_mut().zip(b) {
        *ri = bi - *ri;
    }
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(a, b)| a * b).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];
    let mut res = norm(&r) / bnorm;
    let mut it = 0;
    while res > cfg.tolerance {
        if it >= cfg.max_iterations {
            return Err(Error::NoConvergence {
                iterations: it,
                residual: res,
            });
        }
        csr_apply(a, &p, &mut ap);
        let alpha = rz / dot(&p, &ap);
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        for i in 0..n {
            z[i] = r[i] * inv_diag[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
        res = norm(&r) / bnorm;
        it += 1;
    }
    Ok(IterativeStats {
        iterations: it,
        relative_residual: res,
    })
}

/// Jacobi-preconditioned BiCGSTAB for nonsymmetric systems.
///
/// `x` holds the initial guess on entry. The true residual is recomputed
/// before returning.
pub fn bicgstab(
    a: &CsrMatrix<f64>,
    b: &[f64],
    x: &mut [f64],
    cfg: IterativeConfig,
) -> Result<IterativeStats> {
    let n = b.len();
    let inv_diag: Vec<f64> = diagonal(a).iter().map(|d| 1.0 / d).collect();
    let bnorm = norm(b);
    if bnorm == 0.0 {
        x.fill(0.0);
        return Ok(IterativeStats {
            iterations: 0,
            relative_residual: 0.0,
        });
    }
    let mut r = vec![0.0; n];
    let true_residual = |x: &[f64], r: &mut [f64]| {
        csr_apply(a, x, r);
        for (ri, bi) in r.iter_mut().zip(b) {
            *ri = bi - *ri;
        }
    };
    let mut it = 0;
    let mut restarts = 0;
    loop {
        true_residual(x, &mut r);
        let mut res = norm(&r) / bnorm;
        if res <= cfg.tolerance {
            return Ok(IterativeStats {
                iterations: it,
                relative_residual: res,
            });
        }
        let r_hat = r.clone();
        let mut rho = 1.0;
        let mut alpha = 1.0;
        let mut omega = 1.0;
        let mut v = vec![0.0; n];
        let mut p = vec![0.0; n];
        let mut phat = vec![0.0; n];
        let mut s = vec![0.0; n];
        let mut shat = vec![0.0; n];
        let mut t = vec![0.0; n];
        let mut breakdown = false;
        while res > cfg.tolerance {
            if it >= cfg.max_iterations {
                return Err(Error::NoConvergence {
                    iterations: it,
                    residual: res,
                });
            }
            let rho_new = dot(&r_hat, &r);
            if rho_new.abs() < 1e-300 {
                breakdown = true;
                break;
            }
            let beta = (rho_new / rho) * (alpha / omega);
            rho = rho_new;
            for i in 0..n {
                p[i] = r[i] + beta * (p[i] - omega * v[i]);
                phat[i] = p[i] * inv_diag[i];
            }
            csr_apply(a, &phat, &mut v);
            alpha = rho / dot(&r_hat, &v);
            for i in 0..n {
                s[i] = r[i] - alpha * v[i];
            }
            it += 1;
            if norm(&s) / bnorm <= cfg.tolerance {
                for i in 0..n {
                    x[i] += alpha * phat[i];
                }
                break;
            }
            for i in 0..n {
                shat[i] = s[i] * inv_diag[i];
            }
            csr_apply(a, &shat, &mut t);
            let tt = dot(&t, &t);
            omega = if tt > 0.0 { dot(&t, &s) / tt } else { 0.0 };
            for i in 0..n {
                x[i] += alpha * phat[i] + omega * shat[i];
                r[i] = s[i] - omega * t[i];
            }
            res = norm(&r) / bnorm;
            if omega == 0.0 {
                breakdown = true;
                break;
            }
        }
        if breakdown {
            restarts += 1;
            if restarts > 10 {
                return Err(Error::NoConvergence {
                    iterations: it,
                    residual: res,
                });
            }
        }
        // loop back to verify with the true residual
        true_residual(x, &mut r);
        let true_res = norm(&r) / bnorm;
        if true_res <= cfg.tolerance {
            return Ok(IterativeStats {
                iterations: it,
                relative_residual: true_res,
            });
        }
        restarts += 1;
        if restarts > 10 {
            return Err(Error::NoConvergence {
                iterations: it,
                residual: true_res,
            });
        }
    }
}
