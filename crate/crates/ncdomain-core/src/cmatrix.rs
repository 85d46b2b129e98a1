//! Dense complex matrices and the spectral routines the operator-model
//! computations lean on.
//!
//! [`CMatrix`] is a thin row-major wrapper around `nalgebra`'s dense
//! storage. The wrapper exists for three reasons: a stable row-major layout
//! shared with the JSON wire format, error values (instead of panics) on
//! shape mismatches, and tolerance policies tuned to this crate's needs —
//! Hermiticity is *checked* before symmetrizing, eigenvalues come back
//! sorted, and positive-semidefiniteness is decided twice, by eigenvalues
//! and by an independent pivoted factorization, with a hard error if the
//! two routes decisively disagree.

use nalgebra::{Complex, DMatrix};
use num_complex::Complex64;

use crate::error::{Error, Result};

/// Relative Frobenius defect past which a matrix is rejected as not
/// Hermitian instead of being silently symmetrized.
const HERMITIAN_REL_TOL: f64 = 1e-10;

/// Absolute floor under which a matrix counts as zero for relative tests.
const NORM_FLOOR: f64 = 1e-14;

/// Relative pivot threshold for declaring a linear solve singular.
const SOLVE_PIVOT_REL: f64 = 1e-13;

/// A dense complex matrix, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct CMatrix {
    rows: usize,
    cols: usize,
    data: Vec<Complex64>,
}

/// Outcome of the two-route positive-semidefiniteness test.
#[derive(Clone, Debug)]
pub struct PsdReport {
    /// Final verdict (the eigenvalue route, corroborated or borderline).
    pub psd: bool,
    /// Smallest eigenvalue of the symmetrized matrix.
    pub min_eigenvalue: f64,
    /// Largest eigenvalue of the symmetrized matrix.
    pub max_eigenvalue: f64,
    /// Verdict of the independent pivoted-factorization route.
    pub factorization_psd: bool,
}

impl CMatrix {
    // ---------------------------------------------------------------- construction

    /// The `rows x cols` zero matrix.
    pub fn zeros(rows: usize, cols: usize) -> Self {
        CMatrix {
            rows,
            cols,
            data: vec![Complex64::ZERO; rows * cols],
        }
    }

    /// The `n x n` identity.
    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = Complex64::ONE;
        }
        m
    }

    /// Builds a matrix entry by entry from `f(row, col)`.
    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> Complex64) -> Self {
        let mut m = Self::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                m[(i, j)] = f(i, j);
            }
        }
        m
    }

    /// Builds a matrix from rows, which must all have the same length.
    pub fn from_rows(rows: &[Vec<Complex64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|row| row.len() != c) {
            return Err(Error::Shape("rows of unequal length".into()));
        }
        Ok(CMatrix {
            rows: r,
            cols: c,
            data: rows.iter().flatten().copied().collect(),
        })
    }

    /// Wraps a row-major buffer of length `rows * cols`.
    pub fn from_row_major(rows: usize, cols: usize, data: Vec<Complex64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{} entries for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(CMatrix { rows, cols, data })
    }

    /// A diagonal matrix from real entries.
    pub fn diagonal(entries: &[f64]) -> Self {
        let mut m = Self::zeros(entries.len(), entries.len());
        for (i, &d) in entries.iter().enumerate() {
            m[(i, i)] = Complex64::new(d, 0.0);
        }
        m
    }

    fn to_na(&self) -> DMatrix<Complex<f64>> {
        DMatrix::from_fn(self.rows, self.cols, |i, j| self[(i, j)])
    }

    fn from_na(m: &DMatrix<Complex<f64>>) -> Self {
        Self::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
    }

    // ---------------------------------------------------------------- shape and access

    /// Number of rows.
    pub fn rows(&self) -> usize {
        self.rows
    }

    /// Number of columns.
    pub fn cols(&self) -> usize {
        self.cols
    }

    /// True for square matrices.
    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    /// Row-major entry buffer.
    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    /// Copies the block with the given half-open row and column ranges.
    pub fn submatrix(
        &self,
        row_range: std::ops::Range<usize>,
        col_range: std::ops::Range<usize>,
    ) -> Result<Self> {
        if row_range.end > self.rows || col_range.end > self.cols {
            return Err(Error::Shape(format!(
                "block {row_range:?} x {col_range:?} outside a {}x{} matrix",
                self.rows, self.cols
            )));
        }
        Ok(Self::from_fn(
            row_range.len(),
            col_range.len(),
            |i, j| self[(row_range.start + i, col_range.start + j)],
        ))
    }

    /// Stacks blocks left to right; all must share the row count.
    pub fn hstack(blocks: &[&CMatrix]) -> Result<Self> {
        let rows = blocks
            .first()
            .ok_or_else(|| Error::Shape("hstack of no blocks".into()))?
            .rows;
        if blocks.iter().any(|b| b.rows != rows) {
            return Err(Error::Shape("hstack blocks differ in row count".into()));
        }
        let cols = blocks.iter().map(|b| b.cols).sum();
        let mut m = Self::zeros(rows, cols);
        let mut offset = 0;
        for b in blocks {
            for i in 0..rows {
                for j in 0..b.cols {
                    m[(i, offset + j)] = b[(i, j)];
                }
            }
            offset += b.cols;
        }
        Ok(m)
    }

    /// Stacks blocks top to bottom; all must share the column count.
    pub fn vstack(blocks: &[&CMatrix]) -> Result<Self> {
        let cols = blocks
            .first()
            .ok_or_else(|| Error::Shape("vstack of no blocks".into()))?
            .cols;
        if blocks.iter().any(|b| b.cols != cols) {
            return Err(Error::Shape("vstack blocks differ in column count".into()));
        }
        let rows = blocks.iter().map(|b| b.rows).sum();
        let mut m = Self::zeros(rows, cols);
        let mut offset = 0;
        for b in blocks {
            for i in 0..b.rows {
                for j in 0..cols {
                    m[(offset + i, j)] = b[(i, j)];
                }
            }
            offset += b.rows;
        }
        Ok(m)
    }

    // ---------------------------------------------------------------- arithmetic

    /// Entrywise sum.
    pub fn add(&self, other: &Self) -> Result<Self> {
        self.check_same_shape(other)?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a + b)
            .collect();
        Ok(CMatrix {
            rows: self.rows,
            cols: self.cols,
            data,
        })
    }

    /// Entrywise difference.
    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.check_same_shape(other)?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a - b)
            .collect();
        Ok(CMatrix {
            rows: self.rows,
            cols: self.cols,
            data,
        })
    }

    fn check_same_shape(&self, other: &Self) -> Result<()> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::Shape(format!(
                "{}x{} against {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        Ok(())
    }

    /// Scalar multiple.
    pub fn scale(&self, c: Complex64) -> Self {
        CMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|a| a * c).collect(),
        }
    }

    /// Matrix product `self * other`.
    pub fn matmul(&self, other: &Self) -> Result<Self> {
        if self.cols != other.rows {
            return Err(Error::Shape(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == Complex64::ZERO {
                    continue;
                }
                for j in 0..other.cols {
                    out[(i, j)] += a * other[(k, j)];
                }
            }
        }
        Ok(out)
    }

    /// Conjugate transpose.
    pub fn adjoint(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)].conj())
    }

    /// Kronecker product `self (x) other`: entry at
    /// `(i1*rB + i2, j1*cB + j2)` is `self[i1,j1] * other[i2,j2]`.
    pub fn kron(&self, other: &Self) -> Self {
        let mut out = Self::zeros(self.rows * other.rows, self.cols * other.cols);
        for i1 in 0..self.rows {
            for j1 in 0..self.cols {
                let a = self[(i1, j1)];
                if a == Complex64::ZERO {
                    continue;
                }
                for i2 in 0..other.rows {
                    for j2 in 0..other.cols {
                        out[(i1 * other.rows + i2, j1 * other.cols + j2)] = a * other[(i2, j2)];
                    }
                }
            }
        }
        out
    }

    /// Sum of diagonal entries.
    pub fn trace(&self) -> Complex64 {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    /// Frobenius norm.
    pub fn frobenius_norm(&self) -> f64 {
        self.data
            .iter()
            .map(|c| c.norm_sqr())
            .sum::<f64>()
            .sqrt()
    }

    /// Largest entry magnitude.
    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|c| c.norm()).fold(0.0, f64::max)
    }

    // ---------------------------------------------------------------- solvers and spectra

    /// Solves `self * X = rhs` by LU with partial pivoting.
    ///
    /// Fails with [`Error::Singular`] when an upper-triangular pivot falls
    /// below `1e-13` relative to the largest pivot.
    pub fn solve(&self, rhs: &Self) -> Result<Self> {
        if !self.is_square() {
            return Err(Error::Shape(format!(
                "solve needs a square matrix, got {}x{}",
                self.rows, self.cols
            )));
        }
        if rhs.rows != self.rows {
            return Err(Error::Shape(format!(
                "right-hand side has {} rows, matrix has {}",
                rhs.rows, self.rows
            )));
        }
        if self.rows == 0 {
            return Ok(Self::zeros(0, rhs.cols));
        }
        let lu = self.to_na().lu();
        let u = lu.u();
        let mut max_pivot = 0.0f64;
        let mut min_pivot = f64::INFINITY;
        for i in 0..self.rows {
            let p = u[(i, i)].norm();
            max_pivot = max_pivot.max(p);
            min_pivot = min_pivot.min(p);
        }
        if min_pivot <= SOLVE_PIVOT_REL * max_pivot.max(NORM_FLOOR) {
            return Err(Error::Singular(format!(
                "pivot ratio {:.3e} below threshold",
                min_pivot / max_pivot.max(NORM_FLOOR)
            )));
        }
        let x = lu
            .solve(&rhs.to_na())
            .ok_or_else(|| Error::Singular("LU back-substitution failed".into()))?;
        Ok(Self::from_na(&x))
    }

    /// Inverse of a square matrix, via [`CMatrix::solve`] against the
    /// identity.
    pub fn inverse(&self) -> Result<Self> {
        self.solve(&Self::identity(self.rows))
    }

    /// Determinant of a square matrix.
    pub fn determinant(&self) -> Result<Complex64> {
        if !self.is_square() {
            return Err(Error::Shape(format!(
                "determinant of a {}x{} matrix",
                self.rows, self.cols
            )));
        }
        if self.rows == 0 {
            return Ok(Complex64::ONE);
        }
        Ok(self.to_na().determinant())
    }

    /// Minimum-norm least-squares solution of `self * X = rhs` via SVD,
    /// discarding singular values below `eps` relative to the largest.
    pub fn least_squares(&self, rhs: &Self, eps: f64) -> Result<Self> {
        if rhs.rows != self.rows {
            return Err(Error::Shape(format!(
                "right-hand side has {} rows, matrix has {}",
                rhs.rows, self.rows
            )));
        }
        let svd = self.to_na().svd(true, true);
        let top = svd.singular_values.iter().copied().fold(0.0f64, f64::max);
        let x = svd
            .solve(&rhs.to_na(), eps * top.max(NORM_FLOOR))
            .map_err(|e| Error::Singular(e.to_string()))?;
        Ok(Self::from_na(&x))
    }

    /// Checks near-Hermiticity and returns the symmetrized matrix
    /// `(A + A*) / 2`, or [`Error::NotHermitian`] when the defect exceeds
    /// `1e-10` relative to the norm.
    fn require_hermitian(&self) -> Result<Self> {
        if !self.is_square() {
            return Err(Error::NotHermitian(format!(
                "{}x{} matrix is not square",
                self.rows, self.cols
            )));
        }
        let norm = self.frobenius_norm();
        let defect = self.sub(&self.adjoint())?.frobenius_norm();
        if defect > HERMITIAN_REL_TOL * norm.max(NORM_FLOOR) {
            return Err(Error::NotHermitian(format!(
                "asymmetry {defect:.3e} against norm {norm:.3e}"
            )));
        }
        Ok(self.add(&self.adjoint())?.scale(Complex64::new(0.5, 0.0)))
    }

    /// Eigenvalues of a (near-)Hermitian matrix, ascending.
    pub fn hermitian_eigenvalues(&self) -> Result<Vec<f64>> {
        let sym = self.require_hermitian()?;
        if sym.rows == 0 {
            return Ok(Vec::new());
        }
        let eig = sym.to_na().symmetric_eigen();
        let mut vals: Vec<f64> = eig.eigenvalues.iter().copied().collect();
        vals.sort_by(f64::total_cmp);
        Ok(vals)
    }

    /// Eigenvalues (ascending) and matching orthonormal eigenvector
    /// columns of a (near-)Hermitian matrix.
    pub fn hermitian_eig(&self) -> Result<(Vec<f64>, CMatrix)> {
        let sym = self.require_hermitian()?;
        if sym.rows == 0 {
            return Ok((Vec::new(), CMatrix::zeros(0, 0)));
        }
        let eig = sym.to_na().symmetric_eigen();
        let mut order: Vec<usize> = (0..sym.rows).collect();
        let raw: Vec<f64> = eig.eigenvalues.iter().copied().collect();
        order.sort_by(|&a, &b| raw[a].total_cmp(&raw[b]));
        let vals = order.iter().map(|&k| raw[k]).collect();
        let vecs = CMatrix::from_fn(sym.rows, sym.rows, |i, j| {
            eig.eigenvectors[(i, order[j])]
        });
        Ok((vals, vecs))
    }

    /// Largest singular value, computed from the smaller of the two Gram
    /// matrices.
    pub fn operator_norm(&self) -> Result<f64> {
        if self.rows == 0 || self.cols == 0 {
            return Ok(0.0);
        }
        let gram = if self.cols <= self.rows {
            self.adjoint().matmul(self)?
        } else {
            self.matmul(&self.adjoint())?
        };
        let top = *gram
            .hermitian_eigenvalues()?
            .last()
            .expect("nonempty spectrum");
        Ok(top.max(0.0).sqrt())
    }

    /// Hermitian square root of a positive-semidefinite matrix.
    ///
    /// Eigenvalues in `[-tol * scale, 0)` are treated as roundoff and
    /// clamped to zero; anything more negative is [`Error::NotPsd`].
    pub fn sqrt_psd(&self, tol: f64) -> Result<Self> {
        let (vals, vecs) = self.hermitian_eig()?;
        let scale = vals.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        let mut roots = Vec::with_capacity(vals.len());
        for &l in &vals {
            if l < -tol * scale {
                return Err(Error::NotPsd(format!(
                    "eigenvalue {l:.6e} below -{:.1e}",
                    tol * scale
                )));
            }
            roots.push(l.max(0.0).sqrt());
        }
        // U sqrt(D) U*
        let sqrt_d = Self::diagonal(&roots);
        vecs.matmul(&sqrt_d)?.matmul(&vecs.adjoint())
    }

    /// Two-route positive-semidefiniteness test.
    ///
    /// The eigenvalue route accepts when the smallest eigenvalue is at
    /// least `-tol * max(1, largest eigenvalue)`. A pivoted Cholesky-style
    /// factorization decides the same question independently. When the two
    /// verdicts differ on a matrix whose smallest eigenvalue is decisively
    /// away from the tolerance band, something is wrong with the
    /// computation itself and the result is [`Error::Inconsistency`];
    /// within the band the eigenvalue verdict stands.
    pub fn psd_check(&self, tol: f64) -> Result<PsdReport> {
        let sym = self.require_hermitian()?;
        let vals = sym.hermitian_eigenvalues()?;
        let (min_eigenvalue, max_eigenvalue) = match (vals.first(), vals.last()) {
            (Some(&lo), Some(&hi)) => (lo, hi),
            _ => (0.0, 0.0),
        };
        let scale = max_eigenvalue.abs().max(1.0);
        let psd = min_eigenvalue >= -tol * scale;
        let factorization_psd = sym.pivoted_factorization_psd(tol * scale);
        if psd != factorization_psd && min_eigenvalue.abs() > 2.0 * tol * scale {
            return Err(Error::Inconsistency(format!(
                "eigenvalue route says psd={psd} (min eigenvalue {min_eigenvalue:.6e}) but the \
                 pivoted factorization disagrees outside the tolerance band"
            )));
        }
        Ok(PsdReport {
            psd,
            min_eigenvalue,
            max_eigenvalue,
            factorization_psd,
        })
    }

    /// Greedy pivoted Cholesky on a Hermitian matrix; `true` when the
    /// factorization completes without meeting a decisively negative
    /// pivot or a dead diagonal with live off-diagonal mass.
    fn pivoted_factorization_psd(&self, tol_abs: f64) -> bool {
        let n = self.rows;
        let mut m: Vec<Vec<Complex64>> = (0..n)
            .map(|i| (0..n).map(|j| self[(i, j)]).collect())
            .collect();
        let mut live: Vec<usize> = (0..n).collect();
        while let Some((slot, &idx)) = live
            .iter()
            .enumerate()
            .max_by(|a, b| m[*a.1][*a.1].re.total_cmp(&m[*b.1][*b.1].re))
        {
            let pivot = m[idx][idx].re;
            if pivot <= tol_abs {
                // All remaining diagonal entries are at most `pivot`. A
                // negative one sinks the verdict outright; otherwise the
                // remaining block must be negligible through and through,
                // since a psd matrix obeys |a_ij|^2 <= a_ii a_jj.
                let mut min_diag = f64::INFINITY;
                let mut max_off = 0.0f64;
                for (s, &i) in live.iter().enumerate() {
                    min_diag = min_diag.min(m[i][i].re);
                    for &j in live.iter().skip(s + 1) {
                        max_off = max_off.max(m[i][j].norm());
                    }
                }
                return min_diag >= -tol_abs && max_off <= (n as f64) * tol_abs.max(NORM_FLOOR);
            }
            live.swap_remove(slot);
            // Schur complement update on the remaining live block.
            for &i in &live {
                let li = m[i][idx];
                for &j in &live {
                    let lj = m[j][idx];
                    let delta = li * lj.conj() / pivot;
                    m[i][j] -= delta;
                }
            }
        }
        true
    }
}

impl std::ops::Index<(usize, usize)> for CMatrix {
    type Output = Complex64;
    fn index(&self, (i, j): (usize, usize)) -> &Complex64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for CMatrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut Complex64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}
