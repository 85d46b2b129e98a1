//! Scalar-point kernels and Nevanlinna-Pick feasibility.
//!
//! Scalar points of the domain are tuples `λ ∈ C^n` with
//! `Σ_i |f_i(λ)|² < 1`. On those points the domain carries the positive
//! kernel `Λ(μ, λ) = 1 / (1 − Σ_i f_i(μ) conj(f_i(λ)))`, and a target
//! list `A_1, ..., A_m` is attainable by a multiplier of norm at most one
//! exactly when the blocked Pick matrix
//! `[(I − A_i A_j^*) · Λ(λ_i, λ_j)]_{i,j}` is positive semidefinite.
//! [`pick_feasible`] decides that question with an explicit near-boundary
//! band: eigenvalues too close to zero yield an inconclusive verdict
//! rather than a coin-flip boolean.

use num_complex::Complex64;

use crate::cmatrix::CMatrix;
use crate::error::{Error, Result};
use crate::eval::{self, TupleInstance};
use crate::series::NCTuple;
use crate::Verdict;

/// Points whose image has squared length this close to the unit sphere are
/// treated as boundary points and rejected.
const BOUNDARY_TOL: f64 = 1e-12;

/// Kernel denominators with modulus at or below this are treated as boundary
/// collisions. Interior screening makes this unreachable for honest inputs;
/// the check guards against evaluation error on near-boundary pairs.
const DENOMINATOR_TOL: f64 = 1e-12;

/// Interpolation nodes whose coordinates all agree within this are repeated.
const DISTINCT_TOL: f64 = 1e-12;

/// Operator targets are handled as dense blocks of one common square size;
/// anything larger than this is refused up front.
const TARGET_DIM_CAP: usize = 64;

/// Evaluates every component of `f` at a scalar point.
fn point_values(f: &NCTuple, point: &[Complex64]) -> Result<Vec<Complex64>> {
    if point.len() != f.len() {
        return Err(Error::Shape(format!(
            "point has {} coordinates but the tuple has {} components",
            point.len(),
            f.len()
        )));
    }
    let x = TupleInstance::scalar(point)?;
    let window = f
        .components()
        .iter()
        .map(|c| c.max_degree())
        .max()
        .unwrap_or(0);
    let reports = eval::eval_tuple(f, &x, window)?;
    Ok(reports.iter().map(|r| r.value[(0, 0)]).collect())
}

/// Evaluates `f` at `point` and insists the image lies strictly inside the
/// unit sphere, which is what the kernel formula needs.
fn interior_values(f: &NCTuple, point: &[Complex64]) -> Result<Vec<Complex64>> {
    let values = point_values(f, point)?;
    let s: f64 = values.iter().map(|v| v.norm_sqr()).sum();
    if s >= 1.0 - BOUNDARY_TOL {
        return Err(Error::NotInDomain(format!(
            "point maps to squared length {s:.6e}; the kernel needs \
             sum_i |f_i(point)|^2 < 1"
        )));
    }
    Ok(values)
}

/// Kernel value from already-evaluated component values.
fn kernel_from_values(mu: &[Complex64], lambda: &[Complex64]) -> Result<Complex64> {
    let pairing: Complex64 = mu.iter().zip(lambda).map(|(a, b)| a * b.conj()).sum();
    let denominator = Complex64::new(1.0, 0.0) - pairing;
    if denominator.norm() <= DENOMINATOR_TOL {
        return Err(Error::NotInDomain(format!(
            "kernel denominator {:.3e} vanishes; the points sit too close to \
             the boundary for the kernel to be evaluated",
            denominator.norm()
        )));
    }
    Ok(Complex64::new(1.0, 0.0) / denominator)
}

/// The reproducing kernel `Λ(μ, λ) = 1 / (1 − Σ_i f_i(μ) conj(f_i(λ)))` of
/// the domain at two scalar points.
///
/// Both points must map strictly inside the unit sphere under `f`; boundary
/// points and vanishing denominators are reported as domain errors.
pub fn kernel_value(f: &NCTuple, mu: &[Complex64], lambda: &[Complex64]) -> Result<Complex64> {
    let vm = interior_values(f, mu)?;
    let vl = interior_values(f, lambda)?;
    kernel_from_values(&vm, &vl)
}

/// Rejects node lists with (numerically) repeated entries.
fn ensure_distinct(points: &[Vec<Complex64>]) -> Result<()> {
    for i in 0..points.len() {
        for j in (i + 1)..points.len() {
            if points[i].len() == points[j].len()
                && points[i]
                    .iter()
                    .zip(&points[j])
                    .all(|(a, b)| (a - b).norm() <= DISTINCT_TOL)
            {
                return Err(Error::Invalid(format!(
                    "interpolation nodes {i} and {j} coincide; nodes must be \
                     pairwise distinct"
                )));
            }
        }
    }
    Ok(())
}

/// The kernel Gram matrix `[Λ(λ_i, λ_j)]_{i,j}` of a family of scalar points.
///
/// The matrix is Hermitian by construction (the lower triangle is the exact
/// conjugate of the upper one) and positive semidefinite whenever the nodes
/// are genuine interior points.
pub fn gram_matrix(f: &NCTuple, points: &[Vec<Complex64>]) -> Result<CMatrix> {
    ensure_distinct(points)?;
    let values: Vec<Vec<Complex64>> = points
        .iter()
        .map(|p| interior_values(f, p))
        .collect::<Result<_>>()?;
    let m = points.len();
    let mut gram = CMatrix::zeros(m, m);
    for i in 0..m {
        for j in i..m {
            let k = kernel_from_values(&values[i], &values[j])?;
            gram[(i, j)] = k;
            if i != j {
                gram[(j, i)] = k.conj();
            }
        }
    }
    Ok(gram)
}

/// A Nevanlinna-Pick interpolation problem: distinct scalar nodes of the
/// domain together with one square target block per node.
///
/// Construction validates the data (distinct interior nodes, one common
/// square target size of at most [`TARGET_DIM_CAP`]) and assembles the
/// blocked Pick matrix once; [`PickProblem::pick_matrix`] exposes it and
/// [`pick_feasible`] decides positivity.
///
/// Nodes are screened by the norm condition `Σ_i |f_i(λ)|² < 1` alone. When
/// the domain comes with an inverse tuple, the stronger membership identity
/// `g(f(λ)) = λ` can be confirmed separately through
/// [`PickProblem::verify_nodes_against_inverse`]; callers that need the
/// strict notion should do so and say which screening their result rests on.
#[derive(Clone, Debug)]
pub struct PickProblem {
    f: NCTuple,
    points: Vec<Vec<Complex64>>,
    targets: Vec<CMatrix>,
    target_dim: usize,
    assembled: CMatrix,
}

impl PickProblem {
    /// Validates nodes and targets and assembles the Pick matrix.
    pub fn new(
        f: NCTuple,
        points: Vec<Vec<Complex64>>,
        targets: Vec<CMatrix>,
    ) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Invalid(
                "an interpolation problem needs at least one node".into(),
            ));
        }
        if points.len() != targets.len() {
            return Err(Error::Shape(format!(
                "{} nodes but {} targets",
                points.len(),
                targets.len()
            )));
        }
        ensure_distinct(&points)?;
        let target_dim = targets[0].rows();
        if target_dim == 0 {
            return Err(Error::Shape("targets must be nonempty square blocks".into()));
        }
        if target_dim > TARGET_DIM_CAP {
            return Err(Error::Capacity(format!(
                "target blocks are {target_dim}x{target_dim}; sizes beyond \
                 {TARGET_DIM_CAP} are not supported"
            )));
        }
        for (j, t) in targets.iter().enumerate() {
            if t.rows() != t.cols() || t.rows() != target_dim {
                return Err(Error::Shape(format!(
                    "target {j} is {}x{}; all targets must be {target_dim}x{target_dim}",
                    t.rows(),
                    t.cols()
                )));
            }
        }
        let values: Vec<Vec<Complex64>> = points
            .iter()
            .map(|p| interior_values(&f, p))
            .collect::<Result<_>>()?;
        let assembled = assemble_pick(&values, &targets, target_dim)?;
        Ok(Self {
            f,
            points,
            targets,
            target_dim,
            assembled,
        })
    }

    /// The defining tuple.
    pub fn f(&self) -> &NCTuple {
        &self.f
    }

    /// Number of interpolation nodes.
    pub fn node_count(&self) -> usize {
        self.points.len()
    }

    /// The interpolation nodes.
    pub fn points(&self) -> &[Vec<Complex64>] {
        &self.points
    }

    /// The target blocks, one per node.
    pub fn targets(&self) -> &[CMatrix] {
        &self.targets
    }

    /// Common square size of the target blocks.
    pub fn target_dim(&self) -> usize {
        self.target_dim
    }

    /// The assembled `m·k x m·k` Pick matrix
    /// `[(I − A_i A_j^*) · Λ(λ_i, λ_j)]_{i,j}`.
    pub fn pick_matrix(&self) -> &CMatrix {
        &self.assembled
    }

    /// Confirms the strict membership identity `g(f(λ)) = λ` at every node,
    /// coordinate by coordinate within `tol`.
    ///
    /// [`PickProblem::new`] screens nodes by the norm condition only; this
    /// is the optional second half of the membership check for domains that
    /// come with an explicit inverse tuple.
    pub fn verify_nodes_against_inverse(&self, g: &NCTuple, tol: f64) -> Result<()> {
        for (idx, point) in self.points.iter().enumerate() {
            let forward = point_values(&self.f, point)?;
            let back = point_values(g, &forward)?;
            let worst = point
                .iter()
                .zip(&back)
                .map(|(a, b)| (a - b).norm())
                .fold(0.0f64, f64::max);
            if worst > tol {
                return Err(Error::NotInDomain(format!(
                    "node {idx} fails the round trip through the inverse by \
                     {worst:.3e} (tolerance {tol:.3e})"
                )));
            }
        }
        Ok(())
    }
}

/// Builds the blocked Pick matrix from evaluated node values. The lower
/// block triangle is written as the exact adjoint of the upper one, so the
/// result is Hermitian to the last bit.
fn assemble_pick(
    values: &[Vec<Complex64>],
    targets: &[CMatrix],
    k: usize,
) -> Result<CMatrix> {
    let m = targets.len();
    let eye = CMatrix::identity(k);
    let mut big = CMatrix::zeros(m * k, m * k);
    for i in 0..m {
        for j in i..m {
            let lam = kernel_from_values(&values[i], &values[j])?;
            let block = eye.sub(&targets[i].matmul(&targets[j].adjoint())?)?.scale(lam);
            let flipped = block.adjoint();
            for r in 0..k {
                for c in 0..k {
                    big[(i * k + r, j * k + c)] = block[(r, c)];
                    if i != j {
                        big[(j * k + r, i * k + c)] = flipped[(r, c)];
                    }
                }
            }
        }
    }
    Ok(big)
}

/// Outcome of a Pick feasibility check.
#[derive(Clone, Debug, serde::Serialize)]
pub struct PickReport {
    /// `Holds` when the Pick matrix is positive definite beyond the
    /// tolerance band, `Fails` when an eigenvalue is negative beyond it,
    /// `Inconclusive` when the smallest eigenvalue sits inside the band.
    pub verdict: Verdict,
    /// Smallest eigenvalue of the Pick matrix.
    pub min_eigenvalue: f64,
    /// Scale the tolerance band was measured against (largest eigenvalue
    /// modulus, at least one).
    pub scale: f64,
    /// Unit eigenvector certifying infeasibility when the verdict is
    /// `Fails`: its quadratic form against the Pick matrix is negative.
    pub witness: Option<Vec<Complex64>>,
}

/// Decides whether the interpolation targets are attainable by a multiplier
/// of norm at most one, which happens exactly when the Pick matrix is
/// positive semidefinite.
///
/// Eigenvalues within `tol · scale` of zero make the answer numerically
/// uncertain and yield [`Verdict::Inconclusive`] instead of a guess. The
/// eigenvalue route is corroborated by an independent pivoted factorization
/// inside the positivity check; a disagreement outside the band surfaces as
/// an inconsistency error.
pub fn pick_feasible(problem: &PickProblem, tol: f64) -> Result<PickReport> {
    if !tol.is_finite() || tol < 0.0 {
        return Err(Error::Invalid(format!(
            "tolerance must be a finite nonnegative number, got {tol}"
        )));
    }
    // Dual-route corroboration: an eigenvalue/factorization mismatch beyond
    // the band aborts here before any verdict is produced.
    problem.assembled.psd_check(tol)?;
    let (vals, vecs) = problem.assembled.hermitian_eig()?;
    let min_eigenvalue = vals.first().copied().unwrap_or(0.0);
    let scale = vals.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1.0);
    let band = tol * scale;
    let verdict = if min_eigenvalue > band {
        Verdict::Holds
    } else if min_eigenvalue < -band {
        Verdict::Fails
    } else {
        Verdict::Inconclusive
    };
    let witness = (verdict == Verdict::Fails).then(|| {
        (0..problem.assembled.rows())
            .map(|r| vecs[(r, 0)])
            .collect()
    });
    Ok(PickReport {
        verdict,
        min_eigenvalue,
        scale,
        witness,
    })
}
