//! Numerical invariants of an operator tuple: defect rank, curvature,
//! and the characteristic function with its factorization identity.
//!
//! The curvature of a tuple inside the domain of `f` is the limit of
//! `trace[I - Phi^(m+1)(I)] / (1 + n + ... + n^m)` where
//! `Phi(Y) = sum f_i(T) Y f_i(T)*`; it coincides with the curvature of
//! the row contraction `f(T)` and measures how much of the tuple acts
//! like a copy of the universal multiplication model. The characteristic
//! function `Theta` is the multi-analytic operator with symbol blocks
//! `-f(T)` at degree zero and
//! `delta_row * adjoint([f(T)]_{kappa'}) * (block row of delta_col)` at a
//! word `kappa` (with `kappa'` the word minus its first letter); it
//! complements the kernel matrix through `I - Theta Theta* = K K*` and
//! recovers the curvature as `rank - trace[Theta (Q_0 x I) Theta* N]`
//! with `N` the degree-weighted number operator.
//!
//! On a degree-`N` truncation the resolvent in the defining formula is a
//! finite sum — right creation strictly raises degree — so the assembled
//! `Theta` is the exact compression of the infinite operator, not an
//! approximation to it. The factorization defect is therefore pure
//! evaluation accuracy and roundoff whenever the component values are
//! exact.

use num_complex::Complex64;

use crate::cmatrix::CMatrix;
use crate::error::{Error, Result};
use crate::eval::{self, TupleInstance};
use crate::model;
use crate::series::NCTuple;
use crate::word::Word;

/// Relative eigenvalue threshold separating the numerical range of the
/// defect operator from its numerical kernel.
const RANK_REL_TOL: f64 = 1e-9;

/// Absolute floor added to reported tail bounds.
const ROUNDOFF_FLOOR: f64 = 1e-11;

/// Points whose evaluated row norm reaches this close to one count as
/// boundary for the resolvent summability check.
const BOUNDARY_TOL: f64 = 1e-9;

/// Geometric-fit stability: the three consecutive difference ratios may
/// spread by at most this relative amount.
const FIT_RATIO_SPREAD: f64 = 0.1;

// ------------------------------------------------------------------ rank

/// Counts eigenvalues of a Hermitian defect Gram above `tol` times its
/// largest eigenvalue.
fn rank_from_gram(gram: &CMatrix, tol: f64) -> Result<usize> {
    let vals = gram.hermitian_eigenvalues()?;
    let max = vals.last().copied().unwrap_or(0.0);
    if max <= 0.0 {
        return Ok(0);
    }
    Ok(vals.iter().filter(|&&v| v > tol * max).count())
}

/// Evaluates the tuple and returns the component values.
fn evaluated_components(f: &NCTuple, t: &TupleInstance) -> Result<Vec<CMatrix>> {
    let reports = eval::eval_tuple(f, t, usize::MAX)?;
    Ok(reports.into_iter().map(|r| r.value).collect())
}

/// Row defect Gram `I - sum F_i F_i*` of a family of same-size square
/// matrices.
fn row_defect_gram(matrices: &[CMatrix]) -> Result<CMatrix> {
    let d = matrices.first().map_or(0, CMatrix::rows);
    let mut gram = CMatrix::identity(d);
    for m in matrices {
        gram = gram.sub(&m.matmul(&m.adjoint())?)?;
    }
    Ok(gram)
}

/// Rank of the defect operator `(I - sum f_i(T) f_i(T)*)^(1/2)`: the
/// number of defect eigenvalues above `tol` times the largest one.
pub fn rank_f(f: &NCTuple, t: &TupleInstance, tol: f64) -> Result<usize> {
    let values = evaluated_components(f, t)?;
    rank_from_gram(&row_defect_gram(&values)?, tol)
}

// ------------------------------------------------------------------ curvature

/// Curvature measurement of a tuple: the counting quotients, their
/// extrapolated limit, and agreement diagnostics between independent
/// computation routes.
#[derive(Clone, Debug, serde::Serialize)]
pub struct CurvatureReport {
    /// Rank of the defect operator at the default threshold.
    pub rank: usize,
    /// Pairs `(m, trace[I - Phi^(m+1)(I)] / (1 + n + ... + n^m))`.
    pub estimates: Vec<(usize, f64)>,
    /// Geometric extrapolation of the quotient sequence when its
    /// difference ratios are stable; otherwise the final raw quotient.
    pub extrapolated: f64,
    /// Whether the extrapolation fit was stable. When `false`,
    /// `extrapolated` is the unextrapolated final quotient.
    pub extrapolation_stable: bool,
    /// Curvature recovered through the characteristic function, when
    /// that route has been run.
    pub via_theta: Option<f64>,
    /// Largest disagreement between the two direct routes (iterating
    /// `Phi` on the identity vs. accumulating iterates of the defect
    /// Gram), at the quotient level.
    pub agreement_gap: f64,
}

/// Geometric extrapolation of a convergent quotient sequence from its
/// last five points. Returns the fitted limit and whether the fit was
/// stable; an unstable fit falls back to the final raw value.
fn fit_quotient_limit(quotients: &[f64]) -> (f64, bool) {
    let len = quotients.len();
    let last = quotients.last().copied().unwrap_or(0.0);
    if len < 5 {
        return (last, false);
    }
    let window = &quotients[len - 5..];
    let diffs: Vec<f64> = window.windows(2).map(|w| w[1] - w[0]).collect();
    if diffs.iter().all(|d| d.abs() <= 1e-14) {
        return (last, true); // already converged to working precision
    }
    let mut ratios = Vec::new();
    for pair in diffs.windows(2) {
        if pair[0].abs() <= 1e-300 {
            return (last, false);
        }
        ratios.push(pair[1] / pair[0]);
    }
    let min = ratios.iter().copied().fold(f64::INFINITY, f64::min);
    let max = ratios.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let stable = min > 0.0 && max < 1.0 - 1e-3 && (max - min) <= FIT_RATIO_SPREAD * max;
    if !stable {
        return (last, false);
    }
    let rho = ratios[ratios.len() - 1];
    let remaining = diffs[diffs.len() - 1] * rho / (1.0 - rho);
    (last + remaining, true)
}

/// Curvature of a plain row contraction, measured through the counting
/// quotients of its completely positive map `Phi(Y) = sum A_i Y A_i*`.
///
/// Two arithmetically independent routes are run — powers of `Phi` on
/// the identity, and accumulated powers on the defect Gram, equal by
/// telescoping — and their largest quotient-level disagreement is
/// reported.
pub fn row_contraction_curvature(
    matrices: &[CMatrix],
    m_max: usize,
) -> Result<CurvatureReport> {
    if matrices.is_empty() {
        return Err(Error::Shape("curvature of an empty family".into()));
    }
    let d = matrices[0].rows();
    for m in matrices {
        if m.rows() != d || m.cols() != d {
            return Err(Error::Shape(format!(
                "curvature needs square matrices of one size, found {}x{} against {d}x{d}",
                m.rows(),
                m.cols()
            )));
        }
    }
    let gram = row_defect_gram(matrices)?;
    let min_eig = gram.hermitian_eigenvalues()?.first().copied().unwrap_or(0.0);
    if min_eig < -BOUNDARY_TOL * (d as f64).max(1.0) {
        return Err(Error::NotInDomain(format!(
            "row defect has eigenvalue {min_eig:.6e}; the family is not a row contraction"
        )));
    }
    let rank = rank_from_gram(&gram, RANK_REL_TOL)?;
    let n = matrices.len();

    let phi = |y: &CMatrix| -> Result<CMatrix> {
        let mut out = CMatrix::zeros(d, d);
        for a in matrices {
            out = out.add(&a.matmul(y)?.matmul(&a.adjoint())?)?;
        }
        Ok(out)
    };

    // Route one: t_m = trace[I - Phi^(m+1)(I)].
    let mut route_one = Vec::with_capacity(m_max + 1);
    let mut power = CMatrix::identity(d);
    for _ in 0..=m_max {
        power = phi(&power)?;
        route_one.push((d as f64) - power.trace().re);
    }
    // Route two: partial sums of trace[Phi^k(defect gram)].
    let mut route_two = Vec::with_capacity(m_max + 1);
    let mut iterate = gram.clone();
    let mut acc = iterate.trace().re;
    route_two.push(acc);
    for _ in 1..=m_max {
        iterate = phi(&iterate)?;
        acc += iterate.trace().re;
        route_two.push(acc);
    }

    let mut estimates = Vec::with_capacity(m_max + 1);
    let mut agreement_gap = 0.0f64;
    let mut denom = 0.0f64;
    let mut power_of_n = 1.0f64;
    for m in 0..=m_max {
        denom += power_of_n;
        power_of_n *= n as f64;
        estimates.push((m, (route_one[m] / denom).max(0.0)));
        agreement_gap = agreement_gap.max((route_one[m] - route_two[m]).abs() / denom);
    }
    let quotients: Vec<f64> = estimates.iter().map(|&(_, q)| q).collect();
    let (extrapolated, extrapolation_stable) = fit_quotient_limit(&quotients);

    Ok(CurvatureReport {
        rank,
        estimates,
        extrapolated,
        extrapolation_stable,
        via_theta: None,
        agreement_gap,
    })
}

/// Curvature of the tuple `T` in the domain of `f`: evaluates the
/// components and measures the curvature of the row contraction they
/// form — the two notions coincide.
pub fn curvature(f: &NCTuple, t: &TupleInstance, m_max: usize) -> Result<CurvatureReport> {
    let values = evaluated_components(f, t)?;
    row_contraction_curvature(&values, m_max)
}

// ------------------------------------------------------------------ theta

/// Degree-`N` truncation of the characteristic function, between the
/// truncated product space tensored with the co-defect side (`n*d`
/// ambient columns per word) and the defect side (`d` rows per word).
#[derive(Clone, Debug)]
pub struct ThetaTruncation {
    /// The assembled matrix, `(dim * d) x (dim * n * d)` with `dim` the
    /// number of basis words.
    pub matrix: CMatrix,
    /// Top word degree of the truncation.
    pub truncation: usize,
    /// Symbol-degree slabs actually assembled; fewer than `N + 1` only
    /// when the remaining slabs vanish identically.
    pub neumann_terms: usize,
    /// Deviation of the assembly from the exact compression of the
    /// infinite operator. The resolvent sum terminates on the truncated
    /// space, so this is zero.
    pub tail_bound: f64,
}

/// True when iterating `Phi` on the identity reaches exactly zero —
/// nilpotency of structured points survives floating-point products.
fn is_nilpotent(matrices: &[CMatrix]) -> bool {
    fn run(matrices: &[CMatrix]) -> Result<bool> {
        let d = matrices.first().map_or(0, CMatrix::rows);
        let mut y = CMatrix::identity(d);
        for _ in 0..=d {
            if y.max_abs() == 0.0 {
                return Ok(true);
            }
            let mut next = CMatrix::zeros(d, d);
            for a in matrices {
                next = next.add(&a.matmul(&y)?.matmul(&a.adjoint())?)?;
            }
            y = next;
        }
        Ok(false)
    }
    run(matrices).unwrap_or(false)
}

/// Word-indexed products of the component values, parents before
/// children: `products[w] = F_{w_1} ... F_{w_k}`.
fn word_products(
    f_of_t: &[CMatrix],
    basis: &[Word],
    index: &std::collections::BTreeMap<Word, usize>,
) -> Result<Vec<CMatrix>> {
    let d = f_of_t.first().map_or(0, CMatrix::rows);
    let mut products: Vec<CMatrix> = Vec::with_capacity(basis.len());
    products.push(CMatrix::identity(d));
    for w in basis.iter().skip(1) {
        let letters = w.letters();
        let parent = Word::from_letters(&letters[..letters.len() - 1]);
        let last = letters[letters.len() - 1];
        let product = products[index[&parent]].matmul(&f_of_t[(last - 1) as usize])?;
        products.push(product);
    }
    Ok(products)
}

/// Assembles the degree-`N` truncation of the characteristic function of
/// `T`.
///
/// The symbol block at the empty word is `-[f_1(T), ..., f_n(T)]`; at a
/// word `kappa` it is `delta_row * adjoint([f(T)]_{kappa'})` times the
/// block row of `delta_col` selected by the first letter of `kappa`,
/// where `kappa'` drops that letter. A block is written at row word
/// `nu·kappa`, column word `nu` — right creation underlies the formula,
/// so the symbol composes on the right. Because creation strictly raises
/// degree, this assembly is the exact compression of the infinite
/// operator and `tail_bound` is zero.
///
/// Requires the evaluated tuple to be a strict row contraction or
/// nilpotent — otherwise the defining resolvent has no bounded sum and
/// the truncation would not approximate any operator.
pub fn theta_truncation(
    f: &NCTuple,
    t: &TupleInstance,
    truncation: usize,
) -> Result<ThetaTruncation> {
    let ops = eval::defect_ops(f, t, usize::MAX)?;
    let n = f.len();
    let d = t.dim();

    let row_gram_norm = {
        let mut g = CMatrix::zeros(d, d);
        for fi in &ops.f_of_t {
            g = g.add(&fi.matmul(&fi.adjoint())?)?;
        }
        g.hermitian_eigenvalues()?.last().copied().unwrap_or(0.0)
    };
    if row_gram_norm >= 1.0 - BOUNDARY_TOL && !is_nilpotent(&ops.f_of_t) {
        return Err(Error::Invalid(format!(
            "resolvent not summable: the evaluated tuple has row norm {:.9} and is not nilpotent",
            row_gram_norm.max(0.0).sqrt()
        )));
    }

    let (basis, index, _) = model::graded_basis(n, truncation)?;
    let dim = basis.len();
    let products = word_products(&ops.f_of_t, &basis, &index)?;

    // Word products extend left to right, so once every product of one
    // length vanishes identically, all longer products do too and the
    // symbol slabs past that degree are zero.
    let slab_limit = (1..=truncation)
        .find(|&m| {
            basis
                .iter()
                .enumerate()
                .filter(|(_, w)| w.len() == m - 1)
                .all(|(i, _)| products[i].max_abs() == 0.0)
        })
        .map_or(truncation, |m| m - 1);

    // Symbol blocks, one per word kappa within the truncation.
    let f_row = CMatrix::hstack(&ops.f_of_t.iter().collect::<Vec<_>>())?;
    let mut blocks: Vec<CMatrix> = Vec::with_capacity(dim);
    blocks.push(f_row.scale(Complex64::new(-1.0, 0.0)));
    for kappa in basis.iter().skip(1) {
        let letters = kappa.letters();
        if letters.len() > slab_limit {
            blocks.push(CMatrix::zeros(d, n * d));
            continue;
        }
        let first = letters[0];
        let rest = Word::from_letters(&letters[1..]);
        let col_band = ops
            .delta_col
            .submatrix((first as usize - 1) * d..(first as usize) * d, 0..n * d)?;
        let block = ops
            .delta_row
            .matmul(&products[index[&rest]].adjoint())?
            .matmul(&col_band)?;
        blocks.push(block);
    }

    let mut theta = CMatrix::zeros(dim * d, dim * n * d);
    for (col_pos, nu) in basis.iter().enumerate() {
        for (kappa_pos, kappa) in basis.iter().enumerate() {
            if nu.len() + kappa.len() > truncation {
                break; // graded order: later kappa are no shorter
            }
            let row_pos = index[&nu.concat(kappa)];
            let block = &blocks[kappa_pos];
            for r in 0..d {
                for c in 0..n * d {
                    let v = block[(r, c)];
                    if v != Complex64::new(0.0, 0.0) {
                        theta[(row_pos * d + r, col_pos * n * d + c)] += v;
                    }
                }
            }
        }
    }

    Ok(ThetaTruncation {
        matrix: theta,
        truncation,
        neumann_terms: slab_limit + 1,
        tail_bound: 0.0,
    })
}

/// Norm of `I - Theta Theta* - K K*` restricted to the rows and columns
/// of word degree at most `interior_degree`.
///
/// The identity holds exactly for the infinite objects and compresses
/// exactly, so the measured defect is evaluation accuracy and roundoff;
/// it shrinks as the truncation grows only in the sense that nothing
/// new enters the interior block.
pub fn factorization_defect(
    f: &NCTuple,
    t: &TupleInstance,
    truncation: usize,
    interior_degree: usize,
) -> Result<f64> {
    if interior_degree > truncation {
        return Err(Error::Shape(format!(
            "interior degree {interior_degree} exceeds the truncation degree {truncation}"
        )));
    }
    let theta = theta_truncation(f, t, truncation)?;
    let kernel = model::poisson_kernel_matrix(f, t, truncation)?;
    let n = f.len();
    let d = t.dim();
    let (_, _, cumulative) = model::graded_basis(n, truncation)?;
    let rows = cumulative[interior_degree] * d;
    let dim = cumulative[truncation];

    let theta_band = theta.matrix.submatrix(0..rows, 0..dim * n * d)?;
    let kernel_band = kernel.submatrix(0..rows, 0..d)?;
    let mut defect = CMatrix::identity(rows);
    defect = defect.sub(&theta_band.matmul(&theta_band.adjoint())?)?;
    defect = defect.sub(&kernel_band.matmul(&kernel_band.adjoint())?)?;
    defect.operator_norm()
}

/// Curvature through the characteristic function: `rank - trace[Theta
/// (Q_0 x I) Theta* N]` with `N` weighting each word degree `k` by
/// `n^(-k)`, the trace summed through the truncation. Returns the value
/// and a certified bound on the dropped trace mass.
pub fn curvature_via_theta(
    f: &NCTuple,
    t: &TupleInstance,
    truncation: usize,
) -> Result<(f64, f64)> {
    let theta = theta_truncation(f, t, truncation)?;
    let values = evaluated_components(f, t)?;
    let rank = rank_from_gram(&row_defect_gram(&values)?, RANK_REL_TOL)?;
    let n = f.len();
    let d = t.dim();
    let (basis, _, _) = model::graded_basis(n, truncation)?;

    // First block column of Theta: the symbol over the vacuum.
    let mut per_degree = vec![0.0f64; truncation + 1];
    for (pos, w) in basis.iter().enumerate() {
        let mut sumsq = 0.0f64;
        for r in 0..d {
            for c in 0..n * d {
                sumsq += theta.matrix[(pos * d + r, c)].norm_sqr();
            }
        }
        per_degree[w.len()] += sumsq;
    }
    let mut partial = 0.0f64;
    let mut weight = 1.0f64;
    for &trace_k in &per_degree {
        partial += trace_k * weight;
        weight /= n as f64;
    }

    // Dropped degrees: trace over degree k is at most n times the
    // squared Frobenius mass of the word products at degree k - 1, which
    // contracts by the column Gram norm each step.
    let mut iterate = CMatrix::identity(d);
    let phi = |y: &CMatrix, ms: &[CMatrix]| -> Result<CMatrix> {
        let mut out = CMatrix::zeros(d, d);
        for a in ms {
            out = out.add(&a.matmul(y)?.matmul(&a.adjoint())?)?;
        }
        Ok(out)
    };
    for _ in 0..truncation {
        iterate = phi(&iterate, &values)?;
    }
    let product_mass = iterate.trace().re.max(0.0);
    let mut col_gram = CMatrix::zeros(d, d);
    for v in &values {
        col_gram = col_gram.add(&v.adjoint().matmul(v)?)?;
    }
    let contraction = col_gram
        .hermitian_eigenvalues()?
        .last()
        .copied()
        .unwrap_or(0.0)
        .max(0.0);
    let nf = n as f64;
    let tail = if contraction < nf {
        product_mass * nf.powi(-(truncation as i32)) / (1.0 - contraction / nf)
            + ROUNDOFF_FLOOR
    } else {
        f64::INFINITY
    };
    Ok((rank as f64 - partial, tail))
}

// ------------------------------------------------------------------ pointwise symbol

/// Pointwise value of the characteristic function at a scalar point `z`
/// with `sum |f_i(z)|^2 < 1`:
/// `-f(T) + delta_row (I - sum f_i(z) f_i(T)*)^(-1) [f_1(z) I, ...,
/// f_n(z) I] delta_col`, a `d x (n*d)` matrix. For commuting tuples this
/// is the multiplier symbol evaluated at the point.
pub fn characteristic_point(
    f: &NCTuple,
    t: &TupleInstance,
    z: &[Complex64],
) -> Result<CMatrix> {
    if f.len() != z.len() || f.n_vars() != z.len() {
        return Err(Error::Shape(format!(
            "a pointwise symbol needs a square tuple at a matching point: {} components in {} indeterminates at a {}-point",
            f.len(),
            f.n_vars(),
            z.len()
        )));
    }
    let x = TupleInstance::scalar(z)?;
    let scalar_reports = eval::eval_tuple(f, &x, usize::MAX)?;
    let values: Vec<Complex64> = scalar_reports.iter().map(|r| r.value[(0, 0)]).collect();
    let s: f64 = values.iter().map(|v| v.norm_sqr()).sum();
    if s >= 1.0 {
        return Err(Error::NotInDomain(format!(
            "squared component sum {s:.9} at the point reaches the unit sphere"
        )));
    }

    let ops = eval::defect_ops(f, t, usize::MAX)?;
    let n = f.len();
    let d = t.dim();
    let mut resolvent_base = CMatrix::identity(d);
    for (i, v) in values.iter().enumerate() {
        resolvent_base = resolvent_base.sub(&ops.f_of_t[i].adjoint().scale(*v))?;
    }
    let mut scaled_row = CMatrix::zeros(d, n * d);
    for (i, v) in values.iter().enumerate() {
        for r in 0..d {
            scaled_row[(r, i * d + r)] = *v;
        }
    }
    let rhs = scaled_row.matmul(&ops.delta_col)?;
    let solved = resolvent_base.solve(&rhs)?;
    let f_row = CMatrix::hstack(&ops.f_of_t.iter().collect::<Vec<_>>())?;
    f_row
        .scale(Complex64::new(-1.0, 0.0))
        .add(&ops.delta_row.matmul(&solved)?)
}
