//! Evaluation of series at matrix tuples, with certified tail bounds.
//!
//! A point is an n-tuple of square matrices of a common size. Evaluating a
//! series there produces a partial sum together with a bound on everything
//! the partial sum left out, so downstream verdicts (defect positivity,
//! domain membership, purity) can be ternary — held, failed, or honestly
//! inconclusive — instead of silently trusting a truncation.

use num_complex::Complex64;

use crate::cmatrix::CMatrix;
use crate::error::{Error, Result};
use crate::series::{NCSeries, NCTuple};
use crate::Verdict;

/// Ratio cap for geometric tail extrapolation: estimated term ratios are
/// never trusted below this rate of decay, and a ratio at or above one
/// makes the tail infinite.
const TAIL_RATIO_CAP: f64 = 0.95;

/// Baseline relative slack for positivity decisions on defect matrices,
/// on top of the slack induced by evaluation tails.
const DEFECT_PSD_REL: f64 = 1e-9;

/// An n-tuple of square complex matrices of a common size, the kind of
/// point a series is evaluated at. The row norm — the operator norm of the
/// block row `[X_1 ... X_n]`, equal to the square root of the largest
/// eigenvalue of `sum X_i X_i*` — is computed once at construction.
#[derive(Clone, Debug)]
pub struct TupleInstance {
    matrices: Vec<CMatrix>,
    dim: usize,
    row_norm: f64,
}

impl TupleInstance {
    pub fn new(matrices: Vec<CMatrix>) -> Result<Self> {
        if matrices.is_empty() {
            return Err(Error::Shape("a point needs at least one matrix".into()));
        }
        let dim = matrices[0].rows();
        for (i, m) in matrices.iter().enumerate() {
            if !m.is_square() || m.rows() != dim {
                return Err(Error::Shape(format!(
                    "component {} is {}x{}, expected square of size {dim}",
                    i + 1,
                    m.rows(),
                    m.cols()
                )));
            }
        }
        let row_norm = row_norm_of(&matrices)?;
        Ok(TupleInstance {
            matrices,
            dim,
            row_norm,
        })
    }

    /// The zero tuple: `n` zero matrices of size `d`.
    pub fn zero(n: usize, d: usize) -> Result<Self> {
        Self::new(vec![CMatrix::zeros(d, d); n.max(1)])
    }

    /// A tuple of 1x1 matrices — a scalar point.
    pub fn scalar(values: &[Complex64]) -> Result<Self> {
        Self::new(
            values
                .iter()
                .map(|&v| CMatrix::from_row_major(1, 1, vec![v]).expect("1x1 shape"))
                .collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.matrices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.matrices.is_empty()
    }

    /// Size of each (square) component matrix.
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn matrices(&self) -> &[CMatrix] {
        &self.matrices
    }

    pub fn matrix(&self, i: usize) -> &CMatrix {
        &self.matrices[i]
    }

    /// `‖ sum X_i X_i* ‖^(1/2)`, cached at construction.
    pub fn row_norm(&self) -> f64 {
        self.row_norm
    }
}

/// Operator norm of the block row `[X_1 ... X_n]` for square blocks of a
/// common size.
pub fn row_norm_of(matrices: &[CMatrix]) -> Result<f64> {
    if matrices.is_empty() {
        return Ok(0.0);
    }
    let d = matrices[0].rows();
    let mut gram = CMatrix::zeros(d, d);
    for m in matrices {
        gram = gram.add(&m.matmul(&m.adjoint())?)?;
    }
    let top = *gram
        .hermitian_eigenvalues()?
        .last()
        .expect("nonempty spectrum");
    Ok(top.max(0.0).sqrt())
}

/// The result of evaluating a series at a point.
#[derive(Clone, Debug)]
pub struct EvalReport {
    /// Partial sum of the series through `degree_used`, in graded order.
    pub value: CMatrix,
    /// Degree the partial sum actually covers.
    pub degree_used: usize,
    /// Bound on the operator norm of everything beyond `degree_used`,
    /// including the extrapolated part past the stored window. Infinite
    /// when nothing can be certified.
    pub tail_bound: f64,
    /// Whether the evaluation converges: the point's row norm is inside
    /// the series' estimated radius, or the point is nilpotent enough that
    /// the series terminates exactly.
    pub convergent: bool,
}

/// Smallest `m` such that every product of `m` component matrices is
/// exactly zero, detected by iterating `Y -> sum X_i Y X_i*` on the
/// identity and testing for exact vanishing. `None` when no such `m <=
/// cap` exists. Exact zero is the right test: nilpotency of structured
/// (strictly triangular) blocks is preserved by floating-point products.
fn nilpotency_order(x: &TupleInstance, cap: usize) -> Option<usize> {
    let mut y = CMatrix::identity(x.dim());
    for m in 1..=cap {
        let mut next = CMatrix::zeros(x.dim(), x.dim());
        for xi in x.matrices() {
            next = next
                .add(&xi.matmul(&y).expect("square sizes agree").matmul(&xi.adjoint()).expect("square sizes agree"))
                .expect("square sizes agree");
        }
        if next.max_abs() == 0.0 {
            return Some(m);
        }
        y = next;
    }
    None
}

/// Sums `a_w M_w` over the stored words of `f` with `|w| <= degree`, for
/// any family of square matrices of a common size. Words are visited in
/// lexicographic order so consecutive words share maximal prefixes and
/// each product extends a cached stack entry.
pub(crate) fn partial_sum_matrices(
    f: &NCSeries,
    matrices: &[CMatrix],
    degree: usize,
) -> Result<CMatrix> {
    let d = matrices.first().map_or(0, CMatrix::rows);
    let mut words: Vec<(&crate::word::Word, Complex64)> = f
        .terms()
        .filter(|(w, _)| w.len() <= degree)
        .map(|(w, &a)| (w, a))
        .collect();
    words.sort_by(|a, b| a.0.letters().cmp(b.0.letters()));
    let mut value = CMatrix::zeros(d, d);
    let mut stack: Vec<CMatrix> = vec![CMatrix::identity(d)];
    let mut prev: Vec<u8> = Vec::new();
    for (w, a) in words {
        let letters = w.letters();
        let common = prev
            .iter()
            .zip(letters)
            .take_while(|(p, l)| p == l)
            .count();
        stack.truncate(common + 1);
        for &l in &letters[common..] {
            let top = stack.last().expect("stack never empty");
            stack.push(top.matmul(&matrices[(l - 1) as usize])?);
        }
        value = value.add(&stack.last().expect("stack never empty").scale(a))?;
        prev = letters.to_vec();
    }
    Ok(value)
}

/// Sums `a_w M_w · seed` over the stored words of `f` with
/// `|w| <= degree` — the series applied to a rectangular block of
/// columns. Words are visited grouped by common suffix so each product
/// prepends one factor to a cached block, keeping every multiplication at
/// the seed's width.
pub(crate) fn partial_sum_seeded(
    f: &NCSeries,
    matrices: &[CMatrix],
    seed: &CMatrix,
    degree: usize,
) -> Result<CMatrix> {
    let mut words: Vec<(Vec<u8>, Complex64)> = f
        .terms()
        .filter(|(w, _)| w.len() <= degree)
        .map(|(w, &a)| {
            let mut rev = w.letters().to_vec();
            rev.reverse();
            (rev, a)
        })
        .collect();
    words.sort_by(|a, b| a.0.cmp(&b.0));
    let mut value = CMatrix::zeros(seed.rows(), seed.cols());
    let mut stack: Vec<CMatrix> = vec![seed.clone()];
    let mut prev: Vec<u8> = Vec::new();
    for (rev, a) in words {
        let common = prev.iter().zip(&rev).take_while(|(p, l)| p == l).count();
        stack.truncate(common + 1);
        for &l in &rev[common..] {
            let top = stack.last().expect("stack never empty");
            stack.push(matrices[(l - 1) as usize].matmul(top)?);
        }
        value = value.add(&stack.last().expect("stack never empty").scale(a))?;
        prev = rev;
    }
    Ok(value)
}

/// Geometric extrapolation of the terms `t_k = c_k r^k` past the stored
/// window, from the ratio of the last two nonzero terms (per-degree
/// geometric mean when they are not adjacent). Ratios are capped at
/// [`TAIL_RATIO_CAP`]; a ratio at or above one yields infinity. With one
/// nonzero term the cap itself is used; with none the tail past the
/// window is zero.
pub(crate) fn extrapolate_tail(terms: &[f64]) -> f64 {
    let nonzero: Vec<usize> = (0..terms.len()).filter(|&k| terms[k] > 0.0).collect();
    match nonzero.len() {
        0 => 0.0,
        1 => {
            let q = TAIL_RATIO_CAP;
            terms[nonzero[0]] * q / (1.0 - q)
        }
        _ => {
            let j = nonzero[nonzero.len() - 1];
            let i = nonzero[nonzero.len() - 2];
            let ratio = (terms[j] / terms[i]).powf(1.0 / (j - i) as f64);
            if ratio >= 1.0 {
                return f64::INFINITY;
            }
            let q = ratio.min(TAIL_RATIO_CAP);
            terms[j] * q / (1.0 - q)
        }
    }
}

/// Evaluates `f` at the point `x`, summing through `degree` and bounding
/// the rest.
///
/// The tail bound is `sum_{k=degree+1}^{D} c_k r^k` over the stored
/// window plus a geometric extrapolation beyond it, where `c_k` is the
/// Euclidean coefficient norm of degree `k` and `r` the point's row norm
/// — each degree's contribution obeys `‖sum_{|w|=k} a_w X_w‖ <= c_k r^k`
/// by Cauchy–Schwarz on the block row `[X_w]`. Polynomials have no
/// extrapolated part. A point whose products vanish identically from some
/// length on (a nilpotent point) terminates the series exactly: the tail
/// past that length is zero and the evaluation converges regardless of
/// the radius estimate.
///
/// For a truncated series `degree` beyond the stored window is an error
/// (those degrees are unknown); for a polynomial it clamps to the top
/// degree.
pub fn eval_series(f: &NCSeries, x: &TupleInstance, degree: usize) -> Result<EvalReport> {
    if f.n_vars() != x.len() {
        return Err(Error::Shape(format!(
            "series in {} indeterminates evaluated at a {}-tuple",
            f.n_vars(),
            x.len()
        )));
    }
    let stored = f.max_degree();
    let degree_used = if f.is_polynomial() {
        degree.min(stored)
    } else {
        if degree > stored {
            return Err(Error::Shape(format!(
                "evaluation degree {degree} exceeds the stored window {stored} of a truncated series"
            )));
        }
        degree
    };
    let value = partial_sum_matrices(f, x.matrices(), degree_used)?;
    let r = x.row_norm();
    let norms = f.degree_l2_norms();
    let terms: Vec<f64> = norms
        .iter()
        .enumerate()
        .map(|(k, c)| c * r.powi(k as i32))
        .collect();
    let nilpotency = nilpotency_order(x, stored + 1);
    let (tail_bound, convergent) = match nilpotency {
        Some(order) => {
            // Degrees >= order evaluate to zero exactly; the series is a
            // finite sum at this point.
            let tail: f64 = ((degree_used + 1)..order.min(stored + 1))
                .map(|k| terms[k])
                .sum();
            (tail, true)
        }
        None => {
            let windowed: f64 = ((degree_used + 1)..=stored).map(|k| terms[k]).sum();
            let beyond = if f.is_polynomial() {
                0.0
            } else {
                extrapolate_tail(&terms)
            };
            let convergent = f.is_polynomial() || r < f.radius_estimate();
            if convergent {
                (windowed + beyond, true)
            } else {
                (f64::INFINITY, false)
            }
        }
    };
    Ok(EvalReport {
        value,
        degree_used,
        tail_bound,
        convergent,
    })
}

/// Evaluates every component of a tuple at the same point, clamping each
/// component's degree to its own stored window. Convenience for the
/// defect/membership paths, where components may mix polynomial and
/// truncated regimes.
pub fn eval_tuple(f: &NCTuple, x: &TupleInstance, degree: usize) -> Result<Vec<EvalReport>> {
    f.components()
        .iter()
        .map(|c| eval_series(c, x, degree.min(c.max_degree())))
        .collect()
}

/// The two defect operators of a point `T` relative to a tuple `f`,
/// together with the evaluated `f(T)` and its per-component tail bounds.
#[derive(Clone, Debug)]
pub struct DefectOps {
    /// `(I - sum f_i(T) f_i(T)*)^(1/2)`, size d.
    pub delta_row: CMatrix,
    /// `(I - f(T)* f(T))^(1/2)` for the block row `f(T) = [f_1(T) ...
    /// f_n(T)]`, size n*d.
    pub delta_col: CMatrix,
    /// The evaluated components `f_i(T)`.
    pub f_of_t: Vec<CMatrix>,
    /// Tail bound of each evaluation.
    pub eval_tails: Vec<f64>,
}

/// Hermitian square root with an absolute positivity slack: eigenvalues
/// in `[-slack, 0)` clamp to zero, anything lower means the point is
/// decisively outside the closed domain.
fn clamped_sqrt(gram: &CMatrix, slack: f64, what: &str) -> Result<CMatrix> {
    let (vals, vecs) = gram.hermitian_eig()?;
    let min = vals.first().copied().unwrap_or(0.0);
    if min < -slack {
        return Err(Error::NotInDomain(format!(
            "{what} defect has eigenvalue {min:.6e}, below the certified slack {:.3e}",
            -slack
        )));
    }
    let roots: Vec<f64> = vals.iter().map(|l| l.max(0.0).sqrt()).collect();
    vecs.matmul(&CMatrix::diagonal(&roots))?
        .matmul(&vecs.adjoint())
}

/// Computes the row and column defect operators of `t` relative to `f`,
/// evaluating each component through `degree` (clamped to its window).
///
/// Both Gram matrices are checked for positive semidefiniteness with a
/// slack combining a fixed relative floor and the first-order effect of
/// the evaluation tails; a decisive violation is a "not in closed domain"
/// error. Evaluations with an infinite tail bound cannot certify anything
/// and are rejected.
pub fn defect_ops(f: &NCTuple, t: &TupleInstance, degree: usize) -> Result<DefectOps> {
    let reports = eval_tuple(f, t, degree)?;
    let mut slack_from_tails = 0.0f64;
    for (i, rep) in reports.iter().enumerate() {
        if !rep.tail_bound.is_finite() {
            return Err(Error::ResolventNotSummable(format!(
                "evaluation of component {} has an unbounded tail at this point (row norm {:.4})",
                i + 1,
                t.row_norm()
            )));
        }
        let norm = rep.value.operator_norm()?;
        slack_from_tails += 2.0 * norm * rep.tail_bound + rep.tail_bound * rep.tail_bound;
    }
    let d = t.dim();
    let values: Vec<CMatrix> = reports.iter().map(|r| r.value.clone()).collect();
    let tails: Vec<f64> = reports.iter().map(|r| r.tail_bound).collect();

    let mut gram_row = CMatrix::identity(d);
    for v in &values {
        gram_row = gram_row.sub(&v.matmul(&v.adjoint())?)?;
    }
    let scale = gram_row.max_abs().max(1.0);
    let slack = DEFECT_PSD_REL * scale + slack_from_tails;
    let delta_row = clamped_sqrt(&gram_row, slack, "row")?;

    let n = values.len();
    let mut gram_col = CMatrix::identity(n * d);
    for i in 0..n {
        for j in 0..n {
            let prod = values[i].adjoint().matmul(&values[j])?;
            for a in 0..d {
                for b in 0..d {
                    let cur = gram_col[(i * d + a, j * d + b)];
                    gram_col[(i * d + a, j * d + b)] = cur - prod[(a, b)];
                }
            }
        }
    }
    let delta_col = clamped_sqrt(&gram_col, slack, "column")?;

    Ok(DefectOps {
        delta_row,
        delta_col,
        f_of_t: values,
        eval_tails: tails,
    })
}

/// `‖Phi^m(I)‖` for `Phi(Y) = sum A_i Y A_i*` built from the given
/// matrices.
pub(crate) fn purity_of_matrices(matrices: &[CMatrix], m: usize) -> Result<f64> {
    let d = matrices.first().map_or(0, CMatrix::rows);
    let mut y = CMatrix::identity(d);
    for _ in 0..m {
        let mut next = CMatrix::zeros(d, d);
        for a in matrices {
            next = next.add(&a.matmul(&y)?.matmul(&a.adjoint())?)?;
        }
        y = next;
    }
    y.operator_norm()
}

/// `‖Phi^m(I)‖` where `Phi(Y) = sum f_i(T) Y f_i(T)*` and each component
/// is evaluated through its full stored window. Monotone nonincreasing in
/// `m` whenever the row norm of `f(T)` is at most one; tends to zero
/// exactly when the evaluated point is pure.
pub fn purity_measure(f: &NCTuple, t: &TupleInstance, m: usize) -> Result<f64> {
    let max_degree = f
        .components()
        .iter()
        .map(NCSeries::max_degree)
        .max()
        .unwrap_or(0);
    let reports = eval_tuple(f, t, max_degree)?;
    let values: Vec<CMatrix> = reports.into_iter().map(|r| r.value).collect();
    purity_of_matrices(&values, m)
}

/// Verdicts and certified numbers for membership of a point in the
/// domain carved out by `f` and its compositional inverse `g`: the set of
/// points `T` with `g(f(T)) = T` and `‖f(T)‖ <= 1` (row norm), with a
/// strict variant demanding `‖f(T)‖ < 1` and a purity variant demanding
/// the iterates of `Y -> sum f_i(T) Y f_i(T)*` vanish.
#[derive(Clone, Debug)]
pub struct MembershipReport {
    pub in_domain: Verdict,
    pub strict: Verdict,
    pub pure: Verdict,
    /// `max_j ‖g_j(f(T)) - T_j‖`.
    pub residual_gft: f64,
    /// Row norm of the evaluated `f(T)`.
    pub norm_ft: f64,
    /// Uncertainty of `norm_ft` induced by evaluation tails.
    pub norm_tail: f64,
    /// Uncertainty of `residual_gft` (outer tails plus the Lipschitz
    /// amplification of the inner tails).
    pub residual_tail: f64,
    /// The computed purity measure at `m = degree`.
    pub purity_value: f64,
}

/// Sum over stored words of `|a_w| * |w| * r^(|w|-1)` — a Lipschitz
/// constant for evaluation at points of row norm at most `r`, since
/// perturbing one factor of a length-k product moves it by at most
/// `r^(k-1)` times the perturbation, once per slot.
pub(crate) fn lipschitz_at(g: &NCSeries, r: f64) -> f64 {
    g.terms()
        .map(|(w, a)| a.norm() * w.len() as f64 * r.powi(w.len().saturating_sub(1) as i32))
        .sum()
}

/// Decides membership of `t` in the domain of the pair `(f, g)` with
/// ternary verdicts: a verdict is `Holds` or `Fails` only when the
/// computed quantity plus or minus its certified uncertainty clears the
/// threshold, and `Inconclusive` when the uncertainty straddles it.
///
/// `degree` bounds every evaluation (clamped per component) and sets the
/// purity iteration count; `tol` is the comparison tolerance.
pub fn domain_membership(
    f: &NCTuple,
    g: &NCTuple,
    t: &TupleInstance,
    degree: usize,
    tol: f64,
) -> Result<MembershipReport> {
    if f.len() != g.len() {
        return Err(Error::Shape(format!(
            "tuple of {} components paired with inverse of {}",
            f.len(),
            g.len()
        )));
    }
    let f_reports = eval_tuple(f, t, degree)?;
    let f_values: Vec<CMatrix> = f_reports.iter().map(|r| r.value.clone()).collect();
    let norm_ft = row_norm_of(&f_values)?;
    // A block row of per-component errors has norm at most the Euclidean
    // combination of the component bounds.
    let norm_tail = f_reports
        .iter()
        .map(|r| r.tail_bound * r.tail_bound)
        .sum::<f64>()
        .sqrt();
    let upper_norm = norm_ft + norm_tail;
    let lower_norm = norm_ft - norm_tail;

    // g evaluated at the computed f(T); the tails of the inner evaluation
    // enter through a Lipschitz bound at the (worst-case) argument norm.
    let ft_point = TupleInstance::new(f_values)?;
    let g_reports = eval_tuple(g, &ft_point, degree)?;
    let mut residual_gft = 0.0f64;
    let mut residual_tail = 0.0f64;
    let r_up = norm_ft + norm_tail;
    for (j, rep) in g_reports.iter().enumerate() {
        let diff = rep.value.sub(t.matrix(j))?.operator_norm()?;
        residual_gft = residual_gft.max(diff);
        let amplified = if norm_tail > 0.0 {
            lipschitz_at(g.component(j), r_up) * norm_tail
        } else {
            0.0
        };
        residual_tail = residual_tail.max(rep.tail_bound + amplified);
    }

    let residual_ok = residual_gft <= tol + residual_tail;
    let residual_failed = residual_gft - residual_tail > tol;

    let in_domain = if lower_norm > 1.0 + tol || residual_failed {
        Verdict::Fails
    } else if upper_norm <= 1.0 + tol && residual_ok {
        Verdict::Holds
    } else {
        Verdict::Inconclusive
    };

    let strict = if lower_norm >= 1.0 || residual_failed {
        Verdict::Fails
    } else if upper_norm < 1.0 - tol && residual_ok {
        Verdict::Holds
    } else {
        Verdict::Inconclusive
    };

    let purity_value = purity_of_matrices(ft_point.matrices(), degree)?;
    // First-order error of the purity iterate: each of the `degree`
    // applications of the map can deviate by the map-level error, scaled
    // through the remaining applications.
    let dphi: f64 = f_reports
        .iter()
        .map(|r| {
            let norm = r.value.operator_norm().unwrap_or(0.0);
            2.0 * r.tail_bound * norm.max(r_up) + r.tail_bound * r.tail_bound
        })
        .sum();
    let purity_err = if degree == 0 {
        0.0
    } else {
        degree as f64 * r_up.powi(2 * (degree as i32 - 1)) * dphi
    };
    let pure = if purity_value + purity_err <= tol || upper_norm < 1.0 - tol {
        // Either the iterate is certifiably below tolerance already, or
        // the row norm is certifiably inside the open ball and the
        // iterates decay geometrically.
        Verdict::Holds
    } else {
        Verdict::Inconclusive
    };

    Ok(MembershipReport {
        in_domain,
        strict,
        pure,
        residual_gft,
        norm_ft,
        norm_tail,
        residual_tail,
        purity_value,
    })
}
