//! Finite truncations of the multiplication model attached to an inverse
//! pair.
//!
//! Fix a tuple `g = (g_1, ..., g_n)` with `g(0) = 0` that expands each
//! coordinate through a family of products: writing `f_alpha` for the
//! product of components of the compositional inverse along the word
//! `alpha`, declared orthonormal, each coordinate satisfies
//! `Z_i = sum_alpha a_alpha^(i) f_alpha` with `a^(i)` the coefficients of
//! `g_i`. On the span of the `f_alpha` with `|alpha| <= N` this module
//! realizes, as explicit matrices: multiplication by each coordinate
//! (`mz`), the exact 0/1 creation matrices prepending one letter (`mf`),
//! their right-sided companions appending one letter (`right`), the
//! kernel vector of a scalar point, and the kernel matrix of a matrix
//! point, together with certified defect and tail reports for the
//! identities these objects satisfy.
//!
//! Because every coordinate matrix strictly raises degree, a truncated
//! product compressed to low-degree columns agrees exactly with the
//! compression of its infinite counterpart; the reported tails therefore
//! cover only stored-window remainders, boundary escape, and roundoff,
//! never a hidden truncation artifact.

use std::collections::BTreeMap;

use num_complex::Complex64;

use crate::calculus;
use crate::cmatrix::CMatrix;
use crate::error::{Error, Result};
use crate::eval::{self, TupleInstance};
use crate::series::{NCSeries, NCTuple};
use crate::word::{self, Word};

/// Absolute floor added to every reported tail bound, covering the
/// eigensolver and accumulation roundoff of dense products at the
/// dimensions the truncation produces.
const ROUNDOFF_FLOOR: f64 = 1e-11;

/// Constant terms above this fraction of the largest coefficient
/// disqualify a tuple from generating a graded model.
const CONSTANT_TERM_REL: f64 = 1e-13;

/// Scalar points whose squared component sum is this close to one sit on
/// the boundary sphere and admit no normalizable kernel vector.
const BOUNDARY_TOL: f64 = 1e-12;

// ------------------------------------------------------------------ model

/// Matrices of the degree-`N` truncated multiplication model of an
/// inverse pair, on the basis of orthonormal products `f_alpha` indexed
/// by words `|alpha| <= N` in graded lexicographic order.
#[derive(Clone, Debug)]
pub struct ModelMatrices {
    n: usize,
    truncation: usize,
    basis: Vec<Word>,
    index: BTreeMap<Word, usize>,
    /// `cumulative[k]` counts the basis words of degree at most `k`.
    cumulative: Vec<usize>,
    mz: Vec<CMatrix>,
    mf: Vec<CMatrix>,
    right: Vec<CMatrix>,
    coordinates: NCTuple,
}

impl ModelMatrices {
    /// Number of indeterminates.
    pub fn n(&self) -> usize {
        self.n
    }

    /// Top degree `N` of the truncation.
    pub fn truncation(&self) -> usize {
        self.truncation
    }

    /// Dimension of the truncated space: `1 + n + ... + n^N`.
    pub fn dim(&self) -> usize {
        self.basis.len()
    }

    /// Basis words in graded lexicographic order.
    pub fn basis(&self) -> &[Word] {
        &self.basis
    }

    /// Position of a basis word, if it lies within the truncation.
    pub fn word_index(&self, w: &Word) -> Option<usize> {
        self.index.get(w).copied()
    }

    /// Number of basis words of degree at most `k` (clamped to the
    /// truncation), which is also where the degree-`k` block ends.
    pub fn dim_through_degree(&self, k: usize) -> usize {
        self.cumulative[k.min(self.truncation)]
    }

    /// Multiplication by each coordinate `Z_i`.
    pub fn mz(&self) -> &[CMatrix] {
        &self.mz
    }

    /// Exact 0/1 creation matrices: basis word `beta` maps to `j·beta`,
    /// dropped when `beta` already has top degree.
    pub fn mf(&self) -> &[CMatrix] {
        &self.mf
    }

    /// Right-sided creation matrices: `beta` maps to `beta·j`.
    pub fn right_creation(&self) -> &[CMatrix] {
        &self.right
    }

    /// The stored coordinate expansions (the inverse tuple the model was
    /// built from), untruncated.
    pub fn coordinates(&self) -> &NCTuple {
        &self.coordinates
    }

    /// Diagonal 0/1 projection onto the basis words of degree exactly
    /// `k`.
    pub fn degree_projection(&self, k: usize) -> Result<CMatrix> {
        if k > self.truncation {
            return Err(Error::Index(format!(
                "degree {k} projection outside a degree-{} truncation",
                self.truncation
            )));
        }
        let entries: Vec<f64> = self
            .basis
            .iter()
            .map(|w| if w.len() == k { 1.0 } else { 0.0 })
            .collect();
        Ok(CMatrix::diagonal(&entries))
    }
}

/// Graded-lex word basis, its word-to-position map, and the per-degree
/// cumulative counts, bundled as one lookup table.
pub(crate) type BasisTables = (Vec<Word>, BTreeMap<Word, usize>, Vec<usize>);

/// Enumerates the graded-lex word basis through `truncation` along with
/// the word-to-position map and the per-degree cumulative counts.
pub(crate) fn graded_basis(n: usize, truncation: usize) -> Result<BasisTables> {
    let basis = word::all_words_up_to_capped(n, truncation, word::word_cap())?;
    let mut index = BTreeMap::new();
    for (k, w) in basis.iter().enumerate() {
        index.insert(w.clone(), k);
    }
    let mut cumulative = vec![0usize; truncation + 1];
    for w in &basis {
        cumulative[w.len()] += 1;
    }
    for k in 1..=truncation {
        cumulative[k] += cumulative[k - 1];
    }
    Ok((basis, index, cumulative))
}

/// Builds the degree-`N` model matrices of the tuple `g` expanding each
/// coordinate in the orthonormal product basis.
///
/// Requires `g(0) = 0` (the matrices must strictly raise degree) and, for
/// truncated components, a stored window reaching `N` — otherwise entries
/// inside the truncation would silently be missing.
pub fn build_model(g: &NCTuple, truncation: usize) -> Result<ModelMatrices> {
    if g.is_empty() {
        return Err(Error::Shape("cannot build a model from an empty tuple".into()));
    }
    let n = g.len();
    if n != g.n_vars() {
        return Err(Error::Shape(format!(
            "coordinate expansions must be square: {} components in {} indeterminates",
            n,
            g.n_vars()
        )));
    }
    let scale = g.sup_coeff_norm().max(1.0);
    for (i, c) in g.constant_terms().iter().enumerate() {
        if c.norm() > CONSTANT_TERM_REL * scale {
            return Err(Error::ConstantTerm(format!(
                "component {} has constant term of magnitude {:.3e}; a graded model needs the tuple to vanish at the origin",
                i + 1,
                c.norm()
            )));
        }
    }
    for (i, comp) in g.components().iter().enumerate() {
        if !comp.is_polynomial() && comp.max_degree() < truncation {
            return Err(Error::Shape(format!(
                "component {} is stored through degree {} only; a degree-{truncation} model needs every coefficient inside the truncation",
                i + 1,
                comp.max_degree()
            )));
        }
    }

    let (basis, index, cumulative) = graded_basis(n, truncation)?;
    let dim = basis.len();

    let mut mf = Vec::with_capacity(n);
    let mut right = Vec::with_capacity(n);
    for j in 1..=n as u8 {
        let mut left = CMatrix::zeros(dim, dim);
        let mut rgt = CMatrix::zeros(dim, dim);
        let letter = Word::letter(j);
        for (col, beta) in basis.iter().enumerate() {
            if beta.len() == truncation {
                break;
            }
            left[(index[&letter.concat(beta)], col)] = Complex64::new(1.0, 0.0);
            rgt[(index[&beta.concat(&letter)], col)] = Complex64::new(1.0, 0.0);
        }
        mf.push(left);
        right.push(rgt);
    }

    let mut mz = Vec::with_capacity(n);
    for comp in g.components() {
        let mut m = CMatrix::zeros(dim, dim);
        for (alpha, &a) in comp.terms() {
            if alpha.is_identity() {
                continue; // below the constant-term tolerance, certified above
            }
            if alpha.len() > truncation {
                break; // graded order: nothing shorter follows
            }
            for col in 0..cumulative[truncation - alpha.len()] {
                m[(index[&alpha.concat(&basis[col])], col)] += a;
            }
        }
        mz.push(m);
    }

    Ok(ModelMatrices {
        n,
        truncation,
        basis,
        index,
        cumulative,
        mz,
        mf,
        right,
        coordinates: g.clone(),
    })
}

// ------------------------------------------------------------------ relations

/// Certified defect report for the two structural relations of the model
/// matrices, measured on the columns of degree at most `m`.
#[derive(Clone, Debug)]
pub struct RelationDefects {
    /// Largest deviation, over coordinate pairs and degrees `k <= m`, of
    /// the degree-`k` compression of `mz_i^* mz_j` from the scalar
    /// `<Z_j, Z_i>` times the identity. Each such compression is scalar
    /// exactly, so this defect consists of dropped coefficient mass only
    /// and shrinks as the truncation grows.
    pub cstar_defect: f64,
    /// Bound on what truncation can contribute to `cstar_defect`:
    /// per-degree Cauchy–Schwarz products of the coordinate coefficient
    /// norms over the dropped degrees, plus the extrapolated completion
    /// past the stored window, plus the roundoff floor.
    pub cstar_tail: f64,
    /// Operator norm of the part of `mz_i^* mz_j` (compressed to degree
    /// `<= m`) lying off the degree-diagonal blocks, maximized over
    /// pairs. These entries are suffix-correlation sums
    /// `sum_delta conj(a_delta^(i)) a_(delta·gamma)^(j)` intrinsic to the
    /// model — they grow toward their infinite values as the truncation
    /// increases and are reported as structure, not as error.
    pub cross_norm: f64,
    /// Largest deviation, over components `j`, of the coordinate series
    /// of the inverse evaluated on the `mz` matrices from the creation
    /// matrix `mf_j`, on the same columns. Exact compression makes this a
    /// stored-window residual: it vanishes to roundoff whenever the
    /// inverse is polynomial or its window covers the truncation.
    pub shift_defect: f64,
    /// Bound on `shift_defect`: a creation-norm bound on the remainder
    /// `Z_j - (inverse_j ∘ coordinates)` computed from its per-degree
    /// coefficient norms, plus the roundoff floor.
    pub shift_tail: f64,
}

/// Overlap `<Z_j, Z_i>` of two coordinate expansions: the coefficientwise
/// inner product of the stored series.
fn coordinate_overlap(gi: &NCSeries, gj: &NCSeries) -> Complex64 {
    let mut s = Complex64::new(0.0, 0.0);
    for (w, &a) in gj.terms() {
        s += a * gi.coeff(w).conj();
    }
    s
}

/// Per-degree Cauchy–Schwarz bound on the overlap mass of two series at
/// degrees strictly above `kept`, including the extrapolated completion
/// past the stored windows. Degreewise, `|sum_{|w|=k} a_w conj(b_w)|` is
/// at most the product of the Euclidean degree norms.
fn overlap_mass_beyond(gi: &NCSeries, gj: &NCSeries, kept: usize) -> f64 {
    let ci = gi.degree_l2_norms();
    let cj = gj.degree_l2_norms();
    let len = ci.len().max(cj.len());
    let prod: Vec<f64> = (0..len)
        .map(|k| ci.get(k).copied().unwrap_or(0.0) * cj.get(k).copied().unwrap_or(0.0))
        .collect();
    let window: f64 = prod.iter().skip(kept + 1).sum();
    let completion = if gi.is_polynomial() || gj.is_polynomial() {
        0.0 // one factor is identically zero past its stored top degree
    } else {
        eval::extrapolate_tail(&prod)
    };
    window + completion
}

/// Upper bound on the operator norm of multiplication by `series` in an
/// orthonormal product basis: the sum of its Euclidean per-degree
/// coefficient norms plus the extrapolated completion. Each degree slice
/// is a row of creations with orthogonal ranges, whose norm is exactly
/// the Euclidean norm of its coefficients.
pub(crate) fn creation_norm_bound(series: &NCSeries) -> f64 {
    let c = series.degree_l2_norms();
    let stored: f64 = c.iter().skip(1).sum();
    let completion = if series.is_polynomial() {
        0.0
    } else {
        eval::extrapolate_tail(&c)
    };
    stored + completion
}

/// Measures the two structural relations of the model on the columns of
/// degree at most `interior_degree`.
///
/// The scalar relation: every degree-`k` compression of `mz_i^* mz_j`
/// equals `<Z_j, Z_i>` times the identity — same-degree words annihilate
/// orthogonally, so the compression picks up exactly the coefficient
/// pairs the truncation retains. The off-degree-diagonal part of the
/// product is genuine suffix correlation and is reported separately as
/// [`RelationDefects::cross_norm`].
///
/// The creation relation: the compositional inverse of the stored
/// coordinates, evaluated on the `mz` matrices, reproduces each `mf_j`.
/// The inverse is recomputed here through the truncation degree.
pub fn model_relation_defects(
    model: &ModelMatrices,
    interior_degree: usize,
) -> Result<RelationDefects> {
    let m = interior_degree;
    let nn = model.n;
    let big_n = model.truncation;
    if m > big_n {
        return Err(Error::Shape(format!(
            "interior degree {m} exceeds the truncation degree {big_n}"
        )));
    }
    let dim = model.dim();
    let cols = model.cumulative[m];

    // Scalar relation, degreewise.
    let mut cstar_defect = 0.0f64;
    let mut cstar_tail = 0.0f64;
    let mut cross_norm = 0.0f64;
    let col_blocks: Vec<CMatrix> = (0..nn)
        .map(|i| model.mz[i].submatrix(0..dim, 0..cols))
        .collect::<Result<_>>()?;
    for i in 0..nn {
        for j in 0..nn {
            let gi = model.coordinates.component(i);
            let gj = model.coordinates.component(j);
            let product = col_blocks[i].adjoint().matmul(&col_blocks[j])?;
            let overlap = coordinate_overlap(gi, gj);
            let mut off_diagonal = product.clone();
            for k in 0..=m {
                let lo = if k == 0 { 0 } else { model.cumulative[k - 1] };
                let hi = model.cumulative[k];
                let block = product.submatrix(lo..hi, lo..hi)?;
                let deviation = block
                    .sub(&CMatrix::identity(hi - lo).scale(overlap))?
                    .operator_norm()?;
                cstar_defect = cstar_defect.max(deviation);
                for r in lo..hi {
                    for c in lo..hi {
                        off_diagonal[(r, c)] = Complex64::new(0.0, 0.0);
                    }
                }
            }
            cross_norm = cross_norm.max(off_diagonal.operator_norm()?);
            cstar_tail = cstar_tail.max(overlap_mass_beyond(gi, gj, big_n - m));
        }
    }
    cstar_tail += ROUNDOFF_FLOOR;

    // Creation relation through the recomputed inverse.
    let inverse = calculus::invert(&model.coordinates, big_n)?.inverse;
    let seed = CMatrix::from_fn(dim, cols, |r, c| {
        Complex64::new(if r == c { 1.0 } else { 0.0 }, 0.0)
    });
    let mut shift_defect = 0.0f64;
    let mut shift_tail = 0.0f64;
    for j in 0..nn {
        let comp = inverse.component(j);
        let evaluated = eval::partial_sum_seeded(
            comp,
            &model.mz,
            &seed,
            comp.max_degree().min(big_n),
        )?;
        let target = model.mf[j].submatrix(0..dim, 0..cols)?;
        shift_defect = shift_defect.max(evaluated.sub(&target)?.operator_norm()?);

        let recomposed = calculus::compose(comp, &model.coordinates, big_n)?;
        let remainder =
            NCSeries::variable(model.n, (j + 1) as u8)?.sub(&recomposed)?;
        shift_tail = shift_tail.max(creation_norm_bound(&remainder));
    }
    shift_tail += ROUNDOFF_FLOOR;

    Ok(RelationDefects {
        cstar_defect,
        cstar_tail,
        cross_norm,
        shift_defect,
        shift_tail,
    })
}

// ------------------------------------------------------------------ kernel vectors

/// Kernel vector of a scalar point inside the domain, in the truncated
/// product basis.
#[derive(Clone, Debug)]
pub struct PoissonEigenvector {
    /// Coordinates `sqrt(1 - s) * conj([f(lambda)]_alpha)` in basis
    /// order, where `s` is the squared component sum at the point.
    pub gamma: Vec<Complex64>,
    /// The unscaled coordinates `conj([f(lambda)]_alpha)`.
    pub omega: Vec<Complex64>,
    /// `s = sum_i |f_i(lambda)|^2`.
    pub squared_sum: f64,
    /// Euclidean norm of `gamma`; equals
    /// `sqrt((1 - s) * sum_{k<=N} s^k)` and tends to one as the
    /// truncation grows.
    pub norm: f64,
    /// Top degree of the truncation the vector was built for.
    pub truncation: usize,
}

/// Builds the truncated kernel vector of the scalar point `lambda`:
/// coordinates are conjugated products of the component values, scaled by
/// the square root of the defect `1 - s`. Points on or outside the unit
/// sphere of component values are rejected.
pub fn poisson_eigenvector(
    f: &NCTuple,
    lambda: &[Complex64],
    truncation: usize,
) -> Result<PoissonEigenvector> {
    if f.len() != lambda.len() || f.n_vars() != lambda.len() {
        return Err(Error::Shape(format!(
            "a kernel vector needs a square tuple evaluated at a matching point: {} components in {} indeterminates at a {}-point",
            f.len(),
            f.n_vars(),
            lambda.len()
        )));
    }
    let x = TupleInstance::scalar(lambda)?;
    let reports = eval::eval_tuple(f, &x, usize::MAX)?;
    let values: Vec<Complex64> = reports.iter().map(|r| r.value[(0, 0)]).collect();
    let s: f64 = values.iter().map(|v| v.norm_sqr()).sum();
    if s >= 1.0 - BOUNDARY_TOL {
        return Err(Error::NotInDomain(format!(
            "squared component sum {s:.12} reaches the unit sphere; the kernel vector is not normalizable there"
        )));
    }

    let (basis, index, _) = graded_basis(lambda.len(), truncation)?;
    let mut products = vec![Complex64::new(1.0, 0.0); basis.len()];
    for (idx, w) in basis.iter().enumerate().skip(1) {
        let letters = w.letters();
        let parent = Word::from_letters(&letters[..letters.len() - 1]);
        let last = letters[letters.len() - 1];
        products[idx] = products[index[&parent]] * values[(last - 1) as usize];
    }
    let omega: Vec<Complex64> = products.iter().map(|p| p.conj()).collect();
    let scale = (1.0 - s).sqrt();
    let gamma: Vec<Complex64> = omega.iter().map(|o| o * scale).collect();
    let norm = gamma.iter().map(|g| g.norm_sqr()).sum::<f64>().sqrt();
    Ok(PoissonEigenvector {
        gamma,
        omega,
        squared_sum: s,
        norm,
        truncation,
    })
}

/// Residual of the adjoint eigenvalue relations `mz_i^* gamma =
/// conj(lambda_i) gamma` on the truncated kernel vector, normalized by
/// its norm, together with a certified tail.
///
/// The truncated vector misses exactly the coefficient mass
/// `s^(N+1)` past the top degree; pushing that through the adjoint
/// multiplications bounds the residual by `b * s^((N+1)/2) / ‖gamma‖`
/// with `b` the creation-norm bound of the coordinates.
pub fn eigenvector_residual(
    model: &ModelMatrices,
    vector: &PoissonEigenvector,
    lambda: &[Complex64],
) -> Result<(f64, f64)> {
    if lambda.len() != model.n {
        return Err(Error::Shape(format!(
            "point has {} coordinates, model has {}",
            lambda.len(),
            model.n
        )));
    }
    if vector.truncation != model.truncation || vector.gamma.len() != model.dim() {
        return Err(Error::Shape(format!(
            "kernel vector was built for truncation {}, model has {}",
            vector.truncation, model.truncation
        )));
    }
    let gamma = CMatrix::from_fn(model.dim(), 1, |r, _| vector.gamma[r]);
    let mut residual = 0.0f64;
    for (i, li) in lambda.iter().enumerate() {
        let lhs = model.mz[i].adjoint().matmul(&gamma)?;
        let deviation = lhs.sub(&gamma.scale(li.conj()))?.frobenius_norm();
        residual = residual.max(deviation);
    }
    residual /= vector.norm;
    let b = model
        .coordinates
        .components()
        .iter()
        .map(creation_norm_bound)
        .fold(0.0f64, f64::max);
    let missing = vector.squared_sum.sqrt().powi(model.truncation as i32 + 1);
    let tail = b * missing / vector.norm + ROUNDOFF_FLOOR;
    Ok((residual, tail))
}

// ------------------------------------------------------------------ kernel matrices

/// Assembles the kernel matrix from already-computed defect data: the
/// block at word `alpha` is `delta_row * adjoint([f(T)]_alpha)`, with the
/// word products built by extending each basis word's prefix by one
/// factor.
fn kernel_from_defects(
    f_of_t: &[CMatrix],
    delta_row: &CMatrix,
    basis: &[Word],
    index: &BTreeMap<Word, usize>,
) -> Result<CMatrix> {
    let d = delta_row.rows();
    let mut products: Vec<CMatrix> = Vec::with_capacity(basis.len());
    products.push(CMatrix::identity(d));
    for w in basis.iter().skip(1) {
        let letters = w.letters();
        let parent = Word::from_letters(&letters[..letters.len() - 1]);
        let last = letters[letters.len() - 1];
        let product = products[index[&parent]].matmul(&f_of_t[(last - 1) as usize])?;
        products.push(product);
    }
    let mut k = CMatrix::zeros(basis.len() * d, d);
    for (idx, product) in products.iter().enumerate() {
        let block = delta_row.matmul(&product.adjoint())?;
        for r in 0..d {
            for c in 0..d {
                k[(idx * d + r, c)] = block[(r, c)];
            }
        }
    }
    Ok(k)
}

/// Kernel matrix of the point `T` through degree `N`: a `(dim * d) x d`
/// column of blocks, one per basis word `alpha`, each equal to
/// `delta_row * adjoint([f(T)]_alpha)`.
///
/// Its exact finite identity is `K* K = I - Phi^(N+1)(I)` with `Phi` the
/// completely positive map `Y -> sum f_i(T) Y f_i(T)*` — telescoping, so
/// it holds for every point the defect operators accept, pure or not.
pub fn poisson_kernel_matrix(
    f: &NCTuple,
    t: &TupleInstance,
    truncation: usize,
) -> Result<CMatrix> {
    let ops = eval::defect_ops(f, t, usize::MAX)?;
    let (basis, index, _) = graded_basis(f.len(), truncation)?;
    kernel_from_defects(&ops.f_of_t, &ops.delta_row, &basis, &index)
}

/// Measures how far the kernel matrix is from intertwining the point
/// with the adjoint model: the norm of
/// `K T_i^* - (mz_i^* ⊗ I) K` restricted to the rows of word degree at
/// most `interior_degree`, maximized over coordinates, together with a
/// certified tail.
///
/// The tail combines four effects: kernel mass past the truncation
/// (bounded through the purity of the point at degree `N + 1`), the
/// residual of recovering `T` from the evaluated tuple through the
/// stored coordinate windows, the accuracy of the evaluated blocks, and
/// the roundoff floor. At a scalar point with full interior this reduces
/// to the kernel-vector residual scaled by the vector norm.
pub fn intertwining_defect(
    f: &NCTuple,
    g: &NCTuple,
    t: &TupleInstance,
    truncation: usize,
    interior_degree: usize,
) -> Result<(f64, f64)> {
    if interior_degree > truncation {
        return Err(Error::Shape(format!(
            "interior degree {interior_degree} exceeds the truncation degree {truncation}"
        )));
    }
    if f.len() != g.len() || f.len() != t.len() {
        return Err(Error::Shape(format!(
            "tuple sizes disagree: {} components, {} coordinate expansions, {} matrices",
            f.len(),
            g.len(),
            t.len()
        )));
    }
    let model = build_model(g, truncation)?;
    let d = t.dim();
    let ops = eval::defect_ops(f, t, usize::MAX)?;
    let kernel = kernel_from_defects(&ops.f_of_t, &ops.delta_row, &model.basis, &model.index)?;
    let rows = model.cumulative[interior_degree] * d;

    let mut defect = 0.0f64;
    let mut tail = 0.0f64;

    // Shared error budget pieces.
    let purity = eval::purity_of_matrices(&ops.f_of_t, truncation + 1)?;
    let escaped = purity.max(0.0).sqrt();
    let tau_row: f64 = ops.eval_tails.iter().map(|t| t * t).sum::<f64>().sqrt();
    // Accuracy of the square-root factor: exact up to clamping, which is
    // bounded by the negative part of the row defect's spectrum.
    let mut gram = CMatrix::identity(d);
    for fi in &ops.f_of_t {
        gram = gram.sub(&fi.matmul(&fi.adjoint())?)?;
    }
    let min_eig = gram
        .hermitian_eigenvalues()?
        .first()
        .copied()
        .unwrap_or(0.0);
    let delta_err = (-min_eig).max(0.0).sqrt();
    let degrees = truncation as f64;
    let kernel_err = delta_err * (degrees + 1.0).sqrt()
        + tau_row * (degrees * (degrees + 1.0) * (2.0 * degrees + 1.0) / 6.0).sqrt();

    for i in 0..model.n {
        let lhs = kernel.matmul(&t.matrix(i).adjoint())?;
        let lifted = model.mz[i].adjoint().kron(&CMatrix::identity(d));
        let rhs = lifted.matmul(&kernel)?;
        let diff = lhs.sub(&rhs)?.submatrix(0..rows, 0..d)?;
        defect = defect.max(diff.operator_norm()?);

        let gi = g.component(i);
        let b = creation_norm_bound(gi);
        let recovered =
            eval::partial_sum_matrices(gi, &ops.f_of_t, gi.max_degree())?;
        let residual = recovered.sub(t.matrix(i))?.operator_norm()?;
        let window_tail = if gi.is_polynomial() {
            0.0
        } else {
            let r = ops
                .f_of_t
                .iter()
                .map(CMatrix::frobenius_norm)
                .fold(0.0f64, f64::max)
                .min(1.0);
            let c = gi.degree_l2_norms();
            let terms: Vec<f64> = c
                .iter()
                .enumerate()
                .map(|(k, ck)| ck * r.powi(k as i32))
                .collect();
            eval::extrapolate_tail(&terms)
        };
        let ti_norm = t.matrix(i).operator_norm()?;
        tail = tail.max(
            b * escaped
                + residual
                + window_tail
                + kernel_err * (ti_norm + b + 1.0)
                + ROUNDOFF_FLOOR,
        );
    }
    Ok((defect, tail))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instances;

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    #[test]
    fn identity_pair_model_is_plain_creation() {
        let g = NCTuple::identity(2).unwrap();
        let model = build_model(&g, 3).unwrap();
        assert_eq!(model.dim(), 15);
        for i in 0..2 {
            assert_eq!(model.mz()[i].sub(&model.mf()[i]).unwrap().max_abs(), 0.0);
        }
        let defects = model_relation_defects(&model, 1).unwrap();
        assert_eq!(defects.cstar_defect, 0.0);
        assert_eq!(defects.cross_norm, 0.0);
        assert_eq!(defects.shift_defect, 0.0);
    }

    #[test]
    fn single_variable_model_is_the_weighted_shift_sum() {
        let (_, g) = instances::mobius_single(3.0, 6);
        let model = build_model(&g, 6).unwrap();
        assert_eq!(model.dim(), 7);
        let m = &model.mz()[0];
        for row in 0..7 {
            for col in 0..7 {
                let expected = if row > col {
                    3.0f64.powi(-((row - col) as i32 - 1))
                } else {
                    0.0
                };
                assert!(
                    (m[(row, col)] - c(expected)).norm() <= 1e-14,
                    "entry ({row},{col})"
                );
            }
        }
    }

    #[test]
    fn first_column_carries_the_coordinate_expansion() {
        let (_, g) = instances::shear_pair(8);
        let model = build_model(&g, 6).unwrap();
        let m = &model.mz()[0];
        let at = |letters: &[u8]| m[(model.word_index(&Word::from_letters(letters)).unwrap(), 0)];
        assert_eq!(at(&[1]), c(1.0));
        assert_eq!(at(&[2]), c(1.0));
        assert_eq!(at(&[1, 2]), c(0.5));
        assert_eq!(at(&[2, 2]), c(0.5));
        assert_eq!(at(&[1, 2, 2]), c(0.25));
        assert_eq!(at(&[2, 2, 2]), c(0.25));
        assert_eq!(at(&[2, 1]), c(0.0));
    }

    #[test]
    fn creation_matrices_are_exact_partial_isometries() {
        let (_, g) = instances::shear_pair(6);
        let model = build_model(&g, 4).unwrap();
        let top = model.degree_projection(4).unwrap();
        for j in 0..2 {
            let gram = model.mf()[j].adjoint().matmul(&model.mf()[j]).unwrap();
            let expected = CMatrix::identity(model.dim()).sub(&top).unwrap();
            assert_eq!(gram.sub(&expected).unwrap().max_abs(), 0.0);
        }
        let mixed = model.mf()[0].adjoint().matmul(&model.mf()[1]).unwrap();
        assert_eq!(mixed.max_abs(), 0.0);
    }

    #[test]
    fn creation_partition_reconstructs_the_identity() {
        let (_, g) = instances::shear_pair(6);
        let model = build_model(&g, 3).unwrap();
        let q0 = model.degree_projection(0).unwrap();
        let mut sum = CMatrix::zeros(model.dim(), model.dim());
        for w in model.basis() {
            let mut product = CMatrix::identity(model.dim());
            for &l in w.letters() {
                product = product.matmul(&model.mf()[(l - 1) as usize]).unwrap();
            }
            let term = product
                .matmul(&q0)
                .unwrap()
                .matmul(&product.adjoint())
                .unwrap();
            sum = sum.add(&term).unwrap();
        }
        assert_eq!(sum.sub(&CMatrix::identity(model.dim())).unwrap().max_abs(), 0.0);
    }

    #[test]
    fn scalar_relation_defect_shrinks_while_cross_terms_grow() {
        let (_, g) = instances::shear_pair(12);
        let mut defects = Vec::new();
        let mut crosses = Vec::new();
        for big_n in [4usize, 6, 8] {
            let model = build_model(&g, big_n).unwrap();
            let report = model_relation_defects(&model, 2).unwrap();
            assert!(
                report.cstar_defect <= report.cstar_tail,
                "N={big_n}: defect {} above tail {}",
                report.cstar_defect,
                report.cstar_tail
            );
            defects.push(report.cstar_defect);
            crosses.push(report.cross_norm);

            // The lowest off-diagonal entry of mz_1^* mz_1 is the suffix
            // correlation sum_delta a_delta a_(delta·2), whose truncated
            // value is exactly (4/3)(1 - 4^(1-N)).
            let product = model.mz()[0].adjoint().matmul(&model.mz()[0]).unwrap();
            let row = model.word_index(&Word::from_letters(&[2])).unwrap();
            let expected = (4.0 / 3.0) * (1.0 - 4.0f64.powi(1 - big_n as i32));
            assert!(
                (product[(row, 0)] - c(expected)).norm() <= 1e-13,
                "N={big_n}: cross entry {} vs {expected}",
                product[(row, 0)]
            );
        }
        assert!(defects[1] <= defects[0] + 1e-12);
        assert!(defects[2] <= defects[1] + 1e-12);
        assert!(crosses[0] <= crosses[1] && crosses[1] <= crosses[2]);
    }

    #[test]
    fn creation_relation_holds_at_roundoff_for_polynomial_inverse() {
        let (_, g) = instances::shear_pair(8);
        let model = build_model(&g, 6).unwrap();
        let report = model_relation_defects(&model, 2).unwrap();
        assert!(report.shift_defect <= report.shift_tail);
        assert!(report.shift_defect <= 1e-10, "defect {}", report.shift_defect);
    }

    #[test]
    fn interior_degree_beyond_truncation_is_rejected() {
        let g = NCTuple::identity(2).unwrap();
        let model = build_model(&g, 3).unwrap();
        assert!(matches!(
            model_relation_defects(&model, 4),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn truncated_coordinates_must_cover_the_model_degree() {
        let (_, g) = instances::shear_pair(4);
        assert!(matches!(build_model(&g, 6), Err(Error::Shape(_))));
    }

    #[test]
    fn kernel_vector_at_the_origin_is_the_vacuum() {
        let (f, _) = instances::shear_pair(6);
        let vector = poisson_eigenvector(&f, &[c(0.0), c(0.0)], 4).unwrap();
        assert_eq!(vector.gamma[0], c(1.0));
        assert!(vector.gamma[1..].iter().all(|g| g.norm() == 0.0));
        assert_eq!(vector.norm, 1.0);
    }

    #[test]
    fn kernel_vector_norm_matches_the_geometric_sum() {
        let (f, _) = instances::shear_pair(8);
        let lambda = [c(0.2), c(0.1)];
        for big_n in [4usize, 8] {
            let vector = poisson_eigenvector(&f, &lambda, big_n).unwrap();
            let s = vector.squared_sum;
            let partial: f64 = (0..=big_n).map(|k| s.powi(k as i32)).sum();
            let expected = ((1.0 - s) * partial).sqrt();
            assert!((vector.norm - expected).abs() <= 1e-12);
        }
    }

    #[test]
    fn boundary_points_are_rejected() {
        let f = NCTuple::identity(1).unwrap();
        assert!(matches!(
            poisson_eigenvector(&f, &[c(1.0)], 3),
            Err(Error::NotInDomain(_))
        ));
    }

    #[test]
    fn adjoint_eigenvalue_residual_sits_below_its_tail_and_shrinks() {
        let (f, g) = instances::shear_pair(8);
        let lambda = [c(0.2), c(0.1)];
        let mut residuals = Vec::new();
        for big_n in [6usize, 8] {
            let model = build_model(&g, big_n).unwrap();
            let vector = poisson_eigenvector(&f, &lambda, big_n).unwrap();
            let (residual, tail) = eigenvector_residual(&model, &vector, &lambda).unwrap();
            assert!(residual <= tail, "N={big_n}: {residual} vs {tail}");
            residuals.push(residual);
        }
        assert!(residuals[1] <= residuals[0] + 1e-12);
    }

    #[test]
    fn kernel_matrix_at_a_vanishing_point_is_the_defect_block() {
        let (f, _) = instances::shear_pair(6);
        let t = TupleInstance::zero(2, 2).unwrap();
        let k = poisson_kernel_matrix(&f, &t, 3).unwrap();
        assert_eq!(k.rows(), 15 * 2);
        assert_eq!(k.submatrix(0..2, 0..2).unwrap().sub(&CMatrix::identity(2)).unwrap().max_abs(), 0.0);
        assert_eq!(k.submatrix(2..30, 0..2).unwrap().max_abs(), 0.0);
    }

    #[test]
    fn kernel_matrix_satisfies_the_telescoping_identity() {
        let (f, _) = instances::shear_pair(8);
        // Modest coordinate norms keep the evaluated polynomial pair
        // inside the unit row ball, where the defect square root exists.
        let t = instances::random_tuple_instance(2, 3, 0.35, 99);
        let big_n = 5;
        let k = poisson_kernel_matrix(&f, &t, big_n).unwrap();
        let ops = eval::defect_ops(&f, &t, usize::MAX).unwrap();
        let mut phi_power = CMatrix::identity(3);
        for _ in 0..=big_n {
            let mut next = CMatrix::zeros(3, 3);
            for fi in &ops.f_of_t {
                next = next
                    .add(&fi.matmul(&phi_power).unwrap().matmul(&fi.adjoint()).unwrap())
                    .unwrap();
            }
            phi_power = next;
        }
        let gram = k.adjoint().matmul(&k).unwrap();
        let expected = CMatrix::identity(3).sub(&phi_power).unwrap();
        assert!(gram.sub(&expected).unwrap().max_abs() <= 1e-10);
    }

    #[test]
    fn kernel_matrix_is_nearly_isometric_at_a_deeply_pure_point() {
        let (f, _) = instances::shear_pair(8);
        let t = instances::random_tuple_instance(2, 2, 0.35, 7);
        let big_n = 8;
        let k = poisson_kernel_matrix(&f, &t, big_n).unwrap();
        let gram = k.adjoint().matmul(&k).unwrap();
        let drift = gram.sub(&CMatrix::identity(2)).unwrap().operator_norm().unwrap();
        let purity = eval::purity_measure(&f, &t, big_n + 1).unwrap();
        assert!(drift <= purity + 1e-10, "drift {drift} vs purity {purity}");
    }

    #[test]
    fn scalar_point_kernel_reduces_to_the_kernel_vector() {
        let (f, g) = instances::shear_pair(8);
        let lambda = [c(0.2), c(0.1)];
        let big_n = 6;
        let t = TupleInstance::scalar(&lambda).unwrap();
        let k = poisson_kernel_matrix(&f, &t, big_n).unwrap();
        let vector = poisson_eigenvector(&f, &lambda, big_n).unwrap();
        for (idx, expected) in vector.gamma.iter().enumerate() {
            assert!((k[(idx, 0)] - expected).norm() <= 1e-13);
        }

        let model = build_model(&g, big_n).unwrap();
        let (residual, _) = eigenvector_residual(&model, &vector, &lambda).unwrap();
        let (defect, tail) = intertwining_defect(&f, &g, &t, big_n, big_n).unwrap();
        assert!((defect - residual * vector.norm).abs() <= 1e-12);
        assert!(defect <= tail);
    }

    #[test]
    fn intertwining_defect_sits_below_its_tail_on_a_matrix_point() {
        let (f, g) = instances::shear_pair(8);
        let half = CMatrix::identity(2).scale(c(0.3));
        let fifth = CMatrix::identity(2).scale(c(0.2));
        let t = TupleInstance::new(vec![half, fifth]).unwrap();
        let (defect, tail) = intertwining_defect(&f, &g, &t, 6, 2).unwrap();
        assert!(defect <= tail, "defect {defect} vs tail {tail}");
        // The defect is dominated by coordinate mass past the stored
        // window, a few parts in a million at this point and truncation.
        assert!(defect <= 1e-5, "defect {defect}");
    }
}
