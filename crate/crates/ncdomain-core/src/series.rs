//! Sparse formal power series in noncommuting indeterminates, truncated by
//! degree.
//!
//! A series stores finitely many coefficients indexed by [`Word`]s in a
//! `BTreeMap`, so iteration — and therefore every floating-point reduction
//! built on it — runs in graded lexicographic order, deterministically. Two
//! regimes share the representation:
//!
//! * **polynomial**: the stored support *is* the series; every coefficient,
//!   at every degree, is known (zero where absent).
//! * **truncated**: coefficients are known exactly up to `max_degree`;
//!   beyond that they are *unknown*, not zero.
//!
//! The distinction drives the degree bookkeeping. Each operation computes
//! the largest degree through which its result is fully determined by the
//! known parts of its operands and truncates there, instead of silently
//! keeping garbage degrees. For products the bound is sharpened by the
//! minimal support degree of the other factor: a factor vanishing to order
//! `mu` delays the influence of the unknown tail by `mu` degrees.

use std::collections::BTreeMap;
use std::fmt;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::word::Word;

/// Relative magnitude below which a coefficient is discarded as roundoff
/// dust after an arithmetic operation.
const PRUNE_REL: f64 = 1e-15;

/// Relative tolerance used when deciding whether consecutive coefficient
/// ratios have stabilized in [`NCSeries::radius_estimate`].
const RATIO_STABILITY_REL: f64 = 1e-3;

/// A degree through which something is known: `None` means "every degree"
/// (the polynomial case).
type DegreeBound = Option<usize>;

fn min_bound(a: DegreeBound, b: DegreeBound) -> DegreeBound {
    match (a, b) {
        (None, b) => b,
        (a, None) => a,
        (Some(x), Some(y)) => Some(x.min(y)),
    }
}

/// A formal power series in `n_vars` noncommuting indeterminates.
#[derive(Clone, Debug, PartialEq)]
pub struct NCSeries {
    n_vars: usize,
    max_degree: usize,
    polynomial: bool,
    terms: BTreeMap<Word, Complex64>,
}

impl NCSeries {
    // ---------------------------------------------------------------- construction

    /// The zero polynomial in `n_vars` indeterminates.
    pub fn zero(n_vars: usize) -> Self {
        NCSeries {
            n_vars,
            max_degree: 0,
            polynomial: true,
            terms: BTreeMap::new(),
        }
    }

    /// The constant polynomial `c`.
    pub fn constant(n_vars: usize, c: Complex64) -> Self {
        let mut s = Self::zero(n_vars);
        if c != Complex64::ZERO {
            s.terms.insert(Word::identity(), c);
        }
        s
    }

    /// The indeterminate `Z_i` (1-based).
    pub fn variable(n_vars: usize, i: u8) -> Result<Self> {
        if i == 0 || i as usize > n_vars {
            return Err(Error::Index(format!(
                "variable index {i} outside 1..={n_vars}"
            )));
        }
        let mut s = Self::zero(n_vars);
        s.max_degree = 1;
        s.terms.insert(Word::letter(i), Complex64::ONE);
        Ok(s)
    }

    /// Builds a series from explicit terms. Duplicate words are summed.
    ///
    /// With `polynomial = true` the terms are the entire series; otherwise
    /// they are its coefficients through `max_degree`, and any term of
    /// higher degree is rejected. Letters outside `1..=n_vars` are
    /// rejected in both regimes.
    pub fn from_terms<I>(
        n_vars: usize,
        max_degree: usize,
        polynomial: bool,
        terms: I,
    ) -> Result<Self>
    where
        I: IntoIterator<Item = (Word, Complex64)>,
    {
        let mut map: BTreeMap<Word, Complex64> = BTreeMap::new();
        for (w, c) in terms {
            if let Some(l) = w.max_letter() {
                if l as usize > n_vars {
                    return Err(Error::Index(format!(
                        "letter g{l} in term {w} outside the {n_vars}-letter alphabet"
                    )));
                }
            }
            if w.letters().contains(&0) {
                return Err(Error::Index(
                    "letter g0 in a term; letters are 1-based".into(),
                ));
            }
            if w.len() > max_degree {
                return Err(Error::Shape(format!(
                    "term {w} of degree {} exceeds the declared degree {max_degree}",
                    w.len()
                )));
            }
            *map.entry(w).or_insert(Complex64::ZERO) += c;
        }
        let mut s = NCSeries {
            n_vars,
            max_degree,
            polynomial,
            terms: map,
        };
        s.normalize();
        Ok(s)
    }

    /// Restores the representation invariants after terms were edited:
    /// prunes roundoff dust, drops terms beyond the truncation degree, and
    /// for polynomials resets `max_degree` to the actual degree.
    fn normalize(&mut self) {
        let peak = self
            .terms
            .values()
            .map(|c| c.norm())
            .fold(0.0f64, f64::max);
        let threshold = PRUNE_REL * peak;
        let cap = self.max_degree;
        let polynomial = self.polynomial;
        self.terms
            .retain(|w, c| c.norm() > threshold && (polynomial || w.len() <= cap));
        if self.polynomial {
            self.max_degree = self.terms.keys().next_back().map_or(0, Word::len);
        }
    }

    // ---------------------------------------------------------------- accessors

    /// Number of indeterminates of the ambient free algebra.
    pub fn n_vars(&self) -> usize {
        self.n_vars
    }

    /// Degree through which coefficients are known. For a polynomial this
    /// is its actual degree and *all* higher coefficients are known zero.
    pub fn max_degree(&self) -> usize {
        self.max_degree
    }

    /// True when the stored support is the entire series.
    pub fn is_polynomial(&self) -> bool {
        self.polynomial
    }

    /// The known coefficient of `w`.
    ///
    /// # Panics
    ///
    /// For a truncated series, requesting a degree beyond `max_degree` asks
    /// for a coefficient that is unknown rather than zero; that is a caller
    /// bug and panics.
    pub fn coeff(&self, w: &Word) -> Complex64 {
        if !self.polynomial {
            assert!(
                w.len() <= self.max_degree,
                "coefficient of {w} (degree {}) requested from a series truncated at degree {}",
                w.len(),
                self.max_degree
            );
        }
        self.terms.get(w).copied().unwrap_or(Complex64::ZERO)
    }

    /// Stored terms in graded lexicographic order.
    pub fn terms(&self) -> impl Iterator<Item = (&Word, &Complex64)> {
        self.terms.iter()
    }

    /// Number of stored terms.
    pub fn num_terms(&self) -> usize {
        self.terms.len()
    }

    /// Smallest degree carrying a nonzero stored term, if any.
    pub fn min_support_degree(&self) -> Option<usize> {
        self.terms.keys().next().map(Word::len)
    }

    /// A certified lower bound on the order of vanishing: every coefficient
    /// below this degree is known to be zero. `None` means the series is
    /// identically zero (a zero polynomial).
    pub(crate) fn vanishing_order(&self) -> DegreeBound {
        match self.min_support_degree() {
            Some(d) => Some(d),
            None if self.polynomial => None,
            None => Some(self.max_degree + 1),
        }
    }

    /// Largest magnitude among stored coefficients.
    pub fn sup_coeff_norm(&self) -> f64 {
        self.terms.values().map(|c| c.norm()).fold(0.0, f64::max)
    }

    /// Sum of coefficient magnitudes per degree: entry `k` is
    /// `sum over |w| = k of |a_w|`. The vector has `max_degree + 1` entries.
    pub fn degree_l1_norms(&self) -> Vec<f64> {
        let mut norms = vec![0.0; self.max_degree + 1];
        for (w, c) in &self.terms {
            norms[w.len()] += c.norm();
        }
        norms
    }

    /// Euclidean coefficient norm per degree: entry `k` is
    /// `(sum over |w| = k of |a_w|^2)^(1/2)`, the quantity governing both
    /// convergence radius and evaluation tail bounds. The vector has
    /// `max_degree + 1` entries.
    pub fn degree_l2_norms(&self) -> Vec<f64> {
        let mut norms = vec![0.0; self.max_degree + 1];
        for (w, c) in &self.terms {
            norms[w.len()] += c.norm_sqr();
        }
        for v in &mut norms {
            *v = v.sqrt();
        }
        norms
    }

    // ---------------------------------------------------------------- arithmetic

    fn check_same_vars(&self, other: &Self) -> Result<()> {
        if self.n_vars != other.n_vars {
            return Err(Error::Shape(format!(
                "series over {} and {} indeterminates cannot be combined",
                self.n_vars, other.n_vars
            )));
        }
        Ok(())
    }

    /// Multiplies every coefficient by `c`.
    pub fn scale(&self, c: Complex64) -> Self {
        let mut out = self.clone();
        for v in out.terms.values_mut() {
            *v *= c;
        }
        out.normalize();
        out
    }

    /// Sum of two series. The result is known through the lesser of the
    /// operands' known ranges (a polynomial operand imposes no limit).
    pub fn add(&self, other: &Self) -> Result<Self> {
        self.check_same_vars(other)?;
        let polynomial = self.polynomial && other.polynomial;
        let max_degree = if polynomial {
            self.max_degree.max(other.max_degree)
        } else if self.polynomial {
            other.max_degree
        } else if other.polynomial {
            self.max_degree
        } else {
            self.max_degree.min(other.max_degree)
        };
        let mut terms = self.terms.clone();
        for (w, c) in &other.terms {
            *terms.entry(w.clone()).or_insert(Complex64::ZERO) += c;
        }
        let mut s = NCSeries {
            n_vars: self.n_vars,
            max_degree,
            polynomial,
            terms,
        };
        s.normalize();
        Ok(s)
    }

    /// Difference `self - other`.
    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.add(&other.scale(-Complex64::ONE))
    }

    /// Linear combination `sum of coeffs[k] * series[k]`.
    pub fn linear_combo(coeffs: &[Complex64], series: &[&NCSeries]) -> Result<Self> {
        if coeffs.len() != series.len() {
            return Err(Error::Shape(format!(
                "{} coefficients against {} series",
                coeffs.len(),
                series.len()
            )));
        }
        let first = series.first().ok_or_else(|| {
            Error::Shape("linear combination of no series".into())
        })?;
        let mut acc = NCSeries::zero(first.n_vars());
        for (&c, s) in coeffs.iter().zip(series) {
            acc = acc.add(&s.scale(c))?;
        }
        Ok(acc)
    }

    /// Noncommutative product `self * other`.
    ///
    /// The result is known through
    /// `min(D_self + mu_other, D_other + mu_self)` where `D` is a factor's
    /// known range (unlimited for polynomials) and `mu` its order of
    /// vanishing: the unknown tail of one factor first contaminates the
    /// product only after being shifted past the other factor's leading
    /// zeros.
    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.check_same_vars(other)?;
        // An identically zero factor settles it regardless of truncations.
        if (self.polynomial && self.terms.is_empty())
            || (other.polynomial && other.terms.is_empty())
        {
            return Ok(NCSeries::zero(self.n_vars));
        }
        let polynomial = self.polynomial && other.polynomial;
        let bound_from_self = if self.polynomial {
            None
        } else {
            Some(self.max_degree + other.vanishing_order().unwrap_or(usize::MAX - self.max_degree))
        };
        let bound_from_other = if other.polynomial {
            None
        } else {
            Some(other.max_degree + self.vanishing_order().unwrap_or(usize::MAX - other.max_degree))
        };
        let bound = min_bound(bound_from_self, bound_from_other);
        let max_degree = match bound {
            None => self.max_degree + other.max_degree,
            Some(d) => d,
        };
        let mut terms: BTreeMap<Word, Complex64> = BTreeMap::new();
        for (u, a) in &self.terms {
            if !polynomial && u.len() > max_degree {
                break;
            }
            for (v, b) in &other.terms {
                if !polynomial && u.len() + v.len() > max_degree {
                    // Graded order: every later v is at least as long.
                    break;
                }
                *terms.entry(u.concat(v)).or_insert(Complex64::ZERO) += a * b;
            }
        }
        let mut s = NCSeries {
            n_vars: self.n_vars,
            max_degree,
            polynomial,
            terms,
        };
        s.normalize();
        Ok(s)
    }

    /// Reinterprets the series as the degree-`d` truncation of an unknown
    /// infinite series, even when the stored data is a complete polynomial.
    ///
    /// This is how finite partial sums of genuinely infinite expansions
    /// (geometric resolvents, automorphism series) are given their honest
    /// status: the computed terms are exact through `d`, and nothing is
    /// claimed beyond. For an already-truncated series the degree can only
    /// shrink.
    pub fn as_truncated(&self, d: usize) -> Self {
        let mut s = self.clone();
        s.max_degree = if s.polynomial { d } else { d.min(s.max_degree) };
        s.polynomial = false;
        s.normalize();
        s
    }

    /// Views the series as known only through degree `d`.
    ///
    /// Lowering the degree drops stored terms; a polynomial truncated below
    /// its actual degree stops being a polynomial. Raising the degree of a
    /// truncated series is impossible — the extra coefficients are unknown
    /// — so `d` above `max_degree` leaves a truncated series unchanged.
    pub fn truncate(&self, d: usize) -> Self {
        if self.polynomial && d >= self.max_degree {
            return self.clone();
        }
        let mut s = self.clone();
        s.max_degree = if self.polynomial { d } else { d.min(self.max_degree) };
        s.polynomial = false;
        s.normalize();
        s
    }

    // ---------------------------------------------------------------- calculus

    /// Free partial derivative with respect to `Z_i`: each occurrence of the
    /// letter `g_i` is deleted in turn and the results are summed.
    ///
    /// Deleting one letter moves degree-`(D+1)` words — unknown for a
    /// truncated series — down to degree `D`, so the result of
    /// differentiating a truncated series is known only through `D - 1`.
    /// A series truncated at degree 0 therefore has no known derivative at
    /// all, which is an error rather than a silently empty answer.
    pub fn free_partial(&self, i: u8) -> Result<Self> {
        if i == 0 || i as usize > self.n_vars {
            return Err(Error::Index(format!(
                "variable index {i} outside 1..={}",
                self.n_vars
            )));
        }
        if !self.polynomial && self.max_degree == 0 {
            return Err(Error::Shape(
                "derivative of a series truncated at degree 0 is entirely unknown".into(),
            ));
        }
        let max_degree = if self.polynomial {
            self.max_degree.saturating_sub(1)
        } else {
            self.max_degree - 1
        };
        let mut terms: BTreeMap<Word, Complex64> = BTreeMap::new();
        for (w, a) in &self.terms {
            let letters = w.letters();
            for p in 0..letters.len() {
                if letters[p] != i {
                    continue;
                }
                let mut reduced = Vec::with_capacity(letters.len() - 1);
                reduced.extend_from_slice(&letters[..p]);
                reduced.extend_from_slice(&letters[p + 1..]);
                *terms
                    .entry(Word::from_letters(&reduced))
                    .or_insert(Complex64::ZERO) += a;
            }
        }
        let mut s = NCSeries {
            n_vars: self.n_vars,
            max_degree,
            polynomial: self.polynomial,
            terms,
        };
        s.normalize();
        Ok(s)
    }

    /// Derivative with respect to `Z_i` along the series `direction`: each
    /// occurrence of the letter `g_i` is replaced, in turn, by `direction`,
    /// keeping its position inside the word, and the results are summed.
    /// With `direction = 1` this reduces to [`NCSeries::free_partial`].
    ///
    /// The result is known through `min(D_F - 1 + mu_Y, D_Y + mu'_F - 1)`
    /// where `mu_Y` is the direction's order of vanishing and `mu'_F` the
    /// lowest degree of a stored word containing `g_i` (each bound dropping
    /// away when the corresponding operand is polynomial): an unknown word
    /// of `self` surfaces after one letter is traded for at least `mu_Y`
    /// letters, and the direction's unknown tail first appears inside the
    /// shortest differentiable word of `self`.
    pub fn directional_derivative(&self, i: u8, direction: &NCSeries) -> Result<Self> {
        if i == 0 || i as usize > self.n_vars {
            return Err(Error::Index(format!(
                "variable index {i} outside 1..={}",
                self.n_vars
            )));
        }
        self.check_same_vars(direction)?;
        // Order of vanishing of the direction; None means the direction is
        // the zero polynomial, so every replacement contributes nothing and
        // the derivative is exactly zero.
        let mu_y = match direction.vanishing_order() {
            Some(mu) => mu,
            None => return Ok(NCSeries::zero(self.n_vars)),
        };
        // Lowest degree of a stored word actually containing the letter:
        // words without it differentiate to zero and impose nothing.
        let mu_f = match self
            .terms
            .keys()
            .find(|w| w.letters().contains(&i))
            .map(Word::len)
        {
            Some(d) => Some(d),
            None if self.polynomial => return Ok(NCSeries::zero(self.n_vars)),
            None => Some(self.max_degree + 1),
        };
        let bound_from_self = if self.polynomial {
            None
        } else {
            // Unknown words have degree >= D+1 and contribute at degree
            // >= D + mu_Y after the trade; everything below is known.
            if self.max_degree + mu_y == 0 {
                return Err(Error::Shape(
                    "derivative of a series truncated at degree 0 is entirely unknown".into(),
                ));
            }
            Some(self.max_degree + mu_y - 1)
        };
        let bound_from_direction = if direction.polynomial {
            None
        } else {
            Some(direction.max_degree + mu_f.expect("set when self is not constant") - 1)
        };
        let bound = min_bound(bound_from_self, bound_from_direction);
        let polynomial = bound.is_none();
        let mut terms: BTreeMap<Word, Complex64> = BTreeMap::new();
        let mut top_degree = 0usize;
        for (w, a) in &self.terms {
            let letters = w.letters();
            for p in 0..letters.len() {
                if letters[p] != i {
                    continue;
                }
                for (v, b) in direction.terms() {
                    let degree = letters.len() - 1 + v.len();
                    if let Some(cap) = bound {
                        if degree > cap {
                            break; // graded order: later v only longer
                        }
                    }
                    top_degree = top_degree.max(degree);
                    let mut word = Vec::with_capacity(degree);
                    word.extend_from_slice(&letters[..p]);
                    word.extend_from_slice(v.letters());
                    word.extend_from_slice(&letters[p + 1..]);
                    *terms
                        .entry(Word::from_letters(&word))
                        .or_insert(Complex64::ZERO) += a * b;
                }
            }
        }
        let mut s = NCSeries {
            n_vars: self.n_vars,
            max_degree: bound.unwrap_or(top_degree),
            polynomial,
            terms,
        };
        s.normalize();
        Ok(s)
    }

    // ---------------------------------------------------------------- analysis

    /// Estimates the radius of convergence from the growth of the per-degree
    /// coefficient norms `c_k = (sum over |w| = k of |a_w|^2)^(1/2)`.
    ///
    /// When the trailing ratios `c_{k+1} / c_k` have stabilized the
    /// estimate is the reciprocal of the last ratio, which recovers
    /// geometric growth exactly from finitely many degrees. Otherwise it
    /// falls back to the root test on the top degree, `c_D^(-1/D)`.
    /// Polynomials converge everywhere and report infinity.
    pub fn radius_estimate(&self) -> f64 {
        if self.polynomial {
            return f64::INFINITY;
        }
        let norms = self.degree_l2_norms();
        // Consecutive nonzero degrees from the top give the ratio sequence.
        let ratios: Vec<f64> = (1..norms.len().saturating_sub(1))
            .filter(|&k| norms[k] > 0.0 && norms[k + 1] > 0.0)
            .map(|k| norms[k + 1] / norms[k])
            .collect();
        if ratios.len() >= 2 {
            let tail = &ratios[ratios.len().saturating_sub(3)..];
            let last = *tail.last().expect("tail nonempty");
            let stable = tail
                .iter()
                .all(|r| (r - last).abs() <= RATIO_STABILITY_REL * last.abs().max(1e-300));
            if stable && last > 0.0 {
                return 1.0 / last;
            }
        }
        // Root test on the highest degree carrying mass.
        match (1..norms.len()).rev().find(|&k| norms[k] > 0.0) {
            Some(k) => norms[k].powf(-1.0 / k as f64),
            None => f64::INFINITY,
        }
    }
}

impl fmt::Display for NCSeries {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        for (idx, (w, c)) in self.terms.iter().enumerate() {
            if idx > 0 {
                write!(f, " + ")?;
            }
            if c.im == 0.0 {
                write!(f, "{}", c.re)?;
            } else {
                write!(f, "({}{}{}i)", c.re, if c.im < 0.0 { "-" } else { "+" }, c.im.abs())?;
            }
            if !w.is_identity() {
                write!(f, "·{w}")?;
            }
        }
        if !self.polynomial {
            write!(f, " + O(deg {})", self.max_degree + 1)?;
        }
        Ok(())
    }
}

/// A tuple of series over a common alphabet — a formal map between
/// noncommutative domains. The number of components may differ from the
/// number of indeterminates.
#[derive(Clone, Debug, PartialEq)]
pub struct NCTuple {
    components: Vec<NCSeries>,
}

impl NCTuple {
    /// Wraps components, requiring at least one and a common alphabet.
    pub fn new(components: Vec<NCSeries>) -> Result<Self> {
        let first = components.first().ok_or_else(|| {
            Error::Shape("a tuple needs at least one component".into())
        })?;
        let n = first.n_vars();
        if components.iter().any(|c| c.n_vars() != n) {
            return Err(Error::Shape(
                "tuple components must share one alphabet".into(),
            ));
        }
        Ok(NCTuple { components })
    }

    /// The identity map `(Z_1, ..., Z_n)`.
    pub fn identity(n_vars: usize) -> Result<Self> {
        let components = (1..=n_vars)
            .map(|i| NCSeries::variable(n_vars, i as u8))
            .collect::<Result<Vec<_>>>()?;
        NCTuple::new(components)
    }

    /// Number of components.
    pub fn len(&self) -> usize {
        self.components.len()
    }

    /// True when the tuple has no components (never, by construction).
    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    /// Alphabet size of the common ambient algebra.
    pub fn n_vars(&self) -> usize {
        self.components[0].n_vars()
    }

    /// The components in order.
    pub fn components(&self) -> &[NCSeries] {
        &self.components
    }

    /// A single component (0-based).
    pub fn component(&self, k: usize) -> &NCSeries {
        &self.components[k]
    }

    /// Constant terms of the components — the image of the origin.
    pub fn constant_terms(&self) -> Vec<Complex64> {
        self.components
            .iter()
            .map(|s| s.coeff(&Word::identity()))
            .collect()
    }

    /// Componentwise difference.
    pub fn sub(&self, other: &Self) -> Result<Self> {
        if self.len() != other.len() {
            return Err(Error::Shape(format!(
                "tuples of {} and {} components cannot be subtracted",
                self.len(),
                other.len()
            )));
        }
        let components = self
            .components
            .iter()
            .zip(&other.components)
            .map(|(a, b)| a.sub(b))
            .collect::<Result<Vec<_>>>()?;
        NCTuple::new(components)
    }

    /// Largest coefficient magnitude across all components.
    pub fn sup_coeff_norm(&self) -> f64 {
        self.components
            .iter()
            .map(NCSeries::sup_coeff_norm)
            .fold(0.0, f64::max)
    }

    /// Views every component as known only through degree `d`.
    pub fn truncate(&self, d: usize) -> Self {
        NCTuple {
            components: self.components.iter().map(|c| c.truncate(d)).collect(),
        }
    }

    /// Componentwise [`NCSeries::as_truncated`].
    pub fn as_truncated(&self, d: usize) -> Self {
        NCTuple {
            components: self.components.iter().map(|c| c.as_truncated(d)).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    fn z(n: usize, i: u8) -> NCSeries {
        NCSeries::variable(n, i).unwrap()
    }

    /// A polynomial with exactly the given terms.
    fn from_pairs(n: usize, terms: &[(&[u8], f64)]) -> NCSeries {
        let degree = terms.iter().map(|(ls, _)| ls.len()).max().unwrap_or(0);
        NCSeries::from_terms(
            n,
            degree,
            true,
            terms
                .iter()
                .map(|(ls, v)| (Word::from_letters(ls), c(*v))),
        )
        .unwrap()
    }

    /// A series whose only stored terms are `terms`, declared known through
    /// `d` with everything beyond unknown — the truncated regime.
    fn truncated(n: usize, d: usize, terms: &[(&[u8], f64)]) -> NCSeries {
        NCSeries::from_terms(
            n,
            d,
            false,
            terms
                .iter()
                .map(|(ls, v)| (Word::from_letters(ls), c(*v))),
        )
        .unwrap()
    }

    #[test]
    fn constructors_validate_letters() {
        assert!(matches!(
            NCSeries::variable(2, 3),
            Err(Error::Index(_))
        ));
        assert!(matches!(
            NCSeries::from_terms(2, 3, true, [(Word::letter(3), c(1.0))]),
            Err(Error::Index(_))
        ));
        assert!(matches!(
            NCSeries::from_terms(2, 1, false, [(Word::from_letters(&[1, 2]), c(1.0))]),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn polynomial_product_is_exact() {
        // (1 - Z)(1 + Z + Z^2) = 1 - Z^3 in one indeterminate.
        let one = NCSeries::constant(1, c(1.0));
        let zz = z(1, 1);
        let left = one.sub(&zz).unwrap();
        let right = NCSeries::from_terms(
            1,
            2,
            true,
            [
                (Word::identity(), c(1.0)),
                (Word::letter(1), c(1.0)),
                (Word::from_letters(&[1, 1]), c(1.0)),
            ],
        )
        .unwrap();
        let product = left.mul(&right).unwrap();
        assert!(product.is_polynomial());
        assert_eq!(product.max_degree(), 3);
        assert_eq!(product.coeff(&Word::identity()), c(1.0));
        assert_eq!(product.coeff(&Word::from_letters(&[1, 1, 1])), c(-1.0));
        assert_eq!(product.num_terms(), 2);
    }

    #[test]
    fn product_degree_uses_vanishing_orders() {
        // Both factors vanish at the origin, so their unknown tails are
        // delayed one degree past the naive min of the truncations.
        let f = truncated(1, 2, &[(&[1], 1.0)]); // known through 2, vanishes to order 1
        let g = truncated(1, 3, &[(&[1], 1.0)]); // known through 3, vanishes to order 1
        let p = f.mul(&g).unwrap();
        assert!(!p.is_polynomial());
        // min(D_f + mu_g, D_g + mu_f) = min(2 + 1, 3 + 1) = 3.
        assert_eq!(p.max_degree(), 3);
        assert_eq!(p.coeff(&Word::from_letters(&[1, 1])), c(1.0));
    }

    #[test]
    fn sum_of_polynomial_and_truncated_respects_truncation() {
        let poly = NCSeries::from_terms(
            1,
            5,
            true,
            [(Word::from_letters(&[1, 1, 1, 1, 1]), c(2.0))],
        )
        .unwrap();
        let trunc = truncated(1, 3, &[(&[1], 1.0)]);
        let s = poly.add(&trunc).unwrap();
        assert!(!s.is_polynomial());
        assert_eq!(s.max_degree(), 3);
        // The degree-5 term fell outside the known window.
        assert_eq!(s.num_terms(), 1);
    }

    #[test]
    #[should_panic(expected = "truncated at degree")]
    fn coeff_beyond_truncation_panics() {
        let s = truncated(2, 1, &[(&[1], 1.0)]);
        let _ = s.coeff(&Word::from_letters(&[1, 1]));
    }

    #[test]
    fn free_partial_deletes_each_occurrence() {
        // d(Z1 Z2 Z1)/dZ1 = Z2 Z1 + Z1 Z2.
        let s = NCSeries::from_terms(
            2,
            3,
            true,
            [(Word::from_letters(&[1, 2, 1]), c(1.0))],
        )
        .unwrap();
        let d = s.free_partial(1).unwrap();
        assert_eq!(d.coeff(&Word::from_letters(&[2, 1])), c(1.0));
        assert_eq!(d.coeff(&Word::from_letters(&[1, 2])), c(1.0));
        assert_eq!(d.num_terms(), 2);
    }

    #[test]
    fn free_partial_of_truncated_series_loses_one_degree() {
        let s = truncated(2, 4, &[(&[1, 2], 1.0)]);
        let d = s.free_partial(1).unwrap();
        assert!(!d.is_polynomial());
        assert_eq!(d.max_degree(), 3);

        let flat = truncated(2, 0, &[]);
        assert!(matches!(flat.free_partial(1), Err(Error::Shape(_))));
    }

    #[test]
    fn directional_derivative_replaces_each_occurrence() {
        // F = Z1 Z1 differentiated in Z1 along Z2: each of the two slots
        // takes Z2 in turn, giving Z2 Z1 + Z1 Z2.
        let f = z(2, 1).mul(&z(2, 1)).unwrap();
        let d = f.directional_derivative(1, &z(2, 2)).unwrap();
        assert_eq!(d.coeff(&Word::from_letters(&[2, 1])), c(1.0));
        assert_eq!(d.coeff(&Word::from_letters(&[1, 2])), c(1.0));
        assert_eq!(d.num_terms(), 2);
        assert!(d.is_polynomial());

        // Differentiating in a variable that never occurs gives zero, and
        // an out-of-range index is rejected.
        let zero = f.directional_derivative(2, &z(2, 1)).unwrap();
        assert_eq!(zero.num_terms(), 0);
        assert!(zero.is_polynomial());
        assert!(matches!(f.directional_derivative(3, &z(2, 1)), Err(Error::Index(_))));
    }

    #[test]
    fn directional_derivative_along_one_is_free_partial() {
        let f = from_pairs(2, &[(&[1, 2, 1], 2.0), (&[2, 2], -1.0), (&[1], 0.5)]);
        let one = NCSeries::constant(2, c(1.0));
        for i in 1..=2u8 {
            assert_eq!(
                f.directional_derivative(i, &one).unwrap(),
                f.free_partial(i).unwrap()
            );
        }
    }

    #[test]
    fn directional_derivative_degree_accounts_for_direction_vanishing() {
        // F truncated at 4, direction vanishing to order 2 and known
        // through 5: result known through min(4 - 1 + 2, 5 + 1 - 1) = 5.
        let f = truncated(2, 4, &[(&[1], 1.0)]);
        let y = truncated(2, 5, &[(&[1, 1], 1.0), (&[2, 2], 1.0)]);
        let d = f.directional_derivative(1, &y).unwrap();
        assert_eq!(d.max_degree(), 5);
        assert!(!d.is_polynomial());
        assert_eq!(d.coeff(&Word::from_letters(&[1, 1])), c(1.0));
        assert_eq!(d.coeff(&Word::from_letters(&[2, 2])), c(1.0));
    }

    #[test]
    fn radius_recovers_geometric_growth() {
        // sum of (Z2/2)^k through degree 8: the degree sums are 2^-k and
        // the trailing ratio pins the radius at 2 exactly.
        let mut terms = Vec::new();
        for k in 0..=8usize {
            terms.push((
                Word::from_letters(&vec![2u8; k]),
                c(0.5f64.powi(k as i32)),
            ));
        }
        let s = NCSeries::from_terms(2, 8, false, terms).unwrap();
        assert_relative_eq!(s.radius_estimate(), 2.0, max_relative = 1e-12);

        // Alternating single-indeterminate series with ratio 1/3.
        let mut terms = Vec::new();
        for k in 1..=7usize {
            let coeff = (-1.0f64).powi((k - 1) as i32) / 3.0f64.powi((k - 1) as i32);
            terms.push((Word::from_letters(&vec![1u8; k]), c(coeff)));
        }
        let s = NCSeries::from_terms(1, 7, false, terms).unwrap();
        assert_relative_eq!(s.radius_estimate(), 3.0, max_relative = 1e-12);
    }

    #[test]
    fn radius_of_polynomial_is_infinite() {
        let p = z(2, 1).mul(&z(2, 2)).unwrap();
        assert_eq!(p.radius_estimate(), f64::INFINITY);
    }

    #[test]
    fn prune_drops_relative_dust() {
        let s = NCSeries::from_terms(
            1,
            2,
            true,
            [
                (Word::letter(1), c(1.0)),
                (Word::from_letters(&[1, 1]), c(1e-17)),
            ],
        )
        .unwrap();
        assert_eq!(s.num_terms(), 1);
    }

    #[test]
    fn truncating_a_polynomial_below_its_degree_forgets_the_tail() {
        let p = z(1, 1).mul(&z(1, 1)).unwrap(); // Z^2, degree 2 polynomial
        let t = p.truncate(1);
        assert!(!t.is_polynomial());
        assert_eq!(t.max_degree(), 1);
        assert_eq!(t.num_terms(), 0);
        // Truncating at or above the degree is a no-op.
        assert!(p.truncate(2).is_polynomial());
        assert!(p.truncate(5).is_polynomial());
    }

    #[test]
    fn tuple_shape_checks() {
        assert!(NCTuple::new(vec![]).is_err());
        assert!(NCTuple::new(vec![z(1, 1), z(2, 1)]).is_err());
        let id = NCTuple::identity(3).unwrap();
        assert_eq!(id.len(), 3);
        assert_eq!(id.n_vars(), 3);
        assert_eq!(id.component(2).coeff(&Word::letter(3)), c(1.0));
    }
}
