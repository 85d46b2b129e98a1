//! Degree-sliced dense coefficient storage for hot loops.
//!
//! A series over `n` letters through degree `cap` has at most
//! `1 + n + ... + n^cap` coefficients; when that count is modest, flat
//! per-degree arrays beat the sparse map by two orders of magnitude. A
//! length-`d` word maps to the integer whose base-`n` digits are its
//! letters minus one, so concatenation is `index(u) * n^|v| + index(v)`
//! and products reduce to strided fused loops with no allocation.
//!
//! Callers gate on [`DenseSlab::total_len`] and keep their sparse path
//! for anything that does not fit; results agree with the sparse route
//! up to floating-point summation order.

use crate::series::NCSeries;
use crate::word::Word;
use num_complex::Complex64;

/// Upper bound on the coefficient count a slab may hold (16 MiB of
/// complex values). Anything larger stays on the sparse path.
pub(crate) const DENSE_LIMIT: usize = 1 << 20;

/// Dense coefficients of a series, one flat slice per word degree.
#[derive(Clone, Debug)]
pub(crate) struct DenseSlab {
    n: usize,
    cap: usize,
    /// `slices[d]` has length `n^d`, indexed by base-`n` digit strings.
    slices: Vec<Vec<Complex64>>,
    /// Whether degree `d` holds any nonzero coefficient; lets products
    /// skip empty degree pairs without scanning.
    used: Vec<bool>,
}

impl DenseSlab {
    /// Total coefficient count `1 + n + ... + n^cap`, or `None` when it
    /// overflows or exceeds [`DENSE_LIMIT`].
    pub(crate) fn total_len(n: usize, cap: usize) -> Option<usize> {
        let mut total = 0usize;
        let mut size = 1usize;
        for d in 0..=cap {
            total = total.checked_add(size)?;
            if total > DENSE_LIMIT {
                return None;
            }
            if d < cap {
                size = size.checked_mul(n)?;
            }
        }
        Some(total)
    }

    /// The zero slab.
    pub(crate) fn zero(n: usize, cap: usize) -> Self {
        let mut size = 1usize;
        let mut slices = Vec::with_capacity(cap + 1);
        for d in 0..=cap {
            slices.push(vec![Complex64::ZERO; size]);
            if d < cap {
                size *= n;
            }
        }
        DenseSlab {
            n,
            cap,
            slices,
            used: vec![false; cap + 1],
        }
    }

    /// The constant-one slab.
    pub(crate) fn one(n: usize, cap: usize) -> Self {
        let mut s = DenseSlab::zero(n, cap);
        s.slices[0][0] = Complex64::ONE;
        s.used[0] = true;
        s
    }

    /// Dense form of `s`, keeping terms of degree at most `cap`.
    pub(crate) fn from_series(s: &NCSeries, cap: usize) -> Self {
        let n = s.n_vars();
        let mut slab = DenseSlab::zero(n, cap);
        for (w, &c) in s.terms() {
            let d = w.len();
            if d > cap {
                break;
            }
            slab.slices[d][word_index(n, w.letters())] = c;
            slab.used[d] = true;
        }
        slab
    }

    /// Writes one coefficient (degree from the slice index).
    pub(crate) fn set(&mut self, degree: usize, index: usize, value: Complex64) {
        self.slices[degree][index] = value;
        if value != Complex64::ZERO {
            self.used[degree] = true;
        }
    }

    /// Reads one coefficient, zero outside the stored window.
    pub(crate) fn get(&self, degree: usize, index: usize) -> Complex64 {
        if degree > self.cap {
            return Complex64::ZERO;
        }
        self.slices[degree][index]
    }

    /// `self += alpha * other` through `self.cap`.
    pub(crate) fn axpy(&mut self, alpha: Complex64, other: &DenseSlab) {
        debug_assert_eq!(self.n, other.n);
        for d in 0..=other.cap.min(self.cap) {
            if !other.used[d] {
                continue;
            }
            for (dst, src) in self.slices[d].iter_mut().zip(&other.slices[d]) {
                *dst += alpha * src;
            }
            self.used[d] = true;
        }
    }

    /// Product truncated at `cap`: every degree pair `(da, db)` with
    /// `da + db <= cap` contributes the strided convolution
    /// `out[ia * n^db + ib] += a[ia] * b[ib]`.
    pub(crate) fn mul_capped(&self, other: &DenseSlab, cap: usize) -> DenseSlab {
        debug_assert_eq!(self.n, other.n);
        let n = self.n;
        let mut out = DenseSlab::zero(n, cap);
        for da in 0..=self.cap.min(cap) {
            if !self.used[da] {
                continue;
            }
            for db in 0..=other.cap.min(cap.saturating_sub(da)) {
                if da + db > cap || !other.used[db] {
                    continue;
                }
                let stride = other.slices[db].len();
                let (a_slice, b_slice) = (&self.slices[da], &other.slices[db]);
                let out_slice = &mut out.slices[da + db];
                let mut any = false;
                for (ia, &av) in a_slice.iter().enumerate() {
                    if av == Complex64::ZERO {
                        continue;
                    }
                    any = true;
                    let base = ia * stride;
                    for (ib, &bv) in b_slice.iter().enumerate() {
                        out_slice[base + ib] += av * bv;
                    }
                }
                if any {
                    out.used[da + db] = true;
                }
            }
        }
        out
    }

    /// Nonzero terms in graded lexicographic order (degree major, digit
    /// string minor — exactly the order the sparse map iterates in).
    pub(crate) fn into_sorted_terms(self) -> Vec<(Word, Complex64)> {
        let n = self.n;
        let mut out = Vec::new();
        let mut letters = [0u8; 64];
        for (d, slice) in self.slices.into_iter().enumerate() {
            for (idx, c) in slice.into_iter().enumerate() {
                if c == Complex64::ZERO {
                    continue;
                }
                let mut rest = idx;
                for pos in (0..d).rev() {
                    letters[pos] = (rest % n) as u8 + 1;
                    rest /= n;
                }
                out.push((Word::from_letters(&letters[..d]), c));
            }
        }
        out
    }
}

/// Base-`n` digit value of a letter string (letters are 1-based).
pub(crate) fn word_index(n: usize, letters: &[u8]) -> usize {
    letters
        .iter()
        .fold(0usize, |acc, &l| acc * n + (l - 1) as usize)
}
