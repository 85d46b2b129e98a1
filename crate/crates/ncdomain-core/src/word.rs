//! Words over a finite alphabet of noncommuting letters.
//!
//! A [`Word`] is a finite product of letters `g1, g2, ...` (1-based); the
//! empty word is the semigroup identity. Words carry the *graded
//! lexicographic* order — shorter words first, ties broken letter by letter
//! from the left — and every map keyed by `Word` in this crate therefore
//! iterates in that order. Reductions over such maps visit terms in a fixed
//! sequence, which is what makes all higher-level output byte-deterministic:
//! floating-point summation order never depends on hashing or insertion
//! history.
//!
//! Enumeration helpers ([`words_of_length`], [`all_words_up_to`]) grow
//! exponentially in the degree, so they are metered by a process-wide word
//! cap (default ten million, override with [`set_word_cap`]) and fail with
//! [`Error::Capacity`] rather than attempting an allocation that cannot
//! succeed.

use std::cmp::Ordering;
use std::fmt;
use std::sync::atomic::{AtomicUsize, Ordering as AtomicOrdering};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default bound on the number of words any single enumeration may produce.
pub const DEFAULT_WORD_CAP: usize = 10_000_000;

static WORD_CAP: AtomicUsize = AtomicUsize::new(DEFAULT_WORD_CAP);

/// Replaces the process-wide enumeration cap and returns the previous value.
pub fn set_word_cap(cap: usize) -> usize {
    WORD_CAP.swap(cap, AtomicOrdering::SeqCst)
}

/// Current process-wide enumeration cap.
pub fn word_cap() -> usize {
    WORD_CAP.load(AtomicOrdering::SeqCst)
}

/// A word in the free semigroup on letters `g1, g2, ...`.
///
/// Letters are stored 1-based, so `Word::letter(2)` is `g2` and the empty
/// vector is the identity. Ordering is graded lexicographic; see the module
/// docs for why that choice is load-bearing.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Word(Vec<u8>);

// `is_identity` plays the role clippy wants `is_empty` for.
#[allow(clippy::len_without_is_empty)]
impl Word {
    /// The empty word (semigroup identity).
    pub fn identity() -> Self {
        Word(Vec::new())
    }

    /// The single-letter word `g_i` (1-based; `i = 0` is not a letter).
    pub fn letter(i: u8) -> Self {
        debug_assert!(i >= 1, "letters are 1-based");
        Word(vec![i])
    }

    /// Builds a word from a slice of 1-based letters.
    pub fn from_letters(letters: &[u8]) -> Self {
        debug_assert!(letters.iter().all(|&l| l >= 1), "letters are 1-based");
        Word(letters.to_vec())
    }

    /// The letters of the word, left to right.
    pub fn letters(&self) -> &[u8] {
        &self.0
    }

    /// Number of letters (the degree of the corresponding monomial).
    pub fn len(&self) -> usize {
        self.0.len()
    }

    /// True for the empty word.
    pub fn is_identity(&self) -> bool {
        self.0.is_empty()
    }

    /// Concatenation `self · other`.
    pub fn concat(&self, other: &Word) -> Word {
        let mut letters = Vec::with_capacity(self.0.len() + other.0.len());
        letters.extend_from_slice(&self.0);
        letters.extend_from_slice(&other.0);
        Word(letters)
    }

    /// Largest letter appearing in the word, or `None` for the identity.
    pub fn max_letter(&self) -> Option<u8> {
        self.0.iter().copied().max()
    }

    /// All ways of writing the word as a product of exactly `k` nonempty
    /// words, in lexicographic order of the cut positions.
    ///
    /// A word of length `m >= 1` has `C(m-1, k-1)` such factorizations
    /// (choose the `k-1` cut points among `m-1` gaps), hence `2^(m-1)` in
    /// total over all `k`. `k = 0`, `k > m`, and the identity word all yield
    /// no factorizations.
    pub fn factorizations(&self, k: usize) -> Vec<Vec<Word>> {
        let m = self.0.len();
        if k == 0 || k > m {
            return Vec::new();
        }
        let mut out = Vec::new();
        let mut cuts = Vec::with_capacity(k - 1);
        self.gen_factorizations(k, 1, &mut cuts, &mut out);
        out
    }

    fn gen_factorizations(
        &self,
        k: usize,
        start: usize,
        cuts: &mut Vec<usize>,
        out: &mut Vec<Vec<Word>>,
    ) {
        if cuts.len() == k - 1 {
            let mut parts = Vec::with_capacity(k);
            let mut prev = 0;
            for &c in cuts.iter() {
                parts.push(Word(self.0[prev..c].to_vec()));
                prev = c;
            }
            parts.push(Word(self.0[prev..].to_vec()));
            out.push(parts);
            return;
        }
        // Cut positions are strictly increasing interior gap indices in
        // 1..len; leave room for the remaining cuts.
        let remaining = k - 1 - cuts.len();
        let last = self.0.len() - remaining;
        for c in start..=last {
            cuts.push(c);
            self.gen_factorizations(k, c + 1, cuts, out);
            cuts.pop();
        }
    }
}

impl Ord for Word {
    fn cmp(&self, other: &Self) -> Ordering {
        // Graded lexicographic: length first, then letters from the left.
        // A derived Ord would compare letters first and mis-order e.g.
        // g2 against g1g1.
        self.0
            .len()
            .cmp(&other.0.len())
            .then_with(|| self.0.cmp(&other.0))
    }
}

impl PartialOrd for Word {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for Word {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_empty() {
            return write!(f, "e");
        }
        for &l in &self.0 {
            write!(f, "g{}", l)?;
        }
        Ok(())
    }
}

/// Number of words of length `k` over `n` letters (`n^k`), as a `u128` to
/// survive the cap comparison without overflow.
fn count_words(n: usize, k: usize) -> u128 {
    (n as u128).pow(k as u32)
}

/// All words of length exactly `k` over letters `1..=n`, in lexicographic
/// order, metered by the process-wide cap.
pub fn words_of_length(n: usize, k: usize) -> Result<Vec<Word>> {
    words_of_length_capped(n, k, word_cap())
}

/// [`words_of_length`] with an explicit cap instead of the process-wide one.
pub fn words_of_length_capped(n: usize, k: usize, cap: usize) -> Result<Vec<Word>> {
    if n > u8::MAX as usize {
        return Err(Error::Index(format!(
            "alphabet size {n} exceeds the supported maximum of {}",
            u8::MAX
        )));
    }
    if k == 0 {
        return Ok(vec![Word::identity()]);
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    let count = count_words(n, k);
    if count > cap as u128 {
        return Err(Error::Capacity(format!(
            "{count} words of length {k} over {n} letters exceed the cap of {cap}"
        )));
    }
    let mut out = Vec::with_capacity(count as usize);
    // Odometer over 1-based letters, least significant position on the
    // right, which is exactly lexicographic order.
    let mut current = vec![1u8; k];
    loop {
        out.push(Word(current.clone()));
        let mut pos = k;
        loop {
            if pos == 0 {
                return Ok(out);
            }
            pos -= 1;
            if (current[pos] as usize) < n {
                current[pos] += 1;
                for later in current.iter_mut().skip(pos + 1) {
                    *later = 1;
                }
                break;
            }
        }
    }
}

/// All words of length at most `d` over letters `1..=n`, in graded
/// lexicographic order, metered by the process-wide cap.
pub fn all_words_up_to(n: usize, d: usize) -> Result<Vec<Word>> {
    all_words_up_to_capped(n, d, word_cap())
}

/// [`all_words_up_to`] with an explicit cap instead of the process-wide one.
pub fn all_words_up_to_capped(n: usize, d: usize, cap: usize) -> Result<Vec<Word>> {
    let mut total: u128 = 0;
    for k in 0..=d {
        total += count_words(n, k);
        if total > cap as u128 {
            return Err(Error::Capacity(format!(
                "{total}+ words up to length {d} over {n} letters exceed the cap of {cap}"
            )));
        }
    }
    let mut out = Vec::with_capacity(total as usize);
    for k in 0..=d {
        out.extend(words_of_length_capped(n, k, cap)?);
    }
    Ok(out)
}
