//! Randomized structural invariants of the series arithmetic: the Leibniz
//! rule for the letter-deletion derivative, and agreement of full-then-
//! truncate with truncate-then-multiply on the shared window.

use ncdomain_core::{NCSeries, Word};
use num_complex::Complex64;
use proptest::prelude::*;

/// Random polynomial in two letters: up to twelve terms of degree at most
/// `max_deg` with coefficients in the unit square.
fn arb_poly(max_deg: usize) -> impl Strategy<Value = NCSeries> {
    prop::collection::vec(
        (
            prop::collection::vec(1u8..=2, 0..=max_deg),
            -1.0..1.0f64,
            -1.0..1.0f64,
        ),
        0..12,
    )
    .prop_map(move |terms| {
        NCSeries::from_terms(
            2,
            max_deg,
            true,
            terms
                .into_iter()
                .map(|(w, re, im)| (Word::from_letters(&w), Complex64::new(re, im))),
        )
        .expect("letters drawn from the alphabet")
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    /// Deleting a letter from a product deletes it in the left factor or in
    /// the right one: d_i(F G) = d_i(F) G + F d_i(G), coefficient by
    /// coefficient.
    #[test]
    fn letter_deletion_satisfies_the_leibniz_rule(
        f in arb_poly(4),
        g in arb_poly(4),
        i in 1u8..=2,
    ) {
        let lhs = f.mul(&g).unwrap().free_partial(i).unwrap();
        let rhs = f
            .free_partial(i)
            .unwrap()
            .mul(&g)
            .unwrap()
            .add(&f.mul(&g.free_partial(i).unwrap()).unwrap())
            .unwrap();
        let scale = 1.0 + f.sup_coeff_norm() * g.sup_coeff_norm();
        prop_assert!(lhs.sub(&rhs).unwrap().sup_coeff_norm() <= 1e-12 * scale);
    }

    /// Coefficients through degree `d` of a product depend only on the
    /// factors through degree `d`, so multiplying first and truncating
    /// after agrees with truncating first.
    #[test]
    fn multiplication_respects_truncation_windows(
        f in arb_poly(4),
        g in arb_poly(4),
        d in 0usize..=5,
    ) {
        let full = f.mul(&g).unwrap().truncate(d);
        let windowed = f.truncate(d).mul(&g.truncate(d)).unwrap().truncate(d);
        let scale = 1.0 + f.sup_coeff_norm() * g.sup_coeff_norm();
        prop_assert!(full.sub(&windowed).unwrap().sup_coeff_norm() <= 1e-12 * scale);
    }
}
