//! A small library of named series tuples and matrix points used across
//! the test suites and exposed through the CLI `examples` command: inverse
//! pairs with closed-form coefficients, polynomial families with known
//! span properties, and seeded random generators.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cmatrix::CMatrix;
use crate::eval::TupleInstance;
use crate::series::{NCSeries, NCTuple};
use crate::word::Word;

fn re(x: f64) -> Complex64 {
    Complex64::new(x, 0.0)
}

/// The planar shear map `p = (Z1 - Z2 - ½ Z1Z2, Z2)` together with its
/// compositional inverse `g = ((Z1+Z2)(I + Z2/2 + (Z2/2)² + ...), Z2)`,
/// whose first component expands to `sum_j 2^{-j} (Z1 Z2^j + Z2^{j+1})`.
/// The inverse is genuinely infinite and is returned truncated at
/// `window`.
pub fn shear_pair(window: usize) -> (NCTuple, NCTuple) {
    let z1 = NCSeries::variable(2, 1).expect("valid letter");
    let z2 = NCSeries::variable(2, 2).expect("valid letter");
    let p1 = z1
        .sub(&z2)
        .expect("same alphabet")
        .sub(&z1.mul(&z2).expect("same alphabet").scale(re(0.5)))
        .expect("same alphabet");
    let p = NCTuple::new(vec![p1, z2.clone()]).expect("two components");

    let mut g1_terms = Vec::new();
    for j in 0..window {
        let coeff = re(0.5f64.powi(j as i32));
        let mut mixed = vec![1u8];
        mixed.extend(std::iter::repeat_n(2u8, j));
        g1_terms.push((Word::from_letters(&mixed), coeff));
        g1_terms.push((Word::from_letters(&vec![2u8; j + 1]), coeff));
    }
    let g1 = NCSeries::from_terms(2, window, false, g1_terms).expect("well-formed terms");
    let g2 = z2.as_truncated(window);
    let g = NCTuple::new(vec![g1, g2]).expect("two components");
    (p, g)
}

/// The single-variable Möbius-type pair for a parameter `a` with
/// `|a| > 1`: `f = Z(I + Z/a)^{-1}` with coefficients
/// `(-1)^{k-1} a^{-(k-1)}` and inverse `g = Z(I - Z/a)^{-1}` with
/// coefficients `a^{-(k-1)}`, both truncated at `window`. The radius of
/// convergence of `f` is `|a|`, and its domain contains the closed ball
/// of radius `|a|/(|a|-1)`.
pub fn mobius_single(a: f64, window: usize) -> (NCTuple, NCTuple) {
    let mut f_terms = Vec::new();
    let mut g_terms = Vec::new();
    for k in 1..=window {
        let mag = a.powi(-(k as i32 - 1));
        let sign = if k % 2 == 0 { -1.0 } else { 1.0 };
        f_terms.push((Word::from_letters(&vec![1u8; k]), re(sign * mag)));
        g_terms.push((Word::from_letters(&vec![1u8; k]), re(mag)));
    }
    let f = NCSeries::from_terms(1, window, false, f_terms).expect("well-formed terms");
    let g = NCSeries::from_terms(1, window, false, g_terms).expect("well-formed terms");
    (
        NCTuple::new(vec![f]).expect("one component"),
        NCTuple::new(vec![g]).expect("one component"),
    )
}

/// A triangular polynomial triple in three variables,
/// `(Z1 + Z2 + Z3Z2, Z2 + Z3 + Z3², Z3)`: each component only feeds on
/// later variables, its degree-one Jacobian is unit upper triangular, and
/// the coordinates Z1, Z2, Z3 lie in the span of its products.
pub fn triangular_triple() -> NCTuple {
    let z = |i: u8| NCSeries::variable(3, i).expect("valid letter");
    let p1 = z(1)
        .add(&z(2))
        .expect("same alphabet")
        .add(&z(3).mul(&z(2)).expect("same alphabet"))
        .expect("same alphabet");
    let p2 = z(2)
        .add(&z(3))
        .expect("same alphabet")
        .add(&z(3).mul(&z(3)).expect("same alphabet"))
        .expect("same alphabet");
    NCTuple::new(vec![p1, p2, z(3)]).expect("three components")
}

/// A two-variable pair built from a geometric resolvent in the second
/// variable: for `gamma > 0` and `|a| > 1`,
/// `f = ((1/gamma) Z1 - sum_{j>=1} ((1/gamma) Z2)^j, (a/gamma) Z2)` with
/// inverse `g = (gamma Z1 + gamma sum_{j>=1} (Z2/a)^j, (gamma/a) Z2)`.
/// The geometric sums are truncated at `window`.
pub fn geometric_resolvent_pair(gamma: f64, a: f64, window: usize) -> (NCTuple, NCTuple) {
    let mut f1_terms = vec![(Word::letter(1), re(1.0 / gamma))];
    let mut g1_terms = vec![(Word::letter(1), re(gamma))];
    for j in 1..=window {
        f1_terms.push((
            Word::from_letters(&vec![2u8; j]),
            re(-gamma.powi(-(j as i32))),
        ));
        g1_terms.push((
            Word::from_letters(&vec![2u8; j]),
            re(gamma * a.powi(-(j as i32))),
        ));
    }
    let f1 = NCSeries::from_terms(2, window, false, f1_terms).expect("well-formed terms");
    let g1 = NCSeries::from_terms(2, window, false, g1_terms).expect("well-formed terms");
    let z2 = NCSeries::variable(2, 2).expect("valid letter");
    let f2 = z2.scale(re(a / gamma)).as_truncated(window);
    let g2 = z2.scale(re(gamma / a)).as_truncated(window);
    (
        NCTuple::new(vec![f1, f2]).expect("two components"),
        NCTuple::new(vec![g1, g2]).expect("two components"),
    )
}

/// A seeded member of the shifted-coordinate family
/// `[p_1 ... p_n] = ([Z_1 ... Z_n] + [q_1(Z_{>1}) ... q_{n-1}(Z_{>n-1}), 0]) · A`
/// with `A` invertible: component `q_i` is a random constant-free
/// polynomial in the variables after `i`, so the system can be solved for
/// the coordinates from the last variable up — every such tuple spans the
/// coordinates with its products.
pub fn spanning_shifted_family(n: usize, seed: u64) -> NCTuple {
    assert!((1..=5).contains(&n), "family generated for 1..=5 variables");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Invertible A: resample until the determinant is comfortably away
    // from zero.
    let a = loop {
        let cand = CMatrix::from_fn(n, n, |_, _| re(rng.gen_range(-1.0..1.0)));
        if let Ok(det) = cand.determinant() {
            if det.norm() >= 0.3 {
                break cand;
            }
        }
    };
    // Shifted summands: Z_i + q_i with q_i supported on variables > i.
    let mut shifted = Vec::with_capacity(n);
    for i in 1..=n {
        let mut s = NCSeries::variable(n, i as u8).expect("valid letter");
        if i < n {
            let later: Vec<u8> = ((i + 1) as u8..=n as u8).collect();
            let mut q_terms = Vec::new();
            for w in crate::word::all_words_up_to(later.len(), 2)
                .expect("tiny enumeration")
                .into_iter()
                .filter(|w| !w.is_identity())
            {
                if rng.gen_bool(0.6) {
                    let letters: Vec<u8> =
                        w.letters().iter().map(|&l| later[(l - 1) as usize]).collect();
                    q_terms.push((
                        Word::from_letters(&letters),
                        re(rng.gen_range(-0.5..0.5)),
                    ));
                }
            }
            let q = NCSeries::from_terms(n, 2, true, q_terms).expect("well-formed terms");
            s = s.add(&q).expect("same alphabet");
        }
        shifted.push(s);
    }
    // p_j = sum_i shifted_i * A[i, j].
    let components = (0..n)
        .map(|j| {
            let mut acc = NCSeries::zero(n);
            for (i, s) in shifted.iter().enumerate() {
                acc = acc.add(&s.scale(a[(i, j)])).expect("same alphabet");
            }
            acc
        })
        .collect();
    NCTuple::new(components).expect("n components")
}

/// A seeded random polynomial tuple with zero constant terms, component
/// degree at most `max_degree`, and a degree-one coefficient matrix whose
/// determinant is at least 0.1 in modulus — the regime where
/// compositional inversion is well conditioned. Higher-degree
/// coefficients are damped, and linear parts whose inverse has operator
/// norm above 2 are resampled: inversion to degree `D` amplifies roundoff
/// by roughly that norm to the `D`-th power, so the bound keeps a
/// degree-6 inverse accurate to around a hundred ulps in absolute terms —
/// tight enough that two independently ordered computations of it agree
/// below 1e-12.
pub fn random_poly_tuple(n: usize, max_degree: usize, seed: u64) -> NCTuple {
    assert!((1..=5).contains(&n), "generated for 1..=5 variables");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let mut components = Vec::with_capacity(n);
        for _ in 0..n {
            let mut terms = Vec::new();
            for w in crate::word::all_words_up_to(n, max_degree)
                .expect("tiny enumeration")
                .into_iter()
                .filter(|w| !w.is_identity())
            {
                if w.len() == 1 || rng.gen_bool(0.5) {
                    let damp = 4.0f64.powi(w.len() as i32 - 1);
                    let mag = rng.gen_range(-1.0..1.0) / damp;
                    terms.push((w, re(mag)));
                }
            }
            components.push(
                NCSeries::from_terms(n, max_degree, true, terms).expect("well-formed terms"),
            );
        }
        let tuple = NCTuple::new(components).expect("n components");
        let jac = crate::calculus::jacobian0(&tuple).expect("square tuple");
        if let Ok(det) = jac.determinant() {
            if det.norm() >= 0.1 {
                let inverse_norm = jac
                    .inverse()
                    .and_then(|inv| inv.operator_norm())
                    .unwrap_or(f64::INFINITY);
                if inverse_norm <= 2.0 {
                    return tuple;
                }
            }
        }
    }
}

/// A seeded random point: `n` matrices of size `d` with uniform complex
/// entries, rescaled so the row norm equals `target_row_norm` (or left
/// zero when the draw is zero).
pub fn random_tuple_instance(
    n: usize,
    d: usize,
    target_row_norm: f64,
    seed: u64,
) -> TupleInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let raw: Vec<CMatrix> = (0..n)
        .map(|_| {
            CMatrix::from_fn(d, d, |_, _| {
                Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
            })
        })
        .collect();
    let instance = TupleInstance::new(raw.clone()).expect("square matrices");
    let r = instance.row_norm();
    if r == 0.0 {
        return instance;
    }
    let scale = re(target_row_norm / r);
    TupleInstance::new(raw.into_iter().map(|m| m.scale(scale)).collect())
        .expect("square matrices")
}

/// A point in the open unit ball of C^n drawn with the given seed:
/// uniform direction-ish coordinates scaled to a uniform norm below
/// `max_norm`.
pub fn random_ball_point(n: usize, max_norm: f64, seed: u64) -> Vec<Complex64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let raw: Vec<Complex64> = (0..n)
        .map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
        .collect();
    let norm: f64 = raw.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
    if norm == 0.0 {
        return raw;
    }
    let target = rng.gen_range(0.1..max_norm);
    raw.iter().map(|c| c * re(target / norm)).collect()
}
