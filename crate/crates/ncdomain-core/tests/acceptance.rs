//! Acceptance suite: ten end-to-end checks covering inversion, calculus
//! identities, the graded model, kernels, factorization, curvature, and
//! interpolation, each printing a single pass/fail line (visible under
//! `--nocapture`) and holding a wall-clock budget.

use ncdomain_core::eval::{self, TupleInstance};
use ncdomain_core::{calculus, instances, interp, invariants, model};
use ncdomain_core::{CMatrix, NCSeries, NCTuple, Verdict, Word};
use num_complex::Complex64;
use std::time::Instant;

fn re(x: f64) -> Complex64 {
    Complex64::new(x, 0.0)
}

/// Adapts library errors into the criterion closure's failure channel.
fn ok<T>(r: ncdomain_core::Result<T>) -> Result<T, String> {
    r.map_err(|e| e.to_string())
}

macro_rules! check {
    ($cond:expr, $($fmt:tt)*) => {
        if !$cond {
            return Err(format!($($fmt)*));
        }
    };
}

/// Runs one acceptance criterion, prints its outcome line, and enforces the
/// wall-clock budget.
fn criterion(name: &str, budget_s: f64, body: impl FnOnce() -> Result<(), String>) {
    let start = Instant::now();
    let outcome = body();
    let elapsed = start.elapsed().as_secs_f64();
    match outcome {
        Ok(()) => {
            println!("acceptance {name} ... pass ({elapsed:.2}s)");
            assert!(
                elapsed <= budget_s,
                "{name}: passed but exceeded its {budget_s}s budget ({elapsed:.2}s)"
            );
        }
        Err(msg) => {
            println!("acceptance {name} ... FAIL ({msg})");
            panic!("{name}: {msg}");
        }
    }
}

#[test]
fn criterion_01_shear_pair_inversion() {
    criterion("01 shear pair inverts to its closed form", 1.0, || {
        let (p, _) = instances::shear_pair(8);
        let result = ok(calculus::invert(&p, 6))?;
        let g1 = &result.inverse.components()[0];
        let g2 = &result.inverse.components()[1];
        for (letters, expect) in [
            (vec![1u8, 2], 0.5),
            (vec![2u8, 2], 0.5),
            (vec![1u8, 2, 2], 0.25),
            (vec![2u8, 2, 2], 0.25),
        ] {
            let w = Word::from_letters(&letters);
            check!(
                (g1.coeff(&w) - re(expect)).norm() <= 1e-12,
                "coefficient at {w} is {} instead of {expect}",
                g1.coeff(&w)
            );
        }
        // Full check against (Z1 + Z2) * sum_j (Z2 / 2)^j through degree 6.
        let mut closed_form = Vec::new();
        for j in 0..6usize {
            let c = re(0.5f64.powi(j as i32));
            let mut left = vec![1u8];
            left.extend(std::iter::repeat_n(2u8, j));
            closed_form.push((Word::from_letters(&left), c));
            closed_form.push((Word::from_letters(&vec![2u8; j + 1]), c));
        }
        let expected = ok(NCSeries::from_terms(2, 6, false, closed_form))?;
        let gap = ok(g1.sub(&expected))?.sup_coeff_norm();
        check!(gap <= 1e-12, "first inverse component off by {gap:.3e}");
        let second = ok(NCSeries::variable(2, 2))?;
        let gap2 = ok(g2.sub(&second))?.sup_coeff_norm();
        check!(gap2 <= 1e-12, "second inverse component off by {gap2:.3e}");
        check!(
            result.residual_fg <= 1e-12 && result.residual_gf <= 1e-12,
            "composition residuals {:.3e} / {:.3e}",
            result.residual_fg,
            result.residual_gf
        );
        Ok(())
    });
}

#[test]
fn criterion_02_single_variable_geometric_inverse() {
    criterion("02 single-variable family inverts to the geometric series", 1.0, || {
        let (f, _) = instances::mobius_single(3.0, 12);
        let result = ok(calculus::invert(&f, 12))?;
        let g = &result.inverse.components()[0];
        for k in 1..=12usize {
            let w = Word::from_letters(&vec![1u8; k]);
            let expect = 3.0f64.powi(-(k as i32 - 1));
            check!(
                (g.coeff(&w) - re(expect)).norm() <= 1e-12,
                "degree-{k} coefficient is {} instead of {expect:.3e}",
                g.coeff(&w)
            );
        }
        Ok(())
    });
}

#[test]
fn criterion_03_random_round_trips() {
    criterion("03 seeded random tuples invert with dual-route agreement", 10.0, || {
        for seed in 1..=100u64 {
            let n = 1 + (seed % 3) as usize;
            let f = instances::random_poly_tuple(n, 3, seed);
            let fixed = ok(calculus::invert(&f, 6))?;
            check!(
                fixed.residual_fg <= 1e-9 && fixed.residual_gf <= 1e-9,
                "seed {seed}: residuals {:.3e} / {:.3e}",
                fixed.residual_fg,
                fixed.residual_gf
            );
            let literal = ok(calculus::invert_literal(&f, 6))?;
            for (a, b) in fixed
                .inverse
                .components()
                .iter()
                .zip(literal.inverse.components())
            {
                let gap = ok(a.sub(b))?.sup_coeff_norm();
                check!(gap <= 1e-12, "seed {seed}: inversion routes differ by {gap:.3e}");
            }
        }
        Ok(())
    });
}

/// Re-tags a series on a larger alphabet without touching its terms.
fn lift(s: &NCSeries, n_vars: usize) -> NCSeries {
    NCSeries::from_terms(
        n_vars,
        s.max_degree(),
        s.is_polynomial(),
        s.terms().map(|(w, c)| (w.clone(), *c)),
    )
    .expect("letters stay inside the larger alphabet")
}

#[test]
fn criterion_04_jacobian_and_chain_rule() {
    criterion("04 Jacobian multiplicativity and the substitution chain rule", 5.0, || {
        for seed in 0..50u64 {
            let n = 1 + (seed % 3) as usize;
            let f = instances::random_poly_tuple(n, 2, 1000 + seed);
            let g = instances::random_poly_tuple(n, 2, 2000 + seed);
            let fg = ok(calculus::compose_tuple(&f, &g, 2))?;
            let product = ok(ok(calculus::jacobian0(&f))?.matmul(&ok(calculus::jacobian0(&g))?))?;
            let gap = ok(ok(calculus::jacobian0(&fg))?.sub(&product))?.max_abs();
            check!(gap <= 1e-12, "seed {seed}: Jacobian product off by {gap:.3e}");
        }
        // Derivative of a composition: deleting a letter inside H(G) trades
        // one letter of some G_k for the derivative of G_k, in place. The
        // in-place slot is expressed through a fresh letter.
        for seed in 0..50u64 {
            let h = instances::random_poly_tuple(2, 2, 3000 + seed).components()[0].clone();
            let g = instances::random_poly_tuple(2, 2, 4000 + seed);
            let i = 1 + (seed % 2) as u8;
            let direct = ok(ok(calculus::compose(&h, &g, 8))?.free_partial(i))?;
            let slot = ok(NCSeries::variable(3, 3))?;
            let mut rhs = NCSeries::zero(3);
            for k in 1..=2u8 {
                let h_slot = ok(lift(&h, 3).directional_derivative(k, &slot))?;
                let direction = ok(g.components()[(k - 1) as usize].free_partial(i))?;
                let extended = ok(NCTuple::new(vec![
                    lift(&g.components()[0], 3),
                    lift(&g.components()[1], 3),
                    lift(&direction, 3),
                ]))?;
                rhs = ok(rhs.add(&ok(calculus::compose(&h_slot, &extended, 8))?))?;
            }
            let gap = ok(lift(&direct, 3).sub(&rhs))?.sup_coeff_norm();
            check!(gap <= 1e-10, "seed {seed}: chain rule off by {gap:.3e}");
        }
        Ok(())
    });
}

#[test]
fn criterion_05_automorphism_involution() {
    criterion("05 ball automorphisms are involutions through degree five", 2.0, || {
        for seed in 0..10u64 {
            let lambda = instances::random_ball_point(2, 0.8, 5000 + seed);
            let psi = ok(calculus::ball_automorphism(&lambda, 5))?;
            let twice = ok(calculus::automorphism_compose(&lambda, &psi, 5))?;
            for (j, comp) in twice.components().iter().enumerate() {
                let coordinate = ok(NCSeries::variable(2, (j + 1) as u8))?;
                let gap = ok(comp.sub(&coordinate))?.sup_coeff_norm();
                check!(
                    gap <= 1e-10,
                    "seed {seed}: component {} differs from the coordinate by {gap:.3e}",
                    j + 1
                );
            }
        }
        Ok(())
    });
}

#[test]
fn criterion_06_model_relations() {
    criterion("06 graded model relations: exact for coordinates, tail-bounded for the shear", 20.0, || {
        let coordinates = ok(NCTuple::identity(2))?;
        let exact = ok(model::build_model(&coordinates, 5))?;
        let defects = ok(model::model_relation_defects(&exact, 2))?;
        check!(
            defects.cstar_defect == 0.0 && defects.shift_defect == 0.0,
            "coordinate model defects {:.3e} / {:.3e} are not exactly zero",
            defects.cstar_defect,
            defects.shift_defect
        );
        let mut prev_cstar = f64::INFINITY;
        let mut prev_shift = f64::INFINITY;
        for trunc in [4usize, 6, 8] {
            let (_, g) = instances::shear_pair(trunc);
            let shear_model = ok(model::build_model(&g, trunc))?;
            let d = ok(model::model_relation_defects(&shear_model, 2))?;
            check!(
                d.cstar_defect <= d.cstar_tail,
                "N={trunc}: scalar-relation defect {:.3e} above its tail {:.3e}",
                d.cstar_defect,
                d.cstar_tail
            );
            check!(
                d.shift_defect <= d.shift_tail,
                "N={trunc}: shift defect {:.3e} above its tail {:.3e}",
                d.shift_defect,
                d.shift_tail
            );
            check!(
                d.cstar_defect <= prev_cstar + 1e-12 && d.shift_defect <= prev_shift + 1e-12,
                "N={trunc}: defects increased ({:.3e} after {prev_cstar:.3e}, {:.3e} after {prev_shift:.3e})",
                d.cstar_defect,
                d.shift_defect
            );
            prev_cstar = d.cstar_defect;
            prev_shift = d.shift_defect;
        }
        Ok(())
    });
}

fn completely_positive_step(values: &[CMatrix], x: &CMatrix) -> CMatrix {
    let mut out = CMatrix::zeros(x.rows(), x.cols());
    for v in values {
        out = out
            .add(&v.matmul(x).unwrap().matmul(&v.adjoint()).unwrap())
            .unwrap();
    }
    out
}

#[test]
fn criterion_07_kernel_telescoping_and_eigenvectors() {
    criterion("07 kernel telescoping identity and adjoint eigenvector residuals", 20.0, || {
        let trunc = 6usize;
        for seed in 0..20u64 {
            let (f, target) = if seed % 2 == 0 {
                (ok(NCTuple::identity(2))?, 0.6)
            } else {
                (instances::shear_pair(10).0, 0.3)
            };
            let t = instances::random_tuple_instance(2, 4, target, 9000 + seed);
            let kernel = ok(model::poisson_kernel_matrix(&f, &t, trunc))?;
            let gram = ok(kernel.adjoint().matmul(&kernel))?;
            let values: Vec<CMatrix> = ok(eval::eval_tuple(&f, &t, 12))?
                .into_iter()
                .map(|r| r.value)
                .collect();
            let mut iterate = CMatrix::identity(4);
            for _ in 0..=trunc {
                iterate = completely_positive_step(&values, &iterate);
            }
            let telescoped = ok(CMatrix::identity(4).sub(&iterate))?;
            let gap = ok(ok(gram.sub(&telescoped))?.operator_norm())?;
            check!(gap <= 1e-10, "seed {seed}: telescoping identity off by {gap:.3e}");
        }
        let (p, g) = instances::shear_pair(16);
        let lambda = [re(0.2), re(0.1)];
        let mut prev = f64::INFINITY;
        for trunc in [4usize, 6, 8] {
            let shear_model = ok(model::build_model(&g, trunc))?;
            let vector = ok(model::poisson_eigenvector(&p, &lambda, trunc))?;
            let (residual, tail) = ok(model::eigenvector_residual(&shear_model, &vector, &lambda))?;
            check!(
                residual <= tail,
                "N={trunc}: eigenvector residual {residual:.3e} above its tail {tail:.3e}"
            );
            check!(
                residual <= prev + 1e-12,
                "N={trunc}: eigenvector residual {residual:.3e} grew from {prev:.3e}"
            );
            prev = residual;
        }
        Ok(())
    });
}

#[test]
fn criterion_08_factorization_defects() {
    criterion("08 characteristic factorization defects stay within their ceilings", 15.0, || {
        let line = ok(NCTuple::identity(1))?;
        let half = ok(TupleInstance::scalar(&[re(0.5)]))?;
        let defect = ok(invariants::factorization_defect(&line, &half, 12, 6))?;
        check!(defect <= 1e-8, "scalar point defect {defect:.3e} above 1e-8");

        let vanishing = ok(TupleInstance::zero(1, 3))?;
        let exact = ok(invariants::factorization_defect(&line, &vanishing, 6, 3))?;
        check!(exact <= 1e-12, "vanishing-point defect {exact:.3e} above 1e-12");

        let (p, _) = instances::shear_pair(10);
        let t = instances::random_tuple_instance(2, 2, 0.3, 8800);
        let shear_defect = ok(invariants::factorization_defect(&p, &t, 8, 3))?;
        // Polynomial data throughout: the interior compression is exact and
        // the residue is roundoff, ceilinged well above the observed level.
        check!(
            shear_defect <= 1e-9,
            "shear matrix-point defect {shear_defect:.3e} above 1e-9"
        );
        Ok(())
    });
}

#[test]
fn criterion_09_curvature() {
    criterion("09 curvature quotients, extrapolation, and dual-route agreement", 10.0, || {
        let plane = ok(NCTuple::identity(2))?;
        let origin = ok(TupleInstance::zero(2, 3))?;
        let report = ok(invariants::curvature(&plane, &origin, 12))?;
        for &(m, q) in &report.estimates {
            let expected = 3.0 / (2.0f64.powi(m as i32 + 1) - 1.0);
            check!(
                (q - expected).abs() <= 1e-12,
                "step {m}: quotient {q:.6e} instead of {expected:.6e}"
            );
        }
        check!(
            report.extrapolated.abs() <= 1e-6,
            "extrapolated curvature {:.3e} above 1e-6",
            report.extrapolated
        );
        let (via, _tail) = ok(invariants::curvature_via_theta(&plane, &origin, 8))?;
        check!(via.abs() <= 1e-10, "characteristic-function route gave {via:.3e}");

        let line = ok(NCTuple::identity(1))?;
        let point = ok(TupleInstance::zero(1, 1))?;
        let harmonic = ok(invariants::curvature(&line, &point, 10))?;
        for &(m, q) in &harmonic.estimates {
            let expected = 1.0 / (m as f64 + 1.0);
            check!(
                (q - expected).abs() <= 1e-15,
                "single-variable step {m}: quotient {q:.6e} instead of {expected:.6e}"
            );
        }

        let shear = instances::shear_pair(10).0;
        let mobius = instances::mobius_single(2.0, 16).0;
        let cases: [(&NCTuple, f64, u64); 3] =
            [(&plane, 0.5, 1), (&shear, 0.25, 2), (&mobius, 0.5, 3)];
        for (f, norm, seed) in cases {
            let t = instances::random_tuple_instance(f.len(), 3, norm, 6000 + seed);
            let rep = ok(invariants::curvature(f, &t, 25))?;
            check!(
                rep.agreement_gap <= 1e-10,
                "seed {seed}: independent curvature routes differ by {:.3e}",
                rep.agreement_gap
            );
            let window = f
                .components()
                .iter()
                .map(NCSeries::max_degree)
                .max()
                .unwrap_or(0);
            let values: Vec<CMatrix> = ok(eval::eval_tuple(f, &t, window))?
                .into_iter()
                .map(|r| r.value)
                .collect();
            let direct = ok(invariants::row_contraction_curvature(&values, 25))?;
            check!(
                (rep.extrapolated - direct.extrapolated).abs() <= 1e-10,
                "seed {seed}: tuple curvature {:.6e} differs from the evaluated row's {:.6e}",
                rep.extrapolated,
                direct.extrapolated
            );
        }
        Ok(())
    });
}

#[test]
fn criterion_10_interpolation() {
    criterion("10 interpolation feasibility thresholds and kernel positivity", 5.0, || {
        let line = ok(NCTuple::identity(1))?;
        let nodes = vec![vec![re(0.0)], vec![re(0.5)]];
        for (s, expected) in [(0.5 - 1e-6, Verdict::Holds), (0.5 + 1e-6, Verdict::Fails)] {
            let targets = vec![
                ok(CMatrix::from_row_major(1, 1, vec![re(0.0)]))?,
                ok(CMatrix::from_row_major(1, 1, vec![re(s)]))?,
            ];
            let problem = ok(interp::PickProblem::new(line.clone(), nodes.clone(), targets))?;
            let report = ok(interp::pick_feasible(&problem, 1e-9))?;
            check!(
                report.verdict == expected,
                "target {s}: verdict {:?} (smallest eigenvalue {:.3e})",
                report.verdict,
                report.min_eigenvalue
            );
        }

        let (p, _) = instances::shear_pair(8);
        let node = vec![vec![re(0.2), re(0.1)]];
        for (top, expected) in [(0.999, Verdict::Holds), (1.001, Verdict::Fails)] {
            let target = CMatrix::diagonal(&[top, 0.3]);
            let problem = ok(interp::PickProblem::new(p.clone(), node.clone(), vec![target]))?;
            let report = ok(interp::pick_feasible(&problem, 1e-9))?;
            check!(
                report.verdict == expected,
                "single node with norm {top}: verdict {:?}",
                report.verdict
            );
        }

        let points: Vec<Vec<Complex64>> = (0..8)
            .map(|s| instances::random_ball_point(2, 0.45, 1234 + s))
            .collect();
        let gram = ok(interp::gram_matrix(&p, &points))?;
        let eigs = ok(gram.hermitian_eigenvalues())?;
        let scale = eigs.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        check!(
            eigs[0] >= -1e-10 * scale,
            "kernel matrix of eight nodes has eigenvalue {:.3e}",
            eigs[0]
        );

        let nodes: Vec<Vec<Complex64>> = (0..3)
            .map(|s| instances::random_ball_point(2, 0.4, 4321 + s))
            .collect();
        let targets: Vec<CMatrix> = nodes
            .iter()
            .map(|pt| {
                let x = TupleInstance::scalar(pt)?;
                let value = eval::eval_tuple(&p, &x, 8)?[0].value[(0, 0)];
                CMatrix::from_row_major(1, 1, vec![value])
            })
            .collect::<ncdomain_core::Result<_>>()
            .map_err(|e| e.to_string())?;
        let problem = ok(interp::PickProblem::new(p.clone(), nodes, targets))?;
        let report = ok(interp::pick_feasible(&problem, 1e-9))?;
        check!(
            report.verdict != Verdict::Fails && report.min_eigenvalue >= -1e-10 * report.scale,
            "component-value targets judged infeasible (smallest eigenvalue {:.3e})",
            report.min_eigenvalue
        );
        Ok(())
    });
}
