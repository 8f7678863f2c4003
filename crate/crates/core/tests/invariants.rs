//! Cross-module invariants under randomly generated polynomial data. These
//! hold for every input, not just the curated fixtures, so they run under
//! proptest with reduced case counts to keep the suite quick.

use algebroid::chart::Chart;
use algebroid::field::ScalarField;
use algebroid::loday::Section;
use algebroid::plan::SamplePlan;
use algebroid::zoo;
use proptest::prelude::*;
use std::sync::Arc;

fn coeff() -> impl Strategy<Value = f64> {
    // dyadic coefficients print exactly and keep residuals interpretable
    (-8i32..=8).prop_map(|k| k as f64 * 0.25)
}

/// Degree-one polynomial a0 + a1 x1 + ... + an xn from n + 1 coefficients.
fn affine(chart: &Arc<Chart>, c: &[f64]) -> ScalarField {
    let mut f = ScalarField::constant(chart, c[0]);
    for (axis, &a) in c[1..].iter().enumerate() {
        if a != 0.0 {
            f = f.add(&ScalarField::coordinate(chart, axis).scale(a));
        }
    }
    f
}

fn section(chart: &Arc<Chart>, rank: usize, coeffs: &[f64]) -> Section {
    let per = chart.dim() + 1;
    let comps = (0..rank).map(|i| affine(chart, &coeffs[i * per..(i + 1) * per])).collect();
    Section::new(chart.clone(), comps)
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 24, ..ProptestConfig::default() })]

    /// The bracket is a derivation in its second slot through the anchor:
    /// [a, f b] = f [a, b] + (rho a)(f) b.
    #[test]
    fn bracket_satisfies_the_leibniz_rule(
        sa in proptest::collection::vec(coeff(), 12),
        sb in proptest::collection::vec(coeff(), 12),
        fc in proptest::collection::vec(coeff(), 3),
    ) {
        let sc = zoo::standard_courant(2).unwrap();
        let chart = sc.chart();
        let a = section(chart, 4, &sa);
        let b = section(chart, 4, &sb);
        let f = affine(chart, &fc);
        let lhs = sc.base().bracket(&a, &b.scale_field(&f)).unwrap();
        let fab = sc.base().bracket(&a, &b).unwrap().scale_field(&f);
        let rho_af = sc.base().anchor(&a).unwrap().apply(&f);
        let rhs = fab.add(&b.scale_field(&rho_af));
        let plan = SamplePlan::new(chart, 3, 8);
        for q in plan.points() {
            let (l, r) = (lhs.eval(q).unwrap(), rhs.eval(q).unwrap());
            for k in 0..4 {
                prop_assert!((l[k] - r[k]).abs() <= 1e-9, "component {k}: {} vs {}", l[k], r[k]);
            }
        }
    }

    /// The anchor sends brackets to commutators of vector fields:
    /// rho [a, b] = [rho a, rho b].
    #[test]
    fn anchor_is_a_homomorphism(
        sa in proptest::collection::vec(coeff(), 12),
        sb in proptest::collection::vec(coeff(), 12),
        fc in proptest::collection::vec(coeff(), 3),
    ) {
        let sc = zoo::standard_courant(2).unwrap();
        let chart = sc.chart();
        let a = section(chart, 4, &sa);
        let b = section(chart, 4, &sb);
        let f = affine(chart, &fc);
        let lhs = sc.base().anchor(&sc.base().bracket(&a, &b).unwrap()).unwrap().apply(&f);
        let (ra, rb) = (sc.base().anchor(&a).unwrap(), sc.base().anchor(&b).unwrap());
        let rhs = ra.apply(&rb.apply(&f)).sub(&rb.apply(&ra.apply(&f)));
        let plan = SamplePlan::new(chart, 3, 8);
        for q in plan.points() {
            let (l, r) = (lhs.eval(q).unwrap(), rhs.eval(q).unwrap());
            prop_assert!((l - r).abs() <= 1e-9, "{l} vs {r}");
        }
    }

    /// The anchor differentiates the pairing:
    /// rho(a)<b, c> = <[a, b], c> + <b, [a, c]>.
    #[test]
    fn pairing_is_invariant_under_the_bracket(
        sa in proptest::collection::vec(coeff(), 12),
        sb in proptest::collection::vec(coeff(), 12),
        sc_coeffs in proptest::collection::vec(coeff(), 12),
    ) {
        let e = zoo::standard_courant(2).unwrap();
        let chart = e.chart();
        let a = section(chart, 4, &sa);
        let b = section(chart, 4, &sb);
        let c = section(chart, 4, &sc_coeffs);
        let pair = |x: &Section, y: &Section| {
            let mut acc = ScalarField::zero(chart);
            for i in 0..4 {
                for j in 0..4 {
                    let g = e.metric(i, j);
                    if !g.is_zero() {
                        acc = acc.add(&g.mul(x.comp(i)).mul(y.comp(j)));
                    }
                }
            }
            acc
        };
        let lhs = e.base().anchor(&a).unwrap().apply(&pair(&b, &c));
        let rhs = pair(&e.base().bracket(&a, &b).unwrap(), &c)
            .add(&pair(&b, &e.base().bracket(&a, &c).unwrap()));
        let plan = SamplePlan::new(chart, 3, 8);
        for q in plan.points() {
            let (l, r) = (lhs.eval(q).unwrap(), rhs.eval(q).unwrap());
            prop_assert!((l - r).abs() <= 1e-9, "{l} vs {r}");
        }
    }

    /// Printing a grammar-backed field and parsing the result is the
    /// identity, and the printed form is a fixed point of the cycle.
    #[test]
    fn printed_fields_parse_back(
        fc in proptest::collection::vec(coeff(), 6),
    ) {
        let chart = Chart::unit_box(2);
        // dense quadratic: c0 + c1 x1 + c2 x2 + c3 x1^2 + c4 x1 x2 + c5 x2^2
        let x1 = ScalarField::coordinate(&chart, 0);
        let x2 = ScalarField::coordinate(&chart, 1);
        let f = affine(&chart, &fc[..3])
            .add(&x1.mul(&x1).scale(fc[3]))
            .add(&x1.mul(&x2).scale(fc[4]))
            .add(&x2.mul(&x2).scale(fc[5]));
        let printed = f.to_grammar_string().expect("built from grammar operations");
        let back = ScalarField::parse(&chart, &printed).unwrap();
        let reprinted = back.to_grammar_string();
        prop_assert_eq!(reprinted.as_deref(), Some(printed.as_str()));
        let plan = SamplePlan::new(&chart, 3, 8);
        for q in plan.points() {
            let (l, r) = (f.eval(q).unwrap(), back.eval(q).unwrap());
            prop_assert!((l - r).abs() <= 1e-12 * (1.0 + l.abs()), "{l} vs {r}");
        }
    }

    /// Four-point Lagrange windows reproduce cubics exactly, edges included.
    #[test]
    fn resampling_is_exact_on_cubics(
        c in proptest::collection::vec(coeff(), 4),
    ) {
        let chart = Chart::unit_box(1);
        let x = ScalarField::coordinate(&chart, 0);
        let f = affine(&chart, &c[..2])
            .add(&x.mul(&x).scale(c[2]))
            .add(&x.mul(&x).mul(&x).scale(c[3]));
        let g = f.resample(&[9]).unwrap();
        let plan = SamplePlan::new(&chart, 5, 16);
        for q in plan.points() {
            let (l, r) = (f.eval(q).unwrap(), g.eval(q).unwrap());
            prop_assert!((l - r).abs() <= 1e-10, "at {q:?}: {l} vs {r}");
        }
    }
}
