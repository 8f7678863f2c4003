//! Named example structures and the independent generalized-bracket oracle.
//!
//! Every entry carries an expected pass/fail table for the check suite, so
//! the examples double as an executable regression corpus. The oracle
//! assembles the bracket from the Cartan operations alone and never touches
//! the component expansion it is used to cross-validate.

use crate::chart::Chart;
use crate::courant::CourantStructure;
use crate::error::Error;
use crate::field::{
    iota_d, lie_derivative_one_form, vf_lie_bracket, OneForm, ScalarField, ThreeForm, VectorField,
};
use crate::loday::{LodayStructure, Section};
use crate::plan::SamplePlan;
use crate::report::CheckReport;
use crate::Result;
use std::sync::Arc;

/// Frame convention for the rank-2n generalized tangent structures:
/// e_1..e_n are coordinate vector fields, e_{n+1}..e_{2n} coordinate
/// differentials.
pub fn standard_courant(n: usize) -> Result<CourantStructure> {
    standard_courant_on(&Chart::unit_box(n))
}

pub fn standard_courant_on(chart: &Arc<Chart>) -> Result<CourantStructure> {
    twisted_courant_on(chart, &ThreeForm::zero(chart))
}

/// Standard structure plus the tangent-tangent twist Gamma_{ij}^{n+m} =
/// eta_{ijm}; contraction convention eta(X, Y, .).
pub fn twisted_courant(n: usize, eta: &ThreeForm) -> Result<CourantStructure> {
    if n < 3 {
        return Err(Error::InvalidInput(format!("twist needs dimension >= 3, got {n}")));
    }
    if eta.chart().dim() != n {
        return Err(Error::ChartMismatch("twist three-form on a chart of the wrong dim".into()));
    }
    twisted_courant_on(eta.chart(), eta)
}

fn twisted_courant_on(chart: &Arc<Chart>, eta: &ThreeForm) -> Result<CourantStructure> {
    let n = chart.dim();
    let r = 2 * n;
    let zero = ScalarField::zero(chart);
    let one = ScalarField::constant(chart, 1.0);
    let g = |i: usize, j: usize| -> ScalarField {
        if i + n == j || j + n == i {
            one.clone()
        } else {
            zero.clone()
        }
    };
    let base = LodayStructure::build(
        chart,
        r,
        |i, j, k| {
            if i < n && j < n && k >= n {
                eta.coeff(i, j, k - n)
            } else {
                zero.clone()
            }
        },
        |i, m| if i < n && i == m { one.clone() } else { zero.clone() },
        |m, i, j, l| {
            if l == n + m {
                g(i, j)
            } else {
                zero.clone()
            }
        },
    )?;
    let metric = (0..r).map(|i| (0..r).map(|j| g(i, j)).collect()).collect();
    CourantStructure::new(base, metric)
}

/// Cotangent structure of a bivector field: frame (dx_1..dx_n), anchor row i
/// = pi-sharp of dx_i, Gamma_{ij}^k = d_k pi^{ij}, no co-anchor.
pub fn poisson_cotangent(pi: &[Vec<ScalarField>]) -> Result<LodayStructure> {
    let n = pi.len();
    if n == 0 || pi.iter().any(|row| row.len() != n) {
        return Err(Error::ShapeMismatch("bivector matrix must be square".into()));
    }
    let chart = pi[0][0].chart().clone();
    if chart.dim() != n {
        return Err(Error::ShapeMismatch(format!(
            "bivector is {n}x{n} on a chart of dim {}",
            chart.dim()
        )));
    }
    for i in 0..n {
        for j in 0..n {
            if pi[i][j].chart() != &chart {
                return Err(Error::ChartMismatch("bivector entry on a different chart".into()));
            }
            if i == j && !pi[i][j].is_zero() {
                return Err(Error::InvalidInput(format!("bivector diagonal ({i},{i}) nonzero")));
            }
        }
    }
    let probes = SamplePlan::new(&chart, 11, 5);
    for i in 0..n {
        for j in (i + 1)..n {
            let sum = pi[i][j].add(&pi[j][i]);
            if sum.is_zero() {
                continue;
            }
            for q in probes.points() {
                if sum.eval(q)?.abs() > 1e-12 {
                    return Err(Error::InvalidInput(format!(
                        "bivector not antisymmetric at ({i},{j})"
                    )));
                }
            }
        }
    }
    LodayStructure::build(
        &chart,
        n,
        |i, j, k| pi[i][j].deriv(k),
        |i, m| pi[i][m].clone(),
        |_, _, _, _| ScalarField::zero(&chart),
    )
}

/// Bundle of quadratic Lie algebras: Gamma = f * c, zero anchor and
/// co-anchor, constant metric g0. Requires c antisymmetric and g0
/// ad-invariant for c.
pub fn quadratic_lie_bundle(
    c: &[Vec<Vec<f64>>],
    g0: &[Vec<f64>],
    f: &ScalarField,
) -> Result<CourantStructure> {
    let r = c.len();
    let shape_ok = c.iter().all(|ci| ci.len() == r && ci.iter().all(|cj| cj.len() == r))
        && g0.len() == r
        && g0.iter().all(|row| row.len() == r);
    if !shape_ok {
        return Err(Error::ShapeMismatch("structure constants and metric must share rank".into()));
    }
    for i in 0..r {
        for j in 0..r {
            for k in 0..r {
                if (c[i][j][k] + c[j][i][k]).abs() > 1e-12 {
                    return Err(Error::InvalidInput(format!(
                        "structure constants not antisymmetric at ({i},{j},{k})"
                    )));
                }
            }
            if (g0[i][j] - g0[j][i]).abs() > 1e-12 {
                return Err(Error::InvalidInput(format!("metric not symmetric at ({i},{j})")));
            }
        }
    }
    // ad-invariance: T_{ijk} = sum_m c_{ij}^m g0_{mk} totally antisymmetric
    for i in 0..r {
        for j in 0..r {
            for k in 0..r {
                let t = |a: usize, b: usize, d: usize| -> f64 {
                    (0..r).map(|m| c[a][b][m] * g0[m][d]).sum()
                };
                if (t(i, j, k) + t(i, k, j)).abs() > 1e-12 {
                    return Err(Error::InvalidInput(format!(
                        "metric not ad-invariant at ({i},{j},{k})"
                    )));
                }
            }
        }
    }
    let chart = f.chart().clone();
    let base = LodayStructure::build(
        &chart,
        r,
        |i, j, k| {
            if c[i][j][k] == 0.0 {
                ScalarField::zero(&chart)
            } else {
                f.scale(c[i][j][k])
            }
        },
        |_, _| ScalarField::zero(&chart),
        |_, _, _, _| ScalarField::zero(&chart),
    )?;
    let metric = (0..r)
        .map(|i| (0..r).map(|j| ScalarField::constant(&chart, g0[i][j])).collect())
        .collect();
    CourantStructure::new(base, metric)
}

/// Totally antisymmetric structure constants of the compact rank-3 algebra
/// with the identity as (sign-adjusted) invariant metric.
pub fn su2_data() -> (Vec<Vec<Vec<f64>>>, Vec<Vec<f64>>) {
    let mut c = vec![vec![vec![0.0; 3]; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            for k in 0..3 {
                c[i][j][k] = levi_civita(i, j, k);
            }
        }
    }
    let g = (0..3)
        .map(|i| (0..3).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();
    (c, g)
}

pub fn levi_civita(i: usize, j: usize, k: usize) -> f64 {
    match (i, j, k) {
        (0, 1, 2) | (1, 2, 0) | (2, 0, 1) => 1.0,
        (0, 2, 1) | (2, 1, 0) | (1, 0, 2) => -1.0,
        _ => 0.0,
    }
}

/// Rank-4 linear model: a compact constant bracket on the first three frames
/// plus a fourth frame anchored to the radial vector field. The canonical
/// fixture whose linearization data is already in normal form.
pub fn centered_model() -> Result<LodayStructure> {
    let chart = Chart::unit_box(4);
    LodayStructure::build(
        &chart,
        4,
        |i, j, k| {
            if i < 3 && j < 3 && k < 3 {
                ScalarField::constant(&chart, levi_civita(i, j, k))
            } else {
                ScalarField::zero(&chart)
            }
        },
        |i, m| {
            if i == 3 {
                ScalarField::coordinate(&chart, m)
            } else {
                ScalarField::zero(&chart)
            }
        },
        |_, _, _, _| ScalarField::zero(&chart),
    )
}

/// Generalized bracket of X + alpha and Y + beta assembled from the Cartan
/// operations: [X,Y] + L_X beta - i_Y d alpha + eta(X, Y, .). Output lives
/// on the rank-2n frame of `standard_courant_on`.
pub fn oracle_dorfman(
    x: &VectorField,
    alpha: &OneForm,
    y: &VectorField,
    beta: &OneForm,
    eta: Option<&ThreeForm>,
) -> Result<Section> {
    let chart = x.chart().clone();
    if alpha.chart() != &chart || y.chart() != &chart || beta.chart() != &chart {
        return Err(Error::ChartMismatch("oracle arguments on different charts".into()));
    }
    let n = chart.dim();
    let vec_part = vf_lie_bracket(x, y);
    let mut form_part = lie_derivative_one_form(x, beta);
    let correction = iota_d(y, alpha);
    let comps_form: Vec<ScalarField> = match eta {
        Some(e) => {
            if e.chart() != &chart {
                return Err(Error::ChartMismatch("twist on a different chart".into()));
            }
            let twist = e.contract2(x, y);
            (0..n)
                .map(|m| form_part.comp(m).sub(correction.comp(m)).add(twist.comp(m)))
                .collect()
        }
        None => (0..n).map(|m| form_part.comp(m).sub(correction.comp(m))).collect(),
    };
    form_part = OneForm::new(chart.clone(), comps_form);
    let comps = (0..n)
        .map(|m| vec_part.comp(m).clone())
        .chain((0..n).map(|m| form_part.comp(m).clone()))
        .collect();
    Ok(Section::new(chart, comps))
}

/// Split a rank-2n section into its vector-field and one-form halves.
pub fn split_generalized(s: &Section) -> Result<(VectorField, OneForm)> {
    let n = s.chart().dim();
    if s.rank() != 2 * n {
        return Err(Error::ShapeMismatch(format!(
            "rank {} section is not generalized over dim {n}",
            s.rank()
        )));
    }
    let x = VectorField::new(s.chart().clone(), (0..n).map(|m| s.comp(m).clone()).collect());
    let a = OneForm::new(s.chart().clone(), (0..n).map(|m| s.comp(n + m).clone()).collect());
    Ok((x, a))
}

// ---------------------------------------------------------------------------
// Named registry

pub enum ZooStructure {
    Loday(LodayStructure),
    Courant(CourantStructure),
}

pub struct ZooEntry {
    pub name: String,
    /// Which check entries must pass (true) or fail (false).
    pub expected: Vec<(&'static str, bool)>,
    pub structure: ZooStructure,
}

impl ZooEntry {
    pub fn chart(&self) -> &Arc<Chart> {
        match &self.structure {
            ZooStructure::Loday(a) => a.chart(),
            ZooStructure::Courant(c) => c.chart(),
        }
    }

    pub fn check(&self, plan: &SamplePlan) -> Result<CheckReport> {
        match &self.structure {
            ZooStructure::Loday(a) => a.check_structure(plan),
            ZooStructure::Courant(c) => c.check_courant(plan),
        }
    }

    /// Pass/fail pattern equality against the expected table.
    pub fn matches_expected(&self, report: &CheckReport) -> bool {
        self.expected.iter().all(|(name, pass)| {
            report.entry(name).map(|e| e.pass == *pass).unwrap_or(false)
        })
    }
}

pub const ZOO_NAMES: &[&str] = &[
    "standard-courant",
    "twisted-courant",
    "poisson-so3",
    "poisson-constant",
    "poisson-nonjacobi",
    "quadratic-su2",
    "centered-model",
];

const LODAY_PASS: &[(&str, bool)] = &[
    ("jacobi", true),
    ("a", true),
    ("b", true),
    ("c", true),
    ("rho-symm", true),
    ("rho-coanchor", true),
];

const COURANT_PASS: &[(&str, bool)] = &[
    ("jacobi", true),
    ("a", true),
    ("b", true),
    ("c", true),
    ("rho-symm", true),
    ("rho-coanchor", true),
    ("pairing", true),
    ("symm", true),
    ("coanchor", true),
];

/// Build a named example; `params` are the comma-separated tail of the CLI
/// `--zoo` argument.
pub fn build_entry(name: &str, params: &[&str]) -> Result<ZooEntry> {
    let bad = |msg: String| Err(Error::InvalidInput(msg));
    match name {
        "standard-courant" => {
            let n = parse_dim(params.first().copied().unwrap_or("2"))?;
            Ok(ZooEntry {
                name: format!("standard-courant({n})"),
                expected: COURANT_PASS.to_vec(),
                structure: ZooStructure::Courant(standard_courant(n)?),
            })
        }
        "twisted-courant" => {
            let n = parse_dim(params.first().copied().unwrap_or("3"))?;
            let kind = params.get(1).copied().unwrap_or("closed");
            let chart = Chart::unit_box(n);
            match kind {
                "closed" => {
                    if n < 3 {
                        return bad(format!("closed twist needs dim >= 3, got {n}"));
                    }
                    let eta = ThreeForm::new(
                        chart.clone(),
                        vec![((0, 1, 2), ScalarField::constant(&chart, 1.0))],
                    )?;
                    Ok(ZooEntry {
                        name: format!("twisted-courant({n},closed)"),
                        expected: COURANT_PASS.to_vec(),
                        structure: ZooStructure::Courant(twisted_courant(n, &eta)?),
                    })
                }
                "nonclosed" => {
                    if n < 4 {
                        return bad(format!(
                            "a non-closed top-degree-avoiding twist needs dim >= 4, got {n}"
                        ));
                    }
                    let eta = ThreeForm::new(
                        chart.clone(),
                        vec![((0, 1, 2), ScalarField::coordinate(&chart, 3))],
                    )?;
                    let mut expected = COURANT_PASS.to_vec();
                    expected[0] = ("jacobi", false);
                    Ok(ZooEntry {
                        name: format!("twisted-courant({n},nonclosed)"),
                        expected,
                        structure: ZooStructure::Courant(twisted_courant(n, &eta)?),
                    })
                }
                other => bad(format!("unknown twist kind {other:?} (closed|nonclosed)")),
            }
        }
        "poisson-so3" => {
            let chart = Chart::unit_box(3);
            let pi = bivector(&chart, |i, j| {
                let mut f = ScalarField::zero(&chart);
                for k in 0..3 {
                    let eps = levi_civita(i, j, k);
                    if eps != 0.0 {
                        f = f.add(&ScalarField::coordinate(&chart, k).scale(eps));
                    }
                }
                f
            });
            Ok(ZooEntry {
                name: "poisson-so3".into(),
                expected: LODAY_PASS.to_vec(),
                structure: ZooStructure::Loday(poisson_cotangent(&pi)?),
            })
        }
        "poisson-constant" => {
            let chart = Chart::unit_box(3);
            let pi = bivector(&chart, |i, j| {
                ScalarField::constant(&chart, if (i, j) == (0, 1) { 1.0 } else { 0.0 })
            });
            Ok(ZooEntry {
                name: "poisson-constant".into(),
                expected: LODAY_PASS.to_vec(),
                structure: ZooStructure::Loday(poisson_cotangent(&pi)?),
            })
        }
        "poisson-nonjacobi" => {
            Ok(ZooEntry {
                name: "poisson-nonjacobi".into(),
                expected: vec![
                    ("jacobi", false),
                    ("a", false),
                    ("b", true),
                    ("c", true),
                    ("rho-symm", true),
                    ("rho-coanchor", true),
                ],
                structure: ZooStructure::Loday(nonjacobi_cotangent()?),
            })
        }
        "quadratic-su2" => {
            let chart = Chart::unit_box(2);
            let f = match params.first() {
                Some(src) => ScalarField::parse(&chart, src)?,
                None => ScalarField::constant(&chart, 1.0),
            };
            let (c, g0) = su2_data();
            Ok(ZooEntry {
                name: match params.first() {
                    Some(src) => format!("quadratic-su2({src})"),
                    None => "quadratic-su2".into(),
                },
                expected: COURANT_PASS.to_vec(),
                structure: ZooStructure::Courant(quadratic_lie_bundle(&c, &g0, &f)?),
            })
        }
        "centered-model" => Ok(ZooEntry {
            name: "centered-model".into(),
            expected: LODAY_PASS.to_vec(),
            structure: ZooStructure::Loday(centered_model()?),
        }),
        other => bad(format!("unknown zoo entry {other:?}; known: {}", ZOO_NAMES.join(", "))),
    }
}

/// Bivector that genuinely fails the closure obstruction: pi^{12} = x1,
/// pi^{13} = x2, pi^{23} = 0. Its hand-expanded obstruction S^{123} is -x2,
/// so the frame jacobiator is the constant section dx2.
pub fn nonjacobi_cotangent() -> Result<LodayStructure> {
    let chart = Chart::unit_box(3);
    let pi = bivector(&chart, |i, j| match (i, j) {
        (0, 1) => ScalarField::coordinate(&chart, 0),
        (0, 2) => ScalarField::coordinate(&chart, 1),
        _ => ScalarField::zero(&chart),
    });
    poisson_cotangent(&pi)
}

fn bivector(
    chart: &Arc<Chart>,
    upper: impl Fn(usize, usize) -> ScalarField,
) -> Vec<Vec<ScalarField>> {
    let n = chart.dim();
    let mut pi = vec![vec![ScalarField::zero(chart); n]; n];
    for i in 0..n {
        for j in (i + 1)..n {
            let f = upper(i, j);
            pi[j][i] = f.neg();
            pi[i][j] = f;
        }
    }
    pi
}

fn parse_dim(s: &str) -> Result<usize> {
    let n: usize = s
        .trim()
        .parse()
        .map_err(|_| Error::InvalidInput(format!("bad dimension parameter {s:?}")))?;
    if n == 0 {
        return Err(Error::InvalidInput("dimension must be positive".into()));
    }
    Ok(n)
}

/// Schouten obstruction S^{ijk} = sum_a pi^{ia} d_a pi^{jk} + cyclic, the
/// independent hand expansion used to audit the cotangent jacobiator.
pub fn schouten_obstruction(
    pi: &[Vec<ScalarField>],
    i: usize,
    j: usize,
    k: usize,
) -> ScalarField {
    let chart = pi[0][0].chart().clone();
    let n = pi.len();
    let mut acc = ScalarField::zero(&chart);
    for (a, b, c) in [(i, j, k), (j, k, i), (k, i, j)] {
        for m in 0..n {
            if pi[a][m].is_zero() {
                continue;
            }
            let d = pi[b][c].deriv(m);
            if !d.is_zero() {
                acc = acc.add(&pi[a][m].mul(&d));
            }
        }
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::loday::random_polynomial_sections;

    #[test]
    fn standard_courant_suite_passes() {
        let s = standard_courant(2).unwrap();
        let plan = SamplePlan::new(s.chart(), 7, 16);
        let rep = s.check_courant(&plan).unwrap();
        assert!(rep.passed(), "{rep:?}");
        assert!(rep.residual("jacobi").unwrap() <= 1e-12);
    }

    #[test]
    fn standard_frame_bracket_example() {
        // [x2 e1, e3] = e4 on the dim-2 standard structure
        let s = standard_courant(2).unwrap();
        let c = s.chart().clone();
        let x2 = ScalarField::coordinate(&c, 1);
        let a = s.base().frame(0).scale_field(&x2);
        let b = s.base().frame(2);
        let out = s.base().bracket(&a, &b).unwrap();
        let v = out.eval(&[0.3, -0.8]).unwrap();
        assert_eq!(v, vec![0.0, 0.0, 0.0, 1.0]);
        // anchor of a differential frame vanishes
        assert!(s.base().anchor(&b).unwrap().eval(&[0.3, -0.8]).unwrap().iter().all(|x| *x == 0.0));
        // coanchor example: lambda(dx1 ⊗ e1 ⊗ e3) = <e1,e3> rho* dx1 = e3
        let xi = OneForm::coordinate_differential(&c, 0);
        let co = s.base().coanchor(&xi, &s.base().frame(0), &s.base().frame(2)).unwrap();
        assert_eq!(co.eval(&[0.1, 0.2]).unwrap(), vec![0.0, 0.0, 1.0, 0.0]);
        // rho*(dx_m) = e_{n+m}
        let rs = s.rho_star(&xi).unwrap();
        assert_eq!(rs.eval(&[0.1, 0.2]).unwrap(), vec![0.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn oracle_agrees_with_expansion() {
        for n in [1usize, 2] {
            let s = standard_courant(n).unwrap();
            let c = s.chart().clone();
            let sections = random_polynomial_sections(&c, 2 * n, 40 + n as u64, 10);
            let plan = SamplePlan::new(&c, 3, 12);
            for pair in sections.chunks(2) {
                let (x, al) = split_generalized(&pair[0]).unwrap();
                let (y, be) = split_generalized(&pair[1]).unwrap();
                let oracle = oracle_dorfman(&x, &al, &y, &be, None).unwrap();
                let ours = s.base().bracket(&pair[0], &pair[1]).unwrap();
                let diff = oracle.sub(&ours);
                for q in plan.points() {
                    for v in diff.eval(q).unwrap() {
                        assert!(v.abs() <= 1e-9, "n={n} residual {v} at {q:?}");
                    }
                }
            }
        }
    }

    #[test]
    fn twisted_oracle_and_closedness_split() {
        // closed constant twist still satisfies the full suite
        let closed = build_entry("twisted-courant", &["3", "closed"]).unwrap();
        let plan = SamplePlan::new(closed.chart(), 7, 12);
        let rep = closed.check(&plan).unwrap();
        assert!(closed.matches_expected(&rep), "{rep:?}");

        // the oracle matches the expansion with the twist in place
        if let ZooStructure::Courant(s) = &closed.structure {
            let c = s.chart().clone();
            let eta = ThreeForm::new(
                c.clone(),
                vec![((0, 1, 2), ScalarField::constant(&c, 1.0))],
            )
            .unwrap();
            let sections = random_polynomial_sections(&c, 6, 99, 6);
            for pair in sections.chunks(2) {
                let (x, al) = split_generalized(&pair[0]).unwrap();
                let (y, be) = split_generalized(&pair[1]).unwrap();
                let oracle = oracle_dorfman(&x, &al, &y, &be, Some(&eta)).unwrap();
                let ours = s.base().bracket(&pair[0], &pair[1]).unwrap();
                let diff = oracle.sub(&ours);
                for q in plan.points() {
                    for v in diff.eval(q).unwrap() {
                        assert!(v.abs() <= 1e-9, "residual {v}");
                    }
                }
            }
        } else {
            panic!("expected a metric structure");
        }

        // non-closed twist: only the closure entry fails
        let open = build_entry("twisted-courant", &["4", "nonclosed"]).unwrap();
        let plan4 = SamplePlan::new(open.chart(), 7, 12);
        let rep4 = open.check(&plan4).unwrap();
        assert!(open.matches_expected(&rep4), "{rep4:?}");
        assert!(rep4.residual("jacobi").unwrap() >= 0.1);
        assert!(rep4.entry("a").unwrap().pass);
    }

    #[test]
    fn twist_sign_convention_frozen() {
        // with eta = dx1^dx2^dx3: [e1, e2] has +1 in the dx3 slot
        let e = build_entry("twisted-courant", &["3", "closed"]).unwrap();
        if let ZooStructure::Courant(s) = &e.structure {
            let out = s.base().bracket(&s.base().frame(0), &s.base().frame(1)).unwrap();
            let v = out.eval(&[0.2, 0.1, -0.3]).unwrap();
            assert_eq!(v, vec![0.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
        } else {
            panic!("expected a metric structure");
        }
    }

    #[test]
    fn poisson_entries_match_schouten() {
        // so(3): obstruction vanishes, suite passes
        let so3 = build_entry("poisson-so3", &[]).unwrap();
        let plan = SamplePlan::new(so3.chart(), 7, 16);
        let rep = so3.check(&plan).unwrap();
        assert!(so3.matches_expected(&rep), "{rep:?}");

        let constant = build_entry("poisson-constant", &[]).unwrap();
        let repc = constant.check(&SamplePlan::new(constant.chart(), 7, 8)).unwrap();
        assert!(constant.matches_expected(&repc), "{repc:?}");

        // the genuinely non-closing bivector: jacobiator of the frame triple
        // equals minus the differential of the obstruction, here dx2
        let bad = build_entry("poisson-nonjacobi", &[]).unwrap();
        let repb = bad.check(&SamplePlan::new(bad.chart(), 7, 8)).unwrap();
        assert!(bad.matches_expected(&repb), "{repb:?}");
        if let ZooStructure::Loday(a) = &bad.structure {
            let j = a
                .jacobiator(&a.frame(0), &a.frame(1), &a.frame(2))
                .unwrap()
                .eval(&[0.3, -0.2, 0.5])
                .unwrap();
            assert_eq!(j, vec![0.0, 1.0, 0.0]);

            let chart = a.chart().clone();
            let pi = bivector(&chart, |i, j| match (i, j) {
                (0, 1) => ScalarField::coordinate(&chart, 0),
                (0, 2) => ScalarField::coordinate(&chart, 1),
                _ => ScalarField::zero(&chart),
            });
            let s = schouten_obstruction(&pi, 0, 1, 2);
            // S^{123} = -x2; J^k = -d_k S
            for q in [[0.3, -0.2, 0.5], [0.0, 0.9, -0.4]] {
                assert!((s.eval(&q).unwrap() + q[1]).abs() < 1e-14);
                for (k, jk) in j.iter().enumerate() {
                    let ds = s.deriv(k).eval(&q).unwrap();
                    assert!((jk + ds).abs() < 1e-14);
                }
            }
        } else {
            panic!("expected a bare structure");
        }
    }

    #[test]
    fn quadratic_bundle_any_coefficient_passes() {
        let entry = build_entry("quadratic-su2", &["1 + x1 + x2^2"]).unwrap();
        let plan = SamplePlan::new(entry.chart(), 7, 16);
        let rep = entry.check(&plan).unwrap();
        assert!(entry.matches_expected(&rep), "{rep:?}");
        assert!(rep.residual("jacobi").unwrap() <= 1e-12);
        assert!(rep.residual("pairing").unwrap() <= 1e-12);
    }

    #[test]
    fn ad_invariance_precondition() {
        let chart = Chart::unit_box(2);
        let f = ScalarField::constant(&chart, 1.0);
        let (c, _) = su2_data();
        // a non-invariant metric must be rejected
        let bad_g = vec![
            vec![1.0, 0.0, 0.0],
            vec![0.0, 2.0, 0.0],
            vec![0.0, 0.0, 3.0],
        ];
        assert!(matches!(
            quadratic_lie_bundle(&c, &bad_g, &f),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn centered_model_is_consistent() {
        let entry = build_entry("centered-model", &[]).unwrap();
        let plan = SamplePlan::new(entry.chart(), 7, 12);
        let rep = entry.check(&plan).unwrap();
        assert!(entry.matches_expected(&rep), "{rep:?}");
        // the fourth frame is anchored to the radial field
        if let ZooStructure::Loday(a) = &entry.structure {
            let q = [0.3, -0.1, 0.2, 0.5];
            let v = a.anchor(&a.frame(3)).unwrap().eval(&q).unwrap();
            assert_eq!(v, q.to_vec());
        }
    }

    #[test]
    fn unknown_entry_is_an_input_error() {
        assert!(matches!(build_entry("no-such-entry", &[]), Err(Error::InvalidInput(_))));
        assert!(matches!(
            build_entry("twisted-courant", &["2", "closed"]),
            Err(Error::InvalidInput(_))
        ));
    }
}
