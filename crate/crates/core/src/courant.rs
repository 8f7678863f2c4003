//! Metric layer over a Loday structure: the transpose anchor, the Courant
//! axiom suite, and the isometry-invariant norm of the pointwise bracket.

use crate::chart::Chart;
use crate::error::Error;
use crate::field::{OneForm, ScalarField};
use crate::grid::GridAxis;
use crate::loday::{random_polynomial_sections, LodayStructure, Section};
use crate::plan::SamplePlan;
use crate::report::{CheckReport, ResidualMax};
use crate::tol;
use crate::Result;
use nalgebra::DMatrix;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::sync::Arc;

/// Loday structure plus a fiberwise symmetric pairing g_{ij} = <e_i, e_j>.
///
/// The inverse metric is materialized up front: numerically for constant
/// metrics, symbolically through the adjugate for small expression metrics,
/// and by lattice resampling of the pointwise inverse otherwise.
#[derive(Debug, Clone)]
pub struct CourantStructure {
    base: LodayStructure,
    metric: Vec<Vec<ScalarField>>,
    inverse: Vec<Vec<ScalarField>>,
}

impl CourantStructure {
    pub fn new(base: LodayStructure, metric: Vec<Vec<ScalarField>>) -> Result<CourantStructure> {
        let r = base.rank();
        if metric.len() != r || metric.iter().any(|row| row.len() != r) {
            return Err(Error::ShapeMismatch(format!("metric must be {r}x{r}")));
        }
        for row in &metric {
            for g in row {
                if g.chart() != base.chart() {
                    return Err(Error::ChartMismatch("metric entry on a different chart".into()));
                }
            }
        }
        for i in 0..r {
            for j in (i + 1)..r {
                if metric[i][j] != metric[j][i] {
                    return Err(Error::InvalidInput(format!(
                        "metric not symmetric at ({i},{j})"
                    )));
                }
            }
        }
        let inverse = invert_metric(base.chart(), &metric)?;
        Ok(CourantStructure { base, metric, inverse })
    }

    pub fn base(&self) -> &LodayStructure {
        &self.base
    }

    pub fn chart(&self) -> &Arc<Chart> {
        self.base.chart()
    }

    pub fn rank(&self) -> usize {
        self.base.rank()
    }

    pub fn metric(&self, i: usize, j: usize) -> &ScalarField {
        &self.metric[i][j]
    }

    pub fn metric_fields(&self) -> &[Vec<ScalarField>] {
        &self.metric
    }

    pub fn metric_at(&self, q: &[f64]) -> Result<DMatrix<f64>> {
        let r = self.rank();
        let mut m = DMatrix::zeros(r, r);
        for i in 0..r {
            for j in 0..r {
                m[(i, j)] = self.metric[i][j].eval(q)?;
            }
        }
        Ok(m)
    }

    pub fn max_grid_spacing(&self) -> Option<f64> {
        let mut best = self.base.max_grid_spacing();
        for row in &self.metric {
            for g in row {
                if let Some(h) = g.max_grid_spacing() {
                    best = Some(best.map_or(h, |b| b.max(h)));
                }
            }
        }
        best
    }

    /// <a, b> = sum g_{ij} a^i b^j.
    pub fn pairing(&self, a: &Section, b: &Section) -> ScalarField {
        let chart = self.chart();
        let mut acc = ScalarField::zero(chart);
        for (i, row) in self.metric.iter().enumerate() {
            if a.comp(i).is_zero() {
                continue;
            }
            for (j, g) in row.iter().enumerate() {
                if g.is_zero() || b.comp(j).is_zero() {
                    continue;
                }
                acc = acc.add(&a.comp(i).mul(b.comp(j)).mul(g));
            }
        }
        acc
    }

    /// (rho* xi)^k = sum_{l,m} g^{kl} theta_{lm} xi_m; defining identity
    /// <rho* xi, b> = xi(rho b).
    pub fn rho_star(&self, xi: &OneForm) -> Result<Section> {
        if xi.chart() != self.chart() {
            return Err(Error::ChartMismatch("one-form chart differs from structure chart".into()));
        }
        let r = self.rank();
        let n = self.base.dim();
        let chart = self.chart();
        let comps = (0..r)
            .map(|k| {
                let mut acc = ScalarField::zero(chart);
                for l in 0..r {
                    let ginv = &self.inverse[k][l];
                    if ginv.is_zero() {
                        continue;
                    }
                    for m in 0..n {
                        let th = self.base.theta(l, m);
                        if th.is_zero() || xi.comp(m).is_zero() {
                            continue;
                        }
                        acc = acc.add(&ginv.mul(th).mul(xi.comp(m)));
                    }
                }
                acc
            })
            .collect();
        Ok(Section::new(chart.clone(), comps))
    }

    /// Df := rho* df.
    pub fn d_function(&self, f: &ScalarField) -> Result<Section> {
        self.rho_star(&f.differential())
    }

    /// Courant axioms at plan points: (pairing) invariance, (symm) the
    /// symmetrization formula, (coanchor) the co-anchor/metric relation, on
    /// top of every structure-level entry. The metric is also required to be
    /// nondegenerate at every plan point.
    pub fn check_courant(&self, plan: &SamplePlan) -> Result<CheckReport> {
        if plan.chart() != self.chart() {
            return Err(Error::ChartMismatch("plan chart differs from structure chart".into()));
        }
        let r = self.rank();
        let n = self.base.dim();
        for q in plan.points() {
            let det = self.metric_at(q)?.determinant();
            if det.abs() < tol::SINGULAR_TOL {
                return Err(Error::Degenerate(format!(
                    "metric determinant {det:.3e} at {q:?}"
                )));
            }
        }
        let tolerance = tol::check_tol(self.max_grid_spacing());
        let mut report = self.base.check_structure(plan)?;

        let frames: Vec<Section> = (0..r).map(|i| self.base.frame(i)).collect();
        let mut triples: Vec<(Section, Section, Section)> = Vec::new();
        for i in 0..r {
            for j in 0..r {
                for k in 0..r {
                    triples.push((frames[i].clone(), frames[j].clone(), frames[k].clone()));
                }
            }
        }
        let rand_sections =
            random_polynomial_sections(self.chart(), r, plan.seed() ^ 0xc0u64, 12);
        for t in rand_sections.chunks(3) {
            triples.push((t[0].clone(), t[1].clone(), t[2].clone()));
        }

        let mut rp = ResidualMax::new("pairing");
        for (a, b, c) in &triples {
            let lhs = self.base.anchor(a)?.apply(&self.pairing(b, c));
            let rhs = self
                .pairing(&self.base.bracket(a, b)?, c)
                .add(&self.pairing(b, &self.base.bracket(a, c)?));
            let diff = lhs.sub(&rhs);
            for q in plan.points() {
                rp.update(diff.eval(q)?.abs(), q);
            }
        }
        report.push(rp.into_entry(tolerance));

        let mut rs = ResidualMax::new("symm");
        let mut pairs: Vec<(Section, Section)> = Vec::new();
        for i in 0..r {
            for j in 0..r {
                pairs.push((frames[i].clone(), frames[j].clone()));
            }
        }
        for t in rand_sections.chunks(2).take(3) {
            pairs.push((t[0].clone(), t[1].clone()));
        }
        for (a, b) in &pairs {
            let lhs = self.base.symmetrization(a, b)?;
            let rhs = self.d_function(&self.pairing(a, b))?;
            let diff = lhs.sub(&rhs);
            for q in plan.points() {
                for v in diff.eval(q)? {
                    rs.update(v.abs(), q);
                }
            }
        }
        report.push(rs.into_entry(tolerance));

        let mut rc = ResidualMax::new("coanchor");
        for m in 0..n {
            let xi = OneForm::coordinate_differential(self.chart(), m);
            let rs_xi = self.rho_star(&xi)?;
            for i in 0..r {
                for j in 0..r {
                    let lhs = self.base.coanchor(&xi, &frames[i], &frames[j])?;
                    let rhs = rs_xi.scale_field(&self.metric[i][j]);
                    let diff = lhs.sub(&rhs);
                    for q in plan.points() {
                        for v in diff.eval(q)? {
                            rc.update(v.abs(), q);
                        }
                    }
                }
            }
        }
        report.push(rc.into_entry(tolerance));
        Ok(report)
    }

    /// Sup over metric-unit u, v of the metric norm of the pointwise bilinear
    /// map (u, v) -> Gamma(q)(u, v), by seeded sphere sampling with a
    /// power-iteration ascent from every sample. Monotone nondecreasing in
    /// `samples` (the draw stream is a prefix of any longer stream).
    pub fn bracket_operator_norm(&self, q: &[f64], seed: u64, samples: usize) -> Result<f64> {
        if samples == 0 {
            return Err(Error::InvalidInput("sample count must be positive".into()));
        }
        self.chart().contains(q)?;
        let r = self.rank();
        let g = {
            let mut m = self.metric_at(q)?;
            // symmetrize against rounding before the eigen test
            m = (m.clone() + m.transpose()) * 0.5;
            m
        };
        let eigs = g.clone().symmetric_eigen().eigenvalues;
        let sign = if eigs.iter().all(|&e| e > tol::SINGULAR_TOL) {
            1.0
        } else if eigs.iter().all(|&e| e < -tol::SINGULAR_TOL) {
            -1.0
        } else {
            return Err(Error::IndefinitePairing { point: q.to_vec() });
        };
        let chol = (g * sign)
            .cholesky()
            .ok_or_else(|| Error::Degenerate("metric factorization failed".into()))?;
        let l = chol.l();
        let linv_t = l
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::Degenerate("metric factor not invertible".into()))?
            .transpose();

        // conjugated tensor: M_{ab}^c = sum L_{kc} Gamma_{ij}^k A_{ia} A_{jb},
        // A = L^{-T}; metric-unit vectors and the metric norm both become
        // Euclidean in these coordinates
        let mut gam = vec![vec![vec![0.0; r]; r]; r];
        for i in 0..r {
            for j in 0..r {
                for k in 0..r {
                    gam[i][j][k] = self.base.gamma(i, j, k).eval(q)?;
                }
            }
        }
        let mut m = vec![vec![vec![0.0; r]; r]; r];
        for a in 0..r {
            for b in 0..r {
                for c in 0..r {
                    let mut acc = 0.0;
                    for i in 0..r {
                        for j in 0..r {
                            for k in 0..r {
                                acc += l[(k, c)] * gam[i][j][k] * linv_t[(i, a)] * linv_t[(j, b)];
                            }
                        }
                    }
                    m[a][b][c] = acc;
                }
            }
        }

        let apply = |u: &[f64], v: &[f64]| -> Vec<f64> {
            (0..r)
                .map(|c| {
                    let mut acc = 0.0;
                    for a in 0..r {
                        for b in 0..r {
                            acc += m[a][b][c] * u[a] * v[b];
                        }
                    }
                    acc
                })
                .collect()
        };
        let norm2 = |w: &[f64]| w.iter().map(|x| x * x).sum::<f64>().sqrt();

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let draw_unit = |rng: &mut ChaCha8Rng| -> Vec<f64> {
            loop {
                let v: Vec<f64> = (0..r).map(|_| rng.random_range(-1.0..1.0)).collect();
                let nv = norm2(&v);
                if nv > 1e-3 {
                    return v.iter().map(|x| x / nv).collect();
                }
            }
        };

        let mut best = 0.0f64;
        for _ in 0..samples {
            let mut u = draw_unit(&mut rng);
            let mut v = draw_unit(&mut rng);
            best = best.max(norm2(&apply(&u, &v)));
            // alternating power ascent on |M(u, v)|
            for _ in 0..25 {
                let w = apply(&u, &v);
                let nw = norm2(&w);
                if nw < 1e-14 {
                    break;
                }
                let wn: Vec<f64> = w.iter().map(|x| x / nw).collect();
                let mut un: Vec<f64> = (0..r)
                    .map(|a| {
                        let mut acc = 0.0;
                        for b in 0..r {
                            for c in 0..r {
                                acc += m[a][b][c] * v[b] * wn[c];
                            }
                        }
                        acc
                    })
                    .collect();
                let nu = norm2(&un);
                if nu < 1e-14 {
                    break;
                }
                for x in &mut un {
                    *x /= nu;
                }
                u = un;
                let mut vn: Vec<f64> = (0..r)
                    .map(|b| {
                        let mut acc = 0.0;
                        for a in 0..r {
                            for c in 0..r {
                                acc += m[a][b][c] * u[a] * wn[c];
                            }
                        }
                        acc
                    })
                    .collect();
                let nv = norm2(&vn);
                if nv < 1e-14 {
                    break;
                }
                for x in &mut vn {
                    *x /= nv;
                }
                v = vn;
                let val = norm2(&apply(&u, &v));
                if val <= best + 1e-15 {
                    best = best.max(val);
                    break;
                }
                best = val;
            }
        }
        Ok(best)
    }
}

/// Inverse metric as fields. Constant metrics invert numerically once;
/// expression metrics of rank <= 4 invert through the adjugate; anything
/// else is resampled pointwise on the finest lattice the entries carry.
fn invert_metric(
    chart: &Arc<Chart>,
    metric: &[Vec<ScalarField>],
) -> Result<Vec<Vec<ScalarField>>> {
    let r = metric.len();
    let constant = |f: &ScalarField| matches!(f.repr(), crate::expr::Expr::Const(_));
    if metric.iter().flatten().all(constant) {
        let q = chart.center();
        let mut g = DMatrix::zeros(r, r);
        for i in 0..r {
            for j in 0..r {
                g[(i, j)] = metric[i][j].eval(&q)?;
            }
        }
        if g.determinant().abs() < tol::SINGULAR_TOL {
            return Err(Error::Degenerate("constant metric is singular".into()));
        }
        let inv = g.try_inverse().ok_or_else(|| Error::Degenerate("metric not invertible".into()))?;
        return Ok((0..r)
            .map(|i| (0..r).map(|j| ScalarField::constant(chart, inv[(i, j)])).collect())
            .collect());
    }

    let grammar = metric.iter().flatten().all(|f| f.is_grammar());
    if grammar && r <= 4 {
        let det = det_field(chart, metric, &(0..r).collect::<Vec<_>>(), &(0..r).collect::<Vec<_>>());
        let mut inv = vec![vec![ScalarField::zero(chart); r]; r];
        for k in 0..r {
            for l in 0..r {
                // inverse_{kl} = cofactor_{lk} / det
                let rows: Vec<usize> = (0..r).filter(|&i| i != l).collect();
                let cols: Vec<usize> = (0..r).filter(|&j| j != k).collect();
                let minor = det_field(chart, metric, &rows, &cols);
                let sign = if (k + l) % 2 == 0 { 1.0 } else { -1.0 };
                inv[k][l] = minor.scale(sign).div(&det);
            }
        }
        return Ok(inv);
    }

    // pointwise inverse, resampled on the union lattice of the entries
    let mut counts = vec![0usize; chart.dim()];
    for f in metric.iter().flatten() {
        f.repr().visit_grids(&mut |t| {
            for a in t.axes() {
                counts[a.chart_axis] = counts[a.chart_axis].max(a.count);
            }
        });
    }
    for c in &mut counts {
        if *c == 0 {
            *c = 33;
        }
    }
    let axes: Vec<GridAxis> = (0..chart.dim())
        .map(|i| {
            let (lo, hi) = chart.interval(i);
            GridAxis { chart_axis: i, lo, hi, count: counts[i] }
        })
        .collect();
    let mut tables: Vec<Vec<Option<crate::grid::GridTable>>> = vec![vec![None; r]; r];
    for k in 0..r {
        for l in 0..r {
            let table = crate::grid::GridTable::sample(axes.clone(), &chart.center(), |q| {
                let mut g = DMatrix::zeros(r, r);
                for i in 0..r {
                    for j in 0..r {
                        g[(i, j)] = metric[i][j].eval(q)?;
                    }
                }
                if g.determinant().abs() < tol::SINGULAR_TOL {
                    return Err(Error::Degenerate(format!("metric singular at {q:?}")));
                }
                let inv = g
                    .try_inverse()
                    .ok_or_else(|| Error::Degenerate("metric not invertible".into()))?;
                Ok(inv[(k, l)])
            })?;
            tables[k][l] = Some(table);
        }
    }
    let mut out = vec![vec![ScalarField::zero(chart); r]; r];
    for k in 0..r {
        for l in 0..r {
            out[k][l] = ScalarField::from_grid(chart, tables[k][l].take().unwrap())?;
        }
    }
    Ok(out)
}

fn det_field(
    chart: &Arc<Chart>,
    m: &[Vec<ScalarField>],
    rows: &[usize],
    cols: &[usize],
) -> ScalarField {
    if rows.is_empty() {
        return ScalarField::constant(chart, 1.0);
    }
    if rows.len() == 1 {
        return m[rows[0]][cols[0]].clone();
    }
    let mut acc = ScalarField::zero(chart);
    let rest: Vec<usize> = rows[1..].to_vec();
    for (pos, &c) in cols.iter().enumerate() {
        let sub_cols: Vec<usize> = cols.iter().copied().filter(|&x| x != c).collect();
        let minor = det_field(chart, m, &rest, &sub_cols);
        let term = m[rows[0]][c].mul(&minor);
        acc = if pos % 2 == 0 { acc.add(&term) } else { acc.sub(&term) };
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::loday::random_polynomial_section;

    fn levi_civita(i: usize, j: usize, k: usize) -> f64 {
        match (i, j, k) {
            (0, 1, 2) | (1, 2, 0) | (2, 0, 1) => 1.0,
            (0, 2, 1) | (2, 1, 0) | (1, 0, 2) => -1.0,
            _ => 0.0,
        }
    }

    /// su(2) constant bracket with the identity pairing: a Courant structure
    /// with zero anchor.
    fn su2_courant(chart: &Arc<Chart>) -> CourantStructure {
        let base = LodayStructure::build(
            chart,
            3,
            |i, j, k| ScalarField::constant(chart, levi_civita(i, j, k)),
            |_, _| ScalarField::zero(chart),
            |_, _, _, _| ScalarField::zero(chart),
        )
        .unwrap();
        let metric = (0..3)
            .map(|i| {
                (0..3)
                    .map(|j| ScalarField::constant(chart, if i == j { 1.0 } else { 0.0 }))
                    .collect()
            })
            .collect();
        CourantStructure::new(base, metric).unwrap()
    }

    #[test]
    fn su2_passes_courant_suite() {
        let c = Chart::unit_box(2);
        let s = su2_courant(&c);
        let plan = SamplePlan::new(&c, 5, 12);
        let rep = s.check_courant(&plan).unwrap();
        assert!(rep.passed(), "{rep:?}");
        assert!(rep.residual("pairing").unwrap() <= 1e-12);
        assert!(rep.residual("symm").unwrap() <= 1e-12);
    }

    #[test]
    fn singular_constant_metric_rejected() {
        let c = Chart::unit_box(2);
        let base = LodayStructure::build(
            &c,
            2,
            |_, _, _| ScalarField::zero(&c),
            |_, _| ScalarField::zero(&c),
            |_, _, _, _| ScalarField::zero(&c),
        )
        .unwrap();
        let metric = vec![
            vec![ScalarField::constant(&c, 1.0), ScalarField::constant(&c, 1.0)],
            vec![ScalarField::constant(&c, 1.0), ScalarField::constant(&c, 1.0)],
        ];
        assert!(matches!(CourantStructure::new(base, metric), Err(Error::Degenerate(_))));
    }

    #[test]
    fn rho_star_defining_identity() {
        // <rho* xi, b> = xi(rho b) for a structure with nonconstant theta
        // and a nonconstant invertible metric (adjugate route, rank 2)
        let c = Chart::unit_box(2);
        let base = LodayStructure::build(
            &c,
            2,
            |_, _, _| ScalarField::zero(&c),
            |i, m| {
                if i == m {
                    ScalarField::parse(&c, "1 + 0.25*x1").unwrap()
                } else {
                    ScalarField::coordinate(&c, 1).scale(0.5)
                }
            },
            |_, _, _, _| ScalarField::zero(&c),
        )
        .unwrap();
        let g11 = ScalarField::parse(&c, "2 + 0.5*x2").unwrap();
        let off = ScalarField::coordinate(&c, 0).scale(0.25);
        let metric = vec![
            vec![g11.clone(), off.clone()],
            vec![off, ScalarField::constant(&c, 3.0)],
        ];
        let s = CourantStructure::new(base, metric).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let b = random_polynomial_section(&c, 2, &mut rng);
        let xi = OneForm::new(
            c.clone(),
            vec![ScalarField::parse(&c, "x2^2").unwrap(), ScalarField::constant(&c, 0.7)],
        );
        let lhs = s.pairing(&s.rho_star(&xi).unwrap(), &b);
        let rhs = xi.contract(&s.base.anchor(&b).unwrap());
        let plan = SamplePlan::new(&c, 8, 16);
        for q in plan.points() {
            let d = (lhs.eval(q).unwrap() - rhs.eval(q).unwrap()).abs();
            assert!(d <= 1e-12, "residual {d} at {q:?}");
        }
    }

    #[test]
    fn pointwise_inverse_fallback_matches() {
        // rank-5 nonconstant metric goes through the resampling route
        let c = Chart::unit_box(1);
        let base = LodayStructure::build(
            &c,
            5,
            |_, _, _| ScalarField::zero(&c),
            |_, _| ScalarField::zero(&c),
            |_, _, _, _| ScalarField::zero(&c),
        )
        .unwrap();
        let metric: Vec<Vec<ScalarField>> = (0..5)
            .map(|i| {
                (0..5)
                    .map(|j| {
                        if i == j {
                            ScalarField::parse(&c, "2 + 0.3*x1").unwrap()
                        } else {
                            ScalarField::zero(&c)
                        }
                    })
                    .collect()
            })
            .collect();
        let s = CourantStructure::new(base, metric).unwrap();
        // diagonal inverse is 1/(2 + 0.3 x); cubic interpolation of a smooth
        // reciprocal on 33 nodes is well below 1e-6
        let q = [0.37];
        let expect = 1.0 / (2.0 + 0.3 * q[0]);
        let got = s.inverse[2][2].eval(&q).unwrap();
        assert!((got - expect).abs() < 1e-6, "err {}", (got - expect).abs());
    }

    #[test]
    fn su2_norm_is_one() {
        let c = Chart::unit_box(2);
        let s = su2_courant(&c);
        let n = s.bracket_operator_norm(&[0.1, -0.2], 11, 48).unwrap();
        assert!((n - 1.0).abs() < 1e-9, "norm {n}");
    }

    #[test]
    fn norm_monotone_in_samples_and_indefinite_error() {
        let c = Chart::unit_box(2);
        let s = su2_courant(&c);
        let q = [0.3, 0.4];
        let n8 = s.bracket_operator_norm(&q, 7, 8).unwrap();
        let n64 = s.bracket_operator_norm(&q, 7, 64).unwrap();
        assert!(n64 >= n8);

        // flip one metric sign: indefinite pairing must error
        let base = LodayStructure::build(
            &c,
            2,
            |_, _, _| ScalarField::zero(&c),
            |_, _| ScalarField::zero(&c),
            |_, _, _, _| ScalarField::zero(&c),
        )
        .unwrap();
        let metric = vec![
            vec![ScalarField::constant(&c, 1.0), ScalarField::zero(&c)],
            vec![ScalarField::zero(&c), ScalarField::constant(&c, -1.0)],
        ];
        let ind = CourantStructure::new(base, metric).unwrap();
        assert!(matches!(
            ind.bracket_operator_norm(&q, 7, 8),
            Err(Error::IndefinitePairing { .. })
        ));
    }

    #[test]
    fn norm_invariant_under_orthogonal_conjugation() {
        // conjugating Gamma(q) by an orthogonal matrix is a metric-orthogonal
        // change of frame for the identity pairing: the norm may move by at
        // most the sampling accuracy
        let c = Chart::unit_box(2);
        let s = su2_courant(&c);
        let q = [0.0, 0.0];
        let n0 = s.bracket_operator_norm(&q, 13, 96).unwrap();

        // Givens rotation in the (0,1)-plane by 0.6 rad
        let (cs, sn) = (0.6f64.cos(), 0.6f64.sin());
        let rot = [[cs, -sn, 0.0], [sn, cs, 0.0], [0.0, 0.0, 1.0]];
        let mut gam = [[[0.0; 3]; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                for k in 0..3 {
                    let mut acc = 0.0;
                    for a in 0..3 {
                        for b in 0..3 {
                            for d in 0..3 {
                                acc += rot[a][i] * rot[b][j] * rot[d][k]
                                    * levi_civita(a, b, d);
                            }
                        }
                    }
                    gam[i][j][k] = acc;
                }
            }
        }
        let base = LodayStructure::build(
            &c,
            3,
            |i, j, k| ScalarField::constant(&c, gam[i][j][k]),
            |_, _| ScalarField::zero(&c),
            |_, _, _, _| ScalarField::zero(&c),
        )
        .unwrap();
        let metric = (0..3)
            .map(|i| {
                (0..3)
                    .map(|j| ScalarField::constant(&c, if i == j { 1.0 } else { 0.0 }))
                    .collect()
            })
            .collect();
        let rotated = CourantStructure::new(base, metric).unwrap();
        let n1 = rotated.bracket_operator_norm(&q, 13, 96).unwrap();
        assert!((n1 - n0).abs() <= 0.01 * n0.max(1.0), "n0 {n0} n1 {n1}");
    }
}
