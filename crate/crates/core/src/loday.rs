//! Anchored brackets with a co-anchor correction on a trivialized bundle.
//!
//! The structure data is a triple of component fields (Gamma, theta, lambda)
//! over a chart. The bracket is defined by the component expansion below, so
//! both Leibniz rules hold identically for arbitrary data; the Jacobi
//! identity and the tensoriality identities are genuine checks.

use crate::chart::Chart;
use crate::error::Error;
use crate::field::{lie_derivative_one_form, vf_lie_bracket, OneForm, ScalarField, VectorField};
use crate::plan::SamplePlan;
use crate::report::{CheckReport, ResidualMax};
use crate::tol;
use crate::Result;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::sync::Arc;

/// Rank-r section with scalar-field components in a fixed frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Section {
    chart: Arc<Chart>,
    comps: Vec<ScalarField>,
}

impl Section {
    pub fn new(chart: Arc<Chart>, comps: Vec<ScalarField>) -> Section {
        assert!(!comps.is_empty(), "section needs at least one component");
        for c in &comps {
            assert!(c.chart() == &chart, "section component on a different chart");
        }
        Section { chart, comps }
    }

    pub fn zero(chart: &Arc<Chart>, rank: usize) -> Section {
        Section::new(chart.clone(), vec![ScalarField::zero(chart); rank])
    }

    /// Frame section e_i: constant i-th unit coefficient vector.
    pub fn frame(chart: &Arc<Chart>, rank: usize, i: usize) -> Section {
        assert!(i < rank);
        let comps = (0..rank)
            .map(|k| ScalarField::constant(chart, if k == i { 1.0 } else { 0.0 }))
            .collect();
        Section::new(chart.clone(), comps)
    }

    pub fn chart(&self) -> &Arc<Chart> {
        &self.chart
    }

    pub fn rank(&self) -> usize {
        self.comps.len()
    }

    pub fn comp(&self, k: usize) -> &ScalarField {
        &self.comps[k]
    }

    pub fn comps(&self) -> &[ScalarField] {
        &self.comps
    }

    pub fn eval(&self, q: &[f64]) -> Result<Vec<f64>> {
        self.comps.iter().map(|c| c.eval(q)).collect()
    }

    pub fn add(&self, o: &Section) -> Section {
        assert_eq!(self.rank(), o.rank());
        let comps = self.comps.iter().zip(&o.comps).map(|(a, b)| a.add(b)).collect();
        Section::new(self.chart.clone(), comps)
    }

    pub fn sub(&self, o: &Section) -> Section {
        assert_eq!(self.rank(), o.rank());
        let comps = self.comps.iter().zip(&o.comps).map(|(a, b)| a.sub(b)).collect();
        Section::new(self.chart.clone(), comps)
    }

    pub fn neg(&self) -> Section {
        Section::new(self.chart.clone(), self.comps.iter().map(|c| c.neg()).collect())
    }

    pub fn scale(&self, c: f64) -> Section {
        Section::new(self.chart.clone(), self.comps.iter().map(|f| f.scale(c)).collect())
    }

    pub fn scale_field(&self, f: &ScalarField) -> Section {
        Section::new(self.chart.clone(), self.comps.iter().map(|c| c.mul(f)).collect())
    }

    pub fn is_zero(&self) -> bool {
        self.comps.iter().all(|c| c.is_zero())
    }
}

/// First-order derivation of the section module: matrix part (column j is the
/// image of e_j) plus a symbol vector field acting on coefficients.
#[derive(Debug, Clone)]
pub struct Derivation {
    cols: Vec<Section>,
    symbol: VectorField,
}

impl Derivation {
    pub fn new(cols: Vec<Section>, symbol: VectorField) -> Derivation {
        assert!(!cols.is_empty());
        let rank = cols[0].rank();
        assert!(cols.iter().all(|c| c.rank() == rank), "ragged derivation matrix");
        assert_eq!(cols.len(), rank, "derivation matrix must be square");
        Derivation { cols, symbol }
    }

    pub fn rank(&self) -> usize {
        self.cols.len()
    }

    pub fn cols(&self) -> &[Section] {
        &self.cols
    }

    pub fn symbol(&self) -> &VectorField {
        &self.symbol
    }

    /// (D gamma)^k = sum_j c^j D_j^k + X(c^k).
    pub fn apply(&self, s: &Section) -> Section {
        assert_eq!(s.rank(), self.rank());
        let chart = s.chart().clone();
        let comps = (0..self.rank())
            .map(|k| {
                let mut acc = self.symbol.apply(s.comp(k));
                for (j, col) in self.cols.iter().enumerate() {
                    acc = acc.add(&s.comp(j).mul(col.comp(k)));
                }
                acc
            })
            .collect();
        Section::new(chart, comps)
    }
}

/// Structure functions Gamma_{ij}^k, theta_{im}, lambda_{mij}^l over a chart.
///
/// Index layout: gamma[i][j][k]; theta[i][m] (rho(e_i) = sum_m theta_{im} d_m);
/// lambda[m][i][j][l] with m the coordinate slot.
#[derive(Debug, Clone)]
pub struct LodayStructure {
    chart: Arc<Chart>,
    rank: usize,
    gamma: Vec<Vec<Vec<ScalarField>>>,
    theta: Vec<Vec<ScalarField>>,
    lambda: Vec<Vec<Vec<Vec<ScalarField>>>>,
}

impl LodayStructure {
    pub fn new(
        chart: Arc<Chart>,
        rank: usize,
        gamma: Vec<Vec<Vec<ScalarField>>>,
        theta: Vec<Vec<ScalarField>>,
        lambda: Vec<Vec<Vec<Vec<ScalarField>>>>,
    ) -> Result<LodayStructure> {
        let n = chart.dim();
        let shape_ok = gamma.len() == rank
            && gamma.iter().all(|g| g.len() == rank && g.iter().all(|r| r.len() == rank))
            && theta.len() == rank
            && theta.iter().all(|t| t.len() == n)
            && lambda.len() == n
            && lambda.iter().all(|lm| {
                lm.len() == rank
                    && lm
                        .iter()
                        .all(|li| li.len() == rank && li.iter().all(|lj| lj.len() == rank))
            });
        if !shape_ok {
            return Err(Error::ShapeMismatch(format!(
                "structure fields do not match rank {rank} over dim {n}"
            )));
        }
        let all_fields = gamma
            .iter()
            .flatten()
            .flatten()
            .chain(theta.iter().flatten())
            .chain(lambda.iter().flatten().flatten().flatten());
        for f in all_fields {
            if f.chart() != &chart {
                return Err(Error::ChartMismatch("structure field on a different chart".into()));
            }
        }
        Ok(LodayStructure { chart, rank, gamma, theta, lambda })
    }

    /// Construct from component closures; unmentioned zeros are cheap.
    pub fn build(
        chart: &Arc<Chart>,
        rank: usize,
        mut gamma: impl FnMut(usize, usize, usize) -> ScalarField,
        mut theta: impl FnMut(usize, usize) -> ScalarField,
        mut lambda: impl FnMut(usize, usize, usize, usize) -> ScalarField,
    ) -> Result<LodayStructure> {
        let n = chart.dim();
        let g = (0..rank)
            .map(|i| (0..rank).map(|j| (0..rank).map(|k| gamma(i, j, k)).collect()).collect())
            .collect();
        let t = (0..rank).map(|i| (0..n).map(|m| theta(i, m)).collect()).collect();
        let l = (0..n)
            .map(|m| {
                (0..rank)
                    .map(|i| {
                        (0..rank)
                            .map(|j| (0..rank).map(|k| lambda(m, i, j, k)).collect())
                            .collect()
                    })
                    .collect()
            })
            .collect();
        LodayStructure::new(chart.clone(), rank, g, t, l)
    }

    pub fn chart(&self) -> &Arc<Chart> {
        &self.chart
    }

    pub fn dim(&self) -> usize {
        self.chart.dim()
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn gamma(&self, i: usize, j: usize, k: usize) -> &ScalarField {
        &self.gamma[i][j][k]
    }

    pub fn theta(&self, i: usize, m: usize) -> &ScalarField {
        &self.theta[i][m]
    }

    pub fn lambda(&self, m: usize, i: usize, j: usize, l: usize) -> &ScalarField {
        &self.lambda[m][i][j][l]
    }

    pub fn frame(&self, i: usize) -> Section {
        Section::frame(&self.chart, self.rank, i)
    }

    /// Coarsest lattice spacing among all structure fields, if any uses one.
    pub fn max_grid_spacing(&self) -> Option<f64> {
        let mut best: Option<f64> = None;
        let mut take = |f: &ScalarField| {
            if let Some(h) = f.max_grid_spacing() {
                best = Some(best.map_or(h, |b: f64| b.max(h)));
            }
        };
        self.for_each_field(&mut take);
        best
    }

    pub fn for_each_field(&self, f: &mut impl FnMut(&ScalarField)) {
        for gi in &self.gamma {
            for gj in gi {
                for g in gj {
                    f(g);
                }
            }
        }
        for ti in &self.theta {
            for t in ti {
                f(t);
            }
        }
        for lm in &self.lambda {
            for li in lm {
                for lj in li {
                    for l in lj {
                        f(l);
                    }
                }
            }
        }
    }

    fn accept(&self, s: &Section) -> Result<()> {
        if s.chart() != &self.chart {
            return Err(Error::ChartMismatch("section chart differs from structure chart".into()));
        }
        if s.rank() != self.rank {
            return Err(Error::ShapeMismatch(format!(
                "section rank {} against structure rank {}",
                s.rank(),
                self.rank
            )));
        }
        Ok(())
    }

    /// rho(alpha)^m = sum_i a^i theta_{im}.
    pub fn anchor(&self, a: &Section) -> Result<VectorField> {
        self.accept(a)?;
        let n = self.dim();
        let comps = (0..n)
            .map(|m| {
                let mut acc = ScalarField::zero(&self.chart);
                for i in 0..self.rank {
                    if !self.theta[i][m].is_zero() && !a.comp(i).is_zero() {
                        acc = acc.add(&a.comp(i).mul(&self.theta[i][m]));
                    }
                }
                acc
            })
            .collect();
        Ok(VectorField::new(self.chart.clone(), comps))
    }

    /// lambda(xi ⊗ alpha ⊗ beta)^l = sum_{mij} xi_m a^i b^j lambda_{mij}^l.
    pub fn coanchor(&self, xi: &OneForm, a: &Section, b: &Section) -> Result<Section> {
        self.accept(a)?;
        self.accept(b)?;
        if xi.chart() != &self.chart {
            return Err(Error::ChartMismatch("one-form chart differs from structure chart".into()));
        }
        let comps = (0..self.rank)
            .map(|l| {
                let mut acc = ScalarField::zero(&self.chart);
                for (m, lam_m) in self.lambda.iter().enumerate() {
                    if xi.comp(m).is_zero() {
                        continue;
                    }
                    for (i, lam_mi) in lam_m.iter().enumerate() {
                        if a.comp(i).is_zero() {
                            continue;
                        }
                        for (j, lam_mij) in lam_mi.iter().enumerate() {
                            let lam = &lam_mij[l];
                            if lam.is_zero() || b.comp(j).is_zero() {
                                continue;
                            }
                            acc = acc.add(&xi.comp(m).mul(a.comp(i)).mul(b.comp(j)).mul(lam));
                        }
                    }
                }
                acc
            })
            .collect();
        Ok(Section::new(self.chart.clone(), comps))
    }

    /// Component expansion of the bracket:
    /// [a,b]^k = sum a^i b^j Gamma_{ij}^k + sum a^i theta_{im} d_m b^k
    ///         - sum b^j theta_{jm} d_m a^k + sum b^j (d_m a^i) lambda_{mij}^k.
    pub fn bracket(&self, a: &Section, b: &Section) -> Result<Section> {
        self.accept(a)?;
        self.accept(b)?;
        let n = self.dim();
        let r = self.rank;
        // cache coefficient partials used by the theta and lambda terms
        let da: Vec<Vec<ScalarField>> =
            (0..r).map(|i| (0..n).map(|m| a.comp(i).deriv(m)).collect()).collect();
        let comps = (0..r)
            .map(|k| {
                let mut acc = ScalarField::zero(&self.chart);
                for i in 0..r {
                    if a.comp(i).is_zero() {
                        continue;
                    }
                    for j in 0..r {
                        let g = &self.gamma[i][j][k];
                        if !g.is_zero() && !b.comp(j).is_zero() {
                            acc = acc.add(&a.comp(i).mul(b.comp(j)).mul(g));
                        }
                    }
                    for m in 0..n {
                        let th = &self.theta[i][m];
                        if !th.is_zero() {
                            let db = b.comp(k).deriv(m);
                            if !db.is_zero() {
                                acc = acc.add(&a.comp(i).mul(th).mul(&db));
                            }
                        }
                    }
                }
                for j in 0..r {
                    if b.comp(j).is_zero() {
                        continue;
                    }
                    for m in 0..n {
                        let th = &self.theta[j][m];
                        if !th.is_zero() && !da[k][m].is_zero() {
                            acc = acc.sub(&b.comp(j).mul(th).mul(&da[k][m]));
                        }
                    }
                    for m in 0..n {
                        for i in 0..r {
                            let lam = &self.lambda[m][i][j][k];
                            if !lam.is_zero() && !da[i][m].is_zero() {
                                acc = acc.add(&b.comp(j).mul(&da[i][m]).mul(lam));
                            }
                        }
                    }
                }
                acc
            })
            .collect();
        Ok(Section::new(self.chart.clone(), comps))
    }

    /// S(a,b) = [a,b] + [b,a].
    pub fn symmetrization(&self, a: &Section, b: &Section) -> Result<Section> {
        Ok(self.bracket(a, b)?.add(&self.bracket(b, a)?))
    }

    /// J(a,b,c) = [[a,b],c] + [b,[a,c]] - [a,[b,c]].
    pub fn jacobiator(&self, a: &Section, b: &Section, c: &Section) -> Result<Section> {
        let t1 = self.bracket(&self.bracket(a, b)?, c)?;
        let t2 = self.bracket(b, &self.bracket(a, c)?)?;
        let t3 = self.bracket(a, &self.bracket(b, c)?)?;
        Ok(t1.add(&t2).sub(&t3))
    }

    /// Derivation [sigma, .]: matrix column j = [sigma, e_j], symbol rho(sigma).
    pub fn section_derivation(&self, sigma: &Section) -> Result<Derivation> {
        let cols = (0..self.rank)
            .map(|j| self.bracket(sigma, &self.frame(j)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Derivation::new(cols, self.anchor(sigma)?))
    }

    /// D([a,b]) - [D(a),b] - [a,D(b)].
    pub fn lie_derivative_of_bracket(
        &self,
        d: &Derivation,
        a: &Section,
        b: &Section,
    ) -> Result<Section> {
        let t1 = d.apply(&self.bracket(a, b)?);
        let t2 = self.bracket(&d.apply(a), b)?;
        let t3 = self.bracket(a, &d.apply(b))?;
        Ok(t1.sub(&t2).sub(&t3))
    }

    /// Structure axioms at plan points. Entries: (jacobi) over all frame
    /// triples plus seeded polynomial triples; (a) anchor vs bracket; (b)
    /// co-anchor invariance on coordinate differentials; (c) the mixed
    /// bracket/symmetrization identity on coordinate functions; plus the
    /// two derived vanishing identities rho(S) = 0 and rho(lambda(..)) = 0.
    pub fn check_structure(&self, plan: &SamplePlan) -> Result<CheckReport> {
        if plan.chart() != &self.chart {
            return Err(Error::ChartMismatch("plan chart differs from structure chart".into()));
        }
        let tolerance = tol::check_tol(self.max_grid_spacing());
        let n = self.dim();
        let r = self.rank;
        let frames: Vec<Section> = (0..r).map(|i| self.frame(i)).collect();
        let mut report = CheckReport::default();

        let mut jac = ResidualMax::new("jacobi");
        let mut triples: Vec<(Section, Section, Section)> = Vec::new();
        for i in 0..r {
            for j in 0..r {
                for k in 0..r {
                    triples.push((frames[i].clone(), frames[j].clone(), frames[k].clone()));
                }
            }
        }
        let rand_sections = random_polynomial_sections(&self.chart, r, plan.seed(), 15);
        for t in rand_sections.chunks(3) {
            triples.push((t[0].clone(), t[1].clone(), t[2].clone()));
        }
        for (a, b, c) in &triples {
            let j = self.jacobiator(a, b, c)?;
            self.max_section(&j, plan, &mut jac)?;
        }
        report.push(jac.into_entry(tolerance));

        let mut ra = ResidualMax::new("a");
        for i in 0..r {
            for j in 0..r {
                let lhs = self.anchor(&self.bracket(&frames[i], &frames[j])?)?;
                let rhs = vf_lie_bracket(&self.anchor(&frames[i])?, &self.anchor(&frames[j])?);
                for q in plan.points() {
                    let l = lhs.eval(q)?;
                    let h = rhs.eval(q)?;
                    for m in 0..n {
                        ra.update((l[m] - h[m]).abs(), q);
                    }
                }
            }
        }
        report.push(ra.into_entry(tolerance));

        let mut rb = ResidualMax::new("b");
        for m in 0..n {
            let xi = OneForm::coordinate_differential(&self.chart, m);
            for i in 0..r {
                let rho_a = self.anchor(&frames[i])?;
                let lxi = lie_derivative_one_form(&rho_a, &xi);
                for j in 0..r {
                    let br_ab = self.bracket(&frames[i], &frames[j])?;
                    for k in 0..r {
                        let lhs = self.bracket(&frames[i], &self.coanchor(&xi, &frames[j], &frames[k])?)?;
                        let rhs = self
                            .coanchor(&lxi, &frames[j], &frames[k])?
                            .add(&self.coanchor(&xi, &br_ab, &frames[k])?)
                            .add(&self.coanchor(&xi, &frames[j], &self.bracket(&frames[i], &frames[k])?)?);
                        self.max_section(&lhs.sub(&rhs), plan, &mut rb)?;
                    }
                }
            }
        }
        report.push(rb.into_entry(tolerance));

        let mut rc = ResidualMax::new("c");
        let mut rs = ResidualMax::new("rho-symm");
        for m in 0..n {
            let f = ScalarField::coordinate(&self.chart, m);
            let df = f.differential();
            for i in 0..r {
                for j in 0..r {
                    let s = self.symmetrization(&frames[i], &frames[j])?;
                    if m == 0 {
                        let rho_s = self.anchor(&s)?;
                        for q in plan.points() {
                            for v in rho_s.eval(q)? {
                                rs.update(v.abs(), q);
                            }
                        }
                    }
                    for k in 0..r {
                        let lhs = self.bracket(&self.coanchor(&df, &frames[i], &frames[j])?, &frames[k])?;
                        let rho_k_f = self.anchor(&frames[k])?.apply(&f);
                        let rhs = s.scale_field(&rho_k_f).sub(&self.coanchor(&df, &s, &frames[k])?);
                        self.max_section(&lhs.sub(&rhs), plan, &mut rc)?;
                    }
                }
            }
        }
        report.push(rc.into_entry(tolerance));
        report.push(rs.into_entry(tolerance));

        let mut rl = ResidualMax::new("rho-coanchor");
        for m in 0..n {
            let xi = OneForm::coordinate_differential(&self.chart, m);
            for i in 0..r {
                for j in 0..r {
                    let v = self.anchor(&self.coanchor(&xi, &frames[i], &frames[j])?)?;
                    for q in plan.points() {
                        for c in v.eval(q)? {
                            rl.update(c.abs(), q);
                        }
                    }
                }
            }
        }
        report.push(rl.into_entry(tolerance));
        Ok(report)
    }

    fn max_section(&self, s: &Section, plan: &SamplePlan, acc: &mut ResidualMax) -> Result<()> {
        for q in plan.points() {
            for v in s.eval(q)? {
                acc.update(v.abs(), q);
            }
        }
        Ok(())
    }
}

/// Deterministic degree-<=2 polynomial sections with coefficients in [-1, 1].
pub fn random_polynomial_sections(
    chart: &Arc<Chart>,
    rank: usize,
    seed: u64,
    count: usize,
) -> Vec<Section> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5ec7_10a5);
    (0..count).map(|_| random_polynomial_section(chart, rank, &mut rng)).collect()
}

pub fn random_polynomial_section(
    chart: &Arc<Chart>,
    rank: usize,
    rng: &mut impl Rng,
) -> Section {
    let comps = (0..rank).map(|_| random_polynomial_field(chart, rng)).collect();
    Section::new(chart.clone(), comps)
}

pub fn random_polynomial_field(chart: &Arc<Chart>, rng: &mut impl Rng) -> ScalarField {
    let n = chart.dim();
    let mut f = ScalarField::constant(chart, rng.random_range(-1.0..1.0));
    for i in 0..n {
        let xi = ScalarField::coordinate(chart, i);
        f = f.add(&xi.scale(rng.random_range(-1.0..1.0)));
        for j in i..n {
            let xj = ScalarField::coordinate(chart, j);
            f = f.add(&xi.mul(&xj).scale(rng.random_range(-1.0..1.0)));
        }
    }
    f
}
