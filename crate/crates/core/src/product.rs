//! Direct products and direct decompositions on product charts, plus the
//! decomposition classifier.
//!
//! A product structure is determined by the two factors and the four free
//! mixed co-anchor blocks; everything else (block brackets, block anchor,
//! factor co-anchors, the remaining mixed components) is forced. The metric
//! product of two pairing-carrying structures forces two of the free blocks,
//! which is what makes the product of standard structures standard again.

use crate::chart::Chart;
use crate::courant::CourantStructure;
use crate::error::Error;
use crate::field::{OneForm, ScalarField};
use crate::loday::{LodayStructure, Section};
use crate::plan::SamplePlan;
use crate::report::{CheckReport, ResidualMax};
use crate::tol;
use crate::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::sync::Arc;

/// Random degree-two polynomial in the listed coordinates only (a constant
/// when the list is empty).
fn random_factor_polynomial(
    chart: &Arc<Chart>,
    coords: &[usize],
    rng: &mut impl Rng,
) -> ScalarField {
    let mut f = ScalarField::constant(chart, rng.random_range(-1.0..1.0));
    for (a, &i) in coords.iter().enumerate() {
        let xi = ScalarField::coordinate(chart, i);
        f = f.add(&xi.scale(rng.random_range(-1.0..1.0)));
        for &j in &coords[a..] {
            let xj = ScalarField::coordinate(chart, j);
            f = f.add(&xi.mul(&xj).scale(rng.random_range(-1.0..1.0)));
        }
    }
    f
}

/// Two factor charts and their assembled box; coordinate names must be
/// disjoint so the assembly is a chart.
pub struct ProductChart {
    first: Arc<Chart>,
    second: Arc<Chart>,
    chart: Arc<Chart>,
}

impl ProductChart {
    pub fn new(first: &Arc<Chart>, second: &Arc<Chart>) -> Result<ProductChart> {
        for name in second.names() {
            if first.names().contains(name) {
                return Err(Error::LabelCollision(format!(
                    "coordinate `{name}` appears in both factors"
                )));
            }
        }
        let names: Vec<String> =
            first.names().iter().chain(second.names().iter()).cloned().collect();
        let bounds = first.bounds().iter().chain(second.bounds().iter()).copied().collect();
        Ok(ProductChart {
            first: first.clone(),
            second: second.clone(),
            chart: Chart::new(names, bounds)?,
        })
    }

    pub fn chart(&self) -> &Arc<Chart> {
        &self.chart
    }

    pub fn first(&self) -> &Arc<Chart> {
        &self.first
    }

    pub fn second(&self) -> &Arc<Chart> {
        &self.second
    }

    pub fn embed_first(&self, f: &ScalarField) -> Result<ScalarField> {
        let map: Vec<usize> = (0..self.first.dim()).collect();
        f.remap_to_chart(&self.chart, &map)
    }

    pub fn embed_second(&self, f: &ScalarField) -> Result<ScalarField> {
        let n1 = self.first.dim();
        let map: Vec<usize> = (n1..n1 + self.second.dim()).collect();
        f.remap_to_chart(&self.chart, &map)
    }
}

/// The four free mixed co-anchor blocks of a direct decomposition. Domain
/// indices are factor-local (co-vector slot m, then the two argument slots);
/// the target index l runs over the full product frame. All entries live on
/// the product chart.
pub struct MixedCoanchor {
    /// first-factor co-vector, second-factor arg, first-factor arg
    pub l1: Vec<Vec<Vec<Vec<ScalarField>>>>,
    /// first-factor co-vector, both args in the second factor
    pub l2: Vec<Vec<Vec<Vec<ScalarField>>>>,
    /// second-factor co-vector, both args in the first factor
    pub l3: Vec<Vec<Vec<Vec<ScalarField>>>>,
    /// second-factor co-vector, first-factor arg, second-factor arg
    pub l4: Vec<Vec<Vec<Vec<ScalarField>>>>,
}

impl MixedCoanchor {
    pub fn zero(pc: &ProductChart, r1: usize, r2: usize) -> MixedCoanchor {
        let z = ScalarField::zero(pc.chart());
        let block = |a: usize, b: usize, c: usize, r: usize| {
            vec![vec![vec![vec![z.clone(); r]; c]; b]; a]
        };
        let (n1, n2) = (pc.first().dim(), pc.second().dim());
        let r = r1 + r2;
        MixedCoanchor {
            l1: block(n1, r2, r1, r),
            l2: block(n1, r2, r2, r),
            l3: block(n2, r1, r1, r),
            l4: block(n2, r1, r2, r),
        }
    }

    fn validate(&self, pc: &ProductChart, r1: usize, r2: usize) -> Result<()> {
        let (n1, n2) = (pc.first().dim(), pc.second().dim());
        let r = r1 + r2;
        let shape = |t: &Vec<Vec<Vec<Vec<ScalarField>>>>, a: usize, b: usize, c: usize| {
            t.len() == a
                && t.iter().all(|x| {
                    x.len() == b
                        && x.iter().all(|y| y.len() == c && y.iter().all(|z| z.len() == r))
                })
        };
        if !(shape(&self.l1, n1, r2, r1)
            && shape(&self.l2, n1, r2, r2)
            && shape(&self.l3, n2, r1, r1)
            && shape(&self.l4, n2, r1, r2))
        {
            return Err(Error::ShapeMismatch(
                "mixed co-anchor blocks do not match factor shapes".into(),
            ));
        }
        for t in [&self.l1, &self.l2, &self.l3, &self.l4] {
            for f in t.iter().flatten().flatten().flatten() {
                if f.chart() != pc.chart() {
                    return Err(Error::ChartMismatch(
                        "mixed co-anchor entry on a different chart".into(),
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Product structure with all four free mixed blocks zero.
pub fn direct_product(a1: &LodayStructure, a2: &LodayStructure) -> Result<LodayStructure> {
    let pc = ProductChart::new(a1.chart(), a2.chart())?;
    let lam = MixedCoanchor::zero(&pc, a1.rank(), a2.rank());
    direct_decomposition(a1, a2, &lam)
}

/// Product structure with caller-chosen free mixed co-anchor blocks. With
/// zero blocks this is exactly `direct_product`.
pub fn direct_decomposition(
    a1: &LodayStructure,
    a2: &LodayStructure,
    lam: &MixedCoanchor,
) -> Result<LodayStructure> {
    let pc = ProductChart::new(a1.chart(), a2.chart())?;
    let (r1, r2) = (a1.rank(), a2.rank());
    lam.validate(&pc, r1, r2)?;
    let (n1, n2) = (a1.dim(), a2.dim());
    let (r, n) = (r1 + r2, n1 + n2);
    let chart = pc.chart().clone();
    let zero = ScalarField::zero(&chart);

    let mut gamma = vec![vec![vec![zero.clone(); r]; r]; r];
    let mut theta = vec![vec![zero.clone(); n]; r];
    let mut lambda = vec![vec![vec![vec![zero.clone(); r]; r]; r]; n];

    for i in 0..r1 {
        for j in 0..r1 {
            for k in 0..r1 {
                if !a1.gamma(i, j, k).is_zero() {
                    gamma[i][j][k] = pc.embed_first(a1.gamma(i, j, k))?;
                }
            }
        }
        for m in 0..n1 {
            if !a1.theta(i, m).is_zero() {
                theta[i][m] = pc.embed_first(a1.theta(i, m))?;
            }
        }
    }
    for i in 0..r2 {
        for j in 0..r2 {
            for k in 0..r2 {
                if !a2.gamma(i, j, k).is_zero() {
                    gamma[r1 + i][r1 + j][r1 + k] = pc.embed_second(a2.gamma(i, j, k))?;
                }
            }
        }
        for m in 0..n2 {
            if !a2.theta(i, m).is_zero() {
                theta[r1 + i][n1 + m] = pc.embed_second(a2.theta(i, m))?;
            }
        }
    }
    for m in 0..n1 {
        for i in 0..r1 {
            for j in 0..r1 {
                for l in 0..r1 {
                    if !a1.lambda(m, i, j, l).is_zero() {
                        lambda[m][i][j][l] = pc.embed_first(a1.lambda(m, i, j, l))?;
                    }
                }
            }
        }
        for i in 0..r2 {
            for j in 0..r1 {
                for l in 0..r {
                    lambda[m][r1 + i][j][l] = lam.l1[m][i][j][l].clone();
                }
            }
            for j in 0..r2 {
                for l in 0..r {
                    lambda[m][r1 + i][r1 + j][l] = lam.l2[m][i][j][l].clone();
                }
            }
        }
    }
    for m in 0..n2 {
        for i in 0..r2 {
            for j in 0..r2 {
                for l in 0..r2 {
                    if !a2.lambda(m, i, j, l).is_zero() {
                        lambda[n1 + m][r1 + i][r1 + j][r1 + l] =
                            pc.embed_second(a2.lambda(m, i, j, l))?;
                    }
                }
            }
        }
        for i in 0..r1 {
            for j in 0..r1 {
                for l in 0..r {
                    lambda[n1 + m][i][j][l] = lam.l3[m][i][j][l].clone();
                }
            }
            for j in 0..r2 {
                for l in 0..r {
                    lambda[n1 + m][i][r1 + j][l] = lam.l4[m][i][j][l].clone();
                }
            }
        }
    }
    LodayStructure::new(chart, r, gamma, theta, lambda)
}

/// Metric product. The pairing forces the two diagonal mixed co-anchor
/// blocks: lambda(xi_1, b_2, c_2) = <b_2, c_2> rho_1^* xi_1 and symmetrically
/// for the second factor; the off-diagonal blocks vanish with the block
/// metric. This is the product under which the pairing axioms are inherited.
pub fn direct_product_courant(
    c1: &CourantStructure,
    c2: &CourantStructure,
) -> Result<CourantStructure> {
    let pc = ProductChart::new(c1.chart(), c2.chart())?;
    let (r1, r2) = (c1.rank(), c2.rank());
    let (n1, n2) = (c1.chart().dim(), c2.chart().dim());
    let r = r1 + r2;
    let mut lam = MixedCoanchor::zero(&pc, r1, r2);

    // rho_1^* dx_m embedded in the product frame (components beyond r1 are 0)
    for m in 0..n1 {
        let rs = c1.rho_star(&OneForm::coordinate_differential(c1.chart(), m))?;
        for i in 0..r2 {
            for j in 0..r2 {
                let g = c2.metric(i, j);
                if g.is_zero() {
                    continue;
                }
                let ge = pc.embed_second(g)?;
                for l in 0..r1 {
                    if !rs.comp(l).is_zero() {
                        lam.l2[m][i][j][l] = ge.mul(&pc.embed_first(rs.comp(l))?);
                    }
                }
            }
        }
    }
    for m in 0..n2 {
        let rs = c2.rho_star(&OneForm::coordinate_differential(c2.chart(), m))?;
        for i in 0..r1 {
            for j in 0..r1 {
                let g = c1.metric(i, j);
                if g.is_zero() {
                    continue;
                }
                let ge = pc.embed_first(g)?;
                for l in 0..r2 {
                    if !rs.comp(l).is_zero() {
                        lam.l3[m][i][j][r1 + l] = ge.mul(&pc.embed_second(rs.comp(l))?);
                    }
                }
            }
        }
    }
    let base = direct_decomposition(c1.base(), c2.base(), &lam)?;
    let zero = ScalarField::zero(pc.chart());
    let mut metric = vec![vec![zero; r]; r];
    for i in 0..r1 {
        for j in 0..r1 {
            if !c1.metric(i, j).is_zero() {
                metric[i][j] = pc.embed_first(c1.metric(i, j))?;
            }
        }
    }
    for i in 0..r2 {
        for j in 0..r2 {
            if !c2.metric(i, j).is_zero() {
                metric[r1 + i][r1 + j] = pc.embed_second(c2.metric(i, j))?;
            }
        }
    }
    CourantStructure::new(base, metric)
}

/// Partition of the frame indices into two candidate factors, together with
/// the base-coordinate partition that says which coordinates each factor's
/// sections may depend on. A factor over a zero-dimensional base gets an
/// empty coordinate list (its sections have constant coefficients).
#[derive(Debug, Clone)]
pub struct FrameSplit {
    first: Vec<usize>,
    second: Vec<usize>,
    first_coords: Vec<usize>,
    second_coords: Vec<usize>,
}

fn check_partition(a: &[usize], b: &[usize], total: usize, what: &str) -> Result<()> {
    let mut seen = vec![false; total];
    for &i in a.iter().chain(b.iter()) {
        if i >= total {
            return Err(Error::InvalidInput(format!("{what} index {i} out of range {total}")));
        }
        if seen[i] {
            return Err(Error::InvalidInput(format!("{what} index {i} listed twice")));
        }
        seen[i] = true;
    }
    if seen.iter().any(|s| !s) {
        return Err(Error::InvalidInput(format!("split does not cover every {what} index")));
    }
    Ok(())
}

impl FrameSplit {
    pub fn new(
        first: Vec<usize>,
        second: Vec<usize>,
        rank: usize,
        first_coords: Vec<usize>,
        second_coords: Vec<usize>,
        dim: usize,
    ) -> Result<FrameSplit> {
        check_partition(&first, &second, rank, "frame")?;
        check_partition(&first_coords, &second_coords, dim, "coordinate")?;
        if first.is_empty() || second.is_empty() {
            return Err(Error::InvalidInput("both factors need at least one frame".into()));
        }
        Ok(FrameSplit { first, second, first_coords, second_coords })
    }

    /// Frames 0..k vs k..rank, coordinates 0..kc vs kc..dim.
    pub fn leading(k: usize, rank: usize, kc: usize, dim: usize) -> Result<FrameSplit> {
        FrameSplit::new(
            (0..k).collect(),
            (k..rank).collect(),
            rank,
            (0..kc).collect(),
            (kc..dim).collect(),
            dim,
        )
    }

    pub fn first(&self) -> &[usize] {
        &self.first
    }

    pub fn second(&self) -> &[usize] {
        &self.second
    }

    pub fn first_coords(&self) -> &[usize] {
        &self.first_coords
    }

    pub fn second_coords(&self) -> &[usize] {
        &self.second_coords
    }
}

pub const CLASSIFY_LABELS: &[&str] =
    &["direct", "semi-direct", "matching", "semi-matching-1", "semi-matching-2", "none"];

/// Decide the strongest decomposition label supported by the split. Tests
/// the module conditions with the factor frames and seeded polynomial
/// sections supported on each factor, coefficients drawn from the factor's
/// own coordinates. Membership in a factor requires the complementary frame
/// components to vanish and the in-factor components to be independent of
/// the other factor's coordinates. Residual entries are cumulative, so
/// stronger labels never report smaller residuals than the weaker ones they
/// imply.
pub fn classify_decomposition(
    a: &LodayStructure,
    split: &FrameSplit,
    plan: &SamplePlan,
) -> Result<(&'static str, CheckReport)> {
    if split.first.len() + split.second.len() != a.rank() {
        return Err(Error::ShapeMismatch(format!(
            "split covers {} frames, structure has rank {}",
            split.first.len() + split.second.len(),
            a.rank()
        )));
    }
    if split.first_coords.len() + split.second_coords.len() != a.dim() {
        return Err(Error::ShapeMismatch(format!(
            "split covers {} coordinates, chart has dim {}",
            split.first_coords.len() + split.second_coords.len(),
            a.dim()
        )));
    }
    let family = |idx: &[usize], coords: &[usize], salt: u64| -> Vec<Section> {
        let mut rng = ChaCha8Rng::seed_from_u64(plan.seed() ^ salt);
        let mut out: Vec<Section> = idx.iter().map(|&i| a.frame(i)).collect();
        for _ in 0..3 {
            let comps = (0..a.rank())
                .map(|k| {
                    if idx.contains(&k) {
                        random_factor_polynomial(a.chart(), coords, &mut rng)
                    } else {
                        ScalarField::zero(a.chart())
                    }
                })
                .collect();
            out.push(Section::new(a.chart().clone(), comps));
        }
        out
    };
    let f1 = family(&split.first, &split.first_coords, 0xdec0);
    let f2 = family(&split.second, &split.second_coords, 0xdec1);

    let mut outside1 = ResidualMax::new("semi-matching-1");
    let mut outside2 = ResidualMax::new("semi-matching-2");
    let mut mixed12 = ResidualMax::new("mixed-12");
    let mut mixed21 = ResidualMax::new("mixed-21");

    let restrict = |fam: &[Section],
                        own_idx: &[usize],
                        other_idx: &[usize],
                        other_coords: &[usize],
                        acc: &mut ResidualMax|
     -> Result<()> {
        for s in fam {
            for t in fam {
                let br = a.bracket(s, t)?;
                let mut foreign = Vec::new();
                for &k in own_idx {
                    for &m in other_coords {
                        foreign.push(br.comp(k).deriv(m));
                    }
                }
                for q in plan.points() {
                    let v = br.eval(q)?;
                    for &k in other_idx {
                        acc.update(v[k].abs(), q);
                    }
                    for d in &foreign {
                        acc.update(d.eval(q)?.abs(), q);
                    }
                }
            }
        }
        Ok(())
    };
    restrict(&f1, &split.first, &split.second, &split.second_coords, &mut outside1)?;
    restrict(&f2, &split.second, &split.first, &split.first_coords, &mut outside2)?;

    let mixed = |fa: &[Section], fb: &[Section], acc: &mut ResidualMax| -> Result<()> {
        for s in fa {
            for t in fb {
                let br = a.bracket(s, t)?;
                for q in plan.points() {
                    for v in br.eval(q)? {
                        acc.update(v.abs(), q);
                    }
                }
            }
        }
        Ok(())
    };
    mixed(&f1, &f2, &mut mixed12)?;
    mixed(&f2, &f1, &mut mixed21)?;

    let tolerance = match a.max_grid_spacing() {
        Some(h) => tol::CLASSIFY_TOL.max(tol::grid_tol(h)),
        None => tol::CLASSIFY_TOL,
    };

    let mut report = CheckReport::default();
    let sm1 = outside1.max();
    let sm2 = outside2.max();
    let m12 = mixed12.max();
    let m21 = mixed21.max();
    let matching = sm1.max(sm2);
    let semi_direct = matching.max(m12);
    let direct = semi_direct.max(m21);
    report.push(outside1.into_entry(tolerance));
    report.push(outside2.into_entry(tolerance));
    let mut cumulative = ResidualMax::new("matching");
    cumulative.update(matching, &[]);
    report.push(cumulative.into_entry(tolerance));
    let mut cumulative = ResidualMax::new("semi-direct");
    cumulative.update(semi_direct, &[]);
    report.push(cumulative.into_entry(tolerance));
    let mut cumulative = ResidualMax::new("direct");
    cumulative.update(direct, &[]);
    report.push(cumulative.into_entry(tolerance));

    let label = if direct <= tolerance {
        "direct"
    } else if semi_direct <= tolerance {
        "semi-direct"
    } else if matching <= tolerance {
        "matching"
    } else if sm1 <= tolerance {
        "semi-matching-1"
    } else if sm2 <= tolerance {
        "semi-matching-2"
    } else {
        "none"
    };
    Ok((label, report))
}

/// Largest pointwise deviation between the structure functions of `a` and
/// `b`, with `perm` sending a-frame indices to b-frame indices. Charts must
/// share the box (names may differ); coordinates are compared positionally.
pub fn max_structure_deviation(
    a: &LodayStructure,
    b: &LodayStructure,
    perm: &[usize],
    plan: &SamplePlan,
) -> Result<f64> {
    if a.rank() != b.rank() || perm.len() != a.rank() || a.dim() != b.dim() {
        return Err(Error::ShapeMismatch("structures of different shape".into()));
    }
    if a.chart().bounds() != b.chart().bounds() {
        return Err(Error::ChartMismatch("structure charts cover different boxes".into()));
    }
    let r = a.rank();
    let n = a.dim();
    let mut worst = 0.0f64;
    let mut cmp = |x: &ScalarField, y: &ScalarField| -> Result<()> {
        if x.is_zero() && y.is_zero() {
            return Ok(());
        }
        for q in plan.points() {
            let d = (x.eval(q)? - y.eval(q)?).abs();
            if d > worst {
                worst = d;
            }
        }
        Ok(())
    };
    for i in 0..r {
        for j in 0..r {
            for k in 0..r {
                cmp(a.gamma(i, j, k), b.gamma(perm[i], perm[j], perm[k]))?;
            }
        }
        for m in 0..n {
            cmp(a.theta(i, m), b.theta(perm[i], m))?;
        }
    }
    for m in 0..n {
        for i in 0..r {
            for j in 0..r {
                for l in 0..r {
                    cmp(a.lambda(m, i, j, l), b.lambda(m, perm[i], perm[j], perm[l]))?;
                }
            }
        }
    }
    Ok(worst)
}

/// `max_structure_deviation` plus the metric block.
pub fn max_courant_deviation(
    a: &CourantStructure,
    b: &CourantStructure,
    perm: &[usize],
    plan: &SamplePlan,
) -> Result<f64> {
    let mut worst = max_structure_deviation(a.base(), b.base(), perm, plan)?;
    for i in 0..a.rank() {
        for j in 0..a.rank() {
            let (x, y) = (a.metric(i, j), b.metric(perm[i], perm[j]));
            if x.is_zero() && y.is_zero() {
                continue;
            }
            for q in plan.points() {
                let d = (x.eval(q)? - y.eval(q)?).abs();
                if d > worst {
                    worst = d;
                }
            }
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::zoo;

    fn abelian(names: &[&str]) -> LodayStructure {
        let chart = Chart::new(names.to_vec(), vec![(-1.0, 1.0); names.len()]).unwrap();
        LodayStructure::build(
            &chart,
            names.len(),
            |_, _, _| ScalarField::zero(&chart),
            |_, _| ScalarField::zero(&chart),
            |_, _, _, _| ScalarField::zero(&chart),
        )
        .unwrap()
    }

    fn so3_cotangent(names: &[&str; 3]) -> LodayStructure {
        let chart = Chart::new(names.to_vec(), vec![(-1.0, 1.0); 3]).unwrap();
        let mut pi = vec![vec![ScalarField::zero(&chart); 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                for k in 0..3 {
                    let eps = zoo::levi_civita(i, j, k);
                    if eps != 0.0 {
                        pi[i][j] =
                            pi[i][j].add(&ScalarField::coordinate(&chart, k).scale(eps));
                    }
                }
            }
        }
        zoo::poisson_cotangent(&pi).unwrap()
    }

    #[test]
    fn label_collision_rejected() {
        let a = abelian(&["x1", "x2"]);
        let b = abelian(&["x2"]);
        assert!(matches!(direct_product(&a, &b), Err(Error::LabelCollision(_))));
    }

    #[test]
    fn abelian_product_is_abelian() {
        let a = abelian(&["u1"]);
        let b = abelian(&["v1", "v2"]);
        let p = direct_product(&a, &b).unwrap();
        assert_eq!(p.rank(), 3);
        assert_eq!(p.dim(), 3);
        for i in 0..3 {
            for j in 0..3 {
                for k in 0..3 {
                    assert!(p.gamma(i, j, k).is_zero());
                }
            }
        }
    }

    #[test]
    fn product_of_brackets_passes_closure() {
        let a = so3_cotangent(&["p1", "p2", "p3"]);
        let (c, g0) = zoo::su2_data();
        let chart = Chart::new(vec!["q1", "q2"], vec![(-1.0, 1.0); 2]).unwrap();
        let f = ScalarField::parse(&chart, "1 + q1").unwrap();
        let b = zoo::quadratic_lie_bundle(&c, &g0, &f).unwrap();
        let p = direct_product(&a, b.base()).unwrap();
        let plan = SamplePlan::new(p.chart(), 7, 12);
        let rep = p.check_structure(&plan).unwrap();
        assert!(rep.passed(), "{rep:?}");
        assert!(rep.residual("jacobi").unwrap() <= 1e-9);
    }

    #[test]
    fn standard_product_is_standard() {
        let c1 = Chart::new(vec!["x1"], vec![(-1.0, 1.0)]).unwrap();
        let c2 = Chart::new(vec!["x2"], vec![(-1.0, 1.0)]).unwrap();
        let s1 = zoo::standard_courant_on(&c1).unwrap();
        let s2 = zoo::standard_courant_on(&c2).unwrap();
        let p = direct_product_courant(&s1, &s2).unwrap();
        let s = zoo::standard_courant(2).unwrap();
        // product frame order (d1, dx1, d2, dx2) -> standard (d1, d2, dx1, dx2)
        let perm = [0, 2, 1, 3];
        let plan = SamplePlan::new(p.chart(), 7, 64);
        let dev = max_courant_deviation(&p, &s, &perm, &plan).unwrap();
        assert!(dev <= 1e-12, "deviation {dev}");

        let repo = p.check_courant(&SamplePlan::new(p.chart(), 7, 16)).unwrap();
        assert!(repo.passed(), "{repo:?}");
    }

    #[test]
    fn zero_mixed_blocks_reproduce_direct_product() {
        let a = so3_cotangent(&["p1", "p2", "p3"]);
        let b = abelian(&["q1"]);
        let pc = ProductChart::new(a.chart(), b.chart()).unwrap();
        let lam = MixedCoanchor::zero(&pc, a.rank(), b.rank());
        let p = direct_product(&a, &b).unwrap();
        let d = direct_decomposition(&a, &b, &lam).unwrap();
        let plan = SamplePlan::new(p.chart(), 3, 8);
        let dev = max_structure_deviation(&p, &d, &[0, 1, 2, 3], &plan).unwrap();
        assert_eq!(dev, 0.0);
    }

    #[test]
    fn nonzero_mixed_blocks_change_only_their_slots() {
        let a = abelian(&["p1"]);
        let b = abelian(&["q1"]);
        let pc = ProductChart::new(a.chart(), b.chart()).unwrap();
        let mut lam = MixedCoanchor::zero(&pc, 1, 1);
        let one = ScalarField::constant(pc.chart(), 1.0);
        lam.l1[0][0][0][0] = one.clone(); // (m=p1, i=q-frame, j=p-frame)
        lam.l4[0][0][0][1] = one.clone(); // (m=q1, i=p-frame, j=q-frame)
        let d = direct_decomposition(&a, &b, &lam).unwrap();
        let p = direct_product(&a, &b).unwrap();
        let mut diffs = Vec::new();
        for m in 0..2 {
            for i in 0..2 {
                for j in 0..2 {
                    for l in 0..2 {
                        let x = d.lambda(m, i, j, l);
                        let y = p.lambda(m, i, j, l);
                        if !(x.is_zero() && y.is_zero()) {
                            diffs.push((m, i, j, l));
                        }
                    }
                }
            }
        }
        assert_eq!(diffs, vec![(0, 1, 0, 0), (1, 0, 1, 1)]);
        // the tensoriality identity holds for any choice of mixed blocks
        let plan = SamplePlan::new(d.chart(), 11, 10);
        let rep = d.check_structure(&plan).unwrap();
        assert!(rep.residual("c").unwrap() <= 1e-9, "{rep:?}");
        assert!(rep.residual("b").unwrap() <= 1e-9, "{rep:?}");
    }

    #[test]
    fn classifier_grades_the_product_as_direct() {
        let a = so3_cotangent(&["p1", "p2", "p3"]);
        let b = abelian(&["q1"]);
        let p = direct_product(&a, &b).unwrap();
        let split = FrameSplit::leading(3, 4, 3, 4).unwrap();
        let plan = SamplePlan::new(p.chart(), 7, 12);
        let (label, rep) = classify_decomposition(&p, &split, &plan).unwrap();
        assert_eq!(label, "direct");
        assert!(rep.residual("direct").unwrap() <= 1e-9, "{rep:?}");
    }

    #[test]
    fn tangent_cotangent_split_is_matching_only() {
        // [f d1, g dx1] picks up a dx2-component g*d2(f), so the split into
        // vector and covector halves is a matching but not semi-direct
        let s = zoo::standard_courant(2).unwrap();
        let split = FrameSplit::leading(2, 4, 2, 2).unwrap();
        let plan = SamplePlan::new(s.chart(), 7, 12);
        let (label, rep) = classify_decomposition(s.base(), &split, &plan).unwrap();
        assert_eq!(label, "matching");
        assert!(rep.residual("matching").unwrap() <= 1e-12);
        assert!(rep.residual("semi-direct").unwrap() > 1e-3, "{rep:?}");
    }

    #[test]
    fn classifier_residuals_are_monotone() {
        let s = zoo::standard_courant(2).unwrap();
        let split = FrameSplit::leading(2, 4, 2, 2).unwrap();
        let plan = SamplePlan::new(s.chart(), 7, 10);
        let (_, rep) = classify_decomposition(s.base(), &split, &plan).unwrap();
        let r = |n: &str| rep.residual(n).unwrap();
        assert!(r("direct") >= r("semi-direct"));
        assert!(r("semi-direct") >= r("matching"));
        assert!(r("matching") >= r("semi-matching-1").max(r("semi-matching-2")));
    }

    #[test]
    fn product_is_associative_up_to_reindexing() {
        let a = so3_cotangent(&["p1", "p2", "p3"]);
        let (c, g0) = zoo::su2_data();
        let chart = Chart::new(vec!["q1", "q2"], vec![(-1.0, 1.0); 2]).unwrap();
        let f = ScalarField::parse(&chart, "1 + q1*q2").unwrap();
        let b = zoo::quadratic_lie_bundle(&c, &g0, &f).unwrap();
        let b = b.base().clone();
        let d = abelian(&["s1"]);

        let left = direct_product(&direct_product(&a, &b).unwrap(), &d).unwrap();
        let right = direct_product(&a, &direct_product(&b, &d).unwrap()).unwrap();
        let perm: Vec<usize> = (0..left.rank()).collect();
        let plan = SamplePlan::new(left.chart(), 7, 10);
        let dev = max_structure_deviation(&left, &right, &perm, &plan).unwrap();
        assert!(dev <= 1e-12, "deviation {dev}");
    }
}
