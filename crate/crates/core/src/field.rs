//! Scalar fields on a chart, plus vector fields, one-forms and three-forms.
//!
//! A field is an expression DAG whose leaves are constants, coordinates or
//! grid tables. Expression partials come from forward-mode duals and are
//! exact to rounding; grid partials use the fourth-order stencil. Derivative
//! nodes over mixed subtrees pick the route per subtree: finite differences
//! whenever a grid leaf spans the derivative axis, nested duals otherwise.

use crate::chart::Chart;
use crate::error::Error;
use crate::expr::{self, smart, Expr};
use crate::grid::{fd_weights, stencil_nodes, GridAxis, GridTable};
use crate::plan::SamplePlan;
use crate::report::{CheckReport, ResidualMax};
use crate::scalar::{Dual, Scalar};
use crate::tol::EPS_GUARD;
use crate::Result;
use std::collections::BTreeMap;
use std::sync::Arc;

#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    chart: Arc<Chart>,
    repr: Arc<Expr>,
}

impl ScalarField {
    pub fn new(chart: Arc<Chart>, repr: Expr) -> ScalarField {
        ScalarField { chart, repr: Arc::new(repr) }
    }

    pub fn constant(chart: &Arc<Chart>, c: f64) -> ScalarField {
        ScalarField::new(chart.clone(), Expr::Const(c))
    }

    pub fn zero(chart: &Arc<Chart>) -> ScalarField {
        ScalarField::constant(chart, 0.0)
    }

    pub fn coordinate(chart: &Arc<Chart>, axis: usize) -> ScalarField {
        assert!(axis < chart.dim(), "axis {axis} out of range");
        ScalarField::new(chart.clone(), Expr::Coord(axis))
    }

    pub fn parse(chart: &Arc<Chart>, src: &str) -> Result<ScalarField> {
        Ok(ScalarField::new(chart.clone(), expr::parse(src, chart)?))
    }

    /// Wrap a lattice table; its hull must cover the chart box on every
    /// spanned axis.
    pub fn from_grid(chart: &Arc<Chart>, table: GridTable) -> Result<ScalarField> {
        for a in table.axes() {
            if a.chart_axis >= chart.dim() {
                return Err(Error::ShapeMismatch(format!(
                    "grid axis {} outside chart of dim {}",
                    a.chart_axis,
                    chart.dim()
                )));
            }
            let (lo, hi) = chart.interval(a.chart_axis);
            let slack = 1e-9 * (hi - lo);
            if (a.lo - lo).abs() > slack || (a.hi - hi).abs() > slack {
                return Err(Error::ShapeMismatch(format!(
                    "grid hull [{}, {}] does not cover chart interval [{lo}, {hi}] on axis {}",
                    a.lo, a.hi, a.chart_axis
                )));
            }
        }
        Ok(ScalarField::new(chart.clone(), Expr::Grid(Arc::new(table))))
    }

    /// Sample an arbitrary function into a grid field over the whole box.
    pub fn sample_on_lattice(
        chart: &Arc<Chart>,
        counts: &[usize],
        f: impl FnMut(&[f64]) -> Result<f64>,
    ) -> Result<ScalarField> {
        if counts.len() != chart.dim() {
            return Err(Error::ShapeMismatch(format!(
                "{} lattice counts for chart dim {}",
                counts.len(),
                chart.dim()
            )));
        }
        let axes: Vec<GridAxis> = counts
            .iter()
            .enumerate()
            .map(|(i, &count)| {
                let (lo, hi) = chart.interval(i);
                GridAxis { chart_axis: i, lo, hi, count }
            })
            .collect();
        let base = chart.center();
        let table = GridTable::sample(axes, &base, f)?;
        // Constant samples collapse to a constant field; keeps exact data
        // exact and lets `is_zero` short-circuits fire downstream.
        let first = table.values()[0];
        if table.values().iter().all(|v| *v == first) {
            return Ok(ScalarField::constant(chart, first));
        }
        ScalarField::from_grid(chart, table)
    }

    /// Re-represent this field by lattice samples (identity for exact data on
    /// the nodes; O(h^4) in between).
    pub fn resample(&self, counts: &[usize]) -> Result<ScalarField> {
        ScalarField::sample_on_lattice(&self.chart, counts, |q| self.eval(q))
    }

    pub fn chart(&self) -> &Arc<Chart> {
        &self.chart
    }

    /// Transplant onto another chart, sending old axis i to axis map[i]. The
    /// target interval must contain the source interval on every mapped axis.
    pub fn remap_to_chart(&self, chart: &Arc<Chart>, map: &[usize]) -> Result<ScalarField> {
        if map.len() != self.chart.dim() || map.iter().any(|m| *m >= chart.dim()) {
            return Err(Error::ShapeMismatch(format!(
                "axis map of len {} from dim {} into dim {}",
                map.len(),
                self.chart.dim(),
                chart.dim()
            )));
        }
        for (i, &mi) in map.iter().enumerate() {
            let (lo, hi) = self.chart.interval(i);
            let (tlo, thi) = chart.interval(mi);
            if tlo > lo + 1e-12 || thi < hi - 1e-12 {
                return Err(Error::Precondition(format!(
                    "target axis {mi} interval [{tlo}, {thi}] does not cover [{lo}, {hi}]"
                )));
            }
        }
        Ok(ScalarField::new(chart.clone(), self.repr.remap_coords(map)))
    }

    pub fn repr(&self) -> &Expr {
        &self.repr
    }

    pub fn is_zero(&self) -> bool {
        self.repr.is_zero()
    }

    pub fn is_grammar(&self) -> bool {
        self.repr.is_grammar()
    }

    pub fn to_grammar_string(&self) -> Option<String> {
        expr::print(&self.repr, &self.chart)
    }

    pub fn max_grid_spacing(&self) -> Option<f64> {
        self.repr.max_grid_spacing()
    }

    fn assert_same_chart(&self, o: &ScalarField) {
        assert!(
            self.chart == o.chart,
            "field arithmetic across different charts"
        );
    }

    fn combine(&self, o: &ScalarField, f: impl Fn(Expr, Expr) -> Expr) -> ScalarField {
        self.assert_same_chart(o);
        ScalarField::new(self.chart.clone(), f((*self.repr).clone(), (*o.repr).clone()))
    }

    fn map(&self, f: impl Fn(Expr) -> Expr) -> ScalarField {
        ScalarField::new(self.chart.clone(), f((*self.repr).clone()))
    }

    pub fn add(&self, o: &ScalarField) -> ScalarField {
        self.combine(o, smart::add)
    }
    pub fn sub(&self, o: &ScalarField) -> ScalarField {
        self.combine(o, smart::sub)
    }
    pub fn mul(&self, o: &ScalarField) -> ScalarField {
        self.combine(o, smart::mul)
    }
    pub fn div(&self, o: &ScalarField) -> ScalarField {
        self.combine(o, smart::div)
    }
    pub fn neg(&self) -> ScalarField {
        self.map(smart::neg)
    }
    pub fn powi(&self, k: i32) -> ScalarField {
        self.map(|e| smart::powi(e, k))
    }
    pub fn sqrt(&self) -> ScalarField {
        self.map(smart::sqrt)
    }
    pub fn abs(&self) -> ScalarField {
        self.map(smart::abs)
    }
    pub fn sgn(&self) -> ScalarField {
        self.map(smart::sgn)
    }
    pub fn scale(&self, c: f64) -> ScalarField {
        if c == 1.0 {
            return self.clone();
        }
        self.map(|e| smart::mul(Expr::Const(c), e))
    }

    /// Partial derivative along a chart axis, as a field.
    pub fn deriv(&self, axis: usize) -> ScalarField {
        assert!(axis < self.chart.dim());
        self.map(|e| smart::deriv(e, axis))
    }

    /// All partials as a one-form (the differential).
    pub fn differential(&self) -> OneForm {
        let comps = (0..self.chart.dim()).map(|m| self.deriv(m)).collect();
        OneForm::new(self.chart.clone(), comps)
    }

    /// Substitute x -> center + scale*(x - center); `None` if the field holds
    /// internal nodes (callers then resample instead).
    pub fn compose_affine(&self, center: &[f64], scale: f64) -> Option<ScalarField> {
        assert_eq!(center.len(), self.chart.dim());
        self.repr
            .compose_affine(center, scale)
            .map(|e| ScalarField::new(self.chart.clone(), e))
    }

    /// Move this field (verbatim) onto a chart with the same box but new
    /// coordinate names. Coordinates are stored by index, so this is a
    /// relabeling, not a transformation.
    pub fn on_renamed_chart(&self, chart: &Arc<Chart>) -> ScalarField {
        assert_eq!(chart.bounds(), self.chart.bounds(), "renaming must keep the box");
        ScalarField { chart: chart.clone(), repr: self.repr.clone() }
    }

    pub fn eval(&self, q: &[f64]) -> Result<f64> {
        self.chart.contains(q)?;
        eval_node::<f64>(&self.repr, q, q, &self.chart)
    }

    /// Value and full gradient at q.
    pub fn eval_with_partials(&self, q: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.chart.contains(q)?;
        let n = self.chart.dim();
        let lifted: Vec<Dual<f64>> = q
            .iter()
            .enumerate()
            .map(|(i, &x)| Dual::seeded(x, n, Some(i)))
            .collect();
        let out = eval_node::<Dual<f64>>(&self.repr, &lifted, q, &self.chart)?;
        Ok((out.re, out.grad))
    }
}

// ---------------------------------------------------------------------------
// Evaluation engine

fn guard<S: Scalar>(v: &S, node: &'static str, primal: &[f64]) -> Result<()> {
    if v.primal().abs() < EPS_GUARD {
        return Err(Error::SingularEval { node, point: primal.to_vec() });
    }
    Ok(())
}

pub(crate) fn eval_node<S: Scalar>(
    e: &Expr,
    pt: &[S],
    primal: &[f64],
    chart: &Chart,
) -> Result<S> {
    match e {
        Expr::Const(c) => Ok(S::constant(*c, &pt[0])),
        Expr::Coord(i) => Ok(pt[*i].clone()),
        Expr::Add(a, b) => Ok(eval_node(a, pt, primal, chart)?.add(&eval_node(b, pt, primal, chart)?)),
        Expr::Sub(a, b) => Ok(eval_node(a, pt, primal, chart)?.sub(&eval_node(b, pt, primal, chart)?)),
        Expr::Neg(a) => Ok(eval_node(a, pt, primal, chart)?.neg()),
        Expr::Mul(a, b) => Ok(eval_node(a, pt, primal, chart)?.mul(&eval_node(b, pt, primal, chart)?)),
        Expr::Div(a, b) => {
            let den = eval_node(b, pt, primal, chart)?;
            guard(&den, "divide", primal)?;
            Ok(eval_node(a, pt, primal, chart)?.div(&den))
        }
        Expr::PowI(a, k) => {
            let base = eval_node(a, pt, primal, chart)?;
            if *k < 0 {
                guard(&base, "negative power", primal)?;
            }
            Ok(base.powi(*k))
        }
        Expr::Sin(a) => Ok(eval_node(a, pt, primal, chart)?.sin()),
        Expr::Cos(a) => Ok(eval_node(a, pt, primal, chart)?.cos()),
        Expr::Exp(a) => Ok(eval_node(a, pt, primal, chart)?.exp()),
        Expr::Sqrt(a) => {
            let arg = eval_node(a, pt, primal, chart)?;
            if arg.primal() < EPS_GUARD {
                return Err(Error::SingularEval { node: "sqrt", point: primal.to_vec() });
            }
            Ok(arg.sqrt())
        }
        Expr::Abs(a) => {
            let arg = eval_node(a, pt, primal, chart)?;
            guard(&arg, "abs", primal)?;
            Ok(arg.abs())
        }
        Expr::Sgn(a) => {
            let arg = eval_node(a, pt, primal, chart)?;
            guard(&arg, "sgn", primal)?;
            Ok(arg.sgn())
        }
        Expr::Grid(table) => {
            // value + first-order lift with the stencil gradient; higher
            // derivative queries reach grids only through Deriv nodes
            let v = table.interp(primal)?;
            let mut acc = S::constant(v, &pt[0]);
            for a in table.axes() {
                let g = table.fd_partial(a.chart_axis, primal)?;
                if g != 0.0 {
                    let dx = pt[a.chart_axis].sub(&S::constant(primal[a.chart_axis], &pt[0]));
                    acc = acc.add(&S::constant(g, &pt[0]).mul(&dx));
                }
            }
            Ok(acc)
        }
        Expr::Deriv(f, axis) => {
            if f.grid_spans(*axis) {
                deriv_by_stencil(f, *axis, pt, primal, chart)
            } else {
                if S::Lifted::SATURATED {
                    return Err(Error::Precondition(
                        "derivative nesting exceeds the supported depth".into(),
                    ));
                }
                let lifted: Vec<S::Lifted> =
                    pt.iter().enumerate().map(|(i, v)| v.lift(i == *axis)).collect();
                let out = eval_node::<S::Lifted>(f, &lifted, primal, chart)?;
                Ok(S::lower(out))
            }
        }
    }
}

fn deriv_by_stencil<S: Scalar>(
    f: &Expr,
    axis: usize,
    pt: &[S],
    primal: &[f64],
    chart: &Chart,
) -> Result<S> {
    let h = f.grid_step(axis).expect("caller checked grid_spans");
    let (lo, hi) = chart.interval(axis);
    let nodes = stencil_nodes(primal[axis], lo, hi, h)?;
    let w = fd_weights(&nodes, primal[axis], 1);
    let mut acc = S::constant(0.0, &pt[0]);
    for (k, &x) in nodes.iter().enumerate() {
        let shift = x - primal[axis];
        let mut pt2: Vec<S> = pt.to_vec();
        pt2[axis] = pt2[axis].add(&S::constant(shift, &pt[0]));
        let mut primal2 = primal.to_vec();
        primal2[axis] += shift;
        let val = eval_node(f, &pt2, &primal2, chart)?;
        acc = acc.add(&S::constant(w[k], &pt[0]).mul(&val));
    }
    Ok(acc)
}

// ---------------------------------------------------------------------------
// Vector fields and forms

#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    chart: Arc<Chart>,
    comps: Vec<ScalarField>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OneForm {
    chart: Arc<Chart>,
    comps: Vec<ScalarField>,
}

macro_rules! component_carrier {
    ($ty:ident) => {
        impl $ty {
            pub fn new(chart: Arc<Chart>, comps: Vec<ScalarField>) -> $ty {
                assert_eq!(comps.len(), chart.dim(), "one component per coordinate");
                for c in &comps {
                    assert!(c.chart() == &chart, "component on a different chart");
                }
                $ty { chart, comps }
            }

            pub fn zero(chart: &Arc<Chart>) -> $ty {
                let comps = (0..chart.dim()).map(|_| ScalarField::zero(chart)).collect();
                $ty { chart: chart.clone(), comps }
            }

            pub fn chart(&self) -> &Arc<Chart> {
                &self.chart
            }

            pub fn comps(&self) -> &[ScalarField] {
                &self.comps
            }

            pub fn comp(&self, i: usize) -> &ScalarField {
                &self.comps[i]
            }

            pub fn eval(&self, q: &[f64]) -> crate::Result<Vec<f64>> {
                self.comps.iter().map(|c| c.eval(q)).collect()
            }

            pub fn add(&self, o: &$ty) -> $ty {
                let comps = self
                    .comps
                    .iter()
                    .zip(&o.comps)
                    .map(|(a, b)| a.add(b))
                    .collect();
                $ty::new(self.chart.clone(), comps)
            }

            pub fn scale_field(&self, f: &ScalarField) -> $ty {
                let comps = self.comps.iter().map(|c| c.mul(f)).collect();
                $ty::new(self.chart.clone(), comps)
            }
        }
    };
}

component_carrier!(VectorField);
component_carrier!(OneForm);

impl VectorField {
    /// Coordinate vector field along one axis.
    pub fn coordinate_axis(chart: &Arc<Chart>, axis: usize) -> VectorField {
        let comps = (0..chart.dim())
            .map(|m| ScalarField::constant(chart, if m == axis { 1.0 } else { 0.0 }))
            .collect();
        VectorField::new(chart.clone(), comps)
    }

    /// Directional derivative X(f) as a field.
    pub fn apply(&self, f: &ScalarField) -> ScalarField {
        let mut acc = ScalarField::zero(&self.chart);
        for (m, xm) in self.comps.iter().enumerate() {
            acc = acc.add(&xm.mul(&f.deriv(m)));
        }
        acc
    }
}

impl OneForm {
    /// Coordinate differential dx_axis.
    pub fn coordinate_differential(chart: &Arc<Chart>, axis: usize) -> OneForm {
        let comps = (0..chart.dim())
            .map(|m| ScalarField::constant(chart, if m == axis { 1.0 } else { 0.0 }))
            .collect();
        OneForm::new(chart.clone(), comps)
    }

    /// Pairing with a vector field.
    pub fn contract(&self, x: &VectorField) -> ScalarField {
        let mut acc = ScalarField::zero(&self.chart);
        for (m, w) in self.comps.iter().enumerate() {
            acc = acc.add(&w.mul(x.comp(m)));
        }
        acc
    }

    /// Max |(d omega)_ij| over plan points; the exterior-derivative residual
    /// is reported in absolute terms.
    pub fn closedness(&self, plan: &SamplePlan) -> Result<CheckReport> {
        let n = self.chart.dim();
        let mut acc = ResidualMax::new("closed");
        let mut comps = Vec::new();
        for i in 0..n {
            for j in (i + 1)..n {
                comps.push(self.comps[j].deriv(i).sub(&self.comps[i].deriv(j)));
            }
        }
        for q in plan.points() {
            for c in &comps {
                acc.update(c.eval(q)?.abs(), q);
            }
        }
        let mut report = CheckReport::default();
        report.push(acc.into_entry(crate::tol::REL_TOL));
        Ok(report)
    }
}

/// Alternating three-form stored on strictly increasing index triples.
#[derive(Debug, Clone, PartialEq)]
pub struct ThreeForm {
    chart: Arc<Chart>,
    comps: BTreeMap<(usize, usize, usize), ScalarField>,
}

impl ThreeForm {
    pub fn new(
        chart: Arc<Chart>,
        entries: Vec<((usize, usize, usize), ScalarField)>,
    ) -> Result<ThreeForm> {
        let n = chart.dim();
        let mut comps = BTreeMap::new();
        for ((i, j, k), f) in entries {
            if !(i < j && j < k && k < n) {
                return Err(Error::InvalidInput(format!(
                    "three-form index ({i},{j},{k}) must be strictly increasing and < {n}"
                )));
            }
            if f.chart() != &chart {
                return Err(Error::ChartMismatch("three-form entry on a different chart".into()));
            }
            if comps.insert((i, j, k), f).is_some() {
                return Err(Error::InvalidInput(format!("duplicate three-form index ({i},{j},{k})")));
            }
        }
        Ok(ThreeForm { chart, comps })
    }

    pub fn zero(chart: &Arc<Chart>) -> ThreeForm {
        ThreeForm { chart: chart.clone(), comps: BTreeMap::new() }
    }

    pub fn chart(&self) -> &Arc<Chart> {
        &self.chart
    }

    pub fn entries(&self) -> impl Iterator<Item = (&(usize, usize, usize), &ScalarField)> {
        self.comps.iter()
    }

    /// Fully antisymmetric coefficient for arbitrary index order.
    pub fn coeff(&self, i: usize, j: usize, k: usize) -> ScalarField {
        if i == j || j == k || i == k {
            return ScalarField::zero(&self.chart);
        }
        let mut idx = [i, j, k];
        let mut sign = 1.0;
        // 3-element sort, tracking parity
        if idx[0] > idx[1] {
            idx.swap(0, 1);
            sign = -sign;
        }
        if idx[1] > idx[2] {
            idx.swap(1, 2);
            sign = -sign;
        }
        if idx[0] > idx[1] {
            idx.swap(0, 1);
            sign = -sign;
        }
        match self.comps.get(&(idx[0], idx[1], idx[2])) {
            Some(f) => f.scale(sign),
            None => ScalarField::zero(&self.chart),
        }
    }

    /// eta(X, Y, .) as a one-form.
    pub fn contract2(&self, x: &VectorField, y: &VectorField) -> OneForm {
        let n = self.chart.dim();
        let mut comps = Vec::with_capacity(n);
        for m in 0..n {
            let mut acc = ScalarField::zero(&self.chart);
            for i in 0..n {
                for j in 0..n {
                    let c = self.coeff(i, j, m);
                    if !c.is_zero() {
                        acc = acc.add(&x.comp(i).mul(y.comp(j)).mul(&c));
                    }
                }
            }
            comps.push(acc);
        }
        OneForm::new(self.chart.clone(), comps)
    }

    /// Max |(d eta)_ijkl| over plan points, absolute.
    pub fn closedness(&self, plan: &SamplePlan) -> Result<CheckReport> {
        let n = self.chart.dim();
        let mut acc = ResidualMax::new("closed");
        let mut comps = Vec::new();
        for i in 0..n {
            for j in (i + 1)..n {
                for k in (j + 1)..n {
                    for l in (k + 1)..n {
                        let c = self
                            .coeff(j, k, l)
                            .deriv(i)
                            .sub(&self.coeff(i, k, l).deriv(j))
                            .add(&self.coeff(i, j, l).deriv(k))
                            .sub(&self.coeff(i, j, k).deriv(l));
                        comps.push(c);
                    }
                }
            }
        }
        for q in plan.points() {
            for c in &comps {
                acc.update(c.eval(q)?.abs(), q);
            }
        }
        let mut report = CheckReport::default();
        report.push(acc.into_entry(crate::tol::REL_TOL));
        Ok(report)
    }
}

// ---------------------------------------------------------------------------
// Cartan operations

/// [X, Y]^m = sum_j X^j d_j Y^m - Y^j d_j X^m.
pub fn vf_lie_bracket(x: &VectorField, y: &VectorField) -> VectorField {
    assert!(x.chart() == y.chart(), "bracket across charts");
    let chart = x.chart().clone();
    let n = chart.dim();
    let comps = (0..n)
        .map(|m| {
            let mut acc = ScalarField::zero(&chart);
            for j in 0..n {
                acc = acc.add(&x.comp(j).mul(&y.comp(m).deriv(j)));
                acc = acc.sub(&y.comp(j).mul(&x.comp(m).deriv(j)));
            }
            acc
        })
        .collect();
    VectorField::new(chart, comps)
}

/// (L_X beta)_j = sum_m X^m d_m beta_j + beta_m d_j X^m.
pub fn lie_derivative_one_form(x: &VectorField, beta: &OneForm) -> OneForm {
    assert!(x.chart() == beta.chart(), "Lie derivative across charts");
    let chart = x.chart().clone();
    let n = chart.dim();
    let comps = (0..n)
        .map(|j| {
            let mut acc = ScalarField::zero(&chart);
            for m in 0..n {
                acc = acc.add(&x.comp(m).mul(&beta.comp(j).deriv(m)));
                acc = acc.add(&beta.comp(m).mul(&x.comp(m).deriv(j)));
            }
            acc
        })
        .collect();
    OneForm::new(chart, comps)
}

/// (i_Y d alpha)_j = sum_m Y^m (d_m alpha_j - d_j alpha_m).
pub fn iota_d(y: &VectorField, alpha: &OneForm) -> OneForm {
    assert!(y.chart() == alpha.chart(), "contraction across charts");
    let chart = y.chart().clone();
    let n = chart.dim();
    let comps = (0..n)
        .map(|j| {
            let mut acc = ScalarField::zero(&chart);
            for m in 0..n {
                acc = acc.add(&y.comp(m).mul(&alpha.comp(j).deriv(m).sub(&alpha.comp(m).deriv(j))));
            }
            acc
        })
        .collect();
    OneForm::new(chart, comps)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chart2() -> Arc<Chart> {
        Chart::unit_box(2)
    }

    #[test]
    fn frozen_eval_with_partials() {
        // f = x1^2 * x2 at (2, 3): value 12, gradient (12, 4)
        let c = Chart::new(vec!["x1", "x2"], vec![(-5.0, 5.0), (-5.0, 5.0)]).unwrap();
        let f = ScalarField::parse(&c, "x1^2*x2").unwrap();
        let (v, g) = f.eval_with_partials(&[2.0, 3.0]).unwrap();
        assert_eq!(v, 12.0);
        assert_eq!(g, vec![12.0, 4.0]);
    }

    #[test]
    fn guard_errors_not_nan() {
        let c = chart2();
        let f = ScalarField::parse(&c, "1/(x1 - x2)").unwrap();
        match f.eval(&[0.3, 0.3]) {
            Err(Error::SingularEval { node, .. }) => assert_eq!(node, "divide"),
            other => panic!("expected singular evaluation, got {other:?}"),
        }
        let g = ScalarField::parse(&c, "sqrt(x1)").unwrap();
        assert!(g.eval(&[-0.5, 0.0]).is_err());
        assert!(g.eval(&[0.25, 0.0]).is_ok());
        let h = ScalarField::parse(&c, "abs(x1)").unwrap();
        assert!(h.eval(&[0.0, 0.0]).is_err());
    }

    #[test]
    fn outside_box_is_domain_error() {
        let c = chart2();
        let f = ScalarField::parse(&c, "x1").unwrap();
        assert!(matches!(f.eval(&[2.0, 0.0]), Err(Error::OutsideDomain { axis: 0, .. })));
    }

    #[test]
    fn frozen_vf_bracket() {
        // [x2 d1, x1 d2] = x2 d2 - x1 d1
        let c = chart2();
        let x = VectorField::new(
            c.clone(),
            vec![ScalarField::coordinate(&c, 1), ScalarField::zero(&c)],
        );
        let y = VectorField::new(
            c.clone(),
            vec![ScalarField::zero(&c), ScalarField::coordinate(&c, 0)],
        );
        let b = vf_lie_bracket(&x, &y);
        for q in [[0.3, -0.7], [0.9, 0.2]] {
            let v = b.eval(&q).unwrap();
            assert!((v[0] - (-q[0])).abs() < 1e-15);
            assert!((v[1] - q[1]).abs() < 1e-15);
        }
    }

    #[test]
    fn frozen_lie_derivative_and_iota() {
        let c = chart2();
        // L_{x2 d1} dx1 = dx2
        let x = VectorField::new(
            c.clone(),
            vec![ScalarField::coordinate(&c, 1), ScalarField::zero(&c)],
        );
        let dx1 = OneForm::coordinate_differential(&c, 0);
        let l = lie_derivative_one_form(&x, &dx1);
        let q = [0.4, -0.2];
        assert_eq!(l.eval(&q).unwrap(), vec![0.0, 1.0]);

        // i_{d2} d(x2 dx1) = dx1
        let y = VectorField::coordinate_axis(&c, 1);
        let alpha = OneForm::new(
            c.clone(),
            vec![ScalarField::coordinate(&c, 1), ScalarField::zero(&c)],
        );
        let i = iota_d(&y, &alpha);
        assert_eq!(i.eval(&q).unwrap(), vec![1.0, 0.0]);
    }

    #[test]
    fn closedness_residuals() {
        // omega = x2 dx1 has residual exactly 1
        let c = chart2();
        let omega = OneForm::new(
            c.clone(),
            vec![ScalarField::coordinate(&c, 1), ScalarField::zero(&c)],
        );
        let plan = SamplePlan::new(&c, 3, 16);
        let rep = omega.closedness(&plan).unwrap();
        assert!((rep.residual("closed").unwrap() - 1.0).abs() < 1e-12);

        // df is closed
        let f = ScalarField::parse(&c, "sin(x1)*x2 + x2^3").unwrap();
        let rep2 = f.differential().closedness(&plan).unwrap();
        assert!(rep2.residual("closed").unwrap() <= 1e-9);

        // eta = x4 dx1^dx2^dx3 in dim 4 has residual exactly 1
        let c4 = Chart::unit_box(4);
        let eta = ThreeForm::new(
            c4.clone(),
            vec![((0, 1, 2), ScalarField::coordinate(&c4, 3))],
        )
        .unwrap();
        let plan4 = SamplePlan::new(&c4, 3, 16);
        let rep3 = eta.closedness(&plan4).unwrap();
        assert!((rep3.residual("closed").unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn three_form_contraction_orientation() {
        // i_{d1} i_{d2} (dx1^dx2^dx3) = eta(d1, d2, .) = +dx3
        let c = Chart::unit_box(3);
        let eta = ThreeForm::new(c.clone(), vec![((0, 1, 2), ScalarField::constant(&c, 1.0))]).unwrap();
        let d1 = VectorField::coordinate_axis(&c, 0);
        let d2 = VectorField::coordinate_axis(&c, 1);
        let w = eta.contract2(&d1, &d2);
        assert_eq!(w.eval(&[0.1, 0.2, 0.3]).unwrap(), vec![0.0, 0.0, 1.0]);
        let w2 = eta.contract2(&d2, &d1);
        assert_eq!(w2.eval(&[0.1, 0.2, 0.3]).unwrap(), vec![0.0, 0.0, -1.0]);
    }

    #[test]
    fn grid_vs_expression_gradient() {
        // sin(x1) sampled with h = 0.05: d1 at 0 within 1e-5 of 1
        let c = Chart::new(vec!["x1"], vec![(-1.0, 1.0)]).unwrap();
        let g = ScalarField::sample_on_lattice(&c, &[41], |q| Ok(q[0].sin())).unwrap();
        let (v, grad) = g.eval_with_partials(&[0.0]).unwrap();
        assert!(v.abs() < 1e-12);
        assert!((grad[0] - 1.0).abs() < 1e-5);
    }

    #[test]
    fn derivative_nodes_nest() {
        // second derivative of x1^3 via two Deriv nodes = 6 x1
        let c = chart2();
        let f = ScalarField::parse(&c, "x1^3").unwrap();
        let d2 = f.deriv(0).deriv(0);
        assert!((d2.eval(&[0.5, 0.0]).unwrap() - 3.0).abs() < 1e-12);
        // mixed partial of x1^2*x2
        let g = ScalarField::parse(&c, "x1^2*x2").unwrap();
        let mixed = g.deriv(0).deriv(1);
        assert!((mixed.eval(&[0.5, -0.3]).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn derivative_of_grid_products() {
        // d1 of (grid(sin x1) * x2) should be cos(x1)*x2 to fourth order
        let c = chart2();
        let g = ScalarField::sample_on_lattice(&c, &[41, 5], |q| Ok(q[0].sin())).unwrap();
        let f = g.mul(&ScalarField::coordinate(&c, 1));
        let d = f.deriv(0);
        let q = [0.25, 0.6];
        let expect = q[0].cos() * q[1];
        assert!((d.eval(&q).unwrap() - expect).abs() < 5e-5);
        // and the gradient of that derivative still evaluates (FD over FD)
        let (_, grad) = d.eval_with_partials(&q).unwrap();
        assert!((grad[1] - q[0].cos()).abs() < 5e-4);
    }
}
