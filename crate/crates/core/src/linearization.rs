//! Singular points, constant linear models, the zoom family, Euler-like
//! data, and the residual that certifies a derivation preserves the
//! structure.

use crate::chart::Chart;
use crate::courant::CourantStructure;
use crate::error::Error;
use crate::expr::Expr;
use crate::field::{vf_lie_bracket, ScalarField};
use crate::loday::{Derivation, LodayStructure, Section};
use crate::plan::SamplePlan;
use crate::report::{CheckReport, ResidualMax};
use crate::tol;
use crate::Result;
use nalgebra::{DMatrix, DVector, SVD};
use std::sync::Arc;

/// First-order data of a structure at a singular point: bracket values,
/// anchor and co-anchor jets. `anchor[i]` has entry (m, k) equal to the
/// x_k-derivative of the anchor component theta_{im}; `coanchor` is indexed
/// [m][i][j][l][s] with s the differentiation slot.
#[derive(Debug, Clone)]
pub struct LinearModel {
    pub bracket: Vec<Vec<Vec<f64>>>,
    pub anchor: Vec<DMatrix<f64>>,
    pub coanchor: Vec<Vec<Vec<Vec<Vec<f64>>>>>,
    pub point: Vec<f64>,
    pub rank: usize,
    pub dim: usize,
}

impl LinearModel {
    pub fn new(
        bracket: Vec<Vec<Vec<f64>>>,
        anchor: Vec<DMatrix<f64>>,
        coanchor: Vec<Vec<Vec<Vec<Vec<f64>>>>>,
        point: Vec<f64>,
    ) -> Result<LinearModel> {
        let r = bracket.len();
        let n = point.len();
        let cube_ok = bracket
            .iter()
            .all(|bi| bi.len() == r && bi.iter().all(|bj| bj.len() == r));
        let anchor_ok =
            anchor.len() == r && anchor.iter().all(|a| a.nrows() == n && a.ncols() == n);
        let co_ok = coanchor.len() == n
            && coanchor.iter().all(|cm| {
                cm.len() == r
                    && cm.iter().all(|ci| {
                        ci.len() == r
                            && ci.iter().all(|cj| {
                                cj.len() == r && cj.iter().all(|cl| cl.len() == n)
                            })
                    })
            });
        if !cube_ok || !anchor_ok || !co_ok {
            return Err(Error::ShapeMismatch(
                "linear model tensors disagree on rank or dimension".into(),
            ));
        }
        Ok(LinearModel { bracket, anchor, coanchor, point, rank: r, dim: n })
    }

    /// Model with zero anchor and co-anchor jets.
    pub fn from_bracket(bracket: Vec<Vec<Vec<f64>>>, dim: usize) -> Result<LinearModel> {
        let r = bracket.len();
        let anchor = vec![DMatrix::zeros(dim, dim); r];
        let coanchor = vec![vec![vec![vec![vec![0.0; dim]; r]; r]; r]; dim];
        LinearModel::new(bracket, anchor, coanchor, vec![0.0; dim])
    }
}

/// Both anchor families must vanish at the point for the linear data to be
/// frame-independent.
pub fn is_singular(a: &LodayStructure, p: &[f64]) -> Result<CheckReport> {
    a.chart().contains(p)?;
    let (r, n) = (a.rank(), a.dim());
    let mut anchor = ResidualMax::new("anchor");
    let mut coanchor = ResidualMax::new("coanchor");
    for i in 0..r {
        for m in 0..n {
            let f = a.theta(i, m);
            if !f.is_zero() {
                anchor.update(f.eval(p)?.abs(), p);
            }
            for j in 0..r {
                for l in 0..r {
                    let f = a.lambda(m, i, j, l);
                    if !f.is_zero() {
                        coanchor.update(f.eval(p)?.abs(), p);
                    }
                }
            }
        }
    }
    let mut report = CheckReport::default();
    report.push(anchor.into_entry(tol::SINGULAR_TOL));
    report.push(coanchor.into_entry(tol::SINGULAR_TOL));
    Ok(report)
}

fn require_singular(a: &LodayStructure, p: &[f64]) -> Result<()> {
    let rep = is_singular(a, p)?;
    if !rep.passed() {
        return Err(Error::Precondition(format!(
            "not a singular point: anchor reaches {:.3e}, co-anchor {:.3e}",
            rep.residual("anchor").unwrap_or(0.0),
            rep.residual("coanchor").unwrap_or(0.0)
        )));
    }
    Ok(())
}

/// Read the constant model off at a singular point: bracket values and the
/// first derivatives of the anchor and co-anchor families.
pub fn linearize(a: &LodayStructure, p: &[f64]) -> Result<LinearModel> {
    require_singular(a, p)?;
    let (r, n) = (a.rank(), a.dim());
    let mut bracket = vec![vec![vec![0.0; r]; r]; r];
    for i in 0..r {
        for j in 0..r {
            for k in 0..r {
                let f = a.gamma(i, j, k);
                if !f.is_zero() {
                    bracket[i][j][k] = f.eval(p)?;
                }
            }
        }
    }
    let mut anchor = vec![DMatrix::zeros(n, n); r];
    for i in 0..r {
        for m in 0..n {
            let f = a.theta(i, m);
            if f.is_zero() {
                continue;
            }
            let (_, grad) = f.eval_with_partials(p)?;
            for k in 0..n {
                anchor[i][(m, k)] = grad[k];
            }
        }
    }
    let mut coanchor = vec![vec![vec![vec![vec![0.0; n]; r]; r]; r]; n];
    for m in 0..n {
        for i in 0..r {
            for j in 0..r {
                for l in 0..r {
                    let f = a.lambda(m, i, j, l);
                    if f.is_zero() {
                        continue;
                    }
                    let (_, grad) = f.eval_with_partials(p)?;
                    coanchor[m][i][j][l].copy_from_slice(&grad);
                }
            }
        }
    }
    LinearModel::new(bracket, anchor, coanchor, p.to_vec())
}

/// The model structure on the unit box in base-point-centered coordinates:
/// constant bracket, linear anchor and co-anchor.
pub fn linear_model_algebroid(l: &LinearModel) -> Result<LodayStructure> {
    let chart = Chart::unit_box(l.dim);
    let (r, n) = (l.rank, l.dim);
    let linear = |coeffs: &dyn Fn(usize) -> f64| -> ScalarField {
        let mut f = ScalarField::zero(&chart);
        for k in 0..n {
            let c = coeffs(k);
            if c != 0.0 {
                f = f.add(&ScalarField::coordinate(&chart, k).scale(c));
            }
        }
        f
    };
    let mut gamma = vec![vec![vec![ScalarField::zero(&chart); r]; r]; r];
    let mut theta = vec![vec![ScalarField::zero(&chart); n]; r];
    let mut lambda = vec![vec![vec![vec![ScalarField::zero(&chart); r]; r]; r]; n];
    for i in 0..r {
        for j in 0..r {
            for k in 0..r {
                if l.bracket[i][j][k] != 0.0 {
                    gamma[i][j][k] = ScalarField::constant(&chart, l.bracket[i][j][k]);
                }
            }
        }
        for m in 0..n {
            theta[i][m] = linear(&|k| l.anchor[i][(m, k)]);
        }
    }
    for m in 0..n {
        for i in 0..r {
            for j in 0..r {
                for k in 0..r {
                    lambda[m][i][j][k] = linear(&|s| l.coanchor[m][i][j][k][s]);
                }
            }
        }
    }
    LodayStructure::new(chart, r, gamma, theta, lambda)
}

/// f(p + t(x - p)) as a symbolic rewrite; `None` when a grid leaf blocks it.
/// A derivative node composes as (Dg)(phi(x)) = (1/t) D[g o phi](x).
fn zoom_expr(e: &Expr, p: &[f64], t: f64) -> Option<Expr> {
    let z = |a: &Arc<Expr>| zoom_expr(a, p, t).map(Arc::new);
    Some(match e {
        Expr::Const(c) => Expr::Const(*c),
        Expr::Coord(k) => {
            let shift = (1.0 - t) * p[*k];
            let scaled = if t == 1.0 {
                Expr::Coord(*k)
            } else {
                Expr::Mul(Arc::new(Expr::Const(t)), Arc::new(Expr::Coord(*k)))
            };
            if shift == 0.0 {
                scaled
            } else {
                Expr::Add(Arc::new(Expr::Const(shift)), Arc::new(scaled))
            }
        }
        Expr::Add(a, b) => Expr::Add(z(a)?, z(b)?),
        Expr::Sub(a, b) => Expr::Sub(z(a)?, z(b)?),
        Expr::Neg(a) => Expr::Neg(z(a)?),
        Expr::Mul(a, b) => Expr::Mul(z(a)?, z(b)?),
        Expr::Div(a, b) => Expr::Div(z(a)?, z(b)?),
        Expr::PowI(a, k) => Expr::PowI(z(a)?, *k),
        Expr::Sin(a) => Expr::Sin(z(a)?),
        Expr::Cos(a) => Expr::Cos(z(a)?),
        Expr::Exp(a) => Expr::Exp(z(a)?),
        Expr::Sqrt(a) => Expr::Sqrt(z(a)?),
        Expr::Abs(a) => Expr::Abs(z(a)?),
        Expr::Sgn(a) => Expr::Sgn(z(a)?),
        Expr::Deriv(a, axis) => Expr::Mul(
            Arc::new(Expr::Const(1.0 / t)),
            Arc::new(Expr::Deriv(z(a)?, *axis)),
        ),
        Expr::Grid(_) => return None,
    })
}

fn compose_zoom(f: &ScalarField, p: &[f64], t: f64) -> Result<ScalarField> {
    if f.is_zero() {
        return Ok(f.clone());
    }
    let chart = f.chart().clone();
    if let Some(e) = zoom_expr(f.repr(), p, t) {
        return Ok(ScalarField::new(chart, e));
    }
    let counts = vec![17; chart.dim()];
    ScalarField::sample_on_lattice(&chart, &counts, |x| {
        let z: Vec<f64> = x.iter().zip(p).map(|(xi, pi)| pi + t * (xi - pi)).collect();
        f.eval(&z)
    })
}

/// Contract the structure toward the singular point: bracket functions
/// compose with the contraction, anchor-type functions pick up 1/t. At
/// t = 0 this degenerates to the linear model.
pub fn zoom_structure(a: &LodayStructure, p: &[f64], t: f64) -> Result<LodayStructure> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::InvalidInput(format!("zoom parameter {t} outside [0, 1]")));
    }
    require_singular(a, p)?;
    if t == 0.0 {
        return linear_model_algebroid(&linearize(a, p)?);
    }
    let chart = a.chart().clone();
    let (r, n) = (a.rank(), a.dim());
    let mut gamma = vec![vec![vec![ScalarField::zero(&chart); r]; r]; r];
    let mut theta = vec![vec![ScalarField::zero(&chart); n]; r];
    let mut lambda = vec![vec![vec![vec![ScalarField::zero(&chart); r]; r]; r]; n];
    for i in 0..r {
        for j in 0..r {
            for k in 0..r {
                gamma[i][j][k] = compose_zoom(a.gamma(i, j, k), p, t)?;
            }
        }
        for m in 0..n {
            theta[i][m] = compose_zoom(a.theta(i, m), p, t)?.scale(1.0 / t);
        }
    }
    for m in 0..n {
        for i in 0..r {
            for j in 0..r {
                for k in 0..r {
                    lambda[m][i][j][k] = compose_zoom(a.lambda(m, i, j, k), p, t)?.scale(1.0 / t);
                }
            }
        }
    }
    LodayStructure::new(chart, r, gamma, theta, lambda)
}

/// Central-difference t-derivative of the zoom family against the transport
/// rule: the rate at time t is the rate at time 1 composed with the
/// contraction, scaled by 1/t for bracket functions and 1/t^2 for the
/// anchor-type functions (their extra 1/t differentiates too).
pub fn zoom_derivative_check(
    a: &LodayStructure,
    p: &[f64],
    plan: &SamplePlan,
    t: f64,
    dt: f64,
) -> Result<f64> {
    if !(dt > 0.0 && dt < t && t + dt <= 1.0) {
        return Err(Error::InvalidInput(format!(
            "need 0 < dt < t and t + dt <= 1, got t = {t}, dt = {dt}"
        )));
    }
    require_singular(a, p)?;
    let plus = zoom_structure(a, p, t + dt)?;
    let minus = zoom_structure(a, p, t - dt)?;
    let (r, n) = (a.rank(), a.dim());
    let mut worst = 0.0f64;
    for q in plan.points() {
        let z: Vec<f64> = q.iter().zip(p).map(|(xi, pi)| pi + t * (xi - pi)).collect();
        let zp: Vec<f64> = z.iter().zip(p).map(|(zi, pi)| zi - pi).collect();
        let mut push = |f: &ScalarField, fp: &ScalarField, fm: &ScalarField, rate_scale: f64, sub_value: bool| -> Result<()> {
            if f.is_zero() {
                return Ok(());
            }
            let (v, grad) = f.eval_with_partials(&z)?;
            let mut rate: f64 = zp.iter().zip(&grad).map(|(a, b)| a * b).sum();
            if sub_value {
                rate -= v;
            }
            let fd = (fp.eval(q)? - fm.eval(q)?) / (2.0 * dt);
            worst = worst.max((fd - rate * rate_scale).abs());
            Ok(())
        };
        for i in 0..r {
            for j in 0..r {
                for k in 0..r {
                    push(
                        a.gamma(i, j, k),
                        plus.gamma(i, j, k),
                        minus.gamma(i, j, k),
                        1.0 / t,
                        false,
                    )?;
                }
            }
            for m in 0..n {
                push(a.theta(i, m), plus.theta(i, m), minus.theta(i, m), 1.0 / (t * t), true)?;
            }
        }
        for m in 0..n {
            for i in 0..r {
                for j in 0..r {
                    for k in 0..r {
                        push(
                            a.lambda(m, i, j, k),
                            plus.lambda(m, i, j, k),
                            minus.lambda(m, i, j, k),
                            1.0 / (t * t),
                            true,
                        )?;
                    }
                }
            }
        }
    }
    Ok(worst)
}

/// A candidate generator must be bracket-central and anchor to the identity.
pub fn euler_like_check_vector(l: &LinearModel, v: &[f64]) -> Result<CheckReport> {
    if v.len() != l.rank {
        return Err(Error::ShapeMismatch(format!(
            "candidate has {} components, rank is {}",
            v.len(),
            l.rank
        )));
    }
    let mut center = ResidualMax::new("center");
    for j in 0..l.rank {
        for k in 0..l.rank {
            let s: f64 = (0..l.rank).map(|i| v[i] * l.bracket[i][j][k]).sum();
            center.update(s.abs(), &l.point);
        }
    }
    let mut identity = ResidualMax::new("identity");
    for m in 0..l.dim {
        for k in 0..l.dim {
            let s: f64 = (0..l.rank).map(|i| v[i] * l.anchor[i][(m, k)]).sum();
            let want = if m == k { 1.0 } else { 0.0 };
            identity.update((s - want).abs(), &l.point);
        }
    }
    let mut report = CheckReport::default();
    report.push(center.into_entry(tol::EULER_TOL));
    report.push(identity.into_entry(tol::EULER_TOL));
    Ok(report)
}

pub fn euler_like_check_section(
    a: &LodayStructure,
    p: &[f64],
    sigma: &Section,
) -> Result<CheckReport> {
    let l = linearize(a, p)?;
    euler_like_check_vector(&l, &sigma.eval(p)?)
}

/// Derivation form: the symbol must vanish at the point with identity
/// linearization, and the matrix part must vanish there.
pub fn euler_like_check_derivation(
    a: &LodayStructure,
    p: &[f64],
    d: &Derivation,
) -> Result<CheckReport> {
    require_singular(a, p)?;
    let n = a.dim();
    let mut symbol = ResidualMax::new("symbol");
    for m in 0..n {
        let (v, grad) = d.symbol().comp(m).eval_with_partials(p)?;
        symbol.update(v.abs(), p);
        for k in 0..n {
            let want = if m == k { 1.0 } else { 0.0 };
            symbol.update((grad[k] - want).abs(), p);
        }
    }
    let mut matrix = ResidualMax::new("matrix");
    for col in d.cols() {
        for k in 0..d.rank() {
            let f = col.comp(k);
            if !f.is_zero() {
                matrix.update(f.eval(p)?.abs(), p);
            }
        }
    }
    let mut report = CheckReport::default();
    report.push(symbol.into_entry(tol::EULER_TOL));
    report.push(matrix.into_entry(tol::EULER_TOL));
    Ok(report)
}

#[derive(Debug, Clone)]
pub struct EulerCandidate {
    pub v: Vec<f64>,
    pub residual: f64,
    pub found: bool,
}

/// Least-squares solve for a bracket-central generator anchoring to the
/// identity. Absence is reported through the residual, never an error.
pub fn find_euler_candidate(l: &LinearModel) -> Result<EulerCandidate> {
    let (r, n) = (l.rank, l.dim);
    let rows = r * r + n * n;
    let mut m = DMatrix::zeros(rows, r);
    let mut rhs = DVector::zeros(rows);
    for j in 0..r {
        for k in 0..r {
            for i in 0..r {
                m[(j * r + k, i)] = l.bracket[i][j][k];
            }
        }
    }
    for a in 0..n {
        for b in 0..n {
            let row = r * r + a * n + b;
            for i in 0..r {
                m[(row, i)] = l.anchor[i][(a, b)];
            }
            rhs[row] = if a == b { 1.0 } else { 0.0 };
        }
    }
    let svd = SVD::new(m.clone(), true, true);
    let v = svd
        .solve(&rhs, 1e-14)
        .map_err(|e| Error::InvalidInput(format!("least squares failed: {e}")))?;
    let residual = (m * &v - rhs).amax();
    Ok(EulerCandidate { v: v.iter().copied().collect(), residual, found: residual <= tol::EULER_FOUND_TOL })
}

/// Max residual of D[a,b] - [Da,b] - [a,Db] over frame pairs, together with
/// the anchor compatibility [X, rho(e_j)] = rho(D e_j) the flow needs to
/// preserve the whole structure.
pub fn linearization_residual(
    a: &LodayStructure,
    d: &Derivation,
    plan: &SamplePlan,
) -> Result<f64> {
    if d.rank() != a.rank() {
        return Err(Error::ShapeMismatch(format!(
            "derivation rank {} against structure rank {}",
            d.rank(),
            a.rank()
        )));
    }
    let r = a.rank();
    let chart = a.chart().clone();
    let frames: Vec<Section> = (0..r).map(|i| Section::frame(&chart, r, i)).collect();
    let mut worst = 0.0f64;
    for ei in &frames {
        for ej in &frames {
            let ld = a.lie_derivative_of_bracket(d, ei, ej)?;
            for q in plan.points() {
                for v in ld.eval(q)? {
                    worst = worst.max(v.abs());
                }
            }
        }
    }
    for ej in &frames {
        let lhs = vf_lie_bracket(d.symbol(), &a.anchor(ej)?);
        let rhs = a.anchor(&d.apply(ej))?;
        for q in plan.points() {
            let (x, y) = (lhs.eval(q)?, rhs.eval(q)?);
            for m in 0..x.len() {
                worst = worst.max((x[m] - y[m]).abs());
            }
        }
    }
    Ok(worst)
}

/// Metric variant: X<a,b> - <Da,b> - <a,Db> over frame pairs.
pub fn isometry_residual(
    c: &CourantStructure,
    d: &Derivation,
    plan: &SamplePlan,
) -> Result<f64> {
    let r = c.rank();
    let chart = c.chart().clone();
    let frames: Vec<Section> = (0..r).map(|i| Section::frame(&chart, r, i)).collect();
    let mut worst = 0.0f64;
    for (i, ei) in frames.iter().enumerate() {
        for ej in frames.iter().skip(i) {
            let pair = c.pairing(ei, ej);
            let xf = pair.differential().contract(d.symbol());
            let ta = c.pairing(&d.apply(ei), ej);
            let tb = c.pairing(ei, &d.apply(ej));
            for q in plan.points() {
                worst = worst.max((xf.eval(q)? - ta.eval(q)? - tb.eval(q)?).abs());
            }
        }
    }
    Ok(worst)
}

/// The constant bracket must satisfy the left Jacobi rule and the anchor
/// jets must pair with reversed matrix commutators: linearizing vector
/// fields at a shared zero reverses composition order, so the anchor rule
/// forces sum_k c_{ij}^k A_k = A_j A_i - A_i A_j.
pub fn leibniz_check(l: &LinearModel) -> CheckReport {
    let r = l.rank;
    let c = &l.bracket;
    let mut jacobi = ResidualMax::new("jacobi");
    for u in 0..r {
        for v in 0..r {
            for w in 0..r {
                for k in 0..r {
                    let t1: f64 = (0..r).map(|m| c[u][v][m] * c[m][w][k]).sum();
                    let t2: f64 = (0..r).map(|m| c[u][w][m] * c[v][m][k]).sum();
                    let t3: f64 = (0..r).map(|m| c[v][w][m] * c[u][m][k]).sum();
                    jacobi.update((t1 + t2 - t3).abs(), &l.point);
                }
            }
        }
    }
    let mut rep = ResidualMax::new("representation");
    for i in 0..r {
        for j in 0..r {
            let mut m = &l.anchor[i] * &l.anchor[j] - &l.anchor[j] * &l.anchor[i];
            for k in 0..r {
                if c[i][j][k] != 0.0 {
                    m += l.anchor[k].scale(c[i][j][k]);
                }
            }
            rep.update(m.amax(), &l.point);
        }
    }
    let mut report = CheckReport::default();
    report.push(jacobi.into_entry(tol::EULER_TOL));
    report.push(rep.into_entry(tol::EULER_TOL));
    report
}
