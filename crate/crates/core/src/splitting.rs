//! Flow boxes, the invariant-section ODE, adapted frames, good sections,
//! and the metric splitting pipeline.
//!
//! Everything here works over a lattice: coefficient data is evaluated
//! wherever the integrator needs it, results are stored as grid-backed
//! fields (cubic interpolation between nodes, so downstream residuals are
//! fourth order in the node spacing).

use crate::chart::Chart;
use crate::courant::CourantStructure;
use crate::error::Error;
use crate::expr::Expr;
use crate::field::{vf_lie_bracket, OneForm, ScalarField, VectorField};
use crate::grid::{GridAxis, GridTable};
use crate::loday::{LodayStructure, Section};
use crate::plan::SamplePlan;
use crate::product::{
    classify_decomposition, direct_product_courant, max_courant_deviation, FrameSplit,
};
use crate::report::{CheckReport, ResidualMax};
use crate::tol;
use crate::zoo;
use crate::Result;
use nalgebra::{DMatrix, DVector};
use std::sync::Arc;

// ---------------------------------------------------------------------------
// lattice bookkeeping

struct Lattice {
    axes: Vec<GridAxis>,
    counts: Vec<usize>,
    total: usize,
}

fn lattice(chart: &Chart, counts: &[usize]) -> Result<Lattice> {
    if counts.len() != chart.dim() {
        return Err(Error::ShapeMismatch(format!(
            "{} lattice counts for chart dim {}",
            counts.len(),
            chart.dim()
        )));
    }
    if let Some(&c) = counts.iter().find(|&&c| c < 8) {
        return Err(Error::InvalidInput(format!("lattice wants >= 8 nodes per axis, got {c}")));
    }
    let axes = (0..chart.dim())
        .map(|i| {
            let (lo, hi) = chart.interval(i);
            GridAxis { chart_axis: i, lo, hi, count: counts[i] }
        })
        .collect();
    Ok(Lattice { axes, counts: counts.to_vec(), total: counts.iter().product() })
}

impl Lattice {
    /// Node coordinates for a flat index; row-major, last axis fastest, the
    /// same layout `GridTable` stores.
    fn point(&self, flat: usize) -> Vec<f64> {
        let mut q = vec![0.0; self.axes.len()];
        let mut rem = flat;
        for d in (0..self.axes.len()).rev() {
            let i = rem % self.counts[d];
            rem /= self.counts[d];
            q[self.axes[d].chart_axis] = self.axes[d].node(i);
        }
        q
    }

    fn spacing(&self) -> f64 {
        self.axes
            .iter()
            .map(|a| (a.hi - a.lo) / ((a.count - 1) as f64))
            .fold(0.0, f64::max)
    }
}

/// Grid field that collapses to a constant when the samples are constant.
fn collapse(chart: &Arc<Chart>, axes: &[GridAxis], values: Vec<f64>) -> Result<ScalarField> {
    let first = values[0];
    if values.iter().all(|v| *v == first) {
        return Ok(ScalarField::constant(chart, first));
    }
    ScalarField::from_grid(chart, GridTable::new(axes.to_vec(), values)?)
}

fn resample_collapse(f: &ScalarField, counts: &[usize]) -> Result<ScalarField> {
    match f.repr() {
        Expr::Const(_) => Ok(f.clone()),
        _ => f.resample(counts),
    }
}

fn lattice_min_abs(f: &ScalarField, lat: &Lattice) -> Result<f64> {
    let mut worst = f64::INFINITY;
    for flat in 0..lat.total {
        worst = worst.min(f.eval(&lat.point(flat))?.abs());
    }
    Ok(worst)
}

/// 0, then 2^-20 .. 2^6 ascending: the perturbation weights tried when a
/// basis vector has to be tilted toward a reference direction.
fn eps_ladder() -> impl Iterator<Item = f64> {
    std::iter::once(0.0).chain((-6i32..=20).rev().map(|k| 2.0f64.powi(-k)))
}

fn grid_spacing_of(a: &LodayStructure, extra: &Section) -> Option<f64> {
    let mut h = a.max_grid_spacing();
    for f in extra.comps() {
        h = match (h, f.max_grid_spacing()) {
            (Some(x), Some(y)) => Some(x.max(y)),
            (x, y) => x.or(y),
        };
    }
    h
}

// ---------------------------------------------------------------------------
// the invariant-section ODE

/// Max deviation of `anchor(alpha)` from the first coordinate axis.
fn flow_box_residual(a: &LodayStructure, alpha: &Section, plan: &SamplePlan) -> Result<f64> {
    let rho = a.anchor(alpha)?;
    let mut worst = 0.0f64;
    for q in plan.points() {
        for (m, x) in rho.eval(q)?.iter().enumerate() {
            let want = if m == 0 { 1.0 } else { 0.0 };
            worst = worst.max((x - want).abs());
        }
    }
    Ok(worst)
}

/// One RK4 step of the linear system db/dt = -G(t,x)^T b, where
/// G_j^k = [alpha, e_j]^k. `q` is a workspace point whose first coordinate
/// is overwritten per stage. Guards against steps the lattice cannot resolve.
fn rk4_linear(
    gcoef: &[Vec<ScalarField>],
    q: &mut [f64],
    t0: f64,
    t1: f64,
    b: &mut [f64],
) -> Result<()> {
    let h = t1 - t0;
    if h == 0.0 {
        return Ok(());
    }
    let r = b.len();
    let stage = |t: f64, bs: &[f64], q: &mut [f64]| -> Result<Vec<f64>> {
        q[0] = t;
        let mut out = vec![0.0; r];
        let mut mag = 0.0f64;
        for (j, row) in gcoef.iter().enumerate() {
            for (k, g) in row.iter().enumerate() {
                if g.is_zero() {
                    continue;
                }
                let val = g.eval(q)?;
                mag = mag.max(val.abs());
                out[k] -= bs[j] * val;
            }
        }
        if mag * h.abs() > tol::STIFFNESS_LIMIT {
            return Err(Error::Stiffness(mag * h.abs()));
        }
        Ok(out)
    };
    let axpy = |y: &[f64], c: f64, d: &[f64]| -> Vec<f64> {
        y.iter().zip(d).map(|(a, b)| a + c * b).collect()
    };
    let k1 = stage(t0, b, q)?;
    let k2 = stage(t0 + h / 2.0, &axpy(b, h / 2.0, &k1), q)?;
    let k3 = stage(t0 + h / 2.0, &axpy(b, h / 2.0, &k2), q)?;
    let k4 = stage(t1, &axpy(b, h, &k3), q)?;
    for k in 0..r {
        b[k] += h / 6.0 * (k1[k] + 2.0 * k2[k] + 2.0 * k3[k] + k4[k]);
    }
    Ok(())
}

/// Solve [alpha, b] = 0 with b(0, x) = v, marching RK4 along the first
/// coordinate from the t = 0 hyperplane through every transversal node.
///
/// Requires `anchor(alpha) = d/dt` on the box (flow-box coordinates). The
/// result has grid-backed components; residuals of [alpha, b] away from the
/// nodes are fourth order in the spacing.
pub fn solve_invariant_section(
    a: &LodayStructure,
    alpha: &Section,
    v: &[f64],
    counts: &[usize],
) -> Result<Section> {
    let chart = a.chart().clone();
    if alpha.chart() != &chart {
        return Err(Error::ChartMismatch("section lives on a different chart".into()));
    }
    let r = a.rank();
    if v.len() != r {
        return Err(Error::ShapeMismatch(format!(
            "initial value has {} components, rank is {r}",
            v.len()
        )));
    }
    let lat = lattice(&chart, counts)?;
    let (t_lo, t_hi) = chart.interval(0);
    if t_lo > 0.0 || t_hi < 0.0 {
        return Err(Error::Precondition(
            "the initial hyperplane t = 0 must lie inside the box".into(),
        ));
    }
    let pre_tol = tol::check_tol(grid_spacing_of(a, alpha));
    let plan = SamplePlan::new(&chart, 11, 16);
    let res = flow_box_residual(a, alpha, &plan)?;
    if res > pre_tol {
        return Err(Error::Precondition(format!(
            "anchor of the section deviates from d/dt by {res:.3e}; not a flow box"
        )));
    }
    let mut gcoef = Vec::with_capacity(r);
    for j in 0..r {
        gcoef.push(a.bracket(alpha, &Section::frame(&chart, r, j))?.comps().to_vec());
    }
    let nt = counts[0];
    let ht = (t_hi - t_lo) / (nt - 1) as f64;
    let tnodes: Vec<f64> = (0..nt).map(|i| t_lo + ht * i as f64).collect();
    let trans_total = lat.total / nt;
    let mut values: Vec<Vec<f64>> = vec![vec![0.0; lat.total]; r];
    for w in 0..trans_total {
        let mut q = lat.point(w);
        for pass in 0..2 {
            let forward = pass == 0;
            let mut t = 0.0;
            let mut b = v.to_vec();
            let its: Vec<usize> = if forward {
                (0..nt).filter(|&i| tnodes[i] >= 0.0).collect()
            } else {
                (0..nt).rev().filter(|&i| tnodes[i] < 0.0).collect()
            };
            for it in its {
                rk4_linear(&gcoef, &mut q, t, tnodes[it], &mut b)?;
                t = tnodes[it];
                for k in 0..r {
                    values[k][it * trans_total + w] = b[k];
                }
            }
        }
    }
    let comps = values
        .into_iter()
        .map(|vals| collapse(&chart, &lat.axes, vals))
        .collect::<Result<Vec<_>>>()?;
    Ok(Section::new(chart, comps))
}

// ---------------------------------------------------------------------------
// flow boxes

/// Straightening coordinates for a nonvanishing vector field: the new chart
/// is ("t", "u1", ...) with the field equal to d/dt, `forward` maps new
/// coordinates to old ones by integrating the field from the transversal
/// hyperplane through the base point, and `inverse` goes back on a smaller
/// box around the base point (solved per node by Newton iteration).
#[derive(Debug, Clone)]
pub struct FlowBox {
    pub source: Arc<Chart>,
    pub chart: Arc<Chart>,
    /// Source axis replaced by the time coordinate.
    pub axis: usize,
    pub forward: Vec<ScalarField>,
    pub inverse_chart: Arc<Chart>,
    pub inverse: Vec<ScalarField>,
}

fn rk4_flow(x: &VectorField, y: &[f64], h: f64) -> Result<Vec<f64>> {
    let axpy = |y: &[f64], c: f64, d: &[f64]| -> Vec<f64> {
        y.iter().zip(d).map(|(a, b)| a + c * b).collect()
    };
    let k1 = x.eval(y)?;
    let k2 = x.eval(&axpy(y, h / 2.0, &k1))?;
    let k3 = x.eval(&axpy(y, h / 2.0, &k2))?;
    let k4 = x.eval(&axpy(y, h, &k3))?;
    Ok((0..y.len())
        .map(|i| y[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect())
}

pub fn numeric_flow_box(x: &VectorField, p: &[f64], counts: &[usize]) -> Result<FlowBox> {
    let src = x.chart().clone();
    src.contains(p)?;
    let n = src.dim();
    if counts.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "{} lattice counts for chart dim {n}",
            counts.len()
        )));
    }
    let xp = x.eval(p)?;
    let axis = (0..n).max_by(|&a, &b| xp[a].abs().total_cmp(&xp[b].abs())).unwrap();
    if xp[axis].abs() < tol::ANCHOR_MIN {
        return Err(Error::Transversality(format!(
            "flow field vanishes at the base point (|X| = {:.3e})",
            xp[axis].abs()
        )));
    }
    // Margins to the walls; the transversal box keeps 45% of the shorter one.
    let mut margin = vec![0.0; n];
    for o in 0..n {
        let (lo, hi) = src.interval(o);
        margin[o] = (p[o] - lo).min(hi - p[o]);
        if margin[o] < 1e-9 * (hi - lo) {
            return Err(Error::Precondition(format!(
                "base point sits on the boundary along `{}`",
                src.name(o)
            )));
        }
    }
    let others: Vec<usize> = (0..n).filter(|&o| o != axis).collect();
    let speed_plan = SamplePlan::new(&src, 1, 33);
    let mut speed = xp.iter().fold(0.0f64, |m, c| m.max(c.abs()));
    for q in speed_plan.points() {
        for c in x.eval(q)? {
            speed = speed.max(c.abs());
        }
    }
    let dmin = margin.iter().fold(f64::INFINITY, |m, &d| m.min(d));
    let mut tmax = 0.45 * dmin / speed;

    let mut names = vec!["t".to_string()];
    for (d, _) in others.iter().enumerate() {
        names.push(format!("u{}", d + 1));
    }
    let mut escape = Ok(());
    for _attempt in 0..12 {
        let mut bounds = vec![(-tmax, tmax)];
        for &o in &others {
            bounds.push((p[o] - 0.45 * margin[o], p[o] + 0.45 * margin[o]));
        }
        let chart = Chart::new(names.clone(), bounds)?;
        let lat = lattice(&chart, counts)?;
        let nt = counts[0];
        let trans_total = lat.total / nt;
        let tnodes: Vec<f64> = (0..nt).map(|i| lat.axes[0].node(i)).collect();
        let mut vals: Vec<Vec<f64>> = vec![vec![0.0; lat.total]; n];
        let mut lo_im = vec![f64::INFINITY; n];
        let mut hi_im = vec![f64::NEG_INFINITY; n];
        let mut run = || -> Result<()> {
            for w in 0..trans_total {
                let pnew = lat.point(w);
                let mut y0 = p.to_vec();
                for (d, &o) in others.iter().enumerate() {
                    y0[o] = pnew[1 + d];
                }
                for pass in 0..2 {
                    let forward = pass == 0;
                    let mut t = 0.0;
                    let mut y = y0.clone();
                    let its: Vec<usize> = if forward {
                        (0..nt).filter(|&i| tnodes[i] >= 0.0).collect()
                    } else {
                        (0..nt).rev().filter(|&i| tnodes[i] < 0.0).collect()
                    };
                    for it in its {
                        if tnodes[it] != t {
                            y = rk4_flow(x, &y, tnodes[it] - t)?;
                            t = tnodes[it];
                        }
                        src.contains(&y)?;
                        for o in 0..n {
                            vals[o][it * trans_total + w] = y[o];
                            lo_im[o] = lo_im[o].min(y[o]);
                            hi_im[o] = hi_im[o].max(y[o]);
                        }
                    }
                }
            }
            Ok(())
        };
        match run() {
            Ok(()) => {}
            Err(Error::OutsideDomain { .. }) => {
                tmax *= 0.6;
                escape = Err(Error::Transversality(
                    "flow leaves the box even for the shortest time interval".into(),
                ));
                continue;
            }
            Err(e) => return Err(e),
        }
        let forward = (0..n)
            .map(|o| collapse(&chart, &lat.axes, std::mem::take(&mut vals[o])))
            .collect::<Result<Vec<_>>>()?;
        let (inverse_chart, inverse) =
            invert_flow_map(&src, &chart, &forward, p, &lo_im, &hi_im, &others)?;
        return Ok(FlowBox { source: src, chart, axis, forward, inverse_chart, inverse });
    }
    escape.map(|_| unreachable!())
}

fn invert_flow_map(
    src: &Arc<Chart>,
    chart: &Arc<Chart>,
    forward: &[ScalarField],
    p: &[f64],
    lo_im: &[f64],
    hi_im: &[f64],
    others: &[usize],
) -> Result<(Arc<Chart>, Vec<ScalarField>)> {
    let n = src.dim();
    let dfwd: Vec<Vec<ScalarField>> =
        forward.iter().map(|f| (0..n).map(|m| f.deriv(m)).collect()).collect();
    let mut half: Vec<f64> = (0..n)
        .map(|o| 0.35 * (p[o] - lo_im[o]).min(hi_im[o] - p[o]))
        .collect();
    if half.iter().any(|&w| w < 1e-12) {
        return Err(Error::Transversality("flow image collapses along an axis".into()));
    }
    'attempt: for _ in 0..12 {
        let bounds: Vec<(f64, f64)> = (0..n).map(|o| (p[o] - half[o], p[o] + half[o])).collect();
        let inv_chart = Chart::new(src.names().to_vec(), bounds)?;
        let lat = lattice(&inv_chart, &vec![9; n])?;
        let mut vals: Vec<Vec<f64>> = vec![vec![0.0; lat.total]; n];
        for flat in 0..lat.total {
            let target = lat.point(flat);
            match newton_invert(forward, &dfwd, chart, &target, p, others) {
                Ok(y) => {
                    for m in 0..n {
                        vals[m][flat] = y[m];
                    }
                }
                Err(_) => {
                    for w in half.iter_mut() {
                        *w *= 0.6;
                    }
                    continue 'attempt;
                }
            }
        }
        let inverse = (0..n)
            .map(|m| collapse(&inv_chart, &lat.axes, std::mem::take(&mut vals[m])))
            .collect::<Result<Vec<_>>>()?;
        return Ok((inv_chart, inverse));
    }
    Err(Error::Transversality("inverse of the flow map did not converge on any sub-box".into()))
}

fn newton_invert(
    forward: &[ScalarField],
    dfwd: &[Vec<ScalarField>],
    chart: &Arc<Chart>,
    target: &[f64],
    p: &[f64],
    others: &[usize],
) -> Result<Vec<f64>> {
    let n = target.len();
    let clamp = |y: &mut Vec<f64>| {
        for m in 0..n {
            let (lo, hi) = chart.interval(m);
            y[m] = y[m].clamp(lo, hi);
        }
    };
    let mut y = vec![0.0; n];
    for (d, &o) in others.iter().enumerate() {
        y[1 + d] = target[o];
    }
    clamp(&mut y);
    let scale = 1.0 + target.iter().fold(0.0f64, |m, t| m.max(t.abs()));
    let _ = p;
    for _ in 0..40 {
        let mut resid = DVector::zeros(n);
        let mut worst = 0.0f64;
        for o in 0..n {
            let v = target[o] - forward[o].eval(&y)?;
            worst = worst.max(v.abs());
            resid[o] = v;
        }
        if worst <= 1e-11 * scale {
            return Ok(y);
        }
        let mut jac = DMatrix::zeros(n, n);
        for o in 0..n {
            for m in 0..n {
                jac[(o, m)] = dfwd[o][m].eval(&y)?;
            }
        }
        let step = jac
            .lu()
            .solve(&resid)
            .ok_or_else(|| Error::Transversality("flow jacobian is singular".into()))?;
        for m in 0..n {
            y[m] += step[m];
        }
        clamp(&mut y);
    }
    Err(Error::Transversality("inverse iteration did not converge".into()))
}

// ---------------------------------------------------------------------------
// transporting a structure into flow-box coordinates

/// Pull every structure field back along the forward flow map and rotate the
/// coordinate slots by the flow jacobian: scalars compose, anchor columns and
/// co-anchor covector slots pick up (Dpsi)^-1.
pub fn transport_loday(
    a: &LodayStructure,
    flow: &FlowBox,
    counts: &[usize],
) -> Result<LodayStructure> {
    let (base, _) = transport_impl(a, None, flow, counts)?;
    Ok(base)
}

pub fn transport_courant(
    c: &CourantStructure,
    flow: &FlowBox,
    counts: &[usize],
) -> Result<CourantStructure> {
    let (base, metric) = transport_impl(c.base(), Some(c.metric_fields()), flow, counts)?;
    CourantStructure::new(base, metric.unwrap())
}

fn transport_impl(
    a: &LodayStructure,
    metric: Option<&[Vec<ScalarField>]>,
    flow: &FlowBox,
    counts: &[usize],
) -> Result<(LodayStructure, Option<Vec<Vec<ScalarField>>>)> {
    if a.chart() != &flow.source {
        return Err(Error::ChartMismatch(
            "structure lives on a different chart than the flow box".into(),
        ));
    }
    let chart = flow.chart.clone();
    let n = chart.dim();
    let r = a.rank();
    let lat = lattice(&chart, counts)?;
    let dfwd: Vec<Vec<ScalarField>> =
        flow.forward.iter().map(|f| (0..n).map(|m| f.deriv(m)).collect()).collect();

    let live_gamma: Vec<bool> = (0..r * r * r)
        .map(|idx| !a.gamma(idx / (r * r), idx / r % r, idx % r).is_zero())
        .collect();
    let live_theta: Vec<bool> =
        (0..r).map(|i| (0..n).any(|o| !a.theta(i, o).is_zero())).collect();
    let live_lambda: Vec<bool> = (0..r * r * r)
        .map(|idx| {
            let (i, j, l) = (idx / (r * r), idx / r % r, idx % r);
            (0..n).any(|o| !a.lambda(o, i, j, l).is_zero())
        })
        .collect();
    let live_metric: Vec<bool> = match metric {
        Some(g) => (0..r * r).map(|idx| !g[idx / r][idx % r].is_zero()).collect(),
        None => Vec::new(),
    };

    let alloc = |live: &[bool], width: usize| -> Vec<Option<Vec<f64>>> {
        live.iter()
            .flat_map(|&l| std::iter::repeat(l).take(width))
            .map(|l| if l { Some(vec![0.0; lat.total]) } else { None })
            .collect()
    };
    let mut gv = alloc(&live_gamma, 1);
    let mut tv = alloc(&live_theta, n);
    let mut lv = alloc(&live_lambda, n); // index ((i*r + j)*r + l)*n + m
    let mut mv = alloc(&live_metric, 1);

    let src = &flow.source;
    for flat in 0..lat.total {
        let y = lat.point(flat);
        let mut xq = vec![0.0; n];
        for o in 0..n {
            let (lo, hi) = src.interval(o);
            xq[o] = flow.forward[o].eval(&y)?.clamp(lo, hi);
        }
        let mut jfor = DMatrix::zeros(n, n);
        for o in 0..n {
            for m in 0..n {
                jfor[(o, m)] = dfwd[o][m].eval(&y)?;
            }
        }
        let jinv = jfor
            .try_inverse()
            .ok_or_else(|| Error::Transversality("flow jacobian is singular on the box".into()))?;
        for idx in 0..r * r * r {
            if live_gamma[idx] {
                let (i, j, k) = (idx / (r * r), idx / r % r, idx % r);
                gv[idx].as_mut().unwrap()[flat] = a.gamma(i, j, k).eval(&xq)?;
            }
        }
        let mut tmp = vec![0.0; n];
        for i in 0..r {
            if !live_theta[i] {
                continue;
            }
            for o in 0..n {
                let f = a.theta(i, o);
                tmp[o] = if f.is_zero() { 0.0 } else { f.eval(&xq)? };
            }
            for m in 0..n {
                tv[i * n + m].as_mut().unwrap()[flat] =
                    (0..n).map(|o| jinv[(m, o)] * tmp[o]).sum();
            }
        }
        for idx in 0..r * r * r {
            if !live_lambda[idx] {
                continue;
            }
            let (i, j, l) = (idx / (r * r), idx / r % r, idx % r);
            for o in 0..n {
                let f = a.lambda(o, i, j, l);
                tmp[o] = if f.is_zero() { 0.0 } else { f.eval(&xq)? };
            }
            for m in 0..n {
                lv[idx * n + m].as_mut().unwrap()[flat] =
                    (0..n).map(|o| jinv[(m, o)] * tmp[o]).sum();
            }
        }
        if let Some(g) = metric {
            for idx in 0..r * r {
                if live_metric[idx] {
                    mv[idx].as_mut().unwrap()[flat] = g[idx / r][idx % r].eval(&xq)?;
                }
            }
        }
    }

    let field_of = |buf: &mut Option<Vec<f64>>| -> Result<ScalarField> {
        match buf.take() {
            Some(vals) => collapse(&chart, &lat.axes, vals),
            None => Ok(ScalarField::zero(&chart)),
        }
    };
    let mut gamma = vec![vec![vec![ScalarField::zero(&chart); r]; r]; r];
    for idx in 0..r * r * r {
        gamma[idx / (r * r)][idx / r % r][idx % r] = field_of(&mut gv[idx])?;
    }
    let mut theta = vec![vec![ScalarField::zero(&chart); n]; r];
    for i in 0..r {
        for m in 0..n {
            theta[i][m] = field_of(&mut tv[i * n + m])?;
        }
    }
    let mut lam = vec![vec![vec![vec![ScalarField::zero(&chart); r]; r]; r]; n];
    for idx in 0..r * r * r {
        let (i, j, l) = (idx / (r * r), idx / r % r, idx % r);
        for m in 0..n {
            lam[m][i][j][l] = field_of(&mut lv[idx * n + m])?;
        }
    }
    let base = LodayStructure::new(chart.clone(), r, gamma, theta, lam)?;
    let metric_out = match metric {
        Some(_) => {
            let mut g = vec![vec![ScalarField::zero(&chart); r]; r];
            for idx in 0..r * r {
                g[idx / r][idx % r] = field_of(&mut mv[idx])?;
            }
            Some(g)
        }
        None => None,
    };
    Ok((base, metric_out))
}

// ---------------------------------------------------------------------------
// change of frame

/// Express the structure in a new frame, solving per lattice node: brackets
/// of frame rows give the new structure functions, anchors give the new
/// anchor rows, and co-anchor values are rotated into the new frame. The
/// rows are resampled onto the lattice first and returned alongside.
pub fn change_frame_loday(
    a: &LodayStructure,
    frame: &[Section],
    counts: &[usize],
) -> Result<(LodayStructure, Vec<Vec<ScalarField>>)> {
    let chart = a.chart().clone();
    let n = chart.dim();
    let r = a.rank();
    if frame.len() != r {
        return Err(Error::ShapeMismatch(format!(
            "{} frame rows for rank {r}",
            frame.len()
        )));
    }
    for s in frame {
        if s.chart() != &chart {
            return Err(Error::ChartMismatch("frame row on a different chart".into()));
        }
    }
    let lat = lattice(&chart, counts)?;
    let rows: Vec<Vec<ScalarField>> = frame
        .iter()
        .map(|s| s.comps().iter().map(|f| resample_collapse(f, counts)).collect())
        .collect::<Result<Vec<Vec<_>>>>()?;
    let rsec: Vec<Section> =
        rows.iter().map(|c| Section::new(chart.clone(), c.clone())).collect();

    let mut brackets = Vec::with_capacity(r * r);
    for i in 0..r {
        for j in 0..r {
            brackets.push(a.bracket(&rsec[i], &rsec[j])?);
        }
    }
    let mut anchors = Vec::with_capacity(r);
    for s in &rsec {
        anchors.push(a.anchor(s)?);
    }
    let mut coanchors = Vec::with_capacity(n * r * r);
    for m in 0..n {
        let dym = OneForm::coordinate_differential(&chart, m);
        for i in 0..r {
            for j in 0..r {
                coanchors.push(a.coanchor(&dym, &rsec[i], &rsec[j])?);
            }
        }
    }

    let mut gv: Vec<Option<Vec<f64>>> = brackets
        .iter()
        .flat_map(|b| std::iter::repeat(!b.is_zero()).take(r))
        .map(|l| if l { Some(vec![0.0; lat.total]) } else { None })
        .collect();
    let mut tv: Vec<Option<Vec<f64>>> = anchors
        .iter()
        .flat_map(|v| v.comps().iter().map(|f| !f.is_zero()))
        .map(|l| if l { Some(vec![0.0; lat.total]) } else { None })
        .collect();
    let mut lv: Vec<Option<Vec<f64>>> = coanchors
        .iter()
        .flat_map(|b| std::iter::repeat(!b.is_zero()).take(r))
        .map(|l| if l { Some(vec![0.0; lat.total]) } else { None })
        .collect();

    for flat in 0..lat.total {
        let y = lat.point(flat);
        let mut mat = DMatrix::zeros(r, r);
        for k in 0..r {
            for l in 0..r {
                mat[(l, k)] = rows[k][l].eval(&y)?;
            }
        }
        let det = mat.determinant();
        if det.abs() < tol::DET_MIN {
            return Err(Error::FrameSingular { det, point: y });
        }
        let lu = mat.lu();
        let solve_into = |sec: &Section, buf: &mut [Option<Vec<f64>>]| -> Result<()> {
            if sec.is_zero() {
                return Ok(());
            }
            let mut rhs = DVector::zeros(r);
            for l in 0..r {
                rhs[l] = sec.comp(l).eval(&y)?;
            }
            let sol = lu
                .solve(&rhs)
                .ok_or(Error::FrameSingular { det, point: y.clone() })?;
            for (k, slot) in buf.iter_mut().enumerate() {
                if let Some(vals) = slot {
                    vals[flat] = sol[k];
                }
            }
            Ok(())
        };
        for (ij, b) in brackets.iter().enumerate() {
            solve_into(b, &mut gv[ij * r..(ij + 1) * r])?;
        }
        for (ij, b) in coanchors.iter().enumerate() {
            solve_into(b, &mut lv[ij * r..(ij + 1) * r])?;
        }
        for (i, v) in anchors.iter().enumerate() {
            for m in 0..n {
                if let Some(vals) = &mut tv[i * n + m] {
                    vals[flat] = v.comp(m).eval(&y)?;
                }
            }
        }
    }

    let field_of = |buf: &mut Option<Vec<f64>>| -> Result<ScalarField> {
        match buf.take() {
            Some(vals) => collapse(&chart, &lat.axes, vals),
            None => Ok(ScalarField::zero(&chart)),
        }
    };
    let mut gamma = vec![vec![vec![ScalarField::zero(&chart); r]; r]; r];
    for i in 0..r {
        for j in 0..r {
            for k in 0..r {
                gamma[i][j][k] = field_of(&mut gv[(i * r + j) * r + k])?;
            }
        }
    }
    let mut theta = vec![vec![ScalarField::zero(&chart); n]; r];
    for i in 0..r {
        for m in 0..n {
            theta[i][m] = field_of(&mut tv[i * n + m])?;
        }
    }
    let mut lam = vec![vec![vec![vec![ScalarField::zero(&chart); r]; r]; r]; n];
    for m in 0..n {
        for i in 0..r {
            for j in 0..r {
                for l in 0..r {
                    lam[m][i][j][l] = field_of(&mut lv[((m * r + i) * r + j) * r + l])?;
                }
            }
        }
    }
    Ok((LodayStructure::new(chart, r, gamma, theta, lam)?, rows))
}

pub fn change_frame_courant(
    c: &CourantStructure,
    frame: &[Section],
    counts: &[usize],
) -> Result<(CourantStructure, Vec<Vec<ScalarField>>)> {
    let (base, rows) = change_frame_loday(c.base(), frame, counts)?;
    let chart = c.chart().clone();
    let rsec: Vec<Section> =
        rows.iter().map(|r| Section::new(chart.clone(), r.clone())).collect();
    let r = c.rank();
    // The pairing is symmetric; build the upper triangle and mirror it so the
    // two entries share one representation.
    let mut metric = vec![vec![ScalarField::zero(&chart); r]; r];
    for i in 0..r {
        for j in i..r {
            let f = resample_collapse(&c.pairing(&rsec[i], &rsec[j]), counts)?;
            metric[i][j] = f.clone();
            metric[j][i] = f;
        }
    }
    Ok((CourantStructure::new(base, metric)?, rows))
}

// ---------------------------------------------------------------------------
// adapted frames

/// Frame produced by straightening along a flow section: `beta0` is the
/// normalized time-like row, `frame` spans the transversal sub-bundle with
/// [alpha, beta_i] = 0 and anchor(beta_i) t = 0.
#[derive(Debug, Clone)]
pub struct AdaptedFrame {
    pub beta0: Section,
    pub frame: Vec<Section>,
    pub report: CheckReport,
}

/// Build a frame commuting with `alpha` out of invariant sections seeded at
/// the base point, then normalize the time components away.
///
/// Requires flow-box coordinates for `alpha`, a bracket-compatible anchor,
/// and a vanishing jacobiator against `alpha` (the ODE solutions could not
/// commute otherwise).
pub fn adapted_frame(
    a: &LodayStructure,
    alpha: &Section,
    p: &[f64],
    counts: &[usize],
) -> Result<AdaptedFrame> {
    let chart = a.chart().clone();
    chart.contains(p)?;
    if alpha.chart() != &chart {
        return Err(Error::ChartMismatch("section lives on a different chart".into()));
    }
    let r = a.rank();
    let lat = lattice(&chart, counts)?;
    let pre_tol = tol::check_tol(grid_spacing_of(a, alpha));
    let plan = SamplePlan::new(&chart, 11, 16);
    let res = flow_box_residual(a, alpha, &plan)?;
    if res > pre_tol {
        return Err(Error::Precondition(format!(
            "anchor of the section deviates from d/dt by {res:.3e}; not a flow box"
        )));
    }
    let jac_tol = tol::JACOBI_PRE_TOL.max(pre_tol);
    let frames: Vec<Section> = (0..r).map(|i| Section::frame(&chart, r, i)).collect();
    let mut worst_jac = 0.0f64;
    for ei in &frames {
        for ej in &frames {
            let j = a.jacobiator(alpha, ei, ej)?;
            for q in plan.points() {
                for v in j.eval(q)? {
                    worst_jac = worst_jac.max(v.abs());
                }
            }
        }
    }
    if worst_jac > jac_tol {
        return Err(Error::Precondition(format!(
            "jacobiator against the section reaches {worst_jac:.3e}; invariant sections cannot commute"
        )));
    }
    let mut worst_mor = 0.0f64;
    for ei in &frames {
        let rho_i = a.anchor(ei)?;
        for ej in &frames {
            let lhs = a.anchor(&a.bracket(ei, ej)?)?;
            let rhs = vf_lie_bracket(&rho_i, &a.anchor(ej)?);
            for q in plan.points() {
                let (x, y) = (lhs.eval(q)?, rhs.eval(q)?);
                for m in 0..x.len() {
                    worst_mor = worst_mor.max((x[m] - y[m]).abs());
                }
            }
        }
    }
    if worst_mor > jac_tol {
        return Err(Error::Precondition(format!(
            "anchor is not bracket-compatible (residual {worst_mor:.3e})"
        )));
    }

    // Basis at the base point: the section value plus coordinate frames,
    // dropping the one it already leans on.
    let ap = alpha.eval(p)?;
    let i0 = (0..r).max_by(|&x, &y| ap[x].abs().total_cmp(&ap[y].abs())).unwrap();
    let mut basis: Vec<Vec<f64>> = vec![ap.clone()];
    for i in 0..r {
        if i != i0 {
            let mut e = vec![0.0; r];
            e[i] = 1.0;
            basis.push(e);
        }
    }
    let mut th0 = vec![0.0; r];
    for (k, t) in th0.iter_mut().enumerate() {
        *t = a.theta(k, 0).eval(p)?;
    }
    let rho_t = |w: &[f64]| -> f64 { w.iter().zip(&th0).map(|(a, b)| a * b).sum() };
    let scale = basis.iter().map(|v| rho_t(v).abs()).fold(1.0f64, f64::max);
    let rt_alpha = rho_t(&ap);
    let eps = eps_ladder()
        .find(|e| {
            basis[1..]
                .iter()
                .all(|v| (rho_t(v) + e * rt_alpha).abs() >= 0.1 * scale)
        })
        .ok_or_else(|| {
            Error::Transversality("no tilt of the basis stays transversal to the flow".into())
        })?;
    for v in basis[1..].iter_mut() {
        for (k, a) in v.iter_mut().zip(&ap) {
            *k += eps * a;
        }
    }

    let tilde = basis
        .iter()
        .map(|v| solve_invariant_section(a, alpha, v, counts))
        .collect::<Result<Vec<_>>>()?;
    let mut denom = Vec::with_capacity(r);
    for s in &tilde {
        let mut d = ScalarField::zero(&chart);
        for k in 0..r {
            let t = a.theta(k, 0);
            if t.is_zero() || s.comp(k).is_zero() {
                continue;
            }
            d = d.add(&s.comp(k).mul(t));
        }
        let min = lattice_min_abs(&d, &lat)?;
        if min < tol::ANCHOR_MIN {
            return Err(Error::Transversality(format!(
                "normal component of an invariant section dips to {min:.3e} on the box"
            )));
        }
        denom.push(d);
    }
    let one = ScalarField::constant(&chart, 1.0);
    let beta0 = tilde[0].scale_field(&one.div(&denom[0]));
    // Constant rescaling keeps [alpha, beta] = 0 and anchor(beta) t = 0 but
    // stops the tilt divisions from inflating the rows (and with them the
    // rounding noise of everything induced).
    let betas: Vec<Section> = (1..r)
        .map(|i| {
            let b = tilde[i].scale_field(&one.div(&denom[i])).sub(&beta0);
            let m = b.eval(p)?.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            Ok(if m > tol::ANCHOR_MIN { b.scale(1.0 / m) } else { b })
        })
        .collect::<Result<Vec<_>>>()?;

    let rep_plan = SamplePlan::new(&chart, 3, 33);
    let tol_lat = tol::REL_TOL.max(tol::grid_tol(lat.spacing()));
    let mut report = CheckReport::default();
    let mut commute = ResidualMax::new("frame-commute");
    let mut normalized = ResidualMax::new("frame-normalized");
    for (i, b) in std::iter::once(&beta0).chain(betas.iter()).enumerate() {
        let br = a.bracket(alpha, b)?;
        let rho = a.anchor(b)?;
        let want_t = if i == 0 { 1.0 } else { 0.0 };
        for q in rep_plan.points() {
            for v in br.eval(q)? {
                commute.update(v.abs(), q);
            }
            normalized.update((rho.comp(0).eval(q)? - want_t).abs(), q);
        }
    }
    report.push(commute.into_entry(tol_lat));
    report.push(normalized.into_entry(tol_lat));

    let mut lemma_frame = vec![alpha.clone()];
    lemma_frame.extend(betas.iter().cloned());
    let (induced, _) = change_frame_loday(a, &lemma_frame, counts)?;
    let mut gsteady = ResidualMax::new("frame-gamma-steady");
    let mut tsteady = ResidualMax::new("frame-theta-steady");
    for i in 0..r {
        for m in 0..chart.dim() {
            let f = a.theta(i, m);
            let _ = f;
            let g = induced.theta(i, m);
            if g.is_zero() {
                continue;
            }
            let d = g.deriv(0);
            for q in rep_plan.points() {
                tsteady.update(d.eval(q)?.abs(), q);
            }
        }
        for j in 0..r {
            for k in 0..r {
                let g = induced.gamma(i, j, k);
                if g.is_zero() {
                    continue;
                }
                let d = g.deriv(0);
                for q in rep_plan.points() {
                    gsteady.update(d.eval(q)?.abs(), q);
                }
            }
        }
    }
    report.push(gsteady.into_entry(tol_lat));
    report.push(tsteady.into_entry(tol_lat));
    Ok(AdaptedFrame { beta0, frame: betas, report })
}

// ---------------------------------------------------------------------------
// good sections

/// A flow section in straightened coordinates: anchored to d/dt, null, and
/// self-commuting, together with the transported structure it lives on.
#[derive(Debug, Clone)]
pub struct GoodSection {
    pub structure: CourantStructure,
    pub alpha: Section,
    /// Constant frame coefficients of the seed the section was built from.
    pub seed: Vec<f64>,
    /// Sign of the seed's self-pairing.
    pub sign: f64,
    pub flow: FlowBox,
    pub report: CheckReport,
}

/// Find a non-null seed with nonzero anchor, straighten its normalized
/// anchor image, and correct by half the conormal to make the section null.
pub fn good_section(c: &CourantStructure, p: &[f64], counts: &[usize]) -> Result<GoodSection> {
    let src = c.chart().clone();
    src.contains(p)?;
    let r = c.rank();
    let g = c.metric_at(p)?;
    let mut th_p = vec![vec![0.0; src.dim()]; r];
    for i in 0..r {
        for m in 0..src.dim() {
            th_p[i][m] = c.base().theta(i, m).eval(p)?;
        }
    }
    let anchored = |v: &[f64]| -> f64 {
        (0..src.dim())
            .map(|m| (0..r).map(|i| v[i] * th_p[i][m]).sum::<f64>().abs())
            .fold(0.0, f64::max)
    };
    let paired = |v: &[f64]| -> f64 {
        let mut s = 0.0;
        for i in 0..r {
            for j in 0..r {
                s += v[i] * g[(i, j)] * v[j];
            }
        }
        s
    };
    let mut candidates: Vec<Vec<f64>> = Vec::new();
    for i in 0..r {
        let mut v = vec![0.0; r];
        v[i] = 1.0;
        candidates.push(v);
    }
    for sgn in [1.0, -1.0] {
        for i in 0..r {
            for j in i + 1..r {
                let mut v = vec![0.0; r];
                v[i] = 1.0;
                v[j] = sgn;
                candidates.push(v);
            }
        }
    }
    let seed = candidates
        .into_iter()
        .find(|v| anchored(v) >= tol::ANCHOR_MIN && paired(v).abs() >= tol::ANCHOR_MIN)
        .ok_or_else(|| {
            Error::Degenerate(
                "no frame combination has both a nonzero anchor and a nonzero self-pairing at the base point"
                    .into(),
            )
        })?;

    let bar_src = Section::new(
        src.clone(),
        seed.iter().map(|&v| ScalarField::constant(&src, v)).collect(),
    );
    let f_src = c.pairing(&bar_src, &bar_src);
    let sign = f_src.eval(p)?.signum();
    let one_src = ScalarField::constant(&src, 1.0);
    let weight = one_src.div(&f_src.abs().sqrt());
    let x = c.base().anchor(&bar_src)?.scale_field(&weight);
    let flow = numeric_flow_box(&x, p, counts)?;
    let cp = transport_courant(c, &flow, counts)?;
    let chart = flow.chart.clone();
    let lat = lattice(&chart, counts)?;

    let bar = Section::new(
        chart.clone(),
        seed.iter().map(|&v| ScalarField::constant(&chart, v)).collect(),
    );
    let fbar = cp.pairing(&bar, &bar);
    let min_pair = lattice_min_abs(&fbar, &lat)?;
    if min_pair < tol::ANCHOR_MIN {
        return Err(Error::Transversality(format!(
            "self-pairing of the seed dips to {min_pair:.3e} on the box"
        )));
    }
    let one = ScalarField::constant(&chart, 1.0);
    let alphan = bar.scale_field(&one.div(&fbar.abs().sqrt()));
    let dt = cp.rho_star(&OneForm::coordinate_differential(&chart, 0))?;
    let alpha = alphan.sub(&dt.scale(0.5 * sign));

    let plan = SamplePlan::new(&chart, 5, 33);
    let tol_lat = tol::REL_TOL.max(tol::grid_tol(lat.spacing()));
    let mut report = CheckReport::default();
    let mut anchor = ResidualMax::new("section-anchor");
    anchor.update(flow_box_residual(cp.base(), &alpha, &plan)?, &chart.center());
    report.push(anchor.into_entry(tol_lat));
    let mut iso = ResidualMax::new("section-isotropic");
    let pair = cp.pairing(&alpha, &alpha);
    let br = cp.base().bracket(&alpha, &alpha)?;
    let mut selfc = ResidualMax::new("section-commute");
    for q in plan.points() {
        iso.update(pair.eval(q)?.abs(), q);
        for v in br.eval(q)? {
            selfc.update(v.abs(), q);
        }
    }
    report.push(iso.into_entry(tol_lat));
    report.push(selfc.into_entry(tol_lat));
    if !report.passed() {
        let worst = report
            .entries
            .iter()
            .filter(|e| !e.pass)
            .map(|e| format!("{} = {:.3e}", e.name, e.max_residual))
            .collect::<Vec<_>>()
            .join(", ");
        return Err(Error::Precondition(format!("flow section postcondition failed: {worst}")));
    }
    Ok(GoodSection { structure: cp, alpha, seed, sign, flow, report })
}

// ---------------------------------------------------------------------------
// the splitting pipeline

/// Outcome of splitting at a base point: straightened coordinates, the flow
/// pair (alpha, Dt), the frame transform, the induced structure in the new
/// frame, and the transversal factor restricted to the t = 0 slice (absent
/// when the factor has rank zero).
#[derive(Debug, Clone)]
pub struct SplitResult {
    pub flow: FlowBox,
    pub alpha: Section,
    pub normal: Section,
    pub transform: Vec<Vec<ScalarField>>,
    pub structure: CourantStructure,
    pub factor: Option<CourantStructure>,
    pub label: &'static str,
    pub report: CheckReport,
}

fn extract_factor(
    induced: &CourantStructure,
    slice: &Arc<Chart>,
    counts: &[usize],
) -> Result<CourantStructure> {
    let r = induced.rank();
    let s = r - 2;
    let n = induced.chart().dim();
    let restrict = |f: &ScalarField| -> Result<ScalarField> {
        if f.is_zero() {
            return Ok(ScalarField::zero(slice));
        }
        if let Expr::Const(c) = f.repr() {
            return Ok(ScalarField::constant(slice, *c));
        }
        ScalarField::sample_on_lattice(slice, counts, |u| {
            let mut q = vec![0.0; n];
            q[1..].copy_from_slice(u);
            f.eval(&q)
        })
    };
    let mut gamma = vec![vec![vec![ScalarField::zero(slice); s]; s]; s];
    let mut theta = vec![vec![ScalarField::zero(slice); n - 1]; s];
    let mut lam = vec![vec![vec![vec![ScalarField::zero(slice); s]; s]; s]; n - 1];
    let mut metric = vec![vec![ScalarField::zero(slice); s]; s];
    for i in 0..s {
        for m in 0..n - 1 {
            theta[i][m] = restrict(induced.base().theta(2 + i, 1 + m))?;
        }
        for j in 0..s {
            metric[i][j] = restrict(induced.metric(2 + i, 2 + j))?;
            for k in 0..s {
                gamma[i][j][k] = restrict(induced.base().gamma(2 + i, 2 + j, 2 + k))?;
            }
            for m in 0..n - 1 {
                for l in 0..s {
                    lam[m][i][j][l] =
                        restrict(induced.base().lambda(1 + m, 2 + i, 2 + j, 2 + l))?;
                }
            }
        }
    }
    CourantStructure::new(LodayStructure::new(slice.clone(), s, gamma, theta, lam)?, metric)
}

/// Split a metric structure at a base point: straighten a good section,
/// build the commuting transversal frame, pair it against the conormal, and
/// compare the induced structure with the product of the time-like standard
/// block and the t = 0 factor.
pub fn courant_split(c: &CourantStructure, p: &[f64], counts: &[usize]) -> Result<SplitResult> {
    let r = c.rank();
    if r < 2 {
        return Err(Error::InvalidInput("splitting needs rank >= 2".into()));
    }
    let gs = good_section(c, p, counts)?;
    let GoodSection { structure: cp, alpha, flow, mut report, .. } = gs;
    let chart = cp.chart().clone();
    let n = chart.dim();
    let s = r - 2;
    if s == 0 && n != 1 {
        return Err(Error::InvalidInput(
            "a rank-2 structure over a higher-dimensional box has no point factor".into(),
        ));
    }
    let p_new = chart.center();
    let lat = lattice(&chart, counts)?;
    let tol_lat = tol::REL_TOL.max(tol::grid_tol(lat.spacing()));
    let plan = SamplePlan::new(&chart, 5, 33);

    let ad = adapted_frame(cp.base(), &alpha, &p_new, counts)?;
    report.merge(ad.report);

    let tfield = ScalarField::coordinate(&chart, 0);
    let dt = cp.d_function(&tfield)?;
    let rho_dt = cp.base().anchor(&dt)?;
    let br_a_dt = cp.base().bracket(&alpha, &dt)?;
    let mut vertical = ResidualMax::new("normal-vertical");
    let mut steady = ResidualMax::new("normal-steady");
    for q in plan.points() {
        for v in rho_dt.eval(q)? {
            vertical.update(v.abs(), q);
        }
        for v in br_a_dt.eval(q)? {
            steady.update(v.abs(), q);
        }
    }
    report.push(vertical.into_entry(tol_lat));
    report.push(steady.into_entry(tol_lat));

    // Transversal seeds: the adapted rows most independent from Dt at the
    // base point, then tilted toward Dt until they pair against alpha.
    let dp = dt.eval(&p_new)?;
    let dnorm = dp.iter().map(|v| v * v).sum::<f64>().sqrt();
    if dnorm < tol::ANCHOR_MIN {
        return Err(Error::Degenerate("conormal vanishes at the base point".into()));
    }
    let mut ortho: Vec<Vec<f64>> = vec![dp.iter().map(|v| v / dnorm).collect()];
    let wvecs: Vec<Vec<f64>> = ad
        .frame
        .iter()
        .map(|s| s.eval(&p_new))
        .collect::<Result<Vec<_>>>()?;
    let mut chosen: Vec<usize> = Vec::new();
    for _ in 0..s {
        let mut best = (0usize, -1.0f64, Vec::new());
        for (i, w) in wvecs.iter().enumerate() {
            if chosen.contains(&i) {
                continue;
            }
            let mut resid = w.clone();
            for b in &ortho {
                let dot: f64 = resid.iter().zip(b).map(|(x, y)| x * y).sum();
                for (rk, bk) in resid.iter_mut().zip(b) {
                    *rk -= dot * bk;
                }
            }
            let norm = resid.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > best.1 {
                best = (i, norm, resid);
            }
        }
        if best.1 < 1e-9 {
            return Err(Error::Degenerate(
                "the transversal frame degenerates at the base point".into(),
            ));
        }
        chosen.push(best.0);
        ortho.push(best.2.iter().map(|v| v / best.1).collect());
    }

    let pair_a_dt = cp.pairing(&alpha, &dt).eval(&p_new)?;
    let pa: Vec<f64> = chosen
        .iter()
        .map(|&i| cp.pairing(&alpha, &ad.frame[i]).eval(&p_new))
        .collect::<Result<Vec<_>>>()?;
    let scale = pa.iter().fold(pair_a_dt.abs().max(1.0), |m, v| m.max(v.abs()));
    let eps = eps_ladder()
        .find(|e| pa.iter().all(|&v| (v + e * pair_a_dt).abs() >= 0.1 * scale))
        .ok_or_else(|| {
            Error::Transversality("no tilt of the transversal frame pairs against the section".into())
        })?;

    let one = ScalarField::constant(&chart, 1.0);
    let mut betas = Vec::with_capacity(s);
    for &i in &chosen {
        let gamma = if eps == 0.0 { ad.frame[i].clone() } else { ad.frame[i].add(&dt.scale(eps)) };
        let pa_f = cp.pairing(&alpha, &gamma);
        let min_pa = lattice_min_abs(&pa_f, &lat)?;
        if min_pa < tol::ANCHOR_MIN {
            return Err(Error::Transversality(format!(
                "pairing against the flow section dips to {min_pa:.3e} on the box"
            )));
        }
        let pd_f = cp.pairing(&dt, &gamma);
        let b = gamma.sub(&alpha.scale_field(&pd_f)).scale_field(&one.div(&pa_f)).sub(&dt);
        // Constant rescaling preserves every defining identity of the row.
        let m = b.eval(&p_new)?.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        betas.push(if m > tol::ANCHOR_MIN { b.scale(1.0 / m) } else { b });
    }

    let mut item_a = ResidualMax::new("item-a");
    let mut item_b = ResidualMax::new("item-b");
    let mut item_c = ResidualMax::new("item-c");
    let mut item_d = ResidualMax::new("item-d");
    for b in &betas {
        let br = cp.base().bracket(&alpha, b)?;
        let pb = cp.pairing(&alpha, b);
        let db = cp.pairing(&dt, b);
        for q in plan.points() {
            for v in br.eval(q)? {
                item_a.update(v.abs(), q);
            }
            item_b.update(pb.eval(q)?.abs(), q);
            item_c.update(db.eval(q)?.abs(), q);
        }
    }
    for i in 0..s {
        for j in i..s {
            let d = cp.pairing(&betas[i], &betas[j]).deriv(0);
            for q in plan.points() {
                item_d.update(d.eval(q)?.abs(), q);
            }
        }
    }
    report.push(item_a.into_entry(tol_lat));
    report.push(item_b.into_entry(tol_lat));
    report.push(item_c.into_entry(tol_lat));
    report.push(item_d.into_entry(tol_lat));

    let mut frame = vec![alpha.clone(), dt.clone()];
    frame.extend(betas.iter().cloned());
    let (induced, transform) = change_frame_courant(&cp, &frame, counts)?;

    let mut item_e = ResidualMax::new("item-e");
    for i in 2..r {
        for m in 0..n {
            let th = induced.base().theta(i, m);
            if m == 0 {
                if !th.is_zero() {
                    for q in plan.points() {
                        item_e.update(th.eval(q)?.abs(), q);
                    }
                }
            } else if !th.is_zero() {
                let d = th.deriv(0);
                for q in plan.points() {
                    item_e.update(d.eval(q)?.abs(), q);
                }
            }
        }
        for j in 2..r {
            for k in 0..r {
                let f = induced.base().gamma(i, j, k);
                if f.is_zero() {
                    continue;
                }
                if k < 2 {
                    for q in plan.points() {
                        item_e.update(f.eval(q)?.abs(), q);
                    }
                } else {
                    let d = f.deriv(0);
                    for q in plan.points() {
                        item_e.update(d.eval(q)?.abs(), q);
                    }
                }
            }
        }
    }
    report.push(item_e.into_entry(tol_lat));

    let mut pnorm = ResidualMax::new("pairing-normal");
    let mut pblock = ResidualMax::new("pairing-block");
    let g00 = induced.metric(0, 0);
    let g01 = induced.metric(0, 1);
    let g11 = induced.metric(1, 1);
    for q in plan.points() {
        pnorm.update(g00.eval(q)?.abs(), q);
        pnorm.update((g01.eval(q)? - 1.0).abs(), q);
        pnorm.update(g11.eval(q)?.abs(), q);
        for j in 2..r {
            pblock.update(induced.metric(0, j).eval(q)?.abs(), q);
            pblock.update(induced.metric(1, j).eval(q)?.abs(), q);
        }
    }
    for i in 2..r {
        for j in 2..r {
            let f = induced.metric(i, j);
            if f.is_zero() {
                continue;
            }
            let d = f.deriv(0);
            for q in plan.points() {
                pblock.update(d.eval(q)?.abs(), q);
            }
        }
    }
    report.push(pnorm.into_entry(tol_lat));
    report.push(pblock.into_entry(tol_lat));

    let label = if s == 0 {
        "direct"
    } else {
        let split = FrameSplit::leading(2, r, 1, n)?;
        let (label, cls) = classify_decomposition(induced.base(), &split, &plan)?;
        report.merge(cls);
        label
    };

    let tchart = Chart::new(vec![chart.name(0).to_string()], vec![chart.interval(0)])?;
    let ti = zoo::standard_courant_on(&tchart)?;
    let (product, factor) = if s == 0 {
        (ti, None)
    } else {
        let slice = Chart::new(
            chart.names()[1..].to_vec(),
            chart.bounds()[1..].to_vec(),
        )?;
        let eprime = extract_factor(&induced, &slice, &counts[1..])?;
        (direct_product_courant(&ti, &eprime)?, Some(eprime))
    };
    let identity: Vec<usize> = (0..r).collect();
    let dev = max_courant_deviation(&induced, &product, &identity, &plan)?;
    let mut pm = ResidualMax::new("product-match");
    pm.update(dev, &chart.center());
    report.push(pm.into_entry(tol_lat));

    Ok(SplitResult {
        flow,
        alpha,
        normal: dt,
        transform,
        structure: induced,
        factor,
        label,
        report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::zoo;

    fn line() -> Arc<Chart> {
        Chart::new(vec!["t"], vec![(-1.0, 1.0)]).unwrap()
    }

    /// Rank-2 line structure with [e0, e_j] = rate * e_j and anchor(e0) = d/dt.
    fn decay(rate: f64) -> LodayStructure {
        let chart = line();
        LodayStructure::build(
            &chart,
            2,
            |i, j, k| {
                if i == 0 && j == k {
                    ScalarField::constant(&chart, rate)
                } else {
                    ScalarField::zero(&chart)
                }
            },
            |i, m| {
                if i == 0 && m == 0 {
                    ScalarField::constant(&chart, 1.0)
                } else {
                    ScalarField::zero(&chart)
                }
            },
            |_, _, _, _| ScalarField::zero(&chart),
        )
        .unwrap()
    }

    #[test]
    fn constant_coefficients_freeze_the_section() {
        let a = decay(0.0);
        let alpha = Section::frame(a.chart(), 2, 0);
        let b = solve_invariant_section(&a, &alpha, &[0.3, -0.7], &[17]).unwrap();
        let plan = SamplePlan::new(a.chart(), 9, 17);
        for q in plan.points() {
            let v = b.eval(q).unwrap();
            assert!((v[0] - 0.3).abs() < 1e-12 && (v[1] + 0.7).abs() < 1e-12);
        }
    }

    #[test]
    fn exponential_decay_matches_fourth_order() {
        let a = decay(1.0);
        let alpha = Section::frame(a.chart(), 2, 0);
        let plan = SamplePlan::new(a.chart(), 9, 17);
        let mut errs = Vec::new();
        for counts in [9usize, 17, 33] {
            let b = solve_invariant_section(&a, &alpha, &[1.0, 0.5], &[counts]).unwrap();
            let mut worst = 0.0f64;
            for q in plan.points() {
                let want = (-q[0]).exp();
                let v = b.eval(q).unwrap();
                worst = worst.max((v[0] - want).abs()).max((v[1] - 0.5 * want).abs());
            }
            let h = 2.0 / (counts - 1) as f64;
            assert!(worst <= 50.0 * h.powi(4), "err {worst:.3e} at h {h}");
            errs.push(worst);
        }
        assert!(errs[0] / errs[1] >= 12.0, "halving ratio {:.2}", errs[0] / errs[1]);
        assert!(errs[1] / errs[2] >= 12.0, "halving ratio {:.2}", errs[1] / errs[2]);
    }

    #[test]
    fn refining_the_lattice_keeps_the_section() {
        let a = decay(1.0);
        let alpha = Section::frame(a.chart(), 2, 0);
        let coarse = solve_invariant_section(&a, &alpha, &[1.0, -0.25], &[17]).unwrap();
        let fine = solve_invariant_section(&a, &alpha, &[1.0, -0.25], &[33]).unwrap();
        let h = 2.0f64 / 16.0;
        let plan = SamplePlan::new(a.chart(), 13, 17);
        for q in plan.points() {
            let (x, y) = (coarse.eval(q).unwrap(), fine.eval(q).unwrap());
            for k in 0..2 {
                assert!((x[k] - y[k]).abs() <= 2.0 * 50.0 * h.powi(4));
            }
        }
    }

    #[test]
    fn stiff_coefficients_are_rejected() {
        let a = decay(100.0);
        let alpha = Section::frame(a.chart(), 2, 0);
        let err = solve_invariant_section(&a, &alpha, &[1.0, 0.0], &[9]).unwrap_err();
        assert!(matches!(err, Error::Stiffness(_)), "{err}");
    }

    #[test]
    fn solve_requires_flow_box_anchor() {
        let chart = line();
        let a = LodayStructure::build(
            &chart,
            2,
            |_, _, _| ScalarField::zero(&chart),
            |i, m| {
                if i == 0 && m == 0 {
                    ScalarField::constant(&chart, 2.0)
                } else {
                    ScalarField::zero(&chart)
                }
            },
            |_, _, _, _| ScalarField::zero(&chart),
        )
        .unwrap();
        let alpha = Section::frame(&chart, 2, 0);
        let err = solve_invariant_section(&a, &alpha, &[1.0, 0.0], &[9]).unwrap_err();
        assert!(matches!(err, Error::Precondition(_)), "{err}");
    }

    #[test]
    fn standard_courant_flow_sections_are_constant() {
        let c = zoo::standard_courant(2).unwrap();
        let alpha = Section::frame(c.chart(), 4, 0);
        let b =
            solve_invariant_section(c.base(), &alpha, &[0.2, 0.0, -1.0, 0.5], &[9, 9]).unwrap();
        let plan = SamplePlan::new(c.chart(), 21, 9);
        for q in plan.points() {
            let v = b.eval(q).unwrap();
            for (got, want) in v.iter().zip([0.2, 0.0, -1.0, 0.5]) {
                assert!((got - want).abs() < 1e-12);
            }
        }
    }

    fn plane() -> Arc<Chart> {
        Chart::new(vec!["x1", "x2"], vec![(-1.0, 1.0), (-1.0, 1.0)]).unwrap()
    }

    #[test]
    fn unit_field_gives_identity_flow_box() {
        let chart = plane();
        let x = VectorField::new(
            chart.clone(),
            vec![ScalarField::constant(&chart, 1.0), ScalarField::zero(&chart)],
        );
        let fb = numeric_flow_box(&x, &[0.0, 0.0], &[9, 9]).unwrap();
        assert_eq!(fb.chart.names(), ["t", "u1"]);
        assert_eq!(fb.axis, 0);
        let plan = SamplePlan::new(&fb.chart, 2, 17);
        for q in plan.points() {
            assert!((fb.forward[0].eval(q).unwrap() - q[0]).abs() < 1e-12);
            assert!((fb.forward[1].eval(q).unwrap() - q[1]).abs() < 1e-12);
        }
        let inv_plan = SamplePlan::new(&fb.inverse_chart, 2, 17);
        for q in inv_plan.points() {
            assert!((fb.inverse[0].eval(q).unwrap() - q[0]).abs() < 1e-9);
            assert!((fb.inverse[1].eval(q).unwrap() - q[1]).abs() < 1e-9);
        }
    }

    #[test]
    fn doubled_field_rescales_time() {
        let chart = plane();
        let x = VectorField::new(
            chart.clone(),
            vec![ScalarField::constant(&chart, 2.0), ScalarField::zero(&chart)],
        );
        let fb = numeric_flow_box(&x, &[0.1, 0.0], &[9, 9]).unwrap();
        let plan = SamplePlan::new(&fb.chart, 2, 17);
        for q in plan.points() {
            assert!((fb.forward[0].eval(q).unwrap() - (0.1 + 2.0 * q[0])).abs() < 1e-12);
        }
    }

    #[test]
    fn shear_field_flows_quadratically() {
        let chart = plane();
        let x = VectorField::new(
            chart.clone(),
            vec![ScalarField::constant(&chart, 1.0), ScalarField::coordinate(&chart, 0)],
        );
        let fb = numeric_flow_box(&x, &[0.0, 0.0], &[17, 9]).unwrap();
        let plan = SamplePlan::new(&fb.chart, 2, 17);
        for q in plan.points() {
            let want = q[1] + 0.5 * q[0] * q[0];
            assert!((fb.forward[0].eval(q).unwrap() - q[0]).abs() < 1e-10);
            assert!((fb.forward[1].eval(q).unwrap() - want).abs() < 1e-10);
        }
    }

    #[test]
    fn vanishing_field_is_rejected() {
        let chart = plane();
        let x = VectorField::new(
            chart.clone(),
            vec![ScalarField::coordinate(&chart, 0), ScalarField::zero(&chart)],
        );
        let err = numeric_flow_box(&x, &[0.0, 0.0], &[9, 9]).unwrap_err();
        assert!(matches!(err, Error::Transversality(_)), "{err}");
    }

    #[test]
    fn identity_transport_reproduces_standard_structure() {
        let c = zoo::standard_courant(2).unwrap();
        let chart = c.chart().clone();
        let x = VectorField::new(
            chart.clone(),
            vec![ScalarField::constant(&chart, 1.0), ScalarField::zero(&chart)],
        );
        let fb = numeric_flow_box(&x, &[0.0, 0.0], &[9, 9]).unwrap();
        let moved = transport_courant(&c, &fb, &[9, 9]).unwrap();
        let fresh = zoo::standard_courant_on(&fb.chart).unwrap();
        let plan = SamplePlan::new(&fb.chart, 7, 25);
        let perm: Vec<usize> = (0..4).collect();
        let dev = max_courant_deviation(&moved, &fresh, &perm, &plan).unwrap();
        assert!(dev < 1e-12, "deviation {dev:.3e}");
    }

    #[test]
    fn already_adapted_frame_has_tiny_residuals() {
        let c = zoo::standard_courant(2).unwrap();
        let alpha = Section::frame(c.chart(), 4, 0);
        let ad = adapted_frame(c.base(), &alpha, &[0.0, 0.0], &[9, 9]).unwrap();
        assert!(ad.report.passed());
        for name in ["frame-commute", "frame-normalized", "frame-gamma-steady", "frame-theta-steady"]
        {
            let res = ad.report.residual(name).unwrap();
            assert!(res <= 1e-9, "{name} = {res:.3e}");
        }
        assert_eq!(ad.frame.len(), 3);
    }

    #[test]
    fn time_dependent_disguise_is_removed() {
        let chart = Chart::new(vec!["t", "u"], vec![(-1.0, 1.0), (-1.0, 1.0)]).unwrap();
        let tangent = LodayStructure::build(
            &chart,
            2,
            |_, _, _| ScalarField::zero(&chart),
            |i, m| {
                if i == m {
                    ScalarField::constant(&chart, 1.0)
                } else {
                    ScalarField::zero(&chart)
                }
            },
            |_, _, _, _| ScalarField::zero(&chart),
        )
        .unwrap();
        let rows = vec![
            Section::new(
                chart.clone(),
                vec![ScalarField::constant(&chart, 1.0), ScalarField::zero(&chart)],
            ),
            Section::new(
                chart.clone(),
                vec![ScalarField::coordinate(&chart, 0), ScalarField::constant(&chart, 1.0)],
            ),
        ];
        let (disguised, _) = change_frame_loday(&tangent, &rows, &[17, 17]).unwrap();
        let alpha = Section::frame(&chart, 2, 0);
        let ad = adapted_frame(&disguised, &alpha, &[0.0, 0.0], &[17, 17]).unwrap();
        assert!(ad.report.passed());
        assert!(ad.report.residual("frame-theta-steady").unwrap() <= 1e-9);
        assert!(ad.report.residual("frame-gamma-steady").unwrap() <= 1e-9);
        // The adapted row is the straightened transversal direction.
        let v = ad.frame[0].eval(&[0.3, -0.4]).unwrap();
        let rho_u = disguised.anchor(&ad.frame[0]).unwrap();
        assert!(rho_u.comp(0).eval(&[0.3, -0.4]).unwrap().abs() < 1e-9);
        assert!(v[1].abs() > 0.1);
    }

    #[test]
    fn jacobiator_violation_is_rejected() {
        let chart = line();
        let a = LodayStructure::build(
            &chart,
            2,
            |i, j, k| {
                if (i, j, k) == (0, 1, 1) {
                    ScalarField::coordinate(&chart, 0)
                } else {
                    ScalarField::zero(&chart)
                }
            },
            |i, m| {
                if i == 0 && m == 0 {
                    ScalarField::constant(&chart, 1.0)
                } else {
                    ScalarField::zero(&chart)
                }
            },
            |_, _, _, _| ScalarField::zero(&chart),
        )
        .unwrap();
        let alpha = Section::frame(&chart, 2, 0);
        let err = adapted_frame(&a, &alpha, &[0.0], &[9]).unwrap_err();
        assert!(matches!(err, Error::Precondition(_)), "{err}");
    }

    #[test]
    fn standard_seed_search_finds_null_section() {
        let c = zoo::standard_courant(1).unwrap();
        let gs = good_section(&c, &[0.0], &[17]).unwrap();
        assert!(gs.report.passed());
        assert_eq!(gs.seed, vec![1.0, 1.0]);
        assert_eq!(gs.sign, 1.0);
        for name in ["section-anchor", "section-isotropic", "section-commute"] {
            assert!(gs.report.residual(name).unwrap() <= 1e-9, "{name}");
        }
        let v = gs.alpha.eval(&gs.flow.chart.center()).unwrap();
        assert!((v[0] - 1.0 / 2f64.sqrt()).abs() < 1e-9);
        assert!(v[1].abs() < 1e-9);
    }

    #[test]
    fn anchorless_bundle_has_no_good_section() {
        let chart = Chart::unit_box(3);
        let (c, g0) = zoo::su2_data();
        let q = zoo::quadratic_lie_bundle(&c, &g0, &ScalarField::constant(&chart, 1.0)).unwrap();
        let err = good_section(&q, &[0.0, 0.0, 0.0], &[9, 9, 9]).unwrap_err();
        assert!(matches!(err, Error::Degenerate(_)), "{err}");
    }

    #[test]
    fn minimal_standard_structure_splits_to_identity() {
        let c = zoo::standard_courant(1).unwrap();
        let out = courant_split(&c, &[0.0], &[17]).unwrap();
        assert!(out.factor.is_none());
        assert_eq!(out.label, "direct");
        assert!(out.report.passed());
        assert!(out.report.residual("product-match").unwrap() <= 1e-9);
    }

    #[test]
    fn standard_structure_splits_direct() {
        let c = zoo::standard_courant(2).unwrap();
        let out = courant_split(&c, &[0.1, -0.2], &[17, 17]).unwrap();
        assert_eq!(out.label, "direct");
        assert!(out.report.passed());
        for name in ["item-a", "item-b", "item-c", "item-d", "item-e", "product-match"] {
            let res = out.report.residual(name).unwrap();
            assert!(res <= 1e-9, "{name} = {res:.3e}");
        }
        let factor = out.factor.unwrap();
        assert_eq!(factor.rank(), 2);
        let plan = SamplePlan::new(factor.chart(), 17, 16);
        assert!(factor.check_courant(&plan).unwrap().passed());
    }

    #[test]
    fn disguised_standard_structure_splits_clean() {
        let c = zoo::standard_courant(2).unwrap();
        let chart = c.chart().clone();
        // Invertible frame change mixing a form direction by 0.3 x2.
        let s = ScalarField::coordinate(&chart, 1).scale(0.3);
        let mut rows = Vec::new();
        for i in 0..4 {
            let mut comps = vec![ScalarField::zero(&chart); 4];
            comps[i] = ScalarField::constant(&chart, 1.0);
            if i == 2 {
                comps[3] = s.clone();
            }
            rows.push(Section::new(chart.clone(), comps));
        }
        let (hidden, _) = change_frame_courant(&c, &rows, &[17, 17]).unwrap();
        let out = courant_split(&hidden, &[0.1, -0.2], &[17, 17]).unwrap();
        assert_eq!(out.label, "direct");
        assert!(out.report.passed());
        let factor = out.factor.unwrap();
        assert_eq!(factor.rank(), 2);
        let plan = SamplePlan::new(factor.chart(), 17, 16);
        let rep = factor.check_courant(&plan).unwrap();
        for name in ["a", "b", "c", "rho-symm", "rho-coanchor", "coanchor"] {
            assert!(rep.entry(name).unwrap().pass, "{name}");
        }
        // Nested-derivative identities inherit the truncation of the parent
        // lattice the slice was cut from, not of the slice itself.
        let h_parent = out.structure.max_grid_spacing().unwrap();
        for name in ["jacobi", "symm", "pairing"] {
            let res = rep.residual(name).unwrap();
            assert!(res <= 10.0 * crate::tol::grid_tol(h_parent), "{name} = {res:.3e}");
        }
    }
}


