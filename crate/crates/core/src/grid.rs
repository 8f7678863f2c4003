//! Lattice-sampled scalar data with tensor-product cubic interpolation.
//!
//! A table may span a subset of the chart axes (a field constant in the
//! remaining coordinates); values are stored row-major in axis order. The
//! interpolant reproduces cubics exactly per axis, and derivatives are taken
//! with five-point fourth-order stencils whose window shifts at the edges.

use crate::error::Error;
use crate::Result;

#[derive(Debug, Clone, PartialEq)]
pub struct GridAxis {
    /// Chart axis this lattice direction runs along.
    pub chart_axis: usize,
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

impl GridAxis {
    pub fn spacing(&self) -> f64 {
        (self.hi - self.lo) / (self.count - 1) as f64
    }

    pub fn node(&self, k: usize) -> f64 {
        if k + 1 == self.count {
            self.hi
        } else {
            self.lo + k as f64 * self.spacing()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridTable {
    axes: Vec<GridAxis>,
    values: Vec<f64>,
}

impl GridTable {
    pub fn new(axes: Vec<GridAxis>, values: Vec<f64>) -> Result<GridTable> {
        if axes.is_empty() {
            return Err(Error::InvalidInput("grid needs at least one axis".into()));
        }
        let mut total = 1usize;
        for a in &axes {
            if a.count < 4 {
                return Err(Error::InvalidInput(format!(
                    "grid axis over chart axis {} has {} nodes; need >= 4",
                    a.chart_axis, a.count
                )));
            }
            if !(a.lo.is_finite() && a.hi.is_finite() && a.hi > a.lo) {
                return Err(Error::InvalidInput("grid axis needs a positive interval".into()));
            }
            total *= a.count;
        }
        if values.len() != total {
            return Err(Error::ShapeMismatch(format!(
                "grid has {} samples, lattice wants {}",
                values.len(),
                total
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("grid samples must be finite".into()));
        }
        Ok(GridTable { axes, values })
    }

    /// Sample a function on the lattice. `f` sees full chart points with the
    /// non-spanned coordinates filled from `base`.
    pub fn sample(
        axes: Vec<GridAxis>,
        base: &[f64],
        mut f: impl FnMut(&[f64]) -> Result<f64>,
    ) -> Result<GridTable> {
        let counts: Vec<usize> = axes.iter().map(|a| a.count).collect();
        let total: usize = counts.iter().product();
        let mut values = Vec::with_capacity(total);
        let mut point = base.to_vec();
        let mut idx = vec![0usize; axes.len()];
        for _ in 0..total {
            for (d, a) in axes.iter().enumerate() {
                point[a.chart_axis] = a.node(idx[d]);
            }
            values.push(f(&point)?);
            // odometer increment, last axis fastest (row-major)
            for d in (0..axes.len()).rev() {
                idx[d] += 1;
                if idx[d] < counts[d] {
                    break;
                }
                idx[d] = 0;
            }
        }
        GridTable::new(axes, values)
    }

    pub fn axes(&self) -> &[GridAxis] {
        &self.axes
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn spans(&self, chart_axis: usize) -> bool {
        self.axes.iter().any(|a| a.chart_axis == chart_axis)
    }

    /// Same payload with each lattice direction moved to chart axis
    /// map[old_axis].
    pub fn remap_axes(&self, map: &[usize]) -> GridTable {
        let axes = self
            .axes
            .iter()
            .map(|a| GridAxis { chart_axis: map[a.chart_axis], ..*a })
            .collect();
        GridTable { axes, values: self.values.clone() }
    }

    pub fn spacing_along(&self, chart_axis: usize) -> Option<f64> {
        self.axes
            .iter()
            .find(|a| a.chart_axis == chart_axis)
            .map(|a| a.spacing())
    }

    pub fn max_spacing(&self) -> f64 {
        self.axes.iter().map(|a| a.spacing()).fold(0.0, f64::max)
    }

    fn flat_index(&self, idx: &[usize]) -> usize {
        let mut flat = 0usize;
        for (d, a) in self.axes.iter().enumerate() {
            flat = flat * a.count + idx[d];
        }
        flat
    }

    pub fn value_at_node(&self, idx: &[usize]) -> f64 {
        self.values[self.flat_index(idx)]
    }

    /// Hull membership check with edge slack, per lattice axis.
    fn local_coord(&self, d: usize, q: &[f64]) -> Result<f64> {
        let a = &self.axes[d];
        let x = q[a.chart_axis];
        let slack = 1e-9 * (a.hi - a.lo);
        if x < a.lo - slack || x > a.hi + slack {
            return Err(Error::OutsideDomain { axis: a.chart_axis, point: q.to_vec() });
        }
        Ok(x.clamp(a.lo, a.hi))
    }

    /// Tensor-product cubic Lagrange interpolation.
    pub fn interp(&self, q: &[f64]) -> Result<f64> {
        let d = self.axes.len();
        let mut windows = Vec::with_capacity(d);
        let mut weights = Vec::with_capacity(d);
        for k in 0..d {
            let a = &self.axes[k];
            let x = self.local_coord(k, q)?;
            let h = a.spacing();
            let cell = (((x - a.lo) / h).floor() as isize).clamp(0, a.count as isize - 2) as usize;
            let w0 = cell.saturating_sub(1).min(a.count - 4);
            let nodes = [a.node(w0), a.node(w0 + 1), a.node(w0 + 2), a.node(w0 + 3)];
            weights.push(lagrange4(&nodes, x));
            windows.push(w0);
        }
        // accumulate over the 4^d window
        let mut acc = 0.0;
        let mut idx = vec![0usize; d];
        let mut node = vec![0usize; d];
        loop {
            let mut w = 1.0;
            for k in 0..d {
                w *= weights[k][idx[k]];
                node[k] = windows[k] + idx[k];
            }
            acc += w * self.value_at_node(&node);
            let mut k = d;
            loop {
                if k == 0 {
                    return Ok(acc);
                }
                k -= 1;
                idx[k] += 1;
                if idx[k] < 4 {
                    break;
                }
                idx[k] = 0;
            }
        }
    }

    /// Fourth-order partial along `chart_axis` at q, via a five-point stencil
    /// of interpolated values with step = lattice spacing.
    pub fn fd_partial(&self, chart_axis: usize, q: &[f64]) -> Result<f64> {
        let a = match self.axes.iter().find(|a| a.chart_axis == chart_axis) {
            Some(a) => a,
            None => return Ok(0.0), // constant along this coordinate
        };
        let nodes = stencil_nodes(q[chart_axis], a.lo, a.hi, a.spacing())?;
        let w = fd_weights(&nodes, q[chart_axis], 1);
        let mut acc = 0.0;
        let mut shifted = q.to_vec();
        for (k, &x) in nodes.iter().enumerate() {
            shifted[chart_axis] = x;
            acc += w[k] * self.interp(&shifted)?;
        }
        Ok(acc)
    }
}

/// Cubic Lagrange basis values at x for four nodes.
fn lagrange4(nodes: &[f64; 4], x: f64) -> [f64; 4] {
    let mut out = [0.0; 4];
    for i in 0..4 {
        let mut w = 1.0;
        for j in 0..4 {
            if j != i {
                w *= (x - nodes[j]) / (nodes[i] - nodes[j]);
            }
        }
        out[i] = w;
    }
    out
}

/// Five consecutive integer offsets around x so that x + off*h stays within
/// [lo, hi]; centered when possible, shifted at the edges.
/// Five h-spaced node positions inside [lo, hi], centered on x when room
/// permits and slid inward otherwise (Fornberg weights take any target).
pub fn stencil_nodes(x: f64, lo: f64, hi: f64, h: f64) -> Result<[f64; 5]> {
    let eps = 1e-9 * (hi - lo);
    if hi - lo + eps < 4.0 * h {
        return Err(Error::Precondition(format!(
            "interval [{lo}, {hi}] too small for a 5-point stencil of step {h}"
        )));
    }
    let start = (x - 2.0 * h).clamp(lo, hi - 4.0 * h);
    Ok([start, start + h, start + 2.0 * h, start + 3.0 * h, start + 4.0 * h])
}

/// Fornberg finite-difference weights for derivative order `m` at `x0` given
/// node positions `z` (classic recursion, exact in rational arithmetic).
pub fn fd_weights(z: &[f64], x0: f64, m: usize) -> Vec<f64> {
    let n = z.len();
    let mut c = vec![vec![0.0; m + 1]; n];
    let mut c1 = 1.0;
    let mut c4 = z[0] - x0;
    c[0][0] = 1.0;
    for i in 1..n {
        let mn = i.min(m);
        let mut c2 = 1.0;
        let c5 = c4;
        c4 = z[i] - x0;
        for j in 0..i {
            let c3 = z[i] - z[j];
            c2 *= c3;
            if j == i - 1 {
                for k in (1..=mn).rev() {
                    c[i][k] = c1 * (k as f64 * c[i - 1][k - 1] - c5 * c[i - 1][k]) / c2;
                }
                c[i][0] = -c1 * c5 * c[i - 1][0] / c2;
            }
            for k in (1..=mn).rev() {
                c[j][k] = (c4 * c[j][k] - k as f64 * c[j][k - 1]) / c3;
            }
            c[j][0] = c4 * c[j][0] / c3;
        }
        c1 = c2;
    }
    c.into_iter().map(|row| row[m]).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fornberg_matches_central_coefficients() {
        let z = [-2.0, -1.0, 0.0, 1.0, 2.0];
        let w = fd_weights(&z, 0.0, 1);
        let expect = [1.0 / 12.0, -8.0 / 12.0, 0.0, 8.0 / 12.0, -1.0 / 12.0];
        for (a, b) in w.iter().zip(expect) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn fornberg_one_sided() {
        let z = [0.0, 1.0, 2.0, 3.0, 4.0];
        let w = fd_weights(&z, 0.0, 1);
        let expect = [-25.0 / 12.0, 4.0, -3.0, 4.0 / 3.0, -0.25];
        for (a, b) in w.iter().zip(expect) {
            assert!((a - b).abs() < 1e-13);
        }
    }

    fn sin_table(n: usize) -> GridTable {
        let axes = vec![GridAxis { chart_axis: 0, lo: -1.0, hi: 1.0, count: n }];
        GridTable::sample(axes, &[0.0], |q| Ok(q[0].sin())).unwrap()
    }

    #[test]
    fn interp_is_node_exact_and_quartic_between() {
        let t = sin_table(41); // h = 0.05
        assert!((t.interp(&[0.35]).unwrap() - 0.35f64.sin()).abs() < 1e-15);
        let h: f64 = 0.05;
        assert!((t.interp(&[0.263]).unwrap() - 0.263f64.sin()).abs() < h.powi(4));
    }

    #[test]
    fn fd_partial_fourth_order() {
        let t = sin_table(41);
        // at a node the stencil sees exact samples
        let err_node = (t.fd_partial(0, &[0.0]).unwrap() - 1.0).abs();
        assert!(err_node < 1e-6, "err {err_node}");
        // near the hull edge the window shifts instead of leaving the box
        let e = t.fd_partial(0, &[0.975]).unwrap();
        assert!((e - 0.975f64.cos()).abs() < 1e-4);
        // refinement by 2 gains about 2^4
        let t2 = sin_table(81);
        let c1 = (t.fd_partial(0, &[0.25]).unwrap() - 0.25f64.cos()).abs();
        let c2 = (t2.fd_partial(0, &[0.25]).unwrap() - 0.25f64.cos()).abs();
        assert!(c2 < c1 / 8.0, "c1 {c1} c2 {c2}");
    }

    #[test]
    fn subset_axes_are_constant_elsewhere() {
        let axes = vec![GridAxis { chart_axis: 1, lo: -1.0, hi: 1.0, count: 9 }];
        let t = GridTable::sample(axes, &[0.0, 0.0], |q| Ok(3.0 * q[1])).unwrap();
        assert!((t.interp(&[0.7, 0.5]).unwrap() - 1.5).abs() < 1e-12);
        assert_eq!(t.fd_partial(0, &[0.7, 0.5]).unwrap(), 0.0);
        assert!((t.fd_partial(1, &[0.7, 0.5]).unwrap() - 3.0).abs() < 1e-10);
    }

    #[test]
    fn rejects_tiny_lattices() {
        let axes = vec![GridAxis { chart_axis: 0, lo: 0.0, hi: 1.0, count: 3 }];
        assert!(GridTable::new(axes, vec![0.0; 3]).is_err());
    }
}
