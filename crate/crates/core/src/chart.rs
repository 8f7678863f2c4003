use crate::error::Error;
use crate::Result;
use std::sync::Arc;

/// A coordinate chart: named coordinates over a closed box.
#[derive(Debug, Clone, PartialEq)]
pub struct Chart {
    names: Vec<String>,
    bounds: Vec<(f64, f64)>,
}

impl Chart {
    pub fn new<S: Into<String>>(names: Vec<S>, bounds: Vec<(f64, f64)>) -> Result<Arc<Chart>> {
        let names: Vec<String> = names.into_iter().map(Into::into).collect();
        if names.is_empty() {
            return Err(Error::InvalidInput("chart dimension must be >= 1".into()));
        }
        if names.len() != bounds.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} names vs {} intervals",
                names.len(),
                bounds.len()
            )));
        }
        for (i, n) in names.iter().enumerate() {
            if n.is_empty() {
                return Err(Error::InvalidInput(format!("coordinate {i} has empty name")));
            }
            if names[..i].contains(n) {
                return Err(Error::InvalidInput(format!("duplicate coordinate name `{n}`")));
            }
        }
        for (i, &(lo, hi)) in bounds.iter().enumerate() {
            if !(lo.is_finite() && hi.is_finite() && hi > lo) {
                return Err(Error::InvalidInput(format!(
                    "interval {i} = [{lo}, {hi}] must have positive length"
                )));
            }
        }
        Ok(Arc::new(Chart { names, bounds }))
    }

    /// Unit box [-1, 1]^n with names x1..xn.
    pub fn unit_box(dim: usize) -> Arc<Chart> {
        let names: Vec<String> = (1..=dim).map(|i| format!("x{i}")).collect();
        Chart::new(names, vec![(-1.0, 1.0); dim]).expect("unit box is valid")
    }

    pub fn dim(&self) -> usize {
        self.names.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, axis: usize) -> &str {
        &self.names[axis]
    }

    pub fn bounds(&self) -> &[(f64, f64)] {
        &self.bounds
    }

    pub fn interval(&self, axis: usize) -> (f64, f64) {
        self.bounds[axis]
    }

    pub fn axis_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Same box, new coordinate names.
    pub fn renamed<S: Into<String>>(&self, names: Vec<S>) -> Result<Arc<Chart>> {
        Chart::new(names, self.bounds.clone())
    }

    /// Half-width of the widest coordinate interval.
    pub fn radius(&self) -> f64 {
        self.bounds
            .iter()
            .map(|&(lo, hi)| (hi - lo) / 2.0)
            .fold(0.0, f64::max)
    }

    /// Membership with a small relative slack so box-edge lattice nodes pass.
    pub fn contains(&self, q: &[f64]) -> Result<()> {
        if q.len() != self.dim() {
            return Err(Error::ShapeMismatch(format!(
                "point dim {} vs chart dim {}",
                q.len(),
                self.dim()
            )));
        }
        for (axis, (&x, &(lo, hi))) in q.iter().zip(&self.bounds).enumerate() {
            let slack = 1e-9 * (hi - lo);
            if !(x >= lo - slack && x <= hi + slack) {
                return Err(Error::OutsideDomain { axis, point: q.to_vec() });
            }
        }
        Ok(())
    }

    pub fn center(&self) -> Vec<f64> {
        self.bounds.iter().map(|&(lo, hi)| 0.5 * (lo + hi)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_charts() {
        assert!(Chart::new(Vec::<String>::new(), vec![]).is_err());
        assert!(Chart::new(vec!["x", "x"], vec![(0.0, 1.0); 2]).is_err());
        assert!(Chart::new(vec!["x"], vec![(1.0, 1.0)]).is_err());
        assert!(Chart::new(vec!["x"], vec![(2.0, 1.0)]).is_err());
    }

    #[test]
    fn membership_has_edge_slack() {
        let c = Chart::unit_box(2);
        assert!(c.contains(&[1.0, -1.0]).is_ok());
        assert!(c.contains(&[1.0 + 1e-12, 0.0]).is_ok());
        assert!(c.contains(&[1.1, 0.0]).is_err());
        assert!(c.contains(&[0.0]).is_err());
    }
}
