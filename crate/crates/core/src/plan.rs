//! Deterministic sample plans: seeded low-discrepancy points in the box
//! interior, inset 5% from every face so stencils and guards have room.

use crate::chart::Chart;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::sync::Arc;

#[derive(Debug, Clone)]
pub struct SamplePlan {
    pub seed: u64,
    chart: Arc<Chart>,
    points: Vec<Vec<f64>>,
}

impl SamplePlan {
    /// Kronecker sequence with the generalized golden ratio per dimension and
    /// a ChaCha-seeded toral shift: reproducible and well spread.
    pub fn new(chart: &Arc<Chart>, seed: u64, count: usize) -> SamplePlan {
        let dim = chart.dim();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shift: Vec<f64> = (0..dim).map(|_| rng.random::<f64>()).collect();

        // unique positive root of x^(d+1) = x + 1
        let mut phi = 1.5f64;
        for _ in 0..64 {
            phi = (1.0 + phi).powf(1.0 / (dim as f64 + 1.0));
        }
        let alpha: Vec<f64> = (1..=dim).map(|i| (1.0 / phi.powi(i as i32)).fract()).collect();

        let points = (0..count)
            .map(|k| {
                (0..dim)
                    .map(|i| {
                        let u = (shift[i] + (k + 1) as f64 * alpha[i]).fract();
                        let (lo, hi) = chart.interval(i);
                        lo + (0.05 + 0.90 * u) * (hi - lo)
                    })
                    .collect()
            })
            .collect();
        SamplePlan { seed, chart: chart.clone(), points }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn chart(&self) -> &Arc<Chart> {
        &self.chart
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> impl Iterator<Item = &[f64]> {
        self.points.iter().map(|p| p.as_slice())
    }

    /// Same seed and count on another chart (used after coordinate changes).
    pub fn transfer(&self, chart: &Arc<Chart>) -> SamplePlan {
        SamplePlan::new(chart, self.seed, self.points.len())
    }
}
