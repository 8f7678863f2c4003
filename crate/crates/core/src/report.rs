//! Check reports: named residual entries with pinned tolerances.

/// One identity check: the worst residual seen, where, and the verdict.
#[derive(Debug, Clone)]
pub struct CheckEntry {
    pub name: String,
    pub max_residual: f64,
    pub tolerance: f64,
    pub worst_point: Vec<f64>,
    pub pass: bool,
}

#[derive(Debug, Clone, Default)]
pub struct CheckReport {
    pub entries: Vec<CheckEntry>,
}

impl CheckReport {
    pub fn push(&mut self, entry: CheckEntry) {
        self.entries.push(entry);
    }

    pub fn merge(&mut self, other: CheckReport) {
        self.entries.extend(other.entries);
    }

    pub fn passed(&self) -> bool {
        self.entries.iter().all(|e| e.pass)
    }

    pub fn entry(&self, name: &str) -> Option<&CheckEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    pub fn residual(&self, name: &str) -> Option<f64> {
        self.entry(name).map(|e| e.max_residual)
    }
}

/// Running max-residual accumulator for one entry.
#[derive(Debug, Clone)]
pub struct ResidualMax {
    name: String,
    max: f64,
    worst: Vec<f64>,
}

impl ResidualMax {
    pub fn new(name: impl Into<String>) -> Self {
        ResidualMax { name: name.into(), max: 0.0, worst: Vec::new() }
    }

    pub fn update(&mut self, residual: f64, point: &[f64]) {
        if residual > self.max || self.worst.is_empty() {
            self.max = residual;
            self.worst = point.to_vec();
        }
    }

    /// Residual of `lhs - rhs` relative to 1 + max |compared quantity|.
    pub fn update_cmp(&mut self, lhs: f64, rhs: f64, point: &[f64]) {
        let scale = 1.0 + lhs.abs().max(rhs.abs());
        self.update((lhs - rhs).abs() / scale, point);
    }

    pub fn max(&self) -> f64 {
        self.max
    }

    pub fn into_entry(self, tolerance: f64) -> CheckEntry {
        CheckEntry {
            pass: self.max <= tolerance,
            name: self.name,
            max_residual: self.max,
            tolerance,
            worst_point: self.worst,
        }
    }
}
