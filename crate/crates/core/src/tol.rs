//! Numerical policy for the whole kernel, in one place.
//!
//! Checks never compare floats for equality; each comparison below carries the
//! tolerance pinned by the acceptance suite. Residuals of identity checks are
//! reported relative to `1 + max |compared quantity|` at the worst point.

/// Guard band for division, sqrt, abs and sgn arguments. Inside it the
/// evaluator raises a singular-evaluation error instead of producing NaN/Inf.
pub const EPS_GUARD: f64 = 1e-12;

/// Expression-level identity checks (structure equations, Courant axioms).
pub const REL_TOL: f64 = 1e-9;

/// "Exact" comparisons: frozen examples, round trips, frame permutations.
pub const EXACT_TOL: f64 = 1e-12;

/// Decomposition classification threshold (absolute, on unit-scaled sections).
pub const CLASSIFY_TOL: f64 = 1e-8;

/// isSingular threshold on |theta(p)| and |lambda(p)|.
pub const SINGULAR_TOL: f64 = 1e-9;

/// Euler-like check tolerance.
pub const EULER_TOL: f64 = 1e-9;

/// findEulerCandidate declares "found" below this least-squares residual.
pub const EULER_FOUND_TOL: f64 = 1e-8;

/// Minimal |theta(p)| for the splitting pipeline to engage.
pub const ANCHOR_MIN: f64 = 1e-6;

/// Nondegeneracy floor for metric determinants and frame transforms.
pub const DET_MIN: f64 = 1e-9;

/// Stiffness guard for the invariant-section ODE: reject when |Gamma|*h > 10.
pub const STIFFNESS_LIMIT: f64 = 10.0;

/// Operator-norm profile comparison tolerance (acceptance criterion).
pub const NORM_RATIO_TOL: f64 = 0.01;

/// Jacobiator precondition tolerance for the adapted-frame construction.
pub const JACOBI_PRE_TOL: f64 = 1e-8;

/// Grid-backed identity tolerance for lattice spacing `h`.
pub fn grid_tol(h: f64) -> f64 {
    50.0 * h.powi(4)
}

/// Tolerance for checks that may involve grid-backed fields: the expression
/// tolerance, widened to the grid tolerance of the coarsest spacing present.
pub fn check_tol(max_spacing: Option<f64>) -> f64 {
    match max_spacing {
        Some(h) => REL_TOL.max(grid_tol(h)),
        None => REL_TOL,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tolerance_ordering() {
        assert!(EPS_GUARD <= EXACT_TOL);
        assert!(EXACT_TOL < CLASSIFY_TOL);
        assert!(REL_TOL < CLASSIFY_TOL);
        assert!(DET_MIN < ANCHOR_MIN);
    }

    #[test]
    fn grid_tol_quartic() {
        let h = 0.05;
        assert!((grid_tol(h / 2.0) - grid_tol(h) / 16.0).abs() < 1e-15);
        assert_eq!(check_tol(None), REL_TOL);
        assert!(check_tol(Some(0.1)) > REL_TOL);
    }
}
