use thiserror::Error;

#[derive(Debug, Clone, Error)]
pub enum Error {
    /// Evaluation point lies outside the chart box (or a lattice hull).
    #[error("point {point:?} outside domain along axis {axis}")]
    OutsideDomain { axis: usize, point: Vec<f64> },

    /// A guarded node (division, sqrt, abs, sgn, negative power) was evaluated
    /// too close to its singular locus.
    #[error("singular evaluation at node `{node}` at point {point:?}")]
    SingularEval { node: &'static str, point: Vec<f64> },

    #[error("expression parse error at byte {at}: {msg}")]
    Parse { at: usize, msg: String },

    #[error("chart mismatch: {0}")]
    ChartMismatch(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("pairing degenerate: {0}")]
    Degenerate(String),

    #[error("norm undefined for indefinite pairing at point {point:?}")]
    IndefinitePairing { point: Vec<f64> },

    #[error("label collision: coordinate name `{0}` appears in both factors")]
    LabelCollision(String),

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("transversality lost, shrink box: {0}")]
    Transversality(String),

    #[error("stiffness guard: |coefficient|*h = {0:.3} exceeds 10; refine the lattice")]
    Stiffness(f64),

    #[error("frame transform singular: |det F| = {det:.3e} at point {point:?}")]
    FrameSingular { det: f64, point: Vec<f64> },

    #[error("invalid input: {0}")]
    InvalidInput(String),
}
