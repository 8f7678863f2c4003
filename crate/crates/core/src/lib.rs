//! Chart-level computational kernel for Loday and Courant algebroid structures.
//!
//! Everything lives on a single coordinate chart: scalar fields are either
//! expression trees (evaluated with forward-mode duals, so partials are exact
//! to rounding) or lattice samples with cubic interpolation and fourth-order
//! finite-difference partials. On top of that sit anchored brackets with a
//! co-anchor correction, structure checks, product decompositions, a numeric
//! splitting pipeline, and zoom/linearization at singular points.

pub mod chart;
pub mod courant;
pub mod error;
pub mod expr;
pub mod field;
pub mod grid;
pub mod linearization;
pub mod loday;
pub mod plan;
pub mod product;
pub mod report;
pub mod scalar;
pub mod splitting;
pub mod tol;
pub mod zoo;

pub use chart::Chart;
pub use error::Error;
pub use field::{OneForm, ScalarField, ThreeForm, VectorField};
pub use loday::{Derivation, LodayStructure, Section};
pub use plan::SamplePlan;
pub use report::{CheckEntry, CheckReport};

pub type Result<T> = std::result::Result<T, Error>;
