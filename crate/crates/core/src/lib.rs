//! Exact, desk-scale models for a family of measure/operator constructions on
//! the two-sided binary shift: conformal cylinder measures, the staircase
//! parametrization of hereditary lattice subsets, Kakutani towers over the
//! dyadic odometer with lacunary spectral diagnostics, and finite truncations
//! of two-parameter isometry semigroups with commuting range projections.
//!
//! Everything here is either exact (rational / formal-variable arithmetic) or
//! explicitly numeric with a caller-supplied tolerance. Checks that only hold
//! away from a truncation boundary declare their interior margins instead of
//! loosening tolerances.

pub mod formal;
pub mod lattice;
pub mod riesz;
pub mod symbolic;
pub mod tower;
pub mod isometry;

pub use formal::{FormalWeight, WeightRatio};
