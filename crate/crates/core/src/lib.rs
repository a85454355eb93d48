//! Heights on Q, the curve y^2 = x^3 + 2, and a positive existential
//! interpretation of (N; 0, 1, +, *) in Q with height comparisons.

pub mod curve;
pub mod formula;
pub mod gadgets;
mod sexp;
pub mod heights;
pub mod interp;
pub mod reduce;
pub mod verify;

pub use curve::Point;
pub use heights::{CertifiedReal, MultHeight};
pub use rug::{Integer, Rational};
