//! Numerical verification of Jacobi operators and second variations for
//! harmonic maps, Yang-Mills connections and minimal submanifolds on round spheres.

pub mod catalog;
pub mod error;
pub mod forms;
pub mod harmonic;
pub mod linalg;
pub mod minimal;
pub mod report;
pub mod sphere;
pub mod tolerance;
pub mod variation;
pub mod yang_mills;

pub use error::{JacobiError, Result};
pub use linalg::{Matrix, Vector};
pub use tolerance::{Method, ToleranceProfile};
