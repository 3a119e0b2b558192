//! Hybrid rough stochastic differential equations and a Monte Carlo solver
//! for backward rough Kolmogorov equations.

pub mod coefficients;
pub mod controlled;
pub mod error;
pub mod feynman_kac;
pub mod field;
pub mod integrator;
pub mod mcstats;
pub mod mesh;
pub mod pde_residual;
pub mod presets;
pub mod roughpath;
pub mod rsde;
pub mod tangent;
mod scheme;

pub use error::{Error, Result};
pub use roughpath::{RhoAlphaReport, RoughPath, SmoothPath};

pub use scheme::LinearStep;
