//! Entire eigenfunctions of `Δf + f = 0` in ℝⁿ: exact field representations,
//! cube-lattice constructions that force prescribed nesting of nodal domains,
//! least-squares perturbation fits, and numerical nodal-set topology.

pub mod cubeworld;
pub mod eigenfield;
pub mod error;
pub mod lp;
pub mod nodal;
pub mod perturb;
pub mod realize;
pub mod specfun;
pub mod tree;

pub use error::{Error, Result};
