//! Lowest-order hybridizable discontinuous Galerkin discretizations with
//! reduced quadrature for reaction-diffusion and generalized Stokes problems
//! on simplicial meshes, solved by geometric multigrid on the condensed facet
//! systems.
//!
//! The condensed systems coincide with slightly modified Crouzeix-Raviart
//! discretizations, which is what makes nonconforming multigrid applicable.

pub mod experiments;
pub mod full_hdg;
pub mod hdg_diffusion;
pub mod hdg_stokes;
pub mod linalg;
pub mod mesh;
pub mod multigrid;
pub mod quadrature;
pub mod smoothers;
pub mod spaces;
pub mod transfer;
