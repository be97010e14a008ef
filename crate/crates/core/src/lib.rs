//! Interior-penalty discontinuous Galerkin discretization of the
//! Stokes-Brinkman eigenvalue problem in two dimensions.
//!
//! The crate is organized bottom-up:
//!
//! - [`mesh`]: structured triangulations, region/boundary tagging, and
//!   newest-vertex bisection refinement;
//! - [`femspace`]: Lagrange bases, quadrature, affine maps, discontinuous dof maps;
//! - [`assembly`]: the symmetric / incomplete / non-symmetric interior penalty
//!   forms and the saddle-point pencil;
//! - [`eigen`]: shift-invert Krylov and dense QZ solvers for the singular pencil;
//! - [`estimator`]: residual a posteriori indicators;
//! - [`adapt`]: bulk marking and the adaptive loop;
//! - [`driver`]: experiment harness behind the command line tool.

pub mod mesh;
pub mod femspace;
pub mod assembly;
pub mod eigen;
pub mod estimator;
pub mod adapt;
pub mod driver;
