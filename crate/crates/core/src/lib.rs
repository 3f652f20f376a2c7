//! Solvers and analysis passes for obstacle problems driven by nonlinear
//! variational energies.
//!
//! The crate minimizes discrete energies of the form
//! `integral of F(x, v, grad v)` over fields constrained to stay above an
//! obstacle and match boundary data, then audits the result: it checks the
//! structural hypotheses the regularity theory needs (growth, monotonicity,
//! uniform convexity) on sampled boxes, freezes the problem to a quadratic
//! one with coefficient `A(x) = integral of the energy hessian along the
//! segment from the obstacle gradient to the solution gradient`, verifies the
//! complementarity identity satisfied by the discrete multiplier, and
//! extracts and classifies the free boundary (half-space versus quadratic
//! blow-up profiles, with Weiss-type energies as a diagnostic).
//!
//! Modules, bottom up:
//! - [`expr`]: the expression language for obstacle/boundary/coefficient data;
//! - [`grid`]: uniform grids, discrete fields, difference calculus;
//! - [`energy`]: energy descriptions (quadratic, power growth, area,
//!   Riemannian area) and sampled hypothesis checks;
//! - [`solver`]: projected SOR and semismooth Newton solvers for the
//!   variational inequality, plus the complementarity audit;
//! - [`linearize`]: the frozen-coefficient quadratic problem and its
//!   verification passes;
//! - [`freeboundary`]: interface extraction, blow-up classification, Weiss
//!   energies, stratification;
//! - [`riemann`]: chart coefficients for area functionals over a Riemannian
//!   metric, coercivity box estimation, nondivergence reduction.

pub mod band;
pub mod energy;
pub mod error;
pub mod expr;
pub mod freeboundary;
pub mod grid;
pub mod linearize;
pub mod mat2;
pub mod quadrature;
pub mod riemann;
pub mod sampling;
pub mod solver;

pub use error::{Error, ParseError, Result};
pub use expr::{Bind, Expr};
pub use grid::{Grid, MatrixField, ScalarField, VectorField};
