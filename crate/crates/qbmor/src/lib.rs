//! Interpolatory moment matching for quadratic-bilinear descriptor systems.
//!
//! This crate builds reduced-order models of systems of the form
//!
//! ```text
//! E x'(t) = A x(t) + sum_k N_k x(t) u_k(t) + H (x(t) (x) x(t)) + B u(t)
//!    y(t) = C x(t)
//! ```
//!
//! by projecting onto Krylov-type subspaces assembled from shifted resolvent
//! chains. Four construction methods are provided, matching moments of the
//! first, second, and third order transfer kernels in either symmetric or
//! regular multivariate form. The crate also ships three nonlinear
//! benchmark models (a diode RC ladder, a viscous Burgers discretization,
//! and a FitzHugh-Nagumo cable) with exact quadratic-bilinear liftings,
//! implicit time integration, and a command line front end.
//!
//! Modules, bottom up:
//! - [`sparse`], [`tensor`]: CSR matrices and sparse order-3 tensors;
//! - [`system`]: the system type and Petrov-Galerkin projection;
//! - [`io`]: Matrix Market / tensor / manifest file formats;
//! - [`solve`]: cached LU factorization of shifted pencils, resolvent chains;
//! - [`transfer`]: transfer-kernel moments in symmetric and regular form;
//! - [`reduce`]: interpolation bases, rank-revealing orthonormalization,
//!   moment verification;
//! - [`sim`]: implicit time stepping and error metrics;
//! - [`bench`]: benchmark model builders and seeded random test systems.

pub mod bench;
pub mod cli;
pub mod error;
pub mod io;
pub mod reduce;
pub mod sim;
pub mod solve;
pub mod sparse;
pub mod system;
pub mod tensor;
pub mod transfer;

pub use error::{Error, Result};
pub use system::{project, QBSystem, SisoView};
