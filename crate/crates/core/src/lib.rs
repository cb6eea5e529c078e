//! Convex optimization and high-dimensional mean estimation in the
//! statistical query model.
//!
//! The crate is organised bottom-up:
//! - [`geometry`]: Hadamard transforms, Haar rotations, `l_p` mirror setups,
//!   ellipsoidal norms.
//! - [`oracle`]: `STAT`/`VSTAT` oracles with exact, sampled and locally
//!   private backends, and a query ledger.
//! - [`meanest`]: mean estimation in `l_q` and ellipsoidal norms.
//! - [`firstorder`]: inexact-gradient oracles and the mirror, accelerated and
//!   strongly convex solvers.
//! - [`cutplane`]: hit-and-run sampling, centre-of-gravity cuts and
//!   simulated annealing for bodies given by membership.
//! - [`apps`]: halfspace learning and generalized linear models.

pub mod apps;
pub mod cutplane;
pub mod error;
pub mod firstorder;
pub mod geometry;
pub mod meanest;
pub mod oracle;
pub mod synthetic;

pub use error::{Result, SqError};
