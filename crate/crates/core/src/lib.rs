//! Numerical toolkit for sparkling saddle connections near hyperbolic
//! polycycles: log-domain Dulac map models, connection solvers, density
//! and diagram invariants, and ODE checks of the saddle correspondence map.

pub mod connections;
pub mod dulacmodel;
pub mod error;
pub mod invariants;
pub mod numerics;
pub mod ode;
pub mod saddleode;

pub use error::{Error, Result};
pub use numerics::{LogScale, Precision, Real};
