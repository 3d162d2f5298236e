//! Solver for asymmetric N-player wars of attrition over public-good
//! provision: equilibrium computation, closed forms, welfare analysis,
//! and verification tooling.

pub mod closedform;
pub mod interp;
pub mod model;
pub mod odecore;
pub mod shooting;
pub mod verify;
pub mod welfare;
