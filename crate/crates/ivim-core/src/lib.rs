//! Core building blocks of the in-vehicle integration manager:
//! instance models and constraint catalogs, the verification engine,
//! the allocation solver with SMT-LIB export, desired-state plan
//! generation/reconciliation, and the simulated compute platform.

pub mod model;
pub mod plangen;
pub mod platform;
pub mod smtlib;
pub mod solver;
pub mod verifier;
