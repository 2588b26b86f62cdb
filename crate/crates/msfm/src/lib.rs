//! Parameter estimation for partially observed slow–fast stochastic systems.
//!
//! The library simulates multiscale signal/observation models, runs the
//! matching reduced-model filters (Kalman–Bucy, two-state Wonham, bootstrap
//! particle), evaluates the reduced log-likelihood, and produces maximum
//! likelihood estimates together with Fisher-information-based standard
//! errors. The `experiments` module wraps these pieces into the Monte Carlo
//! studies exposed by the command-line tool.

pub mod config;
pub mod experiments;
pub mod filters;
pub mod inference;
pub mod model;
pub mod simulate;
