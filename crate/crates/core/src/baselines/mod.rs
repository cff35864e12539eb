//! Comparison propagators sharing the scenario interface: a centrally
//! admitted serial propagator and an overwrite-buffer propagator.

pub mod central;
pub mod quarp;

pub use central::{CentralMsg, CentralNode, ADMITTER};
pub use quarp::{QuarpError, QuarpNet};
