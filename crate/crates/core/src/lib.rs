//! Decentralised glitch-free change propagation for reactive dependency
//! graphs, a deterministic simulator to run it on, trace oracles and a
//! benchmark harness with centralised and overwrite-buffer baselines.

pub mod baselines;
pub mod batch;
pub mod dynamic;
pub mod engine;
pub mod graph;
pub mod harness;
pub mod ids;
pub mod message;
pub mod node;
pub mod oracles;
pub mod transport;
pub mod value;
