//! Steady-state heat-wire solver driven by random walks.
//!
//! The walk is executed two ways: directly, as a Monte Carlo process over
//! walkers ([`mcwalk`]), and as a simulated spiking network of per-node
//! counter/gate sub-circuits ([`snn`]). [`netgen`] exports those networks as
//! portable JSON netlists and [`bench`] turns simulation records into
//! benchmark metrics.

pub mod bench;
pub mod error;
pub mod mcwalk;
pub mod netgen;
pub mod problem;
pub mod rng;
pub mod snn;

pub use error::{Error, Result};
pub use mcwalk::{MeshSolution, Moves, NodeCounts};
pub use problem::{ProblemSpec, TransitionProbabilities};
pub use snn::{
    build_network, decode_counts, run, AbsorbPolicy, NetworkConfig, PrecisionConfig,
    SimulationRecord, SpikingNetwork,
};
