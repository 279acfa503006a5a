//! Convergence laboratory for two time-scale actor-critic on finite,
//! average-reward MDPs.
//!
//! The crate runs the on-line actor-critic loop (and a decoupled baseline),
//! computes every quantity the finite-time theory refers to exactly through
//! [`oracle`], and aggregates seeded runs into the averaged error functionals
//! and empirical rates in [`analysis`].

pub mod agent;
pub mod analysis;
pub mod chain;
pub mod cli;
pub mod env;
pub mod error;
pub mod experiment;
pub mod linalg;
pub mod oracle;
pub mod policy;
pub mod seeds;

pub use agent::{Agent, AgentState, Problem, RunConfig, StepSchedule};
pub use analysis::{EnsembleMetrics, RunMetrics};
pub use chain::MixingProfile;
pub use env::{FiniteMdp, Observation};
pub use error::{Error, Result};
pub use oracle::{compute_oracle, FeatureMap, OracleReport};
pub use policy::SoftmaxPolicy;
