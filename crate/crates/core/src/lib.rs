//! Steady states of open spin chains from a Liouville-space neural ansatz.
//!
//! The stationary density matrix of a Lindblad master equation is written as
//! a vector in Liouville space and parametrized by a restricted-Boltzmann-style
//! network over four-valued site labels (the Liouville density machine). Its
//! parameters are optimized by stochastic reconfiguration so that `L|ρ⟩⟩ → 0`,
//! with Monte Carlo estimates drawn from Metropolis chains. A dense exact
//! diagonalization oracle covers chains of up to six sites.

pub mod ansatz;
pub mod error;
pub mod estimators;
pub mod lattice;
pub mod optimizer;
pub mod oracle;
pub mod sampler;

pub use ansatz::{init_params, parameter_count, LdmParameters};
pub use error::{Error, Result};
pub use estimators::{CostEstimate, Observable, ObservableEstimate, SrSystem};
pub use lattice::{ModelSpec, SpinConfiguration, Variant};
pub use optimizer::{Estimation, OptimizationTrace, SrConfig, StepRecord, UpdateRule};
pub use oracle::DenseState;
pub use sampler::{ChainConfig, SampleBatch};
