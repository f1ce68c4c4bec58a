//! Normal-mode packets of the FPU chain as adiabatic invariants: the chain
//! and its integrator, the sine-mode basis, packet observables with their
//! third-order corrector, a constrained Gibbs sampler, Monte Carlo
//! estimators and the experiment runner that ties them together.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod chain;
pub mod error;
pub mod experiments;
pub mod gibbs;
pub mod packet;
pub mod profiles;
pub mod spectral;
pub mod stats;

pub use chain::{ChainParams, ChainState, Potential, Verlet};
pub use error::{Error, Result};
pub use packet::PacketObservable;
pub use profiles::{NuProfile, ProfileSpec};
